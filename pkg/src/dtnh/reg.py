"""Transfer regularizers and the per-epoch coefficient schedule."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .net import feature_grad
from .tensor import as_flat, norm_sq, zeros

NONE = "none"
L2SP = "l2sp"
KNOWDIST = "knowdist"
L2 = "l2"
KINDS = (NONE, L2SP, KNOWDIST, L2)


@dataclass(frozen=True)
class RegularizerConfig:
    kind: str = NONE
    lambda0: float = 0.0
    decay_ratio: float = 1.0
    source_params: np.ndarray = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(
                f"unknown regularizer {self.kind!r}; expected one of {', '.join(KINDS)}"
            )
        if not self.lambda0 >= 0.0:
            raise ConfigurationError(f"lambda0 must be nonnegative, got {self.lambda0}")
        if not 0.0 < self.decay_ratio <= 1.0:
            raise ConfigurationError(
                f"decay_ratio must lie in (0, 1], got {self.decay_ratio}"
            )
        if self.source_params is not None:
            object.__setattr__(self, "source_params", as_flat(self.source_params))
        if self.kind in (L2SP, KNOWDIST) and self.source_params is None:
            raise ConfigurationError(f"{self.kind} needs source parameters")


def reg_value_and_grad(cfg, spec, params, batch):
    """Regularizer value and gradient, without the lambda factor."""
    params = as_flat(params)
    if cfg.source_params is not None and cfg.source_params.shape != params.shape:
        raise ConfigurationError(
            f"source parameters have length {cfg.source_params.shape[0]}, "
            f"expected {params.shape[0]}"
        )
    if cfg.kind == NONE:
        return 0.0, zeros(params.shape[0])
    if cfg.kind == L2:
        return norm_sq(params), 2.0 * params
    if cfg.kind == L2SP:
        diff = params - cfg.source_params
        return norm_sq(diff), 2.0 * diff
    return feature_grad(spec, params, cfg.source_params, batch)


def lambda_at_epoch(cfg, epoch):
    return cfg.lambda0 * cfg.decay_ratio**epoch
