"""Conflict-aware descent direction.

The empirical-loss gradient ``gJ`` and the regularizer gradient ``gOmega``
are combined as ``gJ + lam * gOmega`` unless they point away from each other.
In that case ``gOmega`` is split into a part parallel to ``gJ`` and an
orthogonal remainder; the parallel part (which opposes ``gJ``) is dropped.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import DegenerateGradientError, DimensionError, NumericError
from .tensor import as_flat, axpy, dot, norm_sq

#: Squared-norm threshold below which a gradient is treated as zero.
EPS = 1e-24

ACUTE = "acute"
OBTUSE = "obtuse"
DEGENERATE = "degenerate"


@dataclass(frozen=True)
class DirectionResult:
    d_hat: np.ndarray
    branch: str
    angle1: float | None  # corrected direction vs gJ
    angle2: float | None  # corrected direction vs gOmega
    angle3: float | None  # plain combination vs gJ
    angle4: float | None  # plain combination vs gOmega
    norm_gJ: float
    norm_gOmega: float


def angle_deg(u, v):
    """Angle between ``u`` and ``v`` in degrees, or ``None`` if either is ~0."""
    uu = norm_sq(u)
    vv = norm_sq(v)
    if uu <= EPS or vv <= EPS:
        return None
    # 2*atan2(|a-b|, |a+b|) on unit vectors stays accurate near 0 and 180
    a = as_flat(u) / math.sqrt(uu)
    b = as_flat(v) / math.sqrt(vv)
    return math.degrees(2.0 * math.atan2(math.sqrt(norm_sq(a - b)), math.sqrt(norm_sq(a + b))))


def decompose(gJ, gOmega):
    """Split ``gOmega`` into ``(parallel, orthogonal)`` components w.r.t. ``gJ``."""
    gJ = as_flat(gJ)
    gOmega = as_flat(gOmega)
    nJ = norm_sq(gJ)
    if nJ <= EPS:
        raise DegenerateGradientError(
            f"cannot project onto a gradient with squared norm {nJ!r}"
        )
    omega_x = (dot(gJ, gOmega) / nJ) * gJ
    return omega_x, gOmega - omega_x


def _checked(gJ, gOmega, lam):
    gJ = as_flat(gJ)
    gOmega = as_flat(gOmega)
    if gJ.shape != gOmega.shape:
        raise DimensionError(
            f"gradient lengths differ: {gJ.shape[0]} vs {gOmega.shape[0]}"
        )
    if not (np.all(np.isfinite(gJ)) and np.all(np.isfinite(gOmega))):
        raise NumericError("non-finite gradient entries")
    if not (math.isfinite(lam) and lam >= 0.0):
        raise NumericError(f"lambda must be finite and nonnegative, got {lam!r}")
    return gJ, gOmega


def _result(d_hat, vanilla, branch, gJ, gOmega, nJ):
    return DirectionResult(
        d_hat=d_hat,
        branch=branch,
        angle1=angle_deg(d_hat, gJ),
        angle2=angle_deg(d_hat, gOmega),
        angle3=angle_deg(vanilla, gJ),
        angle4=angle_deg(vanilla, gOmega),
        norm_gJ=math.sqrt(nJ),
        norm_gOmega=math.sqrt(norm_sq(gOmega)),
    )


def classify(gJ, gOmega):
    """Branch label ``estimate_direction`` would take for this pair."""
    if norm_sq(gJ) <= EPS:
        return DEGENERATE
    return ACUTE if dot(gJ, gOmega) >= 0.0 else OBTUSE


def estimate_direction(gJ, gOmega, lam):
    """Corrected descent direction with angle diagnostics.

    An exactly orthogonal pair counts as acute.  When ``gJ`` vanishes there
    is nothing to protect and the plain combination is returned.
    """
    gJ, gOmega = _checked(gJ, gOmega, lam)
    nJ = norm_sq(gJ)
    vanilla = axpy(lam, gOmega, gJ)
    branch = classify(gJ, gOmega)
    if branch == OBTUSE:
        _, omega_y = decompose(gJ, gOmega)
        d_hat = axpy(lam, omega_y, gJ)
    else:
        d_hat = vanilla
    return _result(d_hat, vanilla, branch, gJ, gOmega, nJ)


def vanilla_direction(gJ, gOmega, lam):
    """Plain ``gJ + lam * gOmega`` with the same diagnostics and branch label."""
    gJ, gOmega = _checked(gJ, gOmega, lam)
    nJ = norm_sq(gJ)
    vanilla = axpy(lam, gOmega, gJ)
    return _result(vanilla, vanilla, classify(gJ, gOmega), gJ, gOmega, nJ)
