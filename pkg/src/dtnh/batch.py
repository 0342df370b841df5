"""In-memory datasets and mini-batches."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class MiniBatch:
    inputs: np.ndarray  # (b, *input_shape)
    labels: np.ndarray  # (b,) int64

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"batch has {self.inputs.shape[0]} inputs but "
                f"{self.labels.shape[0]} labels"
            )

    def __len__(self):
        return int(self.labels.shape[0])


@dataclass
class Dataset:
    """Samples stacked along axis 0, integer labels in ``[0, num_classes)``."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    channel_mean: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise DataError(
                f"labels must lie in [0, {self.num_classes}), got "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def input_shape(self):
        return tuple(self.inputs.shape[1:])

    def batch(self, indices=None):
        if indices is None:
            return MiniBatch(self.inputs, self.labels)
        return MiniBatch(self.inputs[indices], self.labels[indices])
