"""Feed-forward networks with feature taps and hand-written backward passes.

A network is described by a :class:`NetworkSpec` (per-sample input shape plus
an ordered tuple of :class:`LayerSpec`).  Parameters live in one flat float64
vector; each parametrized layer owns a contiguous slice laid out as weights
followed by biases.  Dense weights are stored ``(in, out)`` and conv weights
``(out_channels, in_channels, kernel_h, kernel_w)``.
"""

import dataclasses
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError
from .tensor import as_flat, matmul

DENSE = "dense"
RELU = "relu"
CONV2D = "conv2d"
FLATTEN = "flatten"
HEAD = "softmax-cross-entropy-head"
LAYER_KINDS = (DENSE, RELU, CONV2D, FLATTEN, HEAD)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_h: int = 0
    kernel_w: int = 0
    stride: int = 1
    tap: bool = False

    @classmethod
    def dense(cls, in_features, out_features, tap=False):
        return cls(DENSE, in_features=in_features, out_features=out_features, tap=tap)

    @classmethod
    def relu(cls, tap=False):
        return cls(RELU, tap=tap)

    @classmethod
    def conv2d(cls, in_channels, out_channels, kernel_h, kernel_w, stride=1, tap=False):
        return cls(
            CONV2D,
            in_channels=in_channels,
            out_channels=out_channels,
            kernel_h=kernel_h,
            kernel_w=kernel_w,
            stride=stride,
            tap=tap,
        )

    @classmethod
    def flatten(cls, tap=False):
        return cls(FLATTEN, tap=tap)

    @classmethod
    def head(cls):
        return cls(HEAD)

    @property
    def weight_shape(self):
        if self.kind == DENSE:
            return (self.in_features, self.out_features)
        if self.kind == CONV2D:
            return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
        return None

    @property
    def bias_size(self):
        if self.kind == DENSE:
            return self.out_features
        if self.kind == CONV2D:
            return self.out_channels
        return 0

    @property
    def fan_in(self):
        if self.kind == DENSE:
            return self.in_features
        if self.kind == CONV2D:
            return self.in_channels * self.kernel_h * self.kernel_w
        return 0

    @property
    def param_count(self):
        shape = self.weight_shape
        if shape is None:
            return 0
        return math.prod(shape) + self.bias_size

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == DENSE:
            out.update(in_features=self.in_features, out_features=self.out_features)
        elif self.kind == CONV2D:
            out.update(
                in_channels=self.in_channels,
                out_channels=self.out_channels,
                kernel_h=self.kernel_h,
                kernel_w=self.kernel_w,
                stride=self.stride,
            )
        if self.tap:
            out["tap"] = True
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _output_shape(layer, shape, index):
    """Per-sample output shape of ``layer`` given its per-sample input shape."""
    kind = layer.kind
    if kind == DENSE:
        if len(shape) != 1 or shape[0] != layer.in_features:
            raise DimensionError(
                f"layer {index} (dense {layer.in_features}->{layer.out_features}) "
                f"cannot take input shape {shape}"
            )
        if layer.out_features <= 0:
            raise ConfigurationError(f"layer {index}: dense width must be positive")
        return (layer.out_features,)
    if kind == CONV2D:
        if len(shape) != 3 or shape[0] != layer.in_channels:
            raise DimensionError(
                f"layer {index} (conv2d, {layer.in_channels} channels) cannot "
                f"take input shape {shape}"
            )
        if min(layer.out_channels, layer.kernel_h, layer.kernel_w, layer.stride) <= 0:
            raise ConfigurationError(f"layer {index}: conv2d extents must be positive")
        _, h, w = shape
        if h < layer.kernel_h or w < layer.kernel_w:
            raise DimensionError(
                f"layer {index}: kernel {layer.kernel_h}x{layer.kernel_w} larger "
                f"than input {h}x{w}"
            )
        oh = (h - layer.kernel_h) // layer.stride + 1
        ow = (w - layer.kernel_w) // layer.stride + 1
        return (layer.out_channels, oh, ow)
    if kind == FLATTEN:
        return (math.prod(shape),)
    if kind in (RELU, HEAD):
        return shape
    raise ConfigurationError(f"layer {index}: unknown kind {kind!r}")


@dataclass(frozen=True)
class NetworkSpec:
    """Validated architecture; shapes and offsets are derived at construction."""

    input_shape: tuple
    layers: tuple
    output_shapes: tuple = field(init=False, repr=False, compare=False)
    offsets: tuple = field(init=False, repr=False, compare=False)
    param_count: int = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ConfigurationError("a network needs at least one layer")
        if any(s <= 0 for s in self.input_shape):
            raise ConfigurationError(f"input extents must be positive: {self.input_shape}")
        shapes = []
        offsets = []
        shape = self.input_shape
        offset = 0
        for i, layer in enumerate(self.layers):
            if layer.kind not in LAYER_KINDS:
                raise ConfigurationError(f"layer {i}: unknown kind {layer.kind!r}")
            if layer.kind == HEAD:
                if i != len(self.layers) - 1:
                    raise ConfigurationError("the loss head must be the final layer")
                if layer.tap:
                    raise ConfigurationError("the loss head cannot be tapped")
            shape = _output_shape(layer, shape, i)
            shapes.append(shape)
            offsets.append(offset)
            offset += layer.param_count
        if len(shapes[-1]) != 1:
            raise ConfigurationError(
                f"network must end in a flat logit vector, got shape {shapes[-1]}"
            )
        object.__setattr__(self, "output_shapes", tuple(shapes))
        object.__setattr__(self, "offsets", tuple(offsets))
        object.__setattr__(self, "param_count", offset)

    @property
    def num_classes(self):
        return self.output_shapes[-1][0]

    @property
    def taps(self):
        return tuple(i for i, layer in enumerate(self.layers) if layer.tap)

    def with_default_taps(self):
        """Copy of this spec tapping every hidden post-activation (relu) layer."""
        layers = tuple(
            dataclasses.replace(layer, tap=layer.kind == RELU)
            for layer in self.layers
        )
        return NetworkSpec(self.input_shape, layers)

    def bias_mask(self):
        """Boolean mask over the flat parameter vector selecting bias entries."""
        mask = np.zeros(self.param_count, dtype=bool)
        for layer, off in zip(self.layers, self.offsets):
            if layer.param_count:
                start = off + layer.param_count - layer.bias_size
                mask[start : off + layer.param_count] = True
        return mask

    def unpack(self, params, index):
        """Views ``(W, b)`` of layer ``index`` into ``params``."""
        layer = self.layers[index]
        off = self.offsets[index]
        nw = layer.param_count - layer.bias_size
        w = params[off : off + nw].reshape(layer.weight_shape)
        b = params[off + nw : off + layer.param_count]
        return w, b

    def same_architecture(self, other):
        """Equal up to tap flags."""
        strip = lambda spec: [dataclasses.replace(l, tap=False) for l in spec.layers]
        return self.input_shape == other.input_shape and strip(self) == strip(other)

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["input_shape"]), tuple(LayerSpec.from_dict(x) for x in d["layers"]))


def init_params(spec, seed):
    """Fan-in scaled uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.param_count, dtype=np.float64)
    for i, layer in enumerate(spec.layers):
        if not layer.param_count:
            continue
        w, _ = spec.unpack(params, i)
        bound = math.sqrt(6.0 / layer.fan_in)
        w[...] = rng.uniform(-bound, bound, size=layer.weight_shape)
    return params


@dataclass
class ForwardRecord:
    logits: np.ndarray
    feature_maps: list  # [(layer index, activation)] in tap order
    inputs: list = field(repr=False)  # input seen by each layer
    outputs: list = field(repr=False)  # output of each layer


def _check_params(spec, params):
    params = as_flat(params)
    if params.shape[0] != spec.param_count:
        raise DimensionError(
            f"parameter vector has length {params.shape[0]}, network expects "
            f"{spec.param_count}"
        )
    return params


def _conv_windows(x, layer):
    # (b, C, H', W', kh, kw) strided view, no copy
    win = np.lib.stride_tricks.sliding_window_view(
        x, (layer.kernel_h, layer.kernel_w), axis=(2, 3)
    )
    return win[:, :, :: layer.stride, :: layer.stride]


def _layer_forward(spec, params, i, x):
    layer = spec.layers[i]
    if layer.kind == DENSE:
        w, b = spec.unpack(params, i)
        return matmul(x, w) + b
    if layer.kind == RELU:
        return np.maximum(x, 0.0)
    if layer.kind == CONV2D:
        w, b = spec.unpack(params, i)
        out = np.einsum("bchwij,ocij->bohw", _conv_windows(x, layer), w, optimize=True)
        return out + b[None, :, None, None]
    if layer.kind == FLATTEN:
        return x.reshape(x.shape[0], -1)
    return x  # head: logits pass through


def forward(spec, params, batch_inputs):
    params = _check_params(spec, params)
    x = np.asarray(batch_inputs, dtype=np.float64)
    if x.ndim < 1 or tuple(x.shape[1:]) != spec.input_shape:
        raise DimensionError(
            f"batch inputs of shape {x.shape} do not match input shape "
            f"{spec.input_shape}"
        )
    inputs, outputs = [], []
    for i in range(len(spec.layers)):
        inputs.append(x)
        x = _layer_forward(spec, params, i, x)
        outputs.append(x)
    maps = [(i, outputs[i]) for i in spec.taps]
    return ForwardRecord(logits=x, feature_maps=maps, inputs=inputs, outputs=outputs)


def backward(spec, params, record, output_grads):
    """Reverse pass; ``output_grads`` maps layer index to dLoss/d(layer output).

    Gradients injected at several layers are accumulated on the way down, so
    one pass serves both the logit loss and multi-tap feature losses.
    """
    params = _check_params(spec, params)
    grad = np.zeros_like(params)
    g = None
    for i in range(len(spec.layers) - 1, -1, -1):
        inject = output_grads.get(i)
        if inject is not None:
            g = inject if g is None else g + inject
        if g is None:
            continue
        layer = spec.layers[i]
        x = record.inputs[i]
        if layer.kind == DENSE:
            w, _ = spec.unpack(params, i)
            gw, gb = spec.unpack(grad, i)
            gw += x.T @ g
            gb += g.sum(axis=0)
            g = g @ w.T
        elif layer.kind == RELU:
            g = g * (x > 0.0)
        elif layer.kind == CONV2D:
            w, _ = spec.unpack(params, i)
            gw, gb = spec.unpack(grad, i)
            gw += np.einsum("bchwij,bohw->ocij", _conv_windows(x, layer), g, optimize=True)
            gb += g.sum(axis=(0, 2, 3))
            gx = np.zeros_like(x)
            s = layer.stride
            oh, ow = g.shape[2], g.shape[3]
            for a in range(layer.kernel_h):
                for c in range(layer.kernel_w):
                    gx[:, :, a : a + s * oh : s, c : c + s * ow : s] += np.einsum(
                        "bohw,oc->bchw", g, w[:, :, a, c]
                    )
            g = gx
        elif layer.kind == FLATTEN:
            g = g.reshape(x.shape)
    return grad


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    b, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if b == 0:
        raise DataError("empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise DataError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    rows = np.arange(b)
    loss = float(-log_probs[rows, labels].mean())
    dlogits = exp / total
    dlogits[rows, labels] -= 1.0
    dlogits /= b
    return loss, dlogits


def empirical_loss_and_grad(spec, params, batch):
    """Mean softmax cross-entropy ``J`` over ``batch`` and its flat gradient."""
    if len(batch) == 0:
        raise DataError("empty batch")
    record = forward(spec, params, batch.inputs)
    loss, dlogits = softmax_cross_entropy(record.logits, batch.labels)
    return loss, backward(spec, params, record, {len(spec.layers) - 1: dlogits})


def feature_grad(spec, params, source_params, batch, source_spec=None):
    """Batch-averaged squared feature-map distance to a frozen source network.

    Returns ``(omega, grad)`` where the gradient flows only through ``params``.
    """
    if source_spec is not None and source_spec != spec:
        raise ConfigurationError("source and target networks differ in architecture")
    source_params = as_flat(source_params)
    if source_params.shape[0] != spec.param_count:
        raise ConfigurationError(
            f"source parameters have length {source_params.shape[0]}, target "
            f"network expects {spec.param_count}"
        )
    if not spec.taps:
        raise ConfigurationError("feature regularization needs at least one tapped layer")
    b = len(batch)
    if b == 0:
        raise DataError("empty batch")
    record = forward(spec, params, batch.inputs)
    teacher = forward(spec, source_params, batch.inputs)
    omega = 0.0
    injections = {}
    for (i, fmap), (_, fsrc) in zip(record.feature_maps, teacher.feature_maps):
        diff = fmap - fsrc
        omega += float(np.sum(diff * diff))
        injections[i] = (2.0 / b) * diff
    omega /= b
    return omega, backward(spec, params, record, injections)
