"""Model specifications, weight containers and the forward/backward pass.

A network is an ordered list of layer kinds. Conv and fully connected layers
carry parameters; ReLU, 2x2 max pooling and dropout do not. Flattening before
the first fully connected layer is channel-major, i.e. ``x.reshape(N, -1)`` on
``(N, C, H, W)`` activations.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numeric as nc


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel_size: int


@dataclass(frozen=True)
class BranchConv:
    """``frames`` parallel convolutions, one per frame of a channel-stacked clip.

    Input is ``(N, frames * C, H, W)`` frame-major; output ``(N, frames * out_channels, H, W)``.
    Weights are ``(frames, out_channels, C, c, c)``.
    """

    frames: int
    out_channels: int
    kernel_size: int


@dataclass(frozen=True)
class FullyConnected:
    out_units: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool2x2:
    pass


@dataclass(frozen=True)
class Dropout:
    rate: float = 0.5


PARAMETRIC = (Conv, BranchConv, FullyConnected)
CONV_KINDS = (Conv, BranchConv)

_KIND_NAMES = {
    "conv": Conv,
    "branch_conv": BranchConv,
    "fc": FullyConnected,
    "relu": ReLU,
    "maxpool2x2": MaxPool2x2,
    "dropout": Dropout,
}


def layer_to_dict(layer) -> dict:
    name = next(k for k, v in _KIND_NAMES.items() if isinstance(layer, v))
    return {"kind": name, **layer.__dict__}


def layer_from_dict(d: dict):
    d = dict(d)
    return _KIND_NAMES[d.pop("kind")](**d)


def is_parametric(layer) -> bool:
    return isinstance(layer, PARAMETRIC)


def prefix_end(layers: Sequence, count: int) -> int:
    """Index just past the ``count``-th parametric layer and the ReLU that follows it."""
    if count == 0:
        return 0
    seen = 0
    for i, layer in enumerate(layers):
        if is_parametric(layer):
            seen += 1
            if seen == count:
                j = i + 1
                if j < len(layers) and isinstance(layers[j], ReLU):
                    j += 1
                return j
    raise ValueError(f"network has only {seen} parametric layers, asked for {count}")


def param_shapes(layers: Sequence, input_shape: tuple[int, ...]) -> list[tuple[tuple, tuple]]:
    """Walk the layer list and return ``(weight_shape, bias_shape)`` per parametric layer."""
    shape = tuple(input_shape)
    out = []
    for layer in layers:
        if isinstance(layer, Conv):
            if len(shape) != 3:
                raise ValueError(f"conv layer after flattening (input {shape})")
            c = layer.kernel_size
            out.append(((layer.out_channels, shape[0], c, c), (layer.out_channels,)))
            shape = (layer.out_channels, *shape[1:])
        elif isinstance(layer, BranchConv):
            f, c = layer.frames, layer.kernel_size
            if shape[0] % f:
                raise ValueError(f"{shape[0]} input channels do not split into {f} frames")
            per = shape[0] // f
            out.append(((f, layer.out_channels, per, c, c), (f, layer.out_channels)))
            shape = (f * layer.out_channels, *shape[1:])
        elif isinstance(layer, FullyConnected):
            n_in = int(np.prod(shape))
            out.append(((layer.out_units, n_in), (layer.out_units,)))
            shape = (layer.out_units,)
        elif isinstance(layer, MaxPool2x2):
            if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
                raise ValueError(f"max pooling needs even spatial dims, got {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
    return out


def output_shape(layers: Sequence, input_shape: tuple[int, ...]) -> tuple[int, ...]:
    shape = tuple(input_shape)
    for layer in layers:
        if isinstance(layer, Conv):
            shape = (layer.out_channels, *shape[1:])
        elif isinstance(layer, BranchConv):
            shape = (layer.frames * layer.out_channels, *shape[1:])
        elif isinstance(layer, FullyConnected):
            shape = (layer.out_units,)
        elif isinstance(layer, MaxPool2x2):
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
    return shape


@dataclass(frozen=True)
class ModelSpec:
    """Recognition model: ``d1`` conv layers followed by ``d - d1`` fully connected ones."""

    layers: tuple
    input_shape: tuple[int, int, int]
    num_classes: int
    name: str = "model"
    fusion: str | None = None  # None, "early" or "slow"
    frames: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        kinds = [l for l in self.layers if is_parametric(l)]
        if not kinds:
            raise ValueError("model has no parametric layers")
        n_conv = sum(isinstance(l, CONV_KINDS) for l in kinds)
        if any(isinstance(l, CONV_KINDS) for l in kinds[n_conv:]):
            raise ValueError("convolutional layers must precede all fully connected layers")
        if not isinstance(kinds[-1], FullyConnected) or kinds[-1].out_units != self.num_classes:
            raise ValueError(f"final layer must be fully connected with {self.num_classes} units")
        param_shapes(self.layers, self.input_shape)

    @property
    def d(self) -> int:
        return sum(is_parametric(l) for l in self.layers)

    @property
    def d1(self) -> int:
        return sum(isinstance(l, CONV_KINDS) for l in self.layers)

    @classmethod
    def standard(
        cls,
        convs: Sequence[tuple[int, int]],
        fcs: Sequence[int],
        input_shape: tuple[int, int, int],
        pool_after: Sequence[int] = (),
        dropout: float = 0.5,
        name: str = "model",
    ) -> "ModelSpec":
        """Conv+ReLU stack, optional 2x2 pooling after the listed conv indices (1-based),
        then FC layers. Hidden FC layers get ReLU followed by dropout; the output
        layer gets neither, so a single FC layer carries no dropout."""
        layers: list = []
        for i, (n, c) in enumerate(convs, start=1):
            layers += [Conv(n, c), ReLU()]
            if i in pool_after:
                layers.append(MaxPool2x2())
        for j, m in enumerate(fcs):
            layers.append(FullyConnected(m))
            if j < len(fcs) - 1:
                layers.append(ReLU())
                if dropout:
                    layers.append(Dropout(dropout))
        return cls(tuple(layers), tuple(input_shape), fcs[-1], name=name)

    def to_dict(self) -> dict:
        return {
            "type": "model",
            "name": self.name,
            "layers": [layer_to_dict(l) for l in self.layers],
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "fusion": self.fusion,
            "frames": self.frames,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        if "convs" in d:
            return cls.standard(
                [tuple(c) for c in d["convs"]],
                list(d["fcs"]),
                tuple(d["input_shape"]),
                pool_after=tuple(d.get("pool_after", ())),
                dropout=d.get("dropout", 0.5),
                name=d.get("name", "model"),
            )
        return cls(
            tuple(layer_from_dict(l) for l in d["layers"]),
            tuple(d["input_shape"]),
            d["num_classes"],
            name=d.get("name", "model"),
            fusion=d.get("fusion"),
            frames=d.get("frames", 1),
        )


@dataclass(frozen=True)
class SubModelSpec:
    """Reconstruction sub-model: a copy of the first ``k_p`` layers of a model plus a tail."""

    k: int
    k_p: int
    prefix: tuple
    tail: tuple
    input_shape: tuple[int, int, int]
    name: str = "submodel"

    def __post_init__(self):
        if not 0 < self.k_p < self.k:
            raise ValueError(f"need 0 < k_p < k, got k={self.k}, k_p={self.k_p}")
        if output_shape(self.layers, self.input_shape) != tuple(self.input_shape):
            raise ValueError("sub-model output must have the input image shape")

    @property
    def layers(self) -> tuple:
        return tuple(self.prefix) + tuple(self.tail)

    @property
    def num_classes(self):
        return None

    def to_dict(self) -> dict:
        return {
            "type": "submodel",
            "name": self.name,
            "k": self.k,
            "k_p": self.k_p,
            "prefix": [layer_to_dict(l) for l in self.prefix],
            "tail": [layer_to_dict(l) for l in self.tail],
            "input_shape": list(self.input_shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubModelSpec":
        return cls(
            d["k"],
            d["k_p"],
            tuple(layer_from_dict(l) for l in d["prefix"]),
            tuple(layer_from_dict(l) for l in d["tail"]),
            tuple(d["input_shape"]),
            name=d.get("name", "submodel"),
        )


def spec_from_dict(d: dict):
    return SubModelSpec.from_dict(d) if d.get("type") == "submodel" else ModelSpec.from_dict(d)


def build_submodel(
    model_spec: ModelSpec, k: int, k_p: int, image_channels: int | None = None, tail_kernel: int = 5
) -> SubModelSpec:
    """Sub-model whose first ``k_p`` parametric layers mirror ``model_spec``.

    The ``k - k_p`` tail layers are convolutions with ReLU between them and a
    linear last layer producing ``image_channels`` maps.
    """
    if k_p >= k:
        raise ValueError(f"k_p ({k_p}) must be smaller than k ({k})")
    if k_p < 1:
        raise ValueError("the shared prefix needs at least one layer")
    if k_p > model_spec.d1:
        raise ValueError(f"k_p ({k_p}) exceeds the number of conv layers ({model_spec.d1})")
    if k > model_spec.d1 + 1:
        raise ValueError(f"k ({k}) must not exceed d1 + 1 = {model_spec.d1 + 1}")
    channels = image_channels or model_spec.input_shape[0]
    prefix = model_spec.layers[: prefix_end(model_spec.layers, k_p)]
    if any(isinstance(l, MaxPool2x2) for l in prefix):
        raise ValueError("shared prefix downsamples; the tail cannot reconstruct full resolution")
    width = next(l.out_channels for l in reversed(prefix) if isinstance(l, Conv))
    tail: list = []
    for i in range(k - k_p - 1):
        tail += [Conv(width, tail_kernel), ReLU()]
    tail.append(Conv(channels, tail_kernel))
    shape = (channels, *model_spec.input_shape[1:])
    return SubModelSpec(k, k_p, tuple(prefix), tuple(tail), shape, name=f"{model_spec.name}-sub")


@dataclass
class WeightedModel:
    spec: ModelSpec | SubModelSpec
    params: list[list[np.ndarray]]  # [weight, bias] per parametric layer
    seed: int | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return self.params[0][0].dtype

    def copy(self) -> "WeightedModel":
        return WeightedModel(
            self.spec,
            [[w.copy(), b.copy()] for w, b in self.params],
            self.seed,
            copy.deepcopy(self.provenance),
        )

    def astype(self, dtype) -> "WeightedModel":
        m = self.copy()
        m.params = [[w.astype(dtype), b.astype(dtype)] for w, b in m.params]
        return m

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in self.params)


def count_params(spec) -> int:
    return sum(int(np.prod(w)) + int(np.prod(b)) for w, b in param_shapes(spec.layers, spec.input_shape))


def init_weights(spec, seed: int, dtype=np.float64) -> WeightedModel:
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for ws, bs in param_shapes(spec.layers, spec.input_shape):
        fan_in = int(np.prod(ws[-3:])) if len(ws) >= 4 else ws[1]
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=ws)
        params.append([w.astype(dtype), np.zeros(bs, dtype=dtype)])
    return WeightedModel(spec, params, seed)


def export_layers(src: WeightedModel, dst: WeightedModel, count: int) -> WeightedModel:
    """Return a copy of ``dst`` whose first ``count`` parametric layers are copied from ``src``."""
    if count > len(src.params) or count > len(dst.params):
        raise ValueError(f"cannot export {count} layers ({len(src.params)} -> {len(dst.params)})")
    out = dst.copy()
    for i in range(count):
        for j, name in enumerate(("weight", "bias")):
            a, b = src.params[i][j], dst.params[i][j]
            if a.shape != b.shape:
                raise ValueError(f"layer {i + 1} {name} shape mismatch: {a.shape} vs {b.shape}")
            out.params[i][j] = a.astype(b.dtype, copy=True)
    return out


# --- forward / backward -----------------------------------------------------------


def _branch_forward(x, w, b):
    n, fc, h, wd = x.shape
    f = w.shape[0]
    xs = x.reshape(n, f, fc // f, h, wd)
    outs = [nc.conv2d_forward(np.ascontiguousarray(xs[:, i]), w[i], b[i]) for i in range(f)]
    return np.stack(outs, axis=1).reshape(n, -1, h, wd)


def _branch_backward(x, w, g, need_input_grad):
    n, fc, h, wd = x.shape
    f, co = w.shape[:2]
    xs = x.reshape(n, f, fc // f, h, wd)
    gs = g.reshape(n, f, co, h, wd)
    gx = np.empty_like(xs) if need_input_grad else None
    gw, gb = np.empty_like(w), np.empty(w.shape[:2], dtype=w.dtype)
    for i in range(f):
        gxi, gw[i], gb[i] = nc.conv2d_backward(
            np.ascontiguousarray(xs[:, i]), w[i], np.ascontiguousarray(gs[:, i]), need_input_grad
        )
        if need_input_grad:
            gx[:, i] = gxi
    return (gx.reshape(x.shape) if need_input_grad else None), gw, gb


def run_layers(layers, params, x, mode="eval", rng=None, start_param=0, cache=None):
    """Apply ``layers`` to ``x``. ``params`` are consumed in order starting at ``start_param``.

    When ``cache`` is a list, per-layer tensors needed by :func:`backprop` are appended.
    """
    p = start_param
    for layer in layers:
        if isinstance(layer, Conv):
            w, b = params[p]
            if cache is not None:
                cache.append(x)
            x = nc.conv2d_forward(x, w, b)
            p += 1
        elif isinstance(layer, BranchConv):
            w, b = params[p]
            if cache is not None:
                cache.append(x)
            x = _branch_forward(x, w, b)
            p += 1
        elif isinstance(layer, FullyConnected):
            w, b = params[p]
            shape = x.shape
            x = x.reshape(shape[0], -1)
            if cache is not None:
                cache.append((x, shape))
            x = nc.fc_forward(x, w, b)
            p += 1
        elif isinstance(layer, ReLU):
            if cache is not None:
                cache.append(x)
            x = nc.relu_forward(x)
        elif isinstance(layer, MaxPool2x2):
            x, idx = nc.maxpool2x2_forward(x)
            if cache is not None:
                cache.append(idx)
        elif isinstance(layer, Dropout):
            x, mask = nc.dropout_forward(x, layer.rate, mode, rng)
            if cache is not None:
                cache.append(mask)
        else:
            raise TypeError(f"unknown layer {layer!r}")
    return x


def backprop(layers, params, cache, grad, trainable) -> list:
    """Backward pass through ``layers`` using a cache from :func:`run_layers`.

    ``trainable[i]`` says whether parametric layer ``i`` needs gradients. Returns
    ``[grad_w, grad_b]`` per parametric layer (``None`` where not trainable).
    Propagation stops below the lowest trainable layer.
    """
    n_param = sum(is_parametric(l) for l in layers)
    grads: list = [None] * n_param
    lowest = next((i for i, t in enumerate(trainable) if t), None)
    if lowest is None:
        return grads
    p = n_param
    for layer, saved in zip(reversed(layers), reversed(cache)):
        if is_parametric(layer):
            p -= 1
            need_input = p > lowest
            w = params[p][0]
            if isinstance(layer, Conv):
                gx, gw, gb = nc.conv2d_backward(saved, w, grad, need_input)
            elif isinstance(layer, BranchConv):
                gx, gw, gb = _branch_backward(saved, w, grad, need_input)
            else:
                x2d, shape = saved
                gx, gw, gb = nc.fc_backward(x2d, w, grad)
                gx = gx.reshape(shape)
            if trainable[p]:
                grads[p] = [gw, gb]
            if not need_input:
                break
            grad = gx
        elif isinstance(layer, ReLU):
            grad = nc.relu_backward(saved, grad)
        elif isinstance(layer, MaxPool2x2):
            grad = nc.maxpool2x2_backward(saved, grad)
        elif isinstance(layer, Dropout):
            grad = nc.dropout_backward(saved, grad)
    return grads


def forward(model: WeightedModel, x: np.ndarray, mode: str = "eval", rng=None) -> np.ndarray:
    """Logits ``(N, classes)`` for a recognition model, reconstructions for a sub-model."""
    return run_layers(model.spec.layers, model.params, x, mode, rng)


def forward_train(model: WeightedModel, x: np.ndarray, rng=None):
    cache: list = []
    out = run_layers(model.spec.layers, model.params, x, "train", rng, cache=cache)
    return out, cache


def backward(model: WeightedModel, cache, grad_out, trainable=None) -> list:
    if trainable is None:
        trainable = [True] * len(model.params)
    return backprop(model.spec.layers, model.params, cache, grad_out, trainable)


def prefix_features(model: WeightedModel, x: np.ndarray, k_p: int) -> np.ndarray:
    """Activations after the ``k_p``-th parametric layer (and its ReLU)."""
    layers = model.spec.layers[: prefix_end(model.spec.layers, k_p)]
    return run_layers(layers, model.params, x, "eval")


# --- reference architectures ---------------------------------------------------------


def cifar_spec(num_classes: int = 10, image_size: int = 32) -> ModelSpec:
    return ModelSpec.standard(
        [(64, 9), (32, 5), (20, 5)], [num_classes], (1, image_size, image_size), name="cifar"
    )


def msra_spec(occlusion: bool = False, num_classes: int = 123) -> ModelSpec:
    first = [(16, 21), (8, 1)] if occlusion else [(32, 9), (16, 5)]
    convs = first + [(20, 4), (40, 3), (60, 3), (80, 2)]
    return ModelSpec.standard(convs, [160, num_classes], (1, 64, 64), name="msra-occlusion" if occlusion else "msra")


def svhn_spec(num_classes: int = 10) -> ModelSpec:
    return ModelSpec.standard([(20, 5), (50, 5)], [500, num_classes], (1, 32, 32), pool_after=(1,), name="svhn")


def ytf_spec(num_classes: int = 167) -> ModelSpec:
    return ModelSpec.standard(
        [(64, 9), (32, 5), (60, 4), (80, 3)], [num_classes], (1, 60, 60), name="ytf"
    )


def desk_spec(num_classes: int = 4, image_size: int = 32, widths=(16, 16, 8)) -> ModelSpec:
    """Narrow version of the CIFAR layout (same depth and kernel sizes) for CPU-scale runs."""
    n1, n2, n3 = widths
    return ModelSpec.standard(
        [(n1, 9), (n2, 5), (n3, 5)], [num_classes], (1, image_size, image_size), name="desk"
    )


PRESETS = {
    "cifar": cifar_spec,
    "msra": msra_spec,
    "msra-occlusion": lambda **kw: msra_spec(occlusion=True, **kw),
    "svhn": svhn_spec,
    "ytf": ytf_spec,
    "desk": desk_spec,
}
