"""Layer graphs for small classifiers with a baseline or split head.

A model is an ordered list of layers. The baseline head ends in a single
linear layer (features -> classes); the split head ends in two adjacent
linear layers (features -> latent -> classes) with no nonlinearity between
them, which makes exact fusion into one linear layer possible.

Only conv2d and linear layers are injectable fault targets; their raw
affine outputs (pre-activation) are the tap points, modeling a corrupted
MAC accumulator.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ShapeError, StructureError
from .rng import SeededRng, kaiming_uniform

INJECTABLE_KINDS = ("conv2d", "linear")


class Conv2d:
    kind = "conv2d"
    injectable = True

    def __init__(self, weight: np.ndarray, bias: np.ndarray, stride: int = 1, pad: int = 0):
        self.weight = ops.as_f32(weight)
        self.bias = ops.as_f32(bias)
        self.stride = int(stride)
        self.pad = int(pad)

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)

    def forward_train(self, x):
        return self.forward(x), x

    def backward(self, dy, ctx):
        dx, dw, db = ops.conv2d_backward(dy, ctx, self.weight, self.stride, self.pad)
        return dx, [dw, db]

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, s):
        if len(s) != 3 or s[0] != self.weight.shape[1]:
            raise ShapeError(f"conv2d expects ({self.weight.shape[1]}, H, W), got {s}")
        oh, ow = ops._conv_geometry(s[1], s[2], self.weight.shape[2], self.weight.shape[3],
                                    self.stride, self.pad)
        return (self.weight.shape[0], oh, ow)

    def spec(self):
        co, ci, kh, kw = self.weight.shape
        return {"kind": self.kind, "out_channels": co, "in_channels": ci,
                "kh": kh, "kw": kw, "stride": self.stride, "pad": self.pad}


class Linear:
    kind = "linear"
    injectable = True

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = ops.as_f32(weight)  # (out, in); row c is class/unit c
        self.bias = ops.as_f32(bias)

    def forward(self, x):
        y = ops.matmul(x, np.ascontiguousarray(self.weight.T))
        y += self.bias[None, :]
        return y

    def forward_train(self, x):
        return self.forward(x), x

    def backward(self, dy, ctx):
        dx = ops.matmul(dy, self.weight)
        dw = ops.matmul(np.ascontiguousarray(dy.T), ctx)
        db = dy.sum(axis=0)
        return dx, [dw, db]

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, s):
        if len(s) != 1 or s[0] != self.weight.shape[1]:
            raise ShapeError(f"linear expects ({self.weight.shape[1]},), got {s}")
        return (self.weight.shape[0],)

    def spec(self):
        return {"kind": self.kind, "out": self.weight.shape[0], "in": self.weight.shape[1]}


class ReLU:
    kind = "relu"
    injectable = False

    def forward(self, x):
        return ops.relu(x)

    def forward_train(self, x):
        return self.forward(x), x

    def backward(self, dy, ctx):
        return ops.relu_backward(dy, ctx), []

    def params(self):
        return []

    def out_shape(self, s):
        return s

    def spec(self):
        return {"kind": self.kind}


class MaxPool2d:
    kind = "maxpool"
    injectable = False

    def __init__(self, size: int = 2):
        self.size = int(size)

    def forward(self, x):
        return ops.maxpool2d(x, self.size)[0]

    def forward_train(self, x):
        y, arg = ops.maxpool2d(x, self.size)
        return y, (arg, x.shape[2:])

    def backward(self, dy, ctx):
        arg, hw = ctx
        return ops.maxpool2d_backward(dy, arg, hw), []

    def params(self):
        return []

    def out_shape(self, s):
        if len(s) != 3 or s[1] < self.size or s[2] < self.size:
            raise ShapeError(f"maxpool{self.size} invalid for {s}")
        return (s[0], s[1] // self.size, s[2] // self.size)

    def spec(self):
        return {"kind": self.kind, "size": self.size}


class Flatten:
    kind = "flatten"
    injectable = False

    def forward(self, x):
        return np.ascontiguousarray(x.reshape(x.shape[0], -1))

    def forward_train(self, x):
        return self.forward(x), x.shape

    def backward(self, dy, ctx):
        return dy.reshape(ctx), []

    def params(self):
        return []

    def out_shape(self, s):
        return (int(np.prod(s)),)

    def spec(self):
        return {"kind": self.kind}


class BatchNorm:
    """Inference-form batch norm: a fixed per-channel affine."""

    kind = "batchnorm"
    injectable = False

    def __init__(self, scale: np.ndarray, shift: np.ndarray):
        self.scale = ops.as_f32(scale)
        self.shift = ops.as_f32(shift)

    def forward(self, x):
        return ops.channel_affine(x, self.scale, self.shift)

    def forward_train(self, x):
        return self.forward(x), x

    def backward(self, dy, ctx):
        dx, dscale, dshift = ops.channel_affine_backward(dy, ctx, self.scale)
        return dx, [dscale, dshift]

    def params(self):
        return [self.scale, self.shift]

    def out_shape(self, s):
        if s[0] != self.scale.shape[0]:
            raise ShapeError(f"batchnorm channels {self.scale.shape[0]} != {s[0]}")
        return s

    def spec(self):
        return {"kind": self.kind, "channels": self.scale.shape[0]}


class ModelGraph:
    """An ordered layer list plus head bookkeeping.

    Immutable by convention once trained; concurrent read-only forwards are
    safe because layer forwards never mutate state.
    """

    def __init__(self, layers, head_kind: str, input_shape, arch: str = "custom",
                 seed: int = 0, epoch: int = 0):
        if head_kind not in ("baseline", "split"):
            raise StructureError(f"unknown head kind {head_kind!r}")
        self.layers = list(layers)
        self.head_kind = head_kind
        self.input_shape = tuple(int(d) for d in input_shape)
        self.arch = arch
        self.seed = int(seed)
        self.epoch = int(epoch)
        self._validate()

    def _validate(self):
        shapes = []
        s = self.input_shape
        for i, layer in enumerate(self.layers):
            s = layer.out_shape(s)  # raises ShapeError if layers don't compose
            shapes.append(s)
        self.layer_shapes = shapes  # per-sample output shape of each layer
        if self.head_kind == "baseline":
            if not self.layers or self.layers[-1].kind != "linear":
                raise StructureError("baseline head requires a final linear layer")
        else:
            if len(self.layers) < 2 or self.layers[-1].kind != "linear" \
                    or self.layers[-2].kind != "linear":
                raise StructureError("split head requires two adjacent final linear layers")
        if self.classes < 2:
            raise StructureError(f"need >= 2 classes, got {self.classes}")

    @property
    def classes(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def feature_dim(self) -> int:
        """Width feeding the head (the baseline head's input)."""
        head = self.layers[-2] if self.head_kind == "split" else self.layers[-1]
        return head.weight.shape[1]

    @property
    def latent_dim(self):
        return self.layers[-1].weight.shape[1] if self.head_kind == "split" else None

    @property
    def injectable_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.injectable]

    @property
    def model_id(self) -> str:
        return f"{self.arch}/{self.head_kind}"

    def activation_elements(self, index: int) -> int:
        """Per-sample element count of layer `index`'s output."""
        return int(np.prod(self.layer_shapes[index]))

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def forward_collect(self, x: np.ndarray):
        """Forward pass recording every layer output (for fault replay)."""
        outs = []
        for layer in self.layers:
            x = layer.forward(x)
            outs.append(x)
        return x, outs

    def forward_from(self, index: int, activation: np.ndarray) -> np.ndarray:
        """Resume the forward pass given layer `index`'s output."""
        x = activation
        for layer in self.layers[index + 1:]:
            x = layer.forward(x)
        return x

    def forward_with_taps(self, x: np.ndarray, taps):
        """Forward pass plus the raw affine outputs of the tapped layers.

        Taps are read-only: logits are bitwise identical to a plain forward.
        """
        taps = set(taps)
        injectable = set(self.injectable_indices)
        bad = taps - injectable
        if bad:
            raise ValueError(f"taps {sorted(bad)} are not injectable layers")
        recorded = {}
        for i, layer in enumerate(self.layers):
            x = layer.forward(x)
            if i in taps:
                recorded[i] = x
        return x, recorded

    def header(self) -> dict:
        return {
            "arch": self.arch,
            "head_kind": self.head_kind,
            "input_shape": list(self.input_shape),
            "classes": self.classes,
            "feature_dim": self.feature_dim,
            "latent_dim": self.latent_dim,
            "layers": [l.spec() for l in self.layers],
            "seed": self.seed,
            "epoch": self.epoch,
        }


def layer_from_spec(spec: dict):
    kind = spec["kind"]
    if kind == "conv2d":
        w = np.zeros((spec["out_channels"], spec["in_channels"], spec["kh"], spec["kw"]), np.float32)
        return Conv2d(w, np.zeros(spec["out_channels"], np.float32), spec["stride"], spec["pad"])
    if kind == "linear":
        return Linear(np.zeros((spec["out"], spec["in"]), np.float32),
                      np.zeros(spec["out"], np.float32))
    if kind == "relu":
        return ReLU()
    if kind == "maxpool":
        return MaxPool2d(spec["size"])
    if kind == "flatten":
        return Flatten()
    if kind == "batchnorm":
        n = spec["channels"]
        return BatchNorm(np.ones(n, np.float32), np.zeros(n, np.float32))
    raise StructureError(f"unknown layer kind {kind!r}")


def fuse_head(m: ModelGraph) -> ModelGraph:
    """Collapse a split head's two linear layers into one.

    W' = W2 @ W1 and b' = W2 @ b1 + b2; valid only because no nonlinearity
    sits between the latent and projection layers. Backbone layers are
    shared with the input graph (graphs are immutable once trained).
    """
    if m.head_kind != "split":
        raise StructureError("fuse_head requires a split-head model")
    lat, proj = m.layers[-2], m.layers[-1]
    w = ops.matmul(proj.weight, lat.weight)
    b = ops.matmul(proj.weight, lat.bias.reshape(-1, 1)).reshape(-1)
    b += proj.bias
    fused = Linear(w, b)
    return ModelGraph(m.layers[:-2] + [fused], "baseline", m.input_shape,
                      arch=m.arch, seed=m.seed, epoch=m.epoch)


def param_and_flop_count(m: ModelGraph):
    """Total parameter elements and FLOPs per inference of one sample.

    FLOPs are 2 * MACs for conv/linear layers; other layer kinds count as 0.
    """
    params = sum(int(p.size) for p in m.params())
    flops = 0
    s = m.input_shape
    for layer in m.layers:
        out = layer.out_shape(s)
        if layer.kind == "conv2d":
            co, ci, kh, kw = layer.weight.shape
            flops += 2 * co * ci * kh * kw * out[1] * out[2]
        elif layer.kind == "linear":
            flops += 2 * layer.weight.shape[0] * layer.weight.shape[1]
        s = out
    return params, flops


def _make_head(rng: SeededRng, feature_dim: int, classes: int, head_kind: str, latent):
    if head_kind == "baseline":
        return [Linear(kaiming_uniform(rng, (classes, feature_dim), feature_dim),
                       np.zeros(classes, np.float32))]
    if latent is None or latent < 1:
        raise StructureError("split head needs a latent width >= 1")
    return [
        Linear(kaiming_uniform(rng, (latent, feature_dim), feature_dim),
               np.zeros(latent, np.float32)),
        Linear(kaiming_uniform(rng, (classes, latent), latent),
               np.zeros(classes, np.float32)),
    ]


def build_mlp_s(classes: int = 10, head_kind: str = "baseline", latent=None,
                seed: int = 0) -> ModelGraph:
    """MLP-S: flatten -> linear 784->256 -> relu -> head. Input 1x28x28."""
    rng = SeededRng(seed, stream=1)
    layers = [
        Flatten(),
        Linear(kaiming_uniform(rng, (256, 784), 784), np.zeros(256, np.float32)),
        ReLU(),
    ]
    layers += _make_head(rng, 256, classes, head_kind, latent)
    return ModelGraph(layers, head_kind, (1, 28, 28), arch="mlp-s", seed=seed)


def build_cnn_s(classes: int = 10, head_kind: str = "baseline", latent=None,
                seed: int = 0) -> ModelGraph:
    """CNN-S: conv 1->16 3x3, relu, pool2, conv 16->32 3x3, relu, pool2,
    flatten (800), head. Input 1x28x28, no padding."""
    rng = SeededRng(seed, stream=1)
    layers = [
        Conv2d(kaiming_uniform(rng, (16, 1, 3, 3), 9), np.zeros(16, np.float32)),
        ReLU(),
        MaxPool2d(2),
        Conv2d(kaiming_uniform(rng, (32, 16, 3, 3), 144), np.zeros(32, np.float32)),
        ReLU(),
        MaxPool2d(2),
        Flatten(),
    ]
    layers += _make_head(rng, 800, classes, head_kind, latent)
    return ModelGraph(layers, head_kind, (1, 28, 28), arch="cnn-s", seed=seed)


def build_model(arch: str, classes: int, head_kind: str, latent=None, seed: int = 0) -> ModelGraph:
    if arch == "mlp-s":
        return build_mlp_s(classes, head_kind, latent, seed)
    if arch == "cnn-s":
        return build_cnn_s(classes, head_kind, latent, seed)
    raise ValueError(f"unknown arch {arch!r} (expected mlp-s or cnn-s)")


def argmax_class(logits_row: np.ndarray) -> int:
    """Deterministic argmax: ties broken by lowest class index."""
    return int(np.argmax(logits_row))
