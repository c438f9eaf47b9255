"""Network assembly from a serializable layer-spec list, with static shape checks.

A spec is a list of dicts, e.g.

    [{"type": "conv", "out": 16, "k": 3, "save": "e1"},
     {"type": "inorm"}, {"type": "relu"}, {"type": "down"},
     ...
     {"type": "up"}, {"type": "concat", "with": "e1"},
     ...
     {"type": "gap"}, {"type": "dense", "out": 36}]

Any layer may carry `save: <tag>` to stash its output; a later
`concat(with=<tag>)` consumes it as a skip connection.  Shapes are chained at
build time, so mismatched skips or dense sizes fail before any training step.
"""

from __future__ import annotations

import numpy as np

from . import layers as L
from .layers import ShapeError, Tensor

LAYER_TYPES = ("conv", "dense", "relu", "sigmoid", "inorm", "down", "up", "concat", "gap", "flatten")


class NetworkSpecError(ValueError):
    pass


def _infer_shapes(spec: list[dict], input_shape: tuple) -> list[tuple]:
    """Output shape after each layer; raises on any inconsistency."""
    saved: dict[str, tuple] = {}
    shape = tuple(input_shape)
    shapes = []
    for i, ls in enumerate(spec):
        t = ls["type"]
        if t not in LAYER_TYPES:
            raise NetworkSpecError(f"layer {i}: unknown type {t!r}")
        spatial = len(shape) == 3
        if t == "conv":
            if not spatial:
                raise NetworkSpecError(f"layer {i}: conv needs (C,H,W) input, got {shape}")
            c, h, w = shape
            k, s = ls.get("k", 3), ls.get("stride", 1)
            pad = k // 2
            shape = (ls["out"], (h + 2 * pad - k) // s + 1, (w + 2 * pad - k) // s + 1)
        elif t == "dense":
            if spatial:
                raise NetworkSpecError(f"layer {i}: dense needs flat input, got {shape}")
            shape = (ls["out"],)
        elif t == "inorm":
            if not spatial:
                raise NetworkSpecError(f"layer {i}: inorm needs (C,H,W) input")
        elif t == "down":
            if not spatial or shape[1] % 2 or shape[2] % 2:
                raise NetworkSpecError(f"layer {i}: down needs even (C,H,W) input, got {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif t == "up":
            if not spatial:
                raise NetworkSpecError(f"layer {i}: up needs (C,H,W) input")
            shape = (shape[0], shape[1] * 2, shape[2] * 2)
        elif t == "concat":
            tag = ls.get("with")
            if tag not in saved:
                raise NetworkSpecError(f"layer {i}: concat references unsaved tag {tag!r}")
            skp = saved[tag]
            if not spatial or skp[1:] != shape[1:]:
                raise NetworkSpecError(
                    f"layer {i}: concat spatial mismatch {shape} vs saved {skp} (tag {tag!r})"
                )
            shape = (shape[0] + skp[0], shape[1], shape[2])
        elif t == "gap":
            if not spatial:
                raise NetworkSpecError(f"layer {i}: gap needs (C,H,W) input")
            shape = (shape[0],)
        elif t == "flatten":
            shape = (int(np.prod(shape)),)
        if ls.get("save"):
            saved[ls["save"]] = shape
        shapes.append(shape)
    return shapes


class Network:
    """A feed-forward net with optional skip connections, built from a spec."""

    def __init__(self, spec: list[dict], input_shape: tuple, seed: int = 0, dtype=np.float32):
        self.spec = [dict(ls) for ls in spec]
        self.input_shape = tuple(int(d) for d in input_shape)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.shapes = _infer_shapes(self.spec, self.input_shape)

        rng = np.random.default_rng(np.random.SeedSequence([self.seed]))
        self.layers: list[L.Layer] = []
        shape = self.input_shape
        for ls in self.spec:
            t = ls["type"]
            if t == "conv":
                layer = L.Conv2d(shape[0], ls["out"], ls.get("k", 3), ls.get("stride", 1), rng, self.dtype)
            elif t == "dense":
                layer = L.Dense(shape[0], ls["out"], rng, self.dtype)
            elif t == "relu":
                layer = L.ReLU()
            elif t == "sigmoid":
                layer = L.Sigmoid()
            elif t == "inorm":
                layer = L.InstanceNorm(shape[0], self.dtype)
            elif t == "down":
                layer = L.Downsample()
            elif t == "up":
                layer = L.Upsample()
            elif t == "concat":
                layer = L.Concat(ls["with"])
            elif t == "gap":
                layer = L.GlobalAvgPool()
            elif t == "flatten":
                layer = L.Flatten()
            layer.save = ls.get("save")
            self.layers.append(layer)
            shape = self.shapes[len(self.layers) - 1]
        self.output_shape = shape if self.layers else self.input_shape
        self._saved: dict[str, np.ndarray] = {}
        self._ran_forward = False

    def params(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            for pname, tensor in layer.params():
                out.append((f"layer{i}.{pname}", tensor))
        return out

    def zero_grads(self):
        for _, t in self.params():
            t.zero_grad()

    def forward(self, x: np.ndarray, train: bool = False, check_finite: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} != expected {self.input_shape}")
        saved = {}
        for layer in self.layers:
            if isinstance(layer, L.Concat):
                x = layer.forward_with_skip(x, saved[layer.with_tag], train)
            else:
                x = layer.forward(x, train)
            if check_finite and not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite activation after {type(layer).__name__}")
            if layer.save:
                saved[layer.save] = x
        if train:
            self._saved = saved
            self._ran_forward = True
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads from an upstream gradient; returns d(input)."""
        if not self._ran_forward:
            raise RuntimeError("backward called without a recorded forward pass")
        g = np.asarray(dout, dtype=self.dtype)
        pending: dict[str, np.ndarray] = {}
        for layer in reversed(self.layers):
            if layer.save and layer.save in pending:
                g = g + pending.pop(layer.save)
            if isinstance(layer, L.Concat):
                g, g_skip = layer.backward_split(g)
                pending[layer.with_tag] = pending.get(layer.with_tag, 0) + g_skip
            else:
                g = layer.backward(g)
        self._ran_forward = False
        return g

    def get_param_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.params()}

    def set_param_arrays(self, arrays: dict[str, np.ndarray]):
        for name, t in self.params():
            src = arrays[name]
            if src.shape != t.values.shape:
                raise ShapeError(f"param {name}: shape {src.shape} != {t.values.shape}")
            t.values[...] = src.astype(self.dtype)


def calibration_net_spec(base: int = 16) -> list[dict]:
    """3-level encoder-decoder with skip connections; linear image output.

    Channels base/2b/4b; input and output are 1-channel images of the same
    side (side must be divisible by 4).
    """
    b = base
    return [
        {"type": "conv", "out": b, "k": 3},
        {"type": "inorm"},
        {"type": "relu", "save": "e1"},
        {"type": "down"},
        {"type": "conv", "out": 2 * b, "k": 3},
        {"type": "inorm"},
        {"type": "relu", "save": "e2"},
        {"type": "down"},
        {"type": "conv", "out": 4 * b, "k": 3},
        {"type": "inorm"},
        {"type": "relu"},
        {"type": "up"},
        {"type": "concat", "with": "e2"},
        {"type": "conv", "out": 2 * b, "k": 3},
        {"type": "inorm"},
        {"type": "relu"},
        {"type": "up"},
        {"type": "concat", "with": "e1"},
        {"type": "conv", "out": b, "k": 3},
        {"type": "inorm"},
        {"type": "relu"},
        {"type": "conv", "out": 1, "k": 3},
    ]


def classifier_net_spec(n_labels: int, channels: tuple = (16, 32, 32, 32)) -> list[dict]:
    """Conv blocks with 2x pooling, then global average pool and a dense head.

    Outputs one logit per label; scores come from a sigmoid at classify time.
    """
    spec = []
    for c in channels:
        spec.append({"type": "conv", "out": c, "k": 3})
        spec.append({"type": "relu"})
        spec.append({"type": "down"})
    spec.append({"type": "gap"})
    spec.append({"type": "dense", "out": n_labels})
    return spec
