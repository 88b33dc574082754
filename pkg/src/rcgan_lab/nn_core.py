"""Dense MLP engine: forward traces, exact reverse-mode gradients, Adam.

Batches are float64 numpy arrays of shape (batch, features). Weights are
stored as (out, in) so a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("identity", "leaky_relu", "tanh", "sigmoid")
LEAKY_ALPHA = 0.2
PROB_EPS = 1e-7
CHECKPOINT_VERSION = 1


class DimensionError(ValueError):
    """Raised when array shapes do not line up."""


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "leaky_relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a DenseNet needs at least one layer")
        for k, (a, b) in enumerate(zip(self.layers[:-1], self.layers[1:])):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise DimensionError(
                    f"layer {k} emits {a.weight.shape[0]} features, "
                    f"layer {k + 1} expects {b.weight.shape[1]}"
                )
        for layer in self.layers[:-1]:
            if layer.activation == "sigmoid":
                raise ValueError("sigmoid is only allowed on the final layer")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        if len(params) != 2 * len(self.layers):
            raise DimensionError("parameter list length does not match layers")
        for k, layer in enumerate(self.layers):
            w, b = params[2 * k], params[2 * k + 1]
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise DimensionError(f"parameter shape mismatch in layer {k}")
            layer.weight = np.array(w, dtype=np.float64)
            layer.bias = np.array(b, dtype=np.float64)

    def copy(self) -> DenseNet:
        return DenseNet(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x).output


def init_net(
    sizes: list[int],
    rng: np.random.Generator,
    hidden_activation: str = "leaky_relu",
    output_activation: str = "identity",
) -> DenseNet:
    """Glorot-uniform weights, zero biases."""
    layers = []
    n = len(sizes) - 1
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = output_activation if k == n - 1 else hidden_activation
        layers.append(Layer(w, np.zeros(fan_out), act))
    return DenseNet(layers)


def _activate(name: str, a: np.ndarray) -> np.ndarray:
    if name == "identity":
        return a
    if name == "leaky_relu":
        return np.where(a > 0, a, LEAKY_ALPHA * a)
    if name == "tanh":
        return np.tanh(a)
    # numerically stable logistic
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _activation_grad(name: str, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Derivative of the activation given pre-activation ``a`` and output ``h``."""
    if name == "identity":
        return np.ones_like(a)
    if name == "leaky_relu":
        return np.where(a > 0, 1.0, LEAKY_ALPHA)
    if name == "tanh":
        return 1.0 - h * h
    return h * (1.0 - h)


@dataclass
class ActivationTrace:
    """Everything ``backward`` needs, plus penultimate features.

    ``inputs[k]`` is what layer ``k`` consumed, ``pre[k]`` its affine output
    and ``post[k]`` the activated output.
    """

    net: DenseNet
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]

    @property
    def features(self) -> np.ndarray:
        """Activations feeding the final (logit) layer."""
        return self.inputs[-1]


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray

    def flat(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def forward(net: DenseNet, batch: np.ndarray) -> ActivationTrace:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionError(
            f"batch of shape {x.shape} does not fit input_dim {net.input_dim}"
        )
    inputs, pre, post = [], [], []
    h = x
    for layer in net.layers:
        inputs.append(h)
        a = h @ layer.weight.T + layer.bias
        h = _activate(layer.activation, a)
        pre.append(a)
        post.append(h)
    return ActivationTrace(net, inputs, pre, post)


def backward(trace: ActivationTrace, upstream: np.ndarray) -> Gradients:
    """Pull ``upstream`` (dL/d output) back through the traced pass."""
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != trace.output.shape:
        raise DimensionError(
            f"upstream {g.shape} does not match output {trace.output.shape}"
        )
    n = len(trace.net.layers)
    dws: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for k in range(n - 1, -1, -1):
        layer = trace.net.layers[k]
        g = g * _activation_grad(layer.activation, trace.pre[k], trace.post[k])
        dws[k] = g.T @ trace.inputs[k]
        dbs[k] = g.sum(axis=0)
        g = g @ layer.weight
    return Gradients(dws, dbs, g)


def clamp_prob(d: np.ndarray, eps: float = PROB_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Clip probabilities to [eps, 1-eps]; also return the pass-through mask."""
    clipped = np.clip(d, eps, 1.0 - eps)
    return clipped, (d >= eps) & (d <= 1.0 - eps)


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], **hyper) -> AdamState:
        state = cls(**hyper)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> list[np.ndarray]:
    """Bias-corrected Adam update. Mutates ``state``; returns new arrays."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if not (len(params) == len(grads) == len(state.m)):
        raise DimensionError("params, grads and optimizer state differ in length")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise DimensionError(f"shape mismatch at parameter {i}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        new.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return new


# -- checkpoints -------------------------------------------------------------


def save_nets(path: str | Path, nets: dict[str, DenseNet], meta: dict | None = None) -> None:
    """Write named nets to an ``.npz`` archive; round-trips bit-exactly."""
    arrays = {}
    layout = {}
    for name, net in nets.items():
        layout[name] = [l.activation for l in net.layers]
        for k, layer in enumerate(net.layers):
            arrays[f"{name}/{k}/w"] = layer.weight
            arrays[f"{name}/{k}/b"] = layer.bias
    header = {"version": CHECKPOINT_VERSION, "layout": layout, "meta": meta or {}}
    arrays["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_nets(path: str | Path) -> tuple[dict[str, DenseNet], dict]:
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        nets = {}
        for name, acts in header["layout"].items():
            nets[name] = DenseNet(
                [
                    Layer(data[f"{name}/{k}/w"], data[f"{name}/{k}/b"], act)
                    for k, act in enumerate(acts)
                ]
            )
    return nets, header["meta"]
