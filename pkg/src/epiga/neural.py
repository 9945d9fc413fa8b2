"""Dense feed-forward networks, Glorot initialisation and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, TextIO

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

ACTIVATIONS = {
    "identity": lambda t: t,
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
}

SNAPSHOT_HEADER = "epiga-snapshot v1"


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"layer weight {self.weight.shape} and bias {self.bias.shape} disagree")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Mlp:
    layers: list[DenseLayer]
    name: str = "mlp"

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("an Mlp needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> dict[str, np.ndarray]:
        """Name -> array. The arrays are the live storage, not copies."""
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"{self.name}.{i}.weight"] = layer.weight
            params[f"{self.name}.{i}.bias"] = layer.bias
        return params

    def n_parameters(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def copy(self) -> "Mlp":
        return Mlp([DenseLayer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers], self.name)


def init_mlp(
    in_dim: int,
    hidden_dims: Iterable[int],
    out_dim: int,
    hidden_activation: str = "tanh",
    output_activation: str = "identity",
    rng: np.random.Generator | None = None,
    name: str = "mlp",
) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    dims = [in_dim, *hidden_dims, out_dim]
    if any(int(d) != d or d < 1 for d in dims):
        raise ShapeError(f"all layer dimensions must be positive integers, got {dims}")
    rng = rng if rng is not None else np.random.default_rng(0)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = output_activation if i == len(dims) - 2 else hidden_activation
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return Mlp(layers, name)


def identity_mlp(dim: int, name: str = "identity") -> Mlp:
    return Mlp([DenseLayer(np.eye(dim), np.zeros(dim), "identity")], name)


def mlp_forward(net: Mlp, x, params: Mapping[str, Tensor] | None = None) -> Tensor:
    """Evaluate ``net`` on a vector (in_dim,) or a batch (B, in_dim).

    ``params`` maps parameter names to tape variables; layers without an
    entry are used as constants.
    """
    x = ad.const(x)
    if x.shape[-1:] != (net.in_dim,) or x.value.ndim > 2:
        raise ShapeError(f"{net.name}: expected input (..., {net.in_dim}), got {x.shape}")
    params = params or {}
    h = x
    for i, layer in enumerate(net.layers):
        w = params.get(f"{net.name}.{i}.weight", layer.weight)
        b = params.get(f"{net.name}.{i}.bias", layer.bias)
        h = ACTIVATIONS[layer.activation](ad.add(ad.matmul(h, ad._transpose(ad.const(w))), b))
    return h


@dataclass
class AdamState:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied in place. Returns (params, state)."""
    for name in params:
        if name not in grads:
            raise KeyError(f"no gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# --------------------------------------------------------------------------
# snapshot text format


def _fmt(values: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in np.asarray(values).ravel())


def write_layers(net: Mlp, out: TextIO) -> None:
    for i, layer in enumerate(net.layers):
        out.write(f"layer {i} {layer.out_dim} {layer.in_dim} {layer.activation}\n")
        out.write(_fmt(layer.weight) + "\n")
        out.write(_fmt(layer.bias) + "\n")


def dumps_mlp(net: Mlp) -> str:
    import io

    buf = io.StringIO()
    buf.write(SNAPSHOT_HEADER + "\n")
    write_layers(net, buf)
    return buf.getvalue()


def read_layers(lines: list[str], pos: int) -> tuple[list[DenseLayer], int]:
    """Parse consecutive layer records starting at ``lines[pos]``."""
    layers = []
    while pos < len(lines) and lines[pos].startswith("layer "):
        _, index, out_dim, in_dim, act = lines[pos].split()
        if int(index) != len(layers):
            raise ValueError(f"layer records out of order at line {pos + 1}")
        out_dim, in_dim = int(out_dim), int(in_dim)
        w = np.array(lines[pos + 1].split(), dtype=np.float64)
        b = np.array(lines[pos + 2].split(), dtype=np.float64)
        if w.size != out_dim * in_dim or b.size != out_dim:
            raise ValueError(f"layer {index}: value count does not match {out_dim}x{in_dim}")
        layers.append(DenseLayer(w.reshape(out_dim, in_dim), b, act))
        pos += 3
    return layers, pos


def loads_mlp(text: str, name: str = "mlp") -> Mlp:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != SNAPSHOT_HEADER:
        raise ValueError("missing snapshot header")
    layers, _ = read_layers(lines, 1)
    return Mlp(layers, name)
