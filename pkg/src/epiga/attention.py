"""Self-reinforcement attention.

A head turns an input vector into a weight per value component,
``a_i = gain * f(q_i . k_i / sqrt(d_k))``, and the reinforced output is the
element-wise product ``o = a * v``. Weights below one silence a component,
weights above one enhance it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .neural import Mlp, init_mlp, mlp_forward

HEAD_ACTIVATIONS = {"sigmoid": ad.sigmoid, "tanh": ad.tanh, "identity": lambda t: t}


@dataclass
class AttentionHead:
    net_q: Mlp
    net_k: Mlp
    d_v: int
    d_k: int
    gain: float = 2.0
    activation: str = "sigmoid"

    def __post_init__(self):
        want = self.d_v * self.d_k
        if self.net_q.out_dim != want or self.net_k.out_dim != want:
            raise ShapeError(
                f"query/key nets must output d_v*d_k={want} values, "
                f"got {self.net_q.out_dim} and {self.net_k.out_dim}"
            )
        if self.net_q.in_dim != self.net_k.in_dim:
            raise ShapeError("query and key nets disagree on input dimension")
        if self.activation not in HEAD_ACTIVATIONS:
            raise ValueError(f"unknown head activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.net_q.in_dim

    def parameters(self) -> dict[str, np.ndarray]:
        return {**self.net_q.parameters(), **self.net_k.parameters()}

    def copy(self) -> "AttentionHead":
        return AttentionHead(self.net_q.copy(), self.net_k.copy(), self.d_v, self.d_k, self.gain, self.activation)


def init_head(
    in_dim: int,
    d_v: int,
    d_k: int,
    hidden: int = 32,
    gain: float = 2.0,
    rng: np.random.Generator | None = None,
    name: str = "head",
) -> AttentionHead:
    net_q = init_mlp(in_dim, [hidden], d_v * d_k, "tanh", "identity", rng, name=f"{name}.query")
    net_k = init_mlp(in_dim, [hidden], d_v * d_k, "tanh", "identity", rng, name=f"{name}.key")
    return AttentionHead(net_q, net_k, d_v, d_k, gain)


def reinforce(a, v) -> Tensor:
    """o_i = a_i * v_i."""
    a, v = ad.const(a), ad.const(v)
    if a.shape != v.shape:
        raise ShapeError(f"reinforce: weights {a.shape} and values {v.shape} differ")
    return ad.mul(a, v)


def attention_weights(head: AttentionHead, x, params: Mapping[str, Tensor] | None = None) -> Tensor:
    """Reinforcement weights for a single input (d_v,) or a batch (B, d_v)."""
    x = ad.const(x)
    lead = x.shape[:-1]
    q = ad.reshape(mlp_forward(head.net_q, x, params), (*lead, head.d_v, head.d_k))
    k = ad.reshape(mlp_forward(head.net_k, x, params), (*lead, head.d_v, head.d_k))
    scores = ad.scale(ad.sum(ad.mul(q, k), axis=-1), 1.0 / np.sqrt(head.d_k))
    return ad.scale(HEAD_ACTIVATIONS[head.activation](scores), head.gain)


def multi_head_reinforce(
    heads: Sequence[AttentionHead], x, v, params: Mapping[str, Tensor] | None = None
) -> list[Tensor]:
    """One reinforced vector per head, all sharing the same values ``v``."""
    if not heads:
        raise ShapeError("need at least one head")
    d_v = heads[0].d_v
    if any(h.d_v != d_v or h.in_dim != heads[0].in_dim for h in heads):
        raise ShapeError("heads disagree on d_v or input dimension")
    v = ad.const(v)
    if v.shape[-1] != d_v:
        raise ShapeError(f"values have dimension {v.shape[-1]}, heads expect {d_v}")
    return [reinforce(attention_weights(h, x, params), v) for h in heads]
