"""Latent correlation layer: shared per-node GRU, then self-attention.

Each node's K-length window is encoded by one univariate GRU (weights
shared across nodes); the final hidden states ``R`` (N x d_h) feed a scaled
dot-product attention whose row-softmax is symmetrised into the adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral
from . import tensor as T
from .params import uniform
from .tensor import Tensor


@dataclass
class GruParams:
    # each gate weight is hidden x (input + hidden) and acts on [x; h]
    w_z: Tensor
    b_z: Tensor
    w_r: Tensor
    b_r: Tensor
    w_h: Tensor
    b_h: Tensor

    @property
    def hidden_dim(self) -> int:
        return self.w_z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_z.shape[1] - self.hidden_dim

    @classmethod
    def init(cls, rng: np.random.Generator, hidden_dim: int, input_dim: int = 1) -> "GruParams":
        fan = input_dim + hidden_dim
        shape = (hidden_dim, fan)
        return cls(
            uniform(rng, shape, fan), uniform(rng, (hidden_dim,), fan),
            uniform(rng, shape, fan), uniform(rng, (hidden_dim,), fan),
            uniform(rng, shape, fan), uniform(rng, (hidden_dim,), fan),
        )


@dataclass
class AttentionParams:
    w_q: Tensor
    w_k: Tensor

    @property
    def dim(self) -> int:
        return self.w_q.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, hidden_dim: int, dim: int = 32) -> "AttentionParams":
        return cls(uniform(rng, (hidden_dim, dim), hidden_dim),
                   uniform(rng, (hidden_dim, dim), hidden_dim))


def _gate(xh: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add_bias(T.matmul(xh, T.transpose(w)), b)


def gru_encode(params: GruParams, X: Tensor) -> Tensor:
    """Final GRU hidden state per node; ``X`` is ``(..., N, K)``."""
    *lead, K = X.shape
    rows = int(np.prod(lead)) if lead else 1
    xs = T.reshape(X, (rows, K))
    h = Tensor(np.zeros((rows, params.hidden_dim)))
    for t in range(K):
        x_t = T.getitem(xs, (slice(None), slice(t, t + 1)))
        xh = T.concat([x_t, h], axis=-1)
        z = T.sigmoid(_gate(xh, params.w_z, params.b_z))
        r = T.sigmoid(_gate(xh, params.w_r, params.b_r))
        cand = T.tanh(_gate(T.concat([x_t, T.mul(r, h)], axis=-1), params.w_h, params.b_h))
        h = T.add(h, T.mul(z, T.sub(cand, h)))
    return T.reshape(h, tuple(lead) + (params.hidden_dim,))


def attention_scores(attn: AttentionParams, R: Tensor) -> Tensor:
    """Row-softmax of ``Q K^T / sqrt(d)`` before symmetrisation."""
    Q = T.matmul(R, attn.w_q)
    Kmat = T.matmul(R, attn.w_k)
    logits = T.scale(T.matmul(Q, T.transpose(Kmat)), 1.0 / np.sqrt(attn.dim))
    return T.softmax_rows(logits)


def latent_correlation(gru: GruParams, attn: AttentionParams, X: Tensor) -> Tensor:
    """Learned symmetric adjacency ``(..., N, N)`` for windows ``(..., N, K)``."""
    return spectral.symmetrize(attention_scores(attn, gru_encode(gru, X)))
