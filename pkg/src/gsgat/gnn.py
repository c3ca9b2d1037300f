"""Graph convolution and multi-head graph attention layers.

The GCN path is a polynomial filter in the graph shift operator, evaluated by
iterated shifts (the running product S @ (S @ ... x), never an explicit
matrix power). The GAT path computes per-head query/key attention restricted
to each node's neighbour set plus itself, aggregates value projections, then
concatenates heads through a linear mix. Attention rows are a masked softmax,
so weights over a neighbourhood sum to one and entries outside it are exactly
zero; the attention matrix is deliberately asymmetric.

Node relabeling equivariance holds exactly for both paths and is exposed as
executable checks at the bottom of the module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .graphs import GraphSnapshot, permute_snapshot

ATTENTION_SCALE_DEFAULT = True  # 1/sqrt(d_head) on the dot products


@dataclass
class GcnParams:
    taps: list[Tensor]            # h_0 .. h_K, each (1, 1)
    nonlinearity: str = "relu"

    @property
    def order(self) -> int:
        return len(self.taps) - 1


@dataclass
class GatLayerParams:
    heads: list[tuple[Tensor, Tensor, Tensor]]   # per head (W_q, W_k, W_v)
    mix: Tensor                                  # (num_heads * head_dim, feature_dim)
    nonlinearity: str = "relu"
    scaled: bool = ATTENTION_SCALE_DEFAULT


@dataclass
class QHeadParams:
    weight: Tensor                # (feature_dim, num_actions)
    bias: Tensor                  # (1, num_actions)


def aggregate(s, x) -> Tensor:
    """One-hop information exchange y = S x."""
    s_t = s if isinstance(s, Tensor) else Tensor(np.asarray(s, dtype=np.float64))
    x_t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if s_t.value.shape[0] != s_t.value.shape[1]:
        raise ShapeError(f"shift operator must be square, got {s_t.value.shape}")
    return ad.matmul(s_t, x_t)


def gcn_linear(s, x, taps: list[Tensor]) -> Tensor:
    """Polynomial filter sum_k h_k S^k x via iterated shifts, no nonlinearity."""
    x_t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    acc = ad.mul(taps[0], x_t)
    cur = x_t
    for h_k in taps[1:]:
        cur = aggregate(s, cur)
        acc = ad.add(acc, ad.mul(h_k, cur))
    return acc


def gcn_forward(s, x, params: GcnParams) -> Tensor:
    act = ad.NONLINEARITIES[params.nonlinearity]
    return act(gcn_linear(s, x, params.taps))


def gat_attention(x, w_q: Tensor, w_k: Tensor, mask: np.ndarray,
                  scaled: bool = ATTENTION_SCALE_DEFAULT) -> Tensor:
    """One head's attention matrix over the masked neighbourhoods.

    Row i is a softmax of query-key dot products over the True entries of
    mask[i]; entries outside the mask are exactly zero, and a fully masked
    row (dead node) comes out all-zero.
    """
    x_t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    q = ad.matmul(x_t, w_q)
    k = ad.matmul(x_t, w_k)
    scores = ad.matmul(q, ad.transpose(k))
    if scaled:
        scores = ad.mul(scores, 1.0 / np.sqrt(w_q.value.shape[1]))
    return ad.softmax_rows(scores, mask, allow_empty=True)


def gat_forward(x, params: GatLayerParams, mask: np.ndarray) -> Tensor:
    """Multi-head attention layer: concat of per-head aggregations, mixed."""
    x_t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    outs = []
    for w_q, w_k, w_v in params.heads:
        att = gat_attention(x_t, w_q, w_k, mask, scaled=params.scaled)
        outs.append(ad.matmul(att, ad.matmul(x_t, w_v)))
    act = ad.NONLINEARITIES[params.nonlinearity]
    return act(ad.matmul(ad.concat_cols(outs), params.mix))


def gat_stack(x, layers: list[GatLayerParams], mask: np.ndarray) -> Tensor:
    out = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    for layer in layers:
        out = gat_forward(out, layer, mask)
    return out


def q_values(z, params: QHeadParams, alive: np.ndarray) -> Tensor:
    """Affine map to per-action values; dead nodes get all-zero rows."""
    z_t = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))
    q = ad.add(ad.matmul(z_t, params.weight), params.bias)
    return ad.mul(q, np.asarray(alive, dtype=np.float64)[:, None])


# ---------------------------------------------------------------------------
# Random layer constructors (used by checks and tests; the trainer builds its
# parameters inside a ParamStore instead)
# ---------------------------------------------------------------------------


def random_gcn_params(rng: ad.RngStream, order: int,
                      nonlinearity: str = "relu") -> GcnParams:
    taps = [Tensor(rng.uniform((1, 1)) - 0.5) for _ in range(order + 1)]
    return GcnParams(taps=taps, nonlinearity=nonlinearity)


def random_gat_layer(rng: ad.RngStream, feature_dim: int, num_heads: int,
                     head_dim: int, nonlinearity: str = "relu",
                     scaled: bool = ATTENTION_SCALE_DEFAULT) -> GatLayerParams:
    def mat(rows, cols):
        limit = np.sqrt(6.0 / (rows + cols))
        return Tensor(rng.uniform((rows, cols)) * 2 * limit - limit)

    heads = [(mat(feature_dim, head_dim), mat(feature_dim, head_dim),
              mat(feature_dim, head_dim)) for _ in range(num_heads)]
    return GatLayerParams(heads=heads, mix=mat(num_heads * head_dim, feature_dim),
                          nonlinearity=nonlinearity, scaled=scaled)


# ---------------------------------------------------------------------------
# Equivariance checks
# ---------------------------------------------------------------------------


def check_equivariance_gcn(params: GcnParams, s: np.ndarray, x: np.ndarray,
                           p: np.ndarray) -> tuple[float, float]:
    """Residuals of the filter-level relabeling identity.

    Returns the max-abs difference between H(P^T S P) P^T x and
    P^T H(S) x, both before the nonlinearity and after it (the nonlinearity
    is pointwise, so commuting with the permutation survives it).
    """
    s = np.asarray(s, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    act = ad.NONLINEARITIES[params.nonlinearity]

    permuted = gcn_linear(p.T @ s @ p, p.T @ x, params.taps)
    straight = gcn_linear(s, x, params.taps)
    pre = float(np.abs(permuted.value - p.T @ straight.value).max())
    post = float(np.abs(act(permuted).value - p.T @ act(straight).value).max())
    return pre, post


def check_equivariance_gat(layers: list[GatLayerParams], g: GraphSnapshot,
                           x: np.ndarray, perm: np.ndarray) -> float:
    """Relabeling residual for the attention stack.

    The permuted side recomputes attention from permuted features and the
    relabeled neighbour sets; that rebuilt-graph convention is the level at
    which attention equivariance holds exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    perm = np.asarray(perm, dtype=np.int64)
    straight = gat_stack(x, layers, g.attention_mask()).value
    g_perm = permute_snapshot(g, perm)
    permuted = gat_stack(x[perm], layers, g_perm.attention_mask()).value
    return float(np.abs(permuted - straight[perm]).max())
