"""Per-timestep graph construction and observation embedding.

Each alive agent becomes a node whose feature is a dense embedding of its
local observation. Edges run from every node to its nearest alive neighbours
by Manhattan distance (grid moves are cardinal, so that is the native
metric); the adjacency carries self-loops so a node always aggregates its own
feature. Dead nodes are fully isolated: empty neighbour set, zero adjacency
row and column, zero feature row.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

ADJACENCY = "adjacency"
LAPLACIAN = "laplacian"
RANDOM_WALK = "random_walk"
SHIFT_KINDS = (ADJACENCY, LAPLACIAN, RANDOM_WALK)


@dataclass(frozen=True)
class GraphSnapshot:
    """Topology of one timestep: who is alive and who talks to whom."""

    num_nodes: int
    alive: np.ndarray                 # (N,) bool
    neighbor_sets: tuple[tuple[int, ...], ...]
    adjacency: np.ndarray             # (N, N) float, self-loops on alive nodes
    shift_kind: str = ADJACENCY

    def attention_mask(self) -> np.ndarray:
        """Boolean support for attention rows: self plus neighbours, alive only."""
        return self.adjacency > 0.0


def build_graph(positions: np.ndarray, alive: np.ndarray,
                neighbor_count: int) -> GraphSnapshot:
    """Connect each alive agent to its `neighbor_count` nearest alive peers.

    Distance is Manhattan; ties break toward the lower agent index. With
    fewer than `neighbor_count` alive peers the set is simply smaller.
    """
    positions = np.asarray(positions, dtype=np.int64)
    alive = np.asarray(alive, dtype=bool)
    n = positions.shape[0]
    sets: list[tuple[int, ...]] = []
    adjacency = np.zeros((n, n), dtype=np.float64)
    alive_idx = np.flatnonzero(alive)
    for i in range(n):
        if not alive[i]:
            sets.append(())
            continue
        others = alive_idx[alive_idx != i]
        if others.size:
            dists = np.abs(positions[others] - positions[i]).sum(axis=1)
            order = np.lexsort((others, dists))  # distance, then index
            chosen = others[order[:neighbor_count]]
        else:
            chosen = np.empty(0, dtype=np.int64)
        sets.append(tuple(sorted(int(j) for j in chosen)))
        adjacency[i, i] = 1.0
        adjacency[i, chosen] = 1.0
    return GraphSnapshot(num_nodes=n, alive=alive.copy(),
                         neighbor_sets=tuple(sets), adjacency=adjacency)


def shift_operator(g: GraphSnapshot, kind: str = ADJACENCY) -> np.ndarray:
    """Materialize the graph shift matrix for one of the supported kinds."""
    a = g.adjacency
    if kind == ADJACENCY:
        return a.copy()
    degree = a.sum(axis=1)
    if kind == LAPLACIAN:
        return np.diag(degree) - a
    if kind == RANDOM_WALK:
        inv = np.divide(1.0, degree, out=np.zeros_like(degree), where=degree > 0)
        return inv[:, None] * a
    raise ValueError(f"unknown shift kind {kind!r}; expected one of {SHIFT_KINDS}")


def embed_observations(obs, weight: Tensor, bias: Tensor,
                       alive: np.ndarray, nonlinearity: str = "relu") -> Tensor:
    """Dense embedding of flattened observations; dead agents get zero rows."""
    obs_t = obs if isinstance(obs, Tensor) else Tensor(np.asarray(obs, dtype=np.float64))
    if obs_t.value.ndim != 2 or obs_t.value.shape[1] != weight.value.shape[0]:
        raise ShapeError(
            f"observations {obs_t.value.shape} do not match encoder {weight.value.shape}")
    act = ad.NONLINEARITIES[nonlinearity]
    h = act(ad.add(ad.matmul(obs_t, weight), bias))
    mask = np.asarray(alive, dtype=np.float64)[:, None]
    return ad.mul(h, mask)


def permutation_matrix(perm: np.ndarray) -> np.ndarray:
    """P with P[i, perm[i]] = 1, so (P @ x)[i] = x[perm[i]]."""
    perm = np.asarray(perm, dtype=np.int64)
    n = perm.shape[0]
    p = np.zeros((n, n), dtype=np.float64)
    p[np.arange(n), perm] = 1.0
    return p


def permute_snapshot(g: GraphSnapshot, new_from_old: np.ndarray) -> GraphSnapshot:
    """Relabel nodes: new node i is old node new_from_old[i].

    For P = permutation_matrix(new_from_old) the returned adjacency equals
    P @ A @ P.T and permuted features are P @ x; this is the rebuilt-graph
    convention the attention equivariance check relies on.
    """
    idx = np.asarray(new_from_old, dtype=np.int64)
    old_to_new = np.argsort(idx)
    sets = tuple(
        tuple(sorted(int(old_to_new[j]) for j in g.neighbor_sets[idx[i]]))
        for i in range(g.num_nodes)
    )
    return replace(
        g,
        alive=g.alive[idx].copy(),
        neighbor_sets=sets,
        adjacency=g.adjacency[np.ix_(idx, idx)].copy(),
    )
