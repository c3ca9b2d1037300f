"""Sinkhorn normalization, hard matching, and the latent-permutation network.

The Sinkhorn operator alternates row and column normalization of exp(X);
running it in log space (log-sum-exp subtractions) is the same map without
the overflow/underflow of explicit exponentials and stays differentiable on
the tape. As the temperature goes to zero, Sinkhorn of X / tau approaches the
hard matching operator, i.e. the permutation maximizing the Frobenius inner
product with X; that limit is solved exactly by linear assignment and checked
against a brute-force permutation sweep in the tests.

The permutation network scores pairs of rows from two feature matrices with a
bilinear form and either samples a soft doubly-stochastic relaxation (Gumbel
noise + Sinkhorn, for training) or solves the assignment exactly (for
evaluation). Agents dead at either timestep are pinned to self-assignment by
score masking so the learned permutation only moves live agents.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .autodiff import ContractError, RngStream, ShapeError, Tensor

DEAD_SCORE = 50.0   # keeps exp() positive while pinning dead rows to the diagonal


@dataclass
class DoublyStochasticMatrix:
    values: Tensor
    iterations_used: int

    @property
    def row_col_residual(self) -> float:
        """Recomputed max deviation of any row or column sum from one."""
        v = self.values.value
        return float(max(np.abs(v.sum(axis=1) - 1.0).max(),
                         np.abs(v.sum(axis=0) - 1.0).max()))


@dataclass
class PermutationMatrix:
    values: np.ndarray        # (N, N) of {0.0, 1.0}
    assignment: np.ndarray    # (N,) column index per row

    def validate(self) -> None:
        v = self.values
        n = v.shape[0]
        if not np.isin(v, (0.0, 1.0)).all():
            raise ContractError("permutation entries must be 0 or 1")
        if not (v.sum(axis=1) == 1).all() or not (v.sum(axis=0) == 1).all():
            raise ContractError("permutation rows/columns must each contain one 1")
        if not np.array_equal(v @ v.T, np.eye(n)):
            raise ContractError("permutation matrix must be orthogonal")


@dataclass
class GsParams:
    """Everything the permutation network needs beyond the two inputs."""

    score_left: Tensor        # W_a, (d, d)
    score_right: Tensor       # W_b, (d, d)
    embed: Tensor             # W_p, (d, d), applied on the feature axis
    temperature: float = 0.5
    sinkhorn_iters: int = 20
    noise_scale: float = 1.0

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ContractError("temperature must be positive")
        if self.sinkhorn_iters < 1:
            raise ContractError("need at least one Sinkhorn iteration")
        if self.noise_scale < 0:
            raise ContractError("noise scale cannot be negative")


def _as_square_tensor(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.value.ndim != 2 or t.value.shape[0] != t.value.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {t.value.shape}")
    if not np.isfinite(t.value).all():
        raise ContractError("matrix contains non-finite entries")
    return t


def sinkhorn(x, iters: int) -> DoublyStochasticMatrix:
    """`iters` rounds of row-then-column normalization of exp(x), in log space."""
    t = _as_square_tensor(x)
    if iters < 1:
        raise ContractError("iters must be >= 1")
    log_alpha = t
    for _ in range(iters):
        log_alpha = ad.sub(log_alpha, ad.logsumexp(log_alpha, axis=1))
        log_alpha = ad.sub(log_alpha, ad.logsumexp(log_alpha, axis=0))
    return DoublyStochasticMatrix(values=ad.exp(log_alpha), iterations_used=iters)


def hungarian_match(x) -> PermutationMatrix:
    """Exact maximizer of <P, X> over permutations.

    Solved by linear assignment; among score-tied optima the assignment
    vector is made lexicographically smallest by fixing rows in order and
    keeping the earliest column that still achieves the optimum.
    """
    t = _as_square_tensor(x)
    v = t.value
    n = v.shape[0]
    tol = 1e-9 * max(1.0, float(np.abs(v).max())) * n

    def best_total(rows: list[int], cols: list[int]) -> float:
        if not rows:
            return 0.0
        sub = v[np.ix_(rows, cols)]
        ri, ci = linear_sum_assignment(sub, maximize=True)
        return float(sub[ri, ci].sum())

    optimum = best_total(list(range(n)), list(range(n)))
    available = list(range(n))
    assignment = np.empty(n, dtype=np.int64)
    fixed = 0.0
    for i in range(n):
        rest_rows = list(range(i + 1, n))
        for c in available:
            rest_cols = [cc for cc in available if cc != c]
            if fixed + v[i, c] + best_total(rest_rows, rest_cols) >= optimum - tol:
                assignment[i] = c
                fixed += v[i, c]
                available.remove(c)
                break
    values = np.zeros((n, n), dtype=np.float64)
    values[np.arange(n), assignment] = 1.0
    return PermutationMatrix(values=values, assignment=assignment)


def brute_force_match(x) -> PermutationMatrix:
    """Factorial-time oracle for `hungarian_match`; N <= 8 only."""
    v = np.asarray(x, dtype=np.float64)
    n = v.shape[0]
    if n > 8:
        raise ContractError("brute force match is for small matrices only")
    rows = np.arange(n)
    best, best_perm = -np.inf, None
    for p in permutations(range(n)):
        total = float(v[rows, p].sum())
        if total > best:
            best, best_perm = total, p
    values = np.zeros((n, n), dtype=np.float64)
    values[rows, best_perm] = 1.0
    return PermutationMatrix(values=values, assignment=np.array(best_perm))


def gumbel_sinkhorn_sample(x, params: GsParams,
                           rng: RngStream) -> DoublyStochasticMatrix:
    """Sample from the Gumbel-Sinkhorn relaxation: sinkhorn((X + g) / tau).

    With noise_scale 0 no noise is drawn and the result is the deterministic
    relaxation of X at the given temperature.
    """
    params.validate()
    t = _as_square_tensor(x)
    n = t.value.shape[0]
    if params.noise_scale > 0:
        noise = params.noise_scale * ad.sample_gumbel(n, n, rng)
        t = ad.add(t, noise)
    return sinkhorn(ad.mul(t, 1.0 / params.temperature), params.sinkhorn_iters)


def _dead_masking(score: Tensor, alive_t: np.ndarray,
                  alive_t1: np.ndarray) -> Tensor:
    """Pin agents dead at either timestep to self-assignment.

    Disallowed pairs get a large negative additive offset and a zeroed score
    (so no gradient), dead diagonals a large positive one. The offsets are
    finite, keeping every Sinkhorn output entry strictly positive.
    """
    dead = ~(np.asarray(alive_t, dtype=bool) & np.asarray(alive_t1, dtype=bool))
    if not dead.any():
        return score
    n = dead.shape[0]
    allowed = np.outer(~dead, ~dead)
    np.fill_diagonal(allowed, True)
    offset = np.where(allowed, 0.0, -DEAD_SCORE)
    offset[np.diag_indices(n)] = np.where(dead, DEAD_SCORE, 0.0)
    return ad.add(ad.mul(score, allowed.astype(np.float64)), offset)


def gs_score(gat_t, gat_t1, params: GsParams) -> Tensor:
    """Bilinear pairing of the two feature matrices, scaled by 1/sqrt(d)."""
    a = gat_t if isinstance(gat_t, Tensor) else Tensor(np.asarray(gat_t, dtype=np.float64))
    b = gat_t1 if isinstance(gat_t1, Tensor) else Tensor(np.asarray(gat_t1, dtype=np.float64))
    if a.value.shape != b.value.shape:
        raise ShapeError(f"feature matrices differ: {a.value.shape} vs {b.value.shape}")
    d = a.value.shape[1]
    left = ad.matmul(a, params.score_left)
    right = ad.matmul(b, params.score_right)
    return ad.mul(ad.matmul(left, ad.transpose(right)), 1.0 / np.sqrt(d))


def gs_network(gat_t, gat_t1, params: GsParams, rng: RngStream, mode: str,
               alive_t: np.ndarray | None = None,
               alive_t1: np.ndarray | None = None):
    """Latent permutation between consecutive-timestep feature matrices.

    mode "soft" returns a DoublyStochasticMatrix on the tape (training path);
    mode "hard" returns the exact PermutationMatrix (evaluation path).
    """
    score = gs_score(gat_t, gat_t1, params)
    n = score.value.shape[0]
    if alive_t is None:
        alive_t = np.ones(n, dtype=bool)
    if alive_t1 is None:
        alive_t1 = np.ones(n, dtype=bool)
    score = _dead_masking(score, alive_t, alive_t1)
    if mode == "soft":
        return gumbel_sinkhorn_sample(score, params, rng)
    if mode == "hard":
        return hungarian_match(score.value)
    raise ContractError(f"mode must be 'soft' or 'hard', got {mode!r}")


def predict_next(gat_t, p_theta, w_p: Tensor) -> Tensor:
    """Predicted next-step features: permute rows of the embedded current ones.

    The embedding acts on the feature axis and the (soft or hard) permutation
    on the node axis, the only shape-consistent composition when the feature
    width differs from the node count.
    """
    g = gat_t if isinstance(gat_t, Tensor) else Tensor(np.asarray(gat_t, dtype=np.float64))
    if isinstance(p_theta, DoublyStochasticMatrix):
        p = p_theta.values
    elif isinstance(p_theta, PermutationMatrix):
        p = Tensor(p_theta.values)
    elif isinstance(p_theta, Tensor):
        p = p_theta
    else:
        p = Tensor(np.asarray(p_theta, dtype=np.float64))
    return ad.matmul(p, ad.matmul(g, w_p))
