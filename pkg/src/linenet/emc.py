"""Exact occupancy chain of the feedback scheme and its steady-state analysis.

Under hop-by-hop feedback the rate-optimal schedule is: every non-empty
node transmits each epoch, a packet is deleted only when the next hop
acknowledges storage, and buffers are updated from the last intermediate
node backwards.  The joint occupancy vector then evolves as a Markov
chain; throughput capacity is the delivery rate of the last link under
its stationary distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .errors import (
    ConsistencyError,
    ConvergenceError,
    StateSpaceCapError,
    StructureViolationError,
)
from .model import NetworkSpec, enumerate_states

__all__ = [
    "SparseStochasticMatrix",
    "auxiliary_y",
    "step_emc",
    "step_emc_batch",
    "build_emc",
    "stationary",
    "capacity_exact",
    "capacity_flow_crosscheck",
    "verify_block_structure",
    "h_matrix_bound",
    "DEFAULT_STATE_CAP",
]

DEFAULT_STATE_CAP = 10**7


# ---------------------------------------------------------------------------
# single-step dynamics
# ---------------------------------------------------------------------------

def auxiliary_y(s: Sequence[int], x: Sequence[int], spec: NetworkSpec) -> tuple[int, ...]:
    """Per-link transfer indicators for one epoch, given occupancies and channels.

    Entry ``a`` is 1 iff a packet crosses link ``a`` and is stored.  A
    transfer needs the upstream node non-empty (the source always is),
    a channel success, and room at the receiver after the receiver's
    own departure this epoch; hence the indicators are resolved from
    the last link backwards.
    """
    h = spec.h
    m = spec.buffers
    y = [0] * h
    # last link: destination always has room
    y[h - 1] = x[h - 1] if s[h - 2] > 0 else 0
    for a in range(h - 2, 0, -1):
        y[a] = x[a] if s[a - 1] > 0 and (m[a] - s[a] + y[a + 1]) > 0 else 0
    y[0] = x[0] if (m[0] - s[0] + y[1]) > 0 else 0
    return tuple(y)


def step_emc(s: Sequence[int], x: Sequence[int], spec: NetworkSpec) -> tuple[int, ...]:
    """One epoch of the exact chain; each component changes by at most 1."""
    y = auxiliary_y(s, x, spec)
    return tuple(s[j] + y[j] - y[j + 1] for j in range(spec.h - 1))


def transfer_indicators_batch(states: np.ndarray, x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Vectorized per-link transfer indicators for a batch of trajectories.

    Parameters
    ----------
    states : (K, h-1) int array of occupancies.
    x : (h,) or (K, h) 0/1 array of channel outcomes.
    m : (h-1,) or (K, h-1) buffer sizes.
    """
    K, n = states.shape
    h = n + 1
    x = np.broadcast_to(x, (K, h))
    m = np.broadcast_to(m, (K, n))
    y = np.zeros((K, h), dtype=states.dtype)
    y[:, h - 1] = x[:, h - 1] * (states[:, h - 2] > 0)
    for a in range(h - 2, 0, -1):
        room = (m[:, a] - states[:, a] + y[:, a + 1]) > 0
        y[:, a] = x[:, a] * (states[:, a - 1] > 0) * room
    y[:, 0] = x[:, 0] * ((m[:, 0] - states[:, 0] + y[:, 1]) > 0)
    return y


def step_emc_batch(states: np.ndarray, x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Vectorized exact step for a batch of trajectories (see transfer_indicators_batch)."""
    y = transfer_indicators_batch(states, x, m)
    return states + y[:, :-1] - y[:, 1:]


# ---------------------------------------------------------------------------
# transition matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SparseStochasticMatrix:
    """Row-stochastic transition matrix in CSR form.

    Row ``i`` holds the one-step distribution out of the state with
    0-based index ``i`` under the canonical state ordering.
    """

    n: int
    probs: sparse.csr_matrix = field(repr=False)

    def row(self, i: int) -> list[tuple[int, float]]:
        start, stop = self.probs.indptr[i], self.probs.indptr[i + 1]
        return list(zip(self.probs.indices[start:stop], self.probs.data[start:stop]))

    def rows(self) -> Iterator[list[tuple[int, float]]]:
        for i in range(self.n):
            yield self.row(i)

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.probs.sum(axis=1)).ravel()

    def max_row_nnz(self) -> int:
        return int(np.diff(self.probs.indptr).max())

    def dense(self) -> np.ndarray:
        return self.probs.toarray()

    def to_csv(self, path) -> None:
        """Dump (row, col, prob) triplets, 0-based indices."""
        coo = self.probs.tocoo()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("row,col,prob\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{int(r)},{int(c)},{float(v)!r}\n")


def _build_chain(
    spec: NetworkSpec,
    step_batch: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    cap: int,
) -> SparseStochasticMatrix:
    """Enumerate every (state, channel realization) pair exactly."""
    n = spec.num_states
    if n > cap:
        raise StateSpaceCapError(
            f"state space has {n} states, above the cap of {cap}; "
            "use bounds or the iterative estimates instead"
        )
    h = spec.h
    m = np.asarray(spec.buffers, dtype=np.int64)
    weights = np.concatenate(([1], np.cumprod(m + 1)[:-1]))
    states = enumerate_states(spec)
    eps = np.asarray(spec.eps)

    rows = np.arange(n, dtype=np.int64)
    acc = None
    for bits in range(2 ** h):
        x = np.array([(bits >> a) & 1 for a in range(h)], dtype=np.int64)
        p = float(np.prod(np.where(x == 1, 1.0 - eps, eps)))
        nxt = step_batch(states, x, m)
        cols = nxt @ weights
        part = sparse.coo_matrix(
            (np.full(n, p), (rows, cols)), shape=(n, n)
        ).tocsr()
        acc = part if acc is None else acc + part
    acc.sum_duplicates()
    return SparseStochasticMatrix(n=n, probs=acc)


def build_emc(spec: NetworkSpec, cap: int = DEFAULT_STATE_CAP) -> SparseStochasticMatrix:
    """Transition matrix of the exact chain.

    Entry (s, s') sums the probabilities of the channel realizations
    that move s to s'.  Each row has at most min(3^(h-1), num_states)
    non-zeros because every component moves by at most one per epoch.
    """
    mat = _build_chain(spec, step_emc_batch, cap)
    sums = mat.row_sums()
    if np.max(np.abs(sums - 1.0)) > 1e-12:
        raise ConsistencyError("transition rows do not sum to 1")
    bound = min(3 ** (spec.h - 1), spec.num_states)
    if mat.max_row_nnz() > bound:
        raise ConsistencyError("row support exceeds the single-step movement bound")
    return mat


# ---------------------------------------------------------------------------
# stationary distribution and capacity
# ---------------------------------------------------------------------------

def _stationary_direct(P: sparse.csr_matrix) -> np.ndarray:
    """Solve pi (P - I) = 0 with the normalization sum(pi) = 1."""
    n = P.shape[0]
    A = (P.T - sparse.eye(n, format="csr")).tolil()
    A[n - 1, :] = 1.0
    b = np.zeros(n)
    b[n - 1] = 1.0
    if n <= 1500:
        pi = np.linalg.solve(A.toarray(), b)
    else:
        pi = sparse.linalg.spsolve(A.tocsc(), b)
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def stationary(
    P: SparseStochasticMatrix | sparse.csr_matrix,
    tol: float = 1e-12,
    max_iter: int = 10**6,
) -> np.ndarray:
    """Stationary distribution of an irreducible row-stochastic matrix.

    Power iteration by default; a direct sparse solve takes over when
    the iteration mixes too slowly.  The result is deterministic for
    fixed inputs.
    """
    mat = P.probs if isinstance(P, SparseStochasticMatrix) else sparse.csr_matrix(P)
    n = mat.shape[0]
    ncomp, _ = connected_components(mat, directed=True, connection="strong")
    if ncomp != 1:
        raise ConvergenceError(
            f"chain is not irreducible ({ncomp} strongly connected components)"
        )
    pi = np.full(n, 1.0 / n)
    switch_after = 20_000
    check_every = 50
    residual = np.inf
    for it in range(1, max_iter + 1):
        nxt = pi @ mat
        nxt /= nxt.sum()
        if it % check_every == 0 or it < 10:
            residual = float(np.max(np.abs(nxt - pi)))
            if residual <= tol:
                pi = nxt
                break
            if it >= switch_after:
                pi = _stationary_direct(mat)
                residual = float(np.max(np.abs(pi @ mat - pi)))
                break
        pi = nxt
    else:
        pi = _stationary_direct(mat)
        residual = float(np.max(np.abs(pi @ mat - pi)))
    if residual > tol:
        raise ConvergenceError(
            f"stationary solve stalled at residual {residual:.3e}",
            residual=residual,
        )
    return pi


def _tail_block_size(spec: NetworkSpec) -> int:
    """Number of states sharing each value of the last component."""
    return spec.num_states // (spec.buffers[-1] + 1)


def capacity_exact(
    spec: NetworkSpec,
    tol: float = 1e-12,
    cap: int = DEFAULT_STATE_CAP,
    chain: SparseStochasticMatrix | None = None,
    pi: np.ndarray | None = None,
) -> float:
    """Exact throughput capacity in packets/epoch.

    Equals (1 - eps[h-1]) times the stationary probability that the
    last intermediate node is non-empty.
    """
    if pi is None:
        chain = chain if chain is not None else build_emc(spec, cap=cap)
        pi = stationary(chain, tol=tol)
    block = _tail_block_size(spec)
    p_empty_last = float(pi[:block].sum())
    return (1.0 - spec.eps[-1]) * (1.0 - p_empty_last)


def capacity_flow_crosscheck(
    spec: NetworkSpec,
    tol: float = 1e-12,
    cap: int = DEFAULT_STATE_CAP,
    pi: np.ndarray | None = None,
) -> np.ndarray:
    """Capacity recomputed at every interior link; conservation check.

    Because packets are deleted only on acknowledged storage, the
    stationary storage rate is the same on every link.  The rate on an
    interior link is the expectation of its transfer indicator: the
    receiver must either have spare room or free a slot by its own
    departure in the same epoch, so the event cannot be reduced to the
    occupancy pair alone.  Returns the h-2 interior-link rates (empty
    for h = 2); disagreement with the exact capacity raises.
    """
    if spec.h == 2:
        return np.empty(0)
    if pi is None:
        chain = build_emc(spec, cap=cap)
        pi = stationary(chain, tol=tol)
    states = enumerate_states(spec)
    ref = capacity_exact(spec, tol=tol, cap=cap, pi=pi)
    m = np.asarray(spec.buffers, dtype=np.int64)
    eps = np.asarray(spec.eps)
    rates = np.zeros(spec.h)
    for bits in range(2 ** spec.h):
        x = np.array([(bits >> a) & 1 for a in range(spec.h)], dtype=np.int64)
        p = float(np.prod(np.where(x == 1, 1.0 - eps, eps)))
        rates += p * (pi @ transfer_indicators_batch(states, x, m))
    out = rates[1 : spec.h - 1]
    # slack floor absorbs accumulation error in the stationary solve
    if np.max(np.abs(out - ref)) > max(10 * tol, 1e-9):
        raise ConsistencyError(
            f"flow conservation violated: link rates {out} vs capacity {ref}"
        )
    return out


# ---------------------------------------------------------------------------
# block structure of the transition matrix
# ---------------------------------------------------------------------------

def _blocks(spec: NetworkSpec, chain: SparseStochasticMatrix):
    """Dense blocks (down, stay, up) of the last-component partition.

    States are grouped by the occupancy of the last intermediate node;
    each group is contiguous in the canonical ordering.  Returns
    ``(gam_minus, omega, gam_plus)`` where ``gam_minus[i]`` maps group i
    to group i-1 (None for i = 0), ``omega[i]`` within group i, and
    ``gam_plus[i]`` group i to group i+1 (None for the last group).
    """
    mlast = spec.buffers[-1]
    block = _tail_block_size(spec)
    dense = chain.dense()
    gam_minus: list[np.ndarray | None] = [None]
    omega: list[np.ndarray] = []
    gam_plus: list[np.ndarray | None] = []
    for i in range(mlast + 1):
        rows = slice(i * block, (i + 1) * block)
        omega.append(dense[rows, rows])
        if i > 0:
            gam_minus.append(dense[rows, (i - 1) * block : i * block])
        if i < mlast:
            gam_plus.append(dense[rows, (i + 1) * block : (i + 2) * block])
    gam_plus.append(None)
    return gam_minus, omega, gam_plus


@dataclass(frozen=True)
class BlockStructureReport:
    """Outcome of the structural checks on the partitioned chain."""

    h: int
    last_buffer: int
    block_size: int
    interior_blocks_equal: bool
    down_blocks_upper_triangular: bool
    down_block_det: float
    down_block_det_lower_bound: float
    up_blocks_lower_triangular: bool
    up_block_singular: bool | None
    stay_blocks_invertible: bool


def verify_block_structure(spec: NetworkSpec, cap: int = DEFAULT_STATE_CAP) -> BlockStructureReport:
    """Check the algebraic structure of the last-component block partition.

    Verifies that (a) all interior groups share the same three blocks,
    (b) every down-block is upper triangular with determinant at least
    ((1-eps_h) * prod_{k<h} eps_k) ** block_size > 0, (c) for h > 2 the
    up-blocks are lower triangular and singular, with the all-empty
    diagonal entry exactly zero, and (d) I minus each stay-block is
    invertible.  Raises on the first violated property.
    """
    chain = build_emc(spec, cap=cap)
    gam_minus, omega, gam_plus = _blocks(spec, chain)
    mlast = spec.buffers[-1]
    block = _tail_block_size(spec)

    for i in range(2, mlast):
        for name, seq in (("down", gam_minus), ("stay", omega), ("up", gam_plus)):
            if not np.array_equal(seq[i], seq[1]):
                raise StructureViolationError(
                    f"interior {name}-block {i} differs from block 1"
                )

    det_bound = ((1.0 - spec.eps[-1]) * float(np.prod(spec.eps[:-1]))) ** block
    min_det = np.inf
    for i in range(1, mlast + 1):
        g = gam_minus[i]
        if np.any(np.tril(g, -1) != 0.0):
            raise StructureViolationError(f"down-block {i} is not upper triangular")
        det = float(np.prod(np.diag(g)))
        min_det = min(min_det, det)
        if det < det_bound * (1 - 1e-9):
            raise StructureViolationError(
                f"down-block {i} determinant {det:.3e} below bound {det_bound:.3e}"
            )

    up_singular: bool | None = None
    if spec.h > 2:
        up_singular = True
        for i in range(0, mlast):
            g = gam_plus[i]
            if np.any(np.triu(g, 1) != 0.0):
                raise StructureViolationError(f"up-block {i} is not lower triangular")
            if g[0, 0] != 0.0:
                raise StructureViolationError(
                    f"up-block {i} has a feasible all-empty diagonal transition"
                )
            if abs(float(np.linalg.det(g))) > 1e-12:
                raise StructureViolationError(f"up-block {i} is not singular")

    for i in range(0, mlast + 1):
        mat = np.eye(block) - omega[i]
        if abs(float(np.linalg.det(mat))) < 1e-300:
            raise StructureViolationError(f"I - stay-block {i} is singular")

    return BlockStructureReport(
        h=spec.h,
        last_buffer=mlast,
        block_size=block,
        interior_blocks_equal=True,
        down_blocks_upper_triangular=True,
        down_block_det=min_det,
        down_block_det_lower_bound=det_bound,
        up_blocks_lower_triangular=spec.h > 2,
        up_block_singular=up_singular,
        stay_blocks_invertible=True,
    )


def _h_matrices(spec: NetworkSpec, cap: int = DEFAULT_STATE_CAP):
    """Recursion relating the per-group stationary blocks to group 0.

    Works in the column convention (blocks transposed), so that the
    stationary sub-vectors satisfy pi_i = H_i @ pi_0.  Returns the list
    of H matrices plus the worst relation residual against the exact
    stationary solve.
    """
    chain = build_emc(spec, cap=cap)
    gm, om, gp = _blocks(spec, chain)
    mlast = spec.buffers[-1]
    block = _tail_block_size(spec)
    eye = np.eye(block)

    H = [eye]
    if mlast >= 1:
        H.append(np.linalg.solve(gm[1].T, eye - om[0].T))
    for i in range(2, mlast + 1):
        rhs = (eye - om[i - 1].T) @ H[i - 1] - gp[i - 2].T @ H[i - 2]
        H.append(np.linalg.solve(gm[i].T, rhs))

    pi = stationary(chain)
    pi0 = pi[:block]
    residual = 0.0
    for i in range(mlast + 1):
        pred = H[i] @ pi0
        residual = max(residual, float(np.max(np.abs(pred - pi[i * block : (i + 1) * block]))))
    return H, residual


def h_matrix_bound(spec: NetworkSpec, cap: int = DEFAULT_STATE_CAP) -> float:
    """Capacity upper bound from the group-relation matrices.

    Computes (1-eps_h) * (1 - 1/||sum_i H_i||_1).  Also verifies the
    relation pi_i = H_i pi_0 against the exact stationary solve; a
    residual above 1e-8 signals a structural problem.
    """
    H, residual = _h_matrices(spec, cap=cap)
    if residual > 1e-8:
        raise ConsistencyError(
            f"group-relation residual {residual:.3e} exceeds 1e-8"
        )
    total = np.sum(H, axis=0)
    norm1 = float(np.max(np.abs(total).sum(axis=0)))
    return (1.0 - spec.eps[-1]) * (1.0 - 1.0 / norm1)
