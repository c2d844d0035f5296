"""Sparse Gaussian Markov random field primitives.

Symmetric precision matrices are stored as canonical upper-triangle
triplets (SparsePrecision). Factorization records the fill-reducing
permutation inside the factor so that conditioning, log-densities and
sampling all work in the caller's index order.

Conventions used throughout:
  * factorize(Q) produces L with Q[p][:, p] = L @ L.T for permutation p;
    small matrices (dim <= DENSE_LIMIT) use a dense textbook Cholesky with
    the identity permutation, larger ones go through SuperLU in symmetric
    mode with a minimum-degree column ordering.
  * A pivot at or below 1e-300 raises NotPositiveDefinite; a pivot below
    1e-12 times the largest diagonal entry emits IllConditionedWarning.
    Joint imputation blocks mix pinning precision ~1e10 with O(1) entries,
    so the warning channel is load-bearing rather than cosmetic.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DimensionMismatch,
    EmptyMissingSet,
    NotPositiveDefinite,
    ZeroMatrix,
    GmrfImputeError,
)

DENSE_LIMIT = 32
HARD_PIVOT_FLOOR = 1e-300
PIVOT_WARN_RATIO = 1e-12
LOG_2PI = float(np.log(2.0 * np.pi))

POWER_MAX_ITER = 10_000
POWER_TOL = 1e-10


class IllConditionedWarning(UserWarning):
    """A Cholesky pivot is tiny relative to the diagonal scale."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class SparsePrecision:
    """Symmetric matrix held as canonical upper-triangle triplets.

    Only entries with row <= col are stored; the lower triangle is the
    mirror image. Canonical form means triplets sorted by (row, col),
    duplicate coordinates summed, and exact zeros dropped. Instances are
    immutable after construction.
    """

    __slots__ = ("dim", "rows", "cols", "vals", "__weakref__")

    def __init__(self, dim, rows, cols, vals):
        dim = int(dim)
        if dim < 1:
            raise DimensionMismatch(f"dimension must be >= 1, got {dim}")
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == vals.shape):
            raise DimensionMismatch("triplet arrays must share one length")
        if rows.size:
            if min(rows.min(), cols.min()) < 0 or max(rows.max(), cols.max()) >= dim:
                raise DimensionMismatch("triplet index out of range")
            lo = np.minimum(rows, cols)
            hi = np.maximum(rows, cols)
            order = np.lexsort((hi, lo))
            lo, hi, vals = lo[order], hi[order], vals[order]
            key = lo * dim + hi
            uniq_key, first = np.unique(key, return_index=True)
            vals = np.add.reduceat(vals, first)
            lo, hi = lo[first], hi[first]
            keep = vals != 0.0
            lo, hi, vals = lo[keep], hi[keep], vals[keep]
        else:
            lo, hi = rows, cols
        self.dim = dim
        self.rows = _readonly(lo)
        self.cols = _readonly(hi)
        self.vals = _readonly(vals)

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "SparsePrecision":
        idx = np.arange(dim)
        return cls(dim, idx, idx, np.full(dim, float(scale)))

    @classmethod
    def from_diagonal(cls, values) -> "SparsePrecision":
        values = np.asarray(values, dtype=np.float64)
        idx = np.arange(values.size)
        return cls(values.size, idx, idx, values)

    @classmethod
    def from_dense(cls, a) -> "SparsePrecision":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got {a.shape}")
        scale = np.max(np.abs(a)) if a.size else 0.0
        if scale and np.max(np.abs(a - a.T)) > 1e-8 * scale:
            raise DimensionMismatch("matrix is not symmetric")
        sym = 0.5 * (a + a.T)
        r, c = np.nonzero(np.triu(sym))
        return cls(a.shape[0], r, c, sym[r, c])

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.dim, self.dim))
        a[self.rows, self.cols] = self.vals
        a[self.cols, self.rows] = self.vals
        return a

    def to_coo(self) -> sp.coo_matrix:
        off = self.rows != self.cols
        r = np.concatenate([self.rows, self.cols[off]])
        c = np.concatenate([self.cols, self.rows[off]])
        v = np.concatenate([self.vals, self.vals[off]])
        return sp.coo_matrix((v, (r, c)), shape=(self.dim, self.dim))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"matvec expects length {self.dim}")
        out = np.zeros(self.dim)
        np.add.at(out, self.rows, self.vals * x[self.cols])
        off = self.rows != self.cols
        np.add.at(out, self.cols[off], self.vals[off] * x[self.rows[off]])
        return out

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.dim)
        on = self.rows == self.cols
        d[self.rows[on]] = self.vals[on]
        return d

    def scaled(self, factor: float) -> "SparsePrecision":
        return SparsePrecision(self.dim, self.rows, self.cols, self.vals * float(factor))

    def submatrix(self, idx) -> "SparsePrecision":
        """Restriction Q[idx][:, idx] with indices renumbered 0..len(idx)-1."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            raise DimensionMismatch("empty index set")
        pos = np.full(self.dim, -1, dtype=np.int64)
        pos[idx] = np.arange(idx.size)
        keep = (pos[self.rows] >= 0) & (pos[self.cols] >= 0)
        return SparsePrecision(idx.size, pos[self.rows[keep]], pos[self.cols[keep]],
                               self.vals[keep])

    def block(self, row_idx, col_idx) -> np.ndarray:
        """Dense rectangular block Q[row_idx][:, col_idx] of the full matrix."""
        row_idx = np.asarray(row_idx, dtype=np.int64)
        col_idx = np.asarray(col_idx, dtype=np.int64)
        rpos = np.full(self.dim, -1, dtype=np.int64)
        cpos = np.full(self.dim, -1, dtype=np.int64)
        rpos[row_idx] = np.arange(row_idx.size)
        cpos[col_idx] = np.arange(col_idx.size)
        out = np.zeros((row_idx.size, col_idx.size))
        for r, c in ((self.rows, self.cols), (self.cols, self.rows)):
            keep = (rpos[r] >= 0) & (cpos[c] >= 0)
            out[rpos[r[keep]], cpos[c[keep]]] = self.vals[keep]
        return out

    def nnz(self) -> int:
        return int(self.vals.size)


class CholeskyFactor:
    """Lower-triangular factor of a symmetrically permuted SPD matrix.

    Q[p][:, p] = L @ L.T where p is the recorded fill-reducing permutation.
    All solves take and return vectors in the caller's original order, so
    the permutation stays an implementation detail.
    """

    __slots__ = ("dim", "log_det", "perm", "_lower", "_lower_t", "_dense")

    def __init__(self, dim, log_det, perm, lower, dense):
        self.dim = dim
        self.log_det = float(log_det)
        self.perm = _readonly(np.asarray(perm, dtype=np.int64))
        self._dense = dense
        if dense:
            self._lower = lower
            self._lower_t = lower.T
        else:
            self._lower = sp.csr_matrix(lower)
            self._lower_t = sp.csr_matrix(lower.T)

    def lower_triangular(self) -> sp.csc_matrix:
        """The factor L as a sparse matrix (permuted order)."""
        return sp.csc_matrix(self._lower)

    def _solve_l(self, b_perm: np.ndarray) -> np.ndarray:
        if self._dense:
            import scipy.linalg as sla
            return sla.solve_triangular(self._lower, b_perm, lower=True)
        return spla.spsolve_triangular(self._lower, b_perm, lower=True)

    def _solve_lt(self, b_perm: np.ndarray) -> np.ndarray:
        if self._dense:
            import scipy.linalg as sla
            return sla.solve_triangular(self._lower_t, b_perm, lower=False)
        return spla.spsolve_triangular(self._lower_t, b_perm, lower=False)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve Q x = b."""
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (self.dim,):
            raise DimensionMismatch(f"solve expects length {self.dim}")
        w = self._solve_lt(self._solve_l(b[self.perm]))
        x = np.empty(self.dim)
        x[self.perm] = w
        return x

    def solve_lt(self, u: np.ndarray) -> np.ndarray:
        """Apply the sampling transform: returns x with x[p] = L^{-T} u.

        With u standard normal, x has covariance Q^{-1}.
        """
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.dim,):
            raise DimensionMismatch(f"solve_lt expects length {self.dim}")
        x = np.empty(self.dim)
        x[self.perm] = self._solve_lt(u)
        return x


def _factorize_dense(a: np.ndarray) -> CholeskyFactor:
    n = a.shape[0]
    max_diag = float(np.max(np.diag(a)))
    low = np.zeros((n, n))
    log_det = 0.0
    for j in range(n):
        pivot = a[j, j] - low[j, :j] @ low[j, :j]
        if pivot <= HARD_PIVOT_FLOOR:
            raise NotPositiveDefinite(f"pivot {pivot:.3e} at index {j}")
        if pivot < PIVOT_WARN_RATIO * max_diag:
            warnings.warn(
                f"pivot {pivot:.3e} at index {j} is below {PIVOT_WARN_RATIO:g} of "
                f"the diagonal scale {max_diag:.3e}", IllConditionedWarning,
                stacklevel=3)
        low[j, j] = np.sqrt(pivot)
        log_det += np.log(pivot)
        if j + 1 < n:
            low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return CholeskyFactor(n, log_det, np.arange(n), low, dense=True)


def _factorize_sparse(q: "SparsePrecision") -> CholeskyFactor:
    a = q.to_coo().tocsc()
    try:
        lu = spla.splu(a, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True, "Equil": False})
    except RuntimeError as err:
        raise NotPositiveDefinite(str(err)) from None
    if not np.array_equal(lu.perm_r, lu.perm_c):
        # SuperLU abandoned symmetric pivoting; fall back to the dense path.
        return _factorize_dense_permuted(q)
    pivots = lu.U.diagonal()
    max_diag = float(np.max(q.diagonal()))
    if np.any(pivots <= HARD_PIVOT_FLOOR):
        j = int(np.argmax(pivots <= HARD_PIVOT_FLOOR))
        raise NotPositiveDefinite(f"pivot {pivots[j]:.3e} at permuted index {j}")
    if np.any(pivots < PIVOT_WARN_RATIO * max_diag):
        j = int(np.argmin(pivots))
        warnings.warn(
            f"pivot {pivots[j]:.3e} is below {PIVOT_WARN_RATIO:g} of the diagonal "
            f"scale {max_diag:.3e}", IllConditionedWarning, stacklevel=3)
    low = lu.L @ sp.diags(np.sqrt(pivots))
    log_det = float(np.sum(np.log(pivots)))
    # SuperLU's contract is A[pinv][:, pinv] = L U; ours wants Q[p][:, p].
    perm = np.empty(q.dim, dtype=np.int64)
    perm[lu.perm_c] = np.arange(q.dim)
    return CholeskyFactor(q.dim, log_det, perm, low, dense=False)


def _factorize_dense_permuted(q: "SparsePrecision") -> CholeskyFactor:
    return _factorize_dense(q.to_dense())


def factorize(q: SparsePrecision) -> CholeskyFactor:
    """Cholesky-factorize a sparse symmetric positive definite matrix."""
    if not isinstance(q, SparsePrecision):
        raise DimensionMismatch("factorize expects a SparsePrecision")
    if q.dim <= DENSE_LIMIT:
        return _factorize_dense(q.to_dense())
    return _factorize_sparse(q)


class GaussianBlock:
    """A (mean, precision) pair describing a joint or conditional Gaussian."""

    __slots__ = ("mean", "precision")

    def __init__(self, mean, precision: SparsePrecision):
        mean = np.asarray(mean, dtype=np.float64).ravel()
        if mean.size != precision.dim:
            raise DimensionMismatch(
                f"mean length {mean.size} != precision dim {precision.dim}")
        self.mean = _readonly(mean.copy())
        self.precision = precision

    @property
    def dim(self) -> int:
        return self.precision.dim


class IndexPartition:
    """A split of indices 0..n-1 into a missing set and an observed set."""

    __slots__ = ("n", "mis", "obs")

    def __init__(self, n: int, mis, obs):
        mis = np.asarray(sorted(mis), dtype=np.int64)
        obs = np.asarray(sorted(obs), dtype=np.int64)
        combined = np.concatenate([mis, obs])
        if combined.size != n or not np.array_equal(np.sort(combined), np.arange(n)):
            raise DimensionMismatch(
                "mis and obs must partition 0..n-1 without overlap")
        self.n = int(n)
        self.mis = _readonly(mis)
        self.obs = _readonly(obs)

    @classmethod
    def from_mask(cls, missing_mask) -> "IndexPartition":
        mask = np.asarray(missing_mask, dtype=bool)
        idx = np.arange(mask.size)
        return cls(mask.size, idx[mask], idx[~mask])


def condition(mu, q: SparsePrecision, part: IndexPartition, z_obs) -> GaussianBlock:
    """Conditional distribution of the missing block given the observed one.

    mean = mu_mis - Qmm^{-1} Qmo (z_obs - mu_obs), precision = Qmm. The
    inverse is applied through a factorization, never formed explicitly.
    """
    mu = np.asarray(mu, dtype=np.float64)
    z_obs = np.asarray(z_obs, dtype=np.float64)
    if mu.shape != (q.dim,) or part.n != q.dim:
        raise DimensionMismatch("mean/partition size must match precision dim")
    if z_obs.shape != (part.obs.size,):
        raise DimensionMismatch("z_obs length must match the observed set")
    if part.mis.size == 0:
        raise EmptyMissingSet("no missing indices to condition")
    if part.obs.size == 0:
        return GaussianBlock(mu, q)
    q_mm = q.submatrix(part.mis)
    cross = q.block(part.mis, part.obs)
    resid = z_obs - mu[part.obs]
    mean = mu[part.mis] - factorize(q_mm).solve(cross @ resid)
    return GaussianBlock(mean, q_mm)


def gmrf_logdensity(x, mu, q: SparsePrecision) -> float:
    """Log-density of x under Normal(mu, precision q)."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if x.shape != (q.dim,) or mu.shape != (q.dim,):
        raise DimensionMismatch("x and mu must match precision dim")
    r = x - mu
    quad = float(r @ q.matvec(r))
    return -0.5 * q.dim * LOG_2PI + 0.5 * factorize(q).log_det - 0.5 * quad


def marginal_obs_logdensity(mu, q: SparsePrecision, part: IndexPartition,
                            z_obs) -> float:
    """Log marginal density of the observed sub-vector, missing integrated out.

    Uses the determinant identity det(Schur) = det(Q) / det(Qmm) and
    evaluates the joint quadratic form at the conditional mean, which
    equals the marginal quadratic form of the observed block.
    """
    mu = np.asarray(mu, dtype=np.float64)
    z_obs = np.asarray(z_obs, dtype=np.float64)
    if part.n != q.dim or mu.shape != (q.dim,):
        raise DimensionMismatch("mean/partition size must match precision dim")
    if part.mis.size == 0:
        return gmrf_logdensity(z_obs, mu, q)
    if z_obs.shape != (part.obs.size,):
        raise DimensionMismatch("z_obs length must match the observed set")
    block = condition(mu, q, part, z_obs)
    z_full = np.empty(q.dim)
    z_full[part.mis] = block.mean
    z_full[part.obs] = z_obs
    r = z_full - mu
    quad = float(r @ q.matvec(r))
    log_det_mm = factorize(q.submatrix(part.mis)).log_det
    log_det_full = factorize(q).log_det
    return (0.5 * (log_det_full - log_det_mm)
            - 0.5 * part.obs.size * LOG_2PI - 0.5 * quad)


def sample(block: GaussianBlock, rng: np.random.Generator) -> np.ndarray:
    """One draw from the block's Gaussian; deterministic under a seeded rng."""
    factor = factorize(block.precision)
    u = rng.standard_normal(block.dim)
    return block.mean + factor.solve_lt(u)


def scale_adjacency(w: SparsePrecision) -> SparsePrecision:
    """Divide a 0/1 adjacency matrix by its largest eigenvalue.

    Power iteration with an all-ones start vector; the scaled matrix has
    spectral radius 1, so I - rho * W_scaled is positive definite for any
    rho in (0, 1).
    """
    if w.nnz() == 0:
        raise ZeroMatrix("adjacency has no nonzero entries")
    if np.any(w.rows == w.cols):
        raise DimensionMismatch("adjacency must have a zero diagonal")
    if np.any(w.vals < 0):
        raise DimensionMismatch("adjacency entries must be nonnegative")
    x = np.full(w.dim, 1.0 / np.sqrt(w.dim))
    lam = 0.0
    for _ in range(POWER_MAX_ITER):
        y = w.matvec(x)
        lam_new = float(np.linalg.norm(y))
        if lam_new == 0.0:
            raise ZeroMatrix("adjacency annihilated the start vector")
        x = y / lam_new
        if abs(lam_new - lam) <= POWER_TOL * lam_new:
            lam = lam_new
            break
        lam = lam_new
    else:
        raise GmrfImputeError("power iteration did not converge")
    return SparsePrecision(w.dim, w.rows, w.cols, w.vals / lam)
