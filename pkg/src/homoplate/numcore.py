"""Shared numerical substrate: quadrature tables, Voigt helpers, sparse
symmetric assembly and the linear-solver facade used by the cell and plate
solvers."""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from homoplate.errors import NumericalFailure

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10

# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray  # (k, dim) reference coordinates
    weights: np.ndarray  # (k,)

    def __len__(self):
        return len(self.weights)


def gauss_legendre_01(npts):
    """Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def hex_rule(npts=3):
    """Tensor Gauss rule on the unit cube [0,1]^3; 27 points by default.

    Point ordering is lexicographic with the first coordinate fastest.
    """
    x, w = gauss_legendre_01(npts)
    z, y, xx = np.meshgrid(x, x, x, indexing="ij")
    wz, wy, wx = np.meshgrid(w, w, w, indexing="ij")
    pts = np.column_stack([xx.ravel(), y.ravel(), z.ravel()])
    return QuadRule(pts, (wx * wy * wz).ravel())


# Symmetric 12-point rule of degree 6 on the reference triangle
# (0,0), (1,0), (0,1).  Orbit parameters were refined to double precision
# from the moment equations; weights are given relative to the area.
_T12_A1 = 0.24928674517091042129
_T12_A2 = 0.063089014491502228340
_T12_B = 0.053145049844816947353
_T12_C = 0.31035245103378440542
_T12_W1 = 0.11678627572637936603
_T12_W2 = 0.050844906370206816921
_T12_W3 = 0.082851075618373575194


def _triangle12():
    bary, w = [], []
    for a, wa in ((_T12_A1, _T12_W1), (_T12_A2, _T12_W2)):
        for p in ((a, a, 1 - 2 * a), (a, 1 - 2 * a, a), (1 - 2 * a, a, a)):
            bary.append(p)
            w.append(wa)
    b, c = _T12_B, _T12_C
    d = 1.0 - b - c
    for p in ((b, c, d), (b, d, c), (c, b, d), (c, d, b), (d, b, c), (d, c, b)):
        bary.append(p)
        w.append(_T12_W3)
    bary = np.array(bary)
    # reference coords (xi, eta) = (lambda_2, lambda_3)
    return QuadRule(bary[:, 1:].copy(), 0.5 * np.array(w))


TRIANGLE12 = _triangle12()


def triangle_rule(degree):
    """Collapsed Gauss rule on the reference triangle, exact to ``degree``.

    Only used as an independent high-order reference; the plate energy uses
    :data:`TRIANGLE12`.
    """
    n = degree // 2 + 2
    u, wu = gauss_legendre_01(n)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    ww = np.outer(wu, wu)
    xi = uu
    eta = vv * (1.0 - uu)
    w = ww * (1.0 - uu)
    return QuadRule(np.column_stack([xi.ravel(), eta.ravel()]), w.ravel())


def triangle_monomial_integral(i, j):
    """Exact integral of xi^i eta^j over the reference triangle."""
    from math import factorial

    return factorial(i) * factorial(j) / factorial(i + j + 2)


# ---------------------------------------------------------------------------
# Voigt notation for symmetric 2x2 matrices: (A11, A22, A12 + A21)
# ---------------------------------------------------------------------------


def sym_to_voigt(A):
    A = np.asarray(A, dtype=float)
    return np.stack([A[..., 0, 0], A[..., 1, 1], A[..., 0, 1] + A[..., 1, 0]], axis=-1)


def voigt_to_sym(v):
    v = np.asarray(v, dtype=float)
    out = np.empty(v.shape[:-1] + (2, 2))
    out[..., 0, 0] = v[..., 0]
    out[..., 1, 1] = v[..., 1]
    out[..., 0, 1] = out[..., 1, 0] = 0.5 * v[..., 2]
    return out


# ---------------------------------------------------------------------------
# Sparse symmetric storage
# ---------------------------------------------------------------------------


class SparseSym:
    """Symmetric sparse matrix assembled from COO triplets.

    Duplicates are summed by scipy in a fixed order, so the result does not
    depend on how the caller chunked its triplets as long as the triplet
    sequence itself is deterministic.
    """

    def __init__(self, matrix, check=True):
        self.matrix = sp.csc_matrix(matrix)
        self.matrix.sum_duplicates()
        self.matrix.sort_indices()
        if check:
            asym = abs(self.matrix - self.matrix.T)
            scale = max(abs(self.matrix).max(), 1.0) if self.matrix.nnz else 1.0
            if asym.nnz and asym.max() > 1e-12 * scale:
                raise ValueError("matrix is not symmetric")

    @classmethod
    def from_triplets(cls, rows, cols, vals, n, check=True):
        m = sp.coo_matrix((np.ravel(vals), (np.ravel(rows), np.ravel(cols))), shape=(n, n))
        return cls(m.tocsc(), check=check)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def n(self):
        return self.matrix.shape[0]

    def __matmul__(self, x):
        return self.matrix @ x


def _as_csc(mat):
    if isinstance(mat, SparseSym):
        return mat.matrix
    if sp.issparse(mat):
        return sp.csc_matrix(mat)
    return sp.csc_matrix(np.asarray(mat, dtype=float))


def relative_residual(A, x, b):
    """Normwise backward error |b - A x| / (|A| |x| + |b|) in the max norm.

    This is the residual measure a backward stable solver can drive to
    machine precision regardless of the conditioning of ``A``.
    """
    r = b - A @ x
    if sp.issparse(A):
        na = float(abs(A).sum(axis=1).max()) if A.shape[0] else 0.0
    else:
        na = float(np.abs(np.asarray(A)).sum(axis=1).max()) if np.size(A) else 0.0
    den = na * np.abs(x).max(initial=0.0) + np.abs(b).max(initial=0.0)
    nr = float(np.abs(r).max(initial=0.0))
    if den == 0.0:
        return nr
    return nr / den


def _max_rel_residual(A, X, B):
    X2 = X.reshape(X.shape[0], -1)
    B2 = B.reshape(B.shape[0], -1)
    return max(relative_residual(A, X2[:, k], B2[:, k]) for k in range(B2.shape[1]))


def _refine(A, solve, X, B, tol, steps=3):
    """A few steps of iterative refinement; returns (X, residual)."""
    res = _max_rel_residual(A, X, B)
    for _ in range(steps):
        if res <= tol:
            break
        R = B - A @ X
        X = X + solve(R)
        res = _max_rel_residual(A, X, B)
    return X, res


# ---------------------------------------------------------------------------
# Solver facade
# ---------------------------------------------------------------------------


@dataclass
class Inertia:
    positive: int
    negative: int
    zero: int

    def as_tuple(self):
        return (self.positive, self.negative, self.zero)


def _equilibrate(A, sweeps=3):
    """Symmetric Ruiz scaling: returns (D A D, d) with rows and columns of
    the scaled matrix having max-norm close to one.  Inertia is unchanged."""
    n = A.shape[0]
    d = np.ones(n)
    B = A.tocsc(copy=True)
    # scale the stored values in place: the sparsity pattern, explicit zeros
    # included, is what the fill-reducing ordering sees and must not change
    rows = B.indices
    cols = np.repeat(np.arange(n), np.diff(B.indptr))
    for _ in range(sweeps):
        r = np.zeros(n)
        np.maximum.at(r, rows, np.abs(B.data))
        r = np.sqrt(r)
        r[r == 0.0] = 1.0
        B.data /= r[rows] * r[cols]
        d /= r
    return B, d


def _static_ldl(A, perm=None, equilibrate=True):
    """LDL^T-equivalent factorization: SuperLU in symmetric mode with a
    symmetric ordering and diagonal pivots only.

    ``perm`` is a fixed symmetric ordering; None lets SuperLU choose a
    minimum degree ordering on A + A^T.  The matrix is first scaled
    symmetrically so that pivots of differently scaled blocks are
    comparable.  Returns ``(solve, inertia)`` or ``None`` if SuperLU had to
    leave the diagonal (a zero pivot was met), in which case the inertia is
    not recoverable from the factors.
    """
    n = A.shape[0]
    if equilibrate:
        A, dscale = _equilibrate(A)
    else:
        dscale = np.ones(n)
    if perm is not None:
        perm = np.asarray(perm)
        A = A[perm][:, perm].tocsc()
    try:
        lu = spla.splu(
            A,
            permc_spec="NATURAL" if perm is not None else "MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )
    except RuntimeError:
        return None
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return None
    d = lu.U.diagonal()
    if not np.all(np.isfinite(d)):
        return None
    scale = max(np.abs(d).max(), 1.0)
    tiny = np.abs(d) <= 1e-14 * scale
    inertia = Inertia(int(np.sum((d > 0) & ~tiny)), int(np.sum((d < 0) & ~tiny)), int(np.sum(tiny)))
    if perm is None:
        def solve(B):
            Bs = B * (dscale if B.ndim == 1 else dscale[:, None])
            X = lu.solve(np.ascontiguousarray(Bs))
            return X * (dscale if X.ndim == 1 else dscale[:, None])
        return solve, inertia
    inv = np.empty_like(perm)
    inv[perm] = np.arange(n)

    def solve(B):
        Bs = B * (dscale if B.ndim == 1 else dscale[:, None])
        X = lu.solve(np.ascontiguousarray(Bs[perm]))[inv]
        return X * (dscale if X.ndim == 1 else dscale[:, None])

    return solve, inertia


def factor_spd(mat):
    """Factor an SPD matrix once; returns a solve callable.

    Raises :class:`NumericalFailure` if a pivot is not positive.
    """
    A = _as_csc(mat)
    out = _static_ldl(A)
    if out is None:
        raise NumericalFailure("zero pivot in SPD factorization")
    solve, inertia = out
    if inertia.negative or inertia.zero:
        raise NumericalFailure("matrix is not positive definite", inertia=inertia.as_tuple())
    return solve


def _lu_solver(A):
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise NumericalFailure(f"factorization failed: {exc}") from exc
    return lu.solve


def solve_sym_indefinite(mat, rhs, ordering=None, need_inertia=True, tol=RESIDUAL_TOL):
    """Solve a symmetric (possibly indefinite) system.

    Returns ``(x, inertia)``.  When ``need_inertia`` is set the matrix is
    factored as L D L^T without off-diagonal pivoting along ``ordering``
    (a symmetric permutation; defaults to SuperLU's minimum degree on
    A + A^T) and the pivot signs give the inertia.  If that factorization
    breaks down a pivoting LU is used for the solution; the inertia is then
    taken from a dense Bunch-Kaufman factorization for small systems and is
    ``None`` otherwise.

    Raises :class:`NumericalFailure` if the system is singular or the
    relative residual exceeds ``tol`` after iterative refinement.
    """
    A = _as_csc(mat)
    b = np.asarray(rhs, dtype=float)
    n = A.shape[0]
    inertia = None
    solve = None
    if need_inertia:
        out = _static_ldl(A, ordering)
        if out is not None:
            solve, inertia = out
        else:
            log.debug("static LDL broke down, falling back to pivoting LU")
    if solve is None:
        solve = _lu_solver(A)
        if need_inertia and n <= 3000:
            _, D, _ = scipy.linalg.ldl(A.toarray())
            ev = np.linalg.eigvalsh(D)
            scale = max(np.abs(ev).max(), 1.0)
            tiny = np.abs(ev) <= 1e-14 * scale
            inertia = Inertia(int(np.sum((ev > 0) & ~tiny)), int(np.sum((ev < 0) & ~tiny)), int(np.sum(tiny)))
    if inertia is not None and inertia.zero:
        raise NumericalFailure("singular matrix", inertia=inertia.as_tuple())
    x = solve(b)
    if not np.all(np.isfinite(x)):
        raise NumericalFailure("non-finite solution", inertia=inertia and inertia.as_tuple())
    x, res = _refine(A, solve, x, b, tol)
    if res > tol:
        raise NumericalFailure(
            f"relative residual {res:.3e} exceeds {tol:.1e}", residual=res,
            inertia=inertia and inertia.as_tuple())
    return x, inertia


def solve_spd(mat, rhs, method="direct", tol=RESIDUAL_TOL, projector=None):
    """Solve an SPD system with a relative-residual guarantee.

    ``method="direct"`` uses an L D L^T factorization and raises
    :class:`NumericalFailure` on a non-positive pivot.  ``method="cg"`` runs
    conjugate gradients; ``projector`` (a callable) restricts iterates to a
    subspace on which the matrix is definite, e.g. the complement of a
    known kernel.
    """
    A = _as_csc(mat)
    b = np.asarray(rhs, dtype=float)
    if method == "direct":
        solve = factor_spd(A)
        x = solve(b)
        x, res = _refine(A, solve, x, b, tol)
    elif method == "cg":
        P = projector if projector is not None else (lambda v: v)
        diag = A.diagonal()
        dinv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
        M = spla.LinearOperator(A.shape, matvec=lambda v: P(dinv * P(v)))
        Aop = spla.LinearOperator(A.shape, matvec=lambda v: P(A @ P(v)))
        cols = b.reshape(b.shape[0], -1)
        xs = []
        for k in range(cols.shape[1]):
            bk = P(cols[:, k])
            xk, info = spla.cg(Aop, bk, rtol=0.1 * tol, atol=0.0, maxiter=20 * A.shape[0], M=M)
            if info != 0:
                raise NumericalFailure("conjugate gradients did not converge", info=info,
                                       residual=relative_residual(A, P(xk), bk))
            xs.append(P(xk))
        x = np.column_stack(xs).reshape(b.shape)
        res = _max_rel_residual(A, x, P(b) if b.ndim == 1 else np.column_stack(
            [P(c) for c in b.reshape(b.shape[0], -1).T]))
    else:
        raise ValueError(f"unknown method {method!r}")
    if res > tol:
        raise NumericalFailure(f"relative residual {res:.3e} exceeds {tol:.1e}", residual=res)
    return x


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


def make_rng(seed):
    """Counter-based generator; identical streams for identical seeds."""
    return np.random.Generator(np.random.Philox(int(seed)))
