"""Periodic corrector problems on the unit cell Y = (0,1)^2 x (-1/2, 1/2).

The corrector is sought in the space of continuous tri-affine functions on
a uniform hexahedral mesh that are periodic in (y1, y2), have zero mean,
plus an affine in-plane mode (B y', 0).  All integrals use the 27-point
tensor Gauss rule on every cell.

Materials are homogeneous in y3.  When the material distribution is also
invariant under a lattice translation (stripes, laminates, homogeneous
phases), the discrete solution inherits that invariance, and the solver can
work on translation orbits of nodes instead of individual nodes.  The
reduced system is the restriction of the full one to invariant functions,
so it yields the same discrete corrector and the same Q_h (up to round-off);
``reduce=False`` forces the full periodic system.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from homoplate import numcore
from homoplate.errors import InvalidParameter, NumericalFailure

log = logging.getLogger(__name__)

# Symmetric 2x2 basis used for the B-mode and for the Voigt polarisation.
SYM_BASIS = (
    np.array([[1.0, 0.0], [0.0, 0.0]]),
    np.array([[0.0, 0.0], [0.0, 1.0]]),
    np.array([[0.0, 1.0], [1.0, 0.0]]),
)

# Supported translation invariances (in lattice steps).
SHIFTS = ((0, 1), (1, 0), (1, 1), (1, -1))


# ---------------------------------------------------------------------------
# Mesh and material
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HexMesh:
    """Uniform mesh of Y with ``n`` cells per axis."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InvalidParameter(f"need a positive number of subdivisions, got {self.n!r}")

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def num_nodes(self):
        return (self.n + 1) ** 3

    @property
    def num_cells(self):
        return self.n ** 3

    @property
    def nodes(self):
        """Grid coordinates, index i + (n+1) * (j + (n+1) * k)."""
        t = np.linspace(0.0, 1.0, self.n + 1)
        k, j, i = np.meshgrid(np.arange(self.n + 1), np.arange(self.n + 1),
                              np.arange(self.n + 1), indexing="ij")
        return np.column_stack([t[i.ravel()], t[j.ravel()], t[k.ravel()] - 0.5])

    @property
    def cells(self):
        """Corner node indices (n^3, 8), local corner a = a1 + 2 a2 + 4 a3."""
        n = self.n
        k, j, i = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        i, j, k = i.ravel(), j.ravel(), k.ravel()
        out = np.empty((n ** 3, 8), dtype=np.int64)
        for a in range(8):
            a1, a2, a3 = a & 1, (a >> 1) & 1, (a >> 2) & 1
            out[:, a] = (i + a1) + (n + 1) * ((j + a2) + (n + 1) * (k + a3))
        return out


def build_hex_mesh(n):
    return HexMesh(n)


@dataclass(frozen=True)
class MicroMaterial:
    """Two-phase isotropic material on the cell.

    ``v(x, y1, y2)`` is the hard-phase distribution in [0, 1];
    lambda(y) = (r + (1 - r) v) * lambda_bar and likewise for mu.
    ``shift`` declares a lattice translation the distribution is invariant
    under (see :data:`SHIFTS`), or None.  ``key`` identifies the
    distribution for caching; ``key_of_x`` maps a macro point to the part
    of x the distribution depends on (None for constant microstructures).
    ``tensor``, if given, overrides the isotropic law with a general
    elasticity tensor field ``tensor(x, y1, y2) -> (..., 3, 3, 3, 3)``.
    """

    v: Callable
    lambda_bar: float = 5.0 / 3.0
    mu_bar: float = 5.0 / 2.0
    r: float = 1.0 / 50.0
    shift: Optional[tuple] = None
    key: str = "custom"
    key_of_x: Optional[Callable] = None
    tensor: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if not 0.0 < self.r <= 1.0:
            raise InvalidParameter(f"contrast ratio must lie in (0, 1], got {self.r}")
        if self.shift is not None and tuple(self.shift) not in SHIFTS:
            raise InvalidParameter(f"unsupported invariance {self.shift!r}")

    def scale(self, x, y1, y2):
        v = np.asarray(self.v(x, y1, y2), dtype=float)
        return self.r + (1.0 - self.r) * v

    def lame(self, x, y1, y2):
        s = self.scale(x, y1, y2)
        return s * self.lambda_bar, s * self.mu_bar

    def cache_key(self, x):
        xk = None if self.key_of_x is None else self.key_of_x(x)
        return (self.key, self.lambda_bar, self.mu_bar, self.r, xk)


def homogeneous_material(lambda_bar=5.0 / 3.0, mu_bar=5.0 / 2.0, value=1.0):
    return MicroMaterial(
        v=lambda x, y1, y2: np.full(np.broadcast(y1, y2).shape, float(value)),
        lambda_bar=lambda_bar, mu_bar=mu_bar, shift=(0, 1), key=f"homogeneous:{value!r}")


def closed_form_homogeneous(lam, mu, A):
    """Q^{2,gamma}(A) for a homogeneous isotropic phase.

    Pointwise minimisation of C(y3 A + b (x) e3) : (y3 A + b (x) e3) over b
    gives plane-stress bending, integrated against y3^2 over (-1/2, 1/2).
    """
    A = np.asarray(A, dtype=float)
    tr = np.trace(A)
    return (2.0 * mu * np.sum(A * A) + 2.0 * mu * lam / (2.0 * mu + lam) * tr ** 2) / 12.0


# ---------------------------------------------------------------------------
# Degrees of freedom
# ---------------------------------------------------------------------------


@dataclass
class CellDofMap:
    """Periodic identification of grid nodes, optionally modulo a lattice
    translation.

    Unknown vector layout: 3 components per representative node (node
    major), then the three B-mode scalars (B11, B22, B12).
    """

    n: int
    shift: Optional[tuple]
    num_classes: int
    multiplicity: int
    rep_cells: np.ndarray  # (m, 2) in-plane indices (i, j) of representative columns
    class_mass: np.ndarray  # integral of the nodal basis over each class

    @property
    def representative_nodes(self):
        return self.num_classes

    @property
    def num_free(self):
        return 3 * self.num_classes

    @property
    def b_dofs(self):
        return np.arange(self.num_free, self.num_free + 3)

    @property
    def size(self):
        return self.num_free + 3

    def node_class(self, i, j, k):
        n = self.n
        i = np.asarray(i)
        j = np.asarray(j)
        k = np.asarray(k)
        if self.shift is None:
            return k * (n * n) + (j % n) * n + (i % n)
        s = tuple(self.shift)
        if s == (0, 1):
            return k * n + (i % n)
        if s == (1, 0):
            return k * n + (j % n)
        if s == (1, 1):
            return k * n + ((i - j) % n)
        return k * n + ((i + j) % n)

    def expand(self, phi):
        """Nodal values on the full (n+1)^3 grid from class values."""
        n = self.n
        k, j, i = np.meshgrid(np.arange(n + 1), np.arange(n + 1), np.arange(n + 1), indexing="ij")
        cls = self.node_class(i.ravel(), j.ravel(), k.ravel())
        return np.asarray(phi)[cls]


def build_dof_map(mesh, shift=None):
    n = mesh.n
    if shift is None:
        num_classes = n * n * (n + 1)
        jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        rep = np.column_stack([ii.ravel(), jj.ravel()])
        mult = 1
    else:
        shift = tuple(shift)
        if shift not in SHIFTS:
            raise InvalidParameter(f"unsupported invariance {shift!r}")
        num_classes = n * (n + 1)
        idx = np.arange(n)
        rep = np.column_stack([np.zeros(n, int), idx]) if shift == (1, 0) else \
            np.column_stack([idx, np.zeros(n, int)])
        mult = n
    h = 1.0 / n
    layer = np.full(n + 1, h ** 3)
    layer[[0, -1]] *= 0.5
    per_layer = num_classes // (n + 1)
    mass = mult * np.repeat(layer, per_layer)
    return CellDofMap(n, shift, num_classes, mult, rep, mass)


# ---------------------------------------------------------------------------
# Reference element
# ---------------------------------------------------------------------------


def _q1_gradients(points):
    """Gradients of the 8 tri-affine shape functions on [0,1]^3 at points."""
    out = np.empty((len(points), 8, 3))
    for a in range(8):
        bits = (a & 1, (a >> 1) & 1, (a >> 2) & 1)
        f = [p if b else 1.0 - p for p, b in zip(points.T, bits)]
        df = [1.0 if b else -1.0 for b in bits]
        out[:, a, 0] = df[0] * f[1] * f[2]
        out[:, a, 1] = f[0] * df[1] * f[2]
        out[:, a, 2] = f[0] * f[1] * df[2]
    return out


def _q1_values(points):
    out = np.empty((len(points), 8))
    for a in range(8):
        bits = (a & 1, (a >> 1) & 1, (a >> 2) & 1)
        out[:, a] = np.prod([p if b else 1.0 - p for p, b in zip(points.T, bits)], axis=0)
    return out


def _iota(A):
    F = np.zeros(A.shape[:-2] + (3, 3))
    F[..., :2, :2] = A
    return F


def _iso_stress(lam, mu, F):
    """C F for the isotropic law; lam, mu broadcast against F[..., 0, 0]."""
    tr = np.trace(F, axis1=-2, axis2=-1)
    sym = 0.5 * (F + np.swapaxes(F, -1, -2))
    return 2.0 * mu[..., None, None] * sym + (lam * tr)[..., None, None] * np.eye(3)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


@dataclass
class CellSystem:
    """Discrete Euler-Lagrange system of the corrector problem.

    ``matrix`` is the symmetric positive semidefinite stiffness matrix in
    the (phi, B) unknowns; its kernel consists of the constant
    translations of phi, which the zero-mean condition removes.
    """

    mesh: HexMesh
    dofmap: CellDofMap
    material: MicroMaterial
    x: tuple
    gamma: float
    matrix: numcore.SparseSym
    rhs_basis: np.ndarray  # (size, 3), right-hand sides for SYM_BASIS
    lam: np.ndarray  # (m, 27) Lame fields at quadrature points of representative columns
    mu: np.ndarray
    _solve: Optional[Callable] = field(default=None, repr=False)

    def rhs(self, A):
        A = np.asarray(A, dtype=float)
        c = np.array([A[0, 0], A[1, 1], 0.5 * (A[0, 1] + A[1, 0])])
        return self.rhs_basis @ c


class _Reference:
    """Per-(n, gamma) reference quantities on one cell."""

    def __init__(self, n, gamma):
        self.rule = numcore.hex_rule(3)
        self.h = 1.0 / n
        pts = self.rule.points
        grads = _q1_gradients(pts) / self.h
        grads[:, :, 2] /= gamma
        self.dN = grads  # (27, 8, 3) gamma-scaled physical gradients
        self.w = self.rule.weights * self.h ** 3  # physical weights
        self.pts = pts
        # local stiffness pieces for mu and lambda at each quadrature point:
        # K[(a,i),(b,j)] = mu (d_ij dNa.dNb + dNa_j dNb_i) + lam dNa_i dNb_j
        d = self.dN
        eye = np.eye(3)
        dot = np.einsum("qad,qbd->qab", d, d)
        Kmu = (np.einsum("qab,ij->qaibj", dot, eye)
               + np.einsum("qaj,qbi->qaibj", d, d))
        Klam = np.einsum("qai,qbj->qaibj", d, d)
        self.Kmu = (self.w[:, None, None, None, None] * Kmu).reshape(27, 24 * 24)
        self.Klam = (self.w[:, None, None, None, None] * Klam).reshape(27, 24 * 24)
        self.corner_bits = np.array([(a & 1, (a >> 1) & 1, (a >> 2) & 1) for a in range(8)])


def _material_at_columns(material, x, dofmap, ref):
    """Lame fields at the 27 quadrature points of each representative column."""
    n, h = dofmap.n, ref.h
    i, j = dofmap.rep_cells[:, 0], dofmap.rep_cells[:, 1]
    y1 = (i[:, None] + ref.pts[None, :, 0]) * h
    y2 = (j[:, None] + ref.pts[None, :, 1]) * h
    if material.tensor is not None:
        return None, None, np.asarray(material.tensor(x, y1, y2), dtype=float)
    lam, mu = material.lame(x, y1, y2)
    return np.broadcast_to(lam, y1.shape).copy(), np.broadcast_to(mu, y1.shape).copy(), None


def _layer_y3(ref, n):
    """y3 coordinate of each quadrature point in each layer, (n, 27)."""
    return -0.5 + (np.arange(n)[:, None] + ref.pts[None, :, 2]) * ref.h


def _column_dofs(dofmap):
    """Global dof indices (m, n_layers, 24) for each representative cell."""
    n = dofmap.n
    i, j = dofmap.rep_cells[:, 0], dofmap.rep_cells[:, 1]
    ks = np.arange(n)
    out = np.empty((len(i), n, 8, 3), dtype=np.int64)
    for a in range(8):
        a1, a2, a3 = a & 1, (a >> 1) & 1, (a >> 2) & 1
        cls = dofmap.node_class(i[:, None] + a1, j[:, None] + a2, ks[None, :] + a3)
        out[:, :, a, :] = 3 * cls[:, :, None] + np.arange(3)
    return out.reshape(len(i), n, 24)


def _stress_at(material_fields, F):
    """C F at the quadrature points of each column: (m, 27, 3, 3)."""
    lam, mu, tensor = material_fields
    if tensor is not None:
        return np.einsum("mqijkl,kl->mqij", tensor, F)
    return _iso_stress(lam, mu, np.broadcast_to(F, lam.shape + (3, 3)))


def assemble_cell_system(mesh, material, x=(0.5, 0.5), gamma=1.0, reduce=True):
    """Assemble the discrete Euler-Lagrange system of the corrector problem.

    Right-hand sides are built for the three symmetric basis matrices;
    :meth:`CellSystem.rhs` combines them linearly for any symmetric A.
    """
    if not np.isfinite(gamma) or gamma <= 0.0:
        raise InvalidParameter(f"gamma must be positive, got {gamma!r}")
    n = mesh.n
    shift = material.shift if reduce else None
    dofmap = build_dof_map(mesh, shift)
    ref = _Reference(n, gamma)
    lam, mu, tensor = _material_at_columns(material, x, dofmap, ref)
    fields = (lam, mu, tensor)
    dofs = _column_dofs(dofmap)  # (m, n, 24)
    m = len(dofmap.rep_cells)
    mult = float(dofmap.multiplicity)

    # element matrices, identical across layers of one column
    if tensor is None:
        Ke = (mu @ ref.Kmu + lam @ ref.Klam).reshape(m, 24, 24)
    else:
        Ke = np.einsum("q,mqidje,qad,qbe->maibj", ref.w, tensor, ref.dN, ref.dN).reshape(m, 24, 24)
    Ke *= mult

    nf = dofmap.num_free
    parts = []
    chunk = max(1, int(4_000_000 // max(m * 576, 1)))
    for k0 in range(0, n, chunk):
        d = dofs[:, k0:k0 + chunk, :]  # (m, c, 24)
        c = d.shape[1]
        rows = np.broadcast_to(d[:, :, :, None], (m, c, 24, 24))
        cols = np.broadcast_to(d[:, :, None, :], (m, c, 24, 24))
        vals = np.broadcast_to(Ke[:, None, :, :], (m, c, 24, 24))
        parts.append(sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                                   shape=(nf, nf)).tocsc())
    K = parts[0]
    for p in parts[1:]:
        K = K + p

    # B-mode couplings and right-hand sides
    E = _iota(np.stack(SYM_BASIS))  # (3, 3, 3)
    # stress of each basis strain at each column/point: (3, m, 27, 3, 3)
    SE = np.stack([_stress_at(fields, E[b]) for b in range(3)])
    # phi-B coupling per cell: sum_q w sigma[i,d] dN[q,a,d]  -> (3, m, 8, 3)
    KpB = np.einsum("q,bmqid,qad->bmai", ref.w, SE, ref.dN) * mult
    KpB = KpB.reshape(3, m, 24)
    Kpb_full = np.zeros((nf, 3))
    for b in range(3):
        np.add.at(Kpb_full[:, b], dofs.reshape(m, n * 24),
                  np.repeat(KpB[b][:, None, :], n, axis=1).reshape(m, n * 24))
    Kbb = np.einsum("q,bmqij,cij->bc", ref.w, SE, E) * n * mult

    y3 = _layer_y3(ref, n)  # (n, 27)
    rhs = np.zeros((dofmap.size, 3))
    for b in range(3):
        # sigma(iota(y3 A)) = y3 sigma(iota(A))
        loc = -np.einsum("q,kq,mqid,qad->mkai", ref.w, y3, SE[b], ref.dN) * mult
        np.add.at(rhs[:nf, b], dofs.ravel(), loc.reshape(-1))
        rhs[nf:nf + 3, b] = -np.einsum("q,kq,mqij,cij->c", ref.w, y3, SE[b], E) * mult

    stiffness = sp.bmat([[K, sp.csc_matrix(Kpb_full)],
                         [sp.csc_matrix(Kpb_full.T), sp.csc_matrix(Kbb)]], format="csc")
    return CellSystem(mesh, dofmap, material, tuple(x), float(gamma),
                      numcore.SparseSym(stiffness, check=False), rhs, lam, mu)


# ---------------------------------------------------------------------------
# Solve and evaluate
# ---------------------------------------------------------------------------


@dataclass
class Corrector:
    """Discrete corrector for one symmetric matrix A."""

    phi: np.ndarray  # (num_classes, 3) periodic part at representative nodes
    B: np.ndarray  # (2, 2) affine in-plane mode
    gamma: float
    A: np.ndarray
    residual: float
    system: CellSystem = field(repr=False)

    @property
    def coefficients(self):
        return np.concatenate([self.phi.ravel(), [self.B[0, 0], self.B[1, 1], self.B[0, 1]]])


def _translation_projector(dofmap, weighted=True):
    """Removes the translation part of the periodic unknowns.  The weighted
    version fixes the mean of phi; the unweighted one is the orthogonal
    projector needed to keep a Krylov iteration symmetric."""
    if weighted:
        mass = np.tile(dofmap.class_mass[:, None], (1, 3))
    else:
        mass = np.ones((dofmap.num_classes, 3))
    nf = dofmap.num_free

    def P(v):
        v = np.array(v, dtype=float)
        phi = v[:nf].reshape(-1, 3)
        phi -= (mass * phi).sum(axis=0) / mass.sum(axis=0)
        return v

    return P


def _direct_solver(system):
    """Factor the stiffness with the first node pinned and the B-mode
    eliminated by a 3x3 Schur complement.

    Pinning removes the translation kernel; the B columns are dense, so
    keeping them out of the sparse factorization preserves its fill.
    """
    K = system.matrix.matrix
    nf = system.dofmap.num_free
    Kpp = K[3:nf, 3:nf].tocsc()
    KpB = K[3:nf, nf:].toarray()
    Kbb = K[nf:, nf:].toarray()
    inner = numcore.factor_spd(Kpp)
    Y = inner(KpB)
    S = Kbb - KpB.T @ Y
    S = 0.5 * (S + S.T)

    def solve(rhs):
        rhs = np.asarray(rhs, dtype=float)
        vec = rhs.ndim == 1
        R = rhs.reshape(rhs.shape[0], -1)
        Z = inner(R[3:nf])
        B = np.linalg.solve(S, R[nf:] - KpB.T @ Z)
        X = np.zeros_like(R)
        X[3:nf] = Z - Y @ B
        X[nf:] = B
        return X[:, 0] if vec else X

    return solve


def solve_correctors(system, matrices=None, method="direct"):
    """Solve the corrector problem for each symmetric matrix in ``matrices``
    (default: the three basis matrices)."""
    if matrices is None:
        matrices = SYM_BASIS
    matrices = [np.asarray(A, dtype=float) for A in matrices]
    for A in matrices:
        if A.shape != (2, 2) or not np.allclose(A, A.T, atol=0.0):
            raise InvalidParameter("corrector needs a symmetric 2x2 matrix")
    dm = system.dofmap
    nf = dm.num_free
    P = _translation_projector(dm)
    K = system.matrix.matrix
    B = np.column_stack([system.rhs(A) for A in matrices])
    # the exact load is orthogonal to translations; drop the round-off part
    # that pinning would otherwise leave unbalanced
    for d in range(3):
        B[d:nf:3] -= B[d:nf:3].mean(axis=0)
    if method == "direct":
        if system._solve is None:
            system._solve = _direct_solver(system)
        X = system._solve(B)
        X, res = numcore._refine(K, system._solve, X, B, numcore.RESIDUAL_TOL)
        X = np.column_stack([P(X[:, c]) for c in range(X.shape[1])])
    elif method == "cg":
        X = numcore.solve_spd(system.matrix, B, method="cg",
                              projector=_translation_projector(dm, weighted=False))
        X = X.reshape(dm.size, -1)
        X = np.column_stack([P(X[:, c]) for c in range(X.shape[1])])
    else:
        raise InvalidParameter(f"unknown solver method {method!r}")
    residuals = [numcore.relative_residual(K, X[:, c], B[:, c]) for c in range(X.shape[1])]
    if max(residuals) > numcore.RESIDUAL_TOL:
        raise NumericalFailure(f"cell solve residual {max(residuals):.3e}",
                               residual=max(residuals), gamma=system.gamma, n=dm.n)
    out = []
    for c, A in enumerate(matrices):
        x = X[:, c]
        b = x[nf:nf + 3]
        Bm = np.array([[b[0], b[2]], [b[2], b[1]]])
        out.append(Corrector(x[:nf].reshape(-1, 3).copy(), Bm, system.gamma, A,
                             residuals[c], system))
    return out


def solve_corrector(system, A, method="direct"):
    return solve_correctors(system, [A], method=method)[0]


def evaluate_Qh(corrector, A=None):
    """Quadrature sum of C (iota(y3 A) + grad_gamma theta) : (same)."""
    system = corrector.system
    if A is None:
        A = corrector.A
    A = np.asarray(A, dtype=float)
    if not np.allclose(A, corrector.A, rtol=0.0, atol=1e-14):
        raise InvalidParameter("corrector was solved for a different matrix")
    dm = system.dofmap
    n = dm.n
    ref = _Reference(n, system.gamma)
    dofs = _column_dofs(dm)  # (m, n, 24)
    u = np.concatenate([corrector.phi.ravel()])
    ue = u[dofs].reshape(dofs.shape[0], n, 8, 3)
    # grad_gamma phi at quad points: G[m,k,q,i,d] = sum_a u[a,i] dN[q,a,d]
    G = np.einsum("mkai,qad->mkqid", ue, ref.dN)
    y3 = _layer_y3(ref, n)
    G += y3[None, :, :, None, None] * _iota(A)
    G += _iota(corrector.B)
    lam, mu = system.lam, system.mu
    if system.material.tensor is None:
        sym = 0.5 * (G + np.swapaxes(G, -1, -2))
        tr = np.trace(G, axis1=-2, axis2=-1)
        dens = 2.0 * mu[:, None, :] * np.sum(sym * sym, axis=(-1, -2)) + lam[:, None, :] * tr ** 2
    else:
        Cq = np.asarray(system.material.tensor(system.x, *_column_points(dm, ref)))
        dens = np.einsum("mqijab,mkqij,mkqab->mkq", Cq, G, G)
    return float(dm.multiplicity * np.einsum("q,mkq->", ref.w, dens))


def _column_points(dofmap, ref):
    i, j = dofmap.rep_cells[:, 0], dofmap.rep_cells[:, 1]
    return ((i[:, None] + ref.pts[None, :, 0]) * ref.h, (j[:, None] + ref.pts[None, :, 1]) * ref.h)
