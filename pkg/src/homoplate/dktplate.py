"""Discrete Kirchhoff triangles for the homogenized bending energy.

Scalar functions carry three degrees of freedom per vertex: the value and
the two components of the gradient.  On each triangle they span the
reduced cubic space P3red (cubics whose value at the barycenter is fixed
by the nine vertex values and gradients).  The discrete gradient theta_H
maps such a function to a continuous piecewise quadratic vector field; its
Jacobian stands in for the Hessian in the bending energy.

Degree of freedom layout for a deformation psi = (psi_1, psi_2, psi_3):
``U[v, d, m]`` with vertex v, d in (value, d/dx1, d/dx2) and component m;
the flat index is ``9 v + 3 d + m``.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from homoplate import numcore
from homoplate.errors import InvalidParameter

log = logging.getLogger(__name__)

SIDES = ("left", "right", "bottom", "top")


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class TriMesh:
    """Conforming triangulation with counter-clockwise triangles.

    ``parents`` lists, for each red refinement step leading to this mesh,
    the index of the parent triangle of every child (coarsest step first).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    level: int = 0
    parents: list = field(default_factory=list)
    diagonal: str = "main"

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        edges = np.sort(self.triangles[:, [[1, 2], [2, 0], [0, 1]]].reshape(-1, 2), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        self.edges = uniq
        self.tri_edges = inv.reshape(-1, 3)  # local edge k is opposite local vertex k

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @property
    def H(self):
        """Longest edge length."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return float(np.sqrt((d * d).sum(axis=1)).max())

    @property
    def areas(self):
        v = self.vertices[self.triangles]
        d1, d2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def jacobians(self):
        """(T, 2, 2) with columns z1 - z0 and z2 - z0."""
        v = self.vertices[self.triangles]
        return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)

    def side_vertices(self, side, tol=1e-12):
        x = self.vertices
        sel = {"left": np.abs(x[:, 0]) <= tol, "right": np.abs(x[:, 0] - 1.0) <= tol,
               "bottom": np.abs(x[:, 1]) <= tol, "top": np.abs(x[:, 1] - 1.0) <= tol}
        if side not in sel:
            raise InvalidParameter(f"unknown side {side!r}")
        return np.flatnonzero(sel[side])

    @property
    def boundary_tags(self):
        return {s: self.side_vertices(s) for s in SIDES}

    def map_points(self, ref_points):
        """Physical coordinates (T, q, 2) of reference points (q, 2)."""
        z0 = self.vertices[self.triangles[:, 0]]
        return z0[:, None, :] + np.einsum("tij,qj->tqi", self.jacobians, ref_points)

    def ancestors(self, coarse_level):
        """Index of the level-``coarse_level`` ancestor of every triangle."""
        if not 0 <= coarse_level <= self.level:
            raise InvalidParameter(f"level {coarse_level} is not coarser than {self.level}")
        idx = np.arange(self.num_triangles)
        for par in reversed(self.parents[coarse_level:]):
            idx = par[idx]
        return idx


def unit_square(diagonal="main"):
    """Unit square split into two triangles along the (0,0)-(1,1) diagonal
    (``"main"``) or the (1,0)-(0,1) diagonal (``"anti"``)."""
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    if diagonal == "main":
        tris = [[0, 1, 2], [0, 2, 3]]
    elif diagonal == "anti":
        tris = [[0, 1, 3], [1, 2, 3]]
    else:
        raise InvalidParameter(f"unknown diagonal {diagonal!r}")
    return TriMesh(verts, np.array(tris), 0, [], diagonal)


def red_refine(mesh):
    """Split every triangle into four by joining the edge midpoints."""
    nv = mesh.num_vertices
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    verts = np.vstack([mesh.vertices, mids])
    a, b, c = mesh.triangles.T
    m_bc, m_ca, m_ab = (nv + mesh.tri_edges[:, k] for k in range(3))
    children = np.stack([
        np.stack([a, m_ab, m_ca], axis=1),
        np.stack([m_ab, b, m_bc], axis=1),
        np.stack([m_ca, m_bc, c], axis=1),
        np.stack([m_bc, m_ca, m_ab], axis=1),
    ], axis=1).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.num_triangles), 4)
    return TriMesh(verts, children, mesh.level + 1, list(mesh.parents) + [parent], mesh.diagonal)


def refine_unit_square(k, diagonal="main"):
    """Level-k red refinement of the two-triangle unit square:
    2 * 4^k triangles, H = sqrt(2) 2^-k."""
    if int(k) != k or k < 0:
        raise InvalidParameter(f"refinement level must be a non-negative integer, got {k!r}")
    mesh = unit_square(diagonal)
    for _ in range(int(k)):
        mesh = red_refine(mesh)
    return mesh


# ---------------------------------------------------------------------------
# Reference element
# ---------------------------------------------------------------------------

_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
_REF_CENTER = _REF_VERTS.mean(axis=0)
_EXPONENTS = [(i, d - i) for d in range(4) for i in range(d, -1, -1)]  # 10 cubic monomials


def _monomials(p):
    p = np.atleast_2d(p)
    return np.stack([p[:, 0] ** i * p[:, 1] ** j for i, j in _EXPONENTS], axis=-1)


def _monomial_grads(p):
    p = np.atleast_2d(p)
    x, y = p[:, 0], p[:, 1]
    gx = [i * x ** max(i - 1, 0) * y ** j if i else np.zeros_like(x) for i, j in _EXPONENTS]
    gy = [j * x ** i * y ** max(j - 1, 0) if j else np.zeros_like(x) for i, j in _EXPONENTS]
    return np.stack([np.stack(gx, -1), np.stack(gy, -1)], axis=-1)  # (q, 10, 2)


def _p3red_coefficients():
    """Monomial coefficients (10, 9) of the reference P3red basis.

    Degrees of freedom: p, dp/dxi, dp/deta at the three vertices; the
    tenth row is the barycenter condition
    6 p(c) = sum_i (2 p(z_i) - grad p(z_i) . (z_i - c)), which is invariant
    under affine maps, so the reference basis transforms like the
    physical one.
    """
    V = np.zeros((10, 10))
    vals = _monomials(_REF_VERTS)
    grads = _monomial_grads(_REF_VERTS)
    for i in range(3):
        V[3 * i] = vals[i]
        V[3 * i + 1] = grads[i, :, 0]
        V[3 * i + 2] = grads[i, :, 1]
    row = 6.0 * _monomials(_REF_CENTER)[0]
    for i in range(3):
        row -= 2.0 * vals[i] - grads[i] @ (_REF_VERTS[i] - _REF_CENTER)
    V[9] = row
    return np.linalg.inv(V)[:, :9]


_P3RED = _p3red_coefficients()


def _p2_values(p):
    """Quadratic Lagrange basis: vertices 0..2, then midpoints of the edges
    opposite vertex 0, 1, 2."""
    p = np.atleast_2d(p)
    l1, l2 = p[:, 0], p[:, 1]
    l0 = 1.0 - l1 - l2
    L = (l0, l1, l2)
    out = [L[i] * (2.0 * L[i] - 1.0) for i in range(3)]
    out += [4.0 * L[1] * L[2], 4.0 * L[2] * L[0], 4.0 * L[0] * L[1]]
    return np.stack(out, axis=-1)


def _p2_grads(p):
    p = np.atleast_2d(p)
    l1, l2 = p[:, 0], p[:, 1]
    l0 = 1.0 - l1 - l2
    L = (l0, l1, l2)
    dL = (np.array([-1.0, -1.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    out = [(4.0 * L[i] - 1.0)[:, None] * dL[i] for i in range(3)]
    for a, b in ((1, 2), (2, 0), (0, 1)):
        out.append(4.0 * (L[a][:, None] * dL[b] + L[b][:, None] * dL[a]))
    return np.stack(out, axis=1)  # (q, 6, 2)


def _dof_map(J):
    """(T, 9, 9) map from physical vertex dofs (w, w_x1, w_x2) to reference
    dofs (w, w_xi, w_eta): the reference gradient is J^T grad w."""
    T = len(J)
    M = np.zeros((T, 9, 9))
    for i in range(3):
        M[:, 3 * i, 3 * i] = 1.0
        M[:, 3 * i + 1:3 * i + 3, 3 * i + 1:3 * i + 3] = np.swapaxes(J, 1, 2)
    return M


def _theta_nodes(mesh):
    """(T, 6, 2, 9): P2 nodal values of theta_H in terms of local dofs.

    At a vertex theta equals the nodal gradient.  At an edge midpoint the
    tangential component is the derivative of the cubic edge trace and the
    normal component is the mean of the two nodal normal derivatives; both
    are independent of the edge orientation.
    """
    T = mesh.num_triangles
    X = mesh.vertices[mesh.triangles]  # (T, 3, 2)
    out = np.zeros((T, 6, 2, 9))
    for i in range(3):
        out[:, i, 0, 3 * i + 1] = 1.0
        out[:, i, 1, 3 * i + 2] = 1.0
    for k, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        d = X[:, b] - X[:, a]  # (T, 2)
        L2 = (d * d).sum(axis=1)
        node = 3 + k
        for c in range(2):
            # half sum of the nodal gradients
            out[:, node, c, 3 * a + 1 + c] += 0.5
            out[:, node, c, 3 * b + 1 + c] += 0.5
            # 3/(2 L^2) (w_b - w_a) d
            out[:, node, c, 3 * b] += 1.5 * d[:, c] / L2
            out[:, node, c, 3 * a] -= 1.5 * d[:, c] / L2
            # -3/(4 L^2) d ((g_a + g_b) . d)
            for e in range(2):
                coef = -0.75 * d[:, c] * d[:, e] / L2
                out[:, node, c, 3 * a + 1 + e] += coef
                out[:, node, c, 3 * b + 1 + e] += coef
    return out


class DKTSpace:
    """Per-triangle operators of the DKT discretisation on ``mesh``,
    evaluated at the reference points of ``rule``."""

    def __init__(self, mesh, rule=None):
        self.mesh = mesh
        self.rule = rule if rule is not None else numcore.TRIANGLE12
        pts = self.rule.points
        J = mesh.jacobians
        self.J = J
        self.detJ = 2.0 * mesh.areas
        if np.any(self.detJ <= 0.0):
            raise InvalidParameter("triangles must be non-degenerate and counter-clockwise")
        self.invJT = np.linalg.inv(np.swapaxes(J, 1, 2))
        self.M = _dof_map(J)
        self.weights = self.detJ[:, None] * self.rule.weights[None, :]  # (T, q)
        self.points = mesh.map_points(pts)
        self.values = self.value_operator(pts)
        self.grad_theta = self.grad_theta_operator(pts)
        # global scalar dof index (T, 9): 3 v + d
        self.dofs = (3 * mesh.triangles[:, :, None] + np.arange(3)).reshape(-1, 9)

    # operators mapping the 9 local physical dofs to quantities at points
    def value_operator(self, pts):
        N = _monomials(pts) @ _P3RED  # (q, 9) reference basis
        return np.einsum("qa,tab->tqb", N, self.M)

    def gradient_operator(self, pts):
        """(T, q, 2, 9): gradient of the P3red function."""
        G = np.einsum("qka,kb->qab", _monomial_grads(pts), _P3RED)  # (q, 2, 9)
        G = np.einsum("tij,qjb->tqib", self.invJT, G)
        return np.einsum("tqia,tab->tqib", G, self.M)

    def grad_theta_operator(self, pts):
        """(T, q, 2, 2, 9): entry [i, j] is d_j theta_i."""
        dphi = np.einsum("tij,qnj->tqni", self.invJT, _p2_grads(pts))  # (T, q, 6, 2)
        return np.einsum("tnia,tqnj->tqija", _theta_nodes(self.mesh), dphi)

    def theta_operator(self, pts):
        """(T, q, 2, 9): theta_H itself."""
        return np.einsum("qn,tnia->tqia", _p2_values(pts), _theta_nodes(self.mesh))

    def voigt_operator(self):
        """(T, q, 3, 9): Voigt vector of sym grad theta_H at the rule points."""
        G = self.grad_theta
        return np.stack([G[:, :, 0, 0], G[:, :, 1, 1], G[:, :, 0, 1] + G[:, :, 1, 0]], axis=2)

    def local(self, u):
        """Local dofs (T, 9, ...) of scalar dof array(s) shaped (V, 3, ...)."""
        u = np.asarray(u)
        flat = u.reshape((-1,) + u.shape[2:])
        return flat[self.dofs]


# ---------------------------------------------------------------------------
# Scalar functions and deformations
# ---------------------------------------------------------------------------


@dataclass
class DKTScalar:
    mesh: TriMesh
    dofs: np.ndarray  # (V, 3): value, d/dx1, d/dx2

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=float)
        if self.dofs.shape != (self.mesh.num_vertices, 3):
            raise InvalidParameter("DKT scalar needs (num_vertices, 3) dofs")


@dataclass
class DKTDeformation:
    mesh: TriMesh
    U: np.ndarray  # (V, 3, 3)

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        if self.U.shape != (self.mesh.num_vertices, 3, 3):
            raise InvalidParameter("DKT deformation needs (num_vertices, 3, 3) dofs")

    def component(self, m):
        return DKTScalar(self.mesh, self.U[:, :, m])

    @property
    def positions(self):
        """psi_H at the vertices, (V, 3)."""
        return self.U[:, 0, :]

    @property
    def flat(self):
        return self.U.ravel()

    @classmethod
    def identity(cls, mesh):
        U = np.zeros((mesh.num_vertices, 3, 3))
        U[:, 0, :2] = mesh.vertices
        U[:, 1, 0] = 1.0
        U[:, 2, 1] = 1.0
        return cls(mesh, U)


def dkt_interpolate(mesh, values, gradients):
    """DKT interpolant from vertex values (V,) and gradients (V, 2)."""
    values = np.asarray(values, dtype=float)
    gradients = np.asarray(gradients, dtype=float)
    return DKTScalar(mesh, np.column_stack([values, gradients]))


def interpolate_function(mesh, f, grad_f):
    """Interpolant of a callable f(x) -> (N,) with gradient grad_f(x) -> (N, 2)."""
    x = mesh.vertices
    return dkt_interpolate(mesh, f(x), grad_f(x))


def evaluate(w, space, pts=None):
    """Values of a DKT scalar at rule points (T, q)."""
    op = space.values if pts is None else space.value_operator(pts)
    return np.einsum("tqa,ta->tq", op, space.local(w.dofs))


def evaluate_gradient(w, space, pts=None):
    op = space.gradient_operator(space.rule.points if pts is None else pts)
    return np.einsum("tqia,ta->tqi", op, space.local(w.dofs))


def discrete_gradient(w, space, pts=None):
    """theta_H[w] at rule points, (T, q, 2)."""
    op = space.theta_operator(space.rule.points if pts is None else pts)
    return np.einsum("tqia,ta->tqi", op, space.local(w.dofs))


def discrete_gradient_jacobian(w, space, pts=None):
    """grad theta_H[w] at rule points, (T, q, 2, 2)."""
    op = space.grad_theta if pts is None else space.grad_theta_operator(pts)
    return np.einsum("tqija,ta->tqij", op, space.local(w.dofs))


def hessian(w, space, pts=None):
    """Piecewise Hessian of the P3red function, (T, q, 2, 2)."""
    pts = space.rule.points if pts is None else pts
    T = space.mesh.num_triangles
    H = np.empty((T, len(pts), 2, 2))
    loc = space.local(w.dofs)
    # second derivatives of the reference basis, then chain rule
    d2 = np.zeros((len(pts), 10, 2, 2))
    x, y = pts[:, 0], pts[:, 1]
    for k, (i, j) in enumerate(_EXPONENTS):
        if i >= 2:
            d2[:, k, 0, 0] = i * (i - 1) * x ** (i - 2) * y ** j
        if i >= 1 and j >= 1:
            d2[:, k, 0, 1] = d2[:, k, 1, 0] = i * j * x ** (i - 1) * y ** (j - 1)
        if j >= 2:
            d2[:, k, 1, 1] = j * (j - 1) * x ** i * y ** (j - 2)
    ref = np.einsum("qkab,kc->qabc", d2, _P3RED)  # (q, 2, 2, 9)
    phys = np.einsum("tia,qabc,tjb->tqijc", space.invJT, ref, space.invJT)
    H[:] = np.einsum("tqijc,tcd,td->tqij", phys, space.M, loc)
    return H


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------


@dataclass
class PlateEnergy:
    """Discrete energy E(psi) = sum_m u_m^T K u_m - F . U with constant K.

    ``K`` acts on scalar dofs (3 V); ``F`` has the layout of ``U``.
    """

    space: DKTSpace
    K: sp.csr_matrix
    F: np.ndarray  # (V, 3, 3)
    C: Optional[np.ndarray] = None  # (T, q, 3, 3) Voigt field at the rule points
    Kfull: Optional[sp.csr_matrix] = None

    def __post_init__(self):
        if self.Kfull is None:
            self.Kfull = sp.kron(self.K, sp.identity(3), format="csr")

    def elastic(self, psi):
        U = _as_U(psi)
        return float(sum(U[:, :, m].ravel() @ (self.K @ U[:, :, m].ravel()) for m in range(3)))

    def value(self, psi):
        U = _as_U(psi)
        return self.elastic(U) - float(np.sum(self.F * U))

    def gradient(self, psi):
        u = _as_U(psi).ravel()
        return 2.0 * (self.Kfull @ u) - self.F.ravel()

    def hessian(self):
        return 2.0 * self.Kfull

    def __call__(self, psi):
        return self.value(psi), self.gradient(psi), self.hessian()


def _as_U(psi):
    if isinstance(psi, DKTDeformation):
        return psi.U
    U = np.asarray(psi, dtype=float)
    return U.reshape(-1, 3, 3)


def assemble_energy(mesh, field, force, space=None):
    """Assemble the discrete homogenized energy on ``mesh``.

    ``field`` holds the Voigt matrices at the rule points, shape
    (T, q, 3, 3) or a :class:`TensorField`; ``force`` is a constant vector
    or a callable f(x) -> (..., 3).
    """
    space = space if space is not None else DKTSpace(mesh)
    C = getattr(field, "m", field)
    C = np.asarray(C, dtype=float)
    T, q = space.weights.shape
    if C.shape != (T, q, 3, 3):
        raise InvalidParameter(f"tensor field shape {C.shape} does not match mesh ({T}, {q})")
    B = space.voigt_operator()  # (T, q, 3, 9)
    Ke = np.einsum("tq,tqia,tqij,tqjb->tab", space.weights, B, C, B)
    rows = np.repeat(space.dofs, 9, axis=1).ravel()
    cols = np.tile(space.dofs, (1, 9)).ravel()
    n = 3 * mesh.num_vertices
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K = 0.5 * (K + K.T)
    if callable(force):
        f = np.asarray(force(space.points), dtype=float)
    else:
        f = np.broadcast_to(np.asarray(force, dtype=float), (T, q, 3))
    Fe = np.einsum("tq,tqa,tqm->tam", space.weights, space.values, f)  # (T, 9, 3)
    F = np.zeros((n, 3))
    np.add.at(F, space.dofs.ravel(), Fe.reshape(-1, 3))
    return PlateEnergy(space, K.tocsr(), F.reshape(-1, 3, 3), C)


def bending_density(energy, psi):
    """Per-quadrature-point density sum_m Q(x, sym grad theta_H[psi_m])."""
    space = energy.space
    U = _as_U(psi)
    B = space.voigt_operator()
    out = np.zeros(space.weights.shape)
    for m in range(3):
        v = np.einsum("tqia,ta->tqi", B, space.local(U[:, :, m]))
        out += np.einsum("tqi,tqij,tqj->tq", v, energy.C, v)
    return out


def hessian_difference(coarse, psi_c, fine, psi_f, rule=None):
    """L2 norm of grad theta_H[psi_c] - grad theta_H[psi_f] over all three
    components, integrated on the finer of two nested meshes."""
    if fine.level < coarse.level:
        coarse, fine, psi_c, psi_f = fine, coarse, psi_f, psi_c
    rule = rule if rule is not None else numcore.TRIANGLE12
    sf = DKTSpace(fine, rule)
    Uf, Uc = _as_U(psi_f), _as_U(psi_c)
    anc = fine.ancestors(coarse.level)
    # reference coordinates of the fine points inside their coarse ancestor
    sc = DKTSpace(coarse, rule)
    z0 = coarse.vertices[coarse.triangles[anc, 0]]
    invJ = np.linalg.inv(sc.J[anc])
    xi = np.einsum("tij,tqj->tqi", invJ, sf.points - z0[:, None, :])
    total = 0.0
    for m in range(3):
        gf = np.einsum("tqija,ta->tqij", sf.grad_theta, sf.local(Uf[:, :, m]))
        # grad theta on the coarse mesh is affine per triangle: evaluate at
        # each fine point individually
        gc = np.empty_like(gf)
        loc_c = sc.local(Uc[:, :, m])
        nodes = _theta_nodes(coarse)
        for qi in range(xi.shape[1]):
            dphi = _p2_grads(xi[:, qi])
            dphi = np.einsum("tij,tnj->tni", sc.invJT[anc], dphi)
            gc[:, qi] = np.einsum("tnia,tnj,ta->tij", nodes[anc], dphi, loc_c[anc])
        diff = gf - gc
        total += float(np.einsum("tq,tqij->", sf.weights, diff * diff))
    return float(np.sqrt(total))


def interpolation_errors(mesh, f, grad_f, space=None):
    """L2 and broken H1-seminorm errors of the DKT interpolant of ``f``,
    integrated with the rule of ``space`` (exact up to degree 6)."""
    space = space if space is not None else DKTSpace(mesh)
    w = interpolate_function(mesh, f, grad_f)
    pts = space.points.reshape(-1, 2)
    T, q = space.weights.shape
    e0 = evaluate(w, space) - np.asarray(f(pts)).reshape(T, q)
    e1 = evaluate_gradient(w, space) - np.asarray(grad_f(pts)).reshape(T, q, 2)
    l2 = np.sqrt(np.einsum("tq,tq->", space.weights, e0 * e0))
    h1 = np.sqrt(np.einsum("tq,tqi->", space.weights, e1 * e1))
    return float(l2), float(h1)


def prolong(coarse, psi_c, fine):
    """Deformation on ``fine`` (a red refinement of ``coarse``) whose vertex
    values and gradients are those of the coarse P3red function.

    Gradients at new vertices on coarse edges are averaged over the
    adjacent coarse triangles, since only tangential derivatives are
    continuous there.  Used as a warm start across levels.
    """
    if fine.level < coarse.level:
        raise InvalidParameter("prolongation needs a finer target mesh")
    Uc = _as_U(psi_c)
    anc = np.repeat(fine.ancestors(coarse.level), 3)
    verts = fine.triangles.ravel()
    sc = DKTSpace(coarse)
    z0 = coarse.vertices[coarse.triangles[anc, 0]]
    xi = np.einsum("pij,pj->pi", np.linalg.inv(sc.J[anc]), fine.vertices[verts] - z0)
    N = _monomials(xi) @ _P3RED  # (P, 9)
    G = np.einsum("pka,kb->pab", _monomial_grads(xi), _P3RED)  # (P, 2, 9)
    G = np.einsum("pij,pjb->pib", sc.invJT[anc], G)
    M = sc.M[anc]
    U = np.zeros((fine.num_vertices, 3, 3))
    count = np.zeros(fine.num_vertices)
    np.add.at(count, verts, 1.0)
    for m in range(3):
        loc = sc.local(Uc[:, :, m])[anc]  # (P, 9)
        phys = np.einsum("pab,pb->pa", M, loc)
        val = np.einsum("pa,pa->p", N, phys)
        grad = np.einsum("pia,pa->pi", G, phys)
        np.add.at(U[:, 0, m], verts, val)
        np.add.at(U[:, 1, m], verts, grad[:, 0])
        np.add.at(U[:, 2, m], verts, grad[:, 1])
    U /= count[:, None, None]
    return DKTDeformation(fine, U)
