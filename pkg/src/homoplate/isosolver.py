"""Newton-KKT solver for the nodal isometry constraint.

Saddle points of

    L(psi, p) = E(psi) - sum_z m_z (grad psi(z)^T grad psi(z) - I) : p(z)

are computed with a full Newton method on the symmetric indefinite KKT
system, an inertia correction of the Lagrangian Hessian and a backtracking
filter line search.  ``m_z`` are lumped vertex masses, so each vertex
constraint pairs only with the multiplier at that vertex.  Dirichlet
vertices carry prescribed values and gradients; their dofs are eliminated
and their constraints dropped.
"""

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from homoplate import numcore
from homoplate.dktplate import DKTDeformation
from homoplate.errors import InvalidParameter, NumericalFailure

log = logging.getLogger(__name__)


@dataclass
class BoundaryData:
    """Clamped vertices with prescribed positions (nb, 3) and gradients
    (nb, 3, 2), column j of a gradient being d psi / d x_j."""

    vertices: np.ndarray
    values: np.ndarray
    gradients: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float).reshape(-1, 3)
        self.gradients = np.asarray(self.gradients, dtype=float).reshape(-1, 3, 2)
        if not (len(self.vertices) == len(self.values) == len(self.gradients)):
            raise InvalidParameter("boundary data arrays differ in length")
        if len(np.unique(self.vertices)) != len(self.vertices):
            raise InvalidParameter("duplicate boundary vertices")

    def isometry_defect(self):
        if len(self.vertices) == 0:
            return 0.0
        G = np.einsum("bki,bkj->bij", self.gradients, self.gradients) - np.eye(2)
        return float(np.abs(G).max())

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, int), np.zeros((0, 3)), np.zeros((0, 3, 2)))


@dataclass
class SolverOptions:
    tol: float = 1e-12
    max_iter: int = 200
    amplitude: float = 1e-3
    seed: int = 0
    perturb: str = "all"  # "all" free dofs or only vertex "values"
    max_backtracks: int = 40

    def __post_init__(self):
        if not self.tol > 0.0:
            raise InvalidParameter(f"tolerance must be positive, got {self.tol!r}")
        if self.amplitude < 0.0:
            raise InvalidParameter("perturbation amplitude must be non-negative")
        if self.perturb not in ("all", "values"):
            raise InvalidParameter(f"unknown perturbation mode {self.perturb!r}")


@dataclass
class SolverReport:
    converged: bool
    iterations: int
    energy: float
    stationarity: float
    feasibility: float
    history: list = field(default_factory=list)
    seconds: float = 0.0
    message: str = ""


# ---------------------------------------------------------------------------
# Problem data
# ---------------------------------------------------------------------------


def lumped_masses(mesh):
    m = np.zeros(mesh.num_vertices)
    np.add.at(m, mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3))
    return m


def initial_guess(mesh, bc, seed=0, amplitude=1e-3, perturb="all"):
    """Identity embedding plus a seeded uniform perturbation of the free
    dofs with max norm ``amplitude``; Dirichlet dofs are set from ``bc``.

    ``perturb="values"`` perturbs only the vertex positions.
    """
    if amplitude < 0.0:
        raise InvalidParameter("perturbation amplitude must be non-negative")
    psi = DKTDeformation.identity(mesh)
    U = psi.U
    rng = numcore.make_rng(seed)
    noise = rng.uniform(-1.0, 1.0, size=U.shape) * amplitude
    if perturb == "values":
        noise[:, 1:, :] = 0.0
    free = np.ones(mesh.num_vertices, bool)
    free[bc.vertices] = False
    U[free] += noise[free]
    apply_boundary(U, bc)
    return psi


def apply_boundary(U, bc):
    U[bc.vertices, 0, :] = bc.values
    U[bc.vertices, 1, :] = bc.gradients[:, :, 0]
    U[bc.vertices, 2, :] = bc.gradients[:, :, 1]
    return U


def constraint_eval(psi, vertices=None, masses=None):
    """Nodal isometry residuals and their Jacobian.

    Returns ``(g, J)`` with g of shape (nc, 3) holding
    (|d1 psi|^2 - 1, |d2 psi|^2 - 1, d1 psi . d2 psi) at the selected
    vertices and J the sparse Jacobian of the weighted constraint vector
    c = m_z (g1, g2, 2 g3) with respect to the full flat dof vector.
    """
    U = psi.U if isinstance(psi, DKTDeformation) else np.asarray(psi).reshape(-1, 3, 3)
    V = U.shape[0]
    vertices = np.arange(V) if vertices is None else np.asarray(vertices)
    masses = np.ones(len(vertices)) if masses is None else np.asarray(masses)
    d1 = U[vertices, 1, :]
    d2 = U[vertices, 2, :]
    g = np.column_stack([(d1 * d1).sum(1) - 1.0, (d2 * d2).sum(1) - 1.0, (d1 * d2).sum(1)])
    nc = len(vertices)
    r = np.arange(nc)[:, None]
    mm = masses[:, None]
    c1 = 9 * vertices[:, None] + 3 + np.arange(3)
    c2 = 9 * vertices[:, None] + 6 + np.arange(3)
    rows = np.concatenate([3 * r + 0 + 0 * c1, 3 * r + 1 + 0 * c2, 3 * r + 2 + 0 * c1,
                           3 * r + 2 + 0 * c2], axis=1)
    cols = np.concatenate([c1, c2, c1, c2], axis=1)
    vals = np.concatenate([2 * mm * d1, 2 * mm * d2, 2 * mm * d2, 2 * mm * d1], axis=1)
    J = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * nc, 9 * V))
    return g, J


def weighted_constraints(g, masses):
    return (masses[:, None] * np.column_stack([g[:, 0], g[:, 1], 2.0 * g[:, 2]])).ravel()


def constraint_hessian(p, vertices, masses, V):
    """sum_z p_z . Hess c_z as a sparse (9V, 9V) matrix; p is (nc, 3)
    holding (p11, p22, p12)."""
    rows, cols, vals = [], [], []
    for a, b, coef in ((1, 1, p[:, 0]), (2, 2, p[:, 1]), (1, 2, p[:, 2]), (2, 1, p[:, 2])):
        for m in range(3):
            rows.append(9 * vertices + 3 * a + m)
            cols.append(9 * vertices + 3 * b + m)
            vals.append(2.0 * masses * coef)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(9 * V, 9 * V))


# ---------------------------------------------------------------------------
# Newton-KKT with filter line search
# ---------------------------------------------------------------------------


class _Problem:
    def __init__(self, energy, bc):
        mesh = energy.space.mesh
        self.mesh = mesh
        self.energy = energy
        self.bc = bc
        V = mesh.num_vertices
        self.V = V
        fixed = np.zeros(V, bool)
        fixed[bc.vertices] = True
        self.cvert = np.flatnonzero(~fixed)
        self.masses = lumped_masses(mesh)[self.cvert]
        free = np.repeat(~fixed, 9)
        self.free = np.flatnonzero(free)
        self.nx = len(self.free)
        self.nc = 3 * len(self.cvert)
        self.H0 = energy.hessian().tocsr()[self.free][:, self.free].tocsc()
        self.perm = self._ordering()

    def _ordering(self):
        """Vertex-wise fill-reducing ordering; every vertex contributes its
        free primal dofs followed by its multipliers, so no multiplier is
        pivoted before the primal unknowns it couples to."""
        mesh = self.mesh
        V = self.V
        order = _nested_dissection(mesh)
        if order is None:
            tri = mesh.triangles
            r = np.repeat(tri, 3, axis=1).ravel()
            c = np.tile(tri, (1, 3)).ravel()
            G = sp.csc_matrix((np.ones(len(r)), (r, c)), shape=(V, V))
            G = G + sp.identity(V, format="csc") * 10.0
            perm_c = spla.splu(G.tocsc(), permc_spec="MMD_AT_PLUS_A",
                               options=dict(SymmetricMode=True)).perm_c
            order = np.argsort(perm_c)  # position -> vertex
        xpos = -np.ones(9 * V, np.int64)
        xpos[self.free] = np.arange(self.nx)
        cpos = -np.ones(V, np.int64)
        cpos[self.cvert] = np.arange(len(self.cvert))
        perm = []
        for v in order:
            ids = xpos[9 * v:9 * v + 9]
            perm.extend(ids[ids >= 0])
            if cpos[v] >= 0:
                perm.extend(self.nx + 3 * cpos[v] + np.arange(3))
        perm = np.asarray(perm, dtype=np.int64)
        assert len(perm) == self.nx + self.nc
        return perm

    def evaluate(self, U):
        E = self.energy.value(U)
        grad = self.energy.gradient(U)[self.free]
        g, J = constraint_eval(U, self.cvert, self.masses)
        c = weighted_constraints(g, self.masses)
        return E, grad, g, c, J.tocsc()[:, self.free]

    def lagrangian_hessian(self, p):
        Hc = constraint_hessian(p.reshape(-1, 3), self.cvert, self.masses, self.V)
        return (self.H0 - Hc.tocsr()[self.free][:, self.free]).tocsc()

    def stationarity(self, U, grad, J, lam):
        """Componentwise relative KKT residual: |grad E - J^T lam| divided
        by the magnitudes of the terms summed to form it, so that the
        round-off floor of the evaluation itself is O(machine eps)."""
        Kabs = abs(self.energy.Kfull)
        scale = 2.0 * (Kabs @ np.abs(U.ravel()))[self.free]
        scale += np.abs(self.energy.F.ravel()[self.free])
        scale += abs(J).T @ np.abs(lam)
        scale = max(1.0, float(scale.max(initial=0.0)))
        return float(np.abs(grad - J.T @ lam).max(initial=0.0) / scale)


def _nested_dissection(mesh, leaf=32):
    """Vertex order by recursive bisection along mesh lines x_i = const,
    separators last.  Returns None unless every such line separates the
    mesh, i.e. no triangle straddles a vertex coordinate line."""
    x = mesh.vertices
    tri = mesh.triangles
    order = []

    def split(idx):
        P = x[idx]
        ax = int(np.argmax(P.max(axis=0) - P.min(axis=0)))
        vals = np.unique(P[:, ax])
        if len(idx) <= leaf or len(vals) < 3:
            order.extend(idx.tolist())
            return
        v = vals[len(vals) // 2]
        split(idx[P[:, ax] < v])
        split(idx[P[:, ax] > v])
        order.extend(idx[P[:, ax] == v].tolist())

    # a line x_ax = v separates iff no triangle has vertices strictly on both sides
    tx = x[tri]
    for ax in range(2):
        lo, hi = tx[:, :, ax].min(axis=1), tx[:, :, ax].max(axis=1)
        grid = np.unique(x[:, ax])
        inner = np.searchsorted(grid, hi) - np.searchsorted(grid, lo, side="right")
        if np.any(inner > 0):
            return None
    split(np.arange(mesh.num_vertices))
    return np.asarray(order, dtype=np.int64)


def _kkt(W, J, delta, delta_c):
    n, m = W.shape[0], J.shape[0]
    Wd = W + delta * sp.identity(n, format="csc") if delta else W
    C = -delta_c * sp.identity(m, format="csc") if delta_c else None
    return sp.bmat([[Wd, J.T], [J, C]], format="csc")


def solve_saddle(energy, bc, options=None, psi0=None, p0=None, log_path=None):
    """Compute a saddle point of the Lagrangian.

    Returns ``(psi, p, report)`` where ``p`` has shape (V, 3) with entries
    (p11, p22, p12) (zero at Dirichlet vertices).  Raises
    :class:`NumericalFailure` when no acceptable step can be found or the
    iteration limit is reached without convergence.
    """
    options = options or SolverOptions()
    if bc.isometry_defect() > 1e-14:
        raise InvalidParameter(f"boundary gradients are not isometric ({bc.isometry_defect():.2e})")
    t_start = time.perf_counter()
    prob = _Problem(energy, bc)
    mesh = prob.mesh
    if psi0 is None:
        psi = initial_guess(mesh, bc, options.seed, options.amplitude, options.perturb)
    else:
        psi = DKTDeformation(mesh, np.array(psi0.U if isinstance(psi0, DKTDeformation) else psi0))
        apply_boundary(psi.U, bc)
    U = psi.U.copy()
    lam = np.zeros(prob.nc)
    if p0 is not None:
        lam = np.asarray(p0, dtype=float)[prob.cvert].ravel().copy()
    nx, nc = prob.nx, prob.nc

    E, grad, g, c, J = prob.evaluate(U)
    theta = float(np.abs(c).sum())
    theta_max = 1e4 * max(1.0, theta)
    theta_min = 1e-4 * max(1.0, theta)
    filt = [(theta_max, -np.inf)]
    history = []
    last_delta = 0.0
    last_alpha = 0.0
    converged = False
    message = ""
    it = 0
    for it in range(options.max_iter + 1):
        stat = prob.stationarity(U, grad, J, lam)
        feas = float(np.abs(g).max(initial=0.0))
        # alpha and regularization refer to the step that produced this iterate
        history.append(dict(iteration=it, energy=E, stationarity=stat, feasibility=feas,
                            step_length=last_alpha, regularization=last_delta))
        log.info("iter %3d  E=% .12e  stat=%.2e  feas=%.2e", it, E, stat, feas)
        if stat <= options.tol and feas <= options.tol:
            converged = True
            break
        if it == options.max_iter:
            message = "iteration limit reached"
            break
        W = prob.lagrangian_hessian(lam)
        rhs = -np.concatenate([grad, c])
        # inertia correction: smallest power of ten restoring (nx, nc, 0);
        # factors are released before the next factorization to bound memory
        delta, sol, K, out = 0.0, None, None, None
        for trial in [0.0] + [10.0 ** e for e in range(-10, 11)]:
            if trial and last_delta and trial < last_delta / 100.0:
                continue
            K = _kkt(W, J, trial, 0.0)
            out = numcore._static_ldl(K, prob.perm)
            if out is not None and out[1].as_tuple() == (nx, nc, 0):
                delta, sol = trial, out[0]
                break
            out = None
        if sol is None:
            raise NumericalFailure("could not correct the KKT inertia", iteration=it,
                                   energy=E, stationarity=stat, feasibility=feas)
        last_delta = delta
        y = sol(rhs)
        y, res = numcore._refine(K, sol, y, rhs, numcore.RESIDUAL_TOL)
        dx, lam_plus = y[:nx], -y[nx:]
        dlam = lam_plus - lam
        dphi = float(grad @ dx)
        # filter line search with one second-order correction
        alpha = 1.0
        accepted = False
        for bt in range(options.max_backtracks):
            Ut = U.copy()
            Ut.ravel()[prob.free] += alpha * dx
            Et, gradt, gt, ct, Jt = prob.evaluate(Ut)
            theta_t = float(np.abs(ct).sum())
            ok, ftype = _acceptable(E, theta, Et, theta_t, alpha, dphi, filt, theta_min)
            if not ok and bt == 0 and theta_t >= theta:
                # second-order correction for the quadratic constraints
                soc = numcore._refine(K, sol, sol(np.concatenate([np.zeros(nx), -ct])),
                                      np.concatenate([np.zeros(nx), -ct]), numcore.RESIDUAL_TOL)[0]
                Us = Ut.copy()
                Us.ravel()[prob.free] += soc[:nx]
                Es, grads, gs, cs, Js = prob.evaluate(Us)
                theta_s = float(np.abs(cs).sum())
                ok_s, ftype_s = _acceptable(E, theta, Es, theta_s, alpha, dphi, filt, theta_min)
                if ok_s:
                    Ut, Et, gradt, gt, ct, Jt, theta_t, ftype = Us, Es, grads, gs, cs, Js, theta_s, ftype_s
                    ok = True
            if ok:
                if not ftype:
                    filt.append(((1.0 - 1e-5) * theta, E - 1e-8 * theta))
                U, E, grad, g, c, J, theta = Ut, Et, gradt, gt, ct, Jt, theta_t
                lam = lam + alpha * dlam
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # accept a tiny step only if the point is already stationary
            # to round-off; otherwise report failure
            if stat <= 1e3 * options.tol and feas <= 1e3 * options.tol:
                message = "line search stalled at round-off level"
                break
            raise NumericalFailure("line search failed", iteration=it, energy=E,
                                   stationarity=stat, feasibility=feas)
        last_alpha = alpha
    p = np.zeros((prob.V, 3))
    p[prob.cvert] = lam.reshape(-1, 3)
    stat = history[-1]["stationarity"]
    feas = history[-1]["feasibility"]
    report = SolverReport(converged, it, float(E), stat, feas, history,
                          time.perf_counter() - t_start, message or ("converged" if converged else ""))
    if log_path is not None:
        write_log(log_path, report)
    if not converged and message != "line search stalled at round-off level":
        raise NumericalFailure(message or "not converged", iteration=it, energy=E,
                               stationarity=stat, feasibility=feas, report=report)
    return DKTDeformation(mesh, U), p, report


def _acceptable(E, theta, Et, theta_t, alpha, dphi, filt, theta_min,
                gamma_theta=1e-5, gamma_phi=1e-8, eta=1e-4, s_phi=2.3, s_theta=1.1):
    """Filter acceptance; returns (accepted, is_f_type_step)."""
    if not np.isfinite(Et) or not np.isfinite(theta_t):
        return False, False
    for th, ph in filt:
        if theta_t >= th and Et >= ph:
            return False, False
    switching = dphi < 0.0 and alpha * (-dphi) ** s_phi > theta ** s_theta
    if theta <= theta_min and switching:
        return Et <= E + eta * alpha * dphi, True
    return (theta_t <= (1.0 - gamma_theta) * theta or Et <= E - gamma_phi * theta), False


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

LOG_COLUMNS = ("iteration", "energy", "stationarity", "feasibility", "step_length", "regularization")


def write_log(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for h in report.history:
            w.writerow([h["iteration"]] + [repr(float(h[k])) for k in LOG_COLUMNS[1:]])


DOF_COLUMNS = ("vertex", "x1", "x2",
               "psi1", "psi2", "psi3",
               "d1psi1", "d1psi2", "d1psi3",
               "d2psi1", "d2psi2", "d2psi3",
               "p11", "p22", "p12")


def write_dofs(path, psi, p=None):
    """Text dof file: a header line, then one line per vertex with the
    columns of :data:`DOF_COLUMNS` (17 significant digits)."""
    mesh = psi.mesh
    p = np.zeros((mesh.num_vertices, 3)) if p is None else np.asarray(p)
    with open(path, "w") as fh:
        fh.write("# " + " ".join(DOF_COLUMNS) + "\n")
        for v in range(mesh.num_vertices):
            vals = list(mesh.vertices[v]) + list(psi.U[v].ravel()) + list(p[v])
            fh.write(f"{v} " + " ".join(f"{x:.17g}" for x in vals) + "\n")


def read_dofs(path, mesh):
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[0] != mesh.num_vertices:
        raise InvalidParameter("dof file does not match the mesh")
    if not np.allclose(data[:, 1:3], mesh.vertices, rtol=0.0, atol=1e-14):
        raise InvalidParameter("dof file vertex coordinates differ from the mesh")
    U = data[:, 3:12].reshape(-1, 3, 3)
    return DKTDeformation(mesh, U), data[:, 12:15]
