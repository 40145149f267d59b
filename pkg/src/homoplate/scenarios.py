"""Microstructure presets, macroscopic load cases, convergence studies and
export of results.

Experiments are described by small TOML files (see ``configs/``).  Every
file carries ``schema_version``; unknown versions are rejected.
"""

import copy
import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from homoplate import dktplate, effective, isosolver
from homoplate.errors import InvalidParameter
from homoplate.microcell import MicroMaterial

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PRESET_IDS = ("homogeneous", "pwaffine", "stripes_x", "stripes_y", "radial", "diagonal", "truss")
BC_KINDS = ("compression_a", "cantilever_b", "clamped_patch", "clamped_side")
KINDS = ("micro-tensor", "gamma-sweep", "solve", "study-micro", "study-twoscale")

LAMBDA_BAR = 5.0 / 3.0
MU_BAR = 5.0 / 2.0
CONTRAST = 1.0 / 50.0
TRUSS_THICKNESS = (2.0 - np.sqrt(3.0)) / 2.0


# ---------------------------------------------------------------------------
# Microstructure presets
# ---------------------------------------------------------------------------


def _band(s, lo, hi, closed):
    # quadrature points may lie exactly on an interface; rounding makes their
    # classification independent of how s was computed
    s = np.round(s, 12)
    if closed:
        return (s >= lo) & (s <= hi)
    return (s > lo) & (s < hi)


def _distribution(preset_id, p):
    """v(x, y1, y2) and the lattice translation it is invariant under."""
    if preset_id == "homogeneous":
        value = float(p.get("value", 1.0))
        return (lambda x, y1, y2: np.full(np.broadcast(y1, y2).shape, value)), (0, 1)
    if preset_id == "pwaffine":
        return (lambda x, y1, y2: np.where(y1 <= 0.5, 2.0 * y1, 2.0 - 2.0 * y1)
                + 0.0 * y2), (0, 1)
    if preset_id in ("stripes_x", "stripes_y"):
        lo, hi = float(p.get("lo", 0.25)), float(p.get("hi", 0.75))
        if preset_id == "stripes_x":
            return (lambda x, y1, y2: _band(y1, lo, hi, True) + 0.0 * y2), (0, 1)
        return (lambda x, y1, y2: _band(y2, lo, hi, True) + 0.0 * y1), (1, 0)
    if preset_id == "radial":
        lo, hi = float(p.get("lo", 1.0 / 3.0)), float(p.get("hi", 2.0 / 3.0))
        return (lambda x, y1, y2: _band(y2, lo, hi, False) + 0.0 * y1), (1, 0)
    if preset_id == "diagonal":
        # |y' - (1,0)|_1 = 1 - y1 + y2 lies in (1/4,3/4) or (5/4,7/4), i.e.
        # frac(y2 - y1) in (1/4, 3/4)
        def v(x, y1, y2):
            s = np.abs(1.0 - y1) + np.abs(y2)
            return (_band(s, 0.25, 0.75, False) | _band(s, 1.25, 1.75, False)).astype(float)
        return v, (1, 1)
    if preset_id == "truss":
        scale = float(p.get("thickness", TRUSS_THICKNESS))

        def v(x, y1, y2):
            a = (1.0 - x[0]) * scale
            b = x[0] * scale
            t = b / np.sqrt(2.0)
            d1 = np.abs(1.0 - y1) + np.abs(y2)
            d2 = np.abs(y1) + np.abs(y2)
            hard = (np.abs(d1 - 1.0) < t) | (np.abs(d2 - 1.0) < t)
            hard |= (y1 < a / 2) | (y1 > 1.0 - a / 2) | (y2 < a / 2) | (y2 > 1.0 - a / 2)
            return hard.astype(float)
        return v, None
    raise InvalidParameter(f"unknown preset {preset_id!r}; expected one of {PRESET_IDS}")


@dataclass(frozen=True)
class MicrostructurePreset:
    """A named material distribution with its macroscopic placement.

    ``rotated`` presets apply the in-plane rotation :meth:`angle` to the
    prototype tensor at each macroscopic point.
    """

    id: str
    params: tuple = ()
    material: Optional[MicroMaterial] = field(default=None, compare=False)
    constant: bool = True
    rotated: bool = False
    center: tuple = (0.0, 0.5)

    def angle(self, x):
        x = np.asarray(x, dtype=float)
        return np.arctan2(x[..., 1] - self.center[1], x[..., 0] - self.center[0])

    def v(self, x, yprime):
        yprime = np.asarray(yprime, dtype=float)
        return self.material.v(x, yprime[..., 0], yprime[..., 1])


def make_preset(preset_id, **params):
    """Build a preset; common parameters are ``lambda_bar``, ``mu_bar``,
    ``r`` and ``scale`` (a factor on both Lame constants)."""
    p = dict(params)
    v, shift = _distribution(preset_id, p)
    scale = float(p.get("scale", 1.0))
    if not scale > 0.0:
        raise InvalidParameter(f"Lame scale factor must be positive, got {scale!r}")
    lam = float(p.get("lambda_bar", LAMBDA_BAR)) * scale
    mu = float(p.get("mu_bar", MU_BAR)) * scale
    r = float(p.get("r", CONTRAST))
    key_items = tuple(sorted((k, val) for k, val in p.items()
                             if k not in ("lambda_bar", "mu_bar", "r", "scale", "center")))
    key = f"{preset_id}:{key_items!r}"
    constant = preset_id != "truss"
    key_of_x = None if constant else (lambda x: round(float(x[0]), 12))
    material = MicroMaterial(v=v, lambda_bar=lam, mu_bar=mu, r=r, shift=shift, key=key,
                             key_of_x=key_of_x)
    center = tuple(float(c) for c in p.get("center", (0.0, 0.5)))
    return MicrostructurePreset(preset_id, tuple(sorted(p.items(), key=lambda kv: kv[0])),
                                material, constant, preset_id == "radial", center)


def preset_v(preset, x, yprime):
    """Material distribution value of ``preset`` at macro point ``x`` and
    cell point ``yprime``; ``preset`` may be an id or a preset."""
    if isinstance(preset, str):
        preset = make_preset(preset)
    return preset.v(x, yprime)


def hard_fraction(preset, x=(0.5, 0.5), n=128):
    """Cell average of v using the 3-point Gauss rule on an n x n grid."""
    g = np.array([0.5 - np.sqrt(0.15), 0.5, 0.5 + np.sqrt(0.15)])
    w = np.array([5.0, 8.0, 5.0]) / 18.0
    t = (np.arange(n)[:, None] + g[None, :]).ravel() / n
    wt = np.tile(w, n) / n
    Y1, Y2 = np.meshgrid(t, t, indexing="ij")
    vals = preset_v(preset, x, np.stack([Y1, Y2], axis=-1))
    return float(wt @ vals @ wt)


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------


def load_config(path):
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    validate_config(cfg)
    cfg.setdefault("name", os.path.splitext(os.path.basename(path))[0])
    return cfg


def validate_config(cfg):
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InvalidParameter(f"unsupported config schema_version {version!r} "
                               f"(expected {SCHEMA_VERSION})")
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise InvalidParameter(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
    mat = cfg.get("material", {})
    if mat.get("preset") not in PRESET_IDS:
        raise InvalidParameter(f"unknown preset {mat.get('preset')!r}")
    bc = cfg.get("boundary")
    if bc is not None and bc.get("kind") not in BC_KINDS:
        raise InvalidParameter(f"unknown boundary kind {bc.get('kind')!r}")
    return cfg


def config_hash(cfg, *sections):
    """Stable digest of selected config sections plus the schema version."""
    data = {s: cfg.get(s) for s in sections}
    data["schema_version"] = SCHEMA_VERSION
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:20]


def preset_from_config(cfg):
    mat = dict(cfg["material"])
    return make_preset(mat.pop("preset"), **mat)


def gamma_from_config(cfg):
    g = cfg.get("gamma", {"kind": "constant", "value": 1.0})
    if g.get("kind", "constant") == "constant":
        return effective.GammaProfile.constant(float(g.get("value", 1.0)))
    if g["kind"] == "affine_radius":
        return effective.GammaProfile.radial(
            r0=float(g.get("r0", 0.2)), g0=float(g.get("g0", 1.0)),
            r1=float(g.get("r1", np.sqrt(5.0) / 2.0)), g1=float(g.get("g1", 0.1)),
            center=tuple(g.get("center", (0.0, 0.5))))
    raise InvalidParameter(f"unknown gamma profile {g['kind']!r}")


def solver_options_from_config(cfg, seed=None):
    s = cfg.get("solver", {})
    return isosolver.SolverOptions(
        tol=float(s.get("tol", 1e-12)), max_iter=int(s.get("max_iter", 200)),
        amplitude=float(s.get("amplitude", 1e-3)),
        seed=int(cfg.get("seed", 0) if seed is None else seed),
        perturb=s.get("perturb", "all"))


@dataclass
class MacroScenario:
    name: str
    preset: MicrostructurePreset
    gamma: effective.GammaProfile
    k: int
    n: int
    bc: dict
    force: tuple
    options: isosolver.SolverOptions
    diagonal: str = "main"

    @classmethod
    def from_config(cls, cfg, seed=None, k=None, n=None):
        macro = cfg.get("macro", {})
        micro = cfg.get("micro", {})
        return cls(
            name=cfg.get("name", "scenario"),
            preset=preset_from_config(cfg),
            gamma=gamma_from_config(cfg),
            k=int(macro.get("k", 4) if k is None else k),
            n=int(micro.get("n", 8) if n is None else n),
            bc=dict(cfg.get("boundary", {"kind": "compression_a"})),
            force=tuple(float(f) for f in cfg.get("load", {}).get("force", (0.0, 0.0, 0.0))),
            options=solver_options_from_config(cfg, seed),
            diagonal=macro.get("diagonal", "main"),
        )

    def with_levels(self, k, n):
        out = copy.copy(self)
        out.k, out.n = int(k), int(n)
        return out


_FLAT_GRADIENT = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])


def boundary_data(mesh, bc):
    """Dirichlet data for the supported load cases; all prescribed states
    are the flat embedding, possibly translated along x1."""
    kind = bc.get("kind", "compression_a")
    x = mesh.vertices
    if kind == "compression_a":
        shift = float(bc.get("shift", 3.0 / 16.0))
        left, right = mesh.side_vertices("left"), mesh.side_vertices("right")
        verts = np.concatenate([left, right])
        offset = np.concatenate([np.full(len(left), shift), np.full(len(right), -shift)])
    elif kind == "cantilever_b":
        verts = mesh.side_vertices(bc.get("side", "bottom"))
        offset = np.zeros(len(verts))
    elif kind == "clamped_side":
        verts = mesh.side_vertices(bc.get("side", "left"))
        offset = np.zeros(len(verts))
    elif kind == "clamped_patch":
        x0, x1, y0, y1 = (float(t) for t in bc.get("rect", (0.0, 0.2, 0.4, 0.6)))
        tol = 1e-12
        inside = ((x[:, 0] >= x0 - tol) & (x[:, 0] <= x1 + tol)
                  & (x[:, 1] >= y0 - tol) & (x[:, 1] <= y1 + tol))
        verts = np.flatnonzero(inside)
        offset = np.zeros(len(verts))
    else:
        raise InvalidParameter(f"unknown boundary kind {kind!r}")
    if len(verts) == 0:
        raise InvalidParameter(f"boundary {kind!r} selects no vertices on this mesh")
    vals = np.column_stack([x[verts, 0] + offset, x[verts, 1], np.zeros(len(verts))])
    grads = np.repeat(_FLAT_GRADIENT[None], len(verts), axis=0)
    return isosolver.BoundaryData(verts, vals, grads)


# ---------------------------------------------------------------------------
# Running a scenario
# ---------------------------------------------------------------------------


@dataclass
class ScenarioResult:
    scenario: MacroScenario
    mesh: dktplate.TriMesh
    psi: dktplate.DKTDeformation
    p: np.ndarray
    report: isosolver.SolverReport
    energy: dktplate.PlateEnergy

    @property
    def mean_deflection(self):
        return float(self.psi.positions[:, 2].mean())

    @property
    def max_deflection(self):
        return float(np.abs(self.psi.positions[:, 2]).max())

    def summary(self):
        return dict(name=self.scenario.name, k=self.scenario.k, n=self.scenario.n,
                    seed=self.scenario.options.seed, vertices=self.mesh.num_vertices,
                    energy=self.report.energy, elastic=self.energy.elastic(self.psi),
                    iterations=self.report.iterations, stationarity=self.report.stationarity,
                    feasibility=self.report.feasibility, converged=int(self.report.converged),
                    mean_deflection=self.mean_deflection, max_deflection=self.max_deflection)


SUMMARY_COLUMNS = ("name", "k", "n", "seed", "vertices", "energy", "elastic", "iterations",
                   "stationarity", "feasibility", "converged", "mean_deflection",
                   "max_deflection")


def solve_scenario(scenario, cache=None, psi0=None, p0=None, log_path=None):
    mesh = dktplate.refine_unit_square(scenario.k, scenario.diagonal)
    space = dktplate.DKTSpace(mesh)
    cache = cache if cache is not None else effective.TensorCache()
    field_ = effective.build_tensor_field(scenario.preset, space.points, scenario.gamma,
                                          scenario.n, cache)
    energy = dktplate.assemble_energy(mesh, field_, np.asarray(scenario.force), space)
    bc = boundary_data(mesh, scenario.bc)
    psi, p, report = isosolver.solve_saddle(energy, bc, scenario.options, psi0=psi0, p0=p0,
                                            log_path=log_path)
    return ScenarioResult(scenario, mesh, psi, p, report, energy)


def run_scenario(config, out_dir=".", seed=None, cache=None):
    """Solve the scenario of ``config`` and write its artifacts:
    ``<name>_dofs.txt``, ``<name>_surface.vtk``, ``<name>_surface.obj``,
    ``<name>_summary.csv`` and ``<name>_log.csv``."""
    scenario = config if isinstance(config, MacroScenario) else MacroScenario.from_config(config, seed)
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, scenario.name)
    result = solve_scenario(scenario, cache, log_path=stem + "_log.csv")
    isosolver.write_dofs(stem + "_dofs.txt", result.psi, result.p)
    export_surface(result.psi, result.mesh, stem + "_surface.vtk", "vtk")
    export_surface(result.psi, result.mesh, stem + "_surface.obj", "obj")
    write_rows(stem + "_summary.csv", SUMMARY_COLUMNS, [result.summary()])
    log.info("%s: E=%.10g after %d iterations", scenario.name, result.report.energy,
             result.report.iterations)
    return result


def write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c, "")) for c in columns])


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------------------
# Convergence studies
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    columns: tuple
    rows: list
    meta: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([r.get(name, np.nan) for r in self.rows], dtype=float)

    def write_csv(self, path):
        write_rows(path, self.columns, self.rows)


def observed_orders(errors, factor=2.0):
    """log_factor ratios of successive errors (NaN where undefined)."""
    e = np.asarray(errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(e[:-1] / e[1:]) / np.log(factor)


def micro_convergence_study(material, gamma, n_list, n_ref, x=(0.5, 0.5), cache=None,
                            macro=None):
    """Self-convergence of the effective tensor in the cell mesh size.

    ``macro`` may hold ``(scenario, k_star)``; the scenario is then solved on
    the fixed level ``k_star`` with the tensor of every n and the L2
    difference of the discrete Hessians to the reference solution is added.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidParameter("n_list must be strictly increasing")
    if any(n_ref % n for n in n_list):
        raise InvalidParameter(f"every n must divide the reference n* = {n_ref}")
    cache = cache if cache is not None else effective.TensorCache()
    C_ref = cache.get_or_compute(material, x, gamma, n_ref)
    rows = []
    diffs = []
    for n in n_list:
        C = cache.get_or_compute(material, x, gamma, n)
        d = float(np.abs(C.m - C_ref.m).max())
        diffs.append(d)
        rows.append(dict(h=1.0 / n, n=n, tensor_diff=d))
    columns = ["h", "n", "tensor_diff", "tensor_order"]
    orders = observed_orders(diffs)
    for row, o in zip(rows[1:], orders):
        row["tensor_order"] = o
    if macro is not None:
        scenario, k_star = macro
        ref = solve_scenario(scenario.with_levels(k_star, n_ref), cache)
        psi_ref = normalize_branch(ref)
        hd = []
        for row in rows:
            res = solve_scenario(scenario.with_levels(k_star, row["n"]), cache,
                                 psi0=ref.psi, p0=ref.p)
            d = dktplate.hessian_difference(res.mesh, normalize_branch(res), ref.mesh, psi_ref)
            row["hessian_diff"] = d
            row["energy"] = res.report.energy
            hd.append(d)
        for row, o in zip(rows[1:], observed_orders(hd)):
            row["hessian_order"] = o
        columns += ["hessian_diff", "hessian_order", "energy"]
    return ConvergenceReport(tuple(columns), rows,
                             dict(gamma=gamma, n_ref=n_ref, reference=C_ref.entries().tolist()))


def normalize_branch(result):
    """Deformation with the sign of the vertical component chosen so that
    the mean deflection is non-negative, when that reflection is an
    energy symmetry (zero vertical load and flat boundary data)."""
    U = result.psi.U.copy()
    if result.scenario.force[2] == 0.0 and result.mean_deflection < 0.0:
        U[:, :, 2] *= -1.0
    return dktplate.DKTDeformation(result.mesh, U)


class ReferenceStore:
    """Disk cache of reference solutions, keyed by a config digest."""

    def __init__(self, directory=None):
        if directory is None:
            directory = os.environ.get(effective.CACHE_ENV) or None
        self.directory = directory

    def path(self, key):
        return None if not self.directory else os.path.join(self.directory, f"reference-{key}.txt")

    def load(self, key, mesh):
        p = self.path(key)
        if p and os.path.exists(p):
            try:
                return isosolver.read_dofs(p, mesh)
            except (InvalidParameter, ValueError):
                log.warning("ignoring unreadable reference %s", p)
        return None

    def save(self, key, psi, p):
        path = self.path(key)
        if path:
            os.makedirs(self.directory, exist_ok=True)
            tmp = path + f".{os.getpid()}.tmp"
            isosolver.write_dofs(tmp, psi, p)
            os.replace(tmp, path)


def _scenario_key(scenario, k, n):
    data = dict(preset=scenario.preset.id, params=repr(scenario.preset.params),
                gamma=repr(scenario.gamma), k=k, n=n, bc=scenario.bc,
                force=scenario.force, seed=scenario.options.seed, tol=scenario.options.tol,
                amplitude=scenario.options.amplitude, schema=SCHEMA_VERSION)
    return hashlib.sha256(json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()[:20]


def twoscale_convergence_study(scenario, levels, reference, cache=None, warm_start=True,
                               store=None):
    """Energies and discrete Hessian differences for simultaneously refined
    (k, n) levels against a reference level.

    With ``warm_start`` each level starts from the prolongated solution of
    the previous one (the first from the seeded perturbation of the
    identity).  For load-free cases the up/down branch is normalised before
    Hessians are compared.
    """
    levels = [(int(k), int(n)) for k, n in levels]
    if any(b[0] <= a[0] or b[1] <= a[1] for a, b in zip(levels, levels[1:])):
        raise InvalidParameter("levels must refine in both k and n")
    k_ref, n_ref = int(reference[0]), int(reference[1])
    if k_ref <= levels[-1][0]:
        raise InvalidParameter("reference level must be finer than all study levels")
    cache = cache if cache is not None else effective.TensorCache()
    store = store if store is not None else ReferenceStore()
    results = []
    prev = None
    for k, n in levels:
        psi0 = p0 = None
        if warm_start and prev is not None:
            fine = dktplate.refine_unit_square(k, scenario.diagonal)
            psi0, p0 = _prolong_state(prev, fine)
        res = solve_scenario(scenario.with_levels(k, n), cache, psi0=psi0, p0=p0)
        results.append(res)
        prev = res
    # reference: cached on disk, else solved from the finest study level
    ref_mesh = dktplate.refine_unit_square(k_ref, scenario.diagonal)
    key = _scenario_key(scenario, k_ref, n_ref)
    cached = store.load(key, ref_mesh)
    if cached is not None:
        psi_ref = cached[0]
        ref_energy = np.nan
        ref_mean = float(psi_ref.positions[:, 2].mean())
    else:
        psi0, p0 = _prolong_state(prev, ref_mesh) if warm_start else (None, None)
        ref = solve_scenario(scenario.with_levels(k_ref, n_ref), cache, psi0=psi0, p0=p0)
        store.save(key, ref.psi, ref.p)
        psi_ref, ref_energy, ref_mean = ref.psi, ref.report.energy, ref.mean_deflection
    flip = scenario.force[2] == 0.0 and ref_mean < 0.0
    if flip:
        psi_ref = dktplate.DKTDeformation(ref_mesh, psi_ref.U * np.array([1.0, 1.0, -1.0]))
    rows = []
    for res in results:
        d = dktplate.hessian_difference(res.mesh, normalize_branch(res), ref_mesh, psi_ref)
        rows.append(dict(k=res.scenario.k, n=res.scenario.n, H=res.mesh.H, h=1.0 / res.scenario.n,
                         energy=res.report.energy, hessian_diff=d,
                         iterations=res.report.iterations))
    for row, o in zip(rows[1:], observed_orders([r["hessian_diff"] for r in rows])):
        row["hessian_order"] = o
    columns = ("k", "n", "H", "h", "energy", "hessian_diff", "hessian_order", "iterations")
    return ConvergenceReport(columns, rows, dict(reference=(k_ref, n_ref),
                                                 reference_energy=ref_energy))


def _prolong_state(result, fine):
    psi = dktplate.prolong(result.mesh, result.psi, fine)
    # multipliers: nodal averages along coarse edges, a P1 prolongation
    coarse = result.mesh
    P = np.zeros((fine.num_vertices, 3))
    P[:coarse.num_vertices] = result.p
    levels = fine.level - coarse.level
    mesh = coarse
    for _ in range(levels):
        nv = mesh.num_vertices
        P[nv:nv + len(mesh.edges)] = 0.5 * (P[mesh.edges[:, 0]] + P[mesh.edges[:, 1]])
        mesh = dktplate.red_refine(mesh)
    return psi, P


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def export_surface(psi, mesh, path, fmt=None):
    """Write the deformed surface psi_H(z) as legacy ASCII VTK or OBJ,
    coordinates with 17 significant digits."""
    if fmt is None:
        fmt = os.path.splitext(path)[1].lstrip(".").lower()
    if fmt not in ("vtk", "obj"):
        raise InvalidParameter(f"unknown surface format {fmt!r}")
    X = psi.positions
    tris = mesh.triangles
    lines = []
    if fmt == "vtk":
        lines += ["# vtk DataFile Version 3.0", "homoplate deformed surface", "ASCII",
                  "DATASET POLYDATA", f"POINTS {len(X)} double"]
        lines += [" ".join(f"{c:.17g}" for c in row) for row in X]
        lines.append(f"POLYGONS {len(tris)} {4 * len(tris)}")
        lines += [f"3 {a} {b} {c}" for a, b, c in tris]
    else:
        lines.append("# homoplate deformed surface")
        lines += ["v " + " ".join(f"{c:.17g}" for c in row) for row in X]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in tris]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_surface(path):
    """Vertex positions and triangles of a file written by
    :func:`export_surface`."""
    pts, tris = [], []
    with open(path) as fh:
        lines = fh.read().splitlines()
    if path.endswith(".obj"):
        for ln in lines:
            if ln.startswith("v "):
                pts.append([float(t) for t in ln.split()[1:]])
            elif ln.startswith("f "):
                tris.append([int(t) - 1 for t in ln.split()[1:]])
    else:
        i = next(j for j, ln in enumerate(lines) if ln.startswith("POINTS"))
        nv = int(lines[i].split()[1])
        pts = [[float(t) for t in ln.split()] for ln in lines[i + 1:i + 1 + nv]]
        j = i + 1 + nv
        nt = int(lines[j].split()[1])
        tris = [[int(t) for t in ln.split()[1:]] for ln in lines[j + 1:j + 1 + nt]]
    return np.array(pts), np.array(tris, dtype=np.int64)
