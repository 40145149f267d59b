import numpy as np
import pytest

from homoplate import dktplate, isosolver, scenarios
from homoplate.errors import InvalidParameter


@pytest.fixture(scope="module")
def small_problem():
    scenario = scenarios.MacroScenario(
        name="cantilever", preset=scenarios.make_preset("homogeneous"),
        gamma=scenarios.effective.GammaProfile.constant(1.0), k=3, n=2,
        bc={"kind": "cantilever_b", "side": "left"}, force=(0.0, 0.0, -5.0),
        options=isosolver.SolverOptions())
    return scenarios.solve_scenario(scenario)


def test_lumped_masses_sum_to_area():
    mesh = dktplate.refine_unit_square(3)
    m = isosolver.lumped_masses(mesh)
    assert m.sum() == pytest.approx(1.0)
    assert np.all(m > 0)


def test_identity_is_feasible():
    mesh = dktplate.refine_unit_square(2)
    g, J = isosolver.constraint_eval(dktplate.DKTDeformation.identity(mesh))
    assert np.abs(g).max() == 0.0
    assert J.shape == (3 * mesh.num_vertices, 9 * mesh.num_vertices)


def test_constraint_values_on_a_sheared_map():
    mesh = dktplate.refine_unit_square(0)
    psi = dktplate.DKTDeformation.identity(mesh)
    psi.U[:, 1] = [2.0, 0.0, 0.0]  # d1 psi
    psi.U[:, 2] = [1.0, 1.0, 1.0]  # d2 psi
    g, _ = isosolver.constraint_eval(psi)
    np.testing.assert_allclose(g, np.tile([3.0, 2.0, 2.0], (4, 1)))


def test_constraint_jacobian_and_hessian_by_differences(rng):
    mesh = dktplate.refine_unit_square(1)
    verts = np.arange(2, mesh.num_vertices)
    masses = isosolver.lumped_masses(mesh)[verts]
    U = rng.normal(size=(mesh.num_vertices, 3, 3))
    d = rng.normal(size=U.shape)
    h = 1e-5

    def c(V):
        g, _ = isosolver.constraint_eval(V, verts, masses)
        return isosolver.weighted_constraints(g, masses)

    _, J = isosolver.constraint_eval(U, verts, masses)
    fd = (c(U + h * d) - c(U - h * d)) / (2 * h)
    np.testing.assert_allclose(J @ d.ravel(), fd, rtol=1e-8, atol=1e-12)

    p = rng.normal(size=(len(verts), 3))
    Hc = isosolver.constraint_hessian(p, verts, masses, mesh.num_vertices)
    _, Jp = isosolver.constraint_eval(U + h * d, verts, masses)
    _, Jm = isosolver.constraint_eval(U - h * d, verts, masses)
    fd_h = (Jp.T @ p.ravel() - Jm.T @ p.ravel()) / (2 * h)
    np.testing.assert_allclose(Hc @ d.ravel(), fd_h, rtol=1e-8, atol=1e-12)


def test_boundary_data_validation():
    with pytest.raises(InvalidParameter):
        isosolver.BoundaryData([0, 0], np.zeros((2, 3)), np.zeros((2, 3, 2)))
    with pytest.raises(InvalidParameter):
        isosolver.BoundaryData([0, 1], np.zeros((2, 3)), np.zeros((1, 3, 2)))
    assert isosolver.BoundaryData.empty().isometry_defect() == 0.0


def test_non_isometric_boundary_rejected():
    mesh = dktplate.refine_unit_square(2)
    space = dktplate.DKTSpace(mesh)
    C = np.broadcast_to(np.eye(3), space.weights.shape + (3, 3)).copy()
    energy = dktplate.assemble_energy(mesh, C, np.zeros(3), space)
    grads = np.repeat(np.array([[[1.1, 0.0], [0.0, 1.0], [0.0, 0.0]]]), 1, axis=0)
    bc = isosolver.BoundaryData([0], np.zeros((1, 3)), grads)
    with pytest.raises(InvalidParameter):
        isosolver.solve_saddle(energy, bc)


def test_options_validation():
    with pytest.raises(InvalidParameter):
        isosolver.SolverOptions(tol=0.0)
    with pytest.raises(InvalidParameter):
        isosolver.SolverOptions(perturb="some")


def test_initial_guess_is_seeded_and_respects_boundary():
    mesh = dktplate.refine_unit_square(2)
    bc = scenarios.boundary_data(mesh, {"kind": "compression_a"})
    a = isosolver.initial_guess(mesh, bc, seed=3)
    b = isosolver.initial_guess(mesh, bc, seed=3)
    c = isosolver.initial_guess(mesh, bc, seed=4)
    assert np.array_equal(a.U, b.U)
    assert not np.array_equal(a.U, c.U)
    np.testing.assert_array_equal(a.U[bc.vertices, 0], bc.values)
    free = np.setdiff1d(np.arange(mesh.num_vertices), bc.vertices)
    delta = a.U[free] - dktplate.DKTDeformation.identity(mesh).U[free]
    assert 0 < np.abs(delta).max() <= 1e-3


def test_saddle_point_quality(small_problem):
    res = small_problem
    rep = res.report
    assert rep.converged
    assert rep.stationarity <= 1e-12
    g, _ = isosolver.constraint_eval(res.psi)
    assert np.abs(g).max() <= 1e-10
    # Dirichlet data kept exactly
    bc = scenarios.boundary_data(res.mesh, res.scenario.bc)
    np.testing.assert_array_equal(res.psi.U[bc.vertices, 0], bc.values)
    # loaded downwards, the plate bends down and the energy is below the flat state
    assert res.mean_deflection < 0
    assert rep.energy < 0.0
    energies = [row["energy"] for row in rep.history]
    assert len(energies) == rep.iterations + 1


def test_restart_from_solution_converges_immediately(small_problem):
    res = small_problem
    bc = scenarios.boundary_data(res.mesh, res.scenario.bc)
    _, _, rep = isosolver.solve_saddle(res.energy, bc, res.scenario.options,
                                       psi0=res.psi, p0=res.p)
    assert rep.iterations <= 1
    assert rep.energy == pytest.approx(res.report.energy, rel=1e-12)


def test_dof_file_round_trip(tmp_path, small_problem):
    res = small_problem
    path = tmp_path / "state.txt"
    isosolver.write_dofs(path, res.psi, res.p)
    with open(path) as fh:
        header = fh.readline()
    assert header.startswith("#") and "d2psi3" in header and "p12" in header
    psi, p = isosolver.read_dofs(path, res.mesh)
    np.testing.assert_array_equal(psi.U, res.psi.U)
    np.testing.assert_array_equal(p, res.p)
    with pytest.raises(InvalidParameter):
        isosolver.read_dofs(path, dktplate.refine_unit_square(2))


def test_log_columns(tmp_path, small_problem):
    path = tmp_path / "log.csv"
    isosolver.write_log(path, small_problem.report)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(isosolver.LOG_COLUMNS)
    assert len(lines) == small_problem.report.iterations + 2
