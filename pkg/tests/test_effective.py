import numpy as np
import pytest

from homoplate import effective, microcell, scenarios
from homoplate.errors import InvalidParameter


@pytest.fixture(scope="module")
def stripes_tensor():
    return effective.compute_effective_tensor(scenarios.make_preset("stripes_x").material,
                                              gamma=0.5, n=8)


def test_polarisation_reproduces_quadratic_form(stripes_tensor):
    system = microcell.assemble_cell_system(microcell.build_hex_mesh(8),
                                            scenarios.make_preset("stripes_x").material,
                                            gamma=0.5)
    A = np.array([[0.7, -0.2], [-0.2, 0.4]])
    q = microcell.evaluate_Qh(microcell.solve_corrector(system, A))
    assert stripes_tensor.q(A) == pytest.approx(q, rel=1e-10)


def test_tensor_is_symmetric_positive_definite(stripes_tensor):
    np.testing.assert_array_equal(stripes_tensor.m, stripes_tensor.m.T)
    assert stripes_tensor.is_pd()


def test_entries_round_trip(stripes_tensor):
    again = effective.VoigtTensor.from_entries(stripes_tensor.entries())
    np.testing.assert_array_equal(again.m, stripes_tensor.m)


def test_rotation_is_a_group_action(stripes_tensor):
    a, b = 0.3, 1.1
    twice = effective.rotate_tensor(effective.rotate_tensor(stripes_tensor, a), b)
    once = effective.rotate_tensor(stripes_tensor, a + b)
    np.testing.assert_allclose(twice.m, once.m, atol=1e-14)
    full = effective.rotate_tensor(stripes_tensor, 2 * np.pi)
    np.testing.assert_allclose(full.m, stripes_tensor.m, atol=1e-14)


def test_rotation_matches_rotated_argument(stripes_tensor):
    alpha = 0.7
    c, s = np.cos(alpha), np.sin(alpha)
    R = np.array([[c, -s], [s, c]])
    A = np.array([[1.0, 0.3], [0.3, -2.0]])
    rotated = effective.rotate_tensor(stripes_tensor, alpha)
    assert rotated.q(A) == pytest.approx(stripes_tensor.q(R.T @ A @ R), rel=1e-13)


def test_quarter_turn_swaps_stripe_directions():
    n = 8
    Cx = effective.compute_effective_tensor(scenarios.make_preset("stripes_x").material, n=n)
    Cy = effective.compute_effective_tensor(scenarios.make_preset("stripes_y").material, n=n)
    np.testing.assert_allclose(effective.rotate_tensor(Cx, np.pi / 2).m, Cy.m, atol=1e-12)


def test_gamma_grid():
    g = effective.gamma_grid(32)
    assert len(g) == 32
    assert g[0] == pytest.approx(0.1) and g[-1] == pytest.approx(10.0)
    ratios = g[1:] / g[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)


def test_gamma_sweep_rejects_nonpositive():
    with pytest.raises(InvalidParameter):
        effective.gamma_sweep(microcell.homogeneous_material(), [1.0, 0.0], 2)


def test_tensor_csv_round_trip(tmp_path, stripes_tensor):
    path = tmp_path / "t.csv"
    effective.write_tensor_csv(path, [stripes_tensor], ("gamma",), [0.5])
    with open(path) as fh:
        assert fh.readline().strip() == "gamma,C11,C22,C33,C12,C13,C23"
    keys, rows = effective.read_tensor_csv(path)
    assert keys == [(0.5,)]
    np.testing.assert_array_equal(rows[0].m, stripes_tensor.m)


def test_cache_memory_and_disk(tmp_path, monkeypatch):
    monkeypatch.setenv(effective.CACHE_ENV, str(tmp_path))
    mat = scenarios.make_preset("pwaffine").material
    cache = effective.TensorCache()
    C1 = cache.get_or_compute(mat, (0.5, 0.5), 1.0, 4)
    C2 = cache.get_or_compute(mat, (0.2, 0.9), 1.0, 4)
    assert cache.misses == 1 and cache.hits == 1
    assert C1 is C2
    assert len(list(tmp_path.glob("tensor-*.txt"))) == 1
    fresh = effective.TensorCache()
    C3 = fresh.get_or_compute(mat, (0.5, 0.5), 1.0, 4)
    assert fresh.hits == 1 and fresh.misses == 0
    np.testing.assert_array_equal(C3.m, C1.m)


def test_radial_gamma_profile():
    prof = effective.GammaProfile.radial()
    x = np.array([[0.2, 0.5], [1.0, 0.0]])
    np.testing.assert_allclose(prof(x), [1.0, 0.1], atol=1e-14)


def test_tensor_field_follows_rotation():
    preset = scenarios.make_preset("radial")
    pts = np.array([[[0.5, 0.5], [0.5, 0.9]]])
    field = effective.build_tensor_field(preset, pts, effective.GammaProfile.constant(1.0), 4)
    base = effective.compute_effective_tensor(preset.material, n=4)
    for i, x in enumerate(pts[0]):
        expected = effective.rotate_tensor(base, float(preset.angle(x)))
        np.testing.assert_allclose(field.m[0, i], expected.m, atol=1e-14)


def test_diagonal_layers_match_rotated_stripes():
    # layers along the diagonal have normal period 1/sqrt(2), so they behave
    # like axis aligned stripes at gamma * sqrt(2) turned by 45 degrees
    gamma, n = 0.1, 32
    diag = effective.compute_effective_tensor(scenarios.make_preset("diagonal").material,
                                              gamma=gamma, n=n)
    stripes = effective.compute_effective_tensor(scenarios.make_preset("stripes_x").material,
                                                 gamma=gamma * np.sqrt(2.0), n=n)
    turned = effective.rotate_tensor(stripes, -np.pi / 4)
    np.testing.assert_allclose(diag.m, turned.m, atol=3e-3)
