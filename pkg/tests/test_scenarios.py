import glob
import os

import numpy as np
import pytest

from conftest import CONFIG_DIR
from homoplate import dktplate, isosolver, scenarios
from homoplate.errors import InvalidParameter


@pytest.mark.parametrize("preset_id,expected", [
    ("homogeneous", 1.0),
    ("pwaffine", 0.5),
    ("stripes_x", 0.5),
    ("stripes_y", 0.5),
    ("radial", 1.0 / 3.0),
    ("diagonal", 0.5),
])
def test_hard_fractions(preset_id, expected):
    assert scenarios.hard_fraction(scenarios.make_preset(preset_id), n=192) == \
        pytest.approx(expected, abs=2e-3)


def test_truss_fraction_varies_along_x1():
    preset = scenarios.make_preset("truss")
    assert not preset.constant
    fr = [scenarios.hard_fraction(preset, (x, 0.5), n=96) for x in (0.0, 0.5, 1.0)]
    assert all(0.0 < f < 1.0 for f in fr)
    assert len(set(np.round(fr, 6))) > 1


def test_preset_values():
    y = np.array([[0.1, 0.5], [0.5, 0.1], [0.3, 0.9]])
    x = (0.5, 0.5)
    np.testing.assert_array_equal(scenarios.preset_v("stripes_x", x, y), [0.0, 1.0, 1.0])
    np.testing.assert_array_equal(scenarios.preset_v("stripes_y", x, y), [1.0, 0.0, 0.0])
    np.testing.assert_allclose(scenarios.preset_v("pwaffine", x, y), [0.2, 1.0, 0.6])
    # band |y' - (1, 0)|_1 in (1/4, 3/4): 1 - y1 + y2
    np.testing.assert_array_equal(scenarios.preset_v("diagonal", x, y), [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(
        scenarios.preset_v("diagonal", x, [[0.5, 0.5], [0.1, 0.1], [0.9, 0.0]]), [0.0, 0.0, 0.0])


def test_radial_angle():
    preset = scenarios.make_preset("radial")
    assert preset.rotated
    assert preset.angle(np.array([1.0, 0.5])) == pytest.approx(0.0)
    assert preset.angle(np.array([0.0, 1.0])) == pytest.approx(np.pi / 2)


def test_unknown_preset():
    with pytest.raises(InvalidParameter):
        scenarios.make_preset("honeycomb")
    with pytest.raises(InvalidParameter):
        scenarios.make_preset("homogeneous", scale=-1.0)


def test_scale_multiplies_tensor():
    a = scenarios.effective.compute_effective_tensor(scenarios.make_preset("pwaffine").material,
                                                     n=4)
    b = scenarios.effective.compute_effective_tensor(
        scenarios.make_preset("pwaffine", scale=0.5).material, n=4)
    np.testing.assert_allclose(b.m, 0.5 * a.m, rtol=1e-12, atol=1e-15)


def _configs():
    return sorted(glob.glob(os.path.join(CONFIG_DIR, "*.toml")))


def test_configs_present():
    names = {os.path.basename(p)[:-5] for p in _configs()}
    for required in ("table1_micro", "table2_a", "table2_b", "stripes_tensor",
                     "diagonal_tensor", "pwaffine_gamma_sweep", "homogeneous_tensor"):
        assert required in names


@pytest.mark.parametrize("path", _configs(), ids=lambda p: os.path.basename(p))
def test_shipped_configs_validate(path):
    cfg = scenarios.load_config(path)
    assert cfg["name"] == os.path.basename(path)[:-5]
    scenarios.preset_from_config(cfg)
    scenarios.gamma_from_config(cfg)
    if cfg["kind"] in ("solve", "study-twoscale"):
        sc = scenarios.MacroScenario.from_config(cfg)
        mesh = dktplate.refine_unit_square(2, sc.diagonal)
        bc = scenarios.boundary_data(mesh, sc.bc)
        assert bc.isometry_defect() == 0.0


def test_config_validation_errors(tmp_path):
    base = 'kind = "solve"\n[material]\npreset = "pwaffine"\n'
    cases = {
        "version.toml": "schema_version = 2\n" + base,
        "kind.toml": 'schema_version = 1\nkind = "dance"\n[material]\npreset = "pwaffine"\n',
        "preset.toml": 'schema_version = 1\nkind = "solve"\n[material]\npreset = "x"\n',
        "bc.toml": "schema_version = 1\n" + base + '[boundary]\nkind = "glued"\n',
    }
    for name, text in cases.items():
        p = tmp_path / name
        p.write_text(text)
        with pytest.raises(InvalidParameter):
            scenarios.load_config(p)


def test_config_hash_is_stable():
    cfg = scenarios.load_config(os.path.join(CONFIG_DIR, "table2_a.toml"))
    h1 = scenarios.config_hash(cfg, "material", "gamma")
    cfg["solver"]["tol"] = 1e-8
    assert scenarios.config_hash(cfg, "material", "gamma") == h1
    cfg["gamma"]["value"] = 2.0
    assert scenarios.config_hash(cfg, "material", "gamma") != h1


def test_compression_boundary_shift():
    mesh = dktplate.refine_unit_square(2)
    bc = scenarios.boundary_data(mesh, {"kind": "compression_a", "shift": 0.1875})
    x = mesh.vertices[bc.vertices]
    left = x[:, 0] == 0.0
    np.testing.assert_allclose(bc.values[left, 0], 0.1875)
    np.testing.assert_allclose(bc.values[~left, 0], 1.0 - 0.1875)
    np.testing.assert_array_equal(bc.values[:, 2], 0.0)


def test_clamped_patch_selects_vertices():
    mesh = dktplate.refine_unit_square(3)
    bc = scenarios.boundary_data(mesh, {"kind": "clamped_patch", "rect": (0.0, 0.25, 0.375, 0.625)})
    x = mesh.vertices[bc.vertices]
    assert len(bc.vertices) == 3 * 3
    assert x[:, 0].max() <= 0.25 and x[:, 1].min() >= 0.375
    with pytest.raises(InvalidParameter):
        scenarios.boundary_data(mesh, {"kind": "clamped_patch", "rect": (0.51, 0.52, 0.51, 0.52)})


def test_observed_orders():
    np.testing.assert_allclose(scenarios.observed_orders([1.0, 0.25, 0.0625]), [2.0, 2.0])


def test_micro_study_rows():
    rep = scenarios.micro_convergence_study(scenarios.make_preset("pwaffine").material, 1.0,
                                            [2, 4], 8)
    assert rep.columns == ("h", "n", "tensor_diff", "tensor_order")
    assert [r["n"] for r in rep.rows] == [2, 4]
    assert rep.rows[0]["tensor_diff"] > rep.rows[1]["tensor_diff"] > 0
    with pytest.raises(InvalidParameter):
        scenarios.micro_convergence_study(scenarios.make_preset("pwaffine").material, 1.0,
                                          [3], 8)


def test_twoscale_study_small(tmp_path):
    sc = scenarios.MacroScenario(
        "b", scenarios.make_preset("homogeneous"), scenarios.effective.GammaProfile.constant(1.0),
        2, 2, {"kind": "cantilever_b"}, (0.0, 0.0, 5.0), isosolver.SolverOptions())
    store = scenarios.ReferenceStore(str(tmp_path))
    rep = scenarios.twoscale_convergence_study(sc, [(1, 2), (2, 4)], (3, 8), store=store)
    assert [r["k"] for r in rep.rows] == [1, 2]
    assert np.isfinite(rep.meta["reference_energy"])
    assert len(list(tmp_path.glob("reference-*.txt"))) == 1
    # second run reads the stored reference and reproduces the differences
    again = scenarios.twoscale_convergence_study(sc, [(1, 2), (2, 4)], (3, 8), store=store)
    for a, b in zip(rep.rows, again.rows):
        assert a["hessian_diff"] == b["hessian_diff"]


def test_surface_export_round_trip(tmp_path):
    mesh = dktplate.refine_unit_square(2)
    psi = dktplate.DKTDeformation.identity(mesh)
    psi.U[:, 0, 2] = np.sin(mesh.vertices[:, 0]) / 3.0
    for fmt in ("vtk", "obj"):
        path = str(tmp_path / f"s.{fmt}")
        scenarios.export_surface(psi, mesh, path)
        X, tris = scenarios.read_surface(path)
        np.testing.assert_array_equal(X, psi.positions)
        np.testing.assert_array_equal(tris, mesh.triangles)
    with pytest.raises(InvalidParameter):
        scenarios.export_surface(psi, mesh, str(tmp_path / "s.stl"))
