import numpy as np
import pytest
from scipy.spatial import cKDTree

from dtfa import macro
from dtfa.errors import ParameterError
from dtfa.tensor import rotate_stiffness

ELASTIC = {"kappa_d": None}


@pytest.fixture(scope="module")
def small_mesh():
    return macro.gen_open_hole_mesh(target_elems=350)


@pytest.fixture(scope="module")
def elastic_ply():
    return macro.ply_rom(fiber=ELASTIC, matrix=ELASTIC)


@pytest.fixture(scope="module")
def isotropic_ply():
    return macro.ply_rom(fiber=dict(ELASTIC, E=2670.0), matrix=ELASTIC)


def test_default_mesh():
    m = macro.gen_open_hole_mesh(80.0, 18.0, 5.0, 4000)
    assert m.hole.size >= 32
    assert abs(m.n_elements - 4000) <= 0.2 * 4000
    assert m.min_jacobian() > 0
    # hole nodes lie on the circle, grips on the ends
    np.testing.assert_allclose(np.linalg.norm(m.nodes[m.hole], axis=1), 2.5,
                               rtol=1e-12)
    np.testing.assert_allclose(m.nodes[m.left, 0], -40.0)
    np.testing.assert_allclose(m.nodes[m.right, 0], 40.0)
    assert np.abs(m.nodes[:, 1]).max() == pytest.approx(9.0)


def test_mesh_point_symmetry(small_mesh):
    x = small_mesh.nodes
    dist, _ = cKDTree(x).query(-x)
    assert dist.max() <= 1e-9
    c = small_mesh.centroids()
    dist, _ = cKDTree(c).query(-c)
    assert dist.max() <= 1e-9


def test_mesh_is_conforming(small_mesh):
    # every interior edge is shared by exactly two elements
    e = small_mesh.elems
    edges = np.sort(np.stack([e, np.roll(e, -1, axis=1)], axis=-1).reshape(-1, 2),
                    axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    assert set(counts.tolist()) <= {1, 2}
    # boundary edges: the hole plus the closed outer rectangle
    outer = np.sum(counts == 1) - small_mesh.hole.size
    assert small_mesh.meta["n_circ"] == small_mesh.hole.size
    assert outer == 2 * (small_mesh.left.size - 1) + 2 * (
        small_mesh.meta["n_circ"] // 4 + 2 * small_mesh.meta["n_x"])


def test_invalid_geometry():
    with pytest.raises(ParameterError):
        macro.gen_open_hole_mesh(80.0, 18.0, 18.0)
    with pytest.raises(ParameterError):
        macro.gen_open_hole_mesh(80.0, 18.0, 20.0)
    with pytest.raises(ParameterError):
        macro.gen_open_hole_mesh(80.0, 18.0, -1.0)


def test_ply_angle_range(small_mesh, elastic_ply):
    for th in (-1.0, 90.5):
        with pytest.raises(ParameterError):
            macro.MacroModel(small_mesh, elastic_ply, th)


def test_rigid_translation_free_of_force(small_mesh, elastic_ply):
    model = macro.MacroModel(small_mesh, elastic_ply, 30.0)
    st = macro.GaussState.initial(model.G, elastic_ply)
    u = np.tile([0.3, -0.7], small_mesh.n_nodes)
    out = model.evaluate(u, st, tangent=False)
    assert np.abs(model.strains(u)).max() <= 1e-14
    assert np.abs(out["f"]).max() <= 1e-10


def test_uniform_strain_rotated_stiffness(small_mesh, elastic_ply):
    th = 30.0
    model = macro.MacroModel(small_mesh, elastic_ply, th)
    st = macro.GaussState.initial(model.G, elastic_ply)
    e = np.array([1e-4, -3e-5, 2e-5])
    x, y = small_mesh.nodes.T
    u = np.column_stack([e[0] * x + e[2] / np.sqrt(2) * y,
                         e[2] / np.sqrt(2) * x + e[1] * y]).ravel()
    np.testing.assert_allclose(model.strains(u), np.broadcast_to(e, (model.G, 3)),
                               atol=1e-16)
    out = model.evaluate(u, st, tangent=False)
    C = rotate_stiffness(elastic_ply.Lbar, np.radians(th))
    np.testing.assert_allclose(out["sigma"], np.broadcast_to(C @ e, (model.G, 3)),
                               rtol=1e-10)


def test_reactions_balance(small_mesh, elastic_ply):
    res = macro.run_macro(small_mesh, elastic_ply, 45.0, u_max=0.02, steps=2)
    assert res.converged
    for f, g in zip(res.force, res.reaction_left):
        assert abs(f + g) <= 1e-8 * abs(f)


def test_elastic_run_matches_linear_solve(small_mesh, elastic_ply):
    th = 60.0
    res = macro.run_macro(small_mesh, elastic_ply, th, u_max=0.05, steps=3)
    model = macro.MacroModel(small_mesh, elastic_ply, th)
    C = np.broadcast_to(elastic_ply.Lbar, (model.G, 3, 3))
    K = model._stiffness(C).tocsc()
    free, pulled = model.free, model.pulled
    u = np.zeros(model.n_dofs)
    u[pulled] = 0.05
    u[free] = macro._solve(K[free][:, free], -(K[free][:, pulled] @ u[pulled]))
    np.testing.assert_allclose(res.u, u, rtol=1e-10, atol=1e-14)
    f = K @ u
    assert res.force[-1] == pytest.approx(f[pulled].sum(), rel=1e-10)
    np.testing.assert_allclose(res.force, np.array([1, 2, 3]) / 3 * res.force[-1],
                               rtol=1e-10)
    assert all(np.all(h["damage"] == 0.0) for h in res.history)


def test_hole_stress_concentration(isotropic_ply):
    # finite-width isotropic plate: the gross-section factor lies near 3.3
    m = macro.gen_open_hole_mesh(target_elems=2000)
    res = macro.run_macro(m, isotropic_ply, 0.0, u_max=0.01, steps=1)
    model = macro.MacroModel(m, isotropic_ply, 0.0)
    out = model.evaluate(res.u, macro.GaussState.initial(model.G, isotropic_ply),
                         tangent=False)
    sig = out["sigma"].reshape(-1, 4, 3)[..., 0]
    far = sig[np.abs(m.centroids()[:, 0]) > 30].mean()
    kt = sig[m.rim].max() / far
    assert 3.0 <= kt <= 4.0
    # the peak sits at the hole sides, not at the hole ends
    c = m.centroids()[m.rim]
    top = m.rim[np.argmax(sig[m.rim].max(axis=1))]
    assert abs(m.centroids()[top, 0]) < 0.5 * np.abs(c[:, 0]).max()


def test_crack_path_synthetic_band():
    m = macro.gen_open_hole_mesh(target_elems=2000)
    c = m.centroids()
    for ang in (45.0, 0.0, 90.0, -30.0):
        n = np.array([-np.sin(np.radians(ang)), np.cos(np.radians(ang))])
        band = np.abs(c @ n) <= 0.6
        cp = macro.extract_crack_path(m, band.astype(float), 0.9)
        assert not cp.empty
        assert macro.angle_difference(cp.angle, ang) <= 1.0
        # ordered along the band
        t = cp.points @ np.array([n[1], -n[0]])
        assert np.all(np.diff(t) >= 0) or np.all(np.diff(t) <= 0)


def test_crack_path_needs_rim_contact():
    m = macro.gen_open_hole_mesh(target_elems=350)
    assert macro.extract_crack_path(m, np.zeros(m.n_elements)).empty
    c = m.centroids()
    far = (np.abs(c[:, 0] - 30) < 2).astype(float)
    assert macro.extract_crack_path(m, far).empty


def test_angle_helpers():
    assert macro.fit_angle(np.array([[0, 0], [1, 1], [2, 2.0]])) == pytest.approx(45)
    assert macro.fit_angle(np.array([[0, 0], [0, 1.0]])) == 90.0
    assert macro.angle_difference(89.0, -89.0) == pytest.approx(2.0)
    assert macro.angle_difference(10.0, 190.0) == pytest.approx(0.0)


def test_duplicate_angles_reuse_result(small_mesh, elastic_ply):
    rows, results = macro.strength_vs_theta(small_mesh, elastic_ply, [90, 0, 90],
                                            u_max=0.01, steps=1)
    assert rows[0] == rows[2]
    assert set(results) == {0, 90}
    # fibers along the load are stiffer
    assert rows[1]["strength"] > rows[0]["strength"]


def test_damaged_run(small_mesh):
    db = macro.ply_rom()
    res = macro.run_macro(small_mesh, db, 90.0, u_max=0.5, steps=25)
    dmg = np.array([h["damage"] for h in res.history])
    assert np.all((dmg >= 0) & (dmg <= 1 + 1e-12))
    assert dmg[-1].max() > 0.5
    # damage never heals
    wm = np.array([h["omega_matrix"] for h in res.history])
    assert np.all(np.diff(wm, axis=0) >= -1e-12)
    assert res.peak_index < len(res.force) - 1
    assert res.force[-1] < res.peak_force


def test_writers(small_mesh, elastic_ply, tmp_path):
    res = macro.run_macro(small_mesh, elastic_ply, 0.0, u_max=0.01, steps=2)
    path = tmp_path / "f.csv"
    macro.write_force_csv(path, res, ["theta: 0"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# theta: 0"
    assert lines[1] == "step,displacement,force,reaction_left"
    assert float(lines[3].split(",")[2]) == res.force[1]
    vtk = tmp_path / "m.vtk"
    macro.write_vtk(vtk, small_mesh, {"damage": res.history[-1]["damage"]},
                    {"u": res.u})
    text = vtk.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert f"POINTS {small_mesh.n_nodes} double" in text
    assert f"CELLS {small_mesh.n_elements} {5 * small_mesh.n_elements}" in text
    assert text.count("SCALARS damage double 1") == 1
    assert text[-1].count(" ") == 2
