import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import laminate_setup
from dtfa import clustering, fem
from dtfa import microstructure as ms
from dtfa.damage import DamageParams, omega
from dtfa.errors import DiagnosticsError, ParameterError


def test_homogeneous_rows_identical(phases):
    snap = clustering.elastic_snapshots(ms.homogeneous(6), phases)
    assert np.allclose(snap.data, snap.data[0], atol=1e-18)


def test_laminate_two_distinct_rows(phases):
    _, mesh, _ = laminate_setup(phases)
    snap = clustering.elastic_snapshots(mesh, phases)
    rows = np.unique(np.round(snap.data / np.abs(snap.data).max(), 10), axis=0)
    assert rows.shape[0] == 2
    # tension along the strips: the strip direction strain is uniform
    l2 = snap.data[:, 3:6]
    assert np.allclose(l2[:, 1], l2[0, 1], rtol=1e-12)


def test_snapshot_shape(mesh8, phases):
    snap = clustering.elastic_snapshots(mesh8, phases)
    assert snap.data.shape == (mesh8.n_elements, 9)


def test_elastic_snapshot_must_not_damage(mesh8, phases, dparams):
    with pytest.raises(ParameterError):
        clustering.elastic_snapshots(mesh8, phases, theta=0.05, dparams=dparams)


def test_eigen_snapshots_need_damageable_phase(phases):
    elastic = {ms.FIBER: DamageParams.elastic(), ms.MATRIX: DamageParams.elastic()}
    with pytest.raises(ParameterError):
        clustering.eigen_snapshots(ms.homogeneous(4, ms.FIBER), phases, elastic)


def test_eigen_snapshots_homogeneous_uniform(phases, dparams):
    snap = clustering.eigen_snapshots(ms.homogeneous(4), phases, dparams,
                                      n_steps=20)
    assert np.allclose(snap.data, snap.data[0], rtol=1e-9, atol=1e-15)
    mu11 = snap.data[0, 0]
    assert mu11 > 0
    eps11 = snap.amplitudes["L1"]
    w = DamageParams.softening(0.009, 0.0315)
    assert mu11 == pytest.approx(omega(eps11, w) * eps11, rel=1e-9)


def test_eigen_snapshots_fibers_zero(mesh8, phases, dparams):
    snap = clustering.eigen_snapshots(mesh8, phases, dparams, n_steps=20)
    fib = mesh8.phase == ms.FIBER
    assert np.all(snap.data[fib] == 0.0)
    assert np.any(snap.data[~fib] != 0.0)


def test_one_partition_per_phase(mesh8, phases):
    snap = clustering.elastic_snapshots(mesh8, phases)
    cmap = clustering.cluster(snap, mesh8.phase, 2, seed=0)
    assert set(cmap.phase.tolist()) == {ms.FIBER, ms.MATRIX}
    for i, pid in enumerate(cmap.phase):
        assert np.array_equal(cmap.labels == i, mesh8.phase == pid)


def _brute_force_best(x):
    n, best = len(x), (np.inf, None)
    for mask in itertools.product((0, 1), repeat=n - 1):
        lab = np.array((0,) + mask)
        if lab.min() == lab.max():
            continue
        cost = clustering.objective(x, lab, squared=True)
        if cost < best[0] - 1e-12:
            best = (cost, lab)
    return best[1]


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 4), st.integers(2, 4), st.integers(0, 2 ** 32 - 1))
def test_separated_groups_recovered(na, nb, seed):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(0, 0.1, (na, 3)), rng.normal(10, 0.1, (nb, 3))])
    lab = clustering.kmeans(x, 2, seed=0)
    ref = _brute_force_best(x)
    same = lambda a, b: np.array_equal(a, b) or np.array_equal(a, 1 - b)
    assert same(lab, ref)


def test_objective_examples():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10, 9))
    assert clustering.objective(x, np.arange(10)) == 0.0
    same = np.tile(x[0], (6, 1))
    assert clustering.objective(same, clustering.kmeans(same, 3, seed=1)) == 0.0
    lab = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2, 0])
    ref = 0.0
    for k in range(3):
        members = [x[i] for i in range(10) if lab[i] == k]
        c = sum(members) / len(members)
        for m in members:
            ref += np.sqrt(np.sum((m - c) ** 2))
    assert clustering.objective(x, lab) == pytest.approx(ref, rel=1e-12)


def test_duplicate_rows_fill_singletons():
    x = np.array([[0.0], [0.0], [1.0], [1.0]])
    lab = clustering.kmeans(x, 3, seed=0)
    assert len(np.unique(lab)) == 3
    assert clustering.objective(x, lab) == 0.0


def test_kmeans_deterministic_and_canonical():
    x = np.random.default_rng(5).normal(size=(60, 4))
    a = clustering.kmeans(x, 5, seed=2)
    b = clustering.kmeans(x, 5, seed=2)
    assert np.array_equal(a, b)
    assert a[0] == 0
    _, first = np.unique(a, return_index=True)
    assert np.all(np.diff(a[np.sort(first)]) == 1)


@settings(max_examples=20, deadline=None)
@given(arrays(float, (30, 3), elements=st.floats(-5, 5)), st.integers(1, 6))
def test_kmeans_no_empty_cluster(x, k):
    lab = clustering.kmeans(x, k, seed=0)
    assert lab.shape == (30,)
    assert set(np.unique(lab)) == set(range(k))


def test_too_many_partitions(mesh8, phases):
    snap = clustering.elastic_snapshots(mesh8, phases)
    with pytest.raises(ParameterError):
        clustering.cluster(snap, mesh8.phase, mesh8.n_elements + 1, seed=0)
    with pytest.raises(ParameterError):
        clustering.kmeans(np.zeros((3, 2)), 4, seed=0)


def test_cluster_map_json_round_trip(mesh8, phases):
    snap = clustering.elastic_snapshots(mesh8, phases)
    cmap = clustering.cluster(snap, mesh8.phase, 8, seed=0)
    back = clustering.ClusterMap.from_json(cmap.to_json())
    assert np.array_equal(back.labels, cmap.labels)
    assert np.array_equal(back.phase, cmap.phase)
    assert back.volume_fractions.sum() == pytest.approx(1.0)
    cmap.check(mesh8.phase)


def test_cluster_map_check_flags_mixing():
    cmap = clustering.ClusterMap(np.array([0, 0, 1]), np.array([1, 2]))
    with pytest.raises(DiagnosticsError):
        cmap.check(np.array([1, 2, 2]))
    with pytest.raises(DiagnosticsError):
        clustering.ClusterMap(np.array([0, 0]), np.array([1, 2])).check()
