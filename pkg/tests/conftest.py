"""Shared fixtures: reference phases and small periodic cells."""
import numpy as np
import pytest

from dtfa import clustering, fem, offline
from dtfa import microstructure as ms
from dtfa.damage import DamageParams
from dtfa.tensor import isotropic_stiffness

E_FIBER, E_MATRIX, NU = 80000.0, 2670.0, 0.3
KD, KF = 0.009, 0.0315

# one summary line per acceptance criterion, filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture(scope="session")
def phases():
    return {ms.FIBER: isotropic_stiffness(E_FIBER, NU),
            ms.MATRIX: isotropic_stiffness(E_MATRIX, NU)}


@pytest.fixture(scope="session")
def dparams():
    return {ms.FIBER: DamageParams.elastic(),
            ms.MATRIX: DamageParams.softening(KD, KF)}


@pytest.fixture(scope="session")
def rve8():
    return ms.rasterize(ms.generate_rsa(8, 0.41, seed=7), 32)


@pytest.fixture(scope="session")
def mesh8(rve8):
    return fem.build_mesh(rve8)


@pytest.fixture(scope="session")
def rom8(mesh8, phases, dparams):
    snap = clustering.elastic_snapshots(mesh8, phases)
    cmap = clustering.cluster(snap, mesh8.phase, 8, seed=0)
    return offline.build_rom(mesh8, phases, cmap, dparams)


@pytest.fixture(scope="session")
def homogeneous_rom(phases, dparams):
    p = ms.homogeneous(8)
    mesh = fem.build_mesh(p)
    cmap = clustering.ClusterMap(np.zeros(mesh.n_elements, dtype=np.int64),
                                 np.array([ms.MATRIX]))
    return offline.build_rom(mesh, phases, cmap, dparams)


def laminate_setup(phases, nx=8, vf=0.5):
    """Two-strip laminate (strips along y) clustered by phase."""
    p = ms.laminate(nx, vf)
    mesh = fem.build_mesh(p)
    labels = np.where(mesh.phase == ms.FIBER, 0, 1)
    cmap = clustering.ClusterMap(labels, np.array([ms.FIBER, ms.MATRIX]))
    return p, mesh, cmap


def series_strains(phases, vf, eps_macro, mu=None):
    """Closed-form strip strains of a laminate with layers normal to x.

    The tangential strain eps22 is shared by both strips, the tractions
    sigma11 and sigma12 are continuous and the strip strains average to the
    macro strain. ``mu`` is an optional per-strip eigenstrain, shape (2, 3).
    """
    L = [np.asarray(phases[ms.FIBER]), np.asarray(phases[ms.MATRIX])]
    v = np.array([vf, 1 - vf])
    mu = np.zeros((2, 3)) if mu is None else np.asarray(mu, dtype=float)
    e = np.asarray(eps_macro, dtype=float)
    # unknowns: eps11 and the shear component of both strips
    A = np.zeros((4, 4))
    rhs = np.zeros(4)
    for row, c in enumerate((0, 2)):
        for k, sign in ((0, 1.0), (1, -1.0)):
            A[row, 2 * k] = sign * L[k][c, 0]
            A[row, 2 * k + 1] = sign * L[k][c, 2]
            rhs[row] -= sign * (L[k][c, 1] * e[1] - L[k][c] @ mu[k])
    A[2, 0], A[2, 2], rhs[2] = v[0], v[1], e[0]
    A[3, 1], A[3, 3], rhs[3] = v[0], v[1], e[2]
    x = np.linalg.solve(A, rhs)
    return np.array([[x[0], e[1], x[1]], [x[2], e[1], x[3]]])


def damaged_states(db, count, seed, steps=12):
    """Committed damaged states with a loading increment attached.

    Each state is reached by a proportional ramp in a random direction to a
    random amplitude beyond the matrix initiation strain; the returned
    increment continues that ramp.
    """
    from dtfa import online
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        amp = rng.uniform(0.5, 2.5) * KD
        prog = online.ramp_program(d, amp, steps)
        curve = online.run_rve_program(db, prog)
        if not curve.converged or not np.any(curve.state.omega > 0):
            continue
        out.append((curve.state, prog[0] * rng.uniform(0.2, 1.0)))
    return out
