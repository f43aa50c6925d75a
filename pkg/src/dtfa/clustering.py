"""Snapshot-based partitioning of the unit cell.

Every element gets a response vector built from its strain (elastic scheme)
or damage eigenstrain (eigen scheme) under the canonical load cases. The
vectors are clustered by k-means separately in each phase, so that no
partition mixes fiber and matrix.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .errors import DiagnosticsError, ParameterError
from .microstructure import FIBER, MATRIX, write_pgm
from .tensor import SQRT2

log = logging.getLogger(__name__)

# unit macro strains of the 2D load cases: tension 11, tension 22, shear 12
LOAD_CASES = {
    "L1": np.array([1.0, 0.0, 0.0]),
    "L2": np.array([0.0, 1.0, 0.0]),
    "L4": np.array([0.0, 0.0, SQRT2 * 0.5]),
}
MAX_LLOYD = 500


@dataclass
class SnapshotMatrix:
    """Element response vectors, one row per element.

    Columns hold the tensor components ``(11, 22, 12)`` of each load case in
    turn.
    """
    data: np.ndarray
    scheme: str
    cases: tuple = tuple(LOAD_CASES)
    amplitudes: dict = field(default_factory=dict)

    @property
    def n_rows(self):
        return self.data.shape[0]


def _as_mesh(m):
    return m if isinstance(m, fem.PeriodicMesh) else fem.build_mesh(m)


def _tensor_components(eps):
    out = np.array(eps, dtype=float, copy=True)
    out[..., 2] /= SQRT2
    return out


def elastic_snapshots(m, phases, theta=1e-4, dparams=None):
    """Element strains under small uniaxial and shear macro strains.

    Parameters
    ----------
    m : PeriodicMesh or PhaseMap
    phases : dict
        Stiffness per phase id.
    theta : float
        Load magnitude; the result is linear in it.
    dparams : dict, optional
        Damage parameters; when given, a snapshot that would start damage
        raises :class:`ParameterError`.
    """
    mesh = _as_mesh(m)
    op = fem.LinearOperator(mesh, phases)
    loads = theta * np.array(list(LOAD_CASES.values()))
    strain = op.solve_macro(loads)
    if dparams:
        kd, _, dmg = fem._element_damage_params(mesh, dparams)
        kmax = np.max(fem.max_principal(strain), axis=0)
        if np.any(dmg & (kmax > kd)):
            raise ParameterError(
                f"snapshot load {theta:g} starts damage; use a smaller amplitude")
    rows = np.concatenate([_tensor_components(s) for s in strain], axis=1)
    return SnapshotMatrix(rows, "elastic", amplitudes={c: theta for c in LOAD_CASES})


def eigen_snapshots(m, phases, dparams, amplitude=None, n_steps=50):
    """Damage eigenstrain ``omega * eps`` per element at a developed state.

    Each load case is ramped until the average stress along the loading
    component passes its peak or the largest element damage reaches 0.5,
    whichever comes first.
    """
    mesh = _as_mesh(m)
    damageable = [p for p in dparams.values() if p.damageable]
    if not damageable:
        raise ParameterError("eigen snapshots need at least one damageable phase")
    if amplitude is None:
        amplitude = max(p.kappa_f for p in damageable)
    ramp = np.linspace(0.0, amplitude, n_steps + 1)[1:]
    cols, used = [], {}
    for name, direction in LOAD_CASES.items():
        comp = int(np.argmax(np.abs(direction)))
        state = {"prev": -np.inf}

        def trigger(k, point, omega, strain, comp=comp, state=state):
            s = point.sigma[comp]
            hit = s < state["prev"] or point.max_omega >= 0.5
            state["prev"] = s
            return hit

        res = fem.solve_damage_reference(mesh, phases, dparams, direction, ramp,
                                         callback=trigger)
        used[name] = float(ramp[len(res.points) - 1])
        mu = res.omega[:, None] * res.strain
        cols.append(_tensor_components(mu))
        log.info("eigen snapshot %s at amplitude %.4g", name, used[name])
    return SnapshotMatrix(np.concatenate(cols, axis=1), "eigen", amplitudes=used)


def objective(h, labels, squared=False):
    """Sum of distances from rows to their cluster means.

    ``squared=False`` gives the sum of Euclidean norms, ``True`` the
    within-cluster sum of squares minimized by Lloyd iterations.
    """
    h = np.asarray(h, dtype=float)
    labels = np.asarray(labels)
    total = 0.0
    for c in np.unique(labels):
        rows = h[labels == c]
        d = rows - rows.mean(axis=0)
        sq = np.sum(d * d, axis=1)
        total += float(np.sum(sq) if squared else np.sum(np.sqrt(sq)))
    return total


def _sq_dist(x, c):
    d = x[:, None, :] - c[None, :, :]
    return np.einsum("nkd,nkd->nk", d, d)


def _plusplus(x, k, rng):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        tot = d2.sum()
        idx = rng.choice(n, p=d2 / tot) if tot > 0 else rng.integers(n)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _distinct_groups(x):
    scale = max(float(np.max(np.abs(x))), 1e-300)
    key = np.round(x / (scale * 1e-10))
    _, inverse = np.unique(key, axis=0, return_inverse=True)
    return inverse.ravel()


def _split_duplicates(groups, k):
    """Labels with exactly ``k`` clusters when there are fewer distinct rows."""
    labels = groups.copy()
    n_lab = labels.max() + 1
    while n_lab < k:
        counts = np.bincount(labels)
        big = int(np.argmax(counts))
        member = np.flatnonzero(labels == big)[-1]
        labels[member] = n_lab
        n_lab += 1
    return labels


def _lloyd(x, k, rng):
    centers = _plusplus(x, k, rng)
    labels = np.argmin(_sq_dist(x, centers), axis=1)
    prev = np.inf
    for it in range(MAX_LLOYD):
        counts = np.bincount(labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            resid = np.sum((x - centers[labels]) ** 2, axis=1)
            resid[np.bincount(labels, minlength=k)[labels] <= 1] = -1.0
            far = int(np.argmax(resid))
            labels[far] = c
        sums = np.zeros((k, x.shape[1]))
        np.add.at(sums, labels, x)
        centers = sums / np.bincount(labels, minlength=k)[:, None]
        obj = float(np.sum((x - centers[labels]) ** 2))
        if obj > prev * (1.0 + 1e-12) + 1e-300:
            raise DiagnosticsError(f"k-means objective increased at iteration {it}")
        prev = obj
        new = np.argmin(_sq_dist(x, centers), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels, prev


def kmeans(h, k, seed, n_init=4):
    """Cluster rows of ``h`` into ``k`` groups (squared-distance Lloyd).

    Seeding is k-means++ from ``numpy.random.default_rng(seed)``; the best of
    ``n_init`` restarts is kept. Labels are renumbered in order of first
    appearance so that equal partitions give equal label arrays.
    """
    x = np.asarray(h, dtype=float)
    n = x.shape[0]
    if k < 1 or k > n:
        raise ParameterError(f"cannot form {k} clusters from {n} rows")
    groups = _distinct_groups(x)
    if groups.max() + 1 <= k:
        labels = _split_duplicates(groups, k)
    else:
        rng = np.random.default_rng(seed)
        best = None
        for _ in range(n_init):
            labels, obj = _lloyd(x, k, rng)
            if best is None or obj < best[1]:
                best = (labels, obj)
        labels = best[0]
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first, kind="stable")
    remap = np.empty(k, dtype=np.int64)
    remap[np.unique(labels)[order]] = np.arange(k)
    return remap[labels]


@dataclass
class ClusterMap:
    """Assignment of elements to partitions (0-based in memory)."""
    labels: np.ndarray
    phase: np.ndarray
    scheme: str = "elastic"
    seed: int = 0

    @property
    def n_partitions(self):
        return self.phase.size

    @property
    def counts(self):
        return np.bincount(self.labels, minlength=self.n_partitions)

    @property
    def volume_fractions(self):
        return self.counts / self.labels.size

    def check(self, element_phase=None):
        if np.any(self.counts == 0):
            raise DiagnosticsError("cluster map has an empty partition")
        if element_phase is not None:
            if np.any(self.phase[self.labels] != np.asarray(element_phase)):
                raise DiagnosticsError("partition mixes phases")
        return self

    def to_json(self):
        doc = {"scheme": self.scheme, "seed": self.seed,
               "n_partitions": int(self.n_partitions),
               "assignment": (self.labels + 1).tolist(),
               "partitions": [{"id": i + 1, "phase": int(self.phase[i]),
                               "count": int(c),
                               "vf": float(c) / self.labels.size}
                              for i, c in enumerate(self.counts)]}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        labels = np.asarray(doc["assignment"], dtype=np.int64) - 1
        phase = np.array([p["phase"] for p in doc["partitions"]], dtype=np.int64)
        return cls(labels, phase, doc.get("scheme", "elastic"),
                   doc.get("seed", 0)).check()


def phase_budget(m, vf_fiber, has_fiber=True, has_matrix=True):
    """Split ``m`` partitions between fiber and matrix."""
    if not has_fiber:
        return 0, m
    if not has_matrix:
        return m, 0
    if m < 2:
        raise ParameterError("two phases need at least two partitions")
    nf = min(max(1, int(round(m * vf_fiber))), m - 1)
    return nf, m - nf


def cluster(snap, element_phase, m, seed, fallback=None, n_init=4):
    """Phase-by-phase k-means into ``m`` partitions in total.

    Fiber partitions come first. ``fallback`` supplies rows for a phase whose
    snapshot rows are all zero (fibers under the eigen scheme).
    """
    element_phase = np.asarray(element_phase)
    n = element_phase.size
    if not 1 <= m <= n:
        raise ParameterError(f"number of partitions {m} outside [1, {n}]")
    data = snap.data if isinstance(snap, SnapshotMatrix) else np.asarray(snap)
    fib = element_phase == FIBER
    mat = ~fib
    nf, nm = phase_budget(m, fib.mean(), fib.any(), mat.any())
    labels = np.empty(n, dtype=np.int64)
    phase = []
    offset = 0
    for sel, k, pid in ((fib, nf, FIBER), (mat, nm, MATRIX)):
        if k == 0:
            continue
        rows = data[sel]
        if fallback is not None and not np.any(rows):
            fb = fallback.data if isinstance(fallback, SnapshotMatrix) else fallback
            rows = np.asarray(fb)[sel]
        if k > rows.shape[0]:
            raise ParameterError(f"phase {pid}: {k} partitions for "
                                 f"{rows.shape[0]} elements")
        labels[sel] = offset + kmeans(rows, k, seed, n_init)
        # matrix elements of several phase ids keep their own id per partition
        sub_phase = np.zeros(k, dtype=np.int64)
        sub_phase[labels[sel] - offset] = element_phase[sel]
        phase.extend(sub_phase.tolist())
        offset += k
    cmap = ClusterMap(labels, np.array(phase, dtype=np.int64),
                      getattr(snap, "scheme", "elastic"), seed)
    return cmap.check(element_phase)


def write_cluster_pgm(path, cmap, nx, ny=None):
    ny = nx if ny is None else ny
    write_pgm(path, cmap.labels.reshape(ny, nx) + 1, max(1, cmap.n_partitions))
