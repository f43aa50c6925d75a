"""Reduced-order database: influence, concentration and homogenized tensors.

For a cluster map with partitions ``i = 1..M`` the partition-average strains
obey::

    eps_i = E_i eps0 + sum_j S_ij mu_j

where ``E_i`` averages the strain caused by a unit macro strain and ``S_ij``
averages the strain in ``i`` caused by a unit eigenstrain in ``j``. Both come
from periodic FE solves sharing one factorization.
"""
import base64
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .damage import DamageParams
from .errors import DiagnosticsError, RomFormatError, StructuralError

log = logging.getLogger(__name__)

SCHEMA = "dtfa-rom"
VERSION = 1
SYM_TOL = 1e-6
TOLERANCES = {"strain_average": 1e-8, "dvorak": 1e-7, "stress_average": 1e-7,
              "symmetry": 1e-8}
_ARRAYS = ("phase", "vf", "L", "E", "B", "S", "Lbar", "Mo",
           "kappa_d", "kappa_f", "damageable")


@dataclass
class RomDatabase:
    """Everything the online solver needs, per partition and global.

    Attributes
    ----------
    phase, vf : (M,) arrays
        Phase id and volume fraction of every partition.
    L : (M, n, n)
        Partition stiffness.
    E : (M, n, n)
        Elastic influence (equal to the strain concentration tensor).
    B : (M, n, n)
        Stress concentration tensors ``L_i E_i Lbar^-1``.
    S : (M, M, n, n)
        Eigen influence tensors, ``S[i, j]``.
    Lbar : (n, n)
        Homogenized stiffness.
    Mo : (M, n, n)
        ``<L S_j>`` per partition.
    kappa_d, kappa_f, damageable : (M,) arrays
        Damage parameters of every partition.
    """
    phase: np.ndarray
    vf: np.ndarray
    L: np.ndarray
    E: np.ndarray
    B: np.ndarray
    S: np.ndarray
    Lbar: np.ndarray
    Mo: np.ndarray
    kappa_d: np.ndarray
    kappa_f: np.ndarray
    damageable: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def n_partitions(self):
        return self.vf.size

    @property
    def ncomp(self):
        return self.Lbar.shape[0]

    @property
    def A(self):
        return self.E

    def damage_params(self, i):
        if not self.damageable[i]:
            return DamageParams.elastic()
        return DamageParams.softening(self.kappa_d[i], self.kappa_f[i])

    def invariants(self):
        return invariant_report(self)


def homogenized_tensors(L_el, E_field, S_fields):
    """``Lbar = <L E>`` and ``Mo_j = <L S_j>`` from element influence fields.

    ``E_field`` has shape (n, n_el, n) with load index first; ``S_fields``
    has shape (M, n, n_el, n). Returned tensors map a unit load (column) to
    the averaged stress (row).
    """
    Lbar = np.einsum("eab,keb->ak", L_el, E_field) / L_el.shape[0]
    scale = max(np.max(np.abs(Lbar)), 1e-300)
    asym = np.max(np.abs(Lbar - Lbar.T)) / scale
    if asym > SYM_TOL:
        raise DiagnosticsError(f"homogenized stiffness asymmetric ({asym:.2e})")
    Lbar = 0.5 * (Lbar + Lbar.T)
    Mo = np.einsum("eab,jkeb->jak", L_el, S_fields) / L_el.shape[0]
    return Lbar, Mo


def concentration_tensors(L_part, E, Lbar):
    """Stress concentration ``B_i = L_i E_i Lbar^-1``."""
    try:
        inv = np.linalg.inv(Lbar)
    except np.linalg.LinAlgError as exc:
        raise StructuralError("homogenized stiffness is singular") from exc
    if not np.all(np.isfinite(inv)) or np.linalg.cond(Lbar) > 1e14:
        raise StructuralError("homogenized stiffness is singular")
    return np.einsum("iab,ibc,cd->iad", L_part, E, inv)


def _rel(a, scale=1.0):
    return float(np.max(np.abs(a)) / scale)


def invariant_report(db):
    """Residuals of the exact identities a database must satisfy."""
    n = db.ncomp
    eye = np.eye(n)
    vf = db.vf[:, None, None]
    Voigt = np.sum(vf * db.L, axis=0)
    Reuss = np.linalg.inv(np.sum(vf * np.linalg.inv(db.L), axis=0))
    scale = np.max(np.abs(db.Lbar))
    eig = np.linalg.eigvalsh(db.Lbar)
    return {
        "strain_average": _rel(np.sum(vf * db.E, axis=0) - eye),
        "dvorak": _rel(db.S.sum(axis=1) - (eye - db.E)),
        "stress_average": _rel(np.sum(vf * db.B, axis=0) - eye),
        "symmetry": _rel(db.Lbar - db.Lbar.T, scale),
        "min_eigenvalue": float(eig[0]),
        "voigt_gap": float(np.linalg.eigvalsh(Voigt - db.Lbar)[0] / scale),
        "reuss_gap": float(np.linalg.eigvalsh(db.Lbar - Reuss)[0] / scale),
        "mo_sum": _rel(db.Mo.sum(axis=0) - (Voigt - db.Lbar), scale),
        "vf_sum": abs(float(db.vf.sum()) - 1.0),
    }


def check_invariants(db, bound_tol=1e-9):
    """Raise :class:`DiagnosticsError` if any identity is violated."""
    rep = invariant_report(db)
    bad = [k for k, tol in TOLERANCES.items() if not rep[k] <= tol]
    if not rep["min_eigenvalue"] > 0:
        bad.append("positive_definite")
    if rep["voigt_gap"] < -bound_tol or rep["reuss_gap"] < -bound_tol:
        bad.append("bounds")
    if not rep["mo_sum"] <= 1e-6:
        bad.append("mo_sum")
    if bad:
        raise DiagnosticsError(f"database invariants violated: {bad} ({rep})")
    return rep


def build_rom(mesh, phases, cmap, dparams=None, provenance=None):
    """Run the offline stage for a mesh and a cluster map.

    Uses ``n * (1 + M)`` back-substitutions against one factorization.
    """
    t0 = time.perf_counter()
    dparams = dparams or {}
    labels = np.asarray(cmap.labels)
    M = cmap.n_partitions
    n = 3
    op = fem.LinearOperator(mesh, phases)
    E_field = op.solve_macro(np.eye(n))
    E = np.transpose(fem.partition_averages(E_field, labels, M), (0, 2, 1))
    mu = np.zeros((M, n, mesh.n_elements, n))
    for j in range(M):
        mu[j, :, labels == j, :] = np.eye(n)[None, :, :]
    S_fields = op.solve_eigenstrain(mu)
    # S[i, j][:, k] = average over i of the strain from unit mu_k in j
    avg = fem.partition_averages(S_fields.reshape(M * n, mesh.n_elements, n),
                                 labels, M)
    S = np.transpose(avg.reshape(M, M, n, n), (0, 1, 3, 2))
    Lbar, Mo = homogenized_tensors(op.L_el, E_field, S_fields)
    L_part = np.array([phases[p] for p in cmap.phase], dtype=float)
    B = concentration_tensors(L_part, E, Lbar)
    kd = np.zeros(M)
    kf = np.zeros(M)
    dmg = np.zeros(M, dtype=bool)
    for i, p in enumerate(cmap.phase):
        dp = dparams.get(int(p))
        if dp is not None and dp.damageable:
            kd[i], kf[i], dmg[i] = dp.kappa_d, dp.kappa_f, True
    db = RomDatabase(np.asarray(cmap.phase, dtype=np.int64),
                     cmap.volume_fractions.astype(float), L_part, E, B, S,
                     Lbar, Mo, kd, kf, dmg, dict(provenance or {}))
    db.provenance["n_partitions"] = int(M)
    check_invariants(db)
    log.info("offline stage: %d partitions, %d solves, %.2f s", M, n * (1 + M),
             time.perf_counter() - t0)
    return db


def _blob(db):
    parts, index, offset = [], {}, 0
    for name in _ARRAYS:
        a = np.ascontiguousarray(getattr(db, name), dtype="<f8")
        parts.append(a.tobytes())
        index[name] = {"shape": list(a.shape), "offset": offset}
        offset += a.nbytes
    return b"".join(parts), index


def rom_to_json(db):
    """Serialize a database: JSON envelope plus base64 little-endian blob."""
    raw, index = _blob(db)
    doc = {"schema": SCHEMA, "version": VERSION,
           "n_partitions": int(db.n_partitions), "ncomp": int(db.ncomp),
           "provenance": db.provenance, "arrays": index,
           "invariants": invariant_report(db),
           "sha256": hashlib.sha256(raw).hexdigest(),
           "blob": base64.b64encode(raw).decode("ascii")}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def rom_from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RomFormatError(f"unreadable database: {exc}") from exc
    if doc.get("schema") != SCHEMA or doc.get("version") != VERSION:
        raise RomFormatError(
            f"unsupported database format {doc.get('schema')} v{doc.get('version')}")
    try:
        raw = base64.b64decode(doc["blob"], validate=True)
    except (KeyError, ValueError) as exc:
        raise RomFormatError("corrupt database blob") from exc
    if hashlib.sha256(raw).hexdigest() != doc.get("sha256"):
        raise RomFormatError("database checksum mismatch")
    arrays = {}
    for name in _ARRAYS:
        spec = doc["arrays"][name]
        count = int(np.prod(spec["shape"], dtype=np.int64))
        a = np.frombuffer(raw, dtype="<f8", count=count, offset=spec["offset"])
        arrays[name] = a.reshape(spec["shape"]).astype(float)
    arrays["phase"] = arrays["phase"].astype(np.int64)
    arrays["damageable"] = arrays["damageable"].astype(bool)
    db = RomDatabase(**arrays, provenance=doc.get("provenance", {}))
    check_invariants(db)
    return db


def write_rom(db, path):
    text = rom_to_json(db)
    with open(path, "w") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode()).hexdigest()


def read_rom(path):
    with open(path) as fh:
        return rom_from_json(fh.read())
