"""Open-hole ply under grip tension with the reduced-order law at every point.

The specimen is an ``L x W`` rectangle centred at the origin with a central
hole of diameter ``d``. Around the hole an O-grid maps rays from the circle
to a ``W x W`` square; two structured blocks extend the square to the grips.
Every 2x2 Gauss point carries a material-point state of :mod:`dtfa.online`
expressed in the ply frame (fiber direction rotated by ``theta`` from ``x``).
"""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.sparse.csgraph import connected_components

from . import _kernels_py, clustering, fem, kernels, offline, online
from .damage import DamageParams
from .errors import ParameterError, StructuralError
from .microstructure import FIBER, MATRIX, laminate
from .tensor import isotropic_stiffness, rotation_matrix

log = logging.getLogger(__name__)

GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
RADIAL_GRADING = 1.25


@dataclass
class MacroMesh:
    """Quadrilateral mesh of the open-hole specimen (mm)."""
    nodes: np.ndarray
    elems: np.ndarray
    left: np.ndarray
    right: np.ndarray
    hole: np.ndarray
    rim: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_elements(self):
        return self.elems.shape[0]

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    def centroids(self):
        return self.nodes[self.elems].mean(axis=1)

    def jacobians(self):
        """Jacobian determinant at every Gauss point, shape (n_el, 4)."""
        return gauss_data(self)[1]

    def min_jacobian(self):
        return float(self.jacobians().min())


def _square_point(k, q, a):
    """Point ``k`` of ``8q`` equally spaced on the perimeter of ``[-a, a]^2``."""
    side, r = divmod((k + q) % (8 * q), 2 * q)
    s = -a + a * r / q
    return [(a, s), (-s, a), (-a, -s), (s, -a)][side]


def _layout(L, W, d, q):
    h = W / (2 * q)
    n_r = max(2, int(round((W - d) / 2 / h * RADIAL_GRADING)))
    n_x = max(1, int(round((L - W) / 2 / h)))
    return n_r, n_x, 8 * q * n_r + 4 * q * n_x


def gen_open_hole_mesh(L=80.0, W=18.0, d=5.0, target_elems=4000):
    """O-grid open-hole mesh with about ``target_elems`` quadrilaterals."""
    if not (L > 0 and W > 0 and d > 0):
        raise ParameterError("specimen dimensions must be positive")
    if d >= W:
        raise ParameterError(f"hole diameter {d} must be smaller than width {W}")
    if L < W:
        raise ParameterError("specimen length must be at least its width")
    q = min(range(4, 200),
            key=lambda qq: abs(_layout(L, W, d, qq)[2] - target_elems))
    n_r, n_x, total = _layout(L, W, d, q)
    if abs(total - target_elems) > 0.2 * target_elems:
        raise ParameterError(f"cannot reach {target_elems} elements "
                             f"(closest {total})")
    a, n_c, R = 0.5 * W, 8 * q, 0.5 * d
    sq = np.array([_square_point(k, q, a) for k in range(n_c)])
    circ = R * sq / np.linalg.norm(sq, axis=1)[:, None]
    t = (np.arange(n_r + 1) / n_r) ** RADIAL_GRADING
    ring = circ[None] + t[:, None, None] * (sq - circ)[None]
    nodes = [ring.reshape(-1, 2)]
    ring_id = np.arange((n_r + 1) * n_c).reshape(n_r + 1, n_c)
    j, k = np.meshgrid(np.arange(n_r), np.arange(n_c), indexing="ij")
    k1 = (k + 1) % n_c
    elems = [np.stack([ring_id[j, k], ring_id[j + 1, k], ring_id[j + 1, k1],
                       ring_id[j, k1]], axis=-1).reshape(-1, 4)]
    count = ring_id.size
    hx = (0.5 * L - a) / n_x
    ys = a * np.arange(-q, q + 1) / q
    grips = []
    for sign, side_k in ((1, np.arange(-q, q + 1) % n_c),
                         (-1, np.arange(5 * q, 3 * q - 1, -1))):
        cols = [ring_id[n_r, side_k]]
        for i in range(1, n_x + 1):
            x = sign * (a + i * hx)
            nodes.append(np.column_stack([np.full(ys.size, x), ys]))
            cols.append(np.arange(count, count + ys.size))
            count += ys.size
        cols = np.array(cols)
        i, r = np.meshgrid(np.arange(n_x), np.arange(2 * q), indexing="ij")
        if sign > 0:
            quad = [cols[i, r], cols[i + 1, r], cols[i + 1, r + 1], cols[i, r + 1]]
        else:
            quad = [cols[i + 1, r], cols[i, r], cols[i, r + 1], cols[i + 1, r + 1]]
        elems.append(np.stack(quad, axis=-1).reshape(-1, 4))
        grips.append(cols[-1])
    mesh = MacroMesh(np.concatenate(nodes), np.concatenate(elems),
                     grips[1], grips[0], ring_id[0].copy(), np.arange(n_c),
                     {"L": L, "W": W, "d": d, "n_circ": n_c, "n_rad": n_r,
                      "n_x": n_x, "target_elems": target_elems})
    if mesh.min_jacobian() <= 0:
        raise StructuralError("open-hole mesh has inverted elements")
    return mesh


def gauss_data(mesh):
    """Mandel B matrices (n_el, 4, 3, 8) and ``w det J`` (n_el, 4)."""
    X = mesh.nodes[mesh.elems]
    Bs, dets = [], []
    for eta in GAUSS:
        for xi in GAUSS:
            dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
            deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
            dN = np.stack([dxi, deta])
            J = np.einsum("an,enb->eab", dN, X)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            grad = np.linalg.solve(J, np.broadcast_to(dN, (X.shape[0], 2, 4)))
            B = np.zeros((X.shape[0], 3, 8))
            B[:, 0, 0::2] = grad[:, 0]
            B[:, 1, 1::2] = grad[:, 1]
            B[:, 2, 0::2] = grad[:, 1] / np.sqrt(2.0)
            B[:, 2, 1::2] = grad[:, 0] / np.sqrt(2.0)
            Bs.append(B)
            dets.append(det)
    return np.stack(Bs, axis=1), np.stack(dets, axis=1)


PLY_FIBER = {"E": 43050.0, "nu": 0.3, "kappa_d": 0.014, "kappa_f": 0.028}
PLY_MATRIX = {"E": 2670.0, "nu": 0.3, "kappa_d": 0.0227, "kappa_f": 0.0455}


def damage_params(mat):
    """:class:`DamageParams` from a material mapping (elastic if no kappa)."""
    if mat.get("kappa_d") is None:
        return DamageParams.elastic()
    return DamageParams.softening(mat["kappa_d"], mat["kappa_f"])


def ply_rom(vf=0.41, fiber=None, matrix=None, ny=100):
    """Two-partition database of a ply section with fibers along axis 1.

    ``fiber`` and ``matrix`` map ``E, nu, kappa_d, kappa_f`` (``kappa_d``
    None for an elastic phase). The section is a ``4 x ny`` pixel laminate,
    so ``vf`` is resolved to ``1 / ny``.
    """
    fiber = dict(PLY_FIBER, **(fiber or {}))
    matrix = dict(PLY_MATRIX, **(matrix or {}))
    p = laminate(4, vf, ny=ny, along="x")
    mesh = fem.build_mesh(p)
    phases = {FIBER: isotropic_stiffness(fiber["E"], fiber["nu"]),
              MATRIX: isotropic_stiffness(matrix["E"], matrix["nu"])}
    dparams = {FIBER: damage_params(fiber), MATRIX: damage_params(matrix)}
    snap = clustering.elastic_snapshots(mesh, phases)
    cmap = clustering.cluster(snap, mesh.phase, 2, 0)
    return offline.build_rom(mesh, phases, cmap, dparams,
                             {"kind": "ply", "ny": ny, "vf": vf})


@dataclass
class GaussState:
    """Material state at all Gauss points (ply frame)."""
    eps: np.ndarray
    omega: np.ndarray
    kappa: np.ndarray
    eps0: np.ndarray

    @classmethod
    def initial(cls, G, db):
        M, n = db.n_partitions, db.ncomp
        return cls(np.zeros((G, M, n)), np.zeros((G, M)), np.zeros((G, M)),
                   np.zeros((G, n)))


class MacroModel:
    """Assembly of the macro problem for one ply angle."""

    def __init__(self, mesh, db, theta_deg, psi_rule=None, thickness=0.1):
        if not 0.0 <= theta_deg <= 90.0:
            raise ParameterError(f"ply angle must lie in [0, 90], got {theta_deg}")
        self.mesh, self.db, self.thickness = mesh, db, float(thickness)
        self.theta = float(theta_deg)
        self.Q = rotation_matrix(np.radians(theta_deg))
        self.psi_rule = psi_rule or online.PsiRule()
        self.B, self.wdet = gauss_data(mesh)
        ne = mesh.n_elements
        self.G = 4 * ne
        dofs = np.empty((ne, 8), dtype=np.int64)
        dofs[:, 0::2] = 2 * mesh.elems
        dofs[:, 1::2] = 2 * mesh.elems + 1
        self.dofs = dofs
        self.rows = np.repeat(dofs, 8, axis=1).ravel()
        self.cols = np.tile(dofs, (1, 8)).ravel()
        nd = 2 * mesh.n_nodes
        fixed = np.concatenate([2 * mesh.left, 2 * mesh.left + 1,
                                2 * mesh.right, 2 * mesh.right + 1])
        self.pulled = 2 * mesh.right
        self.fixed = np.unique(fixed)
        self.free = np.setdiff1d(np.arange(nd), self.fixed)
        self.n_dofs = nd

    def strains(self, u):
        """Global strain at every Gauss point, shape (G, 3)."""
        ue = u[self.dofs]
        return np.einsum("egab,eb->ega", self.B, ue).reshape(self.G, 3)

    def evaluate(self, u, committed, tangent=True):
        db = self.db
        eps_p = self.strains(u) @ self.Q
        deps = eps_p - committed.eps0
        eps, w, k, its, ok, X, _ = kernels.solve_batch(
            db.E, db.S, db.kappa_d, db.kappa_f, db.damageable, committed.eps,
            committed.omega, committed.kappa, deps)
        psi, _ = self.psi_rule(eps_p)
        _, _, Dbar = online.macro_damage(w, db, psi)
        sig_p = online.macro_stress(eps_p, eps, w, db, Dbar)
        out = {"state": GaussState(eps, w, k, eps_p), "f": self._forces(sig_p),
               "sigma": sig_p @ self.Q.T, "Dbar": Dbar, "ok": bool(np.all(ok)),
               "iters": int(its.max())}
        if tangent:
            C_p = online.macro_tangent(eps_p, eps, w, committed.kappa, X, db,
                                       self.psi_rule)
            out["K"] = self._stiffness(C_p)
        return out

    def evaluate_frozen(self, u, committed, W, psi):
        """Response with partition damage ``W`` and mixing ``psi`` held fixed.

        The law is then affine in ``u`` and ``K`` is its exact stiffness.
        """
        db = self.db
        eps_p = self.strains(u) @ self.Q
        eps, dlam = online.frozen_partition_strains(
            committed.eps, committed.omega, eps_p - committed.eps0, W, db)
        _, _, Dbar = online.macro_damage(W, db, psi)
        sig_p = online.macro_stress(eps_p, eps, W, db, Dbar)
        return {"eps_p": eps_p, "eps": eps, "Dbar": Dbar,
                "sigma": sig_p @ self.Q.T, "f": self._forces(sig_p),
                "K": self._stiffness(online.frozen_tangent(W, dlam, db, Dbar))}

    def _forces(self, sig_p):
        ne = self.mesh.n_elements
        sig = (sig_p @ self.Q.T).reshape(ne, 4, 3)
        fe = np.einsum("egab,ega,eg->eb", self.B, sig,
                       self.thickness * self.wdet)
        return np.bincount(self.dofs.ravel(), weights=fe.ravel(),
                           minlength=self.n_dofs)

    def _stiffness(self, C_p):
        ne = self.mesh.n_elements
        C = np.einsum("ab,gbc,dc->gad", self.Q, C_p, self.Q)
        Ke = np.einsum("egai,egab,egbj,eg->eij", self.B, C.reshape(ne, 4, 3, 3),
                       self.B, self.thickness * self.wdet)
        return sp.csr_matrix((Ke.ravel(), (self.rows, self.cols)),
                             shape=(self.n_dofs, self.n_dofs))

    def reactions(self, f):
        """Total x reaction on the pulled and the fixed grip."""
        m = self.mesh
        return float(f[2 * m.right].sum()), float(f[2 * m.left].sum())


def damage_measure(Dbar):
    """Largest eigenvalue magnitude of the macroscopic damage tensor."""
    return np.max(np.abs(np.linalg.eigvals(Dbar)), axis=-1)


@dataclass
class MacroResult:
    theta: float
    displacement: list
    force: list
    reaction_left: list
    history: list
    u: np.ndarray
    converged: bool
    notes: list
    peak_index: int = 0

    @property
    def peak_force(self):
        return max(self.force) if self.force else 0.0


def _solve(K, rhs):
    try:
        return sla.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(rhs)
    except RuntimeError as exc:
        raise StructuralError(f"singular macro tangent: {exc}") from exc


def _snapshot(model, state, Dbar, sigma):
    ne = model.mesh.n_elements
    phase = model.db.phase

    def per_element(vals):
        return vals.reshape(ne, 4).mean(axis=1)

    wm = state.omega[:, phase == MATRIX].max(axis=1)
    wf = state.omega[:, phase == FIBER].max(axis=1) \
        if np.any(phase == FIBER) else np.zeros(model.G)
    return {"damage": per_element(damage_measure(Dbar)),
            "omega_matrix": per_element(wm), "omega_fiber": per_element(wf),
            "sigma": sigma.reshape(ne, 4, 3).mean(axis=1)}


def _newton_increment(model, u, committed, K, U, dU, tol, max_iter):
    """Newton on the consistent tangent; returns the accepted trial or None."""
    free, pulled = model.free, model.pulled
    u_try = u.copy()
    u_try[pulled] = U + dU
    rhs = -(K[free][:, pulled] @ np.full(pulled.size, dU))
    u_try[free] += _solve(K[free][:, free], rhs)
    for it in range(max_iter):
        trial = model.evaluate(u_try, committed)
        if not trial["ok"]:
            return None
        r = trial["f"][free]
        scale = max(np.abs(trial["f"][pulled]).sum(), 1e-12)
        if it > 0 and np.linalg.norm(r) <= tol * scale:
            trial["u"], trial["iters"] = u_try, it
            return trial
        u_try[free] += _solve(trial["K"][free][:, free], -r)
        if not np.all(np.isfinite(u_try)):
            return None
    return None


def _staggered_increment(model, u, committed, U, dU, tol, max_sweeps):
    """Alternate exact frozen-damage solves and monotone damage updates.

    Passes snap-back states that Newton cannot reach; returns the accepted
    trial or None when the damage does not settle within ``max_sweeps``.
    """
    db, free, pulled = model.db, model.free, model.pulled
    u_try = u.copy()
    u_try[pulled] = U + dU
    W = committed.omega.copy()
    psi = model.psi_rule(committed.eps0)[0]
    for sweep in range(1, max_sweeps + 1):
        out = model.evaluate_frozen(u_try, committed, W, psi)
        u_try[free] += _solve(out["K"][free][:, free], -out["f"][free])
        out = model.evaluate_frozen(u_try, committed, W, psi)
        kappa, w_new, _, _ = _kernels_py.damage_state(
            out["eps"], committed.kappa, db.kappa_d, db.kappa_f, db.damageable)
        w_new = np.maximum(W, w_new)
        psi_new = model.psi_rule(out["eps_p"])[0]
        change = max(float(np.abs(w_new - W).max()),
                     float(np.abs(psi_new - psi).max()))
        if change <= tol:
            state = GaussState(out["eps"], W.copy(),
                               online.consistent_kappa(kappa, W, db),
                               out["eps_p"])
            return {"state": state, "f": out["f"], "sigma": out["sigma"],
                    "Dbar": out["Dbar"], "K": out["K"], "u": u_try,
                    "iters": sweep}
        W, psi = w_new, psi_new
    return None


def run_macro(mesh, db, theta, psi_rule=None, u_max=1.0, steps=50,
              thickness=0.1, tol=1e-6, max_iter=25, max_halving=8,
              stop_ratio=0.25, solver="auto", max_sweeps=2000, callback=None):
    """Displacement-controlled grip tension of the open-hole ply.

    The left grip is clamped, the right grip moves by up to ``u_max`` (mm)
    along ``x`` with zero transverse motion. ``solver`` selects how each
    increment is solved: ``"newton"`` (consistent tangent), ``"staggered"``
    (frozen-damage sweeps) or ``"auto"`` (Newton, then staggered sweeps when
    Newton fails). Failed increments are halved up to ``max_halving`` times,
    after which the partial result is returned with ``converged=False``. The
    run stops once the reaction has dropped below ``stop_ratio`` times its
    peak.
    """
    if solver not in ("auto", "newton", "staggered"):
        raise ParameterError(f"unknown macro solver {solver!r}")
    model = MacroModel(mesh, db, theta, psi_rule, thickness)
    committed = GaussState.initial(model.G, db)
    u = np.zeros(model.n_dofs)
    K = model.evaluate(u, committed)["K"]
    disp, force, left, history, notes = [], [], [], [], []
    U, dU_full = 0.0, u_max / steps
    dU, depth = dU_full, 0
    converged_run = True
    while U < u_max * (1 - 1e-12):
        dU = min(dU, u_max - U)
        trial = None
        if solver in ("auto", "newton"):
            trial = _newton_increment(model, u, committed, K, U, dU, tol,
                                      max_iter)
        if trial is None and solver in ("auto", "staggered"):
            trial = _staggered_increment(model, u, committed, U, dU, tol,
                                         max_sweeps)
        if trial is None:
            if depth >= max_halving:
                converged_run = False
                notes.append(f"increment at U={U:.5g} failed after "
                             f"{max_halving} halvings")
                log.warning(notes[-1])
                break
            dU *= 0.5
            depth += 1
            continue
        u, committed, K = trial["u"], trial["state"], trial["K"]
        U += dU
        right_f, left_f = model.reactions(trial["f"])
        disp.append(U)
        force.append(right_f)
        left.append(left_f)
        history.append(_snapshot(model, committed, trial["Dbar"],
                                 trial["sigma"]))
        log.info("theta=%g U=%.4f F=%.4f it=%d", theta, U, right_f,
                 trial["iters"])
        if callback is not None:
            callback(model, U, trial)
        if depth > 0:
            dU, depth = min(2 * dU, dU_full), depth - 1
        peak = max(force)
        if peak > 0 and right_f < stop_ratio * peak:
            break
    peak_index = int(np.argmax(force)) if force else 0
    return MacroResult(float(theta), disp, force, left, history, u,
                       converged_run, notes, peak_index)


def _element_graph(mesh, select):
    idx = np.flatnonzero(select)
    inc = sp.csr_matrix((np.ones(4 * idx.size), (np.repeat(np.arange(idx.size), 4),
                                                 mesh.elems[idx].ravel())),
                        shape=(idx.size, mesh.n_nodes))
    return idx, (inc @ inc.T).tocsr()


@dataclass
class CrackPath:
    elements: np.ndarray
    points: np.ndarray
    angle: float

    @property
    def empty(self):
        return self.elements.size == 0


def fit_angle(points):
    """Direction of the least-squares line through ``points``, in (-90, 90]."""
    c = points - points.mean(axis=0)
    _, vec = np.linalg.eigh(c.T @ c)
    v = vec[:, -1]
    ang = np.degrees(np.arctan2(v[1], v[0]))
    ang = (ang + 90.0) % 180.0 - 90.0
    return 90.0 if ang == -90.0 else float(ang)


def angle_difference(a, b):
    """Smallest difference between two line directions (degrees)."""
    d = abs(a - b) % 180.0
    return min(d, 180.0 - d)


def extract_crack_path(mesh, measure, threshold=0.9):
    """Super-threshold elements connected to the hole rim and their direction.

    Elements are connected when they share a node. The polyline runs through
    the element centroids ordered along the fitted direction.
    """
    measure = np.asarray(measure, dtype=float)
    sel = measure >= threshold
    if not sel[mesh.rim].any():
        return CrackPath(np.array([], dtype=np.int64), np.zeros((0, 2)), float("nan"))
    idx, A = _element_graph(mesh, sel)
    _, comp = connected_components(A, directed=False)
    rim_comp = np.unique(comp[np.isin(idx, mesh.rim)])
    elems = idx[np.isin(comp, rim_comp)]
    pts = mesh.centroids()[elems]
    if elems.size < 2:
        return CrackPath(elems, pts, float("nan"))
    ang = fit_angle(pts)
    v = np.array([np.cos(np.radians(ang)), np.sin(np.radians(ang))])
    order = np.argsort(pts @ v, kind="stable")
    return CrackPath(elems[order], pts[order], ang)


def splitting_onset(mesh, result, threshold=0.5):
    """First step with matrix damage in the hole-tangent bands, or None.

    The bands are the strips ``|y|`` near ``d/2`` in which splitting cracks
    parallel to ``x`` start at the hole.
    """
    d = mesh.meta["d"]
    c = mesh.centroids()
    h = np.pi * d / mesh.meta["n_circ"]
    band = (np.abs(np.abs(c[:, 1]) - 0.5 * d) <= 2 * h) & (np.abs(c[:, 0]) <= d)
    for k, snap in enumerate(result.history):
        if np.any(snap["omega_matrix"][band] >= threshold):
            return k
    return None


def strength_vs_theta(mesh, db, thetas, psi_rule=None, **kw):
    """Peak nominal stress (peak reaction over gross section) per ply angle."""
    area = mesh.meta["W"] * kw.get("thickness", 0.1)
    rows, results = [], {}
    for th in thetas:
        if th not in results:
            results[th] = run_macro(mesh, db, th, psi_rule, **kw)
        res = results[th]
        rows.append({"theta": float(th), "strength": res.peak_force / area,
                     "peak_displacement": res.displacement[res.peak_index]
                     if res.displacement else 0.0,
                     "converged": bool(res.converged)})
    return rows, results


def write_force_csv(path, result, header=None):
    with open(path, "w", newline="") as fh:
        for line in header or ():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "displacement", "force", "reaction_left"])
        for k, (u, f, g) in enumerate(zip(result.displacement, result.force,
                                          result.reaction_left), start=1):
            w.writerow([k, f"{u:.17g}", f"{f:.17g}", f"{g:.17g}"])


def write_vtk(path, mesh, cell_data=None, point_vectors=None, title="dtfa"):
    """Legacy-VTK unstructured grid of the macro mesh."""
    nn, ne = mesh.n_nodes, mesh.n_elements
    lines = ["# vtk DataFile Version 3.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {nn} double"]
    lines += [f"{x:.10g} {y:.10g} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {ne} {5 * ne}")
    lines += ["4 " + " ".join(map(str, e)) for e in mesh.elems]
    lines.append(f"CELL_TYPES {ne}")
    lines += ["9"] * ne
    if cell_data:
        lines.append(f"CELL_DATA {ne}")
        for name, vals in cell_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.10g}" for v in np.asarray(vals, dtype=float)]
    if point_vectors:
        lines.append(f"POINT_DATA {nn}")
        for name, vals in point_vectors.items():
            lines.append(f"VECTORS {name} double")
            lines += [f"{a:.10g} {b:.10g} 0" for a, b in np.asarray(vals).reshape(nn, 2)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
