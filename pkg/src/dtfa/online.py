"""Material-point driver of the damage-aware transformation field analysis.

Per macro strain increment the partition strain increments are found by
Newton's method (see :mod:`dtfa._kernels_py` for the equations). The
partition damage then yields the macroscopic damage tensor as a mix of the
uniform-strain and uniform-stress estimates::

    D_eps   = sum_i v_i omega_i B_i^T
    D_sig   = sum_i v_i omega_i A_i^T
    D       = psi D_eps + (1 - psi) D_sig

and the macro stress ``(I - D) Lbar eps0 + sum_i (1 - omega_i) Mo_i mu_i``
with the partition eigenstrains ``mu_i = omega_i eps_i``.
"""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels_py, kernels
from .damage import Strengths, hashin_fiber, hashin_matrix, psi as psi_mix
from .errors import ConvergenceError, DiagnosticsError
from .tensor import SQRT2

log = logging.getLogger(__name__)

TOL = 1e-10
MAX_ITER = 50
MAX_BISECT = 8


@dataclass
class TfaState:
    """Committed state of one material point."""
    eps: np.ndarray
    omega: np.ndarray
    kappa: np.ndarray
    eps0: np.ndarray
    sigma: np.ndarray
    Dbar: np.ndarray
    psi: float = 0.0
    step: int = 0

    @classmethod
    def initial(cls, db):
        M, n = db.n_partitions, db.ncomp
        return cls(np.zeros((M, n)), np.zeros(M), np.zeros(M), np.zeros(n),
                   np.zeros(n), np.zeros((n, n)))

    @property
    def mu(self):
        return self.omega[:, None] * self.eps


@dataclass
class StepReport:
    iterations: int
    residual: float
    converged: bool
    sigma: np.ndarray
    Dbar_diag: np.ndarray


class PsiRule:
    """Mixing weight between the uniform-strain and uniform-stress damage.

    Either a fixed value or Hashin factors evaluated on the macro strain.
    """

    def __init__(self, value=0.0, strengths=None):
        self.value = float(value)
        self.strengths = strengths

    def __call__(self, eps0):
        """``psi`` and its gradient with respect to ``eps0`` (batched)."""
        eps0 = np.asarray(eps0, dtype=float)
        if self.strengths is None:
            return (np.full(eps0.shape[:-1], self.value),
                    np.zeros(eps0.shape))
        s = self.strengths
        rf = hashin_fiber(eps0, s)
        rm = hashin_matrix(eps0, s)
        x1, x2, x3 = eps0[..., 0], eps0[..., 1], eps0[..., 2]
        z = np.zeros_like(x1)
        e11 = s.e11 or np.inf
        e22 = s.e22 or np.inf
        e12 = s.e12 or np.inf
        # the shear tensor component is x3 / sqrt(2)
        drf = np.stack([2 * x1 / e11 ** 2, z, x3 / e12 ** 2], axis=-1)
        drm = np.stack([z, 2 * x2 / e22 ** 2, x3 / e12 ** 2], axis=-1)
        tot = rf + rm
        safe = np.where(tot > 0, tot, 1.0)
        grad = np.where((tot > 0)[..., None],
                        (rm[..., None] * drf - rf[..., None] * drm)
                        / (safe * safe)[..., None], 0.0)
        return psi_mix(rf, rm), grad


def _rom_args(db):
    return (db.E, db.S, db.kappa_d, db.kappa_f, db.damageable)


def residual(state, lam, deps0, db):
    """Residual of the partition equations at trial increments ``lam``."""
    psi, _, _ = _kernels_py.residual_and_jacobian(
        np.asarray(lam, dtype=float)[None], *_rom_args(db), state.eps[None],
        state.omega[None], state.kappa[None], np.asarray(deps0, dtype=float)[None])
    return psi[0].reshape(db.n_partitions, db.ncomp)


def tangent(state, lam, deps0, db):
    """Jacobian of :func:`residual` with respect to ``lam`` (flattened)."""
    _, J, _ = _kernels_py.residual_and_jacobian(
        np.asarray(lam, dtype=float)[None], *_rom_args(db), state.eps[None],
        state.omega[None], state.kappa[None], np.asarray(deps0, dtype=float)[None])
    return J[0]


def macro_damage(omega, db, psi):
    """``(D_eps, D_sig, D)`` for partition damage ``omega`` (batched)."""
    omega = np.asarray(omega, dtype=float)
    wv = omega * db.vf
    D_eps = np.einsum("...i,iba->...ab", wv, db.B)
    D_sig = np.einsum("...i,iba->...ab", wv, db.E)
    psi = np.asarray(psi, dtype=float)[..., None, None]
    return D_eps, D_sig, psi * D_eps + (1.0 - psi) * D_sig


def check_damage_spectrum(D, tol=1e-9):
    """Flag macroscopic damage with eigenvalues outside ``[0, 1]``."""
    ev = np.linalg.eigvals(D).real
    return bool(np.all(ev >= -tol) and np.all(ev <= 1.0 + tol))


def macro_stress(eps0, eps, omega, db, Dbar):
    """Macro stress from the committed partition state (batched)."""
    mu = omega[..., None] * eps
    s = np.einsum("...ab,bc,...c->...a", -Dbar, db.Lbar, eps0)
    s += eps0 @ db.Lbar.T
    s += np.einsum("...i,iab,...ib->...a", 1.0 - omega, db.Mo, mu)
    return s


def partition_stress(eps, omega, db):
    """Volume average of the partition stresses ``(1 - omega_i) L_i eps_i``."""
    sig = np.einsum("iab,...ib->...ia", db.L, eps)
    return np.einsum("i,...i,...ia->...a", db.vf, 1.0 - omega, sig)


def _slopes(eps, kappa_n, db):
    """``d omega / d eps`` per partition (zero when history is frozen)."""
    _, _, slope, g = _kernels_py.damage_state(eps, kappa_n, db.kappa_d,
                                              db.kappa_f, db.damageable)
    return slope[..., None] * g


def macro_tangent(eps0, eps, omega, kappa_n, dlam, db, psi_rule):
    """Consistent ``d sigma / d eps0`` for converged states (batched).

    ``dlam`` is the sensitivity of the partition strains to the macro strain
    increment returned by the kernel; ``kappa_n`` is the history at the start
    of the increment.
    """
    n = db.ncomp
    dw = np.einsum("...ia,...iab->...ib", _slopes(eps, kappa_n, db), dlam)
    psi, dpsi = psi_rule(eps0)
    D_eps, D_sig, Dbar = macro_damage(omega, db, psi)
    C = (np.eye(n) - Dbar) @ db.Lbar
    s_L = eps0 @ db.Lbar.T
    W = psi[..., None, None, None] * db.B.transpose(0, 2, 1) \
        + (1.0 - psi)[..., None, None, None] * db.E.transpose(0, 2, 1)
    # d(D) s_L: damage evolution and mixing-weight changes
    dD_sL = np.einsum("i,...iab,...b,...ik->...ak", db.vf, W, s_L, dw)
    dD_sL += np.einsum("...ab,...b,...k->...ak", D_eps - D_sig, s_L, dpsi)
    mu = omega[..., None] * eps
    dmu = omega[..., None, None] * dlam + eps[..., :, None] * dw[..., None, :]
    C = C - dD_sL
    C += np.einsum("...i,iab,...ibk->...ak", 1.0 - omega, db.Mo, dmu)
    C -= np.einsum("iab,...ib,...ik->...ak", db.Mo, mu, dw)
    return C


def frozen_partition_strains(eps_n, omega_n, deps0, W, db):
    """Partition strains with damage held at ``W`` (batched).

    With frozen damage the partition equations are linear; returns the
    strains ``eps`` (..., M, 3) and their sensitivity ``d eps / d eps0``
    (..., M, 3, 3).
    """
    M, n = db.n_partitions, db.ncomp
    S = db.S.transpose(0, 2, 1, 3).reshape(M * n, M * n)
    W = np.asarray(W, dtype=float)
    A = np.eye(M * n) - S * np.repeat(W, n, axis=-1)[..., None, :]
    src = ((W - omega_n)[..., None] * eps_n).reshape(*W.shape[:-1], M * n)
    rhs = np.einsum("iab,...b->...ia", db.E, deps0).reshape(src.shape) \
        + src @ S.T
    Estack = np.broadcast_to(db.E.reshape(M * n, n), (*W.shape[:-1], M * n, n))
    sol = np.linalg.solve(A, np.concatenate([rhs[..., None], Estack], axis=-1))
    lam = sol[..., 0].reshape(*W.shape[:-1], M, n)
    dlam = sol[..., 1:].reshape(*W.shape[:-1], M, n, n)
    return eps_n + lam, dlam


def frozen_tangent(omega, dlam, db, Dbar):
    """``d sigma / d eps0`` with damage and mixing weight held fixed."""
    C = (np.eye(db.ncomp) - Dbar) @ db.Lbar
    return C + np.einsum("...i,iab,...ibk->...ak", (1.0 - omega) * omega,
                         db.Mo, dlam)


def consistent_kappa(kappa, omega, db):
    """Raise the history so that ``omega(kappa)`` is at least ``omega``."""
    kd, kf = db.kappa_d, db.kappa_f
    span = np.where(db.damageable, kf - kd, 1.0)
    denom = np.maximum(kf - omega * span, 1e-300)
    k_w = np.where(omega > 0.0, kf * kd / denom, 0.0)
    return np.where(db.damageable, np.maximum(kappa, k_w), kappa)


@dataclass
class StepResult:
    state: TfaState
    report: StepReport
    dlam: np.ndarray = field(repr=False)


def step(state, deps0, db, psi_rule=None, tol=TOL, max_iter=MAX_ITER):
    """Advance one material point by the macro strain increment ``deps0``."""
    psi_rule = psi_rule or PsiRule()
    deps0 = np.asarray(deps0, dtype=float)
    eps, w, k, its, ok, X, r = kernels.solve_batch(
        *_rom_args(db), state.eps[None], state.omega[None], state.kappa[None],
        deps0[None], tol, max_iter)
    eps, w, k = eps[0], w[0], k[0]
    eps0 = state.eps0 + deps0
    psi, _ = psi_rule(eps0)
    psi = float(psi)
    _, _, Dbar = macro_damage(w, db, psi)
    sigma = macro_stress(eps0, eps, w, db, Dbar)
    new = TfaState(eps, w, k, eps0, sigma, Dbar, psi, state.step + 1)
    report = StepReport(int(its[0]), float(r[0]), bool(ok[0]), sigma,
                        np.diag(Dbar).copy())
    return StepResult(new, report, X[0])


@dataclass
class Curve:
    """Macro response of a strain program."""
    rows: list
    trace: list
    converged: bool
    failures: list
    state: TfaState = None

    def arrays(self):
        eps = np.array([[r["eps11"], r["eps22"], r["eps12"]] for r in self.rows])
        sig = np.array([[r["sig11"], r["sig22"], r["sig12"]] for r in self.rows])
        return eps, sig


CURVE_COLUMNS = ("step", "eps11", "eps22", "eps12", "sig11", "sig22", "sig12",
                 "Dbar11", "Dbar22", "psi", "iters")
TRACE_COLUMNS = ("step", "partition", "omega", "kappa")


def _advance(state, deps0, db, psi_rule, tol, max_iter, depth=0):
    """Step with recursive bisection; returns (state, iterations) or None."""
    res = step(state, deps0, db, psi_rule, tol, max_iter)
    if res.report.converged:
        return res.state, res.report.iterations
    if depth >= MAX_BISECT:
        return None
    half = 0.5 * np.asarray(deps0, dtype=float)
    first = _advance(state, half, db, psi_rule, tol, max_iter, depth + 1)
    if first is None:
        return None
    second = _advance(first[0], half, db, psi_rule, tol, max_iter, depth + 1)
    if second is None:
        return None
    return second[0], first[1] + second[1]


def run_rve_program(db, program, psi_rule=None, tol=TOL, max_iter=MAX_ITER,
                    diagnostics=False):
    """Apply a list of macro strain increments to one material point.

    Non-converged increments are bisected up to eight times; if that fails
    the run stops and the partial curve is returned with ``converged=False``.
    """
    psi_rule = psi_rule or PsiRule()
    state = TfaState.initial(db)
    rows, trace, failures = [], [], []
    for k, deps0 in enumerate(np.asarray(program, dtype=float), start=1):
        out = _advance(state, deps0, db, psi_rule, tol, max_iter)
        if out is None:
            failures.append(k)
            log.warning("increment %d did not converge after bisection", k)
            break
        state, its = out
        state.step = k
        if not check_damage_spectrum(state.Dbar):
            raise DiagnosticsError(f"macro damage out of range at step {k}")
        e, s = state.eps0, state.sigma
        row = {"step": k, "eps11": e[0], "eps22": e[1], "eps12": e[2] / SQRT2,
               "sig11": s[0], "sig22": s[1], "sig12": s[2] / SQRT2,
               "Dbar11": state.Dbar[0, 0], "Dbar22": state.Dbar[1, 1],
               "psi": state.psi, "iters": its}
        if diagnostics:
            row["sig_part"] = partition_stress(state.eps, state.omega, db)
        rows.append(row)
        trace.extend({"step": k, "partition": i + 1, "omega": state.omega[i],
                      "kappa": state.kappa[i]} for i in range(db.n_partitions))
    return Curve(rows, trace, not failures, failures, state)


def ramp_program(direction, amplitude, steps):
    """Equal increments from zero to ``amplitude * direction``."""
    d = np.asarray(direction, dtype=float) * (amplitude / steps)
    return np.tile(d, (steps, 1))


def _fmt(v):
    return repr(int(v)) if isinstance(v, (int, np.integer)) else f"{float(v):.17g}"


def write_curve_csv(path, curve, header=None):
    with open(path, "w", newline="") as fh:
        for line in header or ():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in curve.rows:
            w.writerow([_fmt(r[c]) for c in CURVE_COLUMNS])


def write_trace_csv(path, curve, header=None):
    with open(path, "w", newline="") as fh:
        for line in header or ():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in curve.trace:
            w.writerow([_fmt(r[c]) for c in TRACE_COLUMNS])


def read_curve_csv(path):
    """Curve rows and comment header lines of a curve CSV."""
    header, lines = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                header.append(line[1:].strip())
            else:
                lines.append(line)
    rows = list(csv.DictReader(lines))
    return [{k: float(v) for k, v in r.items()} for r in rows], header


def resolve_psi(strengths=None, value=0.0):
    """Mixing rule from optional strengths (a mapping or :class:`Strengths`)."""
    if strengths is None:
        return PsiRule(value)
    if not isinstance(strengths, Strengths):
        strengths = Strengths(**strengths)
    return PsiRule(value, strengths)


def require_converged(curve):
    if not curve.converged:
        raise ConvergenceError(f"increments {curve.failures} did not converge")
    return curve


__all__ = ["TfaState", "StepReport", "PsiRule", "residual", "tangent",
           "macro_damage", "macro_stress", "macro_tangent", "partition_stress",
           "step", "run_rve_program", "ramp_program", "write_curve_csv",
           "write_trace_csv", "read_curve_csv", "resolve_psi"]
