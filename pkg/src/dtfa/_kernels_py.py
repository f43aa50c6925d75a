"""Reference (numpy) implementation of the batched transformation-field solve.

For every material point the unknowns are the partition strain increments
``lam`` (M x 3). With ``eps = eps_n + lam``, ``kappa = max(kappa_n,
max_principal(eps))`` and ``omega = omega(kappa)`` the damage eigenstrain
increment is ``dmu = (omega - omega_n) eps + omega_n lam`` and the residual

    psi_i = lam_i - E_i deps0 - sum_j S_ij dmu_j

is driven to zero by Newton's method with a backtracking line search on
the residual norm (the history kink can otherwise trap plain Newton in a
two-cycle between loading and unloading branches).
"""
import numpy as np

from .tensor import SQRT2

CHUNK = 1024
# step halvings allowed in the backtracking line search
LINE_SEARCH = 12
# residual norms below this are roundoff; no backtracking there
RES_FLOOR = 1e-15


def _principal(eps):
    m = 0.5 * (eps[..., 0] + eps[..., 1])
    d = 0.5 * (eps[..., 0] - eps[..., 1])
    e = eps[..., 2] / SQRT2
    r = np.sqrt(d * d + e * e)
    safe = np.where(r > 0.0, r, 1.0)
    c2 = np.where(r > 0.0, d / safe, 0.0)
    s2 = np.where(r > 0.0, e / safe, 0.0)
    g = np.stack([0.5 * (1.0 + c2), 0.5 * (1.0 - c2), s2 / SQRT2], axis=-1)
    return m + r, g


def damage_state(eps, kappa_n, kd, kf, dmg):
    """Trial history, damage, its slope and the principal dyad per partition.

    Returns ``kappa, omega, slope, g`` where ``slope`` is ``d omega / d eps``
    along ``g`` (zero when the history does not grow or outside softening).
    """
    p, g = _principal(eps)
    grow = p > kappa_n
    kappa = np.where(grow, p, kappa_n)
    span = np.where(dmg, kf - kd, 1.0)
    safe = np.where(kappa > kd, kappa, 1.0)
    w = np.where(kappa <= kd, 0.0,
                 np.where(kappa >= kf, 1.0, kf * (safe - kd) / (safe * span)))
    w = np.where(dmg, w, 0.0)
    soft = dmg & grow & (kappa > kd) & (kappa < kf)
    slope = np.where(soft, kf * kd / (span * safe * safe), 0.0)
    return kappa, w, slope, g


def residual_and_jacobian(lam, E, S, kd, kf, dmg, eps_n, omega_n, kappa_n, deps0):
    """Residual (N, M*3) and Jacobian (N, M*3, M*3) at trial ``lam``."""
    N, M, n = lam.shape
    eps = eps_n + lam
    kappa, w, slope, g = damage_state(eps, kappa_n, kd, kf, dmg)
    dmu = (w - omega_n)[..., None] * eps + omega_n[..., None] * lam
    psi = (lam - np.einsum("iab,nb->nia", E, deps0)
           - np.einsum("ijab,njb->nia", S, dmu))
    # d dmu_j / d lam_j = omega I + eps (x) slope g
    P = (w[..., None, None] * np.eye(n)
         + eps[..., :, None] * (slope[..., None] * g)[..., None, :])
    J = -np.einsum("ijab,njbc->niajc", S, P)
    J = J.reshape(N, M * n, M * n) + np.eye(M * n)
    return psi.reshape(N, M * n), J, (eps, kappa, w)


def newton_batch(E, S, kd, kf, dmg, eps_n, omega_n, kappa_n, deps0,
                 tol=1e-10, max_iter=50, lam0=None):
    """Solve the partition equations for ``N`` independent points.

    ``lam0`` (N, M, 3) replaces the elastic predictor as the starting guess.

    Returns
    -------
    eps, omega, kappa : arrays (N, M, 3), (N, M), (N, M)
        Converged partition state.
    iters : (N,) int
    converged : (N,) bool
    dlam : (N, M, 3, 3)
        Sensitivity of the partition strains to the macro strain increment.
    resid : (N,)
        Norm of the final residual.
    """
    E = np.asarray(E, dtype=float)
    S = np.asarray(S, dtype=float)
    dmg = np.asarray(dmg, dtype=bool)
    N = deps0.shape[0]
    M, n = E.shape[0], E.shape[1]
    out_eps = np.empty((N, M, n))
    out_w = np.empty((N, M))
    out_k = np.empty((N, M))
    out_it = np.zeros(N, dtype=np.int64)
    out_ok = np.zeros(N, dtype=bool)
    out_x = np.empty((N, M, n, n))
    out_r = np.empty(N)
    Estack = E.reshape(M * n, n)
    for lo in range(0, N, CHUNK):
        sl = slice(lo, min(lo + CHUNK, N))
        en, wn, kn, de = eps_n[sl], omega_n[sl], kappa_n[sl], deps0[sl]
        c = de.shape[0]
        if lam0 is None:
            lam = np.einsum("iab,nb->nia", E, de)
        else:
            lam = np.array(lam0[sl], dtype=float)
        active = np.ones(c, dtype=bool)
        its = np.zeros(c, dtype=np.int64)
        ok = np.zeros(c, dtype=bool)
        args = (E, S, kd, kf, dmg)
        psi, J, _ = residual_and_jacobian(lam, *args, en, wn, kn, de)
        for _ in range(max_iter):
            if not active.any():
                break
            idx = np.flatnonzero(active)
            sub = (en[idx], wn[idx], kn[idx], de[idx])
            delta = -np.linalg.solve(J[idx], psi[idx][..., None])[..., 0]
            delta = delta.reshape(-1, M, n)
            r0 = np.linalg.norm(psi[idx], axis=1)
            alpha = np.ones(idx.size)
            trial = lam[idx] + delta
            p1, J1, _ = residual_and_jacobian(trial, *args, *sub)
            for _ls in range(LINE_SEARCH):
                r1 = np.linalg.norm(p1, axis=1)
                bad = (r1 > (1.0 - 1e-4 * alpha) * r0) & (r1 > RES_FLOOR)
                if not bad.any():
                    break
                alpha[bad] *= 0.5
                b = np.flatnonzero(bad)
                trial[b] = lam[idx[b]] + alpha[b, None, None] * delta[b]
                pb, Jb, _ = residual_and_jacobian(
                    trial[b], *args, *(a[b] for a in sub))
                p1[b], J1[b] = pb, Jb
            lam[idx] = trial
            psi[idx], J[idx] = p1, J1
            its[idx] += 1
            step = np.linalg.norm(alpha[:, None] * delta.reshape(idx.size, -1),
                                  axis=1)
            done = (alpha == 1.0) & (step <= tol)
            ok[idx[done]] = True
            active[idx[done]] = False
        psi, J, (eps, kappa, w) = residual_and_jacobian(lam, E, S, kd, kf, dmg,
                                                        en, wn, kn, de)
        X = np.linalg.solve(J, np.broadcast_to(Estack, (c, M * n, n)))
        out_eps[sl], out_w[sl], out_k[sl] = eps, w, kappa
        out_it[sl], out_ok[sl] = its, ok
        out_x[sl] = X.reshape(c, M, n, n)
        out_r[sl] = np.linalg.norm(psi, axis=1)
    return out_eps, out_w, out_k, out_it, out_ok, out_x, out_r


def staggered_batch(E, S, kd, kf, dmg, eps_n, omega_n, kappa_n, deps0,
                    tol=1e-12, max_iter=2000):
    """Fixed-point solve with damage frozen during each linear solve.

    Damage only grows between sweeps, so the iteration is monotone and
    passes snap-through states where Newton stalls at the history kink.
    Returns ``lam`` (N, M, 3) and a (N,) convergence flag.
    """
    E = np.asarray(E, dtype=float)
    S = np.asarray(S, dtype=float)
    dmg = np.asarray(dmg, dtype=bool)
    N = deps0.shape[0]
    M, n = E.shape[0], E.shape[1]
    Sflat = S.transpose(0, 2, 1, 3).reshape(M * n, M * n)
    load = np.einsum("iab,nb->nia", E, deps0)
    w = np.array(omega_n, dtype=float)
    lam = load.copy()
    ok = np.zeros(N, dtype=bool)
    active = np.ones(N, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        wi = w[idx]
        A = np.eye(M * n) - Sflat[None] * np.repeat(wi, n, axis=1)[:, None, :]
        src = ((wi - omega_n[idx])[..., None] * eps_n[idx]).reshape(idx.size, -1)
        rhs = load[idx].reshape(idx.size, -1) + src @ Sflat.T
        lam[idx] = np.linalg.solve(A, rhs[..., None])[..., 0].reshape(-1, M, n)
        _, w_new, _, _ = damage_state(eps_n[idx] + lam[idx], kappa_n[idx],
                                      kd, kf, dmg)
        w_new = np.maximum(wi, w_new)
        change = np.abs(w_new - wi).max(axis=1)
        w[idx] = w_new
        done = change <= tol
        ok[idx[done]] = True
        active[idx[done]] = False
    return lam, ok
