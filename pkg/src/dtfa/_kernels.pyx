# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched transformation-field solve (same contract as _kernels_py)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double SQRT2 = 1.4142135623730951
cdef int LINE_SEARCH = 12
cdef double RES_FLOOR = 1e-15


cdef inline void _state(int M, const double* eps, const double* kappa_n,
                        const double* kd, const double* kf,
                        const unsigned char* dmg, double* kappa, double* w,
                        double* slope, double* g) noexcept nogil:
    cdef int i
    cdef double m, d, e, r, c2, s2, p, k, span
    cdef bint grow
    for i in range(M):
        m = 0.5 * (eps[3 * i] + eps[3 * i + 1])
        d = 0.5 * (eps[3 * i] - eps[3 * i + 1])
        e = eps[3 * i + 2] / SQRT2
        r = sqrt(d * d + e * e)
        if r > 0.0:
            c2 = d / r
            s2 = e / r
        else:
            c2 = 0.0
            s2 = 0.0
        g[3 * i] = 0.5 * (1.0 + c2)
        g[3 * i + 1] = 0.5 * (1.0 - c2)
        g[3 * i + 2] = s2 / SQRT2
        p = m + r
        grow = p > kappa_n[i]
        k = p if grow else kappa_n[i]
        kappa[i] = k
        slope[i] = 0.0
        if not dmg[i]:
            w[i] = 0.0
            continue
        span = kf[i] - kd[i]
        if k <= kd[i]:
            w[i] = 0.0
        elif k >= kf[i]:
            w[i] = 1.0
        else:
            w[i] = kf[i] * (k - kd[i]) / (k * span)
            if grow:
                slope[i] = kf[i] * kd[i] / (span * k * k)


cdef inline void _assemble(int M, const double* E, const double* S,
                           const double* lam, const double* eps_n,
                           const double* w_n, const double* kappa_n,
                           const double* de, const double* kd, const double* kf,
                           const unsigned char* dmg, double* eps, double* kappa,
                           double* w, double* slope, double* g, double* dmu,
                           double* P, double* psi, double* J) noexcept nogil:
    cdef int n = 3 * M
    cdef int i, j, a, b, c
    cdef double acc
    for a in range(n):
        eps[a] = eps_n[a] + lam[a]
    _state(M, eps, kappa_n, kd, kf, dmg, kappa, w, slope, g)
    for j in range(M):
        for a in range(3):
            dmu[3 * j + a] = (w[j] - w_n[j]) * eps[3 * j + a] + w_n[j] * lam[3 * j + a]
            for b in range(3):
                P[9 * j + 3 * a + b] = eps[3 * j + a] * slope[j] * g[3 * j + b]
            P[9 * j + 4 * a] += w[j]
    for i in range(M):
        for a in range(3):
            acc = lam[3 * i + a]
            for b in range(3):
                acc -= E[9 * i + 3 * a + b] * de[b]
            for j in range(M):
                for b in range(3):
                    acc -= S[(i * M + j) * 9 + 3 * a + b] * dmu[3 * j + b]
            psi[3 * i + a] = acc
    for i in range(M):
        for j in range(M):
            for a in range(3):
                for c in range(3):
                    acc = 0.0
                    for b in range(3):
                        acc -= S[(i * M + j) * 9 + 3 * a + b] * P[9 * j + 3 * b + c]
                    if i == j and a == c:
                        acc += 1.0
                    J[(3 * i + a) * n + 3 * j + c] = acc


cdef inline int _lu(int n, double* A, int* piv) noexcept nogil:
    cdef int k, r, c, p
    cdef double big, t
    for k in range(n):
        p = k
        big = fabs(A[k * n + k])
        for r in range(k + 1, n):
            if fabs(A[r * n + k]) > big:
                big = fabs(A[r * n + k])
                p = r
        piv[k] = p
        if big == 0.0:
            return 1
        if p != k:
            for c in range(n):
                t = A[k * n + c]
                A[k * n + c] = A[p * n + c]
                A[p * n + c] = t
        for r in range(k + 1, n):
            A[r * n + k] /= A[k * n + k]
            t = A[r * n + k]
            if t != 0.0:
                for c in range(k + 1, n):
                    A[r * n + c] -= t * A[k * n + c]
    return 0


cdef inline void _lu_solve(int n, const double* A, const int* piv, double* x,
                           int nrhs) noexcept nogil:
    # x is row-major (n, nrhs)
    cdef int k, r, q
    cdef double t
    for k in range(n):
        if piv[k] != k:
            for q in range(nrhs):
                t = x[k * nrhs + q]
                x[k * nrhs + q] = x[piv[k] * nrhs + q]
                x[piv[k] * nrhs + q] = t
    for k in range(n):
        for r in range(k + 1, n):
            t = A[r * n + k]
            if t != 0.0:
                for q in range(nrhs):
                    x[r * nrhs + q] -= t * x[k * nrhs + q]
    for k in range(n - 1, -1, -1):
        for q in range(nrhs):
            t = x[k * nrhs + q]
            for r in range(k + 1, n):
                t -= A[k * n + r] * x[r * nrhs + q]
            x[k * nrhs + q] = t / A[k * n + k]


def newton_batch(E, S, kd, kf, dmg, eps_n, omega_n, kappa_n, deps0,
                 double tol=1e-10, int max_iter=50, lam0=None):
    cdef bint guess = lam0 is not None
    cdef double[:, :, ::1] l0 = np.ascontiguousarray(
        lam0 if guess else np.zeros((1, 1, 3)), dtype=np.float64)
    cdef double[:, :, ::1] Ev = np.ascontiguousarray(E, dtype=np.float64)
    cdef double[:, :, :, ::1] Sv = np.ascontiguousarray(S, dtype=np.float64)
    cdef double[::1] kdv = np.ascontiguousarray(kd, dtype=np.float64)
    cdef double[::1] kfv = np.ascontiguousarray(kf, dtype=np.float64)
    cdef unsigned char[::1] dv = np.ascontiguousarray(dmg, dtype=np.uint8)
    cdef double[:, :, ::1] en = np.ascontiguousarray(eps_n, dtype=np.float64)
    cdef double[:, ::1] wn = np.ascontiguousarray(omega_n, dtype=np.float64)
    cdef double[:, ::1] kn = np.ascontiguousarray(kappa_n, dtype=np.float64)
    cdef double[:, ::1] dev = np.ascontiguousarray(deps0, dtype=np.float64)
    cdef Py_ssize_t N = dev.shape[0]
    cdef int M = Ev.shape[0]
    cdef int n = 3 * M
    out_eps = np.empty((N, M, 3))
    out_w = np.empty((N, M))
    out_k = np.empty((N, M))
    out_it = np.zeros(N, dtype=np.int64)
    out_ok = np.zeros(N, dtype=np.uint8)
    out_x = np.empty((N, M, 3, 3))
    out_r = np.empty(N)
    cdef double[:, :, ::1] oe = out_eps
    cdef double[:, ::1] ow = out_w
    cdef double[:, ::1] ok_ = out_k
    cdef long long[::1] oi = out_it
    cdef unsigned char[::1] oc = out_ok
    cdef double[:, :, :, ::1] ox = out_x
    cdef double[::1] orr = out_r
    cdef double* buf = <double*> malloc((11 * n + n * n + 9 * M + 6 * M) * sizeof(double))
    cdef int* piv = <int*> malloc(n * sizeof(int))
    if buf == NULL or piv == NULL:
        free(buf)
        free(piv)
        raise MemoryError()
    cdef double* lam = buf
    cdef double* eps = lam + n
    cdef double* g = eps + n
    cdef double* dmu = g + n
    cdef double* psi = dmu + n
    cdef double* X = psi + n
    cdef double* J = X + 3 * n
    cdef double* P = J + n * n
    cdef double* kappa = P + 9 * M
    cdef double* w = kappa + M
    cdef double* slope = w + M
    cdef double* delta = slope + M
    cdef double* trial = delta + n
    cdef Py_ssize_t p
    cdef int it, a, b, i, ls
    cdef double nrm, acc, r0, r1, alpha
    cdef bint conv
    with nogil:
        for p in range(N):
            for i in range(M):
                for a in range(3):
                    if guess:
                        lam[3 * i + a] = l0[p, i, a]
                        continue
                    acc = 0.0
                    for b in range(3):
                        acc += Ev[i, a, b] * dev[p, b]
                    lam[3 * i + a] = acc
            conv = False
            it = 0
            _assemble(M, &Ev[0, 0, 0], &Sv[0, 0, 0, 0], lam, &en[p, 0, 0],
                      &wn[p, 0], &kn[p, 0], &dev[p, 0], &kdv[0], &kfv[0],
                      &dv[0], eps, kappa, w, slope, g, dmu, P, psi, J)
            while it < max_iter:
                it += 1
                r0 = 0.0
                for a in range(n):
                    r0 += psi[a] * psi[a]
                    delta[a] = -psi[a]
                r0 = sqrt(r0)
                if _lu(n, J, piv):
                    break
                _lu_solve(n, J, piv, delta, 1)
                alpha = 1.0
                for ls in range(LINE_SEARCH + 1):
                    for a in range(n):
                        trial[a] = lam[a] + alpha * delta[a]
                    _assemble(M, &Ev[0, 0, 0], &Sv[0, 0, 0, 0], trial,
                              &en[p, 0, 0], &wn[p, 0], &kn[p, 0], &dev[p, 0],
                              &kdv[0], &kfv[0], &dv[0], eps, kappa, w, slope,
                              g, dmu, P, psi, J)
                    r1 = 0.0
                    for a in range(n):
                        r1 += psi[a] * psi[a]
                    r1 = sqrt(r1)
                    if r1 <= (1.0 - 1e-4 * alpha) * r0 or r1 <= RES_FLOOR \
                            or ls == LINE_SEARCH:
                        break
                    alpha *= 0.5
                nrm = 0.0
                for a in range(n):
                    lam[a] = trial[a]
                    nrm += alpha * alpha * delta[a] * delta[a]
                if alpha == 1.0 and sqrt(nrm) <= tol:
                    conv = True
                    break
            _assemble(M, &Ev[0, 0, 0], &Sv[0, 0, 0, 0], lam, &en[p, 0, 0],
                      &wn[p, 0], &kn[p, 0], &dev[p, 0], &kdv[0], &kfv[0],
                      &dv[0], eps, kappa, w, slope, g, dmu, P, psi, J)
            nrm = 0.0
            for a in range(n):
                nrm += psi[a] * psi[a]
            orr[p] = sqrt(nrm)
            for a in range(n):
                for b in range(3):
                    X[3 * a + b] = Ev[a // 3, a % 3, b]
            if _lu(n, J, piv) == 0:
                _lu_solve(n, J, piv, X, 3)
            for i in range(M):
                ow[p, i] = w[i]
                ok_[p, i] = kappa[i]
                for a in range(3):
                    oe[p, i, a] = eps[3 * i + a]
                    for b in range(3):
                        ox[p, i, a, b] = X[(3 * i + a) * 3 + b]
            oi[p] = it
            oc[p] = conv
    free(buf)
    free(piv)
    return (out_eps, out_w, out_k, out_it, out_ok.astype(bool), out_x, out_r)
