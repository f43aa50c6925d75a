"""Small-strain finite elements on the periodic pixel grid.

Bilinear quadrilaterals with 2x2 Gauss quadrature live on the unit torus:
node ``(ix, iy)`` and its periodic images share degrees of freedom, so the
fluctuation field is periodic by construction and the total displacement is
``eps0 . y + u_fluct``. One master node is pinned to remove the rigid
translation, which leaves a symmetric positive definite system.

All per-element quantities (strain, stress, influence fields) are element
means. For rectangles the mean of the bilinear strain equals its centroid
value, so element sums reproduce volume integrals exactly.
"""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .errors import ParameterError, StructuralError
from .tensor import SQRT2, max_principal

log = logging.getLogger(__name__)

GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
# Stiffness factor kept by a fully damaged element; keeps the system SPD.
RESIDUAL_STIFFNESS = 1e-6


def _shape_gradients(xi, eta, hx, hy):
    """Cartesian derivatives of the four bilinear shape functions."""
    dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    return dxi * 2.0 / hx, deta * 2.0 / hy


def _b_matrix(dnx, dny):
    B = np.zeros((3, 8))
    B[0, 0::2] = dnx
    B[1, 1::2] = dny
    B[2, 0::2] = dny / SQRT2
    B[2, 1::2] = dnx / SQRT2
    return B


def quad_b_matrices(hx, hy):
    """Strain-displacement matrices at the 2x2 Gauss points, shape (4, 3, 8)."""
    return np.array([_b_matrix(*_shape_gradients(xi, eta, hx, hy))
                     for eta in GAUSS for xi in GAUSS])


@dataclass
class PeriodicMesh:
    """Pixel mesh of the unit cell with periodic node pairing.

    Attributes
    ----------
    nx, ny : int
        Elements per side.
    phase : numpy.ndarray
        Phase id per element (row-major: ``e = iy * nx + ix``).
    conn : numpy.ndarray
        Master node ids of each element, counter-clockwise, shape (n_el, 4).
    dofs : numpy.ndarray
        Global dof ids of each element, shape (n_el, 8).
    free : numpy.ndarray
        Dofs left after pinning master node 0.
    """
    nx: int
    ny: int
    phase: np.ndarray
    conn: np.ndarray = field(repr=False)
    dofs: np.ndarray = field(repr=False)
    free: np.ndarray = field(repr=False)
    B_gauss: np.ndarray = field(repr=False)
    B_mean: np.ndarray = field(repr=False)
    _pattern: tuple = field(default=None, repr=False)

    @property
    def n_elements(self):
        return self.nx * self.ny

    @property
    def n_nodes(self):
        return self.nx * self.ny

    @property
    def n_dofs(self):
        """Dof count after periodic elimination, before pinning."""
        return 2 * self.n_nodes

    @property
    def element_area(self):
        return 1.0 / self.n_elements

    def master_of(self, ix, iy):
        """Master node id of grid node ``(ix, iy)``, ``0 <= ix <= nx``."""
        return (np.asarray(iy) % self.ny) * self.nx + np.asarray(ix) % self.nx

    def pattern(self):
        """CSR structure of the reduced operator and the COO -> CSR map."""
        if self._pattern is None:
            n = self.n_dofs
            rows = np.repeat(self.dofs, 8, axis=1).ravel()
            cols = np.tile(self.dofs, (1, 8)).ravel()
            keep = np.full(n, -1, dtype=np.int64)
            keep[self.free] = np.arange(self.free.size)
            r, c = keep[rows], keep[cols]
            mask = (r >= 0) & (c >= 0)
            nfree = self.free.size
            probe = sp.csr_matrix(
                (np.arange(mask.sum(), dtype=float) + 1.0, (r[mask], c[mask])),
                shape=(nfree, nfree))
            # duplicates are summed by scipy; recover each entry's slot by
            # linear index lookup
            lin = r[mask] * nfree + c[mask]
            probe.sort_indices()
            indptr, indices = probe.indptr, probe.indices
            slot_lin = np.repeat(np.arange(nfree), np.diff(indptr)) * nfree + indices
            slot = np.searchsorted(slot_lin, lin)
            self._pattern = (mask, slot, indptr.copy(), indices.copy())
        return self._pattern


def build_mesh(p):
    """Periodic mesh of a phase map (element ids follow the raster order)."""
    phase = p.phase if hasattr(p, "phase") else np.asarray(p)
    ny, nx = phase.shape
    if nx < 2 or ny < 2:
        raise ParameterError("periodic mesh needs at least 2x2 elements")
    iy, ix = np.divmod(np.arange(nx * ny), nx)

    def node(a, b):
        return (b % ny) * nx + a % nx

    conn = np.stack([node(ix, iy), node(ix + 1, iy), node(ix + 1, iy + 1),
                     node(ix, iy + 1)], axis=1)
    dofs = np.empty((nx * ny, 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * conn
    dofs[:, 1::2] = 2 * conn + 1
    free = np.arange(2, 2 * nx * ny)
    Bg = quad_b_matrices(1.0 / nx, 1.0 / ny)
    return PeriodicMesh(nx, ny, np.asarray(phase).ravel().copy(), conn, dofs,
                        free, Bg, Bg.mean(axis=0))


def element_stiffness_table(mesh, phases):
    """Element stiffness matrix per phase id, ``{pid: (8, 8)}``."""
    w = mesh.element_area / 4.0
    table = {}
    for pid, L in phases.items():
        L = np.asarray(L, dtype=float)
        table[pid] = w * np.einsum("gia,ij,gjb->ab", mesh.B_gauss, L,
                                   mesh.B_gauss)
    return table


def element_stiffness_array(mesh, phases):
    """Constitutive matrix of every element, shape (n_el, 3, 3)."""
    missing = set(np.unique(mesh.phase)) - set(phases)
    if missing:
        raise ParameterError(f"no stiffness for phase ids {sorted(missing)}")
    L = np.empty((mesh.n_elements, 3, 3))
    for pid, Lp in phases.items():
        L[mesh.phase == pid] = Lp
    return L


def assemble(mesh, phases, scale=None):
    """Reduced stiffness (pinned dofs removed) in CSC form.

    ``scale`` multiplies each element matrix (damage degradation).
    """
    table = element_stiffness_table(mesh, phases)
    Ke = np.empty((mesh.n_elements, 8, 8))
    for pid, k in table.items():
        Ke[mesh.phase == pid] = k
    if scale is not None:
        Ke *= np.asarray(scale)[:, None, None]
    mask, slot, indptr, indices = mesh.pattern()
    data = np.bincount(slot, weights=Ke.ravel()[mask], minlength=indices.size)
    n = mesh.free.size
    return sp.csr_matrix((data, indices, indptr), shape=(n, n)).tocsc()


class LinearOperator:
    """Factorized periodic stiffness for repeated right-hand sides."""

    def __init__(self, mesh, phases, scale=None):
        self.mesh = mesh
        self.phases = phases
        self.L_el = element_stiffness_array(mesh, phases)
        self.scale = (np.ones(mesh.n_elements) if scale is None
                      else np.asarray(scale, dtype=float))
        self.K = assemble(mesh, phases, self.scale)
        try:
            self._lu = sla.splu(self.K, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise StructuralError(f"singular periodic stiffness: {exc}") from exc

    def element_load(self, tau):
        """Global load ``sum_e |e| Bbar^T tau_e`` from element stresses."""
        mesh = self.mesh
        fe = mesh.element_area * np.einsum("ia,...ei->...ea", mesh.B_mean, tau)
        lead = fe.shape[:-2]
        f = np.zeros(lead + (mesh.n_dofs,))
        flat = f.reshape(-1, mesh.n_dofs)
        fe_flat = fe.reshape(-1, mesh.n_elements * 8)
        for k in range(flat.shape[0]):
            flat[k] = np.bincount(mesh.dofs.ravel(), weights=fe_flat[k],
                                  minlength=mesh.n_dofs)
        return f

    def solve_fluctuation(self, f):
        """Solve ``K u = f`` for one or many loads; returns full dof vectors."""
        f = np.asarray(f)
        rhs = f[..., self.mesh.free]
        if rhs.ndim == 1:
            u_free = self._lu.solve(rhs)
        else:
            flat = rhs.reshape(-1, rhs.shape[-1])
            u_free = self._lu.solve(np.ascontiguousarray(flat.T)).T
            u_free = u_free.reshape(rhs.shape)
        u = np.zeros(f.shape)
        u[..., self.mesh.free] = u_free
        return u

    def fluctuation_strain(self, u):
        """Element mean strain of a fluctuation dof vector (or a batch)."""
        ue = u[..., self.mesh.dofs]
        return np.einsum("ia,...ea->...ei", self.mesh.B_mean, ue)

    def stress(self, strain, eigenstrain=None):
        eff = strain if eigenstrain is None else strain - eigenstrain
        return self.scale[:, None] * np.einsum("eij,...ej->...ei", self.L_el, eff)

    def residual_norm(self, u, f):
        """Relative equilibrium residual of a fluctuation solution."""
        free = self.mesh.free
        r = self.K @ u[free] - f[free]
        return np.linalg.norm(r) / max(np.linalg.norm(f[free]), 1e-300)

    def solve_macro(self, eps0):
        """Element strain fields for macro strain(s) ``eps0`` (…, 3)."""
        eps0 = np.asarray(eps0, dtype=float)
        tau = -self.scale[:, None] * np.einsum("eij,...j->...ei", self.L_el, eps0)
        u = self.solve_fluctuation(self.element_load(tau))
        return eps0[..., None, :] + self.fluctuation_strain(u)

    def solve_eigenstrain(self, mu):
        """Element strain fields caused by element eigenstrains ``mu``.

        ``mu`` has shape (…, n_el, 3); the macro strain is zero.
        """
        tau = self.scale[:, None] * np.einsum("eij,...ej->...ei", self.L_el, mu)
        u = self.solve_fluctuation(self.element_load(tau))
        return self.fluctuation_strain(u)


def solve_elastic(mesh, phases, eps0):
    """Element strain field under prescribed macro strain ``eps0``."""
    return LinearOperator(mesh, phases).solve_macro(eps0)


def solve_eigen(mesh, phases, labels, j, mu_unit):
    """Strain field caused by a uniform eigenstrain in partition ``j`` only."""
    labels = np.asarray(labels)
    mu = np.zeros((mesh.n_elements, 3))
    mu[labels == j] = mu_unit
    return LinearOperator(mesh, phases).solve_eigenstrain(mu)


def volume_average(field):
    """Average of an element field over the cell (equal element volumes)."""
    return np.mean(field, axis=-2)


def partition_average(field, labels, i):
    """Mean of an element field over the elements of partition ``i``."""
    sel = np.asarray(labels) == i
    if not sel.any():
        raise StructuralError(f"partition {i} is empty")
    return np.mean(np.asarray(field)[..., sel, :], axis=-2)


def partition_averages(field, labels, n_partitions):
    """Stacked partition means, shape ``(M,) + field.shape[:-2] + (ncomp,)``."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_partitions)
    if np.any(counts == 0):
        raise StructuralError("empty partition in cluster map")
    field = np.asarray(field)
    moved = np.moveaxis(field, -2, 0)
    sums = np.zeros((n_partitions,) + moved.shape[1:])
    np.add.at(sums, labels, moved)
    return sums / counts.reshape((-1,) + (1,) * (sums.ndim - 1))


@dataclass
class CurvePoint:
    """One converged (or flagged) step of the reference damage solver."""
    eps0: np.ndarray
    sigma: np.ndarray
    max_omega: float
    mean_omega: float
    damaged_fraction: float
    iterations: int
    converged: bool


@dataclass
class ReferenceResult:
    points: list
    omega: np.ndarray
    kappa: np.ndarray
    strain: np.ndarray
    omega_history: list
    warnings: list

    def curve(self):
        eps = np.array([p.eps0 for p in self.points])
        sig = np.array([p.sigma for p in self.points])
        return eps, sig


def _element_damage_params(mesh, dparams):
    kd = np.zeros(mesh.n_elements)
    kf = np.ones(mesh.n_elements)
    dmg = np.zeros(mesh.n_elements, dtype=bool)
    for pid, p in dparams.items():
        sel = mesh.phase == pid
        if p.damageable:
            kd[sel], kf[sel], dmg[sel] = p.kappa_d, p.kappa_f, True
    return kd, kf, dmg


def element_omega(kappa, kd, kf, dmg):
    """Vectorized damage law over elements with per-element parameters."""
    safe = np.where(kappa > kd, kappa, np.maximum(kf, 1.0))
    w = kf * (safe - kd) / (safe * np.where(dmg, kf - kd, 1.0))
    w = np.where(kappa <= kd, 0.0, np.where(kappa >= kf, 1.0, w))
    return np.where(dmg, w, 0.0)


class _DegradedSolver:
    """Equilibrium solves for a sequence of slowly changing degradations.

    The last factorization serves as preconditioner for conjugate gradients
    on the current operator; the matrix is refactored only when that stalls.
    """

    def __init__(self, mesh, phases, max_cg=40, rtol=1e-11):
        self.mesh = mesh
        self.phases = phases
        self.L_el = element_stiffness_array(mesh, phases)
        self.max_cg = max_cg
        self.rtol = rtol
        self.op = None
        self.u = None
        self.factorizations = 0

    def _refactor(self, scale):
        self.op = LinearOperator(self.mesh, self.phases, scale)
        self.factorizations += 1

    def strain(self, scale, eps0):
        tau = -scale[:, None] * np.einsum("eij,j->ei", self.L_el, eps0)
        if self.op is None:
            self._refactor(scale)
        f = self.op.element_load(tau)
        free = self.mesh.free
        if np.array_equal(scale, self.op.scale):
            u = self.op.solve_fluctuation(f)
        else:
            K = assemble(self.mesh, self.phases, scale)
            pre = sla.LinearOperator(K.shape, matvec=self.op._lu.solve)
            x0 = None if self.u is None else self.u[free]
            x, info = sla.cg(K, f[free], x0=x0, rtol=self.rtol,
                             maxiter=self.max_cg, M=pre)
            if info == 0:
                u = np.zeros(f.shape)
                u[free] = x
            else:
                self._refactor(scale)
                u = self.op.solve_fluctuation(f)
        self.u = u
        return eps0[None, :] + self.op.fluctuation_strain(u)


def solve_damage_reference(mesh, phases, dparams, direction, amplitudes,
                           tol=1e-8, max_iter=200, callback=None):
    """Direct FE solution with local isotropic damage under a strain ramp.

    Each step alternates an equilibrium solve with the local update of the
    damage field from the element strains until the largest damage change
    drops below ``tol``. Damage history is irreversible.

    Parameters
    ----------
    mesh : PeriodicMesh
    phases : dict
        Stiffness matrix per phase id.
    dparams : dict
        :class:`~dtfa.damage.DamageParams` per phase id.
    direction : array_like
        Macro strain direction (Mandel vector).
    amplitudes : array_like
        Monotone sequence of load factors; step ``k`` applies
        ``amplitudes[k] * direction``.
    callback : callable, optional
        ``callback(k, point, omega, strain)`` returning True stops the ramp.

    Returns
    -------
    ReferenceResult
    """
    direction = np.asarray(direction, dtype=float)
    amplitudes = np.asarray(amplitudes, dtype=float)
    if np.any(np.diff(np.abs(amplitudes)) < 0):
        raise ParameterError("reference solver needs a monotone ramp")
    kd, kf, dmg = _element_damage_params(mesh, dparams)
    n_el = mesh.n_elements
    kappa = np.zeros(n_el)
    omega = np.zeros(n_el)
    solver = _DegradedSolver(mesh, phases)
    points, history, notes = [], [], []
    strain = np.zeros((n_el, 3))
    for k, a in enumerate(amplitudes):
        eps0 = a * direction
        w = element_omega(kappa, kd, kf, dmg)
        converged = False
        for it in range(1, max_iter + 1):
            strain = solver.strain(np.maximum(1.0 - w, RESIDUAL_STIFFNESS), eps0)
            k_trial = np.maximum(kappa, max_principal(strain))
            w_new = element_omega(k_trial, kd, kf, dmg)
            change = np.max(np.abs(w_new - w)) if n_el else 0.0
            w = w_new
            if change < tol:
                converged = True
                break
        if not converged:
            msg = f"step {k}: staggered iteration not converged (dw={change:.2e})"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning)
        kappa = k_trial
        omega = w
        factor = np.maximum(1.0 - omega, RESIDUAL_STIFFNESS)
        sig = factor[:, None] * np.einsum("eij,ej->ei", solver.L_el, strain)
        point = CurvePoint(eps0.copy(), sig.mean(axis=0), float(omega.max()),
                           float(omega[dmg].mean()) if dmg.any() else 0.0,
                           float(np.mean(omega > 0.0)), it, converged)
        points.append(point)
        history.append(omega.copy())
        log.debug("ref step %d a=%.4g it=%d max_w=%.3f", k, a, it, point.max_omega)
        if callback is not None and callback(k, point, omega, strain):
            break
    return ReferenceResult(points, omega, kappa, strain, history, notes)
