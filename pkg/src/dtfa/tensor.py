"""Symmetric tensor algebra in the orthonormal (Mandel) component convention.

Second-order symmetric tensors are stored as component vectors

* 2D: ``[t11, t22, sqrt(2) t12]``
* 3D: ``[t11, t22, t33, sqrt(2) t23, sqrt(2) t13, sqrt(2) t12]``

and fourth-order tensors with minor symmetries as the matching 3x3 or 6x6
matrices. In this convention the double contraction is a plain dot product,
``A : B`` is a matrix product and transposes and inverses are literal matrix
operations.

Functions
---------
isotropic_stiffness
    Isotropic elastic stiffness (plane strain or 3D).
max_principal
    Largest eigenvalue of a symmetric tensor.
rotate_stiffness
    Express a 2D fourth-order tensor in a frame rotated in-plane.
"""
import numpy as np

from .errors import ParameterError

SQRT2 = np.sqrt(2.0)

# (row, col) of the full matrix for every Mandel component
_PAIRS = {
    3: ((0, 0), (1, 1), (0, 1)),
    6: ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)),
}


def n_components(dim):
    """Number of Mandel components for a spatial dimension (2 or 3)."""
    if dim == 2:
        return 3
    if dim == 3:
        return 6
    raise ParameterError(f"unsupported dimension {dim}")


def _weights(ncomp):
    w = np.ones(ncomp)
    w[2 if ncomp == 3 else 3:] = SQRT2
    return w


def to_mandel(matrix):
    """Convert symmetric matrices of shape ``(..., d, d)`` to Mandel vectors."""
    matrix = np.asarray(matrix, dtype=float)
    dim = matrix.shape[-1]
    ncomp = n_components(dim)
    w = _weights(ncomp)
    out = np.empty(matrix.shape[:-2] + (ncomp,))
    for k, (i, j) in enumerate(_PAIRS[ncomp]):
        out[..., k] = w[k] * matrix[..., i, j]
    return out


def from_mandel(vec):
    """Convert Mandel vectors of shape ``(..., 3|6)`` to symmetric matrices."""
    vec = np.asarray(vec, dtype=float)
    ncomp = vec.shape[-1]
    dim = 2 if ncomp == 3 else 3
    w = _weights(ncomp)
    out = np.zeros(vec.shape[:-1] + (dim, dim))
    for k, (i, j) in enumerate(_PAIRS[ncomp]):
        out[..., i, j] = vec[..., k] / w[k]
        out[..., j, i] = vec[..., k] / w[k]
    return out


def tensor4_to_mandel(c):
    """Map a full ``(d, d, d, d)`` tensor with minor symmetries to a matrix."""
    c = np.asarray(c, dtype=float)
    dim = c.shape[0]
    ncomp = n_components(dim)
    w = _weights(ncomp)
    pairs = _PAIRS[ncomp]
    out = np.empty((ncomp, ncomp))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            out[a, b] = w[a] * w[b] * c[i, j, k, l]
    return out


def mandel_to_tensor4(m):
    """Inverse of :func:`tensor4_to_mandel`."""
    m = np.asarray(m, dtype=float)
    ncomp = m.shape[0]
    dim = 2 if ncomp == 3 else 3
    w = _weights(ncomp)
    pairs = _PAIRS[ncomp]
    out = np.zeros((dim,) * 4)
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            v = m[a, b] / (w[a] * w[b])
            for p, q in {(i, j), (j, i)}:
                for r, s in {(k, l), (l, k)}:
                    out[p, q, r, s] = v
    return out


def identity(ncomp=3):
    """Fourth-order symmetric identity in Mandel form."""
    return np.eye(ncomp)


def inner(a, b):
    """Double contraction of two Mandel vectors (broadcast over leading axes)."""
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def isotropic_stiffness(E, nu, mode="plane_strain"):
    """Isotropic linear elastic stiffness.

    Parameters
    ----------
    E : float
        Young's modulus (MPa).
    nu : float
        Poisson's ratio, ``-1 < nu < 0.5``.
    mode : {'plane_strain', '3d'}
        Plane strain returns the in-plane 3x3 block.

    Returns
    -------
    numpy.ndarray
        Stiffness matrix in Mandel form.
    """
    if not E > 0:
        raise ParameterError(f"Young's modulus must be positive, got {E}")
    if not -1.0 < nu < 0.5:
        raise ParameterError(f"Poisson's ratio must lie in (-1, 0.5), got {nu}")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    two_mu = E / (1.0 + nu)
    if mode == "plane_strain":
        L = np.array([[lam + two_mu, lam, 0.0],
                      [lam, lam + two_mu, 0.0],
                      [0.0, 0.0, two_mu]])
    elif mode == "3d":
        L = np.zeros((6, 6))
        L[:3, :3] = lam
        L[np.arange(6), np.arange(6)] += two_mu
    else:
        raise ParameterError(f"unknown stiffness mode {mode!r}")
    return L


def max_principal(t):
    """Largest eigenvalue of symmetric tensors given as Mandel vectors.

    Closed form in 2D, ``numpy.linalg.eigvalsh`` in 3D. Works on a single
    vector or on arrays of shape ``(..., ncomp)``.
    """
    t = np.asarray(t, dtype=float)
    if t.shape[-1] == 3:
        m = 0.5 * (t[..., 0] + t[..., 1])
        d = 0.5 * (t[..., 0] - t[..., 1])
        e = t[..., 2] / SQRT2
        return m + np.sqrt(d * d + e * e)
    return np.linalg.eigvalsh(from_mandel(t))[..., -1]


def max_principal_grad(t):
    """Largest principal value and its gradient (2D only).

    The gradient is the principal-direction dyad ``n (x) n`` in Mandel form,
    ``[n1^2, n2^2, sqrt(2) n1 n2]``. At a repeated eigenvalue the isotropic
    subgradient ``[1/2, 1/2, 0]`` is returned.
    """
    t = np.asarray(t, dtype=float)
    m = 0.5 * (t[..., 0] + t[..., 1])
    d = 0.5 * (t[..., 0] - t[..., 1])
    e = t[..., 2] / SQRT2
    r = np.sqrt(d * d + e * e)
    safe = np.where(r > 0.0, r, 1.0)
    cos2 = np.where(r > 0.0, d / safe, 0.0)
    sin2 = np.where(r > 0.0, e / safe, 0.0)
    grad = np.stack([0.5 * (1.0 + cos2), 0.5 * (1.0 - cos2),
                     sin2 / SQRT2], axis=-1)
    return m + r, grad


def rotation_matrix(theta):
    """Mandel matrix ``Q`` with ``to_mandel(R t R^T) = Q @ to_mandel(t)``.

    ``R`` is the counter-clockwise in-plane rotation by ``theta`` radians.
    ``Q`` is orthogonal, so ``Q.T`` rotates back.
    """
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c * c, s * s, -SQRT2 * c * s],
                     [s * s, c * c, SQRT2 * c * s],
                     [SQRT2 * c * s, -SQRT2 * c * s, c * c - s * s]])


def rotate_stiffness(L, theta):
    """Rotate a 2D fourth-order tensor in-plane by ``theta`` radians.

    A material whose principal axis is ``e1`` in ``L`` has it along
    ``(cos theta, sin theta)`` in the returned tensor.
    """
    L = np.asarray(L, dtype=float)
    if L.shape != (3, 3):
        raise ParameterError("rotate_stiffness is implemented for 2D only")
    Q = rotation_matrix(theta)
    return Q @ L @ Q.T


def rotate_vector(t, theta):
    """Rotate 2D Mandel vectors (shape ``(..., 3)``) by ``theta`` radians."""
    return np.asarray(t) @ rotation_matrix(theta).T
