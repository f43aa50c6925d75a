"""Local isotropic damage law and Hashin-type mixing factors.

The damage variable follows linear softening between the initiation strain
``kappa_d`` and the failure strain ``kappa_f``::

    omega(kappa) = kappa_f (kappa - kappa_d) / (kappa (kappa_f - kappa_d))

so that a uniaxial bar unloads along ``E kappa_d (kappa_f - kappa) /
(kappa_f - kappa_d)``. ``kappa`` is the running maximum of the largest
principal strain.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError
from .tensor import SQRT2, max_principal


@dataclass(frozen=True)
class DamageParams:
    """Damage parameters of one phase.

    A phase without parameters (``damageable=False``) never damages.
    """
    kappa_d: float = 0.0
    kappa_f: float = 0.0
    damageable: bool = False

    def __post_init__(self):
        if self.damageable and not 0.0 < self.kappa_d < self.kappa_f:
            raise ParameterError(
                f"need 0 < kappa_d < kappa_f, got {self.kappa_d}, {self.kappa_f}")

    @classmethod
    def elastic(cls):
        return cls()

    @classmethod
    def softening(cls, kappa_d, kappa_f):
        return cls(float(kappa_d), float(kappa_f), True)


@dataclass(frozen=True)
class Strengths:
    """Strain values at the ply strengths (all optional, positive)."""
    e11: Optional[float] = None
    e22: Optional[float] = None
    e12: Optional[float] = None
    e13: Optional[float] = None
    e23: Optional[float] = None

    def __post_init__(self):
        for name in ("e11", "e22", "e12", "e13", "e23"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ParameterError(f"strength {name} must be positive, got {v}")

    def scaled(self, factor):
        kw = {k: (None if v is None else v * factor)
              for k, v in self.__dict__.items()}
        return Strengths(**kw)


def update_kappa(kappa, eps):
    """Irreversible history update with the largest principal strain."""
    return np.maximum(kappa, max_principal(eps))


def omega(kappa, p):
    """Damage variable for history ``kappa`` (scalar or array)."""
    kappa = np.asarray(kappa, dtype=float)
    if not p.damageable:
        return np.zeros_like(kappa)
    kd, kf = p.kappa_d, p.kappa_f
    safe = np.where(kappa > kd, kappa, kf)
    w = kf * (safe - kd) / (safe * (kf - kd))
    return np.where(kappa <= kd, 0.0, np.where(kappa >= kf, 1.0, w))


def domega_dkappa(kappa, p):
    """Derivative of :func:`omega`; zero outside the open softening interval."""
    kappa = np.asarray(kappa, dtype=float)
    if not p.damageable:
        return np.zeros_like(kappa)
    kd, kf = p.kappa_d, p.kappa_f
    inside = (kappa > kd) & (kappa < kf)
    safe = np.where(inside, kappa, 1.0)
    return np.where(inside, kf * kd / ((kf - kd) * safe * safe), 0.0)


def _components(eps):
    """Tensor components keyed by index pair (Mandel shear unscaled)."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] == 3:
        return {"11": eps[..., 0], "22": eps[..., 1], "12": eps[..., 2] / SQRT2}
    return {"11": eps[..., 0], "22": eps[..., 1], "33": eps[..., 2],
            "23": eps[..., 3] / SQRT2, "13": eps[..., 4] / SQRT2,
            "12": eps[..., 5] / SQRT2}


def _ratio_sq(value, strength, name):
    if strength is None:
        if np.any(value != 0.0):
            raise ParameterError(f"strength {name} required for nonzero strain")
        return np.zeros_like(value)
    return (value / strength) ** 2


def hashin_fiber(eps, s):
    """Fiber-mode factor from ply-frame strains (Mandel vector)."""
    c = _components(eps)
    r = _ratio_sq(c["11"], s.e11, "e11") + _ratio_sq(c["12"], s.e12, "e12")
    if "13" in c:
        r = r + _ratio_sq(c["13"], s.e13, "e13")
    return r


def hashin_matrix(eps, s):
    """Transverse (matrix) mode factor from ply-frame strains."""
    c = _components(eps)
    r = _ratio_sq(c["22"], s.e22, "e22") + _ratio_sq(c["12"], s.e12, "e12")
    if "33" in c:
        r = r + _ratio_sq(c["33"], s.e22, "e22")
        cross = c["23"] ** 2 - c["22"] * c["33"]
        if s.e23 is None:
            if np.any(cross != 0.0):
                raise ParameterError("strength e23 required for nonzero strain")
        else:
            r = r + cross / s.e23 ** 2
        r = r + _ratio_sq(c["13"], s.e12, "e12")
    return r


def psi(rf, rm):
    """Uniform-strain weight ``rf / (rf + rm)``; 0.5 when both vanish."""
    rf = np.asarray(rf, dtype=float)
    rm = np.asarray(rm, dtype=float)
    tot = rf + rm
    return np.where(tot > 0.0, rf / np.where(tot > 0.0, tot, 1.0), 0.5)
