"""Distances between stress-strain curves of the same strain program."""
import numpy as np
from scipy.integrate import trapezoid

from .errors import ParameterError

PROGRAM_TOL = 1e-12


def loading_component(eps):
    """Index of the strain component with the largest final magnitude."""
    return int(np.argmax(np.abs(np.asarray(eps, dtype=float)[-1])))


def arc_length(eps):
    """Cumulative strain-path length starting at zero (origin prepended)."""
    eps = np.asarray(eps, dtype=float)
    d = np.diff(np.vstack([np.zeros(eps.shape[1]), eps]), axis=0)
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(d, axis=1))])


def check_same_program(eps_a, eps_b, tol=PROGRAM_TOL):
    """Raise :class:`ParameterError` unless the strain paths coincide.

    A shorter curve (a run that stopped early) must follow the longer one.
    """
    eps_a = np.asarray(eps_a, dtype=float)
    eps_b = np.asarray(eps_b, dtype=float)
    n = min(len(eps_a), len(eps_b))
    if n == 0:
        raise ParameterError("empty curve")
    if eps_a.shape[1] != eps_b.shape[1]:
        raise ParameterError("curves have different strain components")
    scale = max(np.abs(eps_a).max(), np.abs(eps_b).max(), 1e-300)
    gap = np.abs(eps_a[:n] - eps_b[:n]).max() / scale
    if gap > tol:
        raise ParameterError(f"load programs differ (relative strain "
                             f"mismatch {gap:.3e})")
    return n


def peak_error(sig_a, sig_b, component):
    """``|max sig_a - max sig_b| / |max sig_b|`` along one component."""
    pa = np.max(np.asarray(sig_a)[:, component])
    pb = np.max(np.asarray(sig_b)[:, component])
    if pb == 0.0:
        raise ParameterError("reference curve has zero peak stress")
    return abs(pa - pb) / abs(pb)


def l2_distance(eps, sig_a, sig_b, component):
    """``sqrt(int (sig_a - sig_b)^2 ds)`` over the strain arc length ``s``.

    The unloaded origin (zero stress in both curves) is included.
    """
    s = arc_length(eps)
    diff = np.concatenate([[0.0], np.asarray(sig_a)[:, component]
                           - np.asarray(sig_b)[:, component]])
    return float(np.sqrt(trapezoid(diff * diff, s)))


def compare_curves(eps_a, sig_a, eps_b, sig_b, component=None):
    """Metrics of curve ``a`` against reference ``b`` on their common steps."""
    n = check_same_program(eps_a, eps_b)
    eps = np.asarray(eps_b, dtype=float)[:n]
    sig_a = np.asarray(sig_a, dtype=float)[:n]
    sig_b = np.asarray(sig_b, dtype=float)[:n]
    c = loading_component(eps) if component is None else component
    ref = l2_distance(eps, np.zeros_like(sig_b), sig_b, c)
    l2 = l2_distance(eps, sig_a, sig_b, c)
    return {"component": c, "steps": n,
            "peak_a": float(sig_a[:, c].max()),
            "peak_b": float(sig_b[:, c].max()),
            "peak_rel_error": float(peak_error(sig_a, sig_b, c)),
            "l2": l2, "l2_rel": l2 / ref if ref > 0 else float("inf"),
            "truncated": bool(len(eps_a) != len(eps_b))}
