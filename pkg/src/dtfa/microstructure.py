"""Periodic fiber-in-matrix unit cells.

Fibers are placed by random sequential adsorption (RSA) on the unit torus and
rasterized onto a regular grid of square pixels by a centroid-in-disk test.
Phase ids follow the convention 1 = fiber, 2 = matrix.
"""
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ParameterError, SaturationError

FIBER = 1
MATRIX = 2
MAX_TRIALS = 100_000


@dataclass
class FiberSet:
    """Fiber centers in unit-cell coordinates and their common radius."""
    centers: np.ndarray
    radius: float
    target_vf: float
    seed: Optional[int] = None

    @property
    def n_fibers(self):
        return len(self.centers)


@dataclass
class PhaseMap:
    """Rasterized cell; ``phase[iy, ix]`` holds the phase id of a pixel."""
    phase: np.ndarray
    vf: float = 0.0
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    @property
    def ny(self):
        return self.phase.shape[0]

    @property
    def nx(self):
        return self.phase.shape[1]

    @property
    def n_elements(self):
        return self.phase.size

    @property
    def cell_size(self):
        return 1.0 / self.nx

    def element_phase(self):
        """Phase id per element in row-major (element id) order."""
        return self.phase.ravel()


def periodic_distance(a, b):
    """Distance between points on the unit torus (broadcasting)."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    d = np.minimum(d, 1.0 - d)
    return np.sqrt(np.sum(d * d, axis=-1))


def generate_rsa(n_fibers, vf, seed, gap=0.0, max_trials=MAX_TRIALS):
    """Random sequential adsorption of equal disks on the unit torus.

    Parameters
    ----------
    n_fibers : int
        Number of fibers.
    vf : float
        Target fiber volume fraction, ``0 < vf < 0.6``; the radius follows
        from ``n pi r^2 = vf``.
    seed : int
        Seed of the random generator; identical inputs give identical sets.
    gap : float
        Extra clearance between fiber surfaces (unit-cell units).
    max_trials : int
        Rejections allowed per fiber before giving up.
    """
    if n_fibers < 1:
        raise ParameterError("n_fibers must be at least 1")
    if not 0.0 < vf < 0.6:
        raise ParameterError(f"vf must lie in (0, 0.6), got {vf}")
    radius = float(np.sqrt(vf / (n_fibers * np.pi)))
    rng = np.random.default_rng(seed)
    dmin = 2.0 * radius + gap
    centers = np.empty((n_fibers, 2))
    for k in range(n_fibers):
        for _ in range(max_trials):
            c = rng.random(2)
            if k == 0 or np.all(periodic_distance(centers[:k], c) >= dmin):
                centers[k] = c
                break
        else:
            raise SaturationError(
                f"RSA saturated after placing {k} of {n_fibers} fibers", k)
    return FiberSet(centers, radius, float(vf), seed)


def rasterize(fibers, nx, ny=None):
    """Assign each pixel the fiber phase iff its centroid lies in a disk.

    Disks are replicated periodically, so a fiber near an edge also shows up
    on the opposite edge.
    """
    if nx < 8:
        raise ParameterError("rasterization needs nx >= 8")
    ny = nx if ny is None else ny
    xc = (np.arange(nx) + 0.5) / nx
    yc = (np.arange(ny) + 0.5) / ny
    X, Y = np.meshgrid(xc, yc)
    inside = np.zeros((ny, nx), dtype=bool)
    r2 = fibers.radius ** 2
    for cx, cy in fibers.centers:
        dx = np.abs(X - cx)
        dx = np.minimum(dx, 1.0 - dx)
        dy = np.abs(Y - cy)
        dy = np.minimum(dy, 1.0 - dy)
        inside |= dx * dx + dy * dy < r2
    phase = np.where(inside, FIBER, MATRIX).astype(np.int8)
    meta = {"kind": "rsa", "n_fibers": fibers.n_fibers,
            "radius": fibers.radius,
            "centers": fibers.centers.tolist()}
    return PhaseMap(phase, fibers.target_vf, fibers.seed, meta)


def laminate(nx, vf, n_strips=1, ny=None, along="y"):
    """Layered cell with fiber strips running along ``along`` (x or y).

    With the default, columns ``ix`` whose centroid falls in a fiber strip
    get the fiber phase; loading along ``x`` is then in series and along
    ``y`` in parallel. ``along="x"`` gives the transposed arrangement, a ply
    section whose fiber direction is axis 1.
    """
    ny = nx if ny is None else ny
    if not 0.0 <= vf < 1.0:
        raise ParameterError(f"vf must lie in [0, 1), got {vf}")
    if along not in ("x", "y"):
        raise ParameterError(f"strip direction must be 'x' or 'y', got {along!r}")
    count = nx if along == "y" else ny
    c = (np.arange(count) + 0.5) / count
    strips = np.where((c * n_strips) % 1.0 < vf, FIBER, MATRIX).astype(np.int8)
    if along == "y":
        phase = np.tile(strips, (ny, 1))
    else:
        phase = np.tile(strips[:, None], (1, nx))
    return PhaseMap(phase, float(vf), None,
                    {"kind": "laminate", "n_strips": n_strips, "along": along})


def homogeneous(nx, phase_id=MATRIX, ny=None):
    ny = nx if ny is None else ny
    return PhaseMap(np.full((ny, nx), phase_id, dtype=np.int8), 0.0, None,
                    {"kind": "homogeneous"})


def volume_fractions(p):
    """Fractions ``(fiber, matrix)``; they sum to one exactly."""
    n = p.n_elements
    nf = int(np.count_nonzero(p.phase == FIBER))
    return nf / n, (n - nf) / n


def to_json(p):
    """Serialize a phase map (header plus row-major phase ids)."""
    doc = {"nx": p.nx, "ny": p.ny, "vf": p.vf, "seed": p.seed,
           "meta": p.meta, "phase": p.phase.ravel().tolist()}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def from_json(text):
    doc = json.loads(text)
    phase = np.asarray(doc["phase"], dtype=np.int8).reshape(doc["ny"], doc["nx"])
    return PhaseMap(phase, doc.get("vf", 0.0), doc.get("seed"),
                    doc.get("meta", {}))


def write_pgm(path, image, max_value=None):
    """Write a binary PGM (P5) image; row 0 is the top of the picture."""
    image = np.asarray(image)
    max_value = int(image.max()) if max_value is None else int(max_value)
    max_value = max(1, min(max_value, 255))
    scaled = np.clip(np.round(image * (255.0 / max_value)), 0, 255)
    data = scaled.astype(np.uint8)[::-1]
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (data.shape[1], data.shape[0]))
        fh.write(data.tobytes())


def write_phase_pgm(path, p):
    """Fiber pixels white, matrix black."""
    write_pgm(path, (p.phase == FIBER).astype(int), 1)
