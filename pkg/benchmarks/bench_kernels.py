"""Timing of the batched partition Newton solve: compiled vs numpy kernel.

Usage::

    python benchmarks/bench_kernels.py [--points 4000] [--partitions 8 20]

Each case builds a reduced-order database on a random fiber cell, drives a
batch of material points into the softening regime and times one call of
``newton_batch`` from that committed state.
"""
import argparse
import time

import numpy as np

from dtfa import _kernels_py, clustering, fem, offline
from dtfa import microstructure as ms
from dtfa.damage import DamageParams
from dtfa.tensor import isotropic_stiffness

try:
    from dtfa import _kernels
except ImportError:
    _kernels = None

KD, KF = 0.009, 0.0315


def build_database(m, nx=32, seed=1):
    p = ms.rasterize(ms.generate_rsa(8, 0.41, seed), nx)
    mesh = fem.build_mesh(p)
    phases = {ms.FIBER: isotropic_stiffness(80000.0, 0.3),
              ms.MATRIX: isotropic_stiffness(2670.0, 0.3)}
    dparams = {ms.FIBER: DamageParams.elastic(),
               ms.MATRIX: DamageParams.softening(KD, KF)}
    snap = clustering.elastic_snapshots(mesh, phases)
    cmap = clustering.cluster(snap, mesh.phase, m, seed=0)
    return offline.build_rom(mesh, phases, cmap, dparams)


def damaged_batch(db, n, seed=0, steps=6):
    """Committed states after a ramp beyond initiation, plus an increment."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    d *= rng.uniform(1.0, 2.0, size=(n, 1)) * KD / steps
    M = db.n_partitions
    eps = np.zeros((n, M, 3))
    w = np.zeros((n, M))
    k = np.zeros((n, M))
    for _ in range(steps):
        out = _kernels_py.newton_batch(db.E, db.S, db.kappa_d, db.kappa_f,
                                       db.damageable, eps, w, k, d)
        ok = out[4]
        eps[ok], w[ok], k[ok] = out[0][ok], out[1][ok], out[2][ok]
    return eps, w, k, 0.5 * d


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=4000)
    ap.add_argument("--partitions", type=int, nargs="+", default=[2, 8, 20])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled kernels not built; only the numpy kernel is timed")
    print(f"{'M':>4} {'points':>7} {'numpy [s]':>10} {'cython [s]':>11} "
          f"{'speedup':>8} {'max diff':>10} {'capped':>6}")
    for m in args.partitions:
        db = build_database(m)
        batch = damaged_batch(db, args.points)
        a = (db.E, db.S, db.kappa_d, db.kappa_f, db.damageable, *batch)
        t_py = best_of(lambda: _kernels_py.newton_batch(*a), args.repeat)
        if _kernels is None:
            print(f"{m:>4} {args.points:>7} {t_py:>10.4f} {'-':>11} {'-':>8} "
                  f"{'-':>10} {'-':>6}")
            continue
        t_cy = best_of(lambda: _kernels.newton_batch(*a), args.repeat)
        ref, out = _kernels_py.newton_batch(*a), _kernels.newton_batch(*a)
        # points left unconverged at the iteration cap are not comparable
        ok = ref[4] & out[4]
        diff = np.abs(ref[0][ok] - out[0][ok]).max()
        print(f"{m:>4} {args.points:>7} {t_py:>10.4f} {t_cy:>11.4f} "
              f"{t_py / t_cy:>7.1f}x {diff:>10.2e} {int((~ok).sum()):>6}")


if __name__ == "__main__":
    main()
