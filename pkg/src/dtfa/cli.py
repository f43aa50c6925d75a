"""Command-line entry point ``dtfa``.

Exit codes: 0 success, 2 user or config error, 3 numerical or model error,
4 non-convergence (partial results are written).
"""
import argparse
import json
import logging
import os
import sys

from .errors import (ConvergenceError, DiagnosticsError, DtfaError,
                     ParameterError, RomFormatError, SaturationError,
                     StructuralError)

EXIT_OK, EXIT_USER, EXIT_MODEL, EXIT_PARTIAL = 0, 2, 3, 4
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

COMMANDS = {
    "gen-rve": "generate the periodic fiber cell (phase_map.json, preview.pgm)",
    "cluster": "partition the cell (cluster_map.json, clusters.pgm)",
    "offline": "influence tensors and homogenized law (rom.dtfa, invariants.json)",
    "run-rve": "reduced-order response to the strain program (tfa_curve.csv)",
    "run-fem-ref": "direct FE damage reference (fem_curve.csv, fem_omega.pgm)",
    "compare": "peak-stress error and L2 distance between two curve files",
    "run-macro": "open-hole specimen runs (force, strength, crack-path outputs)",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dtfa", description="Damage-aware transformation field analysis.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides the config; "
                        "fallback root DTFA_OUT_DIR)")
    common.add_argument("--workers", type=int, default=None,
                        help="cap on worker processes and math threads "
                        "(default: all cores)")
    common.add_argument("--seed-override", type=int, default=None,
                        help="replace the rve and clustering seeds")
    common.add_argument("--verbose", "-v", action="store_true",
                        help="debug logging on stderr")
    for name, text in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "compare":
            p.add_argument("curve_a", help="curve under test")
            p.add_argument("curve_b", help="reference curve")
            p.add_argument("--component", type=int, choices=(0, 1, 2),
                           default=None, help="stress component (default: "
                           "dominant loading component)")
            p.add_argument("-c", "--config", help="optional config (outputs)")
        else:
            p.add_argument("-c", "--config", required=True,
                           help="JSON run configuration")
    return parser


def _out_dir(args, cfg):
    if args.out:
        return args.out
    rel = cfg["outputs"]["dir"] if cfg else None
    root = os.environ.get("DTFA_OUT_DIR")
    if root:
        return os.path.join(root, rel) if rel and not os.path.isabs(rel) else \
            (rel or root)
    return rel or "."


def _setup_logging(out, verbose):
    logger = logging.getLogger("dtfa")
    logger.setLevel(logging.DEBUG)
    for h in list(logger.handlers):
        logger.removeHandler(h)
        h.close()
    fh = logging.FileHandler(os.path.join(out, "run.log"))
    fh.setLevel(logging.DEBUG if verbose else logging.INFO)
    fh.setFormatter(logging.Formatter(
        "%(asctime)s %(levelname)s %(name)s: %(message)s"))
    sh = logging.StreamHandler(sys.stderr)
    sh.setLevel(logging.DEBUG if verbose else logging.WARNING)
    sh.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    logger.addHandler(fh)
    logger.addHandler(sh)
    return logger


def _run(args):
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    if workers < 1:
        raise ParameterError("--workers must be at least 1")
    for var in _THREAD_VARS:
        os.environ[var] = str(workers)
    import warnings

    from . import config, pipeline

    cfg = None
    if args.config:
        cfg = config.load(args.config)
        if args.seed_override is not None:
            if args.seed_override < 0:
                raise ParameterError("--seed-override must be non-negative")
            cfg["rve"]["seed"] = args.seed_override
            cfg["clustering"]["seed"] = args.seed_override
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    log = _setup_logging(out, args.verbose)
    log.info("dtfa %s started (workers=%d)", args.command, workers)
    logging.captureWarnings(True)
    warnings.simplefilter("always", RuntimeWarning)
    if args.command == "compare":
        res = pipeline.compare_stage(args.curve_a, args.curve_b, out,
                                     args.component)
        m = res["metrics"]
        print(f"peak_rel_error {m['peak_rel_error']:.6g}")
        print(f"l2_distance {m['l2']:.6g}")
        print(f"l2_relative {m['l2_rel']:.6g}")
        print(f"steps {m['steps']} component {m['component']}")
    else:
        pipeline.write_resolved_config(cfg, out, args.command)
        stage = pipeline.STAGES[args.command]
        if args.command == "run-macro":
            res = stage(cfg, out, workers)
        else:
            res = stage(cfg, out)
        summary = {k: v for k, v in res.items() if k not in ("paths",)}
        print(json.dumps(summary, sort_keys=True, default=str))
    log.info("dtfa %s finished with status %d", args.command, res["status"])
    return res["status"]


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except (ParameterError, RomFormatError) as exc:
        print(f"dtfa: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except ConvergenceError as exc:
        print(f"dtfa: not converged: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except (SaturationError, StructuralError, DiagnosticsError,
            DtfaError) as exc:
        print(f"dtfa: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
