"""Config-driven pipeline stages and their artifacts.

Every stage reads its upstream artifacts from the output directory, records
their SHA-256 checksums in what it writes, and returns a status dictionary.
Artifacts are deterministic functions of the resolved config; wall-clock
information goes to the log only.
"""
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import clustering, compare, config, fem, macro, offline, online
from .errors import ParameterError
from .microstructure import (FIBER, MATRIX, from_json, generate_rsa,
                             homogeneous, laminate, rasterize, to_json,
                             volume_fractions, write_pgm, write_phase_pgm)
from .tensor import SQRT2, isotropic_stiffness

log = logging.getLogger(__name__)

PHASE_MAP = "phase_map.json"
CLUSTER_MAP = "cluster_map.json"
ROM = "rom.dtfa"
TFA_CURVE = "tfa_curve.csv"
FEM_CURVE = "fem_curve.csv"


def sha256_file(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode()).hexdigest()


def _require(out, name, stage):
    path = os.path.join(out, name)
    if not os.path.isfile(path):
        raise ParameterError(f"{name} not found in {out}; run '{stage}' first")
    return path


def write_resolved_config(cfg, out, name):
    return _write_text(os.path.join(out, f"{name}.config.json"),
                       config.dumps(cfg))


def phases_from_config(cfg):
    mats = cfg["materials"]
    return {FIBER: isotropic_stiffness(mats["fiber"]["E"], mats["fiber"]["nu"]),
            MATRIX: isotropic_stiffness(mats["matrix"]["E"], mats["matrix"]["nu"])}


def dparams_from_config(cfg):
    return {FIBER: macro.damage_params(cfg["materials"]["fiber"]),
            MATRIX: macro.damage_params(cfg["materials"]["matrix"])}


def load_direction(cfg):
    """Mandel direction of the strain program (config gives tensor 11, 22, 12)."""
    prog = cfg["program"]
    if prog["load_case"] == "custom":
        d = np.asarray(prog["direction"], dtype=float)
        if not np.any(d):
            raise ParameterError("program direction must be nonzero")
        return np.array([d[0], d[1], SQRT2 * d[2]])
    return clustering.LOAD_CASES[prog["load_case"]].copy()


def amplitudes(cfg):
    prog = cfg["program"]
    k = np.arange(1, prog["steps"] + 1)
    return prog["amplitude"] * k / prog["steps"]


def strain_program(cfg):
    """Increments whose running sum equals ``amplitudes * direction``."""
    a = amplitudes(cfg)
    return np.diff(np.concatenate([[0.0], a]))[:, None] * load_direction(cfg)


def program_header(cfg):
    prog = cfg["program"]
    d = [float(x) for x in load_direction(cfg)]
    return [f"program: load_case={prog['load_case']} "
            f"direction={d[0]!r},{d[1]!r},{d[2]!r} "
            f"amplitude={prog['amplitude']!r} steps={prog['steps']}"]


def make_phase_map(cfg):
    r = cfg["rve"]
    if r["kind"] == "rsa":
        return rasterize(generate_rsa(r["n_fibers"], r["vf"], r["seed"],
                                      r["gap"]), r["nx"])
    if r["kind"] == "laminate":
        return laminate(r["nx"], r["vf"])
    return homogeneous(r["nx"])


# ---------------------------------------------------------------- stages

def gen_rve(cfg, out):
    p = make_phase_map(cfg)
    sha = _write_text(os.path.join(out, PHASE_MAP), to_json(p))
    if "pgm" in cfg["outputs"]["formats"]:
        write_phase_pgm(os.path.join(out, "preview.pgm"), p)
    vf, _ = volume_fractions(p)
    log.info("phase map %dx%d, pixel vf %.4f, sha256 %s", p.nx, p.ny, vf, sha)
    return {"status": 0, "phase_map_sha256": sha, "vf": vf}


def _load_phase_map(out):
    path = _require(out, PHASE_MAP, "gen-rve")
    with open(path) as fh:
        text = fh.read()
    return from_json(text), hashlib.sha256(text.encode()).hexdigest()


def _snapshots(cfg, out, mesh, phases, dparams, sha):
    """Snapshot matrix, cached in ``snapshots_<scheme>.npz`` by input key."""
    c = cfg["clustering"]
    key = json.dumps({"phase_map": sha, "scheme": c["scheme"],
                      "materials": cfg["materials"],
                      "amplitude": c["trigger_amplitude"],
                      "steps": c["snapshot_steps"]}, sort_keys=True)
    path = os.path.join(out, f"snapshots_{c['scheme']}.npz")
    if os.path.isfile(path):
        with np.load(path, allow_pickle=False) as z:
            if str(z["key"]) == key:
                log.info("reusing cached snapshots %s", path)
                return clustering.SnapshotMatrix(z["data"], c["scheme"])
    if c["scheme"] == "elastic":
        snap = clustering.elastic_snapshots(mesh, phases, dparams=dparams)
    else:
        snap = clustering.eigen_snapshots(mesh, phases, dparams,
                                          c["trigger_amplitude"],
                                          c["snapshot_steps"])
    np.savez(path, data=snap.data, key=np.array(key))
    return snap


def cluster_stage(cfg, out):
    p, sha = _load_phase_map(out)
    c = cfg["clustering"]
    if not 1 <= c["m"] <= p.n_elements:
        raise ParameterError(f"clustering m={c['m']} outside [1, "
                             f"{p.n_elements}] (element count)")
    mesh = fem.build_mesh(p)
    phases, dparams = phases_from_config(cfg), dparams_from_config(cfg)
    snap = _snapshots(cfg, out, mesh, phases, dparams, sha)
    fallback = None
    if c["scheme"] == "eigen":
        fallback = clustering.elastic_snapshots(mesh, phases)
    cmap = clustering.cluster(snap, mesh.phase, c["m"], c["seed"], fallback,
                              c["n_init"])
    doc = json.loads(cmap.to_json())
    doc["upstream"] = {"phase_map_sha256": sha}
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    csha = _write_text(os.path.join(out, CLUSTER_MAP), text)
    if "pgm" in cfg["outputs"]["formats"]:
        clustering.write_cluster_pgm(os.path.join(out, "clusters.pgm"), cmap,
                                     p.nx, p.ny)
    return {"status": 0, "cluster_map_sha256": csha,
            "n_partitions": cmap.n_partitions,
            "objective": float(clustering.objective(snap.data, cmap.labels))}


def _load_cluster_map(out, phase_sha):
    path = _require(out, CLUSTER_MAP, "cluster")
    with open(path) as fh:
        text = fh.read()
    up = json.loads(text).get("upstream", {}).get("phase_map_sha256")
    if up != phase_sha:
        raise ParameterError("cluster_map.json was built from a different "
                             "phase map; rerun 'cluster'")
    return (clustering.ClusterMap.from_json(text),
            hashlib.sha256(text.encode()).hexdigest())


def offline_stage(cfg, out):
    p, sha = _load_phase_map(out)
    cmap, csha = _load_cluster_map(out, sha)
    mesh = fem.build_mesh(p)
    cmap.check(mesh.phase)
    prov = {"phase_map_sha256": sha, "cluster_map_sha256": csha,
            "scheme": cmap.scheme}
    db = offline.build_rom(mesh, phases_from_config(cfg), cmap,
                           dparams_from_config(cfg), prov)
    rsha = offline.write_rom(db, os.path.join(out, ROM))
    report = {k: float(v) for k, v in offline.invariant_report(db).items()}
    report["rom_sha256"] = rsha
    _write_text(os.path.join(out, "invariants.json"),
                json.dumps(report, indent=2, sort_keys=True) + "\n")
    return {"status": 0, "rom_sha256": rsha, "invariants": report}


def _psi_rule(cfg):
    o = cfg["online"]
    return online.resolve_psi(o["strengths"], o["psi"])


def run_rve_stage(cfg, out):
    path = _require(out, ROM, "offline")
    db = offline.read_rom(path)
    rsha = sha256_file(path)
    o = cfg["online"]
    curve = online.run_rve_program(db, strain_program(cfg), _psi_rule(cfg),
                                   o["tol"], o["max_iter"])
    header = [f"rom_sha256: {rsha}",
              f"phase_map_sha256: {db.provenance.get('phase_map_sha256', '')}",
              *program_header(cfg)]
    online.write_curve_csv(os.path.join(out, TFA_CURVE), curve, header)
    online.write_trace_csv(os.path.join(out, "tfa_trace.csv"), curve, header)
    if not curve.converged:
        log.warning("tfa run stopped at increment %s", curve.failures)
    return {"status": 0 if curve.converged else 4, "steps": len(curve.rows),
            "failures": curve.failures}


def run_fem_stage(cfg, out):
    p, sha = _load_phase_map(out)
    mesh = fem.build_mesh(p)
    f = cfg["fem_ref"]
    res = fem.solve_damage_reference(mesh, phases_from_config(cfg),
                                     dparams_from_config(cfg),
                                     load_direction(cfg), amplitudes(cfg),
                                     f["tol"], f["max_iter"])
    header = [f"phase_map_sha256: {sha}", *program_header(cfg)]
    rows = []
    for k, pt in enumerate(res.points, start=1):
        e, s = pt.eps0, pt.sigma
        rows.append({"step": k, "eps11": e[0], "eps22": e[1],
                     "eps12": e[2] / SQRT2, "sig11": s[0], "sig22": s[1],
                     "sig12": s[2] / SQRT2, "max_omega": pt.max_omega,
                     "mean_omega": pt.mean_omega,
                     "damaged_fraction": pt.damaged_fraction,
                     "iters": pt.iterations, "converged": int(pt.converged)})
    write_rows_csv(os.path.join(out, FEM_CURVE), rows, header)
    if "pgm" in cfg["outputs"]["formats"]:
        write_pgm(os.path.join(out, "fem_omega.pgm"),
                  res.omega.reshape(p.ny, p.nx), 1)
    # steps that hit the sweep cap are kept (flagged in the CSV and the log)
    return {"status": 0, "steps": len(rows), "warnings": res.warnings}


def write_rows_csv(path, rows, header=()):
    cols = list(rows[0]) if rows else ["step"]
    lines = [f"# {h}" for h in header] + [",".join(cols)]
    for r in rows:
        lines.append(",".join(online._fmt(r[c]) for c in cols))
    _write_text(path, "\n".join(lines) + "\n")


def _header_value(header, key):
    for line in header:
        if line.startswith(key + ":"):
            return line.split(":", 1)[1].strip()
    return None


def compare_stage(path_a, path_b, out=None, component=None):
    """Compare curve ``a`` against reference ``b`` (any two curve CSVs)."""
    for p in (path_a, path_b):
        if not os.path.isfile(p):
            raise ParameterError(f"curve file {p} not found")
    rows_a, head_a = online.read_curve_csv(path_a)
    rows_b, head_b = online.read_curve_csv(path_b)
    la = _header_value(head_a, "phase_map_sha256")
    lb = _header_value(head_b, "phase_map_sha256")
    if la and lb and la != lb:
        raise ParameterError("curves come from different phase maps "
                             "(mismatched lineage)")
    pa, pb = _header_value(head_a, "program"), _header_value(head_b, "program")
    if pa and pb and pa != pb:
        raise ParameterError(f"mismatched load programs:\n  {pa}\n  {pb}")

    def arrays(rows):
        e = np.array([[r["eps11"], r["eps22"], SQRT2 * r["eps12"]] for r in rows])
        s = np.array([[r["sig11"], r["sig22"], SQRT2 * r["sig12"]] for r in rows])
        return e, s

    ea, sa = arrays(rows_a)
    eb, sb = arrays(rows_b)
    metrics = compare.compare_curves(ea, sa, eb, sb, component)
    metrics.update({"a": os.path.basename(path_a), "b": os.path.basename(path_b),
                    "a_sha256": sha256_file(path_a),
                    "b_sha256": sha256_file(path_b)})
    if out is not None:
        _write_text(os.path.join(out, "compare.json"),
                    json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return {"status": 0, "metrics": metrics}


# ----------------------------------------------------------------- macro

def _macro_one(args):
    cfg, out, theta, mesh, db = args
    m = cfg["macro"]
    psi_rule = _psi_rule(cfg)
    tag = f"theta{theta:g}"
    write_vtk = "vtk" in cfg["outputs"]["formats"] and m["vtk_every"] > 0
    counter = {"k": 0}

    def callback(model, U, trial):
        counter["k"] += 1
        k = counter["k"]
        if write_vtk and k % m["vtk_every"] == 0:
            _macro_vtk(out, tag, k, mesh, trial)

    res = macro.run_macro(mesh, db, theta, psi_rule, u_max=m["u_max"],
                          steps=m["steps"], thickness=m["thickness"],
                          stop_ratio=m["stop_ratio"], solver=m["solver"],
                          callback=callback)
    return res


def _macro_vtk(out, tag, k, mesh, trial):
    os.makedirs(os.path.join(out, "vtk"), exist_ok=True)
    ne = mesh.n_elements
    st = trial["state"]
    sig = trial["sigma"].reshape(ne, 4, 3).mean(axis=1)
    cells = {"damage": macro.damage_measure(trial["Dbar"]).reshape(ne, 4).mean(1),
             "omega_max": st.omega.max(axis=1).reshape(ne, 4).mean(1),
             "sxx": sig[:, 0], "syy": sig[:, 1], "sxy": sig[:, 2] / SQRT2}
    macro.write_vtk(os.path.join(out, "vtk", f"{tag}_step{k:04d}.vtk"), mesh,
                    cells, {"displacement": trial["u"]}, title=f"{tag} step {k}")


def macro_rom(cfg):
    ply = cfg["macro"]["ply"]
    return macro.ply_rom(ply["vf"], ply["fiber"], ply["matrix"])


def run_macro_stage(cfg, out, workers=1):
    m = cfg["macro"]
    mesh = macro.gen_open_hole_mesh(m["L"], m["W"], m["d"], m["target_elems"])
    db = macro_rom(cfg)
    thetas = [float(t) for t in m["theta"]]
    unique = list(dict.fromkeys(thetas))
    jobs = [(cfg, out, t, mesh, db) for t in unique]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            results = dict(zip(unique, ex.map(_macro_one, jobs)))
    else:
        results = {t: _macro_one(j) for t, j in zip(unique, jobs)}
    cfg_sha = hashlib.sha256(config.dumps(cfg).encode()).hexdigest()
    area = m["W"] * m["thickness"]
    header = [f"config_sha256: {cfg_sha}",
              f"mesh: elements={mesh.n_elements} nodes={mesh.n_nodes}"]
    rows, paths = [], {}
    for t in thetas:
        res = results[t]
        macro.write_force_csv(os.path.join(out, f"force_theta{t:g}.csv"), res,
                              header)
        rows.append({"theta": t, "strength": res.peak_force / area,
                     "peak_displacement": res.displacement[res.peak_index]
                     if res.displacement else 0.0,
                     "converged": int(res.converged)})
        if not res.history:
            paths[f"{t:g}"] = {"angle": None, "elements": 0}
            continue
        cp = macro.extract_crack_path(mesh, res.history[-1]["damage"],
                                      m["crack_threshold"])
        onset = macro.splitting_onset(mesh, res)
        paths[f"{t:g}"] = {
            "angle": None if cp.empty or np.isnan(cp.angle) else cp.angle,
            "elements": int(cp.elements.size),
            "points": np.round(cp.points, 12).tolist(),
            "peak_step": res.peak_index + 1,
            "splitting_onset_step": None if onset is None else onset + 1,
            "converged": bool(res.converged), "notes": res.notes}
    write_rows_csv(os.path.join(out, "strength.csv"), rows, header)
    _write_text(os.path.join(out, "crack_paths.json"),
                json.dumps(paths, indent=2, sort_keys=True) + "\n")
    ok = all(r["converged"] for r in rows)
    return {"status": 0 if ok else 4, "strength": rows, "paths": paths}


STAGES = {"gen-rve": gen_rve, "cluster": cluster_stage,
          "offline": offline_stage, "run-rve": run_rve_stage,
          "run-fem-ref": run_fem_stage, "run-macro": run_macro_stage}

__all__ = ["STAGES", "compare_stage", "sha256_file", "strain_program",
           "amplitudes", "load_direction", "make_phase_map"]
