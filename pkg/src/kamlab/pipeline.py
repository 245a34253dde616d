"""Stage orchestration, artifact emission and manifest verification."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import tempfile
import time
from pathlib import Path

import numpy as np

from .action_kernel import (compute_w_kernel, eigen_kernel_collinearity, feynman_kac_mc,
                            kernel_lipschitz_observed, mc_vs_dp)
from .config import OUTPUT_ENV, ExperimentConfig
from .errors import ConfigurationError, NumericalError
from .mather import build_action_graph, compare_critical_values, min_mean_cycle, projection_distance
from .schroedinger import assemble_twisted_generator, quantum_measure, solve_eigenpair
from .semiclassical import kernel_representation_check, normalized_log, run_sweep, viscous_hj_residual
from .torus import TorusGrid
from .transport import (build_problem, duality_gap, slackness_check, solve_kantorovich,
                        weak_kam_dual_pair)
from .weak_kam import one_step_cost, weak_kam_pair

log = logging.getLogger(__name__)

STAGES = ["weakkam", "mather", "eigen", "sweep", "wkernel", "fk-mc", "transport"]
DEPENDS = {
    "weakkam": [],
    "mather": ["weakkam"],
    "eigen": [],
    "sweep": [],
    "wkernel": ["weakkam"],
    "fk-mc": ["wkernel"],
    "transport": ["weakkam", "mather", "wkernel"],
}
MANIFEST = "manifest.json"


def with_dependencies(stages) -> list[str]:
    need = set()

    def add(s):
        if s not in DEPENDS:
            raise ConfigurationError(f"unknown stage '{s}'")
        if s not in need:
            need.add(s)
            for d in DEPENDS[s]:
                add(d)

    for s in stages:
        add(s)
    return [s for s in STAGES if s in need]


# ---------------------------------------------------------------- writers

def _fmt(v) -> str:
    return repr(float(v))


def _coord_header(dim: int, prefix: str = "x") -> list[str]:
    return [f"{prefix}{j}" for j in range(dim)]


class Writer:
    def __init__(self, directory: Path, formats):
        self.dir = directory
        self.formats = set(formats)
        self.files: dict[str, str] = {}

    def _record(self, path: Path):
        self.files[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def field(self, name: str, grid: TorusGrid, values, label: str = "value"):
        if "csv" not in self.formats:
            return
        path = self.dir / f"{name}.csv"
        coords = grid.coords()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_coord_header(grid.dim) + [label])
            for c, v in zip(coords, np.asarray(values, float)):
                w.writerow([_fmt(a) for a in c] + [_fmt(v)])
        self._record(path)

    def matrix(self, name: str, grid: TorusGrid, M, label: str = "value"):
        if "csv" not in self.formats:
            return
        path = self.dir / f"{name}.csv"
        coords = grid.coords()
        M = np.asarray(M, float)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_coord_header(grid.dim, "y") + _coord_header(grid.dim, "x") + [label])
            for i in range(M.shape[0]):
                ci = [_fmt(a) for a in coords[i]]
                for j in range(M.shape[1]):
                    w.writerow(ci + [_fmt(a) for a in coords[j]] + [_fmt(M[i, j])])
        self._record(path)

    def rows(self, name: str, header, rows):
        if "csv" not in self.formats:
            return
        path = self.dir / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
        self._record(path)

    def json(self, name: str, obj):
        if "json" not in self.formats:
            return
        path = self.dir / f"{name}.json"
        path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
        self._record(path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    return obj


def _atomic_json(path: Path, obj):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-")
    with os.fdopen(fd, "w") as fh:
        fh.write(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _cert(value, tol, passed=None, **extra):
    value = float(value)
    ok = bool(value <= tol) if passed is None else bool(passed)
    return {"value": value, "tol": float(tol), "passed": ok, **extra}


# ---------------------------------------------------------------- stages

def _stage_weakkam(cfg, ctx, out: Writer):
    wk = cfg["weakkam"]
    grid, V, form = cfg.grid, cfg.potential, cfg.form
    cost = one_step_cost(grid, V, form, -1, wk["h"], wk["v_max"])
    sol = weak_kam_pair(cost, wk["tol"], int(wk["max_iters"]), wk["relax"])
    ctx["weakkam"] = sol
    out.field("u", grid, sol.u)
    out.field("u_star", grid, sol.u_star)
    out.field("I", grid, sol.I)
    out.json("weakkam", {"E": sol.E, "E_backward": sol.E_backward, "residual": sol.residual,
                         "iterations": sol.iterations, "aubry_nodes": sol.aubry})
    return {}


def _stage_mather(cfg, ctx, out: Writer):
    wk = cfg["weakkam"]
    grid, V, form = cfg.grid, cfg.potential, cfg.form
    res = {}
    for name, sign in (("mu_minus", -1), ("mu_plus", +1)):
        r = min_mean_cycle(build_action_graph(one_step_cost(grid, V, form, sign, wk["h"], wk["v_max"])))
        res[name] = r
        out.field(name, grid, r.measure)
    ctx["mather"] = res
    E_wk = ctx["weakkam"].E
    cmp = compare_critical_values(E_wk, res["mu_minus"].E_estimate, cfg["checks"]["critical_value"])
    dist = projection_distance(res["mu_plus"].measure, res["mu_minus"].measure, grid)
    out.json("mather", {"E_mather": res["mu_minus"].E_estimate, "E_mather_plus": res["mu_plus"].E_estimate,
                        "E_weakkam": E_wk, "cycle_minus": res["mu_minus"].cycle,
                        "cycle_plus": res["mu_plus"].cycle, "ties": res["mu_minus"].ties,
                        "projection_distance": dist})
    tol_w1 = cfg["checks"]["projection_dx"] * grid.spacing
    return {"critical_value": _cert(cmp["delta"], cmp["tol"]),
            "projection_distance": _cert(dist, tol_w1)}


def _stage_eigen(cfg, ctx, out: Writer):
    e = cfg["eigen"]
    V, form = cfg.potential, cfg.form
    grid = cfg.grid if e["N"] is None else TorusGrid(cfg.grid.dim, int(e["N"]))
    rows, certs, pairs = [], {}, {}
    for beta in e["betas"]:
        pair = solve_eigenpair(grid, V, form, beta, e["tol"], int(e["max_iters"]))
        pairs[beta] = pair
        G = assemble_twisted_generator(grid, V, form, beta)
        ub, usb = normalized_log(pair)
        hj = viscous_hj_residual(ub, beta, V, form, pair.E_beta, grid)
        hjb = viscous_hj_residual(usb, beta, V, form, pair.E_beta, grid, backward=True)
        col = eigen_kernel_collinearity(pair, G)
        tag = f"{beta:g}"
        out.field(f"psi_beta{tag}", grid, pair.psi)
        out.field(f"psi_star_beta{tag}", grid, pair.psi_star)
        out.field(f"nu_beta{tag}", grid, quantum_measure(pair, grid))
        rows.append([beta, pair.E_beta, hj, hjb, col, pair.residual_right, pair.residual_left])
        certs[f"hj_residual[beta={tag}]"] = _cert(max(hj, hjb), cfg["checks"]["hj_residual"])
        if np.allclose(form.P, 0.0):
            # psi and psi* coincide only without twist; see the README
            certs[f"collinearity[beta={tag}]"] = _cert(col, cfg["checks"]["collinearity"])
    ctx["eigen"] = pairs
    out.rows("eigen", ["beta", "E_beta", "hj_residual", "hj_residual_backward", "collinearity",
                       "residual_right", "residual_left"], rows)
    return certs


def _stage_sweep(cfg, ctx, out: Writer):
    s = cfg["sweep"]
    wk = cfg["weakkam"]
    betas = s["betas"]
    boxes = [tuple(b) for b in s["test_sets"]]
    records, table, var = run_sweep(betas, cfg.potential, cfg.form, cfg.grid.dim, s["nodes_per_beta"],
                                    s["N"], wk["h"], wk["v_max"], boxes, cfg.sweep_F, cfg["eigen"]["tol"])
    header = ["beta", "N", "E_beta", "E", "sup_dist_u", "sup_dist_ustar", "hj_residual",
              "hj_residual_backward", "varadhan_error"] + [f"ldp_error{lab}" for lab in table.labels]
    out.rows("sweep", header, [[r.beta, r.N, r.E_beta, r.E, r.sup_dist_u, r.sup_dist_ustar, r.hj_residual,
                                r.hj_residual_backward, r.varadhan_error, *r.ldp_errors] for r in records])
    tol_l, tol_v = cfg["checks"]["ldp"], cfg["checks"]["varadhan"]
    certs = {}
    for k, lab in enumerate(table.labels):
        certs[f"ldp{lab}"] = _cert(table.errors[k, -1], tol_l,
                                   table.errors[k, -1] <= tol_l and table.monotone[k],
                                   decreasing=bool(table.decreasing[k]))
    var_dec = bool(np.all(np.diff(var) < 0))
    certs["varadhan"] = _cert(var[-1], tol_v, var[-1] <= tol_v and var[-1] < var[0], decreasing=var_dec)
    dist = [r.sup_dist_u for r in records]
    # strict decrease, unless u_beta already equals u (flat case)
    certs["u_beta_trend"] = _cert(dist[-1], float("inf"),
                                  len(dist) < 2 or dist[-1] < dist[0] or dist[0] <= 1e-10)
    out.json("sweep", {"betas": betas, "ldp_errors": table.errors, "ldp_labels": table.labels,
                       "varadhan_errors": var, "sup_dist_u": dist})
    return certs


def _stage_wkernel(cfg, ctx, out: Writer):
    grid, V, form = cfg.grid, cfg.potential, cfg.form
    wkc = cfg["wkernel"]
    W = compute_w_kernel(grid, V, form, int(wkc["slices"]), wkc["v_max"])
    ctx["wkernel"] = W
    out.matrix("W", grid, W.values)
    sol = ctx["weakkam"]
    rep = kernel_representation_check(sol.u, sol.u_star, W)
    lip_obs = kernel_lipschitz_observed(W)
    out.json("wkernel", {"slices": W.slices, "horizon": W.horizon, "lip_bound": W.lip,
                         "lip_observed": lip_obs, "kernel_representation_error": rep})
    return {"kernel_representation": _cert(rep, cfg["checks"]["kernel"]),
            "kernel_lipschitz": _cert(lip_obs, W.lip)}


def _stage_fkmc(cfg, ctx, out: Writer):
    mc = cfg["mc"]
    est = feynman_kac_mc(mc["y"], mc["x"], mc["t"], mc["beta"], cfg.potential, cfg.form,
                         int(mc["samples"]), int(mc["steps"]), int(mc["seed"]))
    res = {"estimate": est.estimate, "stderr": est.stderr, "samples": est.samples, "steps": est.steps,
           "seed": est.seed, "beta": est.beta, "t": est.t, "y": est.y, "x": est.x,
           "displacement": est.displacement, "degenerate": est.degenerate,
           "lift_ambiguous": est.lift_ambiguous}
    certs = {}
    if "wkernel" in ctx and abs(est.t - 1.0) < 1e-12:
        cmp = mc_vs_dp(est, ctx["wkernel"], cfg["checks"]["mc_slack"])
        res["comparison"] = cmp
        # with a twist the kernel may be carried by a wrapping lift while the
        # estimator is pinned to the minimal one, so only P = 0 is certified
        if np.allclose(cfg.form.P, 0.0):
            certs["fk_mc"] = _cert(cmp["error"], cmp["bound"])
    out.json("fk_mc", res)
    return certs


def _stage_transport(cfg, ctx, out: Writer):
    grid = cfg.grid
    t = cfg["transport"]
    sol, W = ctx["weakkam"], ctx["wkernel"]
    if t["measures"] == "mather":
        mu_plus = ctx["mather"]["mu_plus"].measure
        mu_minus = ctx["mather"]["mu_minus"].measure
    else:
        pair = solve_eigenpair(grid, cfg.potential, cfg.form, t["beta"], cfg["eigen"]["tol"])
        mu_plus = mu_minus = quantum_measure(pair, grid)
    p = build_problem(mu_plus, mu_minus, W.values, sol.I, t["variant"])
    plan = solve_kantorovich(p, t["tol"])
    # (u, u*) certifies the plain cost; (u, u) the tilde cost
    second = sol.u_star if t["variant"] == "plain" else sol.u
    dual = weak_kam_dual_pair(sol.u, sol.u_star, sol.E, p, W.horizon, second=second)
    gap = duality_gap(plan, dual)
    ck = cfg["checks"]
    slack = slackness_check(plan, dual, p, ck["slackness"])
    nz = np.nonzero(plan.weights)
    out.rows("plan", _coord_header(grid.dim, "x") + _coord_header(grid.dim, "y") + ["weight"],
             [[*grid.coords()[p.src[i]], *grid.coords()[p.dst[j]], float(plan.weights[i, j])]
              for i, j in zip(*nz)])
    out.json("transport", {"variant": t["variant"], "primal": plan.primal, "dual": dual.value, "gap": gap,
                           "max_violation": dual.max_violation, "max_violation_grid": dual.max_violation_grid,
                           "slackness_violations": slack, "pivots": plan.iterations})
    return {"admissibility": _cert(dual.max_violation, ck["admissibility"], grid_value=dual.max_violation_grid),
            "duality_gap": _cert(abs(gap), ck["gap"]),
            "slackness": _cert(len(slack), 0, not slack)}


RUNNERS = {"weakkam": _stage_weakkam, "mather": _stage_mather, "eigen": _stage_eigen,
           "sweep": _stage_sweep, "wkernel": _stage_wkernel, "fk-mc": _stage_fkmc,
           "transport": _stage_transport}


def output_directory(cfg: ExperimentConfig, override: str | None = None) -> Path:
    d = override or os.environ.get(OUTPUT_ENV) or cfg["output"]["directory"]
    return Path(d)


def run_pipeline(cfg: ExperimentConfig, stages=None, out_dir: str | Path | None = None) -> dict:
    """Run the requested stages (plus their dependencies) and write the manifest."""
    order = with_dependencies(stages or STAGES)
    directory = output_directory(cfg, None if out_dir is None else str(out_dir))
    directory.mkdir(parents=True, exist_ok=True)
    writer = Writer(directory, cfg["output"]["formats"])
    ctx: dict = {}
    manifest = {"config_hash": cfg.hash(), "config": cfg.data, "stages": {}, "certificates": {}}
    failed: set[str] = set()
    for stage in order:
        entry = {"status": "ok", "wall_time": 0.0, "outputs": []}
        blocked = [d for d in DEPENDS[stage] if d in failed]
        if blocked:
            entry["status"] = "skipped"
            entry["error"] = f"dependency failed: {', '.join(blocked)}"
            failed.add(stage)
            manifest["stages"][stage] = entry
            continue
        before = set(writer.files)
        t0 = time.perf_counter()
        try:
            certs = RUNNERS[stage](cfg, ctx, writer)
            for name, c in certs.items():
                manifest["certificates"][f"{stage}:{name}"] = c
        except NumericalError as exc:
            log.error("stage %s failed: %s", stage, exc)
            entry["status"] = "numerical_failure"
            entry["error"] = str(exc)
            failed.add(stage)
        entry["wall_time"] = time.perf_counter() - t0
        entry["outputs"] = sorted(set(writer.files) - before)
        manifest["stages"][stage] = entry
        log.info("stage %s: %s (%.2fs)", stage, entry["status"], entry["wall_time"])
    manifest["files"] = dict(sorted(writer.files.items()))
    manifest["all_passed"] = bool(not failed and all(c["passed"] for c in manifest["certificates"].values()))
    _atomic_json(directory / MANIFEST, manifest)
    return manifest


def verify(path: str | Path) -> tuple[int, list[str]]:
    """Exit status and messages: 0 iff every artifact is intact and every certificate passed."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    if not path.exists():
        return 2, [f"manifest not found: {path}"]
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        return 2, [f"manifest is not valid JSON: {exc}"]
    msgs = []
    for name, digest in manifest.get("files", {}).items():
        f = path.parent / name
        if not f.exists():
            msgs.append(f"integrity: missing artifact {name}")
        elif hashlib.sha256(f.read_bytes()).hexdigest() != digest:
            msgs.append(f"integrity: hash mismatch for {name}")
    for name, st in manifest.get("stages", {}).items():
        if st.get("status") != "ok":
            msgs.append(f"stage {name}: {st.get('status')} ({st.get('error', '')})")
    for name, c in manifest.get("certificates", {}).items():
        if not c.get("passed"):
            msgs.append(f"certificate {name} failed: value {c.get('value')} vs tol {c.get('tol')}")
    if any(m.startswith("stage") and "numerical_failure" in m for m in msgs) and len(msgs) == sum(
            m.startswith("stage") for m in msgs):
        return 3, msgs
    return (1 if msgs else 0), msgs
