"""Single-chart pipeline: audit, general position, lattice conditions,
civilization, the torus filling and diffeomorphism-group checks.

Reports are plain JSON-compatible dicts with ``schema: 1``.  Timings are
left out unless asked for, so identical configs give identical reports.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import __version__
from .civilization import Simplex, civilize_skeleta, check_civilized, coface_eta_ratio, fiber_samples
from .errors import FormatError, LabError, ModelConsistencyError, PreconditionError
from .formats import Checkpoint
from .geom_core import restricted_wedge
from .presets import make_pair
from .scenario import CHECKS, Scenario
from .torus_example import FamilyModel, SolidTorusModel, example_passes, verify_example, verify_family
from .triangulation import (check_lattice_conditions, find_general_position, jiggle,
                            kuhn_triangulation, LatticeSpec)

SCHEMA = 1
INNER = (-1.0, 1.0)
STAR_BOX = (-1.5, 1.5)
COVER = (-2.0, 2.0)
DIFFEO_CHECKS = ("tsuboi", "concat", "suspend", "veps", "frag72")


@dataclass
class RunConfig:
    n: int = 4
    pair: str = "constant"
    rate: float = 0.05
    seed: int = 0
    min_l: int = 1
    max_l: int = 4
    attempts: int = 50
    eps_frac: float = 0.1
    gp_floor: float = 1e-9
    gp_depth: int = 2
    nondeg_floor: float = 1e-12
    audit_points: int = 2000
    j_max: int = 1
    delta0_frac: float = 0.1
    eta_ratio: float = 0.0
    civ_probes: int = 1000
    support_probes: int = 1000
    torus_a: float = 0.5
    torus_grid: int = 24
    torus_sweep: str = "8,16"
    torus_probes: int = 1000
    torus_orientation: str = "corrected"
    family: bool = False
    diffeo_checks: str = "tsuboi,concat,suspend"
    diffeo_probes: int = 2000
    tsuboi_scenarios: int = 2
    report: str = ""
    plots: str = ""
    timings: bool = False

    POSITIVE = ("rate", "eps_frac", "gp_floor", "nondeg_floor", "delta0_frac")

    def validate(self) -> "RunConfig":
        if self.n < 3:
            raise PreconditionError("dimension n must be at least 3")
        for name in self.POSITIVE:
            if not getattr(self, name) > 0:
                raise PreconditionError(f"{name} must be positive")
        for name in ("attempts", "gp_depth", "audit_points", "civ_probes", "support_probes", "torus_grid",
                     "torus_probes", "diffeo_probes", "min_l", "max_l"):
            if getattr(self, name) < 1:
                raise PreconditionError(f"{name} must be at least 1")
        if not 0 <= self.j_max <= self.n - 1:
            raise PreconditionError("j_max must lie in 0..n-1")
        if self.eta_ratio < 0:
            raise PreconditionError("eta_ratio must be >= 0 (0 derives it from the cofaces)")
        if self.eps_frac >= 0.3:
            raise PreconditionError("eps_frac must stay below the collapse guard 0.3")
        if self.torus_orientation not in ("corrected", "literal"):
            raise PreconditionError("torus_orientation must be 'corrected' or 'literal'")
        unknown = [c for c in self.checks() if c not in DIFFEO_CHECKS]
        if unknown:
            raise PreconditionError(f"unknown diffeo checks: {', '.join(unknown)}")
        self.sweep()
        return self

    def checks(self) -> list:
        return [c.strip() for c in self.diffeo_checks.split(",") if c.strip()]

    def sweep(self) -> list:
        try:
            return [int(v) for v in self.torus_sweep.split(",") if v.strip()]
        except ValueError:
            raise PreconditionError("torus_sweep must be a comma-separated list of grid sizes") from None

    def echo(self) -> dict:
        return asdict(self)


def _coerce(kind, text: str, key: str):
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise FormatError(f"{key}: expected a boolean, got '{text}'")
    try:
        return kind(text)
    except ValueError:
        raise FormatError(f"{key}: cannot read '{text}' as {kind.__name__}") from None


def parse_config(text: str) -> RunConfig:
    """Flat ``key = value`` lines; '#' starts a comment."""
    kinds = {f.name: f.type for f in fields(RunConfig)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    values = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {no}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise FormatError(f"line {no}: unknown key '{key}'")
        values[key] = _coerce(types[kinds[key]], val, key)
    return RunConfig(**values).validate()


def read_config(path) -> RunConfig:
    with open(os.fspath(path), encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# helpers


def _box_points(n: int, box, count: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = box
    return lo + (hi - lo) * rng.random((count, n))


def _grid_points(n: int, box, per_axis: int) -> np.ndarray:
    axes = [np.linspace(box[0], box[1], per_axis)] * n
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)


def shell_probes(n: int, count: int, seed: int, inner=COVER, outer=(-3.0, 3.0)) -> np.ndarray:
    """Random points of the outer box that avoid the open inner box."""
    rng = np.random.default_rng(seed)
    out = np.zeros((0, n))
    while out.shape[0] < count:
        cand = _box_points(n, outer, count, rng)
        inside = np.all((cand > inner[0]) & (cand < inner[1]), axis=1)
        out = np.concatenate([out, cand[~inside]])
    return out[:count]


def central_simplex(complex_, point=None, ids=None) -> Simplex:
    """Top simplex (among ``ids``) whose barycenter is closest to ``point``; ties go to the lowest index."""
    ids = np.arange(complex_.num_simplices) if ids is None else np.asarray(ids)
    pts = complex_.simplex_points(ids)
    target = np.zeros(complex_.n) if point is None else np.asarray(point, float)
    d = np.linalg.norm(pts.mean(axis=1) - target, axis=1)
    i = int(ids[int(np.argmin(d))])
    verts = complex_.simplices[i]
    return Simplex(tuple(int(v) for v in verts), complex_.vertices[verts].copy())


def top_cofaces(top: Simplex, j_max: int) -> dict:
    """For each face of dimension <= j_max, the (n-2)-faces of ``top`` containing it."""
    rhos = top.faces(top.n - 2)
    return {s.key: [r for r in rhos if r.dim > s.dim and r.has_face(s)]
            for i in range(j_max + 1) for s in top.faces(i)}


def margin_histogram(margins: np.ndarray, lo: int = -12, hi: int = 2) -> list:
    """Counts of log10(margin) per decade, with under- and overflow bins."""
    m = np.asarray(margins, float)
    m = m[np.isfinite(m)]
    with np.errstate(divide="ignore"):
        logs = np.log10(np.maximum(m, 0.0))
    edges = [-math.inf] + list(range(lo, hi + 1)) + [math.inf]
    rows = []
    for a, b in zip(edges, edges[1:]):
        rows.append({"log10_lo": None if a == -math.inf else a, "log10_hi": None if b == math.inf else b,
                     "count": int(np.count_nonzero((logs >= a) & (logs < b)))})
    return rows


# ---------------------------------------------------------------------------
# stages


def stage_audit(cfg: RunConfig, pair) -> dict:
    rng = np.random.default_rng([cfg.seed, 1])
    pts = np.concatenate([_grid_points(cfg.n, COVER, 4), _box_points(cfg.n, COVER, cfg.audit_points, rng)])
    frames, mats = pair.values(pts)
    margins = restricted_wedge(frames, mats, frames.shape[1] // 2)
    i = int(np.argmin(margins))
    ok = bool(margins[i] > cfg.nondeg_floor)
    out = {"stage": "audit", "ok": ok, "points": int(pts.shape[0]), "min_margin": float(margins[i]),
           "floor": cfg.nondeg_floor}
    if not ok:
        out["witness"] = pts[i].tolist()
    return out


def stage_genpos(cfg: RunConfig, pair) -> tuple[dict, dict, object]:
    """Escalate l until the jiggled complex is in general position and meets (A), (B)."""
    tau = pair.tau
    levels = []
    found = None
    l = cfg.min_l
    while l <= cfg.max_l:
        search = find_general_position(tau, INNER, cfg.eps_frac, max_l=l, attempts=cfg.attempts, seed=cfg.seed,
                                       depth=cfg.gp_depth, floor=cfg.gp_floor, min_l=l, cover=COVER)
        entry = {"l": l, "search": search.to_dict()}
        if search.success:
            lat = check_lattice_conditions(search.complex, tau, INNER, STAR_BOX, COVER,
                                           slack=search.jiggling.max_displacement())
            entry["lattice"] = lat.to_dict()
            found = (search, lat)
            levels.append(entry)
            if lat.ok:
                break
        else:
            levels.append(entry)
        l *= 2
    gp_ok = found is not None
    lat_ok = gp_ok and found[1].ok
    rows = [{"l": e["l"], **h} for e in levels for h in e["search"]["history"]]
    gp = {"stage": "genpos", "ok": gp_ok, "levels": [{"l": e["l"], **{k: v for k, v in e["search"].items()
                                                                        if k != "history"}} for e in levels],
          "history": rows}
    if gp_ok:
        gp["margin_histogram"] = margin_histogram(found[0].report.margins)
    lat = {"stage": "lattice", "ok": lat_ok,
           "levels": [{"l": e["l"], **e["lattice"]} for e in levels if "lattice" in e]}
    if not lat_ok:
        lat["reason"] = ("no general-position complex" if not gp_ok
                         else f"lattice conditions fail up to l={cfg.max_l}")
    return gp, lat, (found[0] if found else None)


def stage_civilize(cfg: RunConfig, pair, search) -> dict:
    cx = search.complex
    top = central_simplex(cx, ids=search.report.simplex_ids)
    delta0 = cfg.delta0_frac / search.l
    ratio = cfg.eta_ratio or coface_eta_ratio(pair, top, cfg.j_max)
    steps: list = []
    state = civilize_skeleta(pair, top, cfg.j_max, delta0, seed=cfg.seed, reports=steps, probes=cfg.civ_probes,
                             eta_ratio=ratio)
    rep = check_civilized(state, top_cofaces(top, cfg.j_max), seed=cfg.seed)
    probes = shell_probes(cfg.n, cfg.support_probes, cfg.seed)
    f0, w0 = pair.values(probes)
    f1, w1 = state.pair.values(probes)
    outside = float(max(np.max(np.abs(f0 - f1)), np.max(np.abs(w0 - w1))))
    ok = rep.ok and outside == 0.0 and all(
        s["inner_deviation"] < 1e-9 and s["support_deviation"] == 0.0 and s["idempotence_deviation"] == 0.0
        and s["min_output_margin"] >= s["min_input_margin"] for s in steps)
    return {"stage": "civilize", "ok": bool(ok), "top": list(top.ids), "l": search.l, "delta0": delta0,
            "eta_ratio": ratio,
            "deltas": state.deltas, "etas": state.etas, "steps": steps, "conditions": rep.to_dict(),
            "support_control": {"probes": int(probes.shape[0]), "max_change_outside_cover": outside}}


def stage_torus(cfg: RunConfig) -> dict:
    model = SolidTorusModel(cfg.torus_a, orientation=cfg.torus_orientation)
    rep = verify_example(model, cfg.torus_grid, cfg.torus_probes, cfg.seed)
    sweep = []
    for g in sorted(set(cfg.sweep() + [cfg.torus_grid])):
        r = rep if g == cfg.torus_grid else verify_example(model, g, cfg.torus_probes, cfg.seed)
        sweep.append({"grid": g, "defect_max": r["defect_max"], "margin_min": r["margin_min"]})
    out = {"stage": "torus", "ok": example_passes(rep), **rep, "grid_sweep": sweep}
    if cfg.family and cfg.n >= 4:
        fam = verify_family(FamilyModel(n=cfg.n))
        out["family"] = fam
    return out


def stage_diffeo(cfg: RunConfig) -> dict:
    sc = Scenario(k=2, seed=cfg.seed, probes=cfg.diffeo_probes,
                  settings={"random-tsuboi": cfg.tsuboi_scenarios, "samples": 800, "trials": 2, "count": 72})
    results = {}
    ok = True
    for name in cfg.checks():
        r = CHECKS[name](sc)
        results[name] = r
        if name == "tsuboi":
            ok &= r["max_discrepancy"] < 1e-9 and r["preconditions_ok"]
        elif name == "concat":
            ok &= r["endpoint_law_error"] < 1e-12 and r["telescoping_error"] < 1e-10
        elif name == "suspend":
            ok &= r["holonomy_error"] < 1e-8 and r["outside_support_motion"] == 0.0
        elif name == "frag72":
            ok &= r["compose"]["all_in_V1"]
    return {"stage": "diffeo", "ok": bool(ok), "checks": results}


# ---------------------------------------------------------------------------
# driver


def run_pipeline(cfg: RunConfig) -> dict:
    cfg.validate()
    report = {"schema": SCHEMA, "version": __version__, "seed": cfg.seed, "config": cfg.echo(), "stages": []}
    stages = report["stages"]

    def run(name, fn, *args):
        t0 = time.perf_counter()
        try:
            out = fn(*args)
        except LabError as exc:
            out = {"stage": name, "ok": False, "error": f"{type(exc).__name__}: {exc}"}
        first = out[0] if isinstance(out, tuple) else out
        if cfg.timings:
            first["seconds"] = time.perf_counter() - t0
        return out

    def skip(*names):
        for nm in names:
            stages.append({"stage": nm, "ok": False, "skipped": True})

    pair = make_pair(cfg.pair, cfg.n, cfg.rate)
    audit = run("audit", stage_audit, cfg, pair)
    stages.append(audit)
    if not audit["ok"]:
        skip("genpos", "lattice", "civilize", "torus", "diffeo")
        return _finish(report)
    res = run("genpos", stage_genpos, cfg, pair)
    if isinstance(res, dict):
        stages.append(res)
        skip("lattice", "civilize", "torus", "diffeo")
        return _finish(report)
    gp, lat, search = res
    stages.extend([gp, lat])
    if not lat["ok"]:
        skip("civilize", "torus", "diffeo")
        return _finish(report)
    civ = run("civilize", stage_civilize, cfg, pair, search)
    stages.append(civ)
    if "error" in civ:
        skip("torus", "diffeo")
        return _finish(report)
    stages.append(run("torus", stage_torus, cfg))
    stages.append(run("diffeo", stage_diffeo, cfg))
    return _finish(report)


def _finish(report: dict) -> dict:
    report["ok"] = all(s["ok"] for s in report["stages"])
    return report


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by None so the JSON is standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(obj):
        return None
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, default=_json_default) + "\n"


def write_report(report: dict, path) -> None:
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        fh.write(dumps_report(report))


# ---------------------------------------------------------------------------
# plot data


PLOT_FILES = {
    "margin_vs_refinement.csv": ["l", "attempt", "epsilon", "ok", "min_margin"],
    "defect_vs_grid.csv": ["grid", "defect_max", "margin_min"],
    "margin_histogram.csv": ["log10_lo", "log10_hi", "count"],
}


def _sections(report: dict) -> list:
    return [report] + list(report.get("stages", []))


def emit_plot_data(report: dict, outdir) -> dict:
    """Write the CSV files of ``PLOT_FILES`` (headers only for missing data); returns row counts."""
    os.makedirs(os.fspath(outdir), exist_ok=True)
    rows = {name: [] for name in PLOT_FILES}
    for sec in _sections(report or {}):
        hist = sec.get("history")
        if hist is None and isinstance(sec.get("search"), dict):
            hist = [{"l": h["l"], **h} for h in sec["search"].get("history", [])]
        for h in hist or []:
            rows["margin_vs_refinement.csv"].append(h)
        if "grid_sweep" in sec:
            rows["defect_vs_grid.csv"].extend(sec["grid_sweep"])
        elif "defect_max" in sec and "grid" in sec:
            rows["defect_vs_grid.csv"].append(sec)
        rows["margin_histogram.csv"].extend(sec.get("margin_histogram", []))
    counts = {}
    for name, header in PLOT_FILES.items():
        with open(os.path.join(os.fspath(outdir), name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows[name]:
                w.writerow(["" if r.get(k) is None else r.get(k) for k in header])
        counts[name] = len(rows[name])
    return counts


# ---------------------------------------------------------------------------
# civilization checkpoints


def start_simplex(n: int, l: int = 1, eps_frac: float = 0.1, seed: int = 0) -> tuple[Simplex, str]:
    """Central top simplex of a jiggled Kuhn lattice on [-1, 1]^n, and a text reference to it."""
    base = kuhn_triangulation(LatticeSpec(n, l, [INNER] * n))
    _, cx = jiggle(base, eps_frac / l, seed)
    ref = f"kuhn n={n} l={l} box=-1,1 eps={eps_frac / l!r} seed={seed}"
    return central_simplex(cx), ref


def checkpoint_from_state(state, pair_name: str, rate: float, top: Simplex, seed: int, mesh: str,
                          delta0: float, eta_ratio: float, per_edge: int = 2, per_fiber: int = 4) -> Checkpoint:
    fibers = []
    for dim in sorted(state.tubes):
        for idx, tb in enumerate(state.tubes[dim]):
            rng = np.random.default_rng([seed, dim, idx])
            pts = fiber_samples(tb, tb.simplex.grid_params(per_edge), per_fiber, rng, tb.inner_radii)
            frames, mats = state.pair.values(pts)
            for x, f, w in zip(pts, frames, mats):
                fibers.append((dim, tb.simplex.ids, x, f, w))
    deltas = list(state.deltas) or [delta0]
    etas = list(state.etas) or [eta_ratio * delta0]
    return Checkpoint(mesh, pair_name, rate, top.ids, top.points, seed, state.j, deltas, etas, fibers)


def resume_civilization(ck: Checkpoint, j: int, reports: list | None = None, probes: int = 1000):
    """Replay a checkpoint up to skeleton ``j``; stored fiber samples must be reproduced exactly."""
    if j < ck.j:
        raise PreconditionError(f"checkpoint is already civilized up to {ck.j}")
    pair = make_pair(ck.pair, ck.n, ck.rate)
    top = Simplex(ck.top_ids, ck.top_points)
    state = civilize_skeleta(pair, top, j, ck.deltas[0], seed=ck.seed, reports=reports, probes=probes,
                             eta_ratio=ck.etas[0] / ck.deltas[0])
    if ck.fibers:
        x = np.array([row[2] for row in ck.fibers])
        f = np.array([row[3] for row in ck.fibers])
        w = np.array([row[4] for row in ck.fibers])
        f1, w1 = state.pair.values(x)
        dev = float(max(np.max(np.abs(f1 - f)), np.max(np.abs(w1 - w))))
        if dev != 0.0:
            raise ModelConsistencyError(f"replay does not reproduce the checkpoint fibers (deviation {dev:.3g})")
    return state, pair, top
