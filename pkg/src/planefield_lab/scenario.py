"""Diffeomorphism scenario files and the checks run on them.

A scenario is a line-oriented text file::

    seed 0
    dim 2
    probes 10000
    box U -1 1                      # cube, or 2k numbers lo_1..lo_k hi_1..hi_k
    flow a center=0.1,0 radius=0.5 direction=1,0 time=1
    translation h box=U shift=3,0
    perturbation p center=0,0 radius=1 direction=1,0 scale=0.01
    rotation r amplitude=0.5 flat=0.3 radius=0.8 t=1
    program c h inv a h compose compose    # postfix: names, inv, compose, comm, conj, id
    tsuboi a b h U
    random-tsuboi 20
    profile amplitude=0.5 flat=0.3 radius=0.8
    epsilon 0.005
    trials 20
    count 72
    q 1,2,4,8
    veps p c

``compose`` pops b then a and pushes a o b; ``conj`` pops a then g and pushes g a g^-1.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import diffeo_group as dg
from .errors import FormatError, PreconditionError

KNOWN_SETTINGS = {"seed": int, "dim": int, "probes": int, "random-tsuboi": int, "epsilon": float,
                  "trials": int, "count": int, "samples": int, "neg-epsilon": float, "neg-trials": int}


@dataclass
class Scenario:
    k: int = 2
    seed: int = 0
    probes: int = 10000
    settings: dict = field(default_factory=dict)
    boxes: dict = field(default_factory=dict)
    maps: dict = field(default_factory=dict)
    tsuboi: list = field(default_factory=list)
    veps: list = field(default_factory=list)
    profile: dg.RadialProfile = field(default_factory=dg.RadialProfile)
    q: tuple = (1, 2, 4, 8)

    def get(self, key: str, default):
        return self.settings.get(key, default)

    def box(self, name: str):
        if name not in self.boxes:
            raise FormatError(f"unknown box '{name}'")
        return self.boxes[name]

    def map(self, name: str) -> dg.CDiffeo:
        if name not in self.maps:
            raise FormatError(f"unknown diffeomorphism '{name}'")
        return self.maps[name]


def _kv(tokens, where: str) -> dict:
    out = {}
    for t in tokens:
        if "=" not in t:
            raise FormatError(f"{where}: expected key=value, got '{t}'")
        key, val = t.split("=", 1)
        out[key] = val
    return out


def _vec(text: str, k: int, where: str) -> np.ndarray:
    try:
        v = np.array([float(x) for x in text.split(",")], dtype=float)
    except ValueError:
        raise FormatError(f"{where}: bad vector '{text}'") from None
    if v.size == 1:
        v = np.full(k, v[0])
    if v.size != k:
        raise FormatError(f"{where}: vector '{text}' must have {k} entries")
    return v


def _num(kv: dict, key: str, default, where: str) -> float:
    if key not in kv:
        if default is None:
            raise FormatError(f"{where}: missing '{key}'")
        return default
    try:
        return float(kv[key])
    except ValueError:
        raise FormatError(f"{where}: bad number for '{key}'") from None


def run_program(tokens, maps: dict, k: int, where: str = "program") -> dg.CDiffeo:
    """Evaluate a postfix composition program over named diffeomorphisms."""
    stack: list = []
    for tok in tokens:
        if tok == "id":
            stack.append(dg.identity(k))
        elif tok in ("inv", "compose", "comm", "conj"):
            need = 1 if tok == "inv" else 2
            if len(stack) < need:
                raise FormatError(f"{where}: '{tok}' needs {need} operand(s)")
            if tok == "inv":
                stack.append(dg.inverse(stack.pop()))
            else:
                b, a = stack.pop(), stack.pop()
                if tok == "compose":
                    stack.append(dg.compose(a, b))
                elif tok == "comm":
                    stack.append(dg.commutator(a, b))
                else:
                    stack.append(dg.conjugate(a, b))
        elif tok in maps:
            stack.append(maps[tok])
        else:
            raise FormatError(f"{where}: unknown token '{tok}'")
    if len(stack) != 1:
        raise FormatError(f"{where}: program leaves {len(stack)} values on the stack")
    return stack[0]


def parse_scenario(text: str) -> Scenario:
    sc = Scenario()
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {no}"
        tok = line.split()
        head, rest = tok[0], tok[1:]
        if head in KNOWN_SETTINGS:
            if len(rest) != 1:
                raise FormatError(f"{where}: '{head}' takes one value")
            try:
                val = KNOWN_SETTINGS[head](rest[0])
            except ValueError:
                raise FormatError(f"{where}: bad value for '{head}'") from None
            sc.settings[head] = val
            if head == "dim":
                if val < 1:
                    raise FormatError(f"{where}: dim must be positive")
                sc.k = val
            elif head == "seed":
                sc.seed = val
            elif head == "probes":
                sc.probes = val
            continue
        if head == "q":
            try:
                sc.q = tuple(int(v) for v in rest[0].split(","))
            except (ValueError, IndexError):
                raise FormatError(f"{where}: bad q list") from None
            continue
        if head == "profile":
            kv = _kv(rest, where)
            try:
                sc.profile = dg.RadialProfile(_num(kv, "amplitude", 0.5, where), _num(kv, "flat", 0.3, where),
                                              _num(kv, "radius", 0.8, where))
            except PreconditionError as exc:
                raise FormatError(f"{where}: {exc}") from None
            continue
        if head == "veps":
            sc.veps.extend(rest)
            continue
        if head == "tsuboi":
            if len(rest) != 4:
                raise FormatError(f"{where}: tsuboi needs a b h U")
            sc.tsuboi.append(tuple(rest))
            continue
        if not rest:
            raise FormatError(f"{where}: '{head}' needs a name")
        name, args = rest[0], rest[1:]
        if head == "box":
            vals = [float(v) for v in args]
            if len(vals) == 2:
                lo, hi = np.full(sc.k, vals[0]), np.full(sc.k, vals[1])
            elif len(vals) == 2 * sc.k:
                lo, hi = np.array(vals[:sc.k]), np.array(vals[sc.k:])
            else:
                raise FormatError(f"{where}: box needs 2 or {2 * sc.k} numbers")
            if np.any(lo >= hi):
                raise FormatError(f"{where}: empty box")
            sc.boxes[name] = (lo, hi)
        elif head == "flow":
            kv = _kv(args, where)
            sc.maps[name] = dg.make_bump_flow(_vec(kv.get("center", "0"), sc.k, where), _num(kv, "radius", None, where),
                                              _vec(kv.get("direction", "1" + ",0" * (sc.k - 1)), sc.k, where),
                                              _num(kv, "time", 1.0, where), _num(kv, "plateau", 0.0, where), name=name)
        elif head == "translation":
            kv = _kv(args, where)
            lo, hi = sc.box(kv.get("box", "U"))
            sc.maps[name] = dg.make_translation_flow(lo, hi, _vec(kv.get("shift", "3" + ",0" * (sc.k - 1)), sc.k, where),
                                                     _num(kv, "margin", 2.0, where), name=name)
        elif head == "perturbation":
            kv = _kv(args, where)
            sc.maps[name] = dg.make_perturbation(_vec(kv.get("center", "0"), sc.k, where), _num(kv, "radius", 1.0, where),
                                                 _vec(kv.get("direction", "1" + ",0" * (sc.k - 1)), sc.k, where),
                                                 _num(kv, "scale", None, where), name=name)
        elif head == "rotation":
            kv = _kv(args, where)
            prof = dg.RadialProfile(_num(kv, "amplitude", 0.5, where), _num(kv, "flat", 0.3, where),
                                    _num(kv, "radius", 0.8, where))
            sc.maps[name] = dg.rotation_diffeo(prof, _num(kv, "t", 1.0, where), sc.k)
        elif head == "program":
            sc.maps[name] = run_program(args, sc.maps, sc.k, where)
        else:
            raise FormatError(f"{where}: unknown directive '{head}'")
    return sc


def read_scenario(path) -> Scenario:
    with open(os.fspath(path), encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# ---------------------------------------------------------------------------
# checks


def random_tsuboi_case(rng: np.random.Generator, k: int = 2, name: str = ""):
    """Bump flows a, b supported in U = [-1, 1]^k and a translation flow h pushing U off itself."""
    maps = []
    for tag in ("a", "b"):
        center = rng.uniform(-0.3, 0.3, k)
        radius = float(rng.uniform(0.4, 0.7))
        direction = rng.normal(size=k)
        direction /= np.linalg.norm(direction)
        maps.append(dg.make_bump_flow(center, radius, direction, 1.0, name=f"{tag}{name}"))
    U = (np.full(k, -1.0), np.full(k, 1.0))
    shift = np.zeros(k)
    shift[0] = 3.0
    h = dg.make_translation_flow(U[0], U[1], shift, name="h")
    return maps[0], maps[1], h, U


def run_tsuboi(sc: Scenario) -> dict:
    rows = []
    for a, b, h, U in sc.tsuboi:
        rep = dg.tsuboi_verify(sc.map(a), sc.map(b), sc.map(h), sc.box(U), sc.probes, sc.seed)
        rows.append({"case": f"{a},{b},{h},{U}", **rep})
    count = sc.get("random-tsuboi", 0 if sc.tsuboi else 20)
    rng = np.random.default_rng(sc.seed)
    for i in range(count):
        a, b, h, U = random_tsuboi_case(rng, sc.k, str(i))
        rep = dg.tsuboi_verify(a, b, h, U, sc.probes, int(rng.integers(1 << 31)))
        rows.append({"case": f"random-{i}", **rep})
    worst = max((r["discrepancy"] for r in rows), default=0.0)
    return {"check": "tsuboi", "scenarios": len(rows), "probes": sc.probes, "max_discrepancy": worst,
            "preconditions_ok": all(r["preconditions_ok"] for r in rows), "rows": rows}


def _tube_probes(sc: Scenario, count: int) -> np.ndarray:
    rng = np.random.default_rng(sc.seed)
    lo, hi = dg._tube_box(sc.k, dg.TUBE_WIDTH)
    return lo - 0.1 + (hi - lo + 0.2) * rng.random((count, sc.k))


def run_concat(sc: Scenario) -> dict:
    f = sc.profile
    probes = _tube_probes(sc, min(sc.probes, 2000))
    adj = dg.make_rotation_path(f, sc.k, adjust=0.1)
    p = dg.PairedPath(adj, dg.one_form_ds(sc.k), "h_f")
    cat, jump = dg.concatenate(p, p, probes)
    law = dg.endpoint_law_error(p, p, cat, probes)
    rows = []
    if f.amplitude * 2 <= 1.0:
        twice = dg.rotation_diffeo(f.scaled(2.0), 1.0, sc.k)
        doubled = float(np.max(np.abs(cat.path(1.0)(probes) - twice(probes))))
    else:
        doubled = None
    gamma = dg.make_rotation_path(f, sc.k)
    tele = 0.0
    for q in sc.q:
        segs = dg.subdivide_path(gamma, q)
        err = dg.telescoping_error(gamma, segs, probes)
        tele = max(tele, err)
        norm = dg.v_eps_norm(segs[0](1.0), samples=sc.get("samples", 1500), seed=sc.seed).norm
        rows.append({"q": q, "telescoping_error": err, "segment_norm": norm})
    return {"check": "concat", "probes": int(probes.shape[0]), "endpoint_law_error": law,
            "double_vs_h2f": doubled, "alpha_jump": jump["alpha_jump"],
            "horizontal_deviation": jump["horizontal_deviation"], "telescoping_error": tele,
            "subdivision": rows,
            "norms_decreasing": all(a["segment_norm"] > b["segment_norm"] for a, b in zip(rows, rows[1:]))}


def run_suspend(sc: Scenario) -> dict:
    f = sc.profile
    probes = _tube_probes(sc, min(sc.probes, 200))
    path = dg.make_rotation_path(f, sc.k)
    _, rep = dg.suspend(dg.PairedPath(path, dg.torus_boundary_alpha(f), "h_f"), probes)
    theta, x, inside = dg.tube_chart(probes)
    analytic = np.where(inside[:, None], dg.tube_embed(theta + np.where(inside, f(x), 0.0), x), probes)
    _, const = dg.suspend(dg.PairedPath(dg.constant_path(sc.k), dg.one_form_ds(sc.k), "const"), probes)
    return {"check": "suspend", "probes": int(probes.shape[0]), **rep,
            "analytic_holonomy_error": float(np.max(np.abs(dg.rotation_diffeo(f, 1.0, sc.k)(probes) - analytic))),
            "constant_path_holonomy_error": const["holonomy_error"]}


def run_veps(sc: Scenario) -> dict:
    eps = sc.get("epsilon", 0.05)
    names = sc.veps or sorted(sc.maps)
    rows = []
    for nm in names:
        est = dg.v_eps_norm(sc.map(nm), samples=sc.get("samples", 2000), seed=sc.seed)
        rows.append({"name": nm, "norm": est.norm, "argmax": est.argmax, "in_V_eps": est.member(eps)})
    return {"check": "veps", "epsilon": eps, "rows": rows}


def run_frag72(sc: Scenario) -> dict:
    eps = sc.get("epsilon", 0.005)
    comp = dg.compose_72_check(eps, sc.seed, sc.get("trials", 20), sc.get("count", 72), sc.k,
                               sc.get("samples", 1500))
    out = {"check": "frag72", "compose": comp}
    if "neg-epsilon" in sc.settings:
        out["negative_control"] = dg.compose_72_check(sc.settings["neg-epsilon"], sc.seed,
                                                      sc.get("neg-trials", 5), sc.get("count", 72), sc.k,
                                                      sc.get("samples", 1500))
    # fragmentation with a constructed witness in slot 1 and a mismatched control
    k = sc.k
    s = dg.make_bump_flow(np.full(k, 0.1), 0.6, np.eye(k)[0], 0.5, name="s")
    X = dg.FieldSpec(tuple(np.zeros(k)), 0.8, tuple(np.eye(k)[-1]))
    g = dg.commutator(s, X.exp())
    ids = [dg.identity(k)] * 5
    good = dg.fragmentation_verify(g, [s] + ids, [X] + [None] * 5, probes=min(sc.probes, 2000), seed=sc.seed)
    bad_sigma = dg.make_bump_flow(np.full(k, -0.2), 0.5, np.eye(k)[0], 1.5, name="s'")
    bad = dg.fragmentation_verify(g, [bad_sigma] + ids, [X] + [None] * 5, probes=min(sc.probes, 2000), seed=sc.seed)
    out["fragmentation"] = {"witness_discrepancy": good["discrepancy"], "mismatched_discrepancy": bad["discrepancy"]}
    return out


CHECKS = {"tsuboi": run_tsuboi, "concat": run_concat, "suspend": run_suspend, "veps": run_veps,
          "frag72": run_frag72}
