"""Command line interface: ``planefield-lab <subcommand> ...``.

Exit status is 0 when every check passes, 1 when a verification fails and 2
for bad input.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .civilization import SkeletonState, check_civilized, civilize_skeleta, coface_eta_ratio
from .errors import FormatError, LabError, PreconditionError
from .formats import read_checkpoint, write_checkpoint, write_jiggling, write_mesh
from .pipeline import (INNER, SCHEMA, checkpoint_from_state, dumps_report, emit_plot_data,
                       margin_histogram, read_config, resume_civilization, run_pipeline, start_simplex,
                       top_cofaces, write_report)
from .presets import PAIR_PRESETS, make_field, make_pair
from .scenario import CHECKS, read_scenario
from .torus_example import (FamilyModel, SolidTorusModel, corrupted_cutoffs, default_cutoffs, example_passes,
                            overlapping_cutoffs, verify_example, verify_family)
from .triangulation import GP_FLOOR, find_general_position

CUTOFFS = {"default": default_cutoffs, "overlapping": overlapping_cutoffs, "corrupted": corrupted_cutoffs}


def _emit(report: dict, out: str | None) -> None:
    if out:
        write_report(report, out)
    else:
        sys.stdout.write(dumps_report(report))


def _header(command: str, config: dict) -> dict:
    return {"schema": SCHEMA, "version": __version__, "command": command, "config": config}


def cmd_genpos(args) -> int:
    tau = make_field(args.field, args.n, args.rate)
    cover = tuple(args.cover) if args.cover else None
    search = find_general_position(tau, tuple(args.box), args.eps_frac, max_l=args.l, attempts=args.attempts,
                                   seed=args.seed, depth=args.depth, floor=args.floor, min_l=args.min_l,
                                   cover=cover)
    report = _header("genpos", {"field": args.field, "n": args.n, "rate": args.rate, "l": args.l,
                                "min_l": args.min_l, "eps_frac": args.eps_frac, "seed": args.seed,
                                "box": list(args.box), "cover": list(cover) if cover else None,
                                "attempts": args.attempts, "floor": args.floor, "depth": args.depth})
    report["search"] = search.to_dict()
    if search.success:
        report["margin_histogram"] = margin_histogram(search.report.margins)
        if args.mesh:
            write_mesh(args.mesh, search.complex)
        if args.jiggling:
            write_jiggling(args.jiggling, search.jiggling)
    report["ok"] = search.success
    _emit(report, args.report)
    return 0 if search.success else 1


def cmd_civilize(args) -> int:
    steps: list = []
    if args.checkpoint:
        ck = read_checkpoint(args.checkpoint)
        state, pair, top = resume_civilization(ck, args.skeleton, steps, args.probes)
        pair_name, rate, seed, mesh = ck.pair, ck.rate, ck.seed, ck.mesh
        delta0, ratio = ck.deltas[0], ck.etas[0] / ck.deltas[0]
    else:
        if args.pair not in PAIR_PRESETS:
            raise PreconditionError(f"unknown pair preset '{args.pair}'")
        top, mesh = start_simplex(args.n, args.l, args.eps_frac, args.seed)
        pair = make_pair(args.pair, args.n, args.rate)
        delta0 = args.delta0 / args.l
        ratio = args.eta_ratio or coface_eta_ratio(pair, top, max(args.skeleton, 0))
        pair_name, rate, seed = args.pair, args.rate, args.seed
        if args.skeleton >= 0:
            state = civilize_skeleta(pair, top, args.skeleton, delta0, seed=seed, reports=steps,
                                     probes=args.probes, eta_ratio=ratio)
        else:
            state = SkeletonState(-1, [], [], pair)
    out_ck = checkpoint_from_state(state, pair_name, rate, top, seed, mesh, delta0, ratio)
    if args.out:
        write_checkpoint(args.out, out_ck)
    report = _header("civilize", {"skeleton": args.skeleton, "checkpoint": args.checkpoint, "pair": pair_name,
                                  "rate": rate, "seed": seed, "mesh": mesh})
    report.update({"top": list(top.ids), "deltas": list(state.deltas), "etas": list(state.etas),
                   "eta_ratio": ratio, "steps": steps, "fiber_samples": len(out_ck.fibers)})
    ok = True
    if state.j >= 0:
        cond = check_civilized(state, top_cofaces(top, state.j), seed=seed)
        report["conditions"] = cond.to_dict()
        ok = cond.ok
    report["ok"] = bool(ok)
    _emit(report, args.report)
    return 0 if ok else 1


def cmd_torus(args) -> int:
    model = SolidTorusModel(args.a, CUTOFFS[args.cutoffs](), args.orientation)
    report = _header("torus-verify", {"a": args.a, "grid": args.grid, "probes": args.probes, "seed": args.seed,
                                      "cutoffs": args.cutoffs, "orientation": args.orientation,
                                      "family": args.family})
    try:
        rep = verify_example(model, args.grid, args.probes, args.seed)
    except LabError as exc:
        report.update({"ok": False, "error": f"{type(exc).__name__}: {exc}"})
        _emit(report, args.out)
        return 1
    report.update(rep)
    ok = example_passes(rep)
    if args.family:
        fam = verify_family(FamilyModel(n=args.n))
        report["family"] = fam
        ok = ok and fam["margin_min"] > 0
    report["ok"] = bool(ok)
    _emit(report, args.out)
    return 0 if ok else 1


def cmd_diffeo(args) -> int:
    sc = read_scenario(args.scenario)
    result = CHECKS[args.check](sc)
    report = _header("diffeo", {"check": args.check, "scenario": args.scenario, "seed": sc.seed,
                                "probes": sc.probes, "dim": sc.k})
    report["result"] = result
    _emit(report, args.out)
    return 0


def cmd_pipeline(args) -> int:
    cfg = read_config(args.config)
    report = run_pipeline(cfg)
    out = args.out or cfg.report or None
    _emit(report, out)
    plots = args.plots or cfg.plots
    if plots:
        emit_plot_data(report, plots)
    return 0 if report["ok"] else 1


def cmd_plots(args) -> int:
    if args.report:
        with open(args.report, encoding="utf-8") as fh:
            report = json.load(fh)
    else:
        report = {}
    counts = emit_plot_data(report, args.out)
    print(json.dumps(counts, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="planefield-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("genpos", help="jiggle a Kuhn lattice into general position")
    g.add_argument("--l", type=int, default=4, help="largest lattice refinement")
    g.add_argument("--min-l", type=int, default=1)
    g.add_argument("--eps-frac", type=float, default=0.1, help="jiggle radius times l")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--box", type=float, nargs=2, default=list(INNER), metavar=("A", "B"))
    g.add_argument("--cover", type=float, nargs=2, default=None, metavar=("A", "B"),
                   help="box covered by the complex (default: the box padded by one cell)")
    g.add_argument("--field", default="constant")
    g.add_argument("--rate", type=float, default=0.05)
    g.add_argument("--n", type=int, default=4)
    g.add_argument("--attempts", type=int, default=50)
    g.add_argument("--floor", type=float, default=GP_FLOOR)
    g.add_argument("--depth", type=int, default=2)
    g.add_argument("--report", help="JSON report path (stdout if omitted)")
    g.add_argument("--mesh", help="write the accepted complex here")
    g.add_argument("--jiggling", help="write the accepted displacements here")
    g.set_defaults(func=cmd_genpos)

    c = sub.add_parser("civilize", help="civilize the skeleta of one top simplex")
    c.add_argument("--skeleton", type=int, required=True, help="highest skeleton to civilize (-1 for none)")
    c.add_argument("--checkpoint", help="state file to resume from")
    c.add_argument("--out", help="state file to write")
    c.add_argument("--report", help="JSON report path (stdout if omitted)")
    c.add_argument("--pair", default="constant")
    c.add_argument("--rate", type=float, default=0.05)
    c.add_argument("--n", type=int, default=4)
    c.add_argument("--l", type=int, default=1)
    c.add_argument("--eps-frac", type=float, default=0.1)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--delta0", type=float, default=0.1, help="first fiber radius times l")
    c.add_argument("--eta-ratio", type=float, default=0.0, help="eta/delta; 0 derives it from the cofaces")
    c.add_argument("--probes", type=int, default=1000)
    c.set_defaults(func=cmd_civilize)

    t = sub.add_parser("torus-verify", help="check the solid-torus filling")
    t.add_argument("--a", type=float, default=0.5)
    t.add_argument("--grid", type=int, default=48)
    t.add_argument("--probes", type=int, default=1000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--cutoffs", choices=sorted(CUTOFFS), default="default")
    t.add_argument("--orientation", choices=("corrected", "literal"), default="corrected")
    t.add_argument("--family", action="store_true", help="also check the D^{n-3} family")
    t.add_argument("--n", type=int, default=4)
    t.add_argument("--out", help="JSON report path (stdout if omitted)")
    t.set_defaults(func=cmd_torus)

    d = sub.add_parser("diffeo", help="diffeomorphism-group checks from a scenario file")
    d.add_argument("check", choices=sorted(CHECKS))
    d.add_argument("--scenario", required=True)
    d.add_argument("--out", help="JSON report path (stdout if omitted)")
    d.set_defaults(func=cmd_diffeo)

    r = sub.add_parser("pipeline", help="run the single-chart pipeline from a key=value config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="JSON report path (default: the config's report key, else stdout)")
    r.add_argument("--plots", help="directory for plot CSVs")
    r.set_defaults(func=cmd_pipeline)

    e = sub.add_parser("emit-plots", help="write plot CSVs from a report")
    e.add_argument("--report", help="JSON report (omit for header-only files)")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_plots)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, PreconditionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LabError as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
