"""Command-line front end.

Exit codes: 0 clean, 1 a violation was found, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .checker import Bounds, bounds_from_dict, bounds_to_dict, exhaustive_check, replay
from .core import LeaderRotation, ProtocolConfig, Variant
from .harness import fork_fraction_sweep, run_scenario, sweep_csv, worst_case_placements
from .pacemaker import Mode as PacemakerMode
from .scenario import ConfigError, ScenarioConfig, load_scenario, preset, scenario_from_dict, tomllib
from .simnet import PacemakerConfig

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


def parse_range(text: str) -> list[int]:
    """``"1..8"``, ``"6"`` or ``"1,3,5"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}; use A..B, N or A,B,C") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="carrytail", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
        sp.add_argument("--protocol", choices=[v.value for v in Variant], default=None)
        sp.add_argument("--output", default=None, help="write to PATH instead of stdout")
        sp.add_argument("--jobs", type=int, default=1)

    run = sub.add_parser("run", help="run one scenario and print metrics JSON")
    common(run)
    run.add_argument("--rho", type=int, default=None)
    run.add_argument("--scenario", default=None, help="scenario TOML file")
    run.add_argument("--views", type=int, default=None)
    run.add_argument("--n", type=int, default=None)
    run.add_argument("--pacemaker", choices=[m.value for m in PacemakerMode], default=None)
    run.add_argument("--adversary", default=None, help="preset name or TOML file with an [adversary] table")
    run.add_argument("--trace", default=None, help="write the message trace to PATH")

    check = sub.add_parser("check", help="exhaustive bounded check")
    common(check)
    check.add_argument("--rho", type=int, default=6)
    check.add_argument("--n", type=int, default=4)
    check.add_argument("--views", type=int, default=8)
    check.add_argument("--pre-gst-views", type=int, default=2)
    check.add_argument("--quorum", type=int, default=None, help="override 2f+1 (mutation canary)")
    check.add_argument("--pacemaker", choices=["oracle"], default="oracle")

    sweep = sub.add_parser("sweep", help="worst-case fork fraction per rho, as CSV")
    common(sweep)
    sweep.add_argument("--rho", type=parse_range, default=list(range(1, 9)), help="A..B, N or A,B,C")
    sweep.add_argument("--n", type=int, default=4)
    sweep.add_argument("--worst-case", action="store_true",
                       help="place Byzantine leaders in maximal consecutive runs (the default placement set)")

    rep = sub.add_parser("replay", help="re-run traces stored in a check report")
    rep.add_argument("--trace", required=True, help="check report JSON")
    rep.add_argument("--output", default=None)
    return p


def _emit(text: str, path):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _load_adversary(source: str, base: ScenarioConfig) -> ScenarioConfig:
    if os.path.isfile(source):
        try:
            with open(source, "rb") as fh:
                doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{source}: {exc}") from None
        table = doc.get("adversary", doc)
        merged = scenario_from_dict({"protocol": {"n": base.protocol.n, "f": base.protocol.f},
                                     "adversary": table})
        return base.replace(adversary=merged.adversary)
    return base.replace(adversary=preset(source, base.protocol))


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario) if args.scenario else ScenarioConfig()
    if args.n is not None:
        f = (args.n - 1) // 3
        sc = sc.replace(protocol=ProtocolConfig(args.n, f, sc.protocol.rho, sc.protocol.variant,
                                                LeaderRotation(args.n)),
                        adversary=type(sc.adversary)())
    if args.rho is not None:
        sc = sc.with_protocol(rho=args.rho)
    if args.protocol is not None:
        sc = sc.with_protocol(variant=Variant(args.protocol))
    if args.views is not None:
        sc = sc.replace(views=args.views)
    if args.seed is not None:
        sc = sc.replace(seed=args.seed)
    if args.pacemaker is not None:
        sc = sc.replace(pacemaker=PacemakerConfig(PacemakerMode(args.pacemaker), sc.pacemaker.base_timeout,
                                                  sc.pacemaker.backoff))
    if args.adversary is not None:
        sc = _load_adversary(args.adversary, sc)
    metrics = run_scenario(sc, trace_path=args.trace)
    _emit(metrics.to_json(), args.output)
    return EXIT_VIOLATION if metrics.safety_violations or metrics.deadlock else EXIT_OK


def cmd_check(args) -> int:
    if args.n < 4 or (args.n - 1) % 3:
        raise ConfigError("--n must be 3f+1 with f >= 1")
    bounds = Bounds(n=args.n, f=(args.n - 1) // 3, views=args.views,
                    rho=args.rho,
                    variant=args.protocol or "carry", pre_gst_views=args.pre_gst_views, quorum=args.quorum)
    report = exhaustive_check(bounds, jobs=max(1, args.jobs))
    doc = {"seed": args.seed or 0, "bounds": bounds_to_dict(bounds), **report.to_dict()}
    _emit(json.dumps(doc, sort_keys=True, indent=2) + "\n", args.output)
    return EXIT_VIOLATION if report.violations else EXIT_OK


def cmd_sweep(args) -> int:
    rhos = args.rho
    if args.n < 4 or (args.n - 1) % 3:
        raise ConfigError("--n must be 3f+1 with f >= 1")
    seed = args.seed or 0
    placements = worst_case_placements(args.n, (args.n - 1) // 3)
    rows = fork_fraction_sweep(rhos, n=args.n, variant=args.protocol or "carry", placements=placements,
                               seed=seed, jobs=max(1, args.jobs))
    _emit(sweep_csv(rows, seed), args.output)
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        with open(args.trace) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load {args.trace}: {exc}") from None
    bounds = bounds_from_dict(doc.get("bounds", {}))
    traces = [doc["trace"]] if "trace" in doc else [v["trace"] for v in doc.get("violations", [])]
    results = []
    for trace in traces:
        found = replay(bounds, trace)
        results.append({"trace": trace, "violations": [{"invariant": n, "detail": d} for n, d in found]})
    _emit(json.dumps({"replayed": len(results), "results": results}, sort_keys=True, indent=2) + "\n",
          args.output)
    return EXIT_VIOLATION if any(r["violations"] for r in results) else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "check": cmd_check, "sweep": cmd_sweep, "replay": cmd_replay}
    try:
        return handlers[args.command](args)
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
