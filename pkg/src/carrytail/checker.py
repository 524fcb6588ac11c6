"""Bounded exhaustive safety and liveness checking on small clusters.

Every trace fixes the Byzantine replica, a behavior for each view it leads,
and which honest replicas get each pre-GST proposal only at GST.  The
enumeration covers the full product of those menus; each trace is run with
the oracle pacemaker and deterministic post-GST delays, so a reported trace
replays to the same outcome.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field

from .adversary import AdversaryScript, Behavior, Kind
from .core import ProtocolConfig
from .harness import check_invariants, collect_metrics
from .pacemaker import Mode as PacemakerMode
from .scenario import ScenarioConfig
from .simnet import Deadlock, NetworkConfig, PacemakerConfig, Simulation

BEHAVIOR_MENU = {
    "honest": Behavior(Kind.HONEST),
    "silent": Behavior(Kind.SILENT),
    "tail-fork": Behavior(Kind.TAIL_FORK),
    "tail-fork/conflict": Behavior(Kind.TAIL_FORK, base="conflict"),
    "skip-forward": Behavior(Kind.SKIP_FORWARD),
    "skip-backward": Behavior(Kind.SKIP_BACKWARD),
    "equivocate": Behavior(Kind.EQUIVOCATE),
}


@dataclass(frozen=True)
class Bounds:
    n: int = 4
    f: int = 1
    views: int = 8
    rho: int = 6
    variant: str = "carry"
    pre_gst_views: int = 2
    delta: int = 2
    behaviors: tuple = tuple(BEHAVIOR_MENU)
    voter_modes: tuple = ("honest", "withhold")
    quorum: int | None = None  # lower it to 2f for the mutation canary
    stop_at_first: bool = False

    def __post_init__(self):
        if not 3 <= self.views <= 12:
            raise ValueError("views must be within [3, 12] for exhaustive checking")
        if not 0 <= self.pre_gst_views < self.views:
            raise ValueError("pre_gst_views must be below views")
        unknown = set(self.behaviors) - set(BEHAVIOR_MENU)
        if unknown:
            raise ValueError(f"unknown behaviors: {sorted(unknown)}")

    @property
    def gst(self) -> int:
        return self.pre_gst_views * 2 * self.delta


@dataclass
class Violation:
    trace: dict
    invariant: str
    detail: str


@dataclass
class CheckReport:
    states_explored: int = 0
    violations: list = field(default_factory=list)
    exhausted: bool = False
    commits_min: int | None = None
    elapsed: float = 0.0

    def to_dict(self):
        return {
            "states_explored": self.states_explored,
            "exhausted": self.exhausted,
            "commits_min": self.commits_min,
            "violations": [{"trace": v.trace, "invariant": v.invariant, "detail": v.detail}
                           for v in self.violations],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def hold_menu(view, config: ProtocolConfig, byzantine):
    """Recipient sets whose copy of ``view``'s proposal is held until GST."""
    leader = config.leader(view)
    others = [r for r in range(config.n) if r != leader and r not in byzantine]
    menu = [()]
    menu += [(r,) for r in others]
    if len(others) > 1:
        menu.append(tuple(others))
    return menu


def protocol_for(bounds: Bounds) -> ProtocolConfig:
    return ProtocolConfig(bounds.n, bounds.f, bounds.rho, bounds.variant)


def enumerate_traces(bounds: Bounds):
    """Yield every trace as a JSON-friendly dict, in a fixed order."""
    config = protocol_for(bounds)
    for byz in range(bounds.n):
        led = [v for v in range(1, bounds.views + 1) if config.leader(v) == byz]
        pre = list(range(1, bounds.pre_gst_views + 1))
        holds_menu = [hold_menu(v, config, {byz}) for v in pre]
        for voters in bounds.voter_modes:
            for choice in itertools.product(bounds.behaviors, repeat=len(led)):
                for holds in itertools.product(*holds_menu):
                    yield {
                        "byzantine": [byz],
                        "voters": voters,
                        "behaviors": {str(v): b for v, b in zip(led, choice)},
                        "holds": {str(v): list(h) for v, h in zip(pre, holds) if h},
                    }


def scenario_for(bounds: Bounds, trace: dict) -> ScenarioConfig:
    config = protocol_for(bounds)
    script = AdversaryScript(
        frozenset(trace["byzantine"]),
        {int(v): BEHAVIOR_MENU[b] for v, b in trace["behaviors"].items()},
        voters=trace.get("voters", "honest"),
        holds={int(v): frozenset(h) for v, h in trace["holds"].items()},
    )
    network = NetworkConfig(gst=bounds.gst, delta=bounds.delta, pre_gst_policy="adversary", post_gst="max")
    return ScenarioConfig(config, network, PacemakerConfig(PacemakerMode.ORACLE), bounds.views, script,
                          seed=0, quorum=bounds.quorum)


def run_trace(bounds: Bounds, trace: dict) -> tuple[list[tuple[str, str]], int]:
    """Run one trace; returns (violations, commits)."""
    sc = scenario_for(bounds, trace)
    sim = Simulation(sc.protocol, sc.network, sc.pacemaker, sc.views, sc.adversary, sc.seed,
                     quorum=sc.quorum, record_trace=False)
    found = []
    try:
        sim.run()
    except Deadlock as exc:
        found.append(("liveness", str(exc)))
    found += check_invariants(sim)
    commits = min(len(sim.replicas[r].ledger) for r in sim.honest) - 1
    if commits < 1:
        found.append(("liveness", "no block committed"))
    if bounds.quorum is None:
        m = collect_metrics(sim)
        for v in m.trio_failures:
            found.append(("liveness", f"view {v} opens three honest post-GST views but did not commit"))
    return found, commits


def _check_shard(args):
    bounds, shard, shards = args
    report = CheckReport()
    for i, trace in enumerate(enumerate_traces(bounds)):
        if i % shards != shard:
            continue
        found, commits = run_trace(bounds, trace)
        report.states_explored += 1
        report.commits_min = commits if report.commits_min is None else min(report.commits_min, commits)
        for name, detail in found:
            report.violations.append(Violation(trace, name, detail))
        if found and bounds.stop_at_first:
            return report
    report.exhausted = True
    return report


def exhaustive_check(bounds: Bounds = Bounds(), jobs: int = 1) -> CheckReport:
    start = time.perf_counter()
    tasks = [(bounds, k, jobs) for k in range(jobs)]
    if jobs <= 1:
        parts = [_check_shard(tasks[0])]
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_check_shard, tasks))
    merged = CheckReport(exhausted=all(p.exhausted for p in parts))
    for p in parts:
        merged.states_explored += p.states_explored
        merged.violations.extend(p.violations)
        if p.commits_min is not None:
            merged.commits_min = p.commits_min if merged.commits_min is None else min(merged.commits_min,
                                                                                    p.commits_min)
    merged.elapsed = time.perf_counter() - start
    return merged


def replay(bounds: Bounds, trace: dict) -> list[tuple[str, str]]:
    """Re-run a stored trace and return the violations it produces."""
    return run_trace(bounds, trace)[0]


def bounds_to_dict(bounds: Bounds) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in bounds.__dict__.items()}


def bounds_from_dict(d: dict) -> Bounds:
    d = dict(d)
    if "behaviors" in d:
        d["behaviors"] = tuple(d["behaviors"])
    if "voter_modes" in d:
        d["voter_modes"] = tuple(d["voter_modes"])
    return Bounds(**d)
