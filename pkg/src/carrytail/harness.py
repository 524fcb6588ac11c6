"""Scenario runner, run metrics, invariant checks, word audit, and fork-fraction sweep."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .adversary import AdversaryScript, Behavior, Kind
from .core import ProtocolConfig, VoteShare, covered_views, extends
from .scenario import ScenarioConfig
from .simnet import Deadlock, NetworkConfig, PacemakerConfig, Simulation


# -- isolation ----------------------------------------------------------------

def honest_led(view, config: ProtocolConfig, byzantine) -> bool:
    return view == 0 or config.leader(view) not in byzantine


def neighbours(t, config, byzantine, limit=None):
    """Closest honest-led views strictly below and above ``t`` (genesis counts as honest)."""
    x = t - 1
    while x > 0 and not honest_led(x, config, byzantine):
        x -= 1
    y = t + 1
    cap = limit if limit is not None else t + 4 * config.n + 1
    while y <= cap and not honest_led(y, config, byzantine):
        y += 1
    return max(x, 0), y


def is_isolated(t, config, byzantine, rho=None) -> bool:
    """True when the honest views around ``t`` are more than rho apart."""
    rho = config.rho if rho is None else rho
    x, y = neighbours(t, config, byzantine)
    return y - x > rho


# -- metrics ------------------------------------------------------------------

@dataclass
class TailRecord:
    view: int
    digest: str
    votes: int
    status: str          # committed | forked | in-flight
    isolated: bool
    straggler: bool
    pre_gst: bool


@dataclass
class RunMetrics:
    seed: int
    variant: str
    n: int
    f: int
    rho: int
    views: int
    honest_proposals: int = 0
    committed_honest_proposals: int = 0
    forked_honest_tails: int = 0
    inflight_honest_proposals: int = 0
    forked_non_isolated_tails: int = 0
    straggler_proposals: int = 0
    committed_straggler_proposals: int = 0
    commits_total: int = 0
    per_view_word_counts: list = field(default_factory=list)
    per_view_payload_words: list = field(default_factory=list)
    max_handover_words: int = 0
    total_words: int = 0
    actual_faults: int = 0
    safety_violations: list = field(default_factory=list)
    trio_failures: list = field(default_factory=list)
    deadlock: str | None = None
    ticks: int = 0
    trace_sha256: str = ""
    tails: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def tail(self, view) -> TailRecord | None:
        for t in self.tails:
            if t.view == view:
                return t
        return None


def check_invariants(sim: Simulation) -> list[tuple[str, str]]:
    """Safety invariants over the honest replicas of a finished (or aborted) run."""
    found = []
    honest = [sim.replicas[r] for r in sim.honest]
    config = sim.config

    qcs_by_view = {}
    for rep in honest:
        for (view, d) in rep.known_qcs:
            qcs_by_view.setdefault(view, set()).add(d)
    for view, ds in sorted(qcs_by_view.items()):
        if len(ds) > 1:
            found.append(("no-equivocation", f"view {view} has QCs for {len(ds)} distinct blocks"))

    for msg in sim.state.violations:
        found.append(("unique-commit", msg))
    for i, a in enumerate(honest):
        for b in honest[i + 1:]:
            k = min(len(a.ledger), len(b.ledger))
            if a.ledger[:k] != b.ledger[:k]:
                pos = next(j for j in range(k) if a.ledger[j] != b.ledger[j])
                found.append(("position-agreement", f"replicas {a.id} and {b.id} differ at ledger position {pos}"))

    for rep in honest:
        views = [qc.view for qc in rep.lock_history]
        if any(b < a for a, b in zip(views, views[1:])):
            found.append(("lock-monotonicity", f"replica {rep.id} lock views {views}"))

    if config.carry:
        for rep in honest:
            for w, s in sorted(rep.window.items()):
                if not isinstance(s, VoteShare) or w == 0:
                    continue
                block = rep.store.get(s.block_digest)
                if block is None:
                    found.append(("carry-coverage", f"replica {rep.id} voted for unknown block at view {w}"))
                    continue
                x = block.qc.view
                if block.view - x <= config.rho and covered_views(block) != list(range(x + 1, block.view)):
                    found.append(("carry-coverage",
                                  f"replica {rep.id} voted view {w} with coverage {covered_views(block)}"))
    return found


def _union_store(sim):
    store = {}
    for r in sim.honest:
        store.update(sim.replicas[r].store)
    return store


def collect_metrics(sim: Simulation, deadlock: str | None = None) -> RunMetrics:
    config, st, quorum = sim.config, sim.state, sim.cluster.quorum
    m = RunMetrics(sim.seed, config.variant.value, config.n, config.f, config.rho, sim.views)
    store = _union_store(sim)
    ledger = max((sim.replicas[r].ledger for r in sim.honest), key=len)
    committed = set(ledger)
    m.commits_total = len(ledger) - 1

    voted = [b for bs in st.proposals.values() for b in bs if len(st.votes.get(b.digest, ())) >= quorum]
    head = max(voted, key=lambda b: (b.view, b.digest)) if voted else None

    for v in sorted(st.proposals):
        if not honest_led(v, config, sim.byzantine):
            continue
        straggler = v in st.stragglers
        for block in st.proposals[v]:
            nvotes = len(st.votes.get(block.digest, ()))
            if block.digest in committed:
                status = "committed"
            elif head is not None and head.view > block.view and not extends(store, head.digest, block.digest):
                status = "forked"
            else:
                status = "in-flight"
            isolated = is_isolated(v, config, sim.byzantine)
            pre_gst = st.view_start.get(v, 0) < sim.netcfg.gst
            rec = TailRecord(v, block.digest.hex()[:16], nvotes, status, isolated, straggler, pre_gst)
            m.tails.append(rec)
            if straggler and nvotes < quorum:
                m.straggler_proposals += 1
                m.committed_straggler_proposals += status == "committed"
                continue
            if nvotes < quorum:
                continue
            m.honest_proposals += 1
            if status == "committed":
                m.committed_honest_proposals += 1
            elif status == "forked":
                m.forked_honest_tails += 1
                # the resilience guarantee presumes synchrony
                m.forked_non_isolated_tails += not isolated and not pre_gst
            else:
                m.inflight_honest_proposals += 1

    m.per_view_word_counts = [st.view_words.get(v, 0) for v in range(1, sim.views + 1)]
    m.per_view_payload_words = [st.view_payload_words.get(v, 0) for v in range(1, sim.views + 1)]
    m.max_handover_words = st.max_newview_words
    m.total_words = sum(m.per_view_word_counts)
    deviants = {config.leader(v) for v in range(1, sim.views + 1)
                if config.leader(v) in sim.byzantine
                and sim.script.behavior(v, config.leader(v)).kind not in (Kind.HONEST,)}
    m.actual_faults = len(deviants)
    m.safety_violations = [f"{name}: {detail}" for name, detail in check_invariants(sim)]
    m.trio_failures = trio_failures(sim, committed)
    m.deadlock = deadlock
    m.ticks = sim.now
    m.trace_sha256 = hashlib.sha256("\n".join(st.trace).encode()).hexdigest()
    return m


def trio_failures(sim, committed) -> list[int]:
    """Views v opening a post-GST run of three honest leaders whose block v did not commit."""
    config, st = sim.config, sim.state
    out = []
    for v in range(1, sim.views - 1):
        if not all(honest_led(w, config, sim.byzantine) for w in (v, v + 1, v + 2)):
            continue
        if st.view_start.get(v, -1) < sim.netcfg.gst:
            continue
        blocks = st.proposals.get(v, [])
        if not any(b.digest in committed for b in blocks):
            out.append(v)
    return out


def simulate(config: ScenarioConfig, record_trace: bool = True) -> tuple[Simulation, RunMetrics]:
    sim = Simulation(config.protocol, config.network, config.pacemaker, config.views, config.adversary,
                     config.seed, quorum=config.quorum, record_trace=record_trace)
    deadlock = None
    try:
        sim.run()
    except Deadlock as exc:
        deadlock = str(exc)
    return sim, collect_metrics(sim, deadlock)


def run_scenario(config: ScenarioConfig, trace_path=None) -> RunMetrics:
    sim, metrics = simulate(config)
    if trace_path is not None:
        with open(trace_path, "w") as fh:
            fh.write("# tick from to kind words digest\n")
            fh.writelines(line + "\n" for line in sim.state.trace)
    return metrics


# -- word audit ----------------------------------------------------------------

class LinearityBreach(Exception):
    def __init__(self, view, words, bound, inventory):
        super().__init__(f"view {view}: {words} words exceeds {bound}; messages: {inventory}")
        self.view, self.words, self.bound, self.inventory = view, words, bound, inventory


@dataclass
class AuditResult:
    ok: bool
    max_handover_words: int
    handover_bound: int
    per_view_bound: int
    worst_view: int
    worst_words: int
    notes: list = field(default_factory=list)


# words per protocol message in a fault-free view, per replica: one NEW-VIEW of at
# most 2 + rho words, one proposal copy (view, signature, QC) and one certificate
# or fetched block per view in the window
PER_VIEW_CONSTANT = 3


def word_audit(metrics: RunMetrics, config: ProtocolConfig, messages=None, strict: bool = False) -> AuditResult:
    """Check NEW-VIEW size and a per-view ``c * rho * n`` ceiling on a finished run."""
    bound_nv = 2 + config.rho
    per_view = PER_VIEW_CONSTANT * (config.rho + 2) * config.n
    words = metrics.per_view_word_counts
    worst = max(range(len(words)), key=lambda i: words[i]) if words else 0
    res = AuditResult(True, metrics.max_handover_words, bound_nv, per_view, worst + 1,
                      words[worst] if words else 0)
    if metrics.max_handover_words > bound_nv:
        res.ok = False
        res.notes.append(f"NEW-VIEW of {metrics.max_handover_words} words exceeds {bound_nv}")
    for i, w in enumerate(words):
        if w > per_view:
            res.ok = False
            inventory = (messages or {}).get(i + 1, [])
            if strict:
                raise LinearityBreach(i + 1, w, per_view, inventory)
            res.notes.append(f"view {i + 1}: {w} words exceeds {per_view}")
    return res


@dataclass
class LinearFit:
    ns: list
    words: list
    a: float
    b: float
    max_relative_residual: float


def steady_state_words(metrics: RunMetrics, rho: int) -> float:
    """Mean words per view once NEW-VIEW windows are full and before the run winds down."""
    body = metrics.per_view_word_counts[rho + 1:-1]
    return float(np.mean(body))


def linearity_fit(ns=(4, 7, 10), rho=6, views=30, seed=0, variant="carry") -> LinearFit:
    ys = []
    for n in ns:
        proto = ProtocolConfig(n, (n - 1) // 3, rho, variant)
        m = run_scenario(ScenarioConfig(protocol=proto, views=views, seed=seed))
        ys.append(steady_state_words(m, rho))
    A = np.vstack([np.asarray(ns, float), np.ones(len(ns))]).T
    (a, b), *_ = np.linalg.lstsq(A, np.asarray(ys), rcond=None)
    pred = A @ np.array([a, b])
    resid = float(np.max(np.abs(pred - ys) / np.asarray(ys)))
    return LinearFit(list(ns), ys, float(a), float(b), resid)


def cascade_words(n, rho=6, seed=0, variant="carry") -> tuple[int, int]:
    """Words spent over a cascade of f consecutive silent leaders plus the recovering view.

    Returns ``(words, f)``.  The Byzantine replicas are the last f, so in the
    second rotation they lead views ``2n - f .. 2n - 1`` and ``2n`` recovers.
    """
    f = (n - 1) // 3
    proto = ProtocolConfig(n, f, rho, variant)
    script = AdversaryScript(frozenset(range(n - f, n)), default=Behavior(Kind.SILENT))
    views = 3 * n
    m = run_scenario(ScenarioConfig(protocol=proto, views=views, adversary=script, seed=seed))
    first, last = 2 * n - f, 2 * n
    return sum(m.per_view_word_counts[first - 1:last]), f


# -- fork fraction sweep ---------------------------------------------------------

def worst_case_placements(n, f):
    """Byzantine sets forming one maximal run of f consecutive round-robin leaders, at every offset."""
    return [frozenset((k + i) % n for i in range(f)) for k in range(n)]


ATTACKS = (Behavior(Kind.TAIL_FORK), Behavior(Kind.SKIP_FORWARD), Behavior(Kind.SKIP_BACKWARD))


@dataclass
class SweepRow:
    rho: int
    variant: str
    fraction: Fraction
    forked: int
    honest: int
    placement: tuple
    attack: str


def sweep_fraction(metrics: RunMetrics, lo: int, hi: int) -> tuple[int, int]:
    """(forked, honest) among quorum-voted honest proposals with ``lo <= view < hi``."""
    forked = honest = 0
    for t in metrics.tails:
        if lo <= t.view < hi and not t.straggler and t.votes >= 2 * metrics.f + 1:
            honest += 1
            forked += t.status == "forked"
    return forked, honest


def fork_fraction_sweep(rho_values, n=4, variant="carry", placements=None, attacks=ATTACKS,
                        seed=0, jobs=1) -> list[SweepRow]:
    """Worst fork fraction per rho, measured over two full rotations in the middle of a run."""
    f = (n - 1) // 3
    placements = placements if placements is not None else worst_case_placements(n, f)
    rows = []
    tasks = [(rho, p, a) for rho in rho_values for p in placements for a in attacks]
    results = _map(_sweep_task, [(rho, n, f, variant, p, a, seed) for rho, p, a in tasks], jobs)
    for rho in rho_values:
        best = None
        for (r, p, a), (forked, honest) in zip(tasks, results):
            if r != rho:
                continue
            frac = Fraction(forked, honest) if honest else Fraction(0)
            if best is None or frac > best.fraction:
                best = SweepRow(rho, variant, frac, forked, honest, tuple(sorted(p)), a.label())
        rows.append(best)
    return rows


def _sweep_task(args):
    rho, n, f, variant, placement, attack, seed = args
    proto = ProtocolConfig(n, f, rho, variant)
    views = 5 * n
    script = AdversaryScript(placement, default=attack)
    m = run_scenario(ScenarioConfig(protocol=proto, views=views, adversary=script, seed=seed))
    return sweep_fraction(m, n, 3 * n)


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def sweep_csv(rows: list[SweepRow], seed: int = 0) -> str:
    buf = io.StringIO()
    buf.write(f"# seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rho", "variant", "fraction", "fraction_float", "forked", "honest", "placement", "attack"])
    for r in rows:
        w.writerow([r.rho, r.variant, str(r.fraction), f"{float(r.fraction):.6f}", r.forked, r.honest,
                    " ".join(map(str, r.placement)), r.attack])
    return buf.getvalue()
