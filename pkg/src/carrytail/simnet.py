"""Deterministic discrete-event network and the driver that runs a cluster on it.

Time is integer ticks.  Before GST the adversary (or a seeded random policy)
picks delivery times; from GST on every envelope lands within ``delta`` ticks
of being sent.  Same-tick deliveries run in ``(to, from, seq)`` order and
precede any timer firing at that tick.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import random
from collections import defaultdict
from dataclasses import dataclass, field

from .adversary import Adversary, AdversaryScript, Kind, Send
from .core import Block, ProtocolConfig, block_words, encode, payload_words
from .crypto import ClusterKeys
from .pacemaker import AdvanceReason, Mode as PacemakerMode, Pacemaker
from .replica import NewViewMessage, Replica, SafetyViolation


class Deadlock(Exception):
    """The event queue drained before the run reached its final view."""


class BoundViolation(Exception):
    """A requested delivery time breaks the post-GST bound."""


class PreGstPolicy(str, enum.Enum):
    ADVERSARY = "adversary"   # delta unless a scripted hold applies
    RANDOM = "random"         # uniform in [1, pre_gst_max]


@dataclass(frozen=True)
class NetworkConfig:
    gst: int = 0
    delta: int = 5
    pre_gst_policy: PreGstPolicy = PreGstPolicy.RANDOM
    pre_gst_max: int = 20
    post_gst: str = "random"  # "random" in [1, delta], "max" or "min"

    def __post_init__(self):
        object.__setattr__(self, "pre_gst_policy", PreGstPolicy(self.pre_gst_policy))
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.gst < 0:
            raise ValueError("gst must be >= 0")
        if self.pre_gst_max < 1:
            raise ValueError("pre_gst_max must be >= 1")
        if self.post_gst not in ("random", "max", "min"):
            raise ValueError(f"unknown post-GST delay policy {self.post_gst!r}")


@dataclass(frozen=True)
class PacemakerConfig:
    mode: PacemakerMode = PacemakerMode.ORACLE
    base_timeout: int | None = None  # default 4 * delta
    backoff: float = 2

    def __post_init__(self):
        object.__setattr__(self, "mode", PacemakerMode(self.mode))


@dataclass
class Envelope:
    frm: int
    to: int
    kind: str
    payload: object
    send_time: int
    deliver_time: int = -1
    words: int = 0
    payload_words: int = 0
    view: int = 0
    seq: int = 0

    def digest_prefix(self) -> str:
        if isinstance(self.payload, Block):
            return self.payload.short()
        return hashlib.blake2b(encode(self.payload), digest_size=4).hexdigest()

    def log_line(self) -> str:
        return f"{self.deliver_time} {self.frm} {self.to} {self.kind} {self.words} {self.digest_prefix()}"


class Network:
    """Envelope queue with partial-synchrony delivery times."""

    def __init__(self, config: NetworkConfig, rng: random.Random, strict: bool = False):
        self.config = config
        self.rng = rng
        self.strict = strict
        self.now = 0
        self._queue = []
        self._seq = 0
        self.delivered = 0

    def default_delay(self, send_time: int) -> int:
        c = self.config
        if send_time >= c.gst:
            if c.post_gst == "max":
                return c.delta
            if c.post_gst == "min":
                return 1
            return self.rng.randint(1, c.delta)
        if c.pre_gst_policy is PreGstPolicy.RANDOM:
            return self.rng.randint(1, c.pre_gst_max)
        return c.delta

    def submit(self, env: Envelope, requested: int | None = None) -> Envelope:
        c = self.config
        if requested is None:
            requested = env.send_time + (1 if env.frm == env.to else self.default_delay(env.send_time))
        if requested < env.send_time:
            raise BoundViolation(f"delivery at {requested} precedes send at {env.send_time}")
        if env.send_time >= c.gst and requested > env.send_time + c.delta:
            if self.strict:
                raise BoundViolation(f"delivery at {requested} exceeds send {env.send_time} + delta {c.delta}")
            requested = env.send_time + c.delta
        env.deliver_time = requested
        env.seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (env.deliver_time, env.to, env.frm, env.seq, env))
        return env

    def peek_time(self):
        return self._queue[0][0] if self._queue else None

    def pending(self) -> int:
        return len(self._queue)

    def pop_tick(self) -> list[Envelope]:
        """Advance the clock to the earliest delivery and pop everything due then."""
        if not self._queue:
            return []
        t = self._queue[0][0]
        self.now = t
        out = []
        while self._queue and self._queue[0][0] == t:
            env = heapq.heappop(self._queue)[-1]
            if env.send_time >= self.config.gst:
                assert env.deliver_time <= env.send_time + self.config.delta
            out.append(env)
        self.delivered += len(out)
        return out


def step(net: Network) -> list[tuple[int, list]]:
    """Pop the next delivery batch, grouped by recipient in delivery order."""
    groups = []
    for env in net.pop_tick():
        if groups and groups[-1][0] == env.to:
            groups[-1][1].append(env.payload)
        else:
            groups.append((env.to, [env.payload]))
    return groups


@dataclass
class RunState:
    """Raw observations collected while the simulation runs."""

    votes: dict = field(default_factory=lambda: defaultdict(set))        # digest -> voters
    proposals: dict = field(default_factory=dict)                        # view -> [blocks sent]
    view_words: dict = field(default_factory=lambda: defaultdict(int))
    view_payload_words: dict = field(default_factory=lambda: defaultdict(int))
    view_messages: dict = field(default_factory=lambda: defaultdict(list))
    max_newview_words: int = 0
    trace: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    stragglers: set = field(default_factory=set)                          # views with a straggling leader
    view_start: dict = field(default_factory=dict)                       # view -> first honest entry tick
    timeouts: list = field(default_factory=list)                         # (tick, replica, view) expiries


class Simulation:
    """A cluster of replicas, the adversary, and the network, driven to a final view."""

    def __init__(self, protocol: ProtocolConfig, network: NetworkConfig, pacemaker: PacemakerConfig,
                 views: int, adversary: AdversaryScript | None = None, seed: int = 0,
                 quorum: int | None = None, max_ticks: int | None = None, record_trace: bool = True):
        self.config = protocol
        self.netcfg = network
        self.pmcfg = pacemaker
        self.views = views
        self.script = adversary or AdversaryScript()
        self.script.validate(protocol)
        self.seed = seed
        self.record_trace = record_trace
        self.cluster = ClusterKeys(protocol.n, protocol.f, threshold=quorum)
        self.replicas = [Replica(i, protocol, self.cluster, seed) for i in range(protocol.n)]
        self.byzantine = self.script.byzantine
        self.honest = [i for i in range(protocol.n) if i not in self.byzantine]
        self.adversary = Adversary(self.script, protocol, self.cluster, self.replicas)
        self.net = Network(network, random.Random(seed))
        base = pacemaker.base_timeout or 4 * network.delta
        self.slot = 2 * network.delta
        self.pacemakers = [Pacemaker(pacemaker.mode, base, pacemaker.backoff) for _ in range(protocol.n)]
        self.timers = []
        self._tseq = 0
        self.state = RunState()
        self.pending = defaultdict(list)   # replica -> future proposals held until entering their view
        horizon = base * (views + 4) * 8 + network.gst + network.pre_gst_max * 4
        self.max_ticks = max_ticks if max_ticks is not None else horizon
        self.done = False

    # -- plumbing ---------------------------------------------------------
    @property
    def now(self):
        return self.net.now

    def _timer(self, when, order, replica, kind, view):
        heapq.heappush(self.timers, (when, order, replica, self._tseq, kind, view))
        self._tseq += 1

    def _send(self, frm, to, payload, send_time=None, requested=None):
        send_time = self.now if send_time is None else send_time
        if isinstance(payload, Block):
            kind, words, pw, view = "PROPOSAL", block_words(payload), payload_words(payload), payload.view
        else:
            kind, words, pw, view = "NEWVIEW", payload.words, 0, payload.next_view
            self.state.max_newview_words = max(self.state.max_newview_words, words)
        env = Envelope(frm, to, kind, payload, send_time, words=words, payload_words=pw, view=view)
        if requested is None and send_time < self.netcfg.gst and self._held(env):
            requested = max(self.netcfg.gst, send_time + 1)
        self.net.submit(env, requested)
        st = self.state
        st.view_words[view] += words
        st.view_payload_words[view] += pw
        st.view_messages[view].append((frm, to, kind, words))

    def _held(self, env):
        if env.kind == "PROPOSAL":
            return env.to in self.script.holds.get(env.view, ())
        return env.frm in self.script.nv_holds.get(env.view, ())

    def _send_new_view(self, r, msg: NewViewMessage):
        leader = self.config.leader(msg.next_view)
        if r in self.byzantine and self.script.voters == "withhold" and leader not in self.byzantine:
            return
        self._send(r, leader, msg)

    def _entered(self, r, view):
        if r not in self.byzantine:
            self.state.view_start.setdefault(view, self.now)

    def _record_commit_error(self, r, exc):
        if r not in self.byzantine:
            self.state.violations.append(str(exc))

    # -- view changes -----------------------------------------------------
    def _schedule_view(self, r, view):
        """Arm the timers of replica ``r`` for the view it just entered (timeout mode)."""
        pm = self.pacemakers[r]
        if self.config.leader(view) == r:
            self._timer(pm.sync_time(), 1, r, "sync", view)
        self._timer(pm.exit_time(), 2, r, "exit", view)

    def _after_entry(self, r, view):
        for block in sorted(self.pending.pop((r, view), []), key=lambda b: b.digest):
            self._deliver_proposal(r, block)
        if self.config.leader(view) == r:
            self._leader_try(r, signal=False)

    def _advance(self, r, reason):
        rep = self.replicas[r]
        pm = self.pacemakers[r]
        if reason is AdvanceReason.TIMEOUT:
            msg = rep.on_timeout()
        else:
            rep.current_view += 1
            msg = rep.build_new_view(rep.current_view)
        pm.advance_view(reason, self.now)
        pm.current_view = rep.current_view
        self._entered(r, rep.current_view)
        self._send_new_view(r, msg)
        if self.pmcfg.mode is PacemakerMode.TIMEOUT:
            self._schedule_view(r, rep.current_view)
            self._after_entry(r, rep.current_view)

    def _jump(self, r, view):
        rep = self.replicas[r]
        rep.enter_view(view)
        self.pacemakers[r].jump_to(view, self.now)
        self._entered(r, view)
        self._schedule_view(r, view)

    # -- leaders ------------------------------------------------------------
    def _leader_try(self, r, signal):
        rep = self.replicas[r]
        v = rep.current_view
        if v > self.views or v in rep.proposed or self.config.leader(v) != r:
            return
        behavior = self.script.behavior(v, r)
        byz_acts = r in self.byzantine and behavior.kind not in (Kind.HONEST, Kind.STRAGGLE)
        if byz_acts:
            if not signal:
                return
            sends = self.adversary.act(v, rep, behavior)
            rep.proposed.setdefault(v, None)
        else:
            self._fetch_voted_blocks(r, v)
            block = rep.try_propose(pacemaker_signal=signal)
            if block is None:
                return
            sends = [Send(to, block) for to in range(self.config.n)]
        if behavior.kind is Kind.STRAGGLE:
            self.state.stragglers.add(v)
            delay = behavior.delay if behavior.delay is not None else 2 * self.netcfg.delta
            reach = set(behavior.reach) if behavior.reach is not None else {r}
            for s in sends:
                if s.to not in reach:
                    s.extra_delay = delay
        seen = set()
        for s in sends:
            if s.block.digest not in seen:
                self.state.proposals.setdefault(v, []).append(s.block)
                seen.add(s.block.digest)
            self._send(r, s.to, s.block, send_time=self.now + s.extra_delay)

    def _fetch_voted_blocks(self, r, v):
        """Pull blocks named by collected votes but never received, from an honest voter.

        Charged to view ``v`` as one block transfer each.
        """
        rep = self.replicas[r]
        for sender, msg in sorted(rep.collected.get(v, {}).items()):
            if sender in self.byzantine:
                continue
            for s in msg.window:
                d = getattr(s, "block_digest", None)
                if d is None or d in rep.store or s.voter != sender:
                    continue
                block = self.replicas[sender].store.get(d)
                if block is not None:
                    rep.store_block(block)
                    words = block_words(block)
                    self.state.view_words[v] += words
                    self.state.view_payload_words[v] += payload_words(block)
                    self.state.view_messages[v].append((sender, r, "FETCH", words))

    # -- deliveries ---------------------------------------------------------
    def _deliver_new_view(self, r, msg):
        rep = self.replicas[r]
        try:
            rep.on_new_view(msg)
        except SafetyViolation as exc:
            self._record_commit_error(r, exc)
        v = msg.next_view
        if self.pmcfg.mode is PacemakerMode.TIMEOUT and v > rep.current_view and v <= self.views + 1 \
                and len(rep.collected.get(v, {})) >= self.cluster.quorum:
            self._jump(r, v)
        if rep.current_view == v:
            self._leader_try(r, signal=False)

    def _deliver_proposal(self, r, block):
        rep = self.replicas[r]
        if block.view > rep.current_view:
            if self.pmcfg.mode is PacemakerMode.TIMEOUT and rep.check_proposal(block)[0].accepted:
                self._jump(r, block.view)
            else:
                self.pending[(r, block.view)].append(block)
                return
        try:
            vote, _ = rep.on_proposal(block)
        except SafetyViolation as exc:
            self._record_commit_error(r, exc)
            vote = None
        if vote is None:
            return
        self.state.votes[block.digest].add(r)
        if self.pmcfg.mode is PacemakerMode.TIMEOUT and rep.current_view == block.view:
            self._advance(r, AdvanceReason.QC_FORMED)

    # -- timers -------------------------------------------------------------
    def _fire(self, kind, r, view):
        if kind == "end":
            for x in range(self.config.n):
                rep = self.replicas[x]
                if rep.current_view == view:
                    rep.abstain(view)
            if view >= self.views:
                self.done = True
                return
            for x in range(self.config.n):
                self._advance(x, AdvanceReason.SYNC)
            start = self.now
            self._timer(start + self.netcfg.delta, 1, self.config.leader(view + 1), "sync", view + 1)
            self._timer(start + self.slot, 3, -1, "end", view + 1)
            for x in range(self.config.n):
                self._after_entry(x, view + 1)
            return
        rep = self.replicas[r]
        if rep.current_view != view:
            return
        if kind == "sync":
            self._leader_try(r, signal=True)
        elif kind == "exit":
            self.state.timeouts.append((self.now, r, view))
            self._advance(r, AdvanceReason.TIMEOUT)

    def _oracle_enter(self, r, view):
        rep = self.replicas[r]
        rep.current_view = view
        self.pacemakers[r].jump_to(view, self.now)
        self._entered(r, view)
        self._send_new_view(r, rep.build_new_view(view))

    def start(self):
        if self.pmcfg.mode is PacemakerMode.ORACLE:
            for r in range(self.config.n):
                self._oracle_enter(r, 1)
            self._timer(self.netcfg.delta, 1, self.config.leader(1), "sync", 1)
            self._timer(self.slot, 3, -1, "end", 1)
        else:
            for r in range(self.config.n):
                self._oracle_enter(r, 1)
                self._schedule_view(r, 1)

    def finished(self) -> bool:
        if self.done:
            return True
        if self.pmcfg.mode is PacemakerMode.TIMEOUT:
            return all(self.replicas[r].current_view > self.views for r in self.honest)
        return False

    def run(self):
        self.start()
        while not self.finished():
            t_net = self.net.peek_time()
            t_timer = self.timers[0][0] if self.timers else None
            if t_net is None and t_timer is None:
                raise Deadlock(f"queue empty at tick {self.now} before view {self.views} completed")
            t = min(x for x in (t_net, t_timer) if x is not None)
            if t > self.max_ticks:
                raise Deadlock(f"no progress past view {min(self.replicas[r].current_view for r in self.honest)} "
                               f"by tick {self.max_ticks}")
            if t_net is not None and t_net == t:
                for env in self.net.pop_tick():
                    if self.record_trace:
                        self.state.trace.append(env.log_line())
                    if isinstance(env.payload, Block):
                        self._deliver_proposal(env.to, env.payload)
                    else:
                        self._deliver_new_view(env.to, env.payload)
                    if self.finished():
                        return self
            else:
                self.net.now = t
            while self.timers and self.timers[0][0] == t and not self.finished():
                _, _, r, _, kind, view = heapq.heappop(self.timers)
                self._fire(kind, r, view)
        return self
