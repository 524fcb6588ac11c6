"""Scripted Byzantine leaders and benign stragglers.

The adversary signs only with keys of replicas in its Byzantine set.  Its
knowledge is whatever those replicas received: NEW-VIEW messages addressed
to them, proposals, and the QCs inside.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .core import Block, EmptyCertificate, EmptyShare, QuorumCertificate, VoteShare, empty_message, extends, vote_message
from .crypto import digest as hash_bytes
from .replica import qc_rank, tally


class Kind(str, enum.Enum):
    HONEST = "honest"
    SILENT = "silent"
    TAIL_FORK = "tail-fork"
    SKIP_FORWARD = "skip-forward"
    SKIP_BACKWARD = "skip-backward"
    EQUIVOCATE = "equivocate"
    STRAGGLE = "straggle"


@dataclass(frozen=True)
class Behavior:
    kind: Kind = Kind.HONEST
    target: int | None = None          # skip-forward / skip-backward: view of the fake tail
    delay: int | None = None           # straggle: extra ticks for late recipients
    reach: tuple[int, ...] | None = None  # straggle: recipients served on time
    base: str = "parent"               # tail-fork: "parent" (T.qc) or "conflict"
    split: tuple[int, ...] | None = None  # equivocate: recipients of the first variant

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.base not in ("parent", "conflict"):
            raise ValueError(f"unknown tail-fork base {self.base!r}")

    def label(self) -> str:
        if self.kind is Kind.TAIL_FORK and self.base == "conflict":
            return "tail-fork/conflict"
        return self.kind.value


HONEST = Behavior()


@dataclass(frozen=True)
class AdversaryScript:
    byzantine: frozenset[int] = frozenset()
    behaviors: dict = field(default_factory=dict)   # view -> Behavior
    default: Behavior = HONEST                       # for Byzantine-led views not listed
    voters: str = "honest"                           # "honest" or "withhold" NEW-VIEWs
    holds: dict = field(default_factory=dict)        # view -> recipients whose proposal waits for GST
    nv_holds: dict = field(default_factory=dict)     # view -> senders whose NEW-VIEW waits for GST

    def __post_init__(self):
        object.__setattr__(self, "byzantine", frozenset(self.byzantine))
        if self.voters not in ("honest", "withhold"):
            raise ValueError(f"unknown voter mode {self.voters!r}")

    def validate(self, config):
        if len(self.byzantine) > config.f:
            raise ValueError(f"{len(self.byzantine)} Byzantine replicas exceed f={config.f}")
        for v, b in self.behaviors.items():
            if b.kind is not Kind.STRAGGLE and b.kind is not Kind.HONEST \
                    and config.leader(v) not in self.byzantine:
                raise ValueError(f"behavior {b.label()} bound to view {v} led by honest replica {config.leader(v)}")

    def behavior(self, view: int, leader: int) -> Behavior:
        if view in self.behaviors:
            return self.behaviors[view]
        return self.default if leader in self.byzantine else HONEST


@dataclass
class Send:
    to: int
    block: Block
    extra_delay: int = 0


class Adversary:
    """Acts for Byzantine leaders; pools the knowledge of every Byzantine replica."""

    def __init__(self, script: AdversaryScript, config, cluster, replicas):
        self.script = script
        self.config = config
        self.cluster = cluster
        self.replicas = replicas
        self.signers = {r: cluster.signer(r) for r in sorted(script.byzantine)}

    # -- knowledge pool -----------------------------------------------------
    def _store(self):
        store = {}
        for r in sorted(self.script.byzantine):
            store.update(self.replicas[r].store)
        return store

    def _inbox(self, view):
        # NEW-VIEW messages of every view up to ``view`` that any Byzantine replica led
        seen = {}
        for r in sorted(self.script.byzantine):
            for v, by_sender in sorted(self.replicas[r].collected.items()):
                if v <= view:
                    for s, m in sorted(by_sender.items()):
                        seen[(v, s)] = m
        return [m for _, m in sorted(seen.items())]

    def _known_qcs(self):
        qcs = {}
        for r in sorted(self.script.byzantine):
            qcs.update(self.replicas[r].known_qcs)
        return qcs

    def _pool(self, view):
        msgs = self._inbox(view)
        votes, empties = tally(msgs, self.config, self.cluster)
        return msgs, votes, empties

    def _byz_empty(self, w):
        return [EmptyShare(r, w, s.sign(empty_message(w))) for r, s in self.signers.items()]

    def _byz_votes(self, block):
        return [VoteShare(r, block.view, block.digest, s.sign(vote_message(block.view, block.digest)),
                          block.signature) for r, s in self.signers.items()]

    def aggregatable_qcs(self, votes, store):
        """QCs the adversary holds or can assemble with its own shares added."""
        qcs = dict(self._known_qcs())
        for w, by_digest in votes.items():
            for d, shares in by_digest.items():
                pool = dict(shares)
                if d in store:
                    for s in self._byz_votes(store[d]):
                        pool.setdefault(s.voter, s)
                if len(pool) >= self.cluster.quorum:
                    agg = self.cluster.aggregate([s.share for _, s in sorted(pool.items())])
                    qcs[(w, d)] = QuorumCertificate(w, d, agg)
        return qcs

    def forge_justification(self, low, high, votes, empties):
        """Best-effort cover of views in (low, high) using every share available."""
        certs, evidence = [], []
        for w in range(low + 1, high):
            pool = dict(empties.get(w, {}))
            for s in self._byz_empty(w):
                pool.setdefault(s.voter, s)
            by_digest = votes.get(w, {})
            if len(pool) >= self.cluster.quorum:
                agg = self.cluster.aggregate([s.share for _, s in sorted(pool.items())])
                certs.append(EmptyCertificate(w, agg))
            elif len(by_digest) >= 2:
                (_, s1), (_, s2) = sorted(by_digest.items())[:2]
                evidence.append((min(s1.values(), key=lambda s: s.voter),
                                 min(s2.values(), key=lambda s: s.voter)))
        return tuple(certs), tuple(evidence)

    def fabricate(self, view, proposer_signer, qc, votes, empties, reinstated=None, tag=b"fake"):
        low = reinstated.view if reinstated is not None else qc.view
        certs, evidence = self.forge_justification(low, view, votes, empties) if self.config.carry else ((), ())
        leader = self.config.leader(view)
        signer = self.signers.get(leader, proposer_signer)
        payload = hash_bytes(tag + view.to_bytes(8, "little"))[:16]
        return Block(view, leader, payload, qc, reinstated, certs, evidence).with_signature(signer)

    # -- acting ---------------------------------------------------------------
    def honest_tail(self, view, votes, store):
        """Highest-view block below ``view`` with at least one vote visible to the adversary."""
        best = None
        for w in sorted(votes, reverse=True):
            if w >= view:
                continue
            for d in sorted(votes[w]):
                if d in store and store[d].qc is not None:
                    best = store[d]
                    break
            if best is not None:
                return best
        return None

    def act(self, view: int, leader_replica, behavior: Behavior) -> list[Send]:
        """Proposals the Byzantine leader of ``view`` sends."""
        kind = behavior.kind
        everyone = range(self.config.n)
        if kind is Kind.SILENT:
            return []
        msgs, votes, empties = self._pool(view)
        store = self._store()
        me = self.signers[leader_replica.id]
        if kind in (Kind.HONEST, Kind.STRAGGLE):
            block = leader_replica.try_propose(pacemaker_signal=True)
            return [Send(r, block) for r in everyone] if block is not None else []
        if kind is Kind.EQUIVOCATE:
            first = leader_replica.try_propose(pacemaker_signal=True)
            if first is None:
                first = self._tail_fork(view, me, votes, empties, store, Behavior(Kind.TAIL_FORK))
            if first is None:
                return []
            second = Block(view, first.proposer, hash_bytes(b"twin" + first.payload)[:16], first.qc,
                           first.reinstated, first.empty_certs, first.faulty_view_evidence).with_signature(me)
            split = set(behavior.split if behavior.split is not None else range(self.config.n // 2))
            return [Send(r, first if r in split else second) for r in everyone]
        if kind is Kind.TAIL_FORK:
            block = self._tail_fork(view, me, votes, empties, store, behavior)
        else:
            block = self._skip(view, me, votes, empties, store, behavior)
        if block is None:
            block = leader_replica.try_propose(pacemaker_signal=True)
        leader_replica.proposed[view] = block
        return [Send(r, block) for r in everyone] if block is not None else []

    def _tail_fork(self, view, me, votes, empties, store, behavior):
        tail = self.honest_tail(view, votes, store)
        if tail is None:
            return None
        base = tail.qc
        if behavior.base == "conflict":
            full = dict(store)
            full[tail.digest] = tail
            options = [qc for qc in self.aggregatable_qcs(votes, store).values()
                       if qc.view < view and qc.block_digest in full
                       and not extends(full, tail.digest, qc.block_digest)
                       and not (qc.view > tail.view and extends(full, qc.block_digest, tail.digest))]
            if options:
                base = max(options, key=qc_rank)
        return self.fabricate(view, me, base, votes, empties, tag=b"fork")

    def _skip(self, view, me, votes, empties, store, behavior):
        tail = self.honest_tail(view, votes, store)
        if tail is None:
            return None
        base = tail.qc
        t = tail.view
        if behavior.kind is Kind.SKIP_FORWARD:
            target = behavior.target if behavior.target is not None else base.view + 1
            target = min(target, t - 1) if t - 1 > base.view else base.view
        else:
            target = behavior.target if behavior.target is not None else view - 1
            target = max(target, t + 1) if view - 1 > t else t
        fake = self.fabricate(target, me, base, votes, empties, tag=b"skip") if target > base.view else \
            Block(target, self.config.leader(target), b"skip", base).with_signature(me)
        return self.fabricate(view, me, base, votes, empties, reinstated=fake, tag=b"skipper")
