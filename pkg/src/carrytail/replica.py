"""Per-replica state machine for streamlined HotStuff-2, with and without tail carrying.

The replica is passive: a driver (the simulator) feeds it messages and
pacemaker events one at a time and ships whatever it returns.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from .core import (
    Block,
    EmptyCertificate,
    EmptyShare,
    ProtocolConfig,
    QuorumCertificate,
    VoteShare,
    ancestry,
    empty_message,
    make_genesis,
    proposal_message,
    register_codec,
    validate_block,
    verify_empty_share,
    verify_endorsement,
    verify_qc,
    verify_vote,
    vote_message,
    _r_empty, _r_qc, _r_vote, _w_empty, _w_qc, _w_vote,
)
from .crypto import ClusterKeys, digest as hash_bytes


class SafetyViolation(Exception):
    """A commit would rewrite an existing ledger position."""


class MissingJustification(Exception):
    def __init__(self, view):
        super().__init__(f"no vote, empty quorum, or evidence for view {view}")
        self.view = view


@dataclass(frozen=True)
class NewViewMessage:
    sender: int
    next_view: int
    lock: QuorumCertificate
    window: tuple = ()  # VoteShare | EmptyShare, ascending by view

    def slot(self, view):
        for s in self.window:
            if s.view == view:
                return s
        return None

    @property
    def words(self) -> int:
        return 2 + len(self.window)


def _w_newview(w, m: NewViewMessage):
    w.u32(m.sender)
    w.u64(m.next_view)
    _w_qc(w, m.lock)
    w.u32(len(m.window))
    for s in m.window:
        if isinstance(s, VoteShare):
            w.u8(0)
            _w_vote(w, s)
        else:
            w.u8(1)
            _w_empty(w, s)


def _r_newview(r) -> NewViewMessage:
    sender, nv, lock = r.u32(), r.u64(), _r_qc(r)
    window = tuple(_r_vote(r) if r.u8() == 0 else _r_empty(r) for _ in range(r.u32()))
    return NewViewMessage(sender, nv, lock, window)


register_codec(NewViewMessage, 8, _w_newview, _r_newview)


class Mode(str, enum.Enum):
    FRESH_QC = "fresh-qc"
    REINSTATE = "reinstate"
    NO_CARRY = "no-carry"
    FAULTY_VIEWS = "faulty-views"


@dataclass
class ReinstateDecision:
    mode: Mode
    qc: QuorumCertificate
    reinstated: Block | None = None
    empty_certs: tuple = ()
    evidence: tuple = ()

    @property
    def empty_cert_views(self):
        return [c.view for c in self.empty_certs]


def default_payload(seed: int, view: int, proposer: int) -> bytes:
    return hash_bytes(struct.pack("<QQI", seed, view, proposer))[:16]


# -- leader-side aggregation ------------------------------------------------

def tally(collected, config: ProtocolConfig, cluster: ClusterKeys):
    """Index the verified shares of a set of NEW-VIEW messages.

    Returns ``(votes, empties)``: ``votes[w][digest] -> {voter: VoteShare}``
    (only votes carrying a valid endorsement by the view's leader) and
    ``empties[w] -> {voter: EmptyShare}``.
    """
    votes, empties = {}, {}
    for m in collected:
        for s in m.window:
            if s.voter != m.sender:
                continue
            if isinstance(s, VoteShare):
                if verify_vote(s, cluster) and verify_endorsement(s, config, cluster):
                    votes.setdefault(s.view, {}).setdefault(s.block_digest, {}).setdefault(s.voter, s)
            elif verify_empty_share(s, cluster):
                empties.setdefault(s.view, {}).setdefault(s.voter, s)
    return votes, empties


def fresh_qcs(votes, cluster: ClusterKeys) -> list[QuorumCertificate]:
    out = []
    for w, by_digest in votes.items():
        for d, shares in by_digest.items():
            if len(shares) >= cluster.quorum:
                agg = cluster.aggregate([s.share for _, s in sorted(shares.items())])
                out.append(QuorumCertificate(w, d, agg))
    return out


def qc_rank(qc: QuorumCertificate):
    return (qc.view, len(qc.signers), qc.block_digest)


def select_reinstate(collected, highest_qc: QuorumCertificate, v: int, config: ProtocolConfig,
                     cluster: ClusterKeys, store, tallied=None) -> ReinstateDecision:
    """Decide what a Carry proposal for view ``v`` extending ``highest_qc`` must carry.

    Walks down from ``v - 1``: a view holding exactly one endorsed block that
    extends ``highest_qc`` is reinstated and ends the walk; a view whose
    leader provably equivocated is covered by evidence; otherwise ``quorum``
    empty shares are aggregated into an empty certificate.
    """
    x = highest_qc.view
    if v - x > config.rho:
        return ReinstateDecision(Mode.NO_CARRY, highest_qc)
    votes, empties = tallied if tallied is not None else tally(collected, config, cluster)
    certs, evidence = [], []
    reinstated = None
    for w in range(v - 1, x, -1):
        by_digest = votes.get(w, {})
        if len(by_digest) >= 2:
            (d1, s1), (d2, s2) = sorted(by_digest.items())[:2]
            a = min(s1.values(), key=lambda s: s.voter)
            b = min(s2.values(), key=lambda s: s.voter)
            evidence.append((a, b))
            continue
        extending = [
            store[d] for d in by_digest
            if d in store and store[d].qc is not None and store[d].qc.certifies(highest_qc)
            and validate_block(store[d], config, cluster).accepted
        ]
        if extending:
            reinstated = extending[0]
            break
        emp = empties.get(w, {})
        if len(emp) >= cluster.quorum:
            agg = cluster.aggregate([s.share for _, s in sorted(emp.items())])
            certs.append(EmptyCertificate(w, agg))
            continue
        raise MissingJustification(w)
    certs.sort(key=lambda c: c.view)
    evidence.sort(key=lambda p: p[0].view)
    if reinstated is not None:
        mode = Mode.REINSTATE
    elif evidence:
        mode = Mode.FAULTY_VIEWS
    else:
        mode = Mode.FRESH_QC
    return ReinstateDecision(mode, highest_qc, reinstated, tuple(certs), tuple(evidence))


# -- replica ----------------------------------------------------------------

@dataclass
class Replica:
    id: int
    config: ProtocolConfig
    cluster: ClusterKeys
    seed: int = 0
    payload_fn: object = default_payload

    current_view: int = 0
    lock: QuorumCertificate = None
    window: dict = field(default_factory=dict)
    store: dict = field(default_factory=dict)
    known_qcs: dict = field(default_factory=dict)
    ledger: list = field(default_factory=list)
    collected: dict = field(default_factory=dict)
    proposed: dict = field(default_factory=dict)
    lock_history: list = field(default_factory=list)
    rejections: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    def __post_init__(self):
        self.signer = self.cluster.signer(self.id)
        self.genesis, self.genesis_qc = make_genesis(self.cluster)
        self.store[self.genesis.digest] = self.genesis
        self.ledger.append(self.genesis.digest)
        self.lock = self.genesis_qc
        self.lock_history.append(self.genesis_qc)
        self._learn_qc(self.genesis_qc)
        self.window[0] = self._vote_share(self.genesis)

    # -- shares ---------------------------------------------------------
    def _vote_share(self, block: Block) -> VoteShare:
        share = self.signer.sign(vote_message(block.view, block.digest))
        return VoteShare(self.id, block.view, block.digest, share, block.signature)

    def _empty_share(self, view: int) -> EmptyShare:
        return EmptyShare(self.id, view, self.signer.sign(empty_message(view)))

    def abstain(self, view: int):
        """Record an empty share for ``view`` unless a share already exists."""
        if view not in self.window:
            self.window[view] = self._empty_share(view)

    @property
    def highest_qc(self) -> QuorumCertificate:
        return max(self.known_qcs.values(), key=qc_rank)

    def voted(self, view: int):
        s = self.window.get(view)
        return s if isinstance(s, VoteShare) else None

    # -- knowledge --------------------------------------------------------
    def store_block(self, block: Block):
        b = block
        while b is not None and b.digest not in self.store:
            self.store[b.digest] = b
            b = b.reinstated

    def _learn_qc(self, qc: QuorumCertificate) -> bool:
        key = (qc.view, qc.block_digest)
        if key in self.known_qcs:
            return False
        self.known_qcs[key] = qc
        return True

    def learn_qc(self, qc: QuorumCertificate) -> list[Block]:
        """Remember a verified QC and run the commit rule on it."""
        if qc is None or not verify_qc(qc, self.cluster):
            return []
        self._learn_qc(qc)
        return self.compute_commits(qc)

    # -- handover ---------------------------------------------------------
    def enter_view(self, view: int):
        """Move to ``view``, abstaining in every skipped view."""
        for w in range(self.current_view, view):
            self.abstain(w)
        self.current_view = max(self.current_view, view)

    def build_new_view(self, next_view: int) -> NewViewMessage:
        if self.config.carry:
            lo = max(0, next_view - self.config.rho)
            for w in range(lo, next_view):
                self.abstain(w)
            window = tuple(self.window[w] for w in range(lo, next_view))
        else:
            last = self.voted(next_view - 1)
            window = (last,) if last is not None else ()
        return NewViewMessage(self.id, next_view, self.lock, window)

    def on_timeout(self) -> NewViewMessage:
        self.abstain(self.current_view)
        self.current_view += 1
        return self.build_new_view(self.current_view)

    def on_new_view(self, msg: NewViewMessage) -> list[Block]:
        """File a NEW-VIEW addressed to this replica; returns blocks committed on its lock."""
        if msg.next_view < self.current_view or self.config.leader(msg.next_view) != self.id:
            return []
        if not verify_qc(msg.lock, self.cluster):
            return []
        self.collected.setdefault(msg.next_view, {}).setdefault(msg.sender, msg)
        committed = self.learn_qc(msg.lock)
        msgs = [m for _, m in sorted(self.collected[msg.next_view].items())]
        for qc in fresh_qcs(tally(msgs, self.config, self.cluster)[0], self.cluster):
            if (qc.view, qc.block_digest) not in self.known_qcs:
                committed += self.learn_qc(qc)
        return committed

    # -- leader -----------------------------------------------------------
    def try_propose(self, pacemaker_signal: bool = False) -> Block | None:
        v = self.current_view
        if self.config.leader(v) != self.id or v in self.proposed:
            return None
        msgs = [m for _, m in sorted(self.collected.get(v, {}).items())]
        tallied = tally(msgs, self.config, self.cluster)
        fresh = fresh_qcs(tallied[0], self.cluster)
        for qc in fresh:
            self.learn_qc(qc)
        full = len(msgs) >= self.config.n
        if not (fresh or full or pacemaker_signal):
            return None
        lock_floor = max([self.lock.view] + [m.lock.view for m in msgs])
        bases = sorted((qc for qc in self.known_qcs.values() if qc.view >= lock_floor and qc.view < v),
                       key=qc_rank, reverse=True)
        if not bases:
            return None
        if not self.config.carry:
            decision = ReinstateDecision(Mode.NO_CARRY, bases[0])
        else:
            decision = None
            # lower bases are a fallback once the leader has heard all it will hear
            for qc in bases if (full or pacemaker_signal) else bases[:1]:
                try:
                    decision = select_reinstate(msgs, qc, v, self.config, self.cluster, self.store, tallied)
                    break
                except MissingJustification:
                    continue
            if decision is None:
                return None
        block = self.make_block(v, decision)
        self.proposed[v] = block
        self.store_block(block)
        return block

    def make_block(self, view: int, decision: ReinstateDecision, payload: bytes | None = None) -> Block:
        if payload is None:
            payload = self.payload_fn(self.seed, view, self.id)
        return Block(view, self.id, payload, decision.qc, decision.reinstated,
                     decision.empty_certs, decision.evidence).with_signature(self.signer)

    # -- voter ------------------------------------------------------------
    def check_proposal(self, block: Block):
        report = validate_block(block, self.config, self.cluster)
        lock_ok = block.qc is not None and block.qc.view >= self.lock.view
        return report, lock_ok

    def on_proposal(self, block: Block):
        """Process a proposal; returns ``(vote or None, newly committed blocks)``."""
        self.store_block(block)
        committed = self.learn_qc(block.qc)
        if block.view != self.current_view or block.view in self.window:
            return None, committed
        report, lock_ok = self.check_proposal(block)
        if not (report.accepted and lock_ok):
            self.rejections.append((block.view, block.digest, report, lock_ok))
            return None, committed
        if block.qc.view >= self.lock.view:
            self.lock = block.qc
            self.lock_history.append(block.qc)
        vote = self._vote_share(block)
        self.window[block.view] = vote
        return vote, committed

    # -- commit -----------------------------------------------------------
    def compute_commits(self, qc: QuorumCertificate) -> list[Block]:
        child = self.store.get(qc.block_digest)
        if child is None or child.qc is None or child.qc.view != child.view - 1:
            return []
        target = self.store.get(child.qc.block_digest)
        if target is None or target.digest in self._committed_set():
            return []
        chain = ancestry(target, self.store)
        if chain[0].digest != self.genesis.digest:
            return []
        digests = [b.digest for b in chain]
        k = min(len(digests), len(self.ledger))
        if digests[:k] != self.ledger[:k]:
            pos = next(i for i in range(k) if digests[i] != self.ledger[i])
            msg = (f"replica {self.id}: commit of view {target.view} conflicts at position {pos} "
                   f"({self.ledger[pos].hex()[:8]} vs {digests[pos].hex()[:8]})")
            self.violations.append(msg)
            raise SafetyViolation(msg)
        new = chain[len(self.ledger):]
        self.ledger.extend(b.digest for b in new)
        self._committed = None
        return new

    def _committed_set(self):
        if getattr(self, "_committed", None) is None:
            self._committed = set(self.ledger)
        return self._committed
