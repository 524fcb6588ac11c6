"""Protocol data structures, the block-extension relation, and Carry validation."""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field

from .crypto import AggregateSignature, ClusterKeys, SignatureShare, digest as hash_bytes

GENESIS_VIEW = 0


class UnknownDigest(KeyError):
    pass


class Variant(str, enum.Enum):
    HOTSTUFF2 = "hotstuff2"
    CARRY = "carry"


# -- signed messages --------------------------------------------------------

def vote_message(view: int, block_digest: bytes) -> bytes:
    return b"VOTE" + struct.pack("<Q", view) + block_digest


def empty_message(view: int) -> bytes:
    return b"EMPT" + struct.pack("<Q", view)


def proposal_message(view: int, block_digest: bytes) -> bytes:
    return b"PROP" + struct.pack("<Q", view) + block_digest


# -- value types ------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class VoteShare:
    """A vote for ``block_digest`` in ``view``.

    ``endorsement`` is the proposer's signature on the voted block; two votes
    for different digests in one view, each with a valid endorsement, prove
    that the leader of that view equivocated.
    """

    voter: int
    view: int
    block_digest: bytes
    share: SignatureShare
    endorsement: SignatureShare


@dataclass(frozen=True, slots=True)
class EmptyShare:
    voter: int
    view: int
    share: SignatureShare


@dataclass(frozen=True, slots=True)
class QuorumCertificate:
    view: int
    block_digest: bytes
    aggregate: AggregateSignature

    @property
    def signers(self) -> frozenset[int]:
        return self.aggregate.signers

    def certifies(self, other: QuorumCertificate) -> bool:
        return self.view == other.view and self.block_digest == other.block_digest


@dataclass(frozen=True, slots=True)
class EmptyCertificate:
    view: int
    aggregate: AggregateSignature

    @property
    def signers(self) -> frozenset[int]:
        return self.aggregate.signers


Evidence = tuple  # (VoteShare, VoteShare)


@dataclass(frozen=True, eq=False)
class Block:
    view: int
    proposer: int
    payload: bytes
    qc: QuorumCertificate | None
    reinstated: Block | None = None
    empty_certs: tuple[EmptyCertificate, ...] = ()
    faulty_view_evidence: tuple[Evidence, ...] = ()
    signature: SignatureShare | None = None
    digest: bytes = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "digest", hash_bytes(encode_block_body(self)))

    def __eq__(self, other):
        return isinstance(other, Block) and self.digest == other.digest and self.signature == other.signature

    def __hash__(self):
        return hash(self.digest)

    def reinstated_chain(self) -> list[Block]:
        out, b = [], self.reinstated
        while b is not None:
            out.append(b)
            b = b.reinstated
        return out

    def with_signature(self, signer) -> Block:
        sig = signer.sign(proposal_message(self.view, self.digest))
        return Block(self.view, self.proposer, self.payload, self.qc, self.reinstated,
                     self.empty_certs, self.faulty_view_evidence, sig)

    def short(self) -> str:
        return self.digest.hex()[:8]


# -- leader rotation and protocol configuration ----------------------------

@dataclass(frozen=True)
class LeaderRotation:
    """Maps views to leaders: round-robin, an explicit cyclic schedule, or seeded random."""

    n: int
    kind: str = "round-robin"
    schedule: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("round-robin", "explicit", "seeded-random"):
            raise ValueError(f"unknown rotation kind {self.kind!r}")
        if self.kind == "explicit":
            if not self.schedule or any(not 0 <= r < self.n for r in self.schedule):
                raise ValueError("explicit rotation needs a non-empty schedule of replica ids")

    def leader(self, view: int) -> int:
        if self.kind == "round-robin":
            return view % self.n
        if self.kind == "explicit":
            return self.schedule[view % len(self.schedule)]
        h = hashlib.blake2b(struct.pack("<QQ", self.seed, view), digest_size=8).digest()
        return int.from_bytes(h, "little") % self.n


@dataclass(frozen=True)
class ProtocolConfig:
    n: int
    f: int
    rho: int = 6
    variant: Variant = Variant.CARRY
    rotation: LeaderRotation | None = None

    def __post_init__(self):
        if self.n != 3 * self.f + 1:
            raise ValueError(f"n={self.n} must equal 3f+1 (f={self.f})")
        if self.rho < 1:
            raise ValueError("rho must be >= 1")
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.rotation is None:
            object.__setattr__(self, "rotation", LeaderRotation(self.n))

    def leader(self, view: int) -> int:
        return self.rotation.leader(view)

    @property
    def carry(self) -> bool:
        return self.variant is Variant.CARRY


# -- genesis ----------------------------------------------------------------

def make_genesis(cluster: ClusterKeys) -> tuple[Block, QuorumCertificate]:
    """The view-0 block and its QC signed by every replica at setup."""
    block = Block(GENESIS_VIEW, 0, b"genesis", None).with_signature(cluster.signer(0))
    msg = vote_message(GENESIS_VIEW, block.digest)
    shares = [cluster.signer(r).sign(msg) for r in range(cluster.n)]
    agg = cluster.scheme.aggregate(shares, cluster.n)
    return block, QuorumCertificate(GENESIS_VIEW, block.digest, agg)


# -- extension relation -----------------------------------------------------

def parents(block: Block, store) -> list[Block]:
    out = []
    if block.reinstated is not None:
        out.append(block.reinstated)
    if block.qc is not None and block.qc.view != block.view:
        p = store.get(block.qc.block_digest)
        if p is not None:
            out.append(p)
    return out


def extends(store, descendant: bytes, ancestor: bytes) -> bool:
    """``descendant ⪰ ancestor`` following qc links and reinstated embeddings."""
    if descendant not in store:
        raise UnknownDigest(descendant.hex())
    if ancestor not in store:
        raise UnknownDigest(ancestor.hex())
    target_view = store[ancestor].view
    seen = set()
    stack = [store[descendant]]
    while stack:
        b = stack.pop()
        if b.digest == ancestor:
            return True
        if b.digest in seen or b.view <= target_view:
            continue
        seen.add(b.digest)
        stack.extend(parents(b, store))
    return False


def ancestry(block: Block, store) -> list[Block]:
    """All known ancestors of ``block`` (inclusive), ordered by view ascending."""
    found = {}
    stack = [block]
    while stack:
        b = stack.pop()
        if b.digest in found:
            continue
        found[b.digest] = b
        stack.extend(parents(b, store))
    return sorted(found.values(), key=lambda b: b.view)


# -- validation -------------------------------------------------------------

class Reason(str, enum.Enum):
    BAD_QC = "BadQC"
    BAD_EMPTY_CERT = "BadEmptyCert"
    UNCOVERED_VIEW = "UncoveredView"
    REINSTATE_NOT_EXTENDING_QC = "ReinstateNotExtendingQC"
    DEPTH_EXCEEDED = "DepthExceeded"
    DUPLICATE_COVERAGE = "DuplicateCoverage"
    STRAY_COVERAGE = "StrayCoverage"
    BAD_EVIDENCE = "BadEvidence"
    BAD_PROPOSER = "BadProposer"
    BAD_STRUCTURE = "BadStructure"


@dataclass
class ValidationReport:
    failures: list[tuple[Reason, int | None]] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return not self.failures

    def fail(self, reason: Reason, view: int | None = None):
        self.failures.append((reason, view))

    def has(self, reason: Reason, view: int | None = None) -> bool:
        return any(r == reason and (view is None or v == view) for r, v in self.failures)

    def __str__(self):
        if self.accepted:
            return "Accept"
        return "Reject(" + ", ".join(r.value if v is None else f"{r.value}({v})" for r, v in self.failures) + ")"


def verify_qc(qc: QuorumCertificate, cluster: ClusterKeys) -> bool:
    return cluster.verify_aggregate(qc.aggregate, vote_message(qc.view, qc.block_digest))


def verify_empty_cert(cert: EmptyCertificate, cluster: ClusterKeys) -> bool:
    return cluster.verify_aggregate(cert.aggregate, empty_message(cert.view))


def verify_vote(vote: VoteShare, cluster: ClusterKeys) -> bool:
    return cluster.verify(vote.share, vote_message(vote.view, vote.block_digest), vote.voter)


def verify_endorsement(vote: VoteShare, config: ProtocolConfig, cluster: ClusterKeys) -> bool:
    return cluster.verify(vote.endorsement, proposal_message(vote.view, vote.block_digest),
                          config.leader(vote.view))


def verify_empty_share(share: EmptyShare, cluster: ClusterKeys) -> bool:
    return cluster.verify(share.share, empty_message(share.view), share.voter)


def verify_evidence(pair, config: ProtocolConfig, cluster: ClusterKeys) -> bool:
    a, b = pair
    return (a.view == b.view and a.block_digest != b.block_digest
            and all(verify_vote(x, cluster) and verify_endorsement(x, config, cluster) for x in (a, b)))


def verify_proposer(block: Block, config: ProtocolConfig, cluster: ClusterKeys) -> bool:
    return (block.signature is not None and block.proposer == config.leader(block.view)
            and cluster.verify(block.signature, proposal_message(block.view, block.digest), block.proposer))


def _check_attachments(block, config, cluster, report):
    for cert in block.empty_certs:
        if not verify_empty_cert(cert, cluster):
            report.fail(Reason.BAD_EMPTY_CERT, cert.view)
    for pair in block.faulty_view_evidence:
        if not verify_evidence(pair, config, cluster):
            report.fail(Reason.BAD_EVIDENCE, pair[0].view)


def _check_coverage(block, base_view, config, cluster, report, depth):
    low = base_view
    r = block.reinstated
    if r is not None:
        if depth >= config.rho:
            report.fail(Reason.DEPTH_EXCEEDED, r.view)
            return
        if r.qc is None or block.qc is None or not r.qc.certifies(block.qc) or not base_view < r.view < block.view:
            report.fail(Reason.REINSTATE_NOT_EXTENDING_QC, r.view)
            return
        if not verify_proposer(r, config, cluster):
            report.fail(Reason.BAD_PROPOSER, r.view)
        _check_attachments(r, config, cluster, report)
        _check_coverage(r, base_view, config, cluster, report, depth + 1)
        low = r.view
    own = [c.view for c in block.empty_certs] + [p[0].view for p in block.faulty_view_evidence]
    for w in range(low + 1, block.view):
        k = own.count(w)
        if k == 0:
            report.fail(Reason.UNCOVERED_VIEW, w)
        elif k > 1:
            report.fail(Reason.DUPLICATE_COVERAGE, w)
    for w in sorted(set(own)):
        if not low < w < block.view:
            report.fail(Reason.STRAY_COVERAGE, w)


def validate_block(block: Block, config: ProtocolConfig, cluster: ClusterKeys) -> ValidationReport:
    """Check a proposal against its QC, its signature and, for the carry variant, skipped-view coverage."""
    report = ValidationReport()
    if block.qc is None or block.qc.view >= block.view:
        report.fail(Reason.BAD_STRUCTURE, block.view)
        return report
    if not config.carry and (block.reinstated is not None or block.empty_certs or block.faulty_view_evidence):
        report.fail(Reason.BAD_STRUCTURE, block.view)
        return report
    if not verify_qc(block.qc, cluster):
        report.fail(Reason.BAD_QC, block.qc.view)
    if not verify_proposer(block, config, cluster):
        report.fail(Reason.BAD_PROPOSER, block.view)
    _check_attachments(block, config, cluster, report)
    if config.carry and block.view - block.qc.view <= config.rho:
        _check_coverage(block, block.qc.view, config, cluster, report, 0)
    return report


def covered_views(block: Block) -> list[int]:
    """Multiset of views justified by ``block`` and its reinstated chain."""
    views = []
    b = block
    while b is not None:
        if b is not block:
            views.append(b.view)
        views.extend(c.view for c in b.empty_certs)
        views.extend(p[0].view for p in b.faulty_view_evidence)
        b = b.reinstated
    return sorted(views)


# -- word accounting --------------------------------------------------------

WORD_BYTES = 8


def payload_words(block: Block) -> int:
    total = -(-len(block.payload) // WORD_BYTES)
    if block.reinstated is not None:
        total += payload_words(block.reinstated)
    return total


def block_words(block: Block) -> int:
    """Protocol words of a block, payload excluded.

    view + signature = 2, QC = 1, each empty certificate = 1, each evidence
    pair = 2, plus the embedded reinstated block recursively.
    """
    words = 2 + 1 + len(block.empty_certs) + 2 * len(block.faulty_view_evidence)
    if block.reinstated is not None:
        words += block_words(block.reinstated)
    return words


# -- canonical serialization ------------------------------------------------

class _Writer:
    def __init__(self):
        self.parts = []

    def u8(self, x):
        self.parts.append(struct.pack("<B", x))

    def u32(self, x):
        self.parts.append(struct.pack("<I", x))

    def u64(self, x):
        self.parts.append(struct.pack("<Q", x))

    def raw(self, b: bytes):
        self.u32(len(b))
        self.parts.append(b)

    def getvalue(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def _take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ValueError("truncated input")
        (x,) = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return x

    def u8(self):
        return self._take("<B")

    def u32(self):
        return self._take("<I")

    def u64(self):
        return self._take("<Q")

    def raw(self):
        n = self.u32()
        if self.pos + n > len(self.data):
            raise ValueError("truncated input")
        b = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return b


def _w_share(w, s: SignatureShare):
    w.u32(s.signer)
    w.raw(s.tag)


def _r_share(r) -> SignatureShare:
    return SignatureShare(r.u32(), r.raw())


def _w_agg(w, a: AggregateSignature):
    w.u32(len(a.signers))
    for s in sorted(a.signers):
        w.u32(s)
    w.raw(a.tag)


def _r_agg(r) -> AggregateSignature:
    signers = frozenset(r.u32() for _ in range(r.u32()))
    return AggregateSignature(signers, r.raw())


def _w_vote(w, v: VoteShare):
    w.u32(v.voter)
    w.u64(v.view)
    w.raw(v.block_digest)
    _w_share(w, v.share)
    _w_share(w, v.endorsement)


def _r_vote(r) -> VoteShare:
    return VoteShare(r.u32(), r.u64(), r.raw(), _r_share(r), _r_share(r))


def _w_empty(w, e: EmptyShare):
    w.u32(e.voter)
    w.u64(e.view)
    _w_share(w, e.share)


def _r_empty(r) -> EmptyShare:
    return EmptyShare(r.u32(), r.u64(), _r_share(r))


def _w_qc(w, qc: QuorumCertificate):
    w.u64(qc.view)
    w.raw(qc.block_digest)
    _w_agg(w, qc.aggregate)


def _r_qc(r) -> QuorumCertificate:
    return QuorumCertificate(r.u64(), r.raw(), _r_agg(r))


def _w_cert(w, c: EmptyCertificate):
    w.u64(c.view)
    _w_agg(w, c.aggregate)


def _r_cert(r) -> EmptyCertificate:
    return EmptyCertificate(r.u64(), _r_agg(r))


def _w_block(w, b: Block, with_signature=True):
    w.u64(b.view)
    w.u32(b.proposer)
    w.raw(b.payload)
    w.u8(b.qc is not None)
    if b.qc is not None:
        _w_qc(w, b.qc)
    w.u8(b.reinstated is not None)
    if b.reinstated is not None:
        _w_block(w, b.reinstated)
    w.u32(len(b.empty_certs))
    for c in b.empty_certs:
        _w_cert(w, c)
    w.u32(len(b.faulty_view_evidence))
    for a, c in b.faulty_view_evidence:
        _w_vote(w, a)
        _w_vote(w, c)
    if with_signature:
        w.u8(b.signature is not None)
        if b.signature is not None:
            _w_share(w, b.signature)


def _r_block(r) -> Block:
    view, proposer, payload = r.u64(), r.u32(), r.raw()
    qc = _r_qc(r) if r.u8() else None
    reinstated = _r_block(r) if r.u8() else None
    certs = tuple(_r_cert(r) for _ in range(r.u32()))
    evidence = tuple((_r_vote(r), _r_vote(r)) for _ in range(r.u32()))
    sig = _r_share(r) if r.u8() else None
    return Block(view, proposer, payload, qc, reinstated, certs, evidence, sig)


def encode_block_body(b: Block) -> bytes:
    w = _Writer()
    _w_block(w, b, with_signature=False)
    return w.getvalue()


_TAGS = {
    SignatureShare: (1, _w_share, _r_share),
    AggregateSignature: (2, _w_agg, _r_agg),
    VoteShare: (3, _w_vote, _r_vote),
    EmptyShare: (4, _w_empty, _r_empty),
    QuorumCertificate: (5, _w_qc, _r_qc),
    EmptyCertificate: (6, _w_cert, _r_cert),
    Block: (7, _w_block, _r_block),
}
_BY_TAG = {tag: (cls, rd) for cls, (tag, _, rd) in _TAGS.items()}


def register_codec(cls, tag, writer, reader):
    _TAGS[cls] = (tag, writer, reader)
    _BY_TAG[tag] = (cls, reader)


def encode(obj) -> bytes:
    """Canonical bytes: a one-byte type tag followed by fixed-order little-endian fields."""
    tag, wr, _ = _TAGS[type(obj)]
    w = _Writer()
    w.u8(tag)
    wr(w, obj)
    return w.getvalue()


def decode(data: bytes):
    r = _Reader(data)
    _, rd = _BY_TAG[r.u8()]
    obj = rd(r)
    if r.pos != len(r.data):
        raise ValueError("trailing bytes")
    return obj


# -- debug rendering --------------------------------------------------------

def render(obj, indent: int = 0) -> str:
    """Stable, line-oriented text for blocks and certificates."""
    pad = "  " * indent
    if isinstance(obj, QuorumCertificate):
        return f"{pad}QC view={obj.view} block={obj.block_digest.hex()[:8]} signers={sorted(obj.signers)}"
    if isinstance(obj, EmptyCertificate):
        return f"{pad}EC view={obj.view} signers={sorted(obj.signers)}"
    if isinstance(obj, VoteShare):
        return f"{pad}VOTE view={obj.view} voter={obj.voter} block={obj.block_digest.hex()[:8]}"
    if isinstance(obj, EmptyShare):
        return f"{pad}EMPTY view={obj.view} voter={obj.voter}"
    if isinstance(obj, Block):
        lines = [f"{pad}BLOCK view={obj.view} proposer={obj.proposer} digest={obj.short()} "
                 f"payload={len(obj.payload)}B"]
        if obj.qc is not None:
            lines.append(render(obj.qc, indent + 1))
        for c in obj.empty_certs:
            lines.append(render(c, indent + 1))
        for a, b in obj.faulty_view_evidence:
            lines.append(f"{pad}  FAULTY view={a.view}")
            lines.append(render(a, indent + 2))
            lines.append(render(b, indent + 2))
        if obj.reinstated is not None:
            lines.append(f"{pad}  REINSTATED")
            lines.append(render(obj.reinstated, indent + 2))
        return "\n".join(lines)
    raise TypeError(f"cannot render {type(obj).__name__}")
