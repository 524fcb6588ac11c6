import pytest
from hypothesis import given, settings, strategies as st

from carrytail.core import (
    AggregateSignature,
    Block,
    LeaderRotation,
    QuorumCertificate,
    Reason,
    UnknownDigest,
    ancestry,
    block_words,
    covered_views,
    decode,
    encode,
    extends,
    payload_words,
    render,
    validate_block,
)
from carrytail.replica import NewViewMessage

from forge import Forge


# -- extends ---------------------------------------------------------------

def test_extends_direct_qc_link():
    fz = Forge()
    b4, b5 = fz.chain([4, 5])
    assert extends(fz.store, b5.digest, b4.digest)
    assert not extends(fz.store, b4.digest, b5.digest)


def test_extends_is_reflexive():
    fz = Forge()
    (b,) = fz.chain([1])
    assert extends(fz.store, b.digest, b.digest)


def test_extends_through_reinstated_block():
    fz = Forge()
    b1, b2, b3 = fz.chain([1, 2, 3])
    t4 = fz.block(4, fz.qc(b3))
    b6 = fz.block(6, fz.qc(b3), reinstated=t4, certs=[fz.empty_cert(5)])
    assert extends(fz.store, b6.digest, t4.digest)
    assert extends(fz.store, b6.digest, b3.digest)
    assert extends(fz.store, b6.digest, b1.digest)
    assert [b.view for b in ancestry(b6, fz.store)] == [0, 1, 2, 3, 4, 6]


def test_extends_unknown_digest():
    fz = Forge()
    (b,) = fz.chain([1])
    with pytest.raises(UnknownDigest):
        extends(fz.store, b.digest, b"\x00" * 32)
    with pytest.raises(UnknownDigest):
        extends(fz.store, b"\x00" * 32, b.digest)


@st.composite
def block_trees(draw):
    """A random store: each new block extends the QC of an earlier one at a higher view."""
    fz = Forge(rho=1)
    blocks = [fz.genesis]
    for view in range(1, draw(st.integers(2, 9))):
        parent = draw(st.sampled_from(blocks))
        blocks.append(fz.block(view, fz.qc(parent) if parent.view else fz.genesis_qc, payload=bytes([view])))
    return fz, blocks


@settings(max_examples=60, deadline=None)
@given(block_trees())
def test_extends_is_a_partial_order(tree):
    fz, blocks = tree
    rel = {(a.digest, b.digest): extends(fz.store, a.digest, b.digest) for a in blocks for b in blocks}
    for a in blocks:
        assert rel[a.digest, a.digest]
        assert rel[a.digest, fz.genesis.digest]
        for b in blocks:
            if a is not b and rel[a.digest, b.digest]:
                assert not rel[b.digest, a.digest]
            for c in blocks:
                if rel[a.digest, b.digest] and rel[b.digest, c.digest]:
                    assert rel[a.digest, c.digest]


# -- validate_block ----------------------------------------------------------

def test_consecutive_views_accept():
    fz = Forge()
    b4 = fz.block(4, fz.genesis_qc)
    b5 = fz.block(5, fz.qc(b4))
    assert str(validate_block(b5, fz.config, fz.cluster)) == "Accept"


def _carry_setup():
    fz = Forge()
    b3 = fz.block(3, fz.genesis_qc, certs=[fz.empty_cert(1), fz.empty_cert(2)])
    return fz, b3, fz.qc(b3)


def test_reinstated_tail_with_empty_certs_accepts():
    fz, b3, qc3 = _carry_setup()
    t4 = fz.block(4, qc3)
    b7 = fz.block(7, qc3, reinstated=t4, certs=[fz.empty_cert(5), fz.empty_cert(6)])
    report = validate_block(b7, fz.config, fz.cluster)
    assert report.accepted, str(report)
    assert covered_views(b7) == [4, 5, 6]


def test_missing_empty_cert_reports_uncovered_view():
    fz, b3, qc3 = _carry_setup()
    b7 = fz.block(7, qc3, certs=[fz.empty_cert(4), fz.empty_cert(6)])
    report = validate_block(b7, fz.config, fz.cluster)
    assert str(report) == "Reject(UncoveredView(5))"


def test_beyond_rho_needs_no_justification():
    fz = Forge(rho=2)
    b4 = fz.block(4, fz.genesis_qc)
    assert validate_block(b4, fz.config, fz.cluster).accepted
    b2 = fz.block(2, fz.genesis_qc)
    assert validate_block(b2, fz.config, fz.cluster).has(Reason.UNCOVERED_VIEW, 1)


def test_bad_qc_and_bad_empty_cert():
    fz, b3, qc3 = _carry_setup()
    forged = QuorumCertificate(3, b3.digest, AggregateSignature(frozenset({0, 1}), qc3.aggregate.tag))
    report = validate_block(fz.block(4, forged), fz.config, fz.cluster)
    assert report.has(Reason.BAD_QC, 3)
    bad_cert = fz.empty_cert(4).__class__(4, AggregateSignature(frozenset({0, 1, 2}), b"\x00" * 32))
    report = validate_block(fz.block(5, qc3, certs=[bad_cert]), fz.config, fz.cluster)
    assert report.has(Reason.BAD_EMPTY_CERT, 4)


def test_reinstate_must_extend_the_qc():
    fz, b3, qc3 = _carry_setup()
    b1 = fz.block(1, fz.genesis_qc)
    t4 = fz.block(4, fz.qc(b1), certs=[fz.empty_cert(2), fz.empty_cert(3)])
    b6 = fz.block(6, qc3, reinstated=t4, certs=[fz.empty_cert(5)])
    assert validate_block(b6, fz.config, fz.cluster).has(Reason.REINSTATE_NOT_EXTENDING_QC, 4)


def test_nested_reinstated_chain():
    fz = Forge(rho=3)
    b1 = fz.block(1, fz.genesis_qc)
    qc1 = fz.qc(b1)
    t2 = fz.block(2, qc1)
    t3 = fz.block(3, qc1, reinstated=t2)
    b4 = fz.block(4, qc1, reinstated=t3)
    assert validate_block(b4, fz.config, fz.cluster).accepted
    assert covered_views(b4) == [2, 3]
    wide = Forge(rho=6)
    qc1 = wide.qc(wide.block(1, wide.genesis_qc))
    late = wide.block(5, qc1, reinstated=wide.block(6, qc1, certs=[wide.empty_cert(w) for w in range(2, 6)]))
    assert validate_block(late, wide.config, wide.cluster).has(Reason.REINSTATE_NOT_EXTENDING_QC, 6)


def test_duplicate_and_stray_coverage():
    fz, b3, qc3 = _carry_setup()
    dup = fz.block(6, qc3, certs=[fz.empty_cert(4), fz.empty_cert(4), fz.empty_cert(5)])
    assert validate_block(dup, fz.config, fz.cluster).has(Reason.DUPLICATE_COVERAGE, 4)
    stray = fz.block(5, qc3, certs=[fz.empty_cert(4), fz.empty_cert(9)])
    assert validate_block(stray, fz.config, fz.cluster).has(Reason.STRAY_COVERAGE, 9)


def test_equivocation_evidence_covers_a_view():
    fz, b3, qc3 = _carry_setup()
    a4 = fz.block(4, qc3, payload=b"a")
    c4 = fz.block(4, qc3, payload=b"c")
    pair = (fz.vote(0, a4), fz.vote(1, c4))
    b5 = fz.block(5, qc3, evidence=[pair])
    assert validate_block(b5, fz.config, fz.cluster).accepted
    assert covered_views(b5) == [4]


def test_evidence_needs_the_leaders_endorsement():
    fz, b3, qc3 = _carry_setup()
    honest = fz.block(4, qc3)
    fake = fz.block(4, qc3, payload=b"fake", proposer=4 % 4, signer=fz.signer(3))
    pair = (fz.vote(0, honest), fz.vote(1, fake))
    b5 = fz.block(5, qc3, evidence=[pair])
    assert validate_block(b5, fz.config, fz.cluster).has(Reason.BAD_EVIDENCE, 4)


def test_proposer_must_be_the_views_leader():
    fz = Forge()
    b = fz.block(1, fz.genesis_qc, proposer=2)
    assert validate_block(b, fz.config, fz.cluster).has(Reason.BAD_PROPOSER, 1)
    unsigned = Block(1, 1, b"x", fz.genesis_qc)
    assert validate_block(unsigned, fz.config, fz.cluster).has(Reason.BAD_PROPOSER, 1)


def test_baseline_rejects_carry_attachments():
    fz = Forge(variant="hotstuff2")
    b3 = fz.block(3, fz.genesis_qc)
    assert validate_block(b3, fz.config, fz.cluster).accepted
    b3c = fz.block(3, fz.genesis_qc, certs=[fz.empty_cert(1)])
    assert validate_block(b3c, fz.config, fz.cluster).has(Reason.BAD_STRUCTURE)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 6), st.sets(st.integers(1, 8)))
def test_accepted_blocks_cover_exactly_the_skipped_views(gap, cert_views):
    fz = Forge(rho=6)
    view = gap
    certs = [fz.empty_cert(w) for w in sorted(cert_views)]
    b = fz.block(view, fz.genesis_qc, certs=certs)
    accepted = validate_block(b, fz.config, fz.cluster).accepted
    assert accepted == (set(cert_views) == set(range(1, view)))
    if accepted:
        assert covered_views(b) == list(range(1, view))


# -- words, rotation, rendering ---------------------------------------------

def test_block_words():
    fz, b3, qc3 = _carry_setup()
    t4 = fz.block(4, qc3)
    b7 = fz.block(7, qc3, reinstated=t4, certs=[fz.empty_cert(5), fz.empty_cert(6)])
    assert block_words(t4) == 3
    assert block_words(b7) == 3 + 2 + 3
    assert payload_words(b7) == 2


def test_leader_rotation_kinds():
    assert [LeaderRotation(4).leader(v) for v in range(6)] == [0, 1, 2, 3, 0, 1]
    rot = LeaderRotation(4, "explicit", (0, 1, 2, 3, 3))
    assert [rot.leader(v) for v in range(6)] == [0, 1, 2, 3, 3, 0]
    seeded = LeaderRotation(4, "seeded-random", seed=9)
    assert [seeded.leader(v) for v in range(20)] == [seeded.leader(v) for v in range(20)]
    assert set(seeded.leader(v) for v in range(200)) == {0, 1, 2, 3}
    with pytest.raises(ValueError):
        LeaderRotation(4, "explicit", ())


def test_render_is_line_oriented():
    fz, b3, qc3 = _carry_setup()
    text = render(b3)
    assert text.splitlines()[0].startswith("BLOCK view=3 proposer=3")
    assert "EC view=1" in text and "QC view=0" in text


# -- codec --------------------------------------------------------------------

@st.composite
def blocks(draw):
    fz = Forge()
    qc = fz.genesis_qc
    reinstated = None
    if draw(st.booleans()):
        r = fz.block(2, qc, payload=draw(st.binary(max_size=20)), certs=[fz.empty_cert(1)])
        reinstated = r
    views = draw(st.sets(st.integers(1, 7), max_size=3))
    certs = [fz.empty_cert(w, voters=draw(st.sampled_from([(0, 1, 2), (1, 2, 3), (0, 1, 2, 3)]))) for w in sorted(views)]
    evidence = []
    if draw(st.booleans()):
        a, c = fz.block(8, qc, payload=b"a"), fz.block(8, qc, payload=b"c")
        evidence.append((fz.vote(0, a), fz.vote(2, c)))
    signed = draw(st.booleans())
    b = Block(9, 1, draw(st.binary(max_size=40)), qc, reinstated, tuple(certs), tuple(evidence))
    return b.with_signature(fz.signer(1)) if signed else b


@settings(max_examples=60, deadline=None)
@given(blocks())
def test_block_codec_roundtrip(b):
    out = decode(encode(b))
    assert out == b and out.digest == b.digest
    assert encode(out) == encode(b)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.booleans(), max_size=6))
def test_new_view_codec_roundtrip(kinds):
    fz = Forge()
    (b1,) = fz.chain([1])
    window = tuple(fz.vote(0, b1) if k else fz.empty(0, i) for i, k in enumerate(kinds))
    msg = NewViewMessage(0, 7, fz.qc(b1), window)
    assert decode(encode(msg)) == msg
    for item in (fz.qc(b1), fz.empty_cert(3), fz.vote(1, b1), fz.empty(2, 5)):
        assert decode(encode(item)) == item


def test_decode_rejects_trailing_and_truncated_bytes():
    fz = Forge()
    data = encode(fz.genesis)
    with pytest.raises(ValueError):
        decode(data + b"\x00")
    with pytest.raises(ValueError):
        decode(data[:-3])
