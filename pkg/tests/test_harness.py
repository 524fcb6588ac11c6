from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from carrytail.adversary import AdversaryScript, Behavior, Kind
from carrytail.core import ProtocolConfig
from carrytail.harness import (
    LinearityBreach,
    SweepRow,
    fork_fraction_sweep,
    is_isolated,
    neighbours,
    simulate,
    sweep_csv,
    word_audit,
    worst_case_placements,
)
from carrytail.scenario import ScenarioConfig
from carrytail.simnet import NetworkConfig


def test_neighbours_and_isolation_by_hand():
    cfg = ProtocolConfig(7, 2, rho=2)
    byz = {2, 3}
    # views 2 and 3 are Byzantine-led; tail at 1 sits between genesis side 0 and view 4
    assert neighbours(1, cfg, byz) == (0, 4)
    assert is_isolated(1, cfg, byz)
    assert not is_isolated(1, cfg, byz, rho=4)
    assert neighbours(5, cfg, byz) == (4, 6)
    assert not is_isolated(5, cfg, byz)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.data())
def test_isolation_matches_a_direct_count(f, data):
    n = 3 * f + 1
    byz = set(data.draw(st.sets(st.integers(0, n - 1), max_size=f)))
    rho = data.draw(st.integers(1, 6))
    cfg = ProtocolConfig(n, f, rho=rho)
    t = data.draw(st.integers(1, 3 * n))
    led = lambda v: v == 0 or v % n not in byz
    x = max(v for v in range(0, t) if led(v))
    y = min(v for v in range(t + 1, t + n + 2) if led(v))
    assert is_isolated(t, cfg, byz) == (y - x > rho)


@pytest.mark.parametrize("variant", ["carry", "hotstuff2"])
@pytest.mark.parametrize("kind", [Kind.HONEST, Kind.SILENT, Kind.TAIL_FORK, Kind.EQUIVOCATE])
def test_every_voted_honest_proposal_has_exactly_one_status(variant, kind):
    proto = ProtocolConfig(4, 1, 6, variant)
    sc = ScenarioConfig(protocol=proto, views=16, adversary=AdversaryScript({3}, default=Behavior(kind)),
                        network=NetworkConfig(gst=20))
    _, m = simulate(sc)
    assert m.honest_proposals == (m.committed_honest_proposals + m.forked_honest_tails
                                  + m.inflight_honest_proposals)
    assert m.forked_non_isolated_tails <= m.forked_honest_tails
    assert len(m.per_view_word_counts) == 16


def test_word_audit_on_a_fault_free_run():
    _, m = simulate(ScenarioConfig(views=20))
    audit = word_audit(m, ProtocolConfig(4, 1))
    assert audit.ok and audit.max_handover_words == 8 == audit.handover_bound


def test_word_audit_strict_reports_the_view_inventory():
    _, m = simulate(ScenarioConfig(views=10))
    m.per_view_word_counts[4] = 10_000
    assert not word_audit(m, ProtocolConfig(4, 1)).ok
    with pytest.raises(LinearityBreach) as exc:
        word_audit(m, ProtocolConfig(4, 1), messages={5: ["PROPOSAL x"]}, strict=True)
    assert exc.value.view == 5 and exc.value.inventory == ["PROPOSAL x"]


def test_worst_case_placements_are_consecutive_runs():
    assert worst_case_placements(7, 2) == [frozenset({k % 7, (k + 1) % 7}) for k in range(7)]


def test_rho_one_sweep_matches_a_hand_count():
    # n = 4, one Byzantine leader in every rotation.  With a one-view window the
    # honest tail right before it can never be carried, so in each rotation one
    # of the three quorum-voted honest proposals is forked.
    (row,) = fork_fraction_sweep([1], n=4)
    assert row.fraction == Fraction(1, 3)


def test_baseline_sweep_loses_one_tail_per_rotation():
    rows = fork_fraction_sweep([2, 4], n=4, variant="hotstuff2")
    assert [r.fraction for r in rows] == [Fraction(1, 3)] * 2


def test_sweep_csv_layout():
    row = SweepRow(3, "carry", Fraction(1, 12), 1, 12, (2, 3), "tail-fork")
    text = sweep_csv([row], seed=5)
    lines = text.splitlines()
    assert lines[0] == "# seed=5"
    assert lines[1].split(",")[:3] == ["rho", "variant", "fraction"]
    assert lines[2] == "3,carry,1/12,0.083333,1,12,2 3,tail-fork"
