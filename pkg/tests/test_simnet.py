import random

import pytest

from carrytail.adversary import AdversaryScript, Behavior
from carrytail.core import ProtocolConfig
from carrytail.harness import simulate
from carrytail.scenario import ScenarioConfig
from carrytail.simnet import (
    BoundViolation,
    Deadlock,
    Envelope,
    Network,
    NetworkConfig,
    PacemakerConfig,
    PreGstPolicy,
    Simulation,
    step,
)


def net(**kw):
    return Network(NetworkConfig(**kw), random.Random(0))


def env(send, frm=0, to=1):
    return Envelope(frm, to, "X", b"", send)


def test_post_gst_delivery_is_clamped():
    n = net(gst=0, delta=5)
    e = n.submit(env(100), requested=200)
    assert e.deliver_time == 105


def test_pre_gst_request_is_honoured():
    n = net(gst=50, delta=5)
    assert n.submit(env(10), requested=49).deliver_time == 49


def test_strict_mode_raises_on_bound_breach():
    n = Network(NetworkConfig(gst=0, delta=5), random.Random(0), strict=True)
    with pytest.raises(BoundViolation):
        n.submit(env(100), requested=106)
    with pytest.raises(BoundViolation):
        n.submit(env(100), requested=99)


def test_default_delays_respect_delta_after_gst():
    n = net(gst=0, delta=5)
    times = [n.submit(env(20, to=t)).deliver_time for t in (1, 2, 3, 3)]
    assert len(times) == 4 and all(20 < t <= 25 for t in times)


def test_self_send_takes_one_tick():
    n = net(gst=0, delta=5)
    assert n.submit(env(7, frm=2, to=2)).deliver_time == 8


def test_pre_gst_policies():
    rnd = net(gst=1000, delta=5, pre_gst_max=30)
    assert all(1 <= rnd.default_delay(0) <= 30 for _ in range(100))
    adv = net(gst=1000, delta=5, pre_gst_policy=PreGstPolicy.ADVERSARY)
    assert adv.default_delay(0) == 5


def test_clock_advances_to_the_earliest_delivery():
    n = net(gst=100)
    n.submit(env(0), requested=7)
    n.submit(env(0), requested=5)
    assert [e.deliver_time for e in n.pop_tick()] == [5]
    assert n.now == 5
    assert n.pending() == 1


def test_same_tick_deliveries_are_ordered_by_recipient_then_sender():
    n = net()
    for frm, to in [(3, 2), (1, 2), (0, 1), (2, 0)]:
        n.submit(Envelope(frm, to, "X", (frm, to), 0), requested=4)
    groups = step(n)
    assert groups == [(0, [(2, 0)]), (1, [(0, 1)]), (2, [(1, 2), (3, 2)])]


def test_network_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig(delta=0)
    with pytest.raises(ValueError):
        NetworkConfig(post_gst="slow")


def test_runs_are_deterministic_per_seed():
    sc = ScenarioConfig(views=12, seed=3, network=NetworkConfig(gst=30))
    a = simulate(sc)[1]
    b = simulate(sc)[1]
    c = simulate(sc.replace(seed=4))[1]
    assert a.trace_sha256 == b.trace_sha256 and a.to_json() == b.to_json()
    assert a.trace_sha256 != c.trace_sha256


def test_deadlock_when_tick_budget_runs_out():
    sim = Simulation(ProtocolConfig(4, 1), NetworkConfig(), PacemakerConfig(), views=10, max_ticks=15)
    with pytest.raises(Deadlock):
        sim.run()


def _proposals(sim):
    return [line for line in sim.state.trace if " PROPOSAL " in line]


def test_fault_free_runs_propose_identically_under_both_variants():
    carry = ScenarioConfig(views=15, seed=2)
    base = carry.with_protocol(variant="hotstuff2")
    s1, m1 = simulate(carry)
    s2, m2 = simulate(base)
    assert _proposals(s1) == _proposals(s2)
    assert m1.commits_total == m2.commits_total


def test_leader_proposes_once_per_view():
    sim, _ = simulate(ScenarioConfig(views=10))
    assert all(len(blocks) == 1 for blocks in sim.state.proposals.values())


def test_straggler_sends_late_outside_its_reach():
    script = AdversaryScript(behaviors={5: Behavior("straggle", reach=(1, 2))})
    sim, _ = simulate(ScenarioConfig(views=10, adversary=script))
    assert 5 in sim.state.stragglers
    sends = [line.split() for line in sim.state.trace if " PROPOSAL " in line and line.split()[1] == "1"]
    times = {int(p[2]): int(p[0]) for p in sends if int(p[0]) >= sim.state.view_start[5]
             and int(p[0]) < sim.state.view_start[6]}
    assert times.get(1, 0) < times.get(0, 10**9)
