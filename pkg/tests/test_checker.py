import json

import pytest

from carrytail.checker import (
    BEHAVIOR_MENU,
    Bounds,
    bounds_from_dict,
    bounds_to_dict,
    enumerate_traces,
    exhaustive_check,
    hold_menu,
    replay,
)
from carrytail.core import ProtocolConfig


def test_bounds_validation():
    with pytest.raises(ValueError):
        Bounds(views=2)
    with pytest.raises(ValueError):
        Bounds(views=4, pre_gst_views=4)
    with pytest.raises(ValueError):
        Bounds(behaviors=("teleport",))


def test_bounds_roundtrip_through_json():
    b = Bounds(views=5, rho=3, quorum=2)
    assert bounds_from_dict(json.loads(json.dumps(bounds_to_dict(b)))) == b


def test_hold_menu():
    assert hold_menu(1, ProtocolConfig(4, 1), {3}) == [(), (0,), (2,), (0, 2)]


def test_trace_count_is_the_product_of_the_menus():
    b = Bounds(views=5, pre_gst_views=1, behaviors=("honest", "silent"), voter_modes=("honest",))
    traces = list(enumerate_traces(b))
    # each replica leads one or two of views 1..5; view 1 has a hold menu of 4 (or 3 when
    # its leader's peers include the Byzantine one)
    expected = 0
    cfg = ProtocolConfig(4, 1)
    for byz in range(4):
        led = sum(cfg.leader(v) == byz for v in range(1, 6))
        expected += 2 ** led * len(hold_menu(1, cfg, {byz}))
    assert len(traces) == expected
    assert len({json.dumps(t, sort_keys=True) for t in traces}) == len(traces)


def test_small_exhaustive_check_is_clean():
    report = exhaustive_check(Bounds(views=5, pre_gst_views=1))
    assert report.exhausted and report.violations == []
    assert report.states_explored == len(list(enumerate_traces(Bounds(views=5, pre_gst_views=1))))
    assert report.commits_min >= 1


def test_canary_quorum_is_caught_and_replays():
    bounds = Bounds(views=6, quorum=2, stop_at_first=True, voter_modes=("withhold",))
    report = exhaustive_check(bounds)
    assert report.violations
    v = report.violations[0]
    assert any(name == v.invariant for name, _ in replay(bounds, v.trace))


def test_menu_covers_every_scripted_deviation():
    assert set(BEHAVIOR_MENU) >= {"honest", "silent", "tail-fork", "skip-forward", "skip-backward", "equivocate"}
