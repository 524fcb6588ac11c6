import pytest

from carrytail.adversary import Kind
from carrytail.core import ProtocolConfig, Variant
from carrytail.pacemaker import Mode
from carrytail.scenario import ConfigError, ScenarioConfig, load_scenario, preset, scenario_from_dict

DOC = """
views = 30
seed = 7

[protocol]
n = 7
f = 2
rho = 3
variant = "hotstuff2"

[network]
gst = 40
delta = 4
pre_gst = "adversary"

[pacemaker]
mode = "timeout"
base_timeout = 12

[adversary]
byzantine = [5, 6]
default = "silent"
voters = "withhold"

[adversary.view.5]
behavior = "tail-fork"
base = "conflict"

[adversary.view.8]
behavior = "straggle"
reach = [1, 2]
delay = 9

[adversary.hold]
4 = [0, 1]
"""


def test_load_full_scenario(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text(DOC)
    sc = load_scenario(p)
    assert sc.views == 30 and sc.seed == 7
    assert (sc.protocol.n, sc.protocol.f, sc.protocol.rho) == (7, 2, 3)
    assert sc.protocol.variant is Variant.HOTSTUFF2
    assert sc.network.gst == 40 and sc.network.delta == 4
    assert sc.pacemaker.mode is Mode.TIMEOUT and sc.pacemaker.base_timeout == 12
    adv = sc.adversary
    assert adv.byzantine == {5, 6} and adv.voters == "withhold"
    assert adv.default.kind is Kind.SILENT
    assert adv.behaviors[5].label() == "tail-fork/conflict"
    assert adv.behaviors[8].reach == (1, 2) and adv.behaviors[8].delay == 9
    assert adv.holds == {4: frozenset({0, 1})}


def test_explicit_rotation():
    sc = scenario_from_dict({"rotation": {"kind": "explicit", "schedule": [0, 0, 1, 2, 3]}})
    assert [sc.protocol.leader(v) for v in range(5)] == [0, 0, 1, 2, 3]


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"protocol": {"n": 4, "f": 1, "colour": "red"}},
    {"protocol": {"n": 5, "f": 1}},
    {"protocol": {"rho": 0}},
    {"views": 1},
    {"adversary": {"byzantine": [2, 3]}},
    {"adversary": {"byzantine": [3], "default": "teleport"}},
    {"network": {"delta": 0}},
    {"pacemaker": {"mode": "psychic"}},
])
def test_bad_documents_raise_config_error(doc):
    with pytest.raises(ConfigError):
        scenario_from_dict(doc)


def test_malformed_toml(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("views = = 3")
    with pytest.raises(ConfigError):
        load_scenario(p)


def test_presets():
    cfg = ProtocolConfig(7, 2)
    assert preset("honest", cfg).byzantine == frozenset()
    s = preset("tail-fork", cfg)
    assert s.byzantine == {5, 6} and s.default.kind is Kind.TAIL_FORK
    with pytest.raises(ConfigError):
        preset("straggle", cfg)
    with pytest.raises(ConfigError):
        preset("nonsense", cfg)


def test_with_protocol_keeps_other_fields():
    sc = ScenarioConfig(views=9, seed=4).with_protocol(rho=2)
    assert sc.protocol.rho == 2 and sc.views == 9 and sc.seed == 4
