"""Scenario descriptions: a dataclass, a TOML loader, and named adversary presets.

Example file::

    views = 30
    seed = 7

    [protocol]
    n = 4
    f = 1
    rho = 6
    variant = "carry"        # or "hotstuff2"

    [network]
    gst = 0
    delta = 5
    pre_gst = "random"       # or "adversary"
    pre_gst_max = 20

    [pacemaker]
    mode = "oracle"          # or "timeout"

    [rotation]
    kind = "round-robin"     # or "explicit" (with schedule = [...]) or "seeded-random"

    [adversary]
    byzantine = [3]
    default = "tail-fork"
    voters = "honest"        # or "withhold"

    [adversary.view.7]
    behavior = "skip-forward"
    target = 5

    [adversary.hold]         # proposals of a view held until GST, per recipient
    4 = [0, 1]
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .adversary import AdversaryScript, Behavior, Kind
from .core import LeaderRotation, ProtocolConfig, Variant
from .pacemaker import Mode as PacemakerMode
from .simnet import NetworkConfig, PacemakerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    protocol: ProtocolConfig = field(default_factory=lambda: ProtocolConfig(4, 1))
    network: NetworkConfig = field(default_factory=NetworkConfig)
    pacemaker: PacemakerConfig = field(default_factory=PacemakerConfig)
    views: int = 20
    adversary: AdversaryScript = field(default_factory=AdversaryScript)
    seed: int = 0
    quorum: int | None = None  # override of 2f+1; only the checker's canary uses it

    def __post_init__(self):
        if self.views < 3:
            raise ConfigError("views must be >= 3")
        try:
            self.adversary.validate(self.protocol)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> ScenarioConfig:
        return dataclasses.replace(self, **changes)

    def with_protocol(self, **changes) -> ScenarioConfig:
        return self.replace(protocol=dataclasses.replace(self.protocol, **changes))


# -- presets ----------------------------------------------------------------

def last_replicas(n, f):
    return frozenset(range(n - f, n))


def preset(name: str, config: ProtocolConfig) -> AdversaryScript:
    """Named scripts: ``honest``, ``silent``, ``tail-fork``, ``skip-forward``,
    ``skip-backward``, ``equivocate``; all make the last f replicas Byzantine."""
    if name == "honest":
        return AdversaryScript()
    try:
        kind = Kind(name)
    except ValueError:
        raise ConfigError(f"unknown adversary preset {name!r}") from None
    if kind is Kind.STRAGGLE:
        raise ConfigError("straggle binds specific views; describe it in a scenario file")
    return AdversaryScript(last_replicas(config.n, config.f), default=Behavior(kind))


# -- TOML -------------------------------------------------------------------

_TOP = {"views", "seed", "protocol", "network", "pacemaker", "rotation", "adversary"}


def _check_keys(section, table, allowed):
    extra = set(table) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")


def _behavior(table, where) -> Behavior:
    _check_keys(where, table, {"behavior", "target", "delay", "reach", "base", "split"})
    try:
        return Behavior(
            kind=table.get("behavior", "honest"),
            target=table.get("target"),
            delay=table.get("delay"),
            reach=tuple(table["reach"]) if "reach" in table else None,
            base=table.get("base", "parent"),
            split=tuple(table["split"]) if "split" in table else None,
        )
    except ValueError as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def _int_keys(table, where):
    try:
        return {int(k): frozenset(v) for k, v in table.items()}
    except (TypeError, ValueError):
        raise ConfigError(f"[{where}] maps view numbers to replica lists") from None


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    _check_keys("top level", doc, _TOP)
    try:
        p = doc.get("protocol", {})
        _check_keys("protocol", p, {"n", "f", "rho", "variant"})
        n = p.get("n", 4)
        f = p.get("f", (n - 1) // 3)
        rot = doc.get("rotation", {})
        _check_keys("rotation", rot, {"kind", "schedule", "seed"})
        rotation = LeaderRotation(n, rot.get("kind", "round-robin"), tuple(rot.get("schedule", ())),
                                  rot.get("seed", 0))
        protocol = ProtocolConfig(n, f, p.get("rho", 6), Variant(p.get("variant", "carry")), rotation)

        net = doc.get("network", {})
        _check_keys("network", net, {"gst", "delta", "pre_gst", "pre_gst_max", "post_gst"})
        network = NetworkConfig(net.get("gst", 0), net.get("delta", 5), net.get("pre_gst", "random"),
                                net.get("pre_gst_max", 20), net.get("post_gst", "random"))

        pm = doc.get("pacemaker", {})
        _check_keys("pacemaker", pm, {"mode", "base_timeout", "backoff"})
        pacemaker = PacemakerConfig(PacemakerMode(pm.get("mode", "oracle")), pm.get("base_timeout"),
                                    pm.get("backoff", 2))

        adv = doc.get("adversary", {})
        _check_keys("adversary", adv, {"byzantine", "default", "voters", "view", "hold", "hold_new_view"})
        behaviors = {int(v): _behavior(t, f"adversary.view.{v}") for v, t in adv.get("view", {}).items()}
        default = adv.get("default", "honest")
        default = _behavior(default, "adversary.default") if isinstance(default, dict) \
            else _behavior({"behavior": default}, "adversary")
        script = AdversaryScript(frozenset(adv.get("byzantine", ())), behaviors, default,
                                 adv.get("voters", "honest"), _int_keys(adv.get("hold", {}), "adversary.hold"),
                                 _int_keys(adv.get("hold_new_view", {}), "adversary.hold_new_view"))
        return ScenarioConfig(protocol, network, pacemaker, doc.get("views", 20), script, doc.get("seed", 0))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return scenario_from_dict(doc)
