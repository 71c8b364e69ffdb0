import itertools
import os
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List

import yaml

from scripts.pta import PtaMode
from scripts.sim_core import Core, s
from scripts.utils import CoexSimError

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEFAULT_CONFIG_PATH = os.path.join(REPO_ROOT, "config.yaml")

BACKENDS = ("pta", "seci", "combo_sharedmem")
TRAFFIC_CLASSES = ("idle", "indication", "notification")
HID_INTERVALS_MS = (12.5, 15, 30)
DEVICE_ROLES = ("beacon", "audio_stream", "hid_keyboard", "ble_peripheral",
                "scanner", "access_point", "station_load", "ping_client")

# attack kind -> (backend, attacker core)
ATTACK_KINDS = {
    "grant_reject_dos": ("seci", Core.WIFI),
    "keystroke_sniff": ("seci", Core.WIFI),
    "priority_flood_dos": ("pta", Core.BLUETOOTH),
    "ble_beacon_dos": ("pta", Core.WIFI),
    "jitter_classify": ("pta", Core.WIFI),
    "grant_glitch_observe": ("pta", Core.BLUETOOTH),
    "sharedmem_exploit": ("combo_sharedmem", Core.BLUETOOTH),
}

PARAM_DEFAULTS = {
    "grant_reject_dos": {"attack_enabled": True, "attack_start_s": 1, "attack_length_s": 3,
                         "wifi_band_ghz": 2.4, "wifi_powersave": False},
    "priority_flood_dos": {"attack_enabled": True, "mode": "BALANCED", "use_priority": True,
                           "attack_start_s": 1, "attack_length_s": 2},
    "ble_beacon_dos": {"attack_enabled": True, "deny_at_s": 1, "deny_length_s": 0.5},
    "keystroke_sniff": {"attack_enabled": True, "hid_interval_ms": 30, "presses": 20, "start_ms": 50},
    "jitter_classify": {"attack_enabled": True, "traffic": "all", "n_samples": 500, "spread": 1.0,
                        "anchor": "known", "block_size": 50},
    "grant_glitch_observe": {"attack_enabled": True, "mode": "WLAN_HIGH", "load_mbps": 7,
                             "glitch_enabled": True, "load_start_s": 0.5},
    "sharedmem_exploit": {"attack_enabled": True, "associated": True, "chip": "BCM4375B1",
                          "wifi_powered": True, "attempt_readout": False, "verify_writes": False},
}


class ConfigError(CoexSimError):
    def __init__(self, field_name, message, line=None, source=None):
        self.field = field_name
        self.message = message
        self.line = line
        self.source = source
        super().__init__(self.render())

    def render(self):
        return f"ERROR: {self.source or '<config>'}:{self.line or 1}: {self.field}: {self.message}"


def load_config(config_path=DEFAULT_CONFIG_PATH):
    configs = dict(os.environ)
    with open(config_path, "r") as file:
        yaml_data = yaml.safe_load(file)
    configs.update(yaml_data)
    return configs


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _non_negative(value):
    return None if _is_number(value) and value >= 0 else "expected a non-negative number"


def _positive(value):
    return None if _is_number(value) and value > 0 else "expected a positive number"


def _boolean(value):
    return None if isinstance(value, bool) else "expected true or false"


def _count(value):
    return None if isinstance(value, int) and not isinstance(value, bool) and value >= 0 else "expected a non-negative integer"


def _optional(check):
    return lambda value: None if value is None else check(value)


def _one_of(choices):
    return lambda value: None if value in choices else f"expected one of {', '.join(str(c) for c in choices)}"


def _probability(value):
    return None if _is_number(value) and 0 <= value <= 1 else "expected a probability in [0, 1]"


def _time_list(value):
    if not isinstance(value, list) or not all(_is_number(v) and v > 0 for v in value):
        return "expected a list of positive times"
    if not all(float(v).is_integer() for v in value):
        return "press times must be whole milliseconds"
    if any(b <= a for a, b in zip(value, value[1:])):
        return "press times must be strictly increasing"
    return None


def _address_list(value):
    if not isinstance(value, list) or not all(isinstance(v, int) and v >= 0 for v in value):
        return "expected a list of addresses"
    return None


_MODE_NAMES = tuple(mode.value for mode in PtaMode)

PARAM_CHECKS = {
    "grant_reject_dos": {
        "attack_enabled": _boolean, "attack_start_s": _non_negative, "attack_length_s": _non_negative,
        "supervision_timeout_s": _positive, "wifi_band_ghz": _one_of((2.4, 5)), "wifi_powersave": _boolean,
    },
    "priority_flood_dos": {
        "attack_enabled": _boolean, "mode": _one_of(_MODE_NAMES), "use_priority": _boolean,
        "attack_start_s": _non_negative, "attack_length_s": _non_negative,
    },
    "ble_beacon_dos": {
        "attack_enabled": _boolean, "deny_at_s": _non_negative, "deny_length_s": _optional(_non_negative),
    },
    "keystroke_sniff": {
        "attack_enabled": _boolean, "hid_interval_ms": _one_of(HID_INTERVALS_MS), "presses": _count,
        "press_times_ms": _time_list, "start_ms": _positive,
    },
    "jitter_classify": {
        "attack_enabled": _boolean, "traffic": _one_of(TRAFFIC_CLASSES + ("all",)), "n_samples": _count,
        "spread": _positive, "anchor": _one_of(("known", "estimate")), "block_size": _count,
    },
    "grant_glitch_observe": {
        "attack_enabled": _boolean, "mode": _one_of(_MODE_NAMES), "load_mbps": _non_negative,
        "glitch_enabled": _boolean, "load_start_s": _non_negative,
    },
    "sharedmem_exploit": {
        "attack_enabled": _boolean, "associated": _boolean, "chip": lambda v: None if isinstance(v, str) else "expected a chip name",
        "executable": _address_list, "wifi_powered": _boolean, "ssid": lambda v: None if isinstance(v, str) else "expected a string",
        "passphrase": lambda v: None if isinstance(v, str) else "expected a string", "p_unstable": _probability,
        "finder_budget": _count, "attempt_readout": _boolean, "verify_writes": _boolean,
    },
}

DEVICE_CHECKS = {
    "id": lambda v: None if isinstance(v, str) and v else "expected a device id",
    "role": _one_of(DEVICE_ROLES),
    "channel": lambda v: None if isinstance(v, int) and not isinstance(v, bool) and 1 <= v <= 11 else "expected a Wi-Fi channel 1-11",
    "bandwidth_mhz": _one_of((20, 40)),
    "offered_load_mbps": _non_negative,
    "hid_interval_ms": _one_of(HID_INTERVALS_MS),
    "supervision_timeout_s": _positive,
    "adv_interval_ms": _positive,
}


@dataclass
class ScenarioConfig:
    seed: int
    duration_ns: int
    backend: str
    attack_kind: str
    attacker_core: Core
    params: Dict[str, Any] = field(default_factory=dict)
    devices: List[Dict[str, Any]] = field(default_factory=list)
    source: str = "<config>"
    overrides: Dict[str, Any] = field(default_factory=dict)

    def device(self, role):
        for entry in self.devices:
            if entry.get("role") == role:
                return entry
        return {}


_DURATION_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*(ns|us|ms|s|min)?\s*$")
_UNIT_NS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": 1_000_000_000, "min": 60_000_000_000}


def parse_duration(value):
    """Seconds as a number, or a string with an ns/us/ms/s/min suffix. Returns ns."""
    if _is_number(value):
        if value <= 0:
            raise ValueError("duration must be positive")
        return s(value)
    match = _DURATION_RE.match(str(value))
    if not match:
        raise ValueError(f"cannot parse duration {value!r}")
    ns = int(round(float(match.group(1)) * _UNIT_NS[match.group(2) or "s"]))
    if ns <= 0:
        raise ValueError("duration must be positive")
    return ns


def _node_line(node, path):
    """1-based line of the YAML node at a dotted path, or of its closest existing parent."""
    line = node.start_mark.line + 1 if node is not None else 1
    for key in path:
        if isinstance(node, yaml.MappingNode):
            match = next((v for k, v in node.value if k.value == str(key)), None)
            key_node = next((k for k, v in node.value if k.value == str(key)), None)
            if match is None:
                return line
            line = key_node.start_mark.line + 1
            node = match
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def apply_override(document, dotted_key, value):
    parts = dotted_key.split(".")
    target = document
    for part in parts[:-1]:
        if not isinstance(target.get(part), dict):
            target[part] = {}
        target = target[part]
    target[parts[-1]] = value


def load_scenario(path, overrides=None, configs=None):
    try:
        with open(path, "r") as file:
            text = file.read()
    except OSError as e:
        raise ConfigError("scenario", f"cannot read file ({e.strerror})", 1, path)
    try:
        root = yaml.compose(text)
        document = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError("scenario", f"malformed YAML ({getattr(e, 'problem', e)})",
                          mark.line + 1 if mark else 1, path)
    if not isinstance(document, dict):
        raise ConfigError("scenario", "expected a mapping at top level", 1, path)
    for key, value in (overrides or {}).items():
        apply_override(document, key, value)

    def fail(field_path, message):
        keys = [int(k) if k.isdigit() else k for k in field_path.split(".")]
        raise ConfigError(field_path, message, _node_line(root, keys), path)

    for required in ("seed", "duration_s", "backend"):
        if required not in document:
            fail(required, "missing required field")

    seed = document["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        fail("seed", "expected an unsigned 64-bit integer")

    try:
        duration_ns = parse_duration(document["duration_s"])
    except ValueError as e:
        fail("duration_s", str(e))

    backend = document.get("backend")
    if backend not in BACKENDS:
        fail("backend", f"expected one of {', '.join(BACKENDS)}")

    attack = document.get("attack")
    if not isinstance(attack, dict):
        fail("attack", "missing attack section")
    kind = attack.get("kind")
    if kind not in ATTACK_KINDS:
        fail("attack.kind", f"unknown attack kind {kind!r}")
    expected_backend, core = ATTACK_KINDS[kind]
    if backend != expected_backend:
        fail("backend", f"attack {kind} requires backend {expected_backend}")
    attacker_core = attack.get("attacker_core", core.value)
    if attacker_core != core.value:
        fail("attack.attacker_core", f"attack {kind} runs on the {core.value} core")

    params = attack.get("params") or {}
    if not isinstance(params, dict):
        fail("attack.params", "expected a mapping")
    checks = PARAM_CHECKS[kind]
    for name, value in params.items():
        if name not in checks:
            fail(f"attack.params.{name}", f"unknown parameter for {kind}")
        problem = checks[name](value)
        if problem:
            fail(f"attack.params.{name}", problem)
    merged = {**PARAM_DEFAULTS[kind], **params}
    if kind == "priority_flood_dos":
        if s(merged["attack_start_s"]) >= duration_ns:
            fail("attack.params.attack_start_s", "the attack must start before the run ends")
        if merged["attack_length_s"] <= 0:
            fail("attack.params.attack_length_s", "the attack window must not be empty")
    if kind == "jitter_classify" and not 0 < merged["block_size"] <= merged["n_samples"]:
        fail("attack.params.n_samples", f"n_samples must hold at least one block of {merged['block_size']}")
    if kind == "sharedmem_exploit" and merged.get("executable") is None:
        chips = (configs or load_config())["CHIPS"]
        if merged["chip"] not in chips:
            fail("attack.params.chip", f"unknown chip {merged['chip']!r}, expected one of {', '.join(chips)}")

    devices = document.get("devices") or []
    if not isinstance(devices, list):
        fail("devices", "expected a list")
    seen = set()
    for index, entry in enumerate(devices):
        if not isinstance(entry, dict):
            fail(f"devices.{index}", "expected a mapping")
        for name in ("id", "role"):
            if name not in entry:
                fail(f"devices.{index}", f"missing {name}")
        for name, value in entry.items():
            if name not in DEVICE_CHECKS:
                fail(f"devices.{index}.{name}", "unknown device field")
            problem = DEVICE_CHECKS[name](value)
            if problem:
                fail(f"devices.{index}.{name}", problem)
        if entry["id"] in seen:
            fail(f"devices.{index}.id", f"duplicate device id {entry['id']}")
        seen.add(entry["id"])

    return ScenarioConfig(seed=seed, duration_ns=duration_ns, backend=backend, attack_kind=kind,
                          attacker_core=core, params=dict(params), devices=list(devices),
                          source=str(path), overrides=dict(overrides or {}))


def load_matrix(path):
    try:
        with open(path, "r") as file:
            document = yaml.safe_load(file.read()) or {}
    except OSError as e:
        raise ConfigError("matrix", f"cannot read file ({e.strerror})", 1, path)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError("matrix", "malformed YAML", mark.line + 1 if mark else 1, path)
    if not isinstance(document, dict):
        raise ConfigError("matrix", "expected a mapping of dotted keys to value lists", 1, path)
    keys = list(document.keys())
    for key in keys:
        if not isinstance(document[key], list):
            raise ConfigError(key, "expected a list of values", 1, path)
    if not keys:
        return keys, []
    cells = [dict(zip(keys, values)) for values in itertools.product(*(document[k] for k in keys))]
    return keys, cells
