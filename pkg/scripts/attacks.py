from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List

import numpy as np

from scripts.analysis import (REFERENCE_STATS, DosClass, OffsetGenerator, TooFewSamples, classify_traffic,
                              compute_slot_offsets, detect_dos, estimate_slot_anchor, match_keystrokes,
                              offset_stats, reconstruct_keystrokes, traffic_series)
from scripts.config import PARAM_DEFAULTS, TRAFFIC_CLASSES, ScenarioConfig, load_config
from scripts.core_controller import BluetoothCoreController, WifiCoreController
from scripts.devices import (AudioStream, Beacon, BlePeripheral, BtDeviceProfile, HidKeyboard, KeystrokeScript,
                             LinkState, LoadStation, MacParams, PingStation, WifiCoexAgent, WifiDeviceProfile)
from scripts.medium import Medium
from scripts.pta import PtaConfig, PtaController, PtaMode, inject_grant_glitch
from scripts.report import AttackReport, Verdict, write_report
from scripts.seci import SeciLink, SeciLinkConfig
from scripts.sharedmem import (CANONICAL_TARGET, PROBE_LEN, WIFI_RAM_BASE, AbortedByBtCrash, BranchProbe,
                               ChipConfig, ComboChip, bt_readout, export_crash_log, extract_secrets,
                               find_executable_regions, plant_probe)
from scripts.sim_core import SLOT_NS, Core, Engine, TraceRecorder, align_up, ms, s, us
from scripts.utils import PreconditionError, append_log, print_with_color, to_hex


class AttackKind(str, Enum):
    GRANT_REJECT_DOS = "grant_reject_dos"
    PRIORITY_FLOOD_DOS = "priority_flood_dos"
    BLE_BEACON_DOS = "ble_beacon_dos"
    KEYSTROKE_SNIFF = "keystroke_sniff"
    JITTER_CLASSIFY = "jitter_classify"
    GRANT_GLITCH_OBSERVE = "grant_glitch_observe"
    SHAREDMEM_EXPLOIT = "sharedmem_exploit"


ATTACKER_CORES = {
    AttackKind.GRANT_REJECT_DOS: Core.WIFI,
    AttackKind.PRIORITY_FLOOD_DOS: Core.BLUETOOTH,
    AttackKind.BLE_BEACON_DOS: Core.WIFI,
    AttackKind.KEYSTROKE_SNIFF: Core.WIFI,
    AttackKind.JITTER_CLASSIFY: Core.WIFI,
    AttackKind.GRANT_GLITCH_OBSERVE: Core.BLUETOOTH,
    AttackKind.SHAREDMEM_EXPLOIT: Core.BLUETOOTH,
}

DEFAULT_PARAMS = {AttackKind(kind): defaults for kind, defaults in PARAM_DEFAULTS.items()}

DOS_BIN = ms(100)
RESTORED_GRANT_SPAN = s(120)
CLASSIFIER_TARGET_ACCURACY = 0.8


@dataclass
class AttackScenario:
    kind: AttackKind
    attacker_core: Core
    params: Dict[str, Any]
    duration: int
    seed: int
    devices: List[Dict[str, Any]] = field(default_factory=list)

    def __post_init__(self):
        self.kind = AttackKind(self.kind)
        self.attacker_core = Core(self.attacker_core)
        if ATTACKER_CORES[self.kind] != self.attacker_core:
            raise PreconditionError(f"{self.kind.value} runs on the {ATTACKER_CORES[self.kind].value} core")
        self.params = {**DEFAULT_PARAMS[self.kind], **(self.params or {})}

    @classmethod
    def from_config(cls, scenario: ScenarioConfig):
        return cls(kind=scenario.attack_kind, attacker_core=scenario.attacker_core, params=scenario.params,
                   duration=scenario.duration_ns, seed=scenario.seed, devices=scenario.devices)

    @property
    def enabled(self) -> bool:
        return bool(self.params.get("attack_enabled", True))

    def device(self, role) -> Dict[str, Any]:
        for entry in self.devices:
            if entry.get("role") == role:
                return entry
        return {}


def _mean(values):
    return float(np.mean(values)) if len(values) else None


def _count_in(times, start, end):
    return sum(1 for t in times if start <= t < end)


def _setup(scenario: AttackScenario, configs, engine):
    configs = configs if configs is not None else load_config()
    engine = engine if engine is not None else Engine(scenario.seed)
    return configs, engine


def run_grant_reject_dos(scenario: AttackScenario, configs=None, engine: Engine = None) -> AttackReport:
    configs, engine = _setup(scenario, configs, engine)
    params = scenario.params
    device = scenario.device("audio_stream")
    timeout_s = params.get("supervision_timeout_s", device.get("supervision_timeout_s", configs["SUPERVISION_TIMEOUT_S"]))
    profile = BtDeviceProfile(role="audio_stream", device_id=device.get("id", "headset"),
                              supervision_timeout=s(timeout_s),
                              keepalive_interval=ms(configs["KEEPALIVE_INTERVAL_MS"]),
                              audio_period=us(configs["AUDIO_PERIOD_US"]))
    seci = SeciLink(engine, SeciLinkConfig.from_config(configs))
    medium = Medium(engine)
    agent = WifiCoexAgent(engine, seci, active_24ghz=params["wifi_band_ghz"] == 2.4,
                          powersave=params["wifi_powersave"])
    attacker = WifiCoreController(engine, seci=seci, agent=agent)

    start = s(params["attack_start_s"])
    end = start + s(params["attack_length_s"])
    if scenario.enabled and end > start:
        engine.call_at(start, attacker.withhold_grants, True)
        engine.call_at(end, attacker.withhold_grants, False)
    audio = AudioStream(engine, profile, seci, agent, medium)
    audio.start()
    engine.run_until(scenario.duration)

    in_window = _count_in(audio.data_times, start, end)
    after = _count_in(audio.data_times, end, scenario.duration)
    metrics = {
        "data_frames_before": _count_in(audio.data_times, 0, start),
        "data_frames_in_window": in_window,
        "data_frames_after": after,
        "keepalives_in_window": _count_in(audio.keepalive_times, start, end),
        "link_state": audio.link_state,
        "timed_out_at_ns": audio.timed_out_at,
        "attack_window_ns": [start, end],
        "supervision_timeout_ns": profile.supervision_timeout,
    }
    if not scenario.enabled or end <= start or in_window > 0:
        verdict = Verdict.FAILED
    elif audio.link_state == LinkState.TIMED_OUT or after > 0:
        verdict = Verdict.SUCCESS
    else:
        verdict = Verdict.PARTIAL
    return AttackReport(kind=scenario.kind.value, verdict=verdict, metrics=metrics, seed=scenario.seed,
                        attacker_core=scenario.attacker_core.value)


def _access_point(scenario: AttackScenario) -> WifiDeviceProfile:
    device = scenario.device("access_point")
    return WifiDeviceProfile(role="access_point", device_id=device.get("id", "ap"), channel=device.get("channel", 6),
                             bandwidth_mhz=device.get("bandwidth_mhz", 20))


def run_priority_flood_dos(scenario: AttackScenario, configs=None, engine: Engine = None) -> AttackReport:
    configs, engine = _setup(scenario, configs, engine)
    params = scenario.params
    pta = PtaController(engine, PtaConfig.from_config(configs, mode=PtaMode(params["mode"])))
    medium = Medium(engine)
    client = scenario.device("ping_client")
    ping = PingStation(engine, _access_point(scenario), pta, medium, mac=MacParams.from_config(configs),
                       interval=ms(configs["PING_INTERVAL_MS"]), timeout=ms(configs["PING_TIMEOUT_MS"]),
                       client_id=client.get("id", "client"))
    attacker = BluetoothCoreController(engine, pta=pta)

    start = s(params["attack_start_s"])
    end = min(start + s(params["attack_length_s"]), scenario.duration)
    if start >= end:
        raise PreconditionError("the attack window must end after it starts and inside the run")
    if scenario.enabled:
        engine.call_at(start, attacker.flood, params["use_priority"])
        engine.call_at(end, attacker.release)
    ping.start(until=scenario.duration)
    engine.run_until(scenario.duration)

    replies = [r.replied_at for r in ping.records if r.replied_at is not None]
    series = traffic_series(replies, 0, end, DOS_BIN)
    dos_class = detect_dos(series, (start, end))
    sent = ping.replies(start, end)
    lost = [r for r in sent if r.replied_at is None or r.replied_at >= end]
    baseline_rtt = _mean([r.rtt() for r in ping.replies(0, start) if r.rtt() is not None])
    attack_rtt = _mean([r.rtt() for r in sent if r.rtt() is not None and r.replied_at < end])
    # delayed but delivered replies still degrade the link
    if dos_class == DosClass.UNAFFECTED and baseline_rtt and attack_rtt and attack_rtt > 2 * baseline_rtt:
        dos_class = DosClass.DEGRADED

    metrics = {
        "mode": params["mode"],
        "use_priority": params["use_priority"],
        "pings_in_window": len(sent),
        "lost_in_window": len(lost),
        "loss_pct": 100.0 * len(lost) / len(sent) if sent else 0.0,
        "mean_rtt_baseline_us": baseline_rtt / 1000 if baseline_rtt is not None else None,
        "mean_rtt_attack_us": attack_rtt / 1000 if attack_rtt is not None else None,
        "dos_class": dos_class,
        "collisions": len(medium.collisions),
    }
    if not scenario.enabled:
        verdict = Verdict.FAILED
    else:
        verdict = {DosClass.DOS: Verdict.SUCCESS, DosClass.DEGRADED: Verdict.PARTIAL,
                   DosClass.UNAFFECTED: Verdict.FAILED}[dos_class]
    return AttackReport(kind=scenario.kind.value, verdict=verdict, metrics=metrics, seed=scenario.seed,
                        attacker_core=scenario.attacker_core.value)


def run_ble_beacon_dos(scenario: AttackScenario, configs=None, engine: Engine = None) -> AttackReport:
    configs, engine = _setup(scenario, configs, engine)
    params = scenario.params
    device = scenario.device("beacon")
    profile = BtDeviceProfile(role="beacon", device_id=device.get("id", "beacon"),
                              adv_interval=ms(device.get("adv_interval_ms", configs["BEACON_INTERVAL_MS"])))
    pta = PtaController(engine, PtaConfig.from_config(configs))
    medium = Medium(engine)
    attacker = WifiCoreController(engine, pta=pta)

    deny_at = s(params["deny_at_s"])
    restore_at = None if params.get("deny_length_s") is None else deny_at + s(params["deny_length_s"])
    if scenario.enabled and deny_at < scenario.duration:
        engine.call_at(deny_at, attacker.force_grant, True)
        if restore_at is not None and restore_at < scenario.duration:
            engine.call_at(restore_at, attacker.force_grant, None)
    beacon = Beacon(engine, profile, pta, medium)
    beacon.start()
    engine.run_until(scenario.duration)

    after = _count_in(beacon.adverts, deny_at, scenario.duration + 1)
    restored_span = scenario.duration - restore_at if restore_at is not None and restore_at < scenario.duration else 0
    metrics = {
        "adverts_before_denial": _count_in(beacon.adverts, 0, deny_at),
        "adverts_after_denial": after,
        "suppressed_events": len(beacon.suppressed),
        "first_denial_ns": deny_at,
        "grants_restored_ns": restore_at,
        "restored_span_s": restored_span / 1e9,
    }
    if not scenario.enabled or deny_at >= scenario.duration or after > 0:
        verdict = Verdict.FAILED
    elif restore_at is None or restored_span >= RESTORED_GRANT_SPAN:
        verdict = Verdict.SUCCESS
    else:
        verdict = Verdict.PARTIAL
    return AttackReport(kind=scenario.kind.value, verdict=verdict, metrics=metrics, seed=scenario.seed,
                        attacker_core=scenario.attacker_core.value)


def keystroke_script(scenario: AttackScenario, engine: Engine, interval: int) -> KeystrokeScript:
    params = scenario.params
    if params.get("press_times_ms") is not None:
        return KeystrokeScript(tuple(ms(t) for t in params["press_times_ms"]))
    # presses in adjacent HID windows would merge into one detection
    return KeystrokeScript.generate(engine.rng.stream("keystrokes"), params["presses"], min_gap=2 * interval,
                                    start=ms(params["start_ms"]))


def run_keystroke_sniff(scenario: AttackScenario, configs=None, engine: Engine = None) -> AttackReport:
    configs, engine = _setup(scenario, configs, engine)
    params = scenario.params
    device = scenario.device("hid_keyboard")
    interval = us(1000 * device.get("hid_interval_ms", params["hid_interval_ms"]))
    profile = BtDeviceProfile(role="hid_keyboard", device_id=device.get("id", "keyboard"), hid_interval=interval)
    script = keystroke_script(scenario, engine, interval)
    seci = SeciLink(engine, SeciLinkConfig.from_config(configs))
    medium = Medium(engine)
    attacker = WifiCoreController(engine, seci=seci)

    duration = scenario.duration
    if script.press_times and script.press_times[-1] + 2 * interval > duration:
        duration = align_up(script.press_times[-1] + 2 * interval, interval)
        print_with_color(f"Extending the run to {duration / 1e9:.3f} s to cover the keystroke script", "yellow")
    HidKeyboard(engine, profile, script, seci, medium).start()
    if scenario.enabled:
        attacker.start_sniffing()
    else:
        seci.polling = False
    engine.run_until(duration)

    timeline = reconstruct_keystrokes(attacker.d11_polls())
    errors, false_detections, missed = match_keystrokes(script.press_times, timeline, tolerance=interval)
    metrics = {
        "hid_interval_ns": interval,
        "presses": len(script.press_times),
        "press_times_ns": list(script.press_times),
        "detections": timeline.times,
        "recovered": len(errors),
        "missed": missed,
        "false_detections": false_detections,
        "timing_errors_ns": errors,
        "max_error_ns": max(errors) if errors else None,
        "polls": len(attacker.d11_polls()),
    }
    if not scenario.enabled or not script.press_times or not errors:
        verdict = Verdict.FAILED
    elif missed == 0 and false_detections == 0:
        verdict = Verdict.SUCCESS
    else:
        verdict = Verdict.PARTIAL
    return AttackReport(kind=scenario.kind.value, verdict=verdict, metrics=metrics, seed=scenario.seed,
                        attacker_core=scenario.attacker_core.value)


def run_jitter_classify(scenario: AttackScenario, configs=None, engine: Engine = None) -> AttackReport:
    configs, engine = _setup(scenario, configs, engine)
    params = scenario.params
    classes = list(TRAFFIC_CLASSES) if params["traffic"] == "all" else [params["traffic"]]
    n, block = params["n_samples"], params["block_size"]
    if block <= 0 or n < block:
        raise PreconditionError("n_samples must hold at least one block")
    pta = PtaController(engine, PtaConfig.from_config(configs))
    attacker = WifiCoreController(engine, pta=pta)
    conn_interval = us(1000 * configs["BLE_CONN_INTERVAL_MS"])
    if conn_interval % SLOT_NS:
        raise PreconditionError("the connection interval must be a whole number of slots")
    device_id = scenario.device("ble_peripheral").get("id", "peripheral")

    phases = [("calibration", "idle", block)] if params["anchor"] == "estimate" else []
    phases += [(label, label, n) for label in classes]
    anchor, spans = SLOT_NS, []
    for name, label, count in phases:
        generator = OffsetGenerator(REFERENCE_STATS[label], spread=params["spread"])
        profile = BtDeviceProfile(role="ble_peripheral", device_id=f"{device_id}-{name}")
        peripheral = BlePeripheral(engine, profile, pta, generator, conn_interval=conn_interval, stream=f"traffic-{name}")
        peripheral.start(count, first_anchor=anchor)
        spans.append((name, anchor - SLOT_NS, anchor + count * conn_interval))
        anchor += count * conn_interval + conn_interval
    engine.run_until(max(scenario.duration, anchor))

    if not scenario.enabled:
        return AttackReport(kind=scenario.kind.value, verdict=Verdict.FAILED, metrics={"observed_edges": 0},
                            seed=scenario.seed, attacker_core=scenario.attacker_core.value)

    slot_anchor = SLOT_NS
    if params["anchor"] == "estimate":
        _, lo, hi = spans[0]
        slot_anchor = estimate_slot_anchor(attacker.observed_edges("request", lo, hi - 1),
                                           reference_median_us=REFERENCE_STATS["idle"].median)
    confusion = {label: {other: 0 for other in TRAFFIC_CLASSES} for label in classes}
    observed_stats, unclassified = {}, 0
    for name, lo, hi in spans:
        if name not in classes:
            continue
        samples = compute_slot_offsets(attacker.observed_edges("request", lo, hi - 1), slot_anchor)
        observed_stats[name] = offset_stats(samples).as_dict() if samples else None
        for i in range(0, len(samples) - block + 1, block):
            try:
                predicted = classify_traffic(samples[i:i + block]).label
            except TooFewSamples:
                unclassified += 1
                continue
            confusion[name][predicted] += 1

    accuracy = {label: (row[label] / sum(row.values()) if sum(row.values()) else 0.0) for label, row in confusion.items()}
    predictions = Counter()
    for row in confusion.values():
        predictions.update(row)
    metrics = {
        "classes": classes,
        "slot_anchor_ns": slot_anchor,
        "block_size": block,
        "confusion": confusion,
        "accuracy": accuracy,
        "label": predictions.most_common(1)[0][0] if sum(predictions.values()) else None,
        "predicted": {label: max(row, key=row.get) for label, row in confusion.items() if sum(row.values())},
        "observed_stats_us": observed_stats,
        "unclassified_blocks": unclassified,
    }
    if accuracy and min(accuracy.values()) >= CLASSIFIER_TARGET_ACCURACY:
        verdict = Verdict.SUCCESS
    elif accuracy and float(np.mean(list(accuracy.values()))) > 1 / len(TRAFFIC_CLASSES) + 0.1:
        verdict = Verdict.PARTIAL
    else:
        verdict = Verdict.FAILED
    return AttackReport(kind=scenario.kind.value, verdict=verdict, metrics=metrics, seed=scenario.seed,
                        attacker_core=scenario.attacker_core.value)


def run_grant_glitch_observe(scenario: AttackScenario, configs=None, engine: Engine = None) -> AttackReport:
    configs, engine = _setup(scenario, configs, engine)
    params = scenario.params
    cfg = PtaConfig.from_config(configs, mode=PtaMode(params["mode"]), grant_glitch_enabled=params["glitch_enabled"])
    pta = PtaController(engine, cfg)
    medium = Medium(engine)
    attacker = BluetoothCoreController(engine, pta=pta)
    device = scenario.device("station_load")
    station = WifiDeviceProfile(role="station_load", device_id=device.get("id", "sta"), channel=device.get("channel", 6),
                                bandwidth_mhz=device.get("bandwidth_mhz", 20), offered_load_mbps=params["load_mbps"])

    load_start = s(params["load_start_s"])
    pulses = inject_grant_glitch(station.offered_load_mbps, cfg, engine.rng.stream("glitch"),
                                 start=load_start, end=scenario.duration)
    pta.schedule_glitches(pulses)
    LoadStation(engine, station, pta, medium, frame_bytes=cfg.frame_bytes).start(load_start, scenario.duration)
    engine.run_until(scenario.duration)

    observed = attacker.observed_edges("grant", start=load_start, end=scenario.duration - 1, rising=False) \
        if scenario.enabled else []
    metrics = {
        "mode": cfg.mode,
        "load_mbps": station.offered_load_mbps,
        "glitches": len(pulses),
        "visible_glitches": pta.visible_pulses(pulses),
        "observed_grant_drops": len(observed),
        "sample_period_ns": cfg.sample_period,
    }
    if not scenario.enabled or not pulses:
        verdict = Verdict.FAILED
    elif observed:
        verdict = Verdict.SUCCESS
    else:
        verdict = Verdict.PARTIAL
    return AttackReport(kind=scenario.kind.value, verdict=verdict, metrics=metrics, seed=scenario.seed,
                        attacker_core=scenario.attacker_core.value)


def _chip_config(scenario: AttackScenario, configs) -> ChipConfig:
    params = scenario.params
    if params.get("executable") is not None:
        entries = list(params["executable"])
    elif params.get("chip") in configs["CHIPS"]:
        entries = list(configs["CHIPS"][params["chip"]])
    else:
        raise PreconditionError(f"unknown chip {params.get('chip')!r} and no executable entries given")
    values = {"executable_entries": entries, "associated": params["associated"], "wifi_powered": params["wifi_powered"]}
    for name in ("ssid", "passphrase", "p_unstable"):
        if params.get(name) is not None:
            values[name] = params[name]
    return ChipConfig.from_config(configs, **values)


def run_sharedmem_exploit(scenario: AttackScenario, configs=None, engine: Engine = None, out_dir=None) -> AttackReport:
    configs, engine = _setup(scenario, configs, engine)
    params = scenario.params
    chip = ComboChip(engine, _chip_config(scenario, configs))
    chip.start()
    attacker = BluetoothCoreController(engine, chip=chip)
    metrics = {"expected_regions": [to_hex(a) for a in chip.cfg.executable_entries], "found_regions": [],
               "crash_pcs": [], "secrets": None}
    if not scenario.enabled:
        engine.run_until(scenario.duration)
        return AttackReport(kind=scenario.kind.value, verdict=Verdict.FAILED, metrics=metrics, seed=scenario.seed,
                            attacker_core=scenario.attacker_core.value)

    attacker.act("finder", "start")
    finder = find_executable_regions(chip, engine.rng.stream("finder"), block=int(configs["FINDER_BLOCK"]),
                                     wait_after_crash=s(configs["FINDER_WAIT_S"]), budget=params.get("finder_budget"),
                                     verify_writes=params["verify_writes"], bt=attacker)
    attacker.act("finder", f"found {len(finder.found)}")
    metrics.update({
        "found_regions": [to_hex(a) for a in finder.found],
        "finder": {"block_passes": finder.block_passes, "completed": finder.completed, "aborted": finder.aborted,
                   "crashes": len(finder.crashes),
                   "unresolved_blocks": [to_hex(a) for a in finder.unresolved]},
    })

    planted, pc_law = None, None
    if finder.found:
        entry = finder.found[0]
        # wait for the reboot and, if configured, the reassociation
        limit = engine.now + chip.cfg.reinit_delay + chip.cfg.reassociate_delay + s(1)
        while engine.now < limit and (chip.state != "running" or (chip.cfg.associated and not chip.associated)):
            engine.run_until(engine.now + chip.cfg.exec_period)
        probe = BranchProbe(entry, CANONICAL_TARGET)
        attacker.act("plant", f"{to_hex(entry)} -> {to_hex(CANONICAL_TARGET)}")
        planted = plant_probe(chip, probe, wait=2 * chip.cfg.exec_period, bt=attacker)
        if planted is not None:
            offset = chip.window.to_wifi(entry) - WIFI_RAM_BASE
            pc_law = planted.pc == probe.expected_pc
            metrics.update({
                "planted_pc": to_hex(planted.pc),
                "pc_matches_target": pc_law,
                "dump_offset_law": planted.ram_dump[offset:offset + PROBE_LEN] == probe.encode(),
                "crash_associated": planted.associated,
            })
            secrets = extract_secrets(planted)
            metrics["secrets"] = None if secrets is None else {"ssid": secrets.ssid, "passphrase": secrets.passphrase}
            metrics["secrets_match"] = secrets == chip.secrets

    if params["attempt_readout"]:
        readout = bt_readout(chip, engine.rng.stream("readout"), bt=attacker)
        metrics["readout"] = {"bytes_read": readout.bytes_read, "crashed": readout.crashed,
                              "secrets_found": readout.secrets is not None}
    metrics["crash_pcs"] = [to_hex(log.pc) for log in chip.crash_logs]
    if engine.now < scenario.duration:
        engine.run_until(scenario.duration)

    crash_paths = []
    if out_dir is not None:
        for index, log in enumerate(chip.crash_logs):
            crash_paths.append(os.path.relpath(export_crash_log(log, out_dir, index), out_dir))

    if not finder.found or planted is None or not pc_law:
        verdict = Verdict.FAILED
    elif metrics["secrets"] is not None and metrics["secrets_match"]:
        verdict = Verdict.SUCCESS
    else:
        verdict = Verdict.PARTIAL
    return AttackReport(kind=scenario.kind.value, verdict=verdict, metrics=metrics, seed=scenario.seed,
                        attacker_core=scenario.attacker_core.value, crash_logs=crash_paths)


RUNNERS = {
    AttackKind.GRANT_REJECT_DOS: run_grant_reject_dos,
    AttackKind.PRIORITY_FLOOD_DOS: run_priority_flood_dos,
    AttackKind.BLE_BEACON_DOS: run_ble_beacon_dos,
    AttackKind.KEYSTROKE_SNIFF: run_keystroke_sniff,
    AttackKind.JITTER_CLASSIFY: run_jitter_classify,
    AttackKind.GRANT_GLITCH_OBSERVE: run_grant_glitch_observe,
    AttackKind.SHAREDMEM_EXPLOIT: run_sharedmem_exploit,
}


def run_scenario(scenario: ScenarioConfig, configs=None, out_dir=None) -> AttackReport:
    configs = configs if configs is not None else load_config()
    attack = AttackScenario.from_config(scenario)
    engine = Engine(attack.seed, TraceRecorder())
    log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, f"log_{attack.kind.value}.txt")
        if os.path.exists(log_path):
            os.remove(log_path)
        append_log(log_path, {"step": 0, "time_ns": 0, "event": "start", "kind": attack.kind.value,
                              "seed": attack.seed, "duration_ns": attack.duration, "params": attack.params})

    print_with_color(f"Running {attack.kind.value} (seed {attack.seed}, {attack.duration / 1e9:g} s)", "yellow")
    runner = RUNNERS[attack.kind]
    try:
        if attack.kind == AttackKind.SHAREDMEM_EXPLOIT:
            report = runner(attack, configs, engine, out_dir=out_dir)
        else:
            report = runner(attack, configs, engine)
    except AbortedByBtCrash as e:
        print_with_color(f"ERROR: the Bluetooth core crashed during the attack: {e}", "red")
        report = AttackReport(kind=attack.kind.value, verdict=Verdict.FAILED, seed=attack.seed,
                              attacker_core=attack.attacker_core.value, error=f"AbortedByBtCrash: {e}")

    if out_dir is not None:
        engine.recorder.export_csv(os.path.join(out_dir, "trace.csv"))
        report.trace_path = "trace.csv"
        channel = f"attacker.{attack.attacker_core.value}"
        step = 0
        for t, name, value in engine.recorder.records:
            if name == channel:
                step += 1
                append_log(log_path, {"step": step, "time_ns": t, "event": value})
        append_log(log_path, {"step": step + 1, "time_ns": engine.now, "event": "verdict",
                              "verdict": Verdict(report.verdict).value})
        write_report(report, out_dir)

    color = "green" if report.verdict == Verdict.SUCCESS else "blue"
    print_with_color(f"{attack.kind.value}: {Verdict(report.verdict).value}", color)
    return report
