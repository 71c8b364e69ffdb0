from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from scripts.sim_core import SLOT_NS, Core, Engine, align_down, align_up, us
from scripts.utils import PreconditionError

LINES = ("request", "priority", "grant")


class PtaMode(str, Enum):
    COEX_MAXIMIZED = "COEX_MAXIMIZED"
    COEX_HIGH = "COEX_HIGH"
    BALANCED = "BALANCED"
    WLAN_HIGH = "WLAN_HIGH"
    WLAN_MAXIMIZED = "WLAN_MAXIMIZED"


GLITCH_MODES = (PtaMode.WLAN_HIGH, PtaMode.WLAN_MAXIMIZED)


class Winner(str, Enum):
    BLUETOOTH = "bluetooth"
    WIFI = "wifi"
    NONE = "none"


WINNER_CODES = {Winner.NONE: 0, Winner.BLUETOOTH: 1, Winner.WIFI: 2}


class Reason(str, Enum):
    IDLE = "idle"
    ONLY_BLUETOOTH = "only_bluetooth"
    ONLY_WIFI = "only_wifi"
    WLAN_MAXIMIZED = "wlan_maximized"
    BT_PRIORITY = "bt_priority"
    WIFI_PRIORITY = "wifi_priority"
    PERIODIC_DENIAL = "periodic_denial"
    BT_PRECEDENCE = "bt_precedence"
    WIFI_SHARE = "wifi_share"


@dataclass(frozen=True)
class PtaLineState:
    request: bool = False
    priority: bool = False
    grant: bool = False


@dataclass(frozen=True)
class PtaConfig:
    mode: PtaMode = PtaMode.BALANCED
    sample_period: int = us(10)
    grant_glitch_enabled: bool = True
    wifi_share: Dict[str, float] = field(default_factory=lambda: {"COEX_MAXIMIZED": 0.0, "COEX_HIGH": 0.25, "BALANCED": 0.5})
    deny_every: int = 4
    glitch_pulse: int = us(2)
    frames_per_glitch: int = 50
    frame_bytes: int = 1500

    @classmethod
    def from_config(cls, configs, mode=PtaMode.BALANCED, **overrides):
        values = dict(
            mode=PtaMode(mode),
            sample_period=us(configs["PTA_SAMPLE_PERIOD_US"]),
            wifi_share=dict(configs["PTA_WIFI_SHARE"]),
            deny_every=int(configs["WLAN_HIGH_DENY_EVERY"]),
            glitch_pulse=us(configs["GLITCH_PULSE_US"]),
            frames_per_glitch=int(configs["GLITCH_FRAMES_PER_GLITCH"]),
            frame_bytes=int(configs["WIFI_FRAME_BYTES"]),
        )
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class ArbitrationDecision:
    at: int
    winner: Winner
    reason: Reason


def periodic_denial_schedule(cfg: PtaConfig, t: int) -> bool:
    if cfg.mode != PtaMode.WLAN_HIGH:
        raise PreconditionError(f"periodic denial only applies to WLAN_HIGH, not {cfg.mode.value}")
    return (t // SLOT_NS) % cfg.deny_every == 0


def wifi_share_slot(cfg: PtaConfig, t: int) -> bool:
    share = cfg.wifi_share.get(cfg.mode.value, 0.0)
    n = t // SLOT_NS
    return math.floor((n + 1) * share) > math.floor(n * share)


def arbitrate_step(lines: PtaLineState, wifi_wants_tx: bool, wifi_prio_tx: bool,
                   cfg: PtaConfig, at: int = 0) -> ArbitrationDecision:
    if not lines.request:
        if wifi_wants_tx:
            return ArbitrationDecision(at, Winner.WIFI, Reason.ONLY_WIFI)
        return ArbitrationDecision(at, Winner.NONE, Reason.IDLE)
    if not wifi_wants_tx:
        return ArbitrationDecision(at, Winner.BLUETOOTH, Reason.ONLY_BLUETOOTH)

    if cfg.mode == PtaMode.WLAN_MAXIMIZED:
        return ArbitrationDecision(at, Winner.WIFI, Reason.WLAN_MAXIMIZED)
    if cfg.mode == PtaMode.WLAN_HIGH:
        if lines.priority:
            return ArbitrationDecision(at, Winner.BLUETOOTH, Reason.BT_PRIORITY)
        if wifi_prio_tx:
            return ArbitrationDecision(at, Winner.WIFI, Reason.WIFI_PRIORITY)
        if periodic_denial_schedule(cfg, at):
            return ArbitrationDecision(at, Winner.WIFI, Reason.PERIODIC_DENIAL)
        return ArbitrationDecision(at, Winner.BLUETOOTH, Reason.BT_PRECEDENCE)
    if lines.priority:
        return ArbitrationDecision(at, Winner.BLUETOOTH, Reason.BT_PRIORITY)
    if wifi_prio_tx and wifi_share_slot(cfg, at):
        return ArbitrationDecision(at, Winner.WIFI, Reason.WIFI_SHARE)
    return ArbitrationDecision(at, Winner.BLUETOOTH, Reason.BT_PRECEDENCE)


def inject_grant_glitch(load_mbps, cfg: PtaConfig, stream: np.random.Generator,
                        start: int = 0, end: int = 0) -> List[Tuple[int, int]]:
    if load_mbps <= 0 or cfg.mode not in GLITCH_MODES or not cfg.grant_glitch_enabled or end <= start:
        return []
    frames_per_s = load_mbps * 1e6 / (cfg.frame_bytes * 8)
    mean_gap_ns = 1e9 * cfg.frames_per_glitch / frames_per_s
    pulses = []
    t = start
    while True:
        t += max(1, int(round(stream.exponential(mean_gap_ns))))
        if t >= end:
            return pulses
        pulses.append((t, cfg.glitch_pulse))


class PtaController:
    def __init__(self, engine: Engine, cfg: PtaConfig):
        self.engine = engine
        self.cfg = cfg
        self._history: Dict[str, List[Tuple[int, bool]]] = {line: [(0, False)] for line in LINES}
        self.decisions: List[ArbitrationDecision] = []
        self.glitches: List[Tuple[int, int]] = []
        self.wifi_busy_until = 0
        self.wifi_traffic = False
        self._grant_base = False
        self._grant_forced: Optional[bool] = None
        self._glitch_depth = 0

    def level_at(self, line: str, t: int) -> bool:
        history = self._history[line]
        index = bisect.bisect_right(history, (t, True)) - 1
        return history[max(index, 0)][1]

    def lines_at(self, t: int) -> PtaLineState:
        return PtaLineState(*(self.level_at(line, t) for line in LINES))

    def transitions(self, line: str) -> List[Tuple[int, bool]]:
        return list(self._history[line])

    def _drive(self, line: str, level: bool):
        history = self._history[line]
        now = self.engine.now
        if history[-1][1] == level:
            return
        if history[-1][0] == now and len(history) > 1:
            history.pop()
        else:
            history.append((now, level))
        self.engine.record(f"pta.{line}", level)

    # Bluetooth side
    def set_request(self, level: bool):
        self._drive("request", level)
        if level:
            self.decide(wifi_wants_tx=self.wifi_wants_tx(), wifi_prio_tx=False)
        else:
            self._set_grant_base(self.wifi_traffic)

    def set_priority(self, level: bool):
        self._drive("priority", level)

    # Wi-Fi side
    def wifi_wants_tx(self) -> bool:
        return self.wifi_traffic or self.engine.now < self.wifi_busy_until

    def set_wifi_traffic(self, active: bool):
        self.wifi_traffic = active
        self._set_grant_base(active)

    def force_grant(self, level: Optional[bool]):
        self._grant_forced = level
        self._refresh_grant()

    def request_wifi_tx(self, prio: bool = False, airtime: int = 0) -> ArbitrationDecision:
        decision = self.decide(wifi_wants_tx=True, wifi_prio_tx=prio)
        if decision.winner == Winner.WIFI:
            self.wifi_busy_until = max(self.wifi_busy_until, self.engine.now + airtime)
        return decision

    def decide(self, wifi_wants_tx: bool, wifi_prio_tx: bool) -> ArbitrationDecision:
        now = self.engine.now
        decision = arbitrate_step(self.lines_at(now), wifi_wants_tx, wifi_prio_tx, self.cfg, at=now)
        self.decisions.append(decision)
        self.engine.record("pta.decision", WINNER_CODES[decision.winner])
        if decision.winner != Winner.NONE and self.level_at("request", now):
            self._set_grant_base(decision.winner == Winner.WIFI)
        return decision

    def _set_grant_base(self, denied: bool):
        self._grant_base = denied
        self._refresh_grant()

    def _refresh_grant(self):
        if self._glitch_depth:
            return
        level = self._grant_forced if self._grant_forced is not None else self._grant_base
        self._drive("grant", level)

    def schedule_glitches(self, pulses: List[Tuple[int, int]]):
        self.glitches.extend(pulses)
        for at, duration in pulses:
            self.engine.call_at(at, self._glitch_start)
            self.engine.call_at(at + duration, self._glitch_end)

    def _glitch_start(self):
        self._glitch_depth += 1
        self._drive("grant", False)

    def _glitch_end(self):
        self._glitch_depth -= 1
        self._refresh_grant()

    # On-chip observers
    def observe_lines(self, at: int, role: Core) -> PtaLineState:
        return self.lines_at(align_down(at, self.cfg.sample_period))

    def observed_edges(self, line: str, role: Core, start: int = 0, end: Optional[int] = None,
                       rising: bool = True) -> List[int]:
        """Edges of a line as seen by a sampling observer: sample instants where the level flips."""
        period = self.cfg.sample_period
        end = self.engine.now if end is None else end
        edges = []
        for t, level in self._history[line][1:]:
            if level != rising:
                continue
            sample = align_up(t, period)
            if sample < start or sample > end:
                continue
            if self.level_at(line, sample) == rising and self.level_at(line, sample - period) != rising:
                if not edges or edges[-1] != sample:
                    edges.append(sample)
        return edges

    def visible_pulses(self, pulses: List[Tuple[int, int]]) -> int:
        period = self.cfg.sample_period
        return sum(1 for at, duration in pulses if align_up(at, period) < at + duration)
