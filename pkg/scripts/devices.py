from __future__ import annotations

import bisect
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import simpy

from scripts.analysis import OffsetGenerator
from scripts.medium import Medium, TransmissionAttempt, bluetooth, wifi
from scripts.pta import PtaController, Winner
from scripts.seci import (AUDIO_CODE, BadChannel, EMPTY_ACL_CODE, GRANT_CODE, KEEPALIVE_CODE, KEYSTROKE_CODE, SCAN_END,
                          SCAN_RESULT, SCAN_START, SCAN_START_FOLLOWUP, Direction, GrantState, SeciLink,
                          SeciMessage, blocklist_from_notification, decode_channel_notification, grant_cycle)
from scripts.sim_core import SLOT_NS, Core, Engine, align_up, ms, s, us
from scripts.utils import PreconditionError

# Apple Wireless Keyboard, Apple Magic Keyboard, Adafruit Mini Keyboard
HID_INTERVALS = (us(12500), ms(15), ms(30))

ACL_DURATION = us(366)
NULL_DURATION = us(126)
ADV_DURATION = us(128)
SHORT_REQUEST = us(30)
ADV_HOPS = {37: 0, 38: 24, 39: 78}


class BtRole(str, Enum):
    BEACON = "beacon"
    AUDIO_STREAM = "audio_stream"
    HID_KEYBOARD = "hid_keyboard"
    BLE_PERIPHERAL = "ble_peripheral"


class WifiRole(str, Enum):
    SCANNER = "scanner"
    ACCESS_POINT = "access_point"
    STATION_LOAD = "station_load"


class BeaconAction(str, Enum):
    ADVERTISE = "advertise"
    SUPPRESSED = "suppressed"


class LinkState(str, Enum):
    ALIVE = "alive"
    KEEPALIVE_ONLY = "keepalive_only"
    TIMED_OUT = "timed_out"


@dataclass
class BtDeviceProfile:
    role: BtRole
    device_id: str = "bt0"
    hid_interval: int = ms(30)
    supervision_timeout: int = s(5)
    latched_stop: bool = False
    adv_interval: int = ms(100)
    keepalive_interval: int = ms(100)
    audio_period: int = us(1250)

    def __post_init__(self):
        self.role = BtRole(self.role)
        if self.role == BtRole.HID_KEYBOARD and self.hid_interval not in HID_INTERVALS:
            raise PreconditionError(f"unsupported HID interval {self.hid_interval} ns")


@dataclass
class WifiDeviceProfile:
    role: WifiRole
    device_id: str = "wifi0"
    channel: int = 6
    bandwidth_mhz: int = 20
    offered_load_mbps: float = 0.0

    def __post_init__(self):
        self.role = WifiRole(self.role)
        if self.offered_load_mbps < 0:
            raise PreconditionError("offered load cannot be negative")
        if not 1 <= self.channel <= 11:
            raise PreconditionError(f"Wi-Fi channel {self.channel} out of range")

    @property
    def allocation(self):
        return wifi(self.channel, self.bandwidth_mhz)


@dataclass(frozen=True)
class KeystrokeScript:
    press_times: Tuple[int, ...] = ()

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.press_times, self.press_times[1:])):
            raise PreconditionError("press times must be strictly increasing")
        # the first HID report covers (0, interval]
        if self.press_times and self.press_times[0] <= 0:
            raise PreconditionError("press times must be after the link starts")

    @classmethod
    def generate(cls, rng: np.random.Generator, count: int, min_gap: int, max_extra: int = ms(200),
                 start: int = ms(50)):
        times, t = [], align_up(start, ms(1))
        for _ in range(count):
            times.append(t)
            t = align_up(t + min_gap + int(rng.integers(0, max_extra // ms(1) + 1)) * ms(1), ms(1))
        return cls(tuple(times))

    def pressed_in(self, lo: int, hi: int) -> bool:
        index = bisect.bisect_right(self.press_times, lo)
        return index < len(self.press_times) and self.press_times[index] <= hi


def hid_tick(profile: BtDeviceProfile, script: KeystrokeScript, at: int) -> int:
    if at % profile.hid_interval != 0:
        raise PreconditionError(f"{at} ns is not a HID tick of a {profile.hid_interval} ns interval")
    return KEYSTROKE_CODE if script.pressed_in(at - profile.hid_interval, at) else EMPTY_ACL_CODE


def beacon_tick(profile: BtDeviceProfile, grant_denied: bool, at: int) -> BeaconAction:
    if profile.role != BtRole.BEACON:
        raise PreconditionError("beacon_tick needs a beacon profile")
    if grant_denied:
        profile.latched_stop = True
    return BeaconAction.SUPPRESSED if profile.latched_stop else BeaconAction.ADVERTISE


def connection_supervise(last_data_at: int, now: int, profile: BtDeviceProfile, blocked: bool = True) -> LinkState:
    if not blocked:
        return LinkState.ALIVE
    if now - last_data_at < profile.supervision_timeout:
        return LinkState.KEEPALIVE_ONLY
    return LinkState.TIMED_OUT


def wifi_scan(profile: WifiDeviceProfile, at: int, n_results: int = 0,
              peak_gap: int = ms(1), result_gap: int = ms(20)) -> List[SeciMessage]:
    if profile.role != WifiRole.SCANNER:
        return []
    messages = [SeciMessage(at, SCAN_START, Direction.WIFI_TO_BT),
                SeciMessage(at + peak_gap, SCAN_START_FOLLOWUP, Direction.WIFI_TO_BT)]
    t = at + peak_gap
    for _ in range(n_results):
        t += result_gap
        messages.append(SeciMessage(t, SCAN_RESULT, Direction.WIFI_TO_BT))
    messages.append(SeciMessage(t + result_gap, SCAN_END, Direction.WIFI_TO_BT))
    return messages


class BtDevice:
    def __init__(self, engine: Engine, profile: BtDeviceProfile, medium: Optional[Medium] = None):
        self.engine = engine
        self.profile = profile
        self.medium = medium
        self.state = None
        self.blocklist = frozenset()
        self._hop = 0

    @property
    def device_id(self):
        return self.profile.device_id

    def set_state(self, state):
        if state != self.state:
            self.state = state
            self.engine.record(f"dev.{self.device_id}.state", state)

    def next_hop(self) -> int:
        for _ in range(79):
            self._hop = (self._hop + 1) % 79
            if self._hop not in self.blocklist:
                return self._hop
        return self._hop

    def transmit(self, kind: str, duration: int, hop: Optional[int] = None):
        self.engine.record(f"dev.{self.device_id}.tx", kind)
        if self.medium is None or self.medium.is_active(self.device_id):
            return None
        hop = self.next_hop() if hop is None else hop
        return self.medium.begin_tx(TransmissionAttempt(self.device_id, bluetooth(hop), self.engine.now, duration,
                                                        granted=True, kind=kind))

    def listen_for_channel(self, seci: SeciLink):
        seci.on_receive(Core.BLUETOOTH, self._on_wifi_message)

    def _on_wifi_message(self, payload: bytes):
        if len(payload) != 1:
            return
        try:
            notification = decode_channel_notification(payload[0])
        except BadChannel:
            return
        self.blocklist = blocklist_from_notification(notification)
        self.engine.record(f"dev.{self.device_id}.blocklist", len(self.blocklist))


class HidKeyboard(BtDevice):
    def __init__(self, engine, profile, script: KeystrokeScript, seci: SeciLink, medium=None):
        super().__init__(engine, profile, medium)
        self.script = script
        self.seci = seci
        self.codes: List[Tuple[int, int]] = []

    def start(self):
        return self.engine.process(self.run())

    def run(self):
        t = self.profile.hid_interval
        while True:
            yield self.engine.wait_until(t)
            code = hid_tick(self.profile, self.script, t)
            self.codes.append((t, code))
            self.seci.send_message(Core.BLUETOOTH, bytes([code]), priority_class="hid")
            self.transmit("keystroke" if code == KEYSTROKE_CODE else "empty", ACL_DURATION)
            t += self.profile.hid_interval


class WifiCoexAgent:
    def __init__(self, engine: Engine, seci: SeciLink, active_24ghz: bool = True, powersave: bool = False):
        self.engine = engine
        self.seci = seci
        self.active_24ghz = active_24ghz
        self.powersave = powersave
        self.withhold = False

    def grant_state(self, bt_request: bool = True) -> GrantState:
        state = grant_cycle(bt_request, self.active_24ghz, self.withhold, self.powersave)
        if state == GrantState.GRANT:
            self.seci.send_message(Core.WIFI, bytes([GRANT_CODE]))
        return state

    def set_withhold(self, withhold: bool):
        self.withhold = withhold
        self.engine.record("wifi.withhold", withhold)

    def notify_channel(self, notification):
        self.seci.send_message(Core.WIFI, bytes([notification.byte]))


class AudioStream(BtDevice):
    def __init__(self, engine, profile, seci: SeciLink, agent: WifiCoexAgent, medium=None):
        super().__init__(engine, profile, medium)
        self.seci = seci
        self.agent = agent
        self.data_times: List[int] = []
        self.keepalive_times: List[int] = []
        self.last_data_at = 0
        self.link_state = LinkState.ALIVE
        self.timed_out_at: Optional[int] = None

    def start(self):
        return self.engine.process(self.run())

    def run(self):
        self.set_state(LinkState.ALIVE)
        last_keepalive = 0
        t = self.profile.audio_period
        while True:
            yield self.engine.wait_until(t)
            now = self.engine.now
            state = self.agent.grant_state(bt_request=True)
            if state != GrantState.REJECT:
                self.seci.send_message(Core.BLUETOOTH, bytes([AUDIO_CODE]), priority_class="audio")
                self.transmit("audio", ACL_DURATION)
                self.data_times.append(now)
                self.last_data_at = now
                self.link_state = connection_supervise(self.last_data_at, now, self.profile, blocked=False)
            else:
                self.link_state = connection_supervise(self.last_data_at, now, self.profile, blocked=True)
                if self.link_state == LinkState.TIMED_OUT:
                    self.timed_out_at = now
                    self.set_state(LinkState.TIMED_OUT)
                    return
                if now - last_keepalive >= self.profile.keepalive_interval:
                    self.seci.send_message(Core.BLUETOOTH, bytes([KEEPALIVE_CODE]), priority_class="audio")
                    self.transmit("keepalive", NULL_DURATION)
                    self.keepalive_times.append(now)
                    last_keepalive = now
            self.set_state(self.link_state)
            t += self.profile.audio_period


class Beacon(BtDevice):
    def __init__(self, engine, profile, pta: PtaController, medium=None):
        super().__init__(engine, profile, medium)
        self.pta = pta
        self.adverts: List[int] = []
        self.suppressed: List[int] = []
        self._channel = 37

    def start(self):
        return self.engine.process(self.run())

    def run(self):
        self.set_state("advertising")
        t = self.profile.adv_interval
        while True:
            yield self.engine.wait_until(t)
            self.pta.set_request(True)
            denied = self.pta.observe_lines(self.engine.now, Core.BLUETOOTH).grant
            action = beacon_tick(self.profile, denied, self.engine.now)
            if action == BeaconAction.ADVERTISE:
                self.adverts.append(self.engine.now)
                self.transmit("advert", ADV_DURATION, hop=ADV_HOPS[self._channel])
                self._channel = 37 + (self._channel - 36) % 3
                hold = ADV_DURATION
            else:
                self.suppressed.append(self.engine.now)
                self.set_state("short_request")
                hold = SHORT_REQUEST
            yield self.engine.timeout(hold)
            self.pta.set_request(False)
            t += self.profile.adv_interval


class BlePeripheral(BtDevice):
    def __init__(self, engine, profile, pta: PtaController, generator: OffsetGenerator,
                 conn_interval: int = us(7500), stream: str = "traffic", request_hold: int = us(150)):
        super().__init__(engine, profile, None)
        self.pta = pta
        self.generator = generator
        self.conn_interval = conn_interval
        self.rng = engine.rng.stream(stream)
        self.request_hold = request_hold
        self.request_times: List[int] = []

    def start(self, count: int, first_anchor: int = SLOT_NS):
        return self.engine.process(self.run(count, first_anchor))

    def run(self, count: int, first_anchor: int):
        offsets = self.generator.sample(self.rng, count)
        for k, offset_us in enumerate(offsets):
            at = first_anchor + k * self.conn_interval + us(offset_us)
            yield self.engine.wait_until(at)
            self.request_times.append(at)
            self.pta.set_request(True)
            yield self.engine.timeout(self.request_hold)
            self.pta.set_request(False)


class WifiScanner:
    def __init__(self, engine: Engine, profile: WifiDeviceProfile, seci: SeciLink):
        self.engine = engine
        self.profile = profile
        self.seci = seci

    def scan(self, at: int, n_results: int = 0) -> List[int]:
        return [self.seci.send_message(Core.WIFI, message.payload, at=message.sent_at)
                for message in wifi_scan(self.profile, at, n_results)]


@dataclass
class MacParams:
    retry_limit: int = 7
    cw_min: int = 31
    cw_max: int = 1023
    slot: int = us(20)
    difs: int = us(50)
    sifs: int = us(10)

    @classmethod
    def from_config(cls, configs):
        return cls(retry_limit=int(configs["MAC_RETRY_LIMIT"]), cw_min=int(configs["MAC_CW_MIN"]),
                   cw_max=int(configs["MAC_CW_MAX"]), slot=us(configs["MAC_SLOT_US"]), difs=us(configs["MAC_DIFS_US"]))


@dataclass
class PingRecord:
    sent_at: int
    replied_at: Optional[int] = None
    attempts: int = 0

    def rtt(self):
        return None if self.replied_at is None else self.replied_at - self.sent_at


class PingStation:
    FRAME_AIRTIME = us(100)

    def __init__(self, engine: Engine, ap: WifiDeviceProfile, pta: PtaController, medium: Medium,
                 mac: MacParams = None, interval: int = ms(10), timeout: int = ms(200),
                 client_id: str = "client", stream: str = "mac-backoff"):
        self.engine = engine
        self.ap = ap
        self.pta = pta
        self.medium = medium
        self.mac = mac or MacParams()
        self.interval = interval
        self.timeout = timeout
        self.client_id = client_id
        self.rng = engine.rng.stream(stream)
        self.records: List[PingRecord] = []
        self.ap_tx = simpy.Resource(engine.env, capacity=1)

    def start(self, until: int, first: int = SLOT_NS):
        return self.engine.process(self.run(until, first))

    def run(self, until: int, first: int = SLOT_NS):
        t = first
        while t < until:
            yield self.engine.wait_until(t)
            record = PingRecord(sent_at=t)
            self.records.append(record)
            self.engine.process(self._exchange(record))
            t += self.interval

    def _exchange(self, record: PingRecord):
        self.medium.begin_tx(TransmissionAttempt(self.client_id, self.ap.allocation, self.engine.now,
                                                 self.FRAME_AIRTIME, kind="echo_request"))
        yield self.engine.timeout(self.FRAME_AIRTIME + self.mac.difs)
        with self.ap_tx.request() as slot:
            yield slot
            cw = self.mac.cw_min
            while True:
                yield self.engine.wait_until(align_up(self.engine.now, self.pta.cfg.sample_period))
                record.attempts += 1
                decision = self.pta.request_wifi_tx(prio=False, airtime=self.FRAME_AIRTIME)
                if decision.winner == Winner.WIFI:
                    self.medium.begin_tx(TransmissionAttempt(self.ap.device_id, self.ap.allocation, self.engine.now,
                                                             self.FRAME_AIRTIME, granted=True, kind="echo_reply"))
                    yield self.engine.timeout(self.FRAME_AIRTIME)
                    if self.engine.now - record.sent_at <= self.timeout:
                        record.replied_at = self.engine.now
                        self.engine.record(f"dev.{self.ap.device_id}.tx", "echo_reply")
                    return
                if record.attempts > self.mac.retry_limit:
                    self.engine.record(f"dev.{self.ap.device_id}.state", "dropped")
                    return
                backoff = self.mac.difs + int(self.rng.integers(0, cw + 1)) * self.mac.slot
                cw = min(2 * cw + 1, self.mac.cw_max)
                yield self.engine.timeout(backoff)

    def replies(self, start: int = 0, end: Optional[int] = None):
        return [r for r in self.records if start <= r.sent_at and (end is None or r.sent_at < end)]


class LoadStation:
    def __init__(self, engine: Engine, profile: WifiDeviceProfile, pta: PtaController, medium: Medium,
                 frame_bytes: int = 1500, phy_mbps: float = 54.0):
        self.engine = engine
        self.profile = profile
        self.pta = pta
        self.medium = medium
        self.frame_bytes = frame_bytes
        self.airtime = int(round(frame_bytes * 8 / phy_mbps * 1000))
        self.frames: List[int] = []

    def start(self, start: int, end: int):
        return self.engine.process(self.run(start, end))

    def run(self, start: int, end: int):
        if self.profile.offered_load_mbps <= 0:
            return
        gap = int(round(self.frame_bytes * 8 / self.profile.offered_load_mbps * 1000))
        yield self.engine.wait_until(start)
        self.pta.set_wifi_traffic(True)
        t = start
        while t < end:
            yield self.engine.wait_until(t)
            decision = self.pta.request_wifi_tx(prio=False, airtime=self.airtime)
            if decision.winner == Winner.WIFI and not self.medium.is_active(self.profile.device_id):
                self.medium.begin_tx(TransmissionAttempt(self.profile.device_id, self.profile.allocation,
                                                         self.engine.now, self.airtime, granted=True, kind="load"))
                self.frames.append(self.engine.now)
            t += gap
        yield self.engine.wait_until(end)
        self.pta.set_wifi_traffic(False)
