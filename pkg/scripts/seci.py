from __future__ import annotations

import bisect
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, FrozenSet, List, Optional, Tuple

from scripts.medium import blocked_hops, wifi
from scripts.sim_core import Core, Engine, JitterSource, PastTime, us
from scripts.utils import CoexSimError, PreconditionError

GCI_INPUT_ADDR = 0x650060
GCI_OUTPUT_ADDR = 0x650160

KEYSTROKE_CODE = 0x85
EMPTY_ACL_CODE = 0x05
AUDIO_CODE = 0x8A
KEEPALIVE_CODE = 0x01
GRANT_CODE = 0xD1

PACKET_TYPE_CODES = {
    KEYSTROKE_CODE: "acl_keystroke",
    EMPTY_ACL_CODE: "acl_empty",
    AUDIO_CODE: "acl_audio",
    KEEPALIVE_CODE: "null_keepalive",
}

SCAN_START = bytes.fromhex("fedbe1db3c")
SCAN_START_FOLLOWUP = bytes.fromhex("dbe2db3c")
SCAN_RESULT = bytes.fromhex("dbe4")
SCAN_END = bytes.fromhex("dbe3db3c")

PRIORITY_CLASSES = {
    "audio": "high",
    "video": "high",
    "ble": "high",
    "hid": "high",
    "file_transfer": "low",
}

BANDWIDTH_CODES = {20: 2, 40: 4}


class BadChannel(CoexSimError):
    pass


class Oversize(CoexSimError):
    pass


class Direction(str, Enum):
    BT_TO_WIFI = "bt_to_wifi"
    WIFI_TO_BT = "wifi_to_bt"


TRACE_CHANNELS = {Direction.BT_TO_WIFI: "seci.bt2wifi", Direction.WIFI_TO_BT: "seci.wifi2bt"}


def direction_from(sender: Core) -> Direction:
    return Direction.BT_TO_WIFI if sender == Core.BLUETOOTH else Direction.WIFI_TO_BT


class GrantState(str, Enum):
    GRANT = "grant"
    REJECT = "reject"
    INACTIVE = "inactive"


@dataclass(frozen=True)
class SeciMessage:
    sent_at: int
    payload: bytes
    direction: Direction
    priority_class: Optional[str] = None

    def __post_init__(self):
        if not 1 <= len(self.payload) <= 8:
            raise Oversize(f"SECI payload of {len(self.payload)} bytes")
        if self.priority_class is not None and self.priority_class not in PRIORITY_CLASSES:
            raise PreconditionError(f"unknown priority class {self.priority_class}")


@dataclass
class GciRegisters:
    gci_output: bytes = b""
    gci_input: bytes = b""


@dataclass(frozen=True)
class ChannelNotification:
    byte: int
    channel: int
    bandwidth_code: int

    @property
    def bandwidth_mhz(self):
        return {code: mhz for mhz, code in BANDWIDTH_CODES.items()}[self.bandwidth_code]


def encode_channel_notification(channel: int, bandwidth_mhz: int) -> ChannelNotification:
    if not 0 <= channel <= 11:
        raise BadChannel(f"Wi-Fi channel {channel} cannot be notified")
    if bandwidth_mhz not in BANDWIDTH_CODES:
        raise BadChannel(f"bandwidth {bandwidth_mhz} MHz cannot be notified")
    code = BANDWIDTH_CODES[bandwidth_mhz]
    return ChannelNotification(byte=(channel << 4) | code, channel=channel, bandwidth_code=code)


def decode_channel_notification(byte: int) -> ChannelNotification:
    channel, code = byte >> 4, byte & 0x0F
    if not 0 <= byte <= 0xFF or channel > 11 or code not in BANDWIDTH_CODES.values():
        raise BadChannel(f"0x{byte:02x} is not a channel notification")
    return ChannelNotification(byte=byte, channel=channel, bandwidth_code=code)


def blocklist_from_notification(notification: ChannelNotification) -> FrozenSet[int]:
    if notification.channel == 0:
        return frozenset()
    return frozenset(blocked_hops(wifi(notification.channel, notification.bandwidth_mhz)))


def grant_cycle(bt_request: bool, wifi_active_24ghz: bool, attack_withhold: bool,
                wifi_powersave: bool = False) -> GrantState:
    if not wifi_active_24ghz:
        return GrantState.INACTIVE
    if attack_withhold:
        return GrantState.REJECT
    # a sleeping Wi-Fi core only answers requests; awake, the poll cycle grants every poll
    if wifi_powersave and not bt_request:
        return GrantState.INACTIVE
    return GrantState.GRANT


@dataclass(frozen=True)
class SeciLinkConfig:
    baud: int = 3_000_000
    max_bits: int = 64
    jitter_sigma_ns: int = 200
    jitter_bound_ns: int = 1000
    poll_period: int = us(1250)
    poll_phase: int = us(20)

    @property
    def max_bytes(self):
        return self.max_bits // 8

    @classmethod
    def from_config(cls, configs, **overrides):
        values = dict(
            baud=int(configs["SECI_BAUD"]),
            max_bits=int(configs["SECI_MAX_BITS"]),
            jitter_sigma_ns=int(configs["SECI_JITTER_SIGMA_NS"]),
            jitter_bound_ns=int(configs["SECI_JITTER_BOUND_NS"]),
            poll_period=us(configs["D11_POLL_PERIOD_US"]),
            poll_phase=us(configs["D11_POLL_PHASE_US"]),
        )
        values.update(overrides)
        return cls(**values)


SECI_3MBAUD_64 = SeciLinkConfig(baud=3_000_000, max_bits=64)
SECI_4MBAUD_48 = SeciLinkConfig(baud=4_000_000, max_bits=48)


class SeciLink:
    def __init__(self, engine: Engine, cfg: SeciLinkConfig = SECI_3MBAUD_64, jitter_stream: str = "seci-jitter"):
        self.engine = engine
        self.cfg = cfg
        self.jitter = JitterSource(engine.rng.stream(jitter_stream), cfg.jitter_sigma_ns, cfg.jitter_bound_ns)
        self.registers = {Core.BLUETOOTH: GciRegisters(), Core.WIFI: GciRegisters()}
        self.messages: List[SeciMessage] = []
        self._wire_free = {direction: 0 for direction in Direction}
        self._deliveries: Dict[Direction, List[Tuple[int, bytes]]] = {direction: [] for direction in Direction}
        self._delivery_times: Dict[Direction, List[int]] = {direction: [] for direction in Direction}
        self._listeners: Dict[Core, List[Callable[[bytes], None]]] = {Core.BLUETOOTH: [], Core.WIFI: []}
        self.polls: List[Tuple[int, Optional[bytes]]] = []
        self.polling = True

    def serialization_delay(self, n_bytes: int) -> int:
        return int(round(n_bytes * 8 * 1e9 / self.cfg.baud))

    def on_receive(self, receiver: Core, callback: Callable[[bytes], None]):
        self._listeners[receiver].append(callback)

    def send_message(self, sender: Core, payload: bytes, at: Optional[int] = None,
                     priority_class: Optional[str] = None) -> int:
        payload = bytes(payload)
        if len(payload) > self.cfg.max_bytes:
            raise Oversize(f"{len(payload)} bytes exceed the {self.cfg.max_bits}-bit SECI limit")
        at = self.engine.now if at is None else at
        if at < self.engine.now:
            raise PastTime(f"SECI message at {at} ns is before now ({self.engine.now} ns)")
        direction = direction_from(sender)
        message = SeciMessage(sent_at=at, payload=payload, direction=direction, priority_class=priority_class)
        self.messages.append(message)
        self.engine.call_at(at, self._write_output, sender, message)

        start = max(at, self._wire_free[direction])
        self._wire_free[direction] = start + self.serialization_delay(len(payload))
        delivery = self._wire_free[direction] + self.jitter.next()
        deliveries = self._deliveries[direction]
        if deliveries and delivery <= deliveries[-1][0]:
            delivery = deliveries[-1][0] + 1
        deliveries.append((delivery, payload))
        self._delivery_times[direction].append(delivery)
        self.engine.call_at(delivery, self._deliver, sender, payload)
        return delivery

    def _write_output(self, sender: Core, message: SeciMessage):
        self.registers[sender].gci_output = message.payload
        self.engine.record(TRACE_CHANNELS[message.direction], message.payload)

    def _deliver(self, sender: Core, payload: bytes):
        receiver = Core.WIFI if sender == Core.BLUETOOTH else Core.BLUETOOTH
        self.registers[receiver].gci_input = payload
        self.engine.record(TRACE_CHANNELS[direction_from(sender)] + ".rx", payload)
        for callback in self._listeners[receiver]:
            callback(payload)

    def latest_delivered(self, direction: Direction, at: int) -> Optional[bytes]:
        index = bisect.bisect_right(self._delivery_times[direction], at) - 1
        return self._deliveries[direction][index][1] if index >= 0 else None

    def d11_poll(self, at: int) -> Optional[bytes]:
        if (at - self.cfg.poll_phase) % self.cfg.poll_period != 0:
            raise PreconditionError(f"{at} ns is not a D11 poll instant")
        return self.latest_delivered(Direction.BT_TO_WIFI, at)

    def start_d11_poller(self):
        return self.engine.process(self._poll_loop())

    def _poll_loop(self):
        t = self.cfg.poll_phase
        while True:
            yield self.engine.wait_until(t)
            if self.polling:
                value = self.d11_poll(t)
                self.polls.append((t, value))
                self.engine.record("seci.d11_poll", value if value is not None else 0)
            t += self.cfg.poll_period
