from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from scripts.sim_core import Core, Engine
from scripts.utils import CoexSimError, PreconditionError

BT_HOP_CHANNELS = 79
WIFI_CHANNELS = 11


class BadAllocation(CoexSimError):
    pass


class DuplicateSource(CoexSimError):
    pass


@dataclass(frozen=True)
class FrequencyAllocation:
    technology: Core
    wifi_channel: int = 0
    wifi_bandwidth_mhz: int = 20
    bt_hop_channel: int = 0

    def __post_init__(self):
        if self.technology == Core.WIFI:
            if not 1 <= self.wifi_channel <= WIFI_CHANNELS:
                raise BadAllocation(f"Wi-Fi channel {self.wifi_channel} out of range")
            if self.wifi_bandwidth_mhz not in (20, 40):
                raise BadAllocation(f"Wi-Fi bandwidth {self.wifi_bandwidth_mhz} MHz not supported")
        else:
            if self.wifi_channel != 0:
                raise BadAllocation("Bluetooth allocations carry no Wi-Fi channel")
            if not 0 <= self.bt_hop_channel < BT_HOP_CHANNELS:
                raise BadAllocation(f"hop channel {self.bt_hop_channel} out of range")

    def span_mhz(self) -> Tuple[float, float]:
        if self.technology == Core.WIFI:
            center = 2407 + 5 * self.wifi_channel
            half = self.wifi_bandwidth_mhz / 2
            return center - half, center + half
        center = 2402 + self.bt_hop_channel
        return center - 0.5, center + 0.5


def wifi(channel, bandwidth_mhz=20):
    return FrequencyAllocation(Core.WIFI, wifi_channel=channel, wifi_bandwidth_mhz=bandwidth_mhz)


def bluetooth(hop):
    return FrequencyAllocation(Core.BLUETOOTH, bt_hop_channel=hop)


def overlaps(a: FrequencyAllocation, b: FrequencyAllocation) -> bool:
    span_a, span_b = a.span_mhz(), b.span_mhz()
    return span_a[0] < span_b[1] and span_b[0] < span_a[1]


def blocked_hops(allocation: FrequencyAllocation) -> List[int]:
    return [hop for hop in range(BT_HOP_CHANNELS) if overlaps(allocation, bluetooth(hop))]


@dataclass
class TransmissionAttempt:
    source: str
    allocation: FrequencyAllocation
    start: int
    duration: int
    granted: bool = False
    kind: str = "data"
    collided: bool = False

    def __post_init__(self):
        if self.duration <= 0:
            raise BadAllocation(f"transmission by {self.source} needs a positive duration")

    @property
    def end(self):
        return self.start + self.duration


@dataclass(frozen=True)
class CollisionEvent:
    at: int
    participants: Tuple[str, ...]


@dataclass(frozen=True)
class TxOutcome:
    accepted: bool
    collision: Optional[CollisionEvent] = None


@dataclass
class Medium:
    engine: Engine
    active: Dict[str, TransmissionAttempt] = field(default_factory=dict)
    log: List[TransmissionAttempt] = field(default_factory=list)
    collisions: List[CollisionEvent] = field(default_factory=list)

    def _expire(self, now):
        for source in [src for src, tx in self.active.items() if tx.end <= now]:
            del self.active[source]

    def is_active(self, source) -> bool:
        self._expire(self.engine.now)
        return source in self.active

    def begin_tx(self, attempt: TransmissionAttempt) -> TxOutcome:
        now = self.engine.now
        if attempt.start != now:
            raise PreconditionError(f"transmission by {attempt.source} starts at {attempt.start} ns, not now ({now} ns)")
        self._expire(now)
        if attempt.source in self.active:
            raise DuplicateSource(f"{attempt.source} is already transmitting")
        others = [tx for tx in self.active.values() if overlaps(tx.allocation, attempt.allocation)]
        # two granted frames were kept apart by the coexistence arbiter
        if attempt.granted:
            others = [tx for tx in others if not tx.granted]
        self.active[attempt.source] = attempt
        self.log.append(attempt)
        self.engine.record("medium.tx", f"{attempt.source}:{attempt.kind}")
        self.engine.call_at(attempt.end, self._end_tx, attempt)
        if not others:
            return TxOutcome(accepted=True)
        for tx in others + [attempt]:
            tx.collided = True
        event = CollisionEvent(at=now, participants=tuple(sorted(tx.source for tx in others + [attempt])))
        self.collisions.append(event)
        self.engine.record("medium.collision", "+".join(event.participants))
        return TxOutcome(accepted=False, collision=event)

    def _end_tx(self, attempt: TransmissionAttempt):
        if self.active.get(attempt.source) is attempt:
            del self.active[attempt.source]

    def count(self, source, kind=None, collided=None):
        return sum(1 for tx in self.log if tx.source == source
                   and (kind is None or tx.kind == kind)
                   and (collided is None or tx.collided == collided))
