from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from scripts.seci import KEYSTROKE_CODE
from scripts.sim_core import SLOT_NS, us
from scripts.utils import CoexSimError, PreconditionError

HALF_SLOT_NS = SLOT_NS // 2
HALF_SLOT_US = HALF_SLOT_NS / 1000
MIN_CLASSIFY_SAMPLES = 20


class TooFewSamples(CoexSimError):
    pass


class DosClass(str, Enum):
    DOS = "dos"
    DEGRADED = "degraded"
    UNAFFECTED = "unaffected"


@dataclass(frozen=True)
class OffsetSample:
    offset_us: float

    def __post_init__(self):
        if not -HALF_SLOT_US < self.offset_us <= HALF_SLOT_US:
            raise PreconditionError(f"offset {self.offset_us} us outside one slot")


@dataclass(frozen=True)
class OffsetStats:
    median: float
    lower_quartile: float
    upper_quartile: float
    lower_whisker: float
    upper_whisker: float

    def __post_init__(self):
        ordered = (self.lower_whisker, self.lower_quartile, self.median, self.upper_quartile, self.upper_whisker)
        if any(b < a for a, b in zip(ordered, ordered[1:])):
            raise PreconditionError(f"boxplot statistics out of order: {ordered}")

    def knots(self):
        return [self.lower_whisker, self.lower_quartile, self.median, self.upper_quartile, self.upper_whisker]

    def as_dict(self):
        return {"median": self.median, "lower_quartile": self.lower_quartile, "upper_quartile": self.upper_quartile,
                "lower_whisker": self.lower_whisker, "upper_whisker": self.upper_whisker}


# REQUEST offsets to the 625 us slot grid per BLE traffic type, in us
REFERENCE_STATS = {
    "idle": OffsetStats(median=-12, lower_quartile=-27, upper_quartile=3, lower_whisker=-190, upper_whisker=30),
    "indication": OffsetStats(median=-171, lower_quartile=-183, upper_quartile=-151, lower_whisker=-306, upper_whisker=226),
    "notification": OffsetStats(median=-85, lower_quartile=-100, upper_quartile=-69, lower_whisker=-286, upper_whisker=302),
}


def wrap_offset_ns(delta):
    """Map a signed ns distance onto (-half slot, +half slot]."""
    wrapped = (delta + HALF_SLOT_NS) % SLOT_NS - HALF_SLOT_NS
    return HALF_SLOT_NS if wrapped == -HALF_SLOT_NS else wrapped


def wrap_offset_us(values):
    values = np.asarray(values, dtype=float)
    wrapped = np.mod(values + HALF_SLOT_US, 2 * HALF_SLOT_US) - HALF_SLOT_US
    return np.where(wrapped <= -HALF_SLOT_US, HALF_SLOT_US, wrapped)


def compute_slot_offsets(edges: Iterable[int], slot_anchor: int) -> List[OffsetSample]:
    return [OffsetSample(wrap_offset_ns(edge - slot_anchor) / 1000) for edge in edges]


def offset_stats(samples: Sequence[OffsetSample]) -> OffsetStats:
    values = np.array([sample.offset_us for sample in samples])
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    return OffsetStats(median=float(median), lower_quartile=float(q1), upper_quartile=float(q3),
                       lower_whisker=float(values.min()), upper_whisker=float(values.max()))


class OffsetGenerator:
    """Synthetic REQUEST offsets whose quartiles and whiskers follow a reference boxplot.

    The inverse CDF is piecewise linear through the five boxplot statistics, so
    the whiskers are hard bounds. ``spread`` widens every deviation from the
    median; values that leave the slot wrap around it.
    """

    QUANTILES = [0.0, 0.25, 0.5, 0.75, 1.0]

    def __init__(self, stats: OffsetStats, spread: float = 1.0):
        if spread <= 0:
            raise PreconditionError("spread must be positive")
        self.stats = stats
        self.spread = spread

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        values = np.interp(rng.random(n), self.QUANTILES, self.stats.knots())
        values = self.stats.median + self.spread * (values - self.stats.median)
        return wrap_offset_us(values)


@dataclass(frozen=True)
class Classification:
    label: str
    confidence: float
    median: float
    distances: Dict[str, float] = field(default_factory=dict)


def classify_traffic(samples: Sequence[OffsetSample], references: Dict[str, OffsetStats] = None) -> Classification:
    references = references or REFERENCE_STATS
    if len(samples) < MIN_CLASSIFY_SAMPLES:
        raise TooFewSamples(f"{len(samples)} samples, need at least {MIN_CLASSIFY_SAMPLES}")
    median = float(np.median([sample.offset_us for sample in samples]))
    distances = {label: abs(median - stats.median) for label, stats in references.items()}
    ranked = sorted(distances.items(), key=lambda item: (item[1], item[0]))
    confidence = ranked[1][1] - ranked[0][1] if len(ranked) > 1 else math.inf
    return Classification(label=ranked[0][0], confidence=confidence, median=median, distances=distances)


def estimate_slot_anchor(edges: Sequence[int], reference_median_us: float = 0.0, grid: int = us(10)) -> int:
    if not edges:
        raise TooFewSamples("no edges to synchronise on")
    edges = np.asarray(edges, dtype=np.int64)
    best_anchor, best_distance = 0, math.inf
    for anchor in range(0, SLOT_NS, grid):
        offsets = (edges - anchor + HALF_SLOT_NS) % SLOT_NS - HALF_SLOT_NS
        distance = abs(float(np.median(offsets)) / 1000 - reference_median_us)
        if distance < best_distance:
            best_anchor, best_distance = anchor, distance
    return best_anchor


@dataclass(frozen=True)
class KeystrokeTimeline:
    detections: Tuple[Tuple[int, float], ...] = ()

    def __post_init__(self):
        times = [t for t, _ in self.detections]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise PreconditionError("detections must be strictly increasing")

    @property
    def times(self):
        return [t for t, _ in self.detections]


def reconstruct_keystrokes(polls: Sequence[Tuple[int, Optional[int]]]) -> KeystrokeTimeline:
    detections = []
    previous = None
    for index, (t, value) in enumerate(polls):
        if previous is not None and t < previous:
            raise PreconditionError("polls must be time ordered")
        previous = t
        is_key = _poll_code(value) == KEYSTROKE_CODE
        was_key = index > 0 and _poll_code(polls[index - 1][1]) == KEYSTROKE_CODE
        if is_key and not was_key:
            detections.append((t, 0.5 if index == 0 else 1.0))
    return KeystrokeTimeline(tuple(detections))


def _poll_code(value):
    if value is None:
        return None
    if isinstance(value, (bytes, bytearray)):
        return value[0] if value else None
    return value


def emit_polls(timeline: KeystrokeTimeline, poll_times: Sequence[int], empty_code: int = 0x05):
    detected = set(timeline.times)
    return [(t, KEYSTROKE_CODE if t in detected else empty_code) for t in poll_times]


def match_keystrokes(press_times: Sequence[int], timeline: KeystrokeTimeline, tolerance: int):
    errors, false_detections = [], 0
    remaining = list(press_times)
    for t in timeline.times:
        candidates = [p for p in remaining if 0 <= t - p <= tolerance]
        if not candidates:
            false_detections += 1
            continue
        press = candidates[0]
        remaining.remove(press)
        errors.append(t - press)
    return errors, false_detections, len(remaining)


def traffic_series(event_times: Iterable[int], start: int, end: int, bin_ns: int) -> List[Tuple[int, float]]:
    if bin_ns <= 0 or end <= start:
        raise PreconditionError("series needs a positive bin and a non-empty range")
    n_bins = -(-(end - start) // bin_ns)
    counts = np.zeros(n_bins, dtype=np.int64)
    for t in event_times:
        if start <= t < end:
            counts[(t - start) // bin_ns] += 1
    return [(start + i * bin_ns, counts[i] * 1e9 / bin_ns) for i in range(n_bins)]


def detect_dos(series: Sequence[Tuple[int, float]], attack_window: Tuple[int, int]) -> DosClass:
    start, end = attack_window
    before = [rate for t, rate in series if t < start]
    during = [rate for t, rate in series if start <= t < end]
    if not before or not during:
        raise PreconditionError("series must cover time before and during the attack window")
    pre_rate = float(np.mean(before))
    in_rate = float(np.mean(during))
    if in_rate == 0 and pre_rate > 0:
        return DosClass.DOS
    if 0 < in_rate < pre_rate and not math.isclose(in_rate, pre_rate, rel_tol=1e-9):
        return DosClass.DEGRADED
    return DosClass.UNAFFECTED


def read_trace_csv(path) -> List[Tuple[int, str, str]]:
    with open(path, newline="") as infile:
        reader = csv.DictReader(infile)
        return [(int(row["time_ns"]), row["channel"], row["value"]) for row in reader]


def polls_from_trace(records, channel="seci.d11_poll"):
    return [(t, int(value, 16) if value.startswith("0x") else int(value)) for t, name, value in records if name == channel]
