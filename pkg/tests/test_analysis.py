import numpy as np
import pytest

from scripts.analysis import (HALF_SLOT_NS, REFERENCE_STATS, DosClass, KeystrokeTimeline, OffsetGenerator,
                              OffsetSample, OffsetStats, TooFewSamples, classify_traffic, compute_slot_offsets,
                              detect_dos, emit_polls, estimate_slot_anchor, match_keystrokes, offset_stats,
                              polls_from_trace, read_trace_csv, reconstruct_keystrokes, traffic_series,
                              wrap_offset_ns)
from scripts.seci import EMPTY_ACL_CODE, KEYSTROKE_CODE
from scripts.sim_core import SLOT_NS, TraceRecorder, ms, us
from scripts.utils import PreconditionError


def test_offsets_wrap_into_one_slot():
    assert wrap_offset_ns(0) == 0
    assert wrap_offset_ns(SLOT_NS + 5) == 5
    assert wrap_offset_ns(-5) == -5
    assert wrap_offset_ns(HALF_SLOT_NS) == HALF_SLOT_NS
    assert wrap_offset_ns(-HALF_SLOT_NS) == HALF_SLOT_NS
    rng = np.random.default_rng(0)
    for delta in rng.integers(-10 * SLOT_NS, 10 * SLOT_NS, size=1000):
        wrapped = wrap_offset_ns(int(delta))
        assert -HALF_SLOT_NS < wrapped <= HALF_SLOT_NS
        assert (int(delta) - wrapped) % SLOT_NS == 0


def test_offset_sample_bounds():
    assert OffsetSample(312.5).offset_us == 312.5
    with pytest.raises(PreconditionError):
        OffsetSample(-312.5)


def test_slot_offsets_from_edges():
    anchor = us(230)
    samples = compute_slot_offsets([anchor + us(100), anchor + SLOT_NS - us(50), anchor + 7 * SLOT_NS], anchor)
    assert [sample.offset_us for sample in samples] == [100, -50, 0]


def test_boxplot_statistics_must_be_ordered():
    with pytest.raises(PreconditionError):
        OffsetStats(median=0, lower_quartile=5, upper_quartile=10, lower_whisker=-20, upper_whisker=20)


@pytest.mark.parametrize("label", sorted(REFERENCE_STATS))
def test_generated_offsets_follow_reference(label):
    reference = REFERENCE_STATS[label]
    values = OffsetGenerator(reference).sample(np.random.default_rng(17), 1_000_000)
    stats = offset_stats([OffsetSample(float(v)) for v in values[:200_000]])
    full = np.percentile(values, [25, 50, 75])
    for got, want in zip(list(full) + [values.min(), values.max()],
                         [reference.lower_quartile, reference.median, reference.upper_quartile,
                          reference.lower_whisker, reference.upper_whisker]):
        assert abs(got - want) <= max(0.05 * abs(want), 0.5)
    assert abs(stats.median - reference.median) <= max(0.05 * abs(reference.median), 0.5)


def block_accuracy(spread, blocks=100, block_size=50):
    rng = np.random.default_rng(23)
    correct = 0
    for label, reference in REFERENCE_STATS.items():
        generator = OffsetGenerator(reference, spread=spread)
        for _ in range(blocks):
            samples = [OffsetSample(float(v)) for v in generator.sample(rng, block_size)]
            correct += classify_traffic(samples).label == label
    return correct / (blocks * len(REFERENCE_STATS))


def test_nearest_median_classifies_blocks():
    assert block_accuracy(spread=1.0) >= 0.95


def test_wide_spread_hides_the_traffic_type():
    assert block_accuracy(spread=100.0) < 0.6


def test_classification_details():
    samples = [OffsetSample(-80.0)] * 30
    result = classify_traffic(samples)
    assert result.label == "notification"
    assert result.median == -80.0
    assert result.confidence == pytest.approx(abs(-80 - (-12)) - 5)
    with pytest.raises(TooFewSamples):
        classify_traffic(samples[:19])
    with pytest.raises(PreconditionError):
        OffsetGenerator(REFERENCE_STATS["idle"], spread=0)


def test_slot_anchor_estimate():
    anchor = us(230)
    offsets = OffsetGenerator(REFERENCE_STATS["idle"]).sample(np.random.default_rng(5), 500)
    edges = [anchor + (k + 1) * SLOT_NS + us(float(offset)) for k, offset in enumerate(offsets)]
    assert abs(estimate_slot_anchor(edges, REFERENCE_STATS["idle"].median) - anchor) <= us(10)
    with pytest.raises(TooFewSamples):
        estimate_slot_anchor([])


def test_keystroke_reconstruction():
    codes = [KEYSTROKE_CODE, KEYSTROKE_CODE, EMPTY_ACL_CODE, KEYSTROKE_CODE, None, EMPTY_ACL_CODE, bytes([KEYSTROKE_CODE])]
    timeline = reconstruct_keystrokes(list(enumerate(codes)))
    assert timeline.detections == ((0, 0.5), (3, 1.0), (6, 1.0))
    with pytest.raises(PreconditionError):
        reconstruct_keystrokes([(5, KEYSTROKE_CODE), (4, EMPTY_ACL_CODE)])
    with pytest.raises(PreconditionError):
        KeystrokeTimeline(((10, 1.0), (10, 1.0)))


def test_emitted_polls_reconstruct_to_the_same_times():
    poll_times = [us(20) + k * us(1250) for k in range(200)]
    timeline = KeystrokeTimeline(tuple((poll_times[k], 1.0) for k in (3, 40, 41, 150)))
    rebuilt = reconstruct_keystrokes(emit_polls(timeline, poll_times))
    # adjacent detections merge into one run
    assert rebuilt.times == [poll_times[3], poll_times[40], poll_times[150]]


def test_match_keystrokes():
    timeline = KeystrokeTimeline(((15, 1.0), (52, 1.0), (200, 1.0)))
    errors, false_detections, missed = match_keystrokes([10, 50, 100], timeline, tolerance=10)
    assert errors == [5, 2]
    assert false_detections == 1
    assert missed == 1


def test_traffic_series():
    series = traffic_series([0, ms(1), ms(2), ms(12)], 0, ms(10), ms(5))
    assert series == [(0, 600.0), (ms(5), 0.0)]
    with pytest.raises(PreconditionError):
        traffic_series([], 0, ms(10), 0)


@pytest.mark.parametrize("during, expected", [(0.0, DosClass.DOS), (5.0, DosClass.DEGRADED),
                                              (10.0, DosClass.UNAFFECTED), (12.0, DosClass.UNAFFECTED)])
def test_detect_dos(during, expected):
    series = [(0, 10.0), (ms(100), 10.0), (ms(200), during), (ms(300), during), (ms(400), 10.0)]
    assert detect_dos(series, (ms(200), ms(400))) == expected


def test_detect_dos_needs_baseline():
    with pytest.raises(PreconditionError):
        detect_dos([(ms(200), 0.0)], (0, ms(400)))


def test_polls_survive_a_trace_file(tmp_path):
    recorder = TraceRecorder()
    recorder.record(us(20), "seci.d11_poll", 0)
    recorder.record(us(30), "pta.grant", True)
    recorder.record(us(1270), "seci.d11_poll", KEYSTROKE_CODE)
    recorder.record(us(2520), "seci.d11_poll", bytes([EMPTY_ACL_CODE]))
    path = recorder.export_csv(str(tmp_path / "trace.csv"))
    records = read_trace_csv(path)
    assert records[1] == (us(30), "pta.grant", "1")
    assert polls_from_trace(records) == [(us(20), 0), (us(1270), KEYSTROKE_CODE), (us(2520), EMPTY_ACL_CODE)]
