import numpy as np
import pytest

from scripts.sim_core import (SLOT_NS, Core, Engine, JitterSource, PastTime, RngStreams, TraceRecorder, align_down,
                              align_up, ms, s, sample_jitter, us)
from scripts.utils import CoexSimError


def test_time_helpers():
    assert us(1) == 1_000
    assert ms(1.25) == 1_250_000
    assert s(2) == 2_000_000_000
    assert SLOT_NS == us(625)
    assert align_up(us(10004), us(10)) == us(10010)
    assert align_up(us(10010), us(10)) == us(10010)
    assert align_down(us(10009), us(10)) == us(10000)
    assert align_up(0, us(1250), phase=us(20)) == us(20)


def test_same_instant_events_fire_in_schedule_order(engine):
    fired = []
    engine.call_at(10, fired.append, "a")
    engine.call_at(10, fired.append, "b")
    engine.call_at(5, fired.append, "c")
    assert engine.run_until(20) == 20
    assert fired == ["c", "a", "b"]


def test_cancelled_event_is_not_delivered(engine):
    fired = []
    handle = engine.call_at(10, fired.append, "x")
    assert handle.cancel()
    engine.run_until(20)
    assert fired == []


def test_cancel_after_delivery_fails(engine):
    fired = []
    handle = engine.call_at(10, fired.append, "x")
    engine.run_until(20)
    assert fired == ["x"]
    assert not handle.cancel()


def test_scheduling_in_the_past_raises(engine):
    engine.run_until(100)
    with pytest.raises(PastTime):
        engine.call_at(50, print)
    with pytest.raises(PastTime):
        engine.run_until(10)


def test_run_until_stops_at_the_horizon(engine):
    fired = []
    engine.call_at(10, fired.append, 1)
    engine.call_at(30, fired.append, 2)
    engine.run_until(20)
    assert fired == [1]
    engine.run_until(30)
    assert fired == [1, 2]


def test_processes_wait_in_integer_nanoseconds(engine):
    seen = []

    def ticker():
        for _ in range(3):
            yield engine.timeout(us(7))
            seen.append(engine.now)

    engine.process(ticker())
    engine.run_until(us(100))
    assert seen == [us(7), us(14), us(21)]


def test_rng_streams_are_reproducible_and_independent():
    a, b = RngStreams(42), RngStreams(42)
    assert np.array_equal(a.stream("x").integers(0, 1000, 20), b.stream("x").integers(0, 1000, 20))
    assert not np.array_equal(RngStreams(42).stream("x").integers(0, 1000, 20),
                              RngStreams(42).stream("y").integers(0, 1000, 20))
    assert not np.array_equal(RngStreams(1).stream("x").integers(0, 1000, 20),
                              RngStreams(2).stream("x").integers(0, 1000, 20))


def test_rng_rejects_signed_seed():
    with pytest.raises(CoexSimError):
        RngStreams(-1)


def test_jitter_is_bounded_integer_nanoseconds():
    values = sample_jitter(RngStreams(3).stream("j"), 200, 1000, size=5000)
    assert values.dtype == np.int64
    assert np.all(np.abs(values) <= 1000)
    assert abs(float(np.mean(values))) < 20
    assert 150 < float(np.std(values)) < 250
    assert sample_jitter(RngStreams(3).stream("j"), 0, 1000) == 0


def test_jitter_source_matches_batched_draws():
    source = JitterSource(RngStreams(9).stream("j"), 200, 1000)
    batch = sample_jitter(RngStreams(9).stream("j"), 200, 1000, size=1024)
    assert [source.next() for _ in range(10)] == [int(v) for v in batch[:10]]


def test_trace_export_renders_values(tmp_path):
    recorder = TraceRecorder()
    recorder.record(0, "pta.request", True)
    recorder.record(5, "seci.bt2wifi", b"\x85")
    recorder.record(5, "attacker.wifi", Core.WIFI)
    path = recorder.export_csv(tmp_path / "trace.csv")
    assert path.read_text() == "time_ns,channel,value\n0,pta.request,1\n5,seci.bt2wifi,0x85\n5,attacker.wifi,wifi\n"
    assert recorder.channel("pta.request") == [(0, True)]
    assert recorder.channels() == ["attacker.wifi", "pta.request", "seci.bt2wifi"]


def test_trace_rejects_records_out_of_order():
    recorder = TraceRecorder()
    recorder.record(10, "a", 1)
    with pytest.raises(CoexSimError):
        recorder.record(9, "a", 2)


def test_engine_records_at_current_time(engine):
    engine.call_at(us(3), engine.record, "x", 1)
    engine.run_until(us(5))
    assert engine.recorder.records == [(us(3), "x", 1)]


def test_identical_seeds_give_identical_engines():
    def trace(seed):
        engine = Engine(seed)
        stream = engine.rng.stream("events")
        for t in sorted(int(v) for v in stream.integers(0, 10_000, 50)):
            engine.call_at(t, engine.record, "event", t)
        engine.run_until(10_000)
        return engine.recorder.records

    assert trace(5) == trace(5)
    assert trace(5) != trace(6)
