import numpy as np
import pytest

from scripts.pta import (GLITCH_MODES, PtaConfig, PtaController, PtaLineState, PtaMode, Reason, Winner,
                         arbitrate_step, inject_grant_glitch, periodic_denial_schedule)
from scripts.sim_core import SLOT_NS, Core, Engine, RngStreams, s, us
from scripts.utils import PreconditionError

MODES_BY_PRECEDENCE = [PtaMode.COEX_MAXIMIZED, PtaMode.COEX_HIGH, PtaMode.BALANCED, PtaMode.WLAN_HIGH,
                       PtaMode.WLAN_MAXIMIZED]


@pytest.mark.parametrize("mode, priority, winner", [
    (PtaMode.COEX_MAXIMIZED, True, Winner.BLUETOOTH),
    (PtaMode.COEX_MAXIMIZED, False, Winner.BLUETOOTH),
    (PtaMode.COEX_HIGH, True, Winner.BLUETOOTH),
    (PtaMode.COEX_HIGH, False, Winner.BLUETOOTH),
    (PtaMode.BALANCED, True, Winner.BLUETOOTH),
    (PtaMode.BALANCED, False, Winner.BLUETOOTH),
    (PtaMode.WLAN_HIGH, True, Winner.BLUETOOTH),
    (PtaMode.WLAN_HIGH, False, Winner.BLUETOOTH),
    (PtaMode.WLAN_MAXIMIZED, True, Winner.WIFI),
    (PtaMode.WLAN_MAXIMIZED, False, Winner.WIFI),
])
def test_bluetooth_request_against_plain_wifi_traffic(mode, priority, winner):
    lines = PtaLineState(request=True, priority=priority)
    decision = arbitrate_step(lines, wifi_wants_tx=True, wifi_prio_tx=False, cfg=PtaConfig(mode=mode), at=SLOT_NS)
    assert decision.winner == winner


def test_wlan_high_denies_bluetooth_periodically():
    cfg = PtaConfig(mode=PtaMode.WLAN_HIGH)
    lines = PtaLineState(request=True)
    winners = [arbitrate_step(lines, True, False, cfg, at=n * SLOT_NS + 1).winner for n in range(8)]
    assert winners == [Winner.WIFI, Winner.BLUETOOTH, Winner.BLUETOOTH, Winner.BLUETOOTH] * 2
    assert arbitrate_step(lines, True, False, cfg, at=0).reason == Reason.PERIODIC_DENIAL


def test_periodic_denial_schedule():
    cfg = PtaConfig(mode=PtaMode.WLAN_HIGH)
    assert periodic_denial_schedule(cfg, 0)
    assert [periodic_denial_schedule(cfg, n * SLOT_NS) for n in range(1, 4)] == [False, False, False]
    assert periodic_denial_schedule(cfg, 4 * SLOT_NS + us(300))
    with pytest.raises(PreconditionError):
        periodic_denial_schedule(PtaConfig(mode=PtaMode.BALANCED), 0)


def test_single_requester_wins():
    cfg = PtaConfig(mode=PtaMode.WLAN_MAXIMIZED)
    assert arbitrate_step(PtaLineState(), False, False, cfg).winner == Winner.NONE
    assert arbitrate_step(PtaLineState(), True, False, cfg).winner == Winner.WIFI
    assert arbitrate_step(PtaLineState(request=True), False, False, cfg).winner == Winner.BLUETOOTH


def test_winner_none_only_without_requests():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        cfg = PtaConfig(mode=MODES_BY_PRECEDENCE[int(rng.integers(0, 5))])
        lines = PtaLineState(request=bool(rng.integers(0, 2)), priority=bool(rng.integers(0, 2)))
        wants, prio = bool(rng.integers(0, 2)), bool(rng.integers(0, 2))
        decision = arbitrate_step(lines, wants, prio, cfg, at=int(rng.integers(0, s(1))))
        assert (decision.winner == Winner.NONE) == (not lines.request and not wants)


def bluetooth_share(mode, slots=400):
    cfg = PtaConfig(mode=mode)
    lines = PtaLineState(request=True)
    won = sum(arbitrate_step(lines, True, True, cfg, at=n * SLOT_NS).winner == Winner.BLUETOOTH for n in range(slots))
    return won / slots


def test_bluetooth_share_falls_with_mode_order():
    shares = [bluetooth_share(mode) for mode in MODES_BY_PRECEDENCE]
    assert shares == sorted(shares, reverse=True)
    assert shares[0] == 1.0
    assert shares[1] == 0.75
    assert shares[2] == 0.5
    assert shares[-1] == 0.0


def test_glitches_need_load_and_a_wlan_mode():
    for seed in range(100):
        stream = RngStreams(seed).stream("glitch")
        for mode in PtaMode:
            cfg = PtaConfig(mode=mode)
            for load in (0, 7):
                pulses = inject_grant_glitch(load, cfg, stream, start=0, end=s(3))
                assert bool(pulses) == (load > 0 and mode in GLITCH_MODES)
        disabled = PtaConfig(mode=PtaMode.WLAN_HIGH, grant_glitch_enabled=False)
        assert inject_grant_glitch(7, disabled, stream, start=0, end=s(3)) == []


def test_glitch_pulses_are_short_and_in_range():
    cfg = PtaConfig(mode=PtaMode.WLAN_MAXIMIZED)
    pulses = inject_grant_glitch(7, cfg, RngStreams(1).stream("glitch"), start=s(1), end=s(11))
    times = [t for t, _ in pulses]
    assert times == sorted(times)
    assert all(s(1) < t < s(11) for t in times)
    assert all(d == us(2) for _, d in pulses)
    # 7 Mbit/s of 1500 byte frames, one glitch per 50 frames
    assert 80 < len(pulses) < 160


def test_observed_lines_are_quantized(engine):
    pta = PtaController(engine, PtaConfig())
    engine.call_at(us(10004), pta.set_request, True)
    engine.run_until(us(10020))
    assert pta.observe_lines(us(10010), Core.WIFI).request
    assert not pta.observe_lines(us(10009), Core.WIFI).request
    assert not pta.observe_lines(us(10000), Core.WIFI).request
    assert pta.observed_edges("request", Core.WIFI) == [us(10010)]


def test_short_glitch_between_samples_is_invisible(engine):
    pta = PtaController(engine, PtaConfig())
    assert pta.visible_pulses([(us(10001), us(3))]) == 0
    assert pta.visible_pulses([(us(9999), us(3))]) == 1


def test_glitch_overlay_drops_grant(engine):
    pta = PtaController(engine, PtaConfig(mode=PtaMode.WLAN_HIGH))
    pta.set_wifi_traffic(True)
    pta.schedule_glitches([(us(101), us(2)), (us(205), us(3))])
    engine.run_until(us(300))
    assert pta.level_at("grant", us(100))
    assert not pta.level_at("grant", us(102))
    assert pta.level_at("grant", us(103))
    assert pta.observed_edges("grant", Core.BLUETOOTH, rising=False) == []
    assert pta.visible_pulses(pta.glitches) == 0


def test_forced_grant_overrides_arbitration(engine):
    pta = PtaController(engine, PtaConfig())
    engine.call_at(us(50), pta.force_grant, True)
    engine.call_at(us(90), pta.force_grant, None)
    engine.run_until(us(100))
    assert pta.level_at("grant", us(60))
    assert not pta.level_at("grant", us(95))
    assert [value for _, value in engine.recorder.channel("pta.grant")] == [True, False]


def test_request_arbitration_drives_grant(engine):
    pta = PtaController(engine, PtaConfig(mode=PtaMode.WLAN_MAXIMIZED))
    pta.set_wifi_traffic(True)
    engine.call_at(SLOT_NS, pta.set_request, True)
    engine.run_until(2 * SLOT_NS)
    assert pta.decisions[-1].winner == Winner.WIFI
    assert pta.level_at("grant", SLOT_NS)


def test_sub_microsecond_jitter_does_not_change_observations():
    rng = np.random.default_rng(99)
    base = np.cumsum(rng.integers(2, 30, size=1000)) * us(10) + us(5)
    jitter = rng.integers(-1000, 1001, size=1000)

    def observe(times):
        engine = Engine(0)
        pta = PtaController(engine, PtaConfig())
        for i, t in enumerate(times):
            engine.call_at(int(t), pta.set_request, i % 2 == 0)
        engine.run_until(int(base[-1]) + us(100))
        samples = [pta.observe_lines(t, Core.WIFI).request for t in range(0, engine.now, us(10))]
        return samples, pta.observed_edges("request", Core.WIFI)

    assert observe(base) == observe(base + jitter)
