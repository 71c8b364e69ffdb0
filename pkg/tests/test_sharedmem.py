import json
from dataclasses import replace

import numpy as np
import pytest

from scripts.sharedmem import (CANONICAL_TARGET, CAUSE_ILLEGAL_INSTRUCTION, CAUSE_PREFETCH_ABORT, PROBE_STUB,
                               WIFI_RAM_BASE, AbortedByBtCrash, BranchProbe, ChipConfig, ComboChip, CrashLog,
                               OutOfWindow, Secrets, SharedWindow, Unmapped, align_pc, bt_readout, encode_secrets,
                               export_crash_log, extract_secrets, find_executable_regions, plant_probe, probe_address,
                               probe_target)
from scripts.core_controller import BluetoothCoreController
from scripts.sim_core import Engine, ms, s

ENTRY = 0x681024


def make_chip(seed=1, **values):
    engine = Engine(seed)
    cfg = ChipConfig(**{"executable_entries": [ENTRY], **values})
    chip = ComboChip(engine, cfg)
    chip.start()
    return engine, chip


def test_pc_drops_the_low_two_bits():
    assert align_pc(CANONICAL_TARGET) == 0xCAFEBABC
    rng = np.random.default_rng(5)
    for target in rng.integers(0, 2 ** 32, size=2000, dtype=np.uint64):
        target = int(target)
        assert align_pc(target) == target - (target & 0x3)


def test_window_translation():
    window = SharedWindow()
    assert window.to_wifi(ENTRY) == 0x181024
    assert window.to_bt(0x181024) == ENTRY
    assert window.contains(0x680000, 0x80000)
    assert not window.contains(0x6FFFFF, 2)
    assert not window.contains(0x67FFFF)


def test_probe_encoding():
    probe = BranchProbe(ENTRY, CANONICAL_TARGET)
    assert probe.encode() == bytes.fromhex("dff800f0bebafeca")
    assert probe.expected_pc == 0xCAFEBABC


def test_probe_targets_name_their_own_address():
    window = SharedWindow()
    for addr in range(window.bt_base, window.bt_base + window.length, 0x1238):
        for low in range(4):
            assert probe_address(window, align_pc(probe_target(window, addr, low))) == addr


def test_secret_block_round_trip():
    secrets = Secrets("labnet", "correct horse")
    dump = bytes(100) + encode_secrets(secrets) + bytes(20)
    assert extract_secrets(CrashLog(cause="x", pc=0, ram_dump=dump)) == secrets
    assert extract_secrets(CrashLog(cause="x", pc=0, ram_dump=bytes(64))) is None


def test_bt_writes_stay_inside_the_window():
    _, chip = make_chip()
    with pytest.raises(OutOfWindow):
        chip.bt_write(0x67FFFC, bytes(8))
    with pytest.raises(OutOfWindow):
        chip.bt_write(0x6FFFFC, bytes(8))


def test_unpowered_wifi_leaves_the_window_unmapped():
    _, chip = make_chip(wifi_powered=False)
    with pytest.raises(Unmapped):
        chip.bt_write(ENTRY, bytes(8))


def test_invalid_branch_crashes_with_aligned_pc():
    engine, chip = make_chip()
    probe = BranchProbe(ENTRY, CANONICAL_TARGET)
    log = plant_probe(chip, probe, wait=ms(100))
    assert log is not None
    assert log.cause == CAUSE_PREFETCH_ABORT
    assert log.pc == 0xCAFEBABC
    offset = chip.window.to_wifi(ENTRY) - WIFI_RAM_BASE
    assert log.ram_dump[offset:offset + 8] == probe.encode()
    assert log.byte_at(0x181024) == PROBE_STUB[0]


def test_dump_offset_law():
    engine, chip = make_chip()
    log = plant_probe(chip, BranchProbe(ENTRY, CANONICAL_TARGET), wait=ms(100))
    rng = np.random.default_rng(3)
    probe_range = range(0x181024, 0x18102C)
    for addr in rng.integers(WIFI_RAM_BASE, 0x200000, size=1000):
        addr = int(addr)
        if addr in probe_range:
            continue
        assert log.ram_dump[addr - 0x170000] == chip.image[addr - WIFI_RAM_BASE]
        assert log.byte_at(addr) == log.ram_dump[addr - 0x170000]


def test_valid_branch_does_not_crash():
    engine, chip = make_chip()
    assert plant_probe(chip, BranchProbe(ENTRY, 0x00012345), wait=ms(200)) is None


def test_execute_check_reports_the_probe_target():
    engine, chip = make_chip()
    assert chip.wifi_execute_check(engine.now) == "running"
    chip.bt_write(ENTRY, BranchProbe(ENTRY, CANONICAL_TARGET).encode())
    log = chip.wifi_execute_check(engine.now)
    assert isinstance(log, CrashLog)
    assert log.cause == CAUSE_PREFETCH_ABORT
    assert log.pc == 0xCAFEBABC
    assert chip.state == "reinit"
    assert len(chip.crash_logs) == 1


def test_foreign_bytes_trap_as_illegal_instruction():
    engine, chip = make_chip()
    original = chip.image[0x181024 - WIFI_RAM_BASE:0x181024 - WIFI_RAM_BASE + 4]
    chip.bt_write(ENTRY, bytes(b ^ 0xFF for b in original))
    engine.run_until(ms(100))
    assert chip.crash_logs[0].cause == CAUSE_ILLEGAL_INSTRUCTION
    assert chip.crash_logs[0].pc == 0x181024


def test_crash_unmaps_until_reinit():
    engine, chip = make_chip()
    plant_probe(chip, BranchProbe(ENTRY, CANONICAL_TARGET), wait=ms(100))
    assert not chip.window.mapped
    with pytest.raises(Unmapped):
        chip.bt_write(ENTRY, bytes(8))
    engine.run_until(engine.now + s(1))
    assert chip.window.mapped
    assert chip.state == "running"
    engine.run_until(engine.now + ms(200))
    assert len(chip.crash_logs) == 1


def test_secrets_only_in_associated_dumps():
    engine, chip = make_chip(associated=True, ssid="labnet", passphrase="hunter22")
    engine.run_until(ms(100))
    log = plant_probe(chip, BranchProbe(ENTRY, CANONICAL_TARGET), wait=ms(100))
    assert extract_secrets(log) == Secrets("labnet", "hunter22")

    engine, chip = make_chip(associated=False)
    log = plant_probe(chip, BranchProbe(ENTRY, CANONICAL_TARGET), wait=ms(100))
    assert extract_secrets(log) is None


def test_finder_locates_the_seeded_entry():
    engine, chip = make_chip(seed=4)
    result = find_executable_regions(chip, engine.rng.stream("finder"))
    assert result.completed
    assert result.found == [ENTRY]
    assert result.crashes


@pytest.mark.parametrize("entry", [0x68cbfc, 0x6841d2])
def test_finder_handles_other_chip_builds(entry):
    engine, chip = make_chip(seed=2, executable_entries=[entry])
    result = find_executable_regions(chip, engine.rng.stream("finder"))
    assert result.found == [entry]


def test_finder_aborts_when_wifi_is_off():
    engine, chip = make_chip(wifi_powered=False)
    result = find_executable_regions(chip, engine.rng.stream("finder"))
    assert result.found == []
    assert result.aborted


def test_finder_stops_on_bluetooth_crash():
    engine, chip = make_chip(p_unstable=1.0)
    with pytest.raises(AbortedByBtCrash):
        find_executable_regions(chip, engine.rng.stream("finder"), verify_writes=True)


def test_finder_respects_budget():
    engine, chip = make_chip()
    result = find_executable_regions(chip, engine.rng.stream("finder"), budget=3)
    assert result.block_passes == 3
    assert not result.completed


def test_finder_writes_through_the_bluetooth_controller():
    engine, chip = make_chip(seed=4)
    attacker = BluetoothCoreController(engine, chip=chip)
    result = find_executable_regions(chip, engine.rng.stream("finder"), bt=attacker)
    assert result.found == [ENTRY]
    actions = [value for _, value in engine.recorder.channel("attacker.bluetooth")]
    assert actions and all(value.startswith("bt_write ") for value in actions)
    assert len(actions) == len(engine.recorder.channel("sharedmem.bt_write"))


def test_found_entries_are_left_alone():
    engine, chip = make_chip(seed=4)
    result = find_executable_regions(chip, engine.rng.stream("finder"))
    engine.run_until(engine.now + s(2))
    assert len(chip.crash_logs) == len(result.crashes)
    assert chip.ram.read(0x181024, 4) == chip.image[0x181024 - WIFI_RAM_BASE:0x181028 - WIFI_RAM_BASE]


def test_finder_gives_up_on_blocks_whose_crashes_name_nothing():
    engine, chip = make_chip()
    check = chip.wifi_execute_check

    def unattributable(now):
        log = check(now)
        if isinstance(log, CrashLog):
            log = chip.crash_logs[-1] = replace(log, cause="watchdog", pc=0)
        return log

    chip.wifi_execute_check = unattributable
    result = find_executable_regions(chip, engine.rng.stream("finder"), block=0x40000, wait_after_crash=s(2))
    assert result.completed
    assert result.found == []
    assert result.unresolved == [0x680000]
    assert result.block_passes == 4


def test_readout_cannot_reach_secrets_outside_the_window():
    engine, chip = make_chip(associated=True, p_unstable=0.0)
    engine.run_until(ms(100))
    result = bt_readout(chip, engine.rng.stream("readout"))
    assert result.bytes_read == chip.window.length
    assert not result.crashed
    assert result.secrets is None


def test_crash_log_export(tmp_path):
    engine, chip = make_chip()
    log = plant_probe(chip, BranchProbe(ENTRY, CANONICAL_TARGET), wait=ms(100))
    path = export_crash_log(log, str(tmp_path), 0)
    assert path.endswith("crashlogs/000_trap_prefetch_abort")
    metadata = json.loads((tmp_path / "crashlogs" / "000_trap_prefetch_abort" / "metadata.json").read_text())
    assert metadata["pc"] == "0xcafebabc"
    assert metadata["dump_offset"] == "0x170000"
    assert (tmp_path / "crashlogs" / "000_trap_prefetch_abort" / "SoC_RAM.bin").read_bytes() == log.ram_dump
