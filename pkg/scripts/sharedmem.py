from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from scripts.sim_core import Engine, ms, s
from scripts.utils import CoexSimError, PreconditionError, print_with_color, to_hex

BT_WINDOW_BASE = 0x680000
WIFI_SHARED_BASE = 0x180000
TRANSLATION_DELTA = BT_WINDOW_BASE - WIFI_SHARED_BASE
WIFI_RAM_BASE = 0x170000
WIFI_RAM_END = 0x200000
DUMP_BASE = 0x10000
ROM_END = 0x100000

PROBE_STUB = bytes.fromhex("dff800f0")
PROBE_LEN = 8
PROBE_TARGET_BASE = 0xC0000000
CANONICAL_TARGET = 0xCAFEBABE
SECRET_MAGIC = b"WLSEC\x00"
DEFAULT_SECRET_ADDR = 0x17C400

CAUSE_PREFETCH_ABORT = "trap_prefetch_abort"
CAUSE_ILLEGAL_INSTRUCTION = "illegal_instruction"


class Unmapped(CoexSimError):
    pass


class OutOfWindow(CoexSimError):
    pass


class BtCrash(CoexSimError):
    pass


class AbortedByBtCrash(CoexSimError):
    pass


def align_pc(target: int) -> int:
    return target & ~0x3 & 0xFFFFFFFF


def is_valid_code(target: int) -> bool:
    return target < ROM_END or WIFI_RAM_BASE <= target < WIFI_RAM_END


@dataclass
class SharedWindow:
    bt_base: int = BT_WINDOW_BASE
    wifi_base: int = WIFI_SHARED_BASE
    length: int = 0x80000
    mapped: bool = True

    def contains(self, bt_addr: int, n: int = 1) -> bool:
        return self.bt_base <= bt_addr and bt_addr + n <= self.bt_base + self.length

    def to_wifi(self, bt_addr: int) -> int:
        return bt_addr - (self.bt_base - self.wifi_base)

    def to_bt(self, wifi_addr: int) -> int:
        return wifi_addr + (self.bt_base - self.wifi_base)


@dataclass
class WifiRam:
    data: bytearray
    base: int = WIFI_RAM_BASE
    executable_regions: List[Tuple[int, int]] = field(default_factory=list)
    secret_region: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        for start, end in self.executable_regions:
            if start < self.base or end > self.base + len(self.data):
                raise PreconditionError(f"executable region {to_hex(start)} lies outside Wi-Fi RAM")

    def read(self, addr: int, n: int) -> bytes:
        offset = addr - self.base
        return bytes(self.data[offset:offset + n])

    def write(self, addr: int, payload: bytes):
        offset = addr - self.base
        self.data[offset:offset + len(payload)] = payload


@dataclass(frozen=True)
class CrashLog:
    cause: str
    pc: int
    ram_dump: bytes
    dump_base: int = DUMP_BASE
    at: int = 0
    associated: bool = False

    def byte_at(self, wifi_addr: int) -> int:
        return self.ram_dump[wifi_addr - WIFI_RAM_BASE]

    def metadata(self):
        return {"cause": self.cause, "pc": to_hex(self.pc), "time_ns": self.at, "associated": self.associated,
                "dump_base": to_hex(self.dump_base), "dump_offset": to_hex(WIFI_RAM_BASE),
                "dump_bytes": len(self.ram_dump)}


@dataclass(frozen=True)
class BranchProbe:
    written_at: int
    target: int

    @property
    def expected_pc(self) -> int:
        return align_pc(self.target)

    def encode(self) -> bytes:
        return PROBE_STUB + struct.pack("<I", self.target & 0xFFFFFFFF)


@dataclass(frozen=True)
class Secrets:
    ssid: str
    passphrase: str


def encode_secrets(secrets: Secrets) -> bytes:
    ssid, passphrase = secrets.ssid.encode(), secrets.passphrase.encode()
    return SECRET_MAGIC + bytes([len(ssid)]) + ssid + bytes([len(passphrase)]) + passphrase


def extract_secrets(log: CrashLog) -> Optional[Secrets]:
    index = log.ram_dump.find(SECRET_MAGIC)
    if index < 0:
        return None
    cursor = index + len(SECRET_MAGIC)
    fields = []
    for _ in range(2):
        if cursor >= len(log.ram_dump):
            return None
        length = log.ram_dump[cursor]
        value = log.ram_dump[cursor + 1:cursor + 1 + length]
        if len(value) != length:
            return None
        fields.append(value.decode(errors="replace"))
        cursor += 1 + length
    return Secrets(ssid=fields[0], passphrase=fields[1])


@dataclass
class ChipConfig:
    executable_entries: Sequence[int] = ()
    window_length: int = 0x80000
    p_unstable: float = 0.05
    reinit_delay: int = s(1)
    reassociate_delay: int = s(2)
    exec_period: int = ms(50)
    wifi_powered: bool = True
    associated: bool = False
    ssid: str = "testnet"
    passphrase: str = "hunter22"
    secret_addr: int = DEFAULT_SECRET_ADDR
    dump_length: Optional[int] = None

    @classmethod
    def from_config(cls, configs, **overrides):
        values = dict(
            window_length=int(configs["WINDOW_LENGTH"]),
            p_unstable=float(configs["P_UNSTABLE"]),
            reinit_delay=s(configs["REINIT_DELAY_S"]),
            exec_period=ms(configs["WIFI_EXEC_PERIOD_MS"]),
        )
        values.update(overrides)
        return cls(**values)


class ComboChip:
    def __init__(self, engine: Engine, cfg: ChipConfig, firmware_stream: str = "firmware"):
        self.engine = engine
        self.cfg = cfg
        self.window = SharedWindow(length=cfg.window_length, mapped=False)
        entries = sorted(self.window.to_wifi(addr) for addr in cfg.executable_entries)
        for addr in cfg.executable_entries:
            if not self.window.contains(addr, 4):
                raise PreconditionError(f"executable entry {to_hex(addr)} is outside the shared window")
        rng = engine.rng.stream(firmware_stream)
        image = bytearray(rng.integers(0, 256, WIFI_RAM_END - WIFI_RAM_BASE, dtype=np.uint8).tobytes())
        for entry in entries:
            offset = entry - WIFI_RAM_BASE
            if image[offset:offset + 4] == PROBE_STUB:
                image[offset] ^= 0xFF
        self.image = bytes(image)
        self.ram = WifiRam(data=bytearray(self.image), executable_regions=[(e, e + 4) for e in entries])
        self.crash_logs: List[CrashLog] = []
        self.state = "off"
        self.associated = False
        if cfg.wifi_powered:
            self._boot()

    @property
    def secrets(self) -> Secrets:
        return Secrets(self.cfg.ssid, self.cfg.passphrase)

    def start(self):
        return self.engine.process(self._exec_loop())

    def _boot(self):
        self.ram.data[:] = self.image
        self.ram.secret_region = None
        self.associated = False
        self.window.mapped = True
        self._set_state("running")
        if self.cfg.associated:
            self.engine.call_in(self.cfg.reassociate_delay if self.crash_logs else 0, self._associate)

    def _associate(self):
        if self.state != "running" or self.associated:
            return
        blob = encode_secrets(self.secrets)
        self.ram.write(self.cfg.secret_addr, blob)
        self.ram.secret_region = (self.cfg.secret_addr, len(blob))
        self.associated = True
        self.engine.record("chip.wifi.associated", True)

    def _set_state(self, state):
        self.state = state
        self.engine.record("chip.wifi.state", state)

    def _check_range(self, addr, n):
        if not self.window.contains(addr, n):
            raise OutOfWindow(f"{to_hex(addr)}+{n} leaves the shared window")

    def bt_write(self, addr: int, payload: bytes):
        if not self.window.mapped:
            raise Unmapped("Wi-Fi RAM is not mapped")
        self._check_range(addr, len(payload))
        self.ram.write(self.window.to_wifi(addr), payload)
        self.engine.record("sharedmem.bt_write", to_hex(addr))

    def bt_read(self, addr: int, n: int, stream: np.random.Generator) -> bytes:
        self._check_range(addr, n)
        if not self.window.mapped:
            return bytes(n)
        draw = stream.random()
        if draw < self.cfg.p_unstable / 2:
            return bytes(n)
        if draw < self.cfg.p_unstable:
            self.engine.record("sharedmem.bt_crash", to_hex(addr))
            raise BtCrash(f"Bluetooth read of {to_hex(addr)} hit a block that was not ready")
        return self.ram.read(self.window.to_wifi(addr), n)

    def wifi_execute_check(self, now: int) -> Union[str, CrashLog]:
        if self.state != "running":
            return "running"
        for start, _ in self.ram.executable_regions:
            word = self.ram.read(start, PROBE_LEN)
            original = self.image[start - WIFI_RAM_BASE:start - WIFI_RAM_BASE + 4]
            if word[:4] == PROBE_STUB:
                target = struct.unpack("<I", word[4:8])[0]
                if is_valid_code(target):
                    continue
                return self._crash(CAUSE_PREFETCH_ABORT, align_pc(target), now)
            if word[:4] != original:
                return self._crash(CAUSE_ILLEGAL_INSTRUCTION, start, now)
        return "running"

    def _crash(self, cause: str, pc: int, now: int) -> CrashLog:
        dump = bytes(self.ram.data if self.cfg.dump_length is None else self.ram.data[:self.cfg.dump_length])
        log = CrashLog(cause=cause, pc=pc, ram_dump=dump, at=now, associated=self.associated)
        self.crash_logs.append(log)
        self.engine.record("chip.wifi.crash", to_hex(pc))
        self.window.mapped = False
        self.associated = False
        self._set_state("reinit")
        self.engine.call_in(self.cfg.reinit_delay, self._boot)
        return log

    def _exec_loop(self):
        while True:
            yield self.engine.timeout(self.cfg.exec_period)
            self.wifi_execute_check(self.engine.now)


def probe_target(window: SharedWindow, bt_addr: int, low_bits: int) -> int:
    """Invalid branch target that encodes the probe's own window offset."""
    return PROBE_TARGET_BASE | ((bt_addr - window.bt_base) << 2) | (low_bits & 0x3)


def probe_address(window: SharedWindow, pc: int) -> Optional[int]:
    if pc & PROBE_TARGET_BASE != PROBE_TARGET_BASE:
        return None
    offset = (pc & ~PROBE_TARGET_BASE & 0xFFFFFFFF) >> 2
    return window.bt_base + offset if offset < window.length else None


@dataclass
class FinderResult:
    found: List[int] = field(default_factory=list)
    crashes: List[CrashLog] = field(default_factory=list)
    block_passes: int = 0
    unresolved: List[int] = field(default_factory=list)
    completed: bool = False
    aborted: Optional[str] = None


def find_executable_regions(chip: ComboChip, stream: np.random.Generator, block: int = 0x1000,
                            wait_after_crash: int = s(10), budget: Optional[int] = None,
                            deadline: Optional[int] = None, verify_writes: bool = False,
                            max_stalled_passes: int = 3, bt=None) -> FinderResult:
    """Tile the window with self-identifying branch probes, one block at a time.

    A crash either names the probe through its pc or, for entries that do not
    start at a probe boundary, names the entry itself; the latter is confirmed
    with a dedicated probe. Found entries are left untouched on later passes,
    every crash reloads Wi-Fi RAM so they hold firmware code again. A block whose
    crashes name nothing new for max_stalled_passes passes is given up on.

    bt is the Bluetooth-side access path (bt_write/bt_read), the chip itself if omitted.
    """
    engine, window = chip.engine, chip.window
    bt = chip if bt is None else bt
    result = FinderResult()
    settle = 2 * chip.cfg.exec_period

    def time_left():
        return deadline is None or engine.now < deadline

    def segments(start, end, skip):
        runs, payload, run_start = [], bytearray(), start
        for addr in range(start, end - PROBE_LEN + 1, PROBE_LEN):
            if any(addr < found + 4 and found < addr + PROBE_LEN for found in skip):
                if payload:
                    runs.append((run_start, bytes(payload)))
                payload, run_start = bytearray(), addr + PROBE_LEN
            else:
                payload += BranchProbe(addr, probe_target(window, addr, int(stream.integers(0, 4)))).encode()
        if payload:
            runs.append((run_start, bytes(payload)))
        return runs

    def write(addr, payload):
        bt.bt_write(addr, payload)
        if verify_writes:
            try:
                bt.bt_read(addr, len(payload), stream)
            except BtCrash as e:
                raise AbortedByBtCrash(str(e))

    def confirm(entry):
        engine.run_until(engine.now + wait_after_crash)
        probe = BranchProbe(entry, probe_target(window, entry, int(stream.integers(0, 4))))
        write(entry, probe.encode())
        crashes_before = len(chip.crash_logs)
        engine.run_until(engine.now + settle)
        new = chip.crash_logs[crashes_before:]
        result.crashes.extend(new)
        return any(log.pc == probe.expected_pc for log in new)

    try:
        for block_start in range(window.bt_base, window.bt_base + window.length, block):
            block_end = min(block_start + block, window.bt_base + window.length)
            stalled = 0
            while time_left():
                if budget is not None and result.block_passes >= budget:
                    return result
                if stalled >= max_stalled_passes:
                    print_with_color(f"Giving up on block {to_hex(block_start)}, its crashes name no entry", "yellow")
                    result.unresolved.append(block_start)
                    break
                result.block_passes += 1
                crashes_before = len(chip.crash_logs)
                for addr, payload in segments(block_start, block_end, result.found):
                    write(addr, payload)
                engine.run_until(engine.now + settle)
                new = chip.crash_logs[crashes_before:]
                if not new:
                    break
                result.crashes.extend(new)
                found_before = len(result.found)
                for log in new:
                    entry = probe_address(window, log.pc)
                    if entry is None and log.cause == CAUSE_ILLEGAL_INSTRUCTION:
                        candidate = window.to_bt(log.pc)
                        entry = candidate if window.contains(candidate, 4) and confirm(candidate) else None
                    if entry is not None and entry not in result.found:
                        result.found.append(entry)
                        print_with_color(f"Found executable entry {to_hex(entry)}", "green")
                stalled = 0 if len(result.found) > found_before else stalled + 1
                engine.run_until(engine.now + wait_after_crash)
            if not time_left():
                return result
        result.completed = True
        return result
    except Unmapped as e:
        result.aborted = str(e)
        return result
    finally:
        result.found.sort()


def plant_probe(chip: ComboChip, probe: BranchProbe, wait: int, bt=None) -> Optional[CrashLog]:
    crashes_before = len(chip.crash_logs)
    (chip if bt is None else bt).bt_write(probe.written_at, probe.encode())
    chip.engine.run_until(chip.engine.now + wait)
    new = chip.crash_logs[crashes_before:]
    return new[0] if new else None


def export_crash_log(log: CrashLog, out_dir, index: int) -> str:
    path = os.path.join(out_dir, "crashlogs", f"{index:03d}_{log.cause}")
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "metadata.json"), "w") as outfile:
        json.dump(log.metadata(), outfile, indent=4)
    with open(os.path.join(path, "SoC_RAM.bin"), "wb") as outfile:
        outfile.write(log.ram_dump)
    return path


@dataclass
class ReadoutResult:
    bytes_read: int = 0
    secrets: Optional[Secrets] = None
    crashed: bool = False


def bt_readout(chip: ComboChip, stream: np.random.Generator, chunk: int = 0x1000, bt=None) -> ReadoutResult:
    result = ReadoutResult()
    window = chip.window
    bt = chip if bt is None else bt
    buffer = bytearray()
    for addr in range(window.bt_base, window.bt_base + window.length, chunk):
        try:
            buffer += bt.bt_read(addr, min(chunk, window.bt_base + window.length - addr), stream)
        except BtCrash:
            result.crashed = True
            break
        result.bytes_read = len(buffer)
    result.secrets = extract_secrets(CrashLog(cause="readout", pc=0, ram_dump=bytes(buffer)))
    return result
