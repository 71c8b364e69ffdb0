from typing import Optional

from scripts.pta import PtaController
from scripts.seci import SeciLink
from scripts.sharedmem import ComboChip
from scripts.sim_core import Core, Engine
from scripts.utils import PreconditionError, print_debug, to_hex


class CoreController:
    core = None

    def __init__(self, engine: Engine, pta: Optional[PtaController] = None, seci: Optional[SeciLink] = None,
                 chip: Optional[ComboChip] = None):
        self.engine = engine
        self.pta = pta
        self.seci = seci
        self.chip = chip
        self.actions = 0

    def act(self, action, detail=""):
        self.actions += 1
        self.engine.record(f"attacker.{self.core.value}", f"{action} {detail}".strip())
        print_debug(f"[{self.engine.now} ns] {self.core.value} attacker: {action} {detail}")

    def _need(self, component, name):
        if component is None:
            raise PreconditionError(f"this scenario has no {name} backend")
        return component

    def observed_edges(self, line, start=0, end=None, rising=True):
        return self._need(self.pta, "PTA").observed_edges(line, self.core, start, end, rising)


class BluetoothCoreController(CoreController):
    core = Core.BLUETOOTH

    def set_request(self, level: bool):
        self.act("request", int(level))
        self._need(self.pta, "PTA").set_request(level)

    def set_priority(self, level: bool):
        self.act("priority", int(level))
        self._need(self.pta, "PTA").set_priority(level)

    def flood(self, use_priority: bool):
        self.set_priority(use_priority)
        self.set_request(True)

    def release(self):
        self.set_request(False)
        self.set_priority(False)

    def bt_write(self, addr: int, payload: bytes):
        self.act("bt_write", f"{to_hex(addr)} {len(payload)}")
        self._need(self.chip, "shared RAM").bt_write(addr, payload)

    def bt_read(self, addr: int, n: int, stream):
        self.act("bt_read", f"{to_hex(addr)} {n}")
        return self._need(self.chip, "shared RAM").bt_read(addr, n, stream)


class WifiCoreController(CoreController):
    core = Core.WIFI

    def __init__(self, engine, pta=None, seci=None, chip=None, agent=None):
        super().__init__(engine, pta, seci, chip)
        self.agent = agent

    def force_grant(self, denied: Optional[bool]):
        self.act("grant", "release" if denied is None else int(denied))
        self._need(self.pta, "PTA").force_grant(denied)

    def withhold_grants(self, withhold: bool):
        self.act("withhold", int(withhold))
        self._need(self.agent, "SECI grant").set_withhold(withhold)

    def start_sniffing(self):
        self.act("d11_poll", "start")
        return self._need(self.seci, "SECI").start_d11_poller()

    def d11_polls(self):
        return list(self._need(self.seci, "SECI").polls)
