"""End-to-end smart-hotel scenarios over the simulated world.

A ``World`` is fully determined by its ``ScenarioConfig`` and the ordered
list of actions applied to it (each with the user's approve/decline
answers), so a run directory only has to store that journal: replaying it
rebuilds the exact state, and event logs stay byte-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import sidechannel
from .cloud import CloudService, DeviceState, OperationClass
from .device import IoTDevice, Phase
from .entropy import Entropy
from .errors import DecodeError, U2FiError
from .gateway import Gateway, Mode, PROVISIONING_WINDOW
from .net import Broker, EventLog, Radio, RadioConfig, SimClock
from .token import U2FToken

STATE_ENV = "U2FI_STATE_DIR"
STATE_FILE = "state.json"
LOG_FILE = "events.jsonl"
MAX_PROVISION_ATTEMPTS = 5


@dataclass
class ScenarioConfig:
    seed: int = 1
    device_count: int = 1
    noise: RadioConfig = field(default_factory=RadioConfig)
    auto_approve: bool = True
    policy_overrides: dict = field(default_factory=dict)
    ssid: str = "HotelGuest"
    passphrase: str = "s3cret-infrastructure-psk"
    account: str = "guest@hotel"

    def __post_init__(self):
        if self.device_count < 0:
            raise ValueError("device_count must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        for cls in self.policy_overrides.values():
            OperationClass(cls)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = asdict(self.noise)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        d["noise"] = RadioConfig(**d.get("noise", {}))
        return cls(**d)


class Eavesdropper:
    """A radio listener that sees only frame lengths, like any device."""

    def __init__(self, radio: Radio, name: str = "adversary"):
        self.captures: list[np.ndarray] = []
        radio.listen(name, self.captures.append)

    def harvest(self) -> bytes:
        if not self.captures:
            raise DecodeError("nothing captured")
        return sidechannel.harvest(self.captures[-1])


class World:
    def __init__(self, cfg: ScenarioConfig, approver: Callable[[dict], bool] | None = None):
        self.cfg = cfg
        self.approver = approver
        self.clock = SimClock()
        self.log = EventLog(self.clock)
        root = Entropy(cfg.seed)
        self._ids = root.fork("ids")
        self.broker = Broker(self.log)
        self.radio = Radio(self.log, cfg.noise)
        self.token = U2FToken(root.fork("token"), self.clock)
        self.gateway = Gateway(
            self._ids.bytes(8), cfg.ssid, self.broker, self.radio, self.clock, self.log,
            rng=root.fork("gateway"), on_visual_cue=self._visual_cue,
        )
        self.cloud = CloudService(self.broker, self.clock, self.log, rng=root.fork("cloud"))
        self.cloud.attach_gateway(self.gateway.gateway_id, cfg.account, cfg.ssid, cfg.passphrase)
        for cmd, cls in cfg.policy_overrides.items():
            self.cloud.set_policy(cmd, cls)
        self.devices: list[IoTDevice] = []
        self.adversary = Eavesdropper(self.radio)
        self.gateway.attach_token(self.token)

    # -- the human ----------------------------------------------------------

    def _approve(self, info: dict) -> bool:
        if self.approver is None:
            return self.cfg.auto_approve
        return bool(self.approver(info))

    def _visual_cue(self, info: dict) -> None:
        approved = self._approve(info)
        self.log.event("user", "presence_prompt", command=info["command"], approved=approved)
        if approved and self.token.inserted:
            self.clock.advance(1.0)
            self.token.press_button(self.clock.now())
            self.log.event("token", "presence", until=self.token.presence_armed_until)

    # -- steps --------------------------------------------------------------

    def _settle(self) -> None:
        self.broker.pump()

    def enroll_token(self) -> bool:
        self.clock.advance(1.0)
        self.log.event("scenario", "enroll_token", account=self.cfg.account)
        before = len(self.cloud.account(self.cfg.account).bindings)
        self.cloud.enroll_token(self.cfg.account, self.gateway.gateway_id)
        self._settle()
        return len(self.cloud.account(self.cfg.account).bindings) > before

    def provision_device(self) -> IoTDevice:
        dev = IoTDevice(self._ids.bytes(8), self.broker, self.radio, self.clock, self.log)
        self.devices.append(dev)
        self.log.event("scenario", "provision_device", device=dev.device_id.hex())
        for _ in range(MAX_PROVISION_ATTEMPTS):
            self.clock.advance(1.0)
            self.gateway.tick()
            if self.gateway.mode is not Mode.IDLE:
                self.clock.advance(PROVISIONING_WINDOW + 1.0)
                self.gateway.tick()
            try:
                self.gateway.press_wps()
            except U2FiError as exc:
                self.log.event("scenario", "error", error=exc.code)
                break
            self._settle()
            if dev.phase is not Phase.BLANK:
                break
        if dev.phase is Phase.ENROLLING:
            # ceremony failed or was declined; the device times out
            dev.reset()
        return dev

    def checkin(self, device_count: int | None = None) -> bool:
        n = self.cfg.device_count if device_count is None else device_count
        self.log.event("scenario", "checkin", devices=n)
        if not self.enroll_token():
            self.log.event("scenario", "checkin_failed", reason="token enrollment")
            return False
        for _ in range(n):
            self.provision_device()
        bound = sum(d.phase is Phase.BOUND for d in self.devices)
        self.log.event("scenario", "checkin_done", bound=bound, wanted=n)
        return bound == n

    def device(self, ref) -> IoTDevice:
        if isinstance(ref, IoTDevice):
            return ref
        s = str(ref)
        if s.isdigit() and int(s) < len(self.devices):
            return self.devices[int(s)]
        for d in self.devices:
            if d.device_id.hex() == s.lower():
                return d
        raise KeyError(f"no device {ref!r}")

    def operation(self, ref, command: str) -> tuple[bool, str | None]:
        dev = self.device(ref)
        self.clock.advance(1.0)
        self.log.event("scenario", "operation", device=dev.device_id.hex(), command=command)
        try:
            self.cloud.execute_operation(dev.device_id, command)
        except U2FiError as exc:
            self._settle()
            self.log.event("scenario", "operation_error", device=dev.device_id.hex(), error=exc.code)
            return False, exc.code
        self._settle()
        if command == "open" and not dev.camera_on:
            return False, "CommandRejected"
        return True, None

    def checkout(self) -> int:
        self.clock.advance(1.0)
        self.log.event("scenario", "checkout")
        self.gateway.on_token_removed()
        self._settle()
        revoked = self.cloud.last_unbind_count
        if self.devices:
            self.operation(0, "open")
        self.log.event("scenario", "checkout_done", revoked=revoked)
        return revoked

    def apply(self, action: dict):
        kind = action["op"]
        if kind == "checkin":
            return self.checkin(action.get("devices"))
        if kind == "op":
            return self.operation(action["device"], action["command"])
        if kind == "checkout":
            return self.checkout()
        if kind == "policy":
            self.cloud.set_policy(action["command"], action["cls"])
            self.log.event("scenario", "policy", command=action["command"], cls=action["cls"])
            return True
        raise ValueError(f"unknown action {kind!r}")

    def state_dump(self) -> dict:
        return {
            "time": self.clock.now(),
            "gateway": {"id": self.gateway.hex_id, "mode": self.gateway.mode.value},
            "token": {"inserted": self.token.inserted, "counter": self.token.counter},
            "devices": [
                {
                    "id": d.device_id.hex(),
                    "phase": d.phase.value,
                    "camera_on": d.camera_on,
                    "cloud_state": self.cloud.devices[d.device_id].state.value if d.device_id in self.cloud.devices else None,
                }
                for d in self.devices
            ],
        }

    def bound_tokens(self) -> list[bytes]:
        return [r.access_token.token_bytes for r in self.cloud.devices.values() if r.state is DeviceState.BOUND]


# -- scenario entry points --------------------------------------------------

def run_checkin(cfg: ScenarioConfig, approver=None) -> tuple[World, bool]:
    world = World(cfg, approver)
    ok = world.checkin()
    return world, ok


def run_operation(world: World, device, command: str) -> tuple[bool, str | None]:
    return world.operation(device, command)


def run_checkout(world: World) -> int:
    return world.checkout()


def run_attack(cfg: ScenarioConfig, mode: str) -> dict:
    """Broadcast one provisioning payload and report what a length-only
    eavesdropper recovers."""
    if mode not in ("legacy", "u2fi"):
        raise ValueError("mode must be 'legacy' or 'u2fi'")
    clock = SimClock()
    log = EventLog(clock)
    broker = Broker(log)
    radio = Radio(log, cfg.noise)
    adversary = Eavesdropper(radio)
    honest: list[np.ndarray] = []
    radio.listen("honest-device", honest.append)

    if mode == "legacy":
        payload = sidechannel.LegacyPayload(cfg.ssid, cfg.passphrase).to_bytes()
        log.event("phone", "smartcfg_broadcast")
        radio.broadcast_frames(sidechannel.encode(payload), sender="phone")
    else:
        gw = Gateway(Entropy(cfg.seed).fork("ids").bytes(8), cfg.ssid, broker, radio, clock, log,
                     rng=Entropy(cfg.seed).fork("gateway"))
        gw.press_wps()

    try:
        recovered = adversary.harvest()
    except DecodeError as exc:
        recovered, adv_error = b"", exc.code
    else:
        adv_error = None
    try:
        sidechannel.decode(honest[-1])
        honest_ok = True
    except DecodeError:
        honest_ok = False

    secret = cfg.passphrase.encode()
    found = bool(secret) and secret in recovered
    return {
        "mode": mode,
        "adversary_decoded": adv_error is None,
        "adversary_error": adv_error,
        "recovered_hex": recovered.hex(),
        "passphrase_recovered": cfg.passphrase if found else None,
        "honest_device_decoded": honest_ok,
        "log": log,
    }


# -- run-directory persistence ----------------------------------------------

def default_state_dir() -> Path:
    return Path(os.environ.get(STATE_ENV, ".u2fi"))


def save_state(state_dir: Path, cfg: ScenarioConfig, journal: list[dict]) -> None:
    state_dir.mkdir(parents=True, exist_ok=True)
    tmp = state_dir / (STATE_FILE + ".tmp")
    tmp.write_text(json.dumps({"version": 1, "config": cfg.to_dict(), "journal": journal}, indent=1, sort_keys=True))
    tmp.replace(state_dir / STATE_FILE)


def load_state(state_dir: Path) -> tuple[ScenarioConfig, list[dict]]:
    path = state_dir / STATE_FILE
    if not path.exists():
        raise FileNotFoundError(f"no scenario state in {state_dir}; run 'checkin' first")
    data = json.loads(path.read_text())
    return ScenarioConfig.from_dict(data["config"]), list(data["journal"])


def replay(cfg: ScenarioConfig, journal: list[dict]) -> World:
    """Rebuild a world by re-applying journaled actions with their answers."""
    answers: list[bool] = []
    world = World(cfg, approver=lambda info: answers.pop(0) if answers else False)
    for action in journal:
        answers[:] = list(action.get("answers", []))
        world.apply(action)
    return world
