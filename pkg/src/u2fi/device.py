"""Emulated headless IoT device with a camera as its critical actuator."""

from __future__ import annotations

import enum
import hmac

from . import sidechannel
from .cloud import U2F_AUTHENTICATED, command_tag
from .errors import CommandRejected, DecodeError
from .gateway import ctl_topic, device_topic
from .net import Broker, BrokerMessage, EventLog, Radio, SimClock

AUTH_WINDOW = 10.0


class Phase(enum.Enum):
    BLANK = "blank"
    ENROLLING = "enrolling"
    BOUND = "bound"
    REVOKED = "revoked"


class IoTDevice:
    def __init__(self, device_id: bytes, broker: Broker, radio: Radio, clock: SimClock, log: EventLog):
        if len(device_id) != 8:
            raise ValueError("device id must be 8 bytes")
        self.device_id = device_id
        self.name = f"device-{device_id.hex()}"
        self.broker, self.radio, self.clock, self.log = broker, radio, clock, log
        self.phase = Phase.BLANK
        self.camera_on = False
        self.access_token: bytes | None = None
        self.network: dict | None = None
        self.authenticated_until: float | None = None
        self._last_n = 0
        self._bootstrap: sidechannel.BootstrapPayload | None = None
        radio.listen(self.name, self.on_radio)
        broker.subscribe(device_topic(device_id), self._on_message, name=self.name)

    def __repr__(self):
        return f"IoTDevice({self.device_id.hex()}, {self.phase.value}, camera_on={self.camera_on})"

    def _event(self, kind: str, **detail):
        self.log.event(self.name, kind, **detail)

    def _set_phase(self, phase: Phase):
        self._event("phase", frm=self.phase.value, to=phase.value)
        self.phase = phase

    def on_radio(self, frames) -> None:
        if self.phase is not Phase.BLANK:
            return
        try:
            boot = sidechannel.BootstrapPayload.from_bytes(sidechannel.decode(frames))
        except DecodeError as exc:
            self._event("bootstrap_failed", error=exc.code)
            return
        except ValueError:
            self._event("bootstrap_failed", error="NotBootstrap")
            return
        self._bootstrap = boot
        self._set_phase(Phase.ENROLLING)
        self._event("enrollment_sent", gateway=boot.gateway_id.hex())
        self.broker.publish(
            ctl_topic(boot.gateway_id), b"enroll",
            {"device": self.device_id.hex(), "nonce": boot.enrollment_nonce.hex()},
        )

    def on_credentials(self, access_token: bytes, network_credential: dict) -> bool:
        if self.phase is not Phase.ENROLLING:
            self._event("credentials_ignored", phase=self.phase.value)
            return False
        self.access_token = bytes(access_token)
        self.network = dict(network_credential)
        self._last_n = 0
        self._set_phase(Phase.BOUND)
        return True

    def on_command(self, msg: BrokerMessage) -> None:
        command = msg.payload.decode(errors="replace")
        if self.phase is not Phase.BOUND or self.access_token is None:
            raise CommandRejected(f"device is {self.phase.value}")
        try:
            n = int(msg.prop("n", "0"))
            tag = bytes.fromhex(msg.prop("tag", ""))
        except ValueError:
            raise CommandRejected("malformed integrity tag") from None
        expected = command_tag(self.access_token, self.device_id, n, msg.payload)
        if not hmac.compare_digest(tag, expected):
            raise CommandRejected("integrity tag does not verify")
        if n <= self._last_n:
            raise CommandRejected("replayed command")
        self._last_n = n

        now = self.clock.now()
        if command == U2F_AUTHENTICATED:
            self.authenticated_until = now + AUTH_WINDOW
            self._event("authenticated", until=self.authenticated_until)
        elif command == "open":
            if self.authenticated_until is None or now > self.authenticated_until:
                self.authenticated_until = None
                self._event("open_rejected")
                raise CommandRejected("open requires a preceding U2F_AUTHENTICATED")
            self.authenticated_until = None
            self.camera_on = True
            self._event("camera_on")
        elif command == "close":
            self.camera_on = False
            self._event("camera_off")
        elif command == "REVOKE":
            self.camera_on = False
            self.access_token = None
            self.authenticated_until = None
            self._set_phase(Phase.REVOKED)
        else:
            self._event("executed", command=command[:32])

    def _on_message(self, msg: BrokerMessage) -> None:
        if msg.payload == b"CREDENTIALS":
            try:
                token = bytes.fromhex(msg.prop("access_token", ""))
            except ValueError:
                self._event("credentials_ignored", phase=self.phase.value)
                return
            self.on_credentials(token, {"ssid": msg.prop("ssid"), "passphrase": msg.prop("passphrase")})
        elif msg.payload == b"ENROLL_REJECTED":
            if self.phase is Phase.ENROLLING:
                self._event("enrollment_rejected", error=msg.prop("error"))
                self._set_phase(Phase.BLANK)
        else:
            try:
                self.on_command(msg)
            except CommandRejected as exc:
                self._event("command_rejected", reason=str(exc))

    def reset(self) -> None:
        """Factory reset back to a blank, listening device."""
        self.camera_on = False
        self.access_token = None
        self.network = None
        self.authenticated_until = None
        self._last_n = 0
        self._set_phase(Phase.BLANK)
