"""Secure gateway: provisioning windows, bootstrap broadcast, U2F relay, unbind."""

from __future__ import annotations

import enum
import hashlib
import hmac
import logging
from dataclasses import dataclass

from . import sidechannel
from .entropy import Entropy
from .errors import (
    GatewayBusy,
    NonceMismatch,
    TokenAbsent,
    U2FiError,
    WindowAlreadyOpen,
    WindowClosed,
)
from .net import Broker, BrokerMessage, EventLog, Radio, SimClock
from .token import PresenceMode, U2FToken

logger = logging.getLogger(__name__)

PROVISIONING_WINDOW = 120.0

U2F_HOST = "u2f_host"
U2F_RESPONSE = "u2f_response"
CLOUD_BIND = "cloud/bind"
CLOUD_UNBIND = "cloud/unbind"


def ctl_topic(gateway_id: bytes) -> str:
    return f"gateway/{gateway_id.hex()}/ctl"


def device_topic(device_id: bytes) -> str:
    return f"device/{device_id.hex()}/cmd"


def key_handle_digest(key_handle: bytes) -> str:
    return hashlib.sha256(key_handle).hexdigest()


class Mode(enum.Enum):
    IDLE = "idle"
    PROVISIONING = "provisioning"
    AWAITING_TOKEN = "awaiting_token"
    RELAYING = "relaying"


# Cloud-initiated ceremonies (token registration, critical operations) enter
# AWAITING_TOKEN straight from IDLE; RELAYING returns to IDLE once the cloud
# reports the outcome.
TRANSITIONS = frozenset({
    (Mode.IDLE, Mode.PROVISIONING),
    (Mode.PROVISIONING, Mode.IDLE),
    (Mode.PROVISIONING, Mode.AWAITING_TOKEN),
    (Mode.AWAITING_TOKEN, Mode.RELAYING),
    (Mode.AWAITING_TOKEN, Mode.IDLE),
    (Mode.IDLE, Mode.AWAITING_TOKEN),
    (Mode.RELAYING, Mode.IDLE),
})


@dataclass(frozen=True)
class EnrollmentRequest:
    device_id: bytes
    nonce_echo: bytes


class Gateway:
    def __init__(
        self,
        gateway_id: bytes,
        ssid: str,
        broker: Broker,
        radio: Radio,
        clock: SimClock,
        log: EventLog,
        rng: Entropy | None = None,
        on_visual_cue=None,
    ):
        if len(gateway_id) != 8:
            raise ValueError("gateway id must be 8 bytes")
        self.gateway_id = gateway_id
        self.ssid = ssid
        self.broker, self.radio, self.clock, self.log = broker, radio, clock, log
        self.rng = rng or Entropy()
        # the human in the loop: called with the cue, may press the token button
        self.on_visual_cue = on_visual_cue
        self.mode = Mode.IDLE
        self.deadline: float | None = None
        self.ceremony: dict | None = None
        self.attached_token: U2FToken | None = None
        self._nonce: bytes | None = None
        self._used_nonces: set[bytes] = set()
        self.key_handle_digests: set[str] = set()
        self.inbound: list[BrokerMessage] = []
        broker.subscribe(U2F_HOST, self._on_u2f_host, name="gateway")
        broker.subscribe(ctl_topic(gateway_id), self._on_ctl, name="gateway")

    @property
    def hex_id(self) -> str:
        return self.gateway_id.hex()

    def _now(self, now):
        return self.clock.now() if now is None else now

    def _transition(self, new: Mode, deadline: float | None = None, ceremony: dict | None = None):
        if (self.mode, new) not in TRANSITIONS:
            raise RuntimeError(f"illegal gateway transition {self.mode.value} -> {new.value}")
        self.log.event("gateway", "transition", frm=self.mode.value, to=new.value)
        self.mode, self.deadline = new, deadline
        if new in (Mode.IDLE, Mode.PROVISIONING):
            self.ceremony = None
        elif ceremony is not None:
            self.ceremony = ceremony

    def _expire(self, now: float) -> None:
        if self.deadline is not None and now > self.deadline:
            self.log.event("gateway", "window_expired", mode=self.mode.value)
            if self.mode is Mode.AWAITING_TOKEN:
                self._fail_ceremony("WindowClosed")
            self._nonce = None
            self._transition(Mode.IDLE)

    def tick(self, now: float | None = None) -> None:
        """Let deadlines lapse at the current logical time."""
        self._expire(self._now(now))

    # -- token --------------------------------------------------------------

    def attach_token(self, token: U2FToken) -> None:
        token.insert()
        self.attached_token = token
        self.log.event("gateway", "token_inserted")

    def on_token_removed(self, now: float | None = None) -> None:
        now = self._now(now)
        if self.attached_token is not None:
            self.attached_token.remove()
        self.attached_token = None
        self.log.event("gateway", "token_removed")
        if self.mode in (Mode.AWAITING_TOKEN, Mode.RELAYING):
            self._fail_ceremony("CeremonyAborted")
            self.log.event("gateway", "ceremony_aborted")
            self._transition(Mode.IDLE)
        elif self.mode is Mode.PROVISIONING:
            self._nonce = None
            self._transition(Mode.IDLE)
        self.broker.publish(
            CLOUD_UNBIND,
            b"unbind",
            {"gateway": self.hex_id, "key_handles": ",".join(sorted(self.key_handle_digests))},
        )

    # -- provisioning -------------------------------------------------------

    def press_wps(self, now: float | None = None) -> sidechannel.BootstrapPayload:
        now = self._now(now)
        self._expire(now)
        if self.mode is Mode.PROVISIONING:
            raise WindowAlreadyOpen("a provisioning window is already open")
        if self.mode is not Mode.IDLE:
            raise GatewayBusy(f"gateway is {self.mode.value}")
        self._nonce = self.rng.bytes(16)
        self._transition(Mode.PROVISIONING, deadline=now + PROVISIONING_WINDOW)
        payload = sidechannel.BootstrapPayload(self.ssid, self._nonce, self.gateway_id)
        frames = sidechannel.encode(payload.to_bytes())
        self.log.event("gateway", "bootstrap_broadcast", frames=int(frames.size))
        self.radio.broadcast_frames(frames, sender="gateway")
        return payload

    def handle_enrollment(self, req: EnrollmentRequest, now: float | None = None) -> None:
        now = self._now(now)
        self._expire(now)
        if self.mode is not Mode.PROVISIONING:
            raise WindowClosed("no provisioning window is open")
        nonce = self._nonce
        if nonce is None or req.nonce_echo in self._used_nonces or not hmac.compare_digest(req.nonce_echo, nonce):
            raise NonceMismatch("enrollment nonce does not match this window")
        self._used_nonces.add(nonce)
        self._nonce = None
        self.log.event("gateway", "enrollment_accepted", device=req.device_id.hex())
        self._transition(
            Mode.AWAITING_TOKEN,
            deadline=now + PROVISIONING_WINDOW,
            ceremony={"kind": "bind", "device": req.device_id.hex(), "challenge": None},
        )
        self.broker.publish(CLOUD_BIND, b"bind", {"device": req.device_id.hex(), "gateway": self.hex_id})

    def _on_ctl(self, msg: BrokerMessage) -> None:
        self.inbound.append(msg)
        if msg.payload == b"enroll":
            try:
                req = EnrollmentRequest(bytes.fromhex(msg.prop("device", "")), bytes.fromhex(msg.prop("nonce", "")))
                self.handle_enrollment(req)
            except (U2FiError, ValueError) as exc:
                code = getattr(exc, "code", "MalformedRequest")
                self.log.event("gateway", "enrollment_rejected", error=code)
                if msg.prop("device"):
                    self.broker.publish(
                        device_topic(bytes.fromhex(msg.prop("device"))), b"ENROLL_REJECTED", {"error": code}
                    )
        elif msg.payload == b"ceremony_done":
            if self.mode is Mode.RELAYING and self.ceremony and self.ceremony.get("challenge") == msg.prop("challenge"):
                self._transition(Mode.IDLE)
            elif (
                self.mode is Mode.AWAITING_TOKEN
                and self.ceremony
                and self.ceremony.get("challenge") in (None, msg.prop("challenge"))
                and msg.prop("ok") == "0"
            ):
                # the cloud gave up before a challenge reached us
                self._transition(Mode.IDLE)
        else:
            logger.warning("gateway: ignoring control message %r", msg.payload[:32])
            self.log.event("gateway", "ignored", topic=msg.topic)

    # -- U2F relay ----------------------------------------------------------

    def _fail_ceremony(self, code: str) -> None:
        if self.ceremony and self.ceremony.get("challenge"):
            self.broker.publish(
                U2F_RESPONSE, b"error", {"challenge": self.ceremony["challenge"], "error": code, "gateway": self.hex_id}
            )

    def _on_u2f_host(self, msg: BrokerMessage) -> None:
        self.inbound.append(msg)
        if msg.prop("gateway") not in (None, self.hex_id):
            return
        self.on_broker_message(msg.topic, msg.payload, msg.properties)

    def on_broker_message(self, topic: str, payload: bytes, properties: dict | None = None) -> None:
        props = properties or {}
        if topic != U2F_HOST:
            return
        command = payload.decode(errors="replace")
        if command not in ("register", "authenticate"):
            logger.warning("gateway: unknown u2f_host command %r", command)
            self.log.event("gateway", "ignored", command=command[:32])
            return
        now = self.clock.now()
        self._expire(now)
        challenge_hex = props.get("challenge", "")
        awaiting_bind = (
            self.mode is Mode.AWAITING_TOKEN
            and self.ceremony is not None
            and self.ceremony.get("challenge") is None
            and self.ceremony.get("device") == props.get("device")
        )
        if awaiting_bind:
            self.ceremony["challenge"] = challenge_hex
        elif self.mode is Mode.IDLE:
            self._transition(
                Mode.AWAITING_TOKEN,
                deadline=now + PROVISIONING_WINDOW,
                ceremony={"kind": command, "challenge": challenge_hex},
            )
        else:
            self.broker.publish(
                U2F_RESPONSE, b"error", {"challenge": challenge_hex, "error": "GatewayBusy", "gateway": self.hex_id}
            )
            return

        self.log.event("gateway", "visual_cue", command=command)
        if self.on_visual_cue is not None:
            self.on_visual_cue({"command": command, "gateway": self.hex_id, "time": now})
        now = self.clock.now()

        try:
            token = self.attached_token
            if token is None or not token.inserted:
                raise TokenAbsent("no token attached to the gateway")
            app = bytes.fromhex(props["app"])
            challenge = bytes.fromhex(challenge_hex)
            if command == "register":
                resp = token.handle_register(app, challenge, now=now)
                self.key_handle_digests.add(key_handle_digest(resp.key_handle))
            else:
                kh = bytes.fromhex(props["key_handle"])
                mode = PresenceMode(props.get("mode", PresenceMode.REQUIRED.value))
                resp = token.handle_authenticate(app, challenge, kh, mode, now=now)
                self.key_handle_digests.add(key_handle_digest(kh))
        except U2FiError as exc:
            self.log.event("gateway", "token_error", error=exc.code)
            self._fail_ceremony(exc.code)
            self._transition(Mode.IDLE)
            return

        self.log.event("gateway", "token_response", command=command)
        self._transition(Mode.RELAYING)
        self.broker.publish(
            U2F_RESPONSE,
            command.encode(),
            {"challenge": challenge_hex, "response": resp.to_bytes().hex(), "gateway": self.hex_id},
        )
