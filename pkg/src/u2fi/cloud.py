"""IoT cloud with an embedded U2F verification server.

The cloud keeps account/token bindings, issues and verifies challenges with
anti-clone counter enforcement, classifies user operations, dispatches
commands to devices and manages the access-token lifecycle.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import json
import struct
from dataclasses import dataclass, field

from . import u2f_core
from .entropy import Entropy
from .errors import (
    BindingNotAuthorized,
    CeremonyAborted,
    ChallengeExpired,
    CounterRegression,
    DeviceRevoked,
    NoSuchBinding,
    NoSuchDevice,
    U2FiError,
    UnknownChallenge,
    error_from_code,
)
from .gateway import CLOUD_BIND, CLOUD_UNBIND, U2F_HOST, U2F_RESPONSE, ctl_topic, device_topic, key_handle_digest
from .net import Broker, BrokerMessage, EventLog, SimClock
from .u2f_core import AuthResponse, RegistrationResponse

CHALLENGE_LIFETIME = 60.0
DEFAULT_ORIGIN = "https://iot.example"
U2F_AUTHENTICATED = "U2F_AUTHENTICATED"


class OperationClass(enum.Enum):
    REGISTRATION = "registration"
    CRITICAL = "critical"
    NON_CRITICAL = "non_critical"


class ChallengeKind(enum.Enum):
    REGISTRATION = "registration"
    AUTHENTICATION = "authentication"


class DeviceState(enum.Enum):
    PENDING = "pending"
    BOUND = "bound"
    REVOKED = "revoked"


DEFAULT_POLICY = {"open": OperationClass.CRITICAL, "register": OperationClass.REGISTRATION}


@dataclass
class Binding:
    public_key: bytes
    key_handle: bytes
    last_counter: int = 0
    gateway_id: str | None = None

    @property
    def digest(self) -> str:
        return key_handle_digest(self.key_handle)


@dataclass
class AccountRecord:
    account_id: str
    bindings: list[Binding] = field(default_factory=list)


@dataclass
class AccessToken:
    token_bytes: bytes
    issued_at: float
    revoked: bool = False

    def __repr__(self):
        return f"AccessToken(digest={hashlib.sha256(self.token_bytes).hexdigest()[:16]}, revoked={self.revoked})"


@dataclass
class DeviceRecord:
    device_id: bytes
    account_id: str
    bound_key_handle_digest: str
    access_token: AccessToken
    state: DeviceState = DeviceState.BOUND
    gateway_id: str | None = None
    sent: int = 0

    def export(self) -> dict:
        return {
            "device": self.device_id.hex(),
            "account": self.account_id,
            "key_handle_digest": self.bound_key_handle_digest,
            "token_digest": hashlib.sha256(self.access_token.token_bytes).hexdigest(),
            "issued_at": self.access_token.issued_at,
            "token_revoked": self.access_token.revoked,
            "state": self.state.value,
        }


@dataclass
class PendingChallenge:
    challenge: bytes
    kind: ChallengeKind
    account_id: str
    expires_at: float
    binding: Binding | None = None
    gateway_id: str | None = None
    purpose: dict = field(default_factory=dict)


def command_tag(access_token: bytes, device_id: bytes, n: int, command: bytes) -> bytes:
    """Keyed integrity tag binding a command to one device and sequence number."""
    return hmac.new(access_token, device_id + struct.pack(">Q", n) + command, hashlib.sha256).digest()


class CloudService:
    def __init__(
        self,
        broker: Broker,
        clock: SimClock,
        log: EventLog,
        rng: Entropy | None = None,
        origin: str = DEFAULT_ORIGIN,
        policy: dict | None = None,
    ):
        self.broker, self.clock, self.log = broker, clock, log
        self.rng = rng or Entropy()
        self.origin = origin
        self.app = u2f_core.hash_app_parameter(origin)
        self.policy: dict[str, OperationClass] = dict(DEFAULT_POLICY)
        for cmd, cls in (policy or {}).items():
            self.set_policy(cmd, cls)
        self.accounts: dict[str, AccountRecord] = {}
        self.devices: dict[bytes, DeviceRecord] = {}
        self.sites: dict[str, dict] = {}
        self.pending: dict[bytes, PendingChallenge] = {}
        self.outcomes: dict[bytes, str] = {}
        self._bind_requests: dict[bytes, dict] = {}
        self._issued_tokens: set[bytes] = set()
        self.last_unbind_count = 0
        broker.subscribe(U2F_RESPONSE, self._on_u2f_response, name="cloud")
        broker.subscribe(CLOUD_BIND, self._on_bind_request, name="cloud")
        broker.subscribe(CLOUD_UNBIND, self._on_unbind_notice, name="cloud")

    # -- configuration ------------------------------------------------------

    def account(self, account_id: str) -> AccountRecord:
        return self.accounts.setdefault(account_id, AccountRecord(account_id))

    def attach_gateway(self, gateway_id: bytes, account_id: str, ssid: str, passphrase: str) -> None:
        """Link a site gateway to a pre-authenticated account session."""
        self.account(account_id)
        self.sites[gateway_id.hex()] = {"account": account_id, "ssid": ssid, "passphrase": passphrase}

    def set_policy(self, command: str, cls: OperationClass | str) -> None:
        self.policy[command] = OperationClass(cls)

    def classify_operation(self, command: str) -> OperationClass:
        return self.policy.get(command, OperationClass.NON_CRITICAL)

    # -- challenges ---------------------------------------------------------

    def new_challenge(
        self,
        kind: ChallengeKind,
        account_id: str,
        binding: Binding | None = None,
        gateway_id: str | None = None,
        purpose: dict | None = None,
    ) -> bytes:
        kind = ChallengeKind(kind)
        acct = self.accounts.get(account_id)
        if kind is ChallengeKind.AUTHENTICATION:
            if binding is None:
                if acct is None or not acct.bindings:
                    raise NoSuchBinding(f"account {account_id!r} has no bound token")
                binding = acct.bindings[-1]
            elif acct is None or binding not in acct.bindings:
                raise NoSuchBinding("binding does not belong to the account")
        ch = self.rng.bytes(32)
        now = self.clock.now()
        self.pending[ch] = PendingChallenge(
            ch, kind, account_id, now + CHALLENGE_LIFETIME, binding, gateway_id, dict(purpose or {})
        )
        props = {"challenge": ch.hex(), "app": self.app.hex(), "mode": "required"}
        if gateway_id:
            props["gateway"] = gateway_id
        if "device" in (purpose or {}):
            props["device"] = purpose["device"]
        if kind is ChallengeKind.AUTHENTICATION:
            props["key_handle"] = binding.key_handle.hex()
        self.log.event("cloud", "challenge", ceremony=kind.value, challenge=ch.hex()[:16])
        self.broker.publish(U2F_HOST, b"register" if kind is ChallengeKind.REGISTRATION else b"authenticate", props)
        return ch

    def _take_pending(self, account_id: str, kind: ChallengeKind, challenge: bytes | None) -> PendingChallenge:
        if challenge is None:
            candidates = [p for p in self.pending.values() if p.account_id == account_id and p.kind is kind]
            if not candidates:
                raise UnknownChallenge("no pending challenge for this account")
            pend = candidates[-1]
        else:
            pend = self.pending.get(challenge)
            if pend is None or pend.account_id != account_id or pend.kind is not kind:
                raise UnknownChallenge("challenge was never issued in this context")
        del self.pending[pend.challenge]
        if self.clock.now() > pend.expires_at:
            raise ChallengeExpired("challenge has expired")
        return pend

    def finish_registration(
        self, account_id: str, resp: RegistrationResponse | bytes, challenge: bytes | None = None
    ) -> Binding:
        pend = self._take_pending(account_id, ChallengeKind.REGISTRATION, challenge)
        pubkey, kh = u2f_core.verify_registration(resp, self.app, pend.challenge)
        binding = Binding(pubkey, kh, 0, pend.gateway_id)
        self.account(account_id).bindings.append(binding)
        self.log.event("cloud", "verified", ceremony="registration", challenge=pend.challenge.hex()[:16])
        self.log.event("cloud", "token_registered", account=account_id, key_handle=binding.digest[:16])
        self.outcomes[pend.challenge] = "ok"
        self._after_success(pend)
        return binding

    def finish_authentication(
        self, account_id: str, resp: AuthResponse | bytes, challenge: bytes | None = None
    ) -> int:
        pend = self._take_pending(account_id, ChallengeKind.AUTHENTICATION, challenge)
        binding = pend.binding
        counter = u2f_core.verify_authentication(binding.public_key, self.app, pend.challenge, resp)
        if counter <= binding.last_counter:
            self.log.event("cloud", "counter_regression", seen=counter, last=binding.last_counter)
            raise CounterRegression(f"counter {counter} <= last seen {binding.last_counter}: clone or replay")
        binding.last_counter = counter
        self.log.event("cloud", "verified", ceremony="authentication", challenge=pend.challenge.hex()[:16], counter=counter)
        self.outcomes[pend.challenge] = "ok"
        self._after_success(pend)
        return counter

    def _after_success(self, pend: PendingChallenge) -> None:
        purpose = pend.purpose
        if "bind" in purpose:
            device_id = bytes.fromhex(purpose["bind"])
            req = self._bind_requests.get(device_id)
            if req is not None and req["account"] == pend.account_id:
                req["authorized"] = True
                req["key_handle_digest"] = pend.binding.digest
                self.bind_device(device_id, pend.account_id)
        elif "op" in purpose:
            rec = self.devices[bytes.fromhex(purpose["device"])]
            if rec.state is not DeviceState.BOUND:
                self.outcomes[pend.challenge] = "DeviceRevoked"
                return
            if self.classify_operation(purpose["op"]) is OperationClass.CRITICAL:
                self._send_device(rec, U2F_AUTHENTICATED, challenge=pend.challenge.hex()[:16])
            self._send_device(rec, purpose["op"], challenge=pend.challenge.hex()[:16])

    # -- broker handlers ----------------------------------------------------

    def _on_u2f_response(self, msg: BrokerMessage) -> None:
        try:
            ch = bytes.fromhex(msg.prop("challenge", ""))
        except ValueError:
            return
        pend = self.pending.get(ch)
        if pend is None:
            self.log.event("cloud", "verification_failed", error="UnknownChallenge")
            return
        ok = "1"
        try:
            if msg.payload == b"error":
                del self.pending[ch]
                raise error_from_code(msg.prop("error", "U2FiError"), "token ceremony failed")
            resp = bytes.fromhex(msg.prop("response", ""))
            if msg.payload == b"register" and pend.kind is ChallengeKind.REGISTRATION:
                self.finish_registration(pend.account_id, resp, ch)
            elif msg.payload == b"authenticate" and pend.kind is ChallengeKind.AUTHENTICATION:
                self.finish_authentication(pend.account_id, resp, ch)
            else:
                self.pending.pop(ch, None)
                raise UnknownChallenge("response kind does not match the challenge")
        except (U2FiError, ValueError) as exc:
            ok = "0"
            code = getattr(exc, "code", "MalformedResponse")
            self.outcomes[ch] = code
            self.log.event("cloud", "verification_failed", error=code, challenge=ch.hex()[:16])
            if "bind" in pend.purpose:
                self._bind_requests.pop(bytes.fromhex(pend.purpose["bind"]), None)
        if pend.gateway_id:
            self.broker.publish(ctl_topic(bytes.fromhex(pend.gateway_id)), b"ceremony_done", {"challenge": ch.hex(), "ok": ok})

    def _on_bind_request(self, msg: BrokerMessage) -> None:
        gateway = msg.prop("gateway", "")
        device_hex = msg.prop("device", "")
        site = self.sites.get(gateway)
        try:
            if site is None:
                raise NoSuchBinding("gateway is not attached to any account")
            device_id = bytes.fromhex(device_hex)
            account_id = site["account"]
            acct = self.accounts.get(account_id)
            if acct is None or not acct.bindings:
                raise NoSuchBinding("account has no registered token")
            binding = next((b for b in reversed(acct.bindings) if b.gateway_id == gateway), acct.bindings[-1])
            self._bind_requests[device_id] = {"account": account_id, "gateway": gateway, "authorized": False}
            self.log.event("cloud", "bind_request", device=device_hex)
            self.new_challenge(
                ChallengeKind.AUTHENTICATION, account_id, binding, gateway,
                purpose={"bind": device_hex, "device": device_hex},
            )
        except (U2FiError, ValueError) as exc:
            code = getattr(exc, "code", "MalformedRequest")
            self.log.event("cloud", "bind_rejected", error=code)
            if gateway:
                self.broker.publish(ctl_topic(bytes.fromhex(gateway)), b"ceremony_done", {"ok": "0", "error": code})

    def _on_unbind_notice(self, msg: BrokerMessage) -> None:
        digests = [d for d in msg.prop("key_handles", "").split(",") if d]
        total = sum(self.unbind_all(d) for d in digests)
        self.last_unbind_count = total
        self.log.event("cloud", "unbind_notice", revoked=total, gateway=msg.prop("gateway"))

    # -- devices ------------------------------------------------------------

    def bind_device(self, device_id: bytes, account_id: str) -> DeviceRecord:
        req = self._bind_requests.get(device_id)
        if req is None or not req["authorized"] or req["account"] != account_id:
            raise BindingNotAuthorized("no completed U2F ceremony for this binding request")
        del self._bind_requests[device_id]
        while True:
            token_bytes = self.rng.bytes(32)
            if token_bytes not in self._issued_tokens:
                break
        self._issued_tokens.add(token_bytes)
        rec = DeviceRecord(
            device_id, account_id, req["key_handle_digest"],
            AccessToken(token_bytes, self.clock.now()), DeviceState.BOUND, req["gateway"],
        )
        self.devices[device_id] = rec
        self.log.event(
            "cloud", "token_issued", device=device_id.hex(),
            token=hashlib.sha256(token_bytes).hexdigest()[:16],
        )
        site = self.sites.get(req["gateway"], {})
        self.broker.publish(
            device_topic(device_id),
            b"CREDENTIALS",
            {"access_token": token_bytes.hex(), "ssid": site.get("ssid", ""), "passphrase": site.get("passphrase", "")},
        )
        return rec

    def unbind_all(self, key_handle_digest: str) -> int:
        count = 0
        for rec in self.devices.values():
            if rec.bound_key_handle_digest == key_handle_digest and rec.state is not DeviceState.REVOKED:
                self._send_device(rec, "REVOKE")
                rec.state = DeviceState.REVOKED
                rec.access_token.revoked = True
                count += 1
                self.log.event("cloud", "device_revoked", device=rec.device_id.hex())
        return count

    def _send_device(self, rec: DeviceRecord, command: str, **detail) -> None:
        rec.sent += 1
        cmd = command.encode()
        tag = command_tag(rec.access_token.token_bytes, rec.device_id, rec.sent, cmd)
        self.log.event("cloud", "device_command", device=rec.device_id.hex(), command=command, **detail)
        self.broker.publish(device_topic(rec.device_id), cmd, {"n": str(rec.sent), "tag": tag.hex()})

    def execute_operation(self, device_id: bytes, command: str) -> OperationClass:
        """Dispatch a user operation; critical ones wait for a U2F ceremony.

        Ceremony failures raise and nothing reaches the device.
        """
        rec = self.devices.get(device_id)
        if rec is None:
            raise NoSuchDevice(f"unknown device {device_id.hex()}")
        cls = self.classify_operation(command)
        self.log.event("cloud", "operation", device=device_id.hex(), command=command, cls=cls.value)
        if rec.state is not DeviceState.BOUND or rec.access_token.revoked:
            self.log.event("cloud", "operation_rejected", device=device_id.hex(), error="DeviceRevoked")
            raise DeviceRevoked(f"device {device_id.hex()} is revoked")
        if cls is OperationClass.NON_CRITICAL:
            self._send_device(rec, command)
            return cls

        acct = self.accounts.get(rec.account_id)
        if cls is OperationClass.CRITICAL:
            binding = next((b for b in acct.bindings if b.digest == rec.bound_key_handle_digest), None) if acct else None
            if binding is None:
                raise NoSuchBinding("device's token binding is gone")
            ch = self.new_challenge(
                ChallengeKind.AUTHENTICATION, rec.account_id, binding, rec.gateway_id,
                purpose={"op": command, "device": device_id.hex()},
            )
        else:
            ch = self.new_challenge(
                ChallengeKind.REGISTRATION, rec.account_id, None, rec.gateway_id,
                purpose={"op": command, "device": device_id.hex()},
            )
        self.broker.pump()
        outcome = self.outcomes.get(ch)
        if outcome is None:
            self.pending.pop(ch, None)
            self.log.event("cloud", "operation_failed", device=device_id.hex(), error="CeremonyAborted")
            raise CeremonyAborted("no response to the U2F challenge")
        if outcome != "ok":
            self.log.event("cloud", "operation_failed", device=device_id.hex(), error=outcome)
            raise error_from_code(outcome, f"U2F ceremony for {command!r} failed")
        return cls

    def enroll_token(self, account_id: str, gateway_id: bytes) -> bytes:
        """Start a U2F registration ceremony through a site gateway."""
        return self.new_challenge(ChallengeKind.REGISTRATION, account_id, None, gateway_id.hex())

    def export_registry(self) -> str:
        lines = []
        for acct in self.accounts.values():
            for b in acct.bindings:
                lines.append({"type": "binding", "account": acct.account_id, "key_handle_digest": b.digest,
                              "last_counter": b.last_counter})
        for rec in self.devices.values():
            lines.append({"type": "device", **rec.export()})
        return "".join(json.dumps(x, sort_keys=True) + "\n" for x in lines)
