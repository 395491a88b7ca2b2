"""Stateful software U2F token."""

from __future__ import annotations

import enum
import hashlib
import math
import struct

from . import u2f_core
from .entropy import Entropy
from .errors import CounterExhausted, PresenceRequired, StateCorrupt, TokenAbsent
from .u2f_core import AuthResponse, KeyPair, RegistrationResponse

PRESENCE_WINDOW = 15.0

_MAGIC = b"U2FT"
_VERSION = 1
# magic, version, inserted, counter, armed_until, wrapping key, attestation scalar, cert length
_HEADER = struct.Struct(">4sBBId32s32sH")


class PresenceMode(enum.Enum):
    REQUIRED = "required"
    NOT_REQUIRED = "not_required"


class _NoClock:
    def now(self) -> float:
        return 0.0


class U2FToken:
    """Holds the wrapping key, one global counter and a presence gate.

    Not thread-safe: a token is one physical device and callers serialise
    access to it.
    """

    def __init__(self, rng: Entropy | None = None, clock=None, *, _state: dict | None = None):
        self.rng = rng or Entropy()
        self.clock = clock or _NoClock()
        if _state is None:
            self._wrapping_key = self.rng.bytes(32)
            self.attestation = u2f_core.generate_keypair(self.rng)
            serial = int.from_bytes(self.rng.bytes(8), "big") | 1
            self.certificate = u2f_core.make_attestation_certificate(self.attestation, serial)
            self.counter = 0
            self.presence_armed_until: float | None = None
            self.inserted = True
        else:
            self._wrapping_key = _state["wrapping_key"]
            self.attestation = KeyPair.from_scalar(_state["attestation_scalar"])
            self.certificate = _state["certificate"]
            self.counter = _state["counter"]
            self.presence_armed_until = _state["armed_until"]
            self.inserted = _state["inserted"]

    def __repr__(self):
        return f"U2FToken(counter={self.counter}, inserted={self.inserted})"

    def _now(self, now):
        return self.clock.now() if now is None else now

    def insert(self):
        self.inserted = True

    def remove(self):
        self.inserted = False
        self.presence_armed_until = None

    def press_button(self, now: float | None = None) -> None:
        if not self.inserted:
            raise TokenAbsent("token is not inserted")
        self.presence_armed_until = self._now(now) + PRESENCE_WINDOW

    def presence_armed(self, now: float | None = None) -> bool:
        return self.presence_armed_until is not None and self._now(now) <= self.presence_armed_until

    def _take_presence(self, now, required: bool) -> int:
        armed = self.presence_armed(now)
        if required and not armed:
            self.presence_armed_until = None
            raise PresenceRequired("user presence was not asserted")
        if armed:
            self.presence_armed_until = None
            return u2f_core.PRESENCE_PRESENT
        return u2f_core.PRESENCE_ABSENT

    def handle_register(self, app: bytes, challenge: bytes, now: float | None = None) -> RegistrationResponse:
        if not self.inserted:
            raise TokenAbsent("token is not inserted")
        self._take_presence(now, required=True)
        user = u2f_core.generate_keypair(self.rng)
        kh = u2f_core.wrap_key(user.private_scalar, app, self._wrapping_key, self.rng)
        return u2f_core.build_registration_response(
            self.attestation.private_scalar, self.certificate, app, challenge, user.public_point, kh
        )

    def handle_authenticate(
        self,
        app: bytes,
        challenge: bytes,
        key_handle: bytes,
        mode: PresenceMode = PresenceMode.REQUIRED,
        now: float | None = None,
    ) -> AuthResponse:
        if not self.inserted:
            raise TokenAbsent("token is not inserted")
        scalar = u2f_core.unwrap_key(key_handle, app, self._wrapping_key)
        presence = self._take_presence(now, required=mode is PresenceMode.REQUIRED)
        if self.counter >= 0xFFFFFFFF:
            raise CounterExhausted("32-bit counter exhausted")
        self.counter += 1
        return u2f_core.sign_authentication(scalar, app, presence, self.counter, challenge)

    def owns_key_handle(self, key_handle: bytes, app: bytes) -> bool:
        try:
            u2f_core.unwrap_key(key_handle, app, self._wrapping_key)
        except Exception:
            return False
        return True

    # -- persistence --------------------------------------------------------

    def persist_state(self) -> bytes:
        armed = math.nan if self.presence_armed_until is None else self.presence_armed_until
        body = _HEADER.pack(
            _MAGIC,
            _VERSION,
            int(self.inserted),
            self.counter,
            armed,
            self._wrapping_key,
            self.attestation.private_scalar.to_bytes(32, "big"),
            len(self.certificate),
        ) + self.certificate
        return body + hashlib.sha256(body).digest()

    @classmethod
    def load_state(cls, blob: bytes, rng: Entropy | None = None, clock=None) -> "U2FToken":
        if len(blob) < _HEADER.size + 32:
            raise StateCorrupt("state blob truncated")
        body, digest = blob[:-32], blob[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise StateCorrupt("state checksum mismatch")
        magic, version, inserted, counter, armed, wk, att, cert_len = _HEADER.unpack_from(body)
        if magic != _MAGIC or version != _VERSION:
            raise StateCorrupt("unknown state format")
        if len(body) != _HEADER.size + cert_len:
            raise StateCorrupt("certificate length mismatch")
        scalar = int.from_bytes(att, "big")
        if not 1 <= scalar < u2f_core.CURVE_ORDER or inserted > 1:
            raise StateCorrupt("field out of range")
        state = {
            "wrapping_key": wk,
            "attestation_scalar": scalar,
            "certificate": body[_HEADER.size :],
            "counter": counter,
            "armed_until": None if math.isnan(armed) else armed,
            "inserted": bool(inserted),
        }
        return cls(rng, clock, _state=state)
