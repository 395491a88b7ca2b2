"""U2F raw message formats, key wrapping and verification.

Layouts follow the FIDO U2F raw message format::

    registration response:  0x05 | pubkey(65) | kh_len(1) | kh | cert(DER) | sig(DER)
    registration signed:    0x00 | app(32) | challenge(32) | kh | pubkey(65)
    authentication response: presence(1) | counter(4, big-endian) | sig(DER)
    authentication signed:  app(32) | presence(1) | counter(4) | challenge(32)

Signatures are ECDSA P-256 / SHA-256 with deterministic (RFC 6979) nonces and
low-s normalisation, so a seeded run is byte-reproducible.
"""

from __future__ import annotations

import datetime
import hashlib
import hmac
import struct
from dataclasses import dataclass
from pathlib import Path

from cryptography import x509
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.x509.oid import NameOID

from .entropy import Entropy
from .errors import (
    BadKeyHandle,
    BadSignature,
    InvalidOrigin,
    MalformedResponse,
    OriginMismatch,
    PresenceAbsent,
)

CURVE_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551

REGISTER_RESERVED = 0x05
PRESENCE_PRESENT = 0x01
PRESENCE_ABSENT = 0x00
NONCE_LEN = 12
KEY_HANDLE_LEN = NONCE_LEN + 32 + 32 + 16
PUBKEY_LEN = 65

_CURVE = ec.SECP256R1()
_ECDSA = ec.ECDSA(hashes.SHA256(), deterministic_signing=True)
_ATTESTATION_SUBJECT = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "u2fi soft token attestation")])
_NOT_BEFORE = datetime.datetime(2020, 1, 1, tzinfo=datetime.timezone.utc)
_NOT_AFTER = datetime.datetime(2050, 1, 1, tzinfo=datetime.timezone.utc)


def hash_app_parameter(origin: str) -> bytes:
    if not isinstance(origin, str) or not origin:
        raise InvalidOrigin("origin must be non-empty text")
    return hashlib.sha256(origin.encode("utf-8")).digest()


@dataclass(frozen=True)
class KeyPair:
    private_scalar: int
    public_point: bytes

    def __repr__(self):
        return f"KeyPair(public_point={self.public_point.hex()[:16]}...)"

    @classmethod
    def from_scalar(cls, scalar: int) -> "KeyPair":
        key = ec.derive_private_key(scalar, _CURVE)
        point = key.public_key().public_bytes(
            serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint
        )
        return cls(scalar, point)


def generate_keypair(rng: Entropy) -> KeyPair:
    while True:
        d = int.from_bytes(rng.bytes(32), "big")
        if 1 <= d < CURVE_ORDER:
            return KeyPair.from_scalar(d)


def is_on_curve(point: bytes) -> bool:
    try:
        ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, point)
    except ValueError:
        return False
    return len(point) == PUBKEY_LEN and point[0] == 0x04


def _public_key(point: bytes) -> ec.EllipticCurvePublicKey:
    if len(point) != PUBKEY_LEN or point[0] != 0x04:
        raise MalformedResponse("public key must be a 65-byte uncompressed point")
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, point)
    except ValueError as exc:
        raise MalformedResponse("public key is not on P-256") from exc


def sign(private_scalar: int, message: bytes) -> bytes:
    """DER ECDSA signature with s forced into the lower half of the group."""
    key = ec.derive_private_key(private_scalar, _CURVE)
    r, s = decode_dss_signature(key.sign(message, _ECDSA))
    if s > CURVE_ORDER // 2:
        s = CURVE_ORDER - s
    return encode_dss_signature(r, s)


def verify_signature(public_point: bytes, message: bytes, signature: bytes) -> None:
    key = _public_key(public_point)
    try:
        key.verify(signature, message, ec.ECDSA(hashes.SHA256()))
    except (InvalidSignature, ValueError) as exc:
        raise BadSignature("signature does not verify") from exc


# -- key wrapping -----------------------------------------------------------

def wrap_key(private_scalar: int, app: bytes, wrapping_key: bytes, rng: Entropy) -> bytes:
    if len(app) != 32 or len(wrapping_key) != 32:
        raise ValueError("app parameter and wrapping key must be 32 bytes")
    nonce = rng.bytes(NONCE_LEN)
    plain = private_scalar.to_bytes(32, "big") + app
    return nonce + AESGCM(wrapping_key).encrypt(nonce, plain, None)


def unwrap_key(key_handle: bytes, app: bytes, wrapping_key: bytes) -> int:
    if len(key_handle) != KEY_HANDLE_LEN:
        raise BadKeyHandle("key handle has the wrong length")
    nonce, body = key_handle[:NONCE_LEN], key_handle[NONCE_LEN:]
    try:
        plain = AESGCM(wrapping_key).decrypt(nonce, body, None)
    except InvalidTag as exc:
        raise BadKeyHandle("key handle failed authentication") from exc
    scalar, embedded_app = int.from_bytes(plain[:32], "big"), plain[32:]
    if not hmac.compare_digest(embedded_app, app):
        raise OriginMismatch("key handle was issued for another origin")
    if not 1 <= scalar < CURVE_ORDER:
        raise BadKeyHandle("wrapped scalar out of range")
    return scalar


# -- attestation ------------------------------------------------------------

def make_attestation_certificate(keypair: KeyPair, serial: int) -> bytes:
    """Self-signed X.509 certificate for the attestation key, DER-encoded."""
    key = ec.derive_private_key(keypair.private_scalar, _CURVE)
    cert = (
        x509.CertificateBuilder()
        .subject_name(_ATTESTATION_SUBJECT)
        .issuer_name(_ATTESTATION_SUBJECT)
        .public_key(key.public_key())
        .serial_number(serial)
        .not_valid_before(_NOT_BEFORE)
        .not_valid_after(_NOT_AFTER)
        .sign(key, hashes.SHA256(), ecdsa_deterministic=True)
    )
    return cert.public_bytes(serialization.Encoding.DER)


def certificate_public_key(cert_der: bytes) -> bytes:
    try:
        cert = x509.load_der_x509_certificate(cert_der)
        key = cert.public_key()
    except ValueError as exc:
        raise MalformedResponse("attestation certificate does not parse") from exc
    if not isinstance(key, ec.EllipticCurvePublicKey) or not isinstance(key.curve, ec.SECP256R1):
        raise MalformedResponse("attestation key is not P-256")
    return key.public_bytes(serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint)


def _der_element_length(buf: bytes, offset: int) -> int:
    """Total length (header + content) of the DER TLV starting at ``offset``."""
    if offset + 2 > len(buf):
        raise MalformedResponse("truncated DER header")
    first = buf[offset + 1]
    if first < 0x80:
        return 2 + first
    nlen = first & 0x7F
    if nlen == 0 or nlen > 4 or offset + 2 + nlen > len(buf):
        raise MalformedResponse("bad DER length")
    content = int.from_bytes(buf[offset + 2 : offset + 2 + nlen], "big")
    return 2 + nlen + content


# -- registration -----------------------------------------------------------

@dataclass(frozen=True)
class RegistrationResponse:
    user_public_key: bytes
    key_handle: bytes
    attestation_certificate: bytes
    signature: bytes
    reserved: int = REGISTER_RESERVED

    def to_bytes(self) -> bytes:
        return (
            bytes([self.reserved])
            + self.user_public_key
            + bytes([len(self.key_handle)])
            + self.key_handle
            + self.attestation_certificate
            + self.signature
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "RegistrationResponse":
        if len(data) < 1 + PUBKEY_LEN + 1:
            raise MalformedResponse("registration response too short")
        reserved = data[0]
        if reserved != REGISTER_RESERVED:
            raise MalformedResponse(f"reserved byte is 0x{reserved:02x}, expected 0x05")
        pos = 1
        pubkey = data[pos : pos + PUBKEY_LEN]
        pos += PUBKEY_LEN
        kh_len = data[pos]
        pos += 1
        if pos + kh_len > len(data):
            raise MalformedResponse("key handle length exceeds message")
        kh = data[pos : pos + kh_len]
        pos += kh_len
        if pos >= len(data) or data[pos] != 0x30:
            raise MalformedResponse("attestation certificate missing")
        cert_len = _der_element_length(data, pos)
        if pos + cert_len > len(data):
            raise MalformedResponse("certificate overruns message")
        cert = data[pos : pos + cert_len]
        sig = data[pos + cert_len :]
        if not sig:
            raise MalformedResponse("signature missing")
        return cls(pubkey, kh, cert, sig, reserved)


def registration_signed_data(app: bytes, challenge: bytes, key_handle: bytes, user_public_key: bytes) -> bytes:
    return b"\x00" + app + challenge + key_handle + user_public_key


def build_registration_response(
    attestation_scalar: int,
    attestation_certificate: bytes,
    app: bytes,
    challenge: bytes,
    user_public_key: bytes,
    key_handle: bytes,
) -> RegistrationResponse:
    if len(key_handle) > 255:
        raise ValueError("key handle longer than 255 bytes")
    sig = sign(attestation_scalar, registration_signed_data(app, challenge, key_handle, user_public_key))
    return RegistrationResponse(user_public_key, key_handle, attestation_certificate, sig)


def verify_registration(
    resp: RegistrationResponse | bytes, app: bytes, challenge: bytes
) -> tuple[bytes, bytes]:
    """Check a registration response; return ``(user_public_key, key_handle)``."""
    if isinstance(resp, (bytes, bytearray)):
        resp = RegistrationResponse.from_bytes(bytes(resp))
    if resp.reserved != REGISTER_RESERVED:
        raise MalformedResponse(f"reserved byte is 0x{resp.reserved:02x}, expected 0x05")
    if not 0 < len(resp.key_handle) <= 255:
        raise MalformedResponse("key handle length out of range")
    _public_key(resp.user_public_key)
    attestation_key = certificate_public_key(resp.attestation_certificate)
    signed = registration_signed_data(app, challenge, resp.key_handle, resp.user_public_key)
    verify_signature(attestation_key, signed, resp.signature)
    return resp.user_public_key, resp.key_handle


# -- authentication ---------------------------------------------------------

@dataclass(frozen=True)
class AuthResponse:
    user_presence: int
    counter: int
    signature: bytes

    def to_bytes(self) -> bytes:
        return bytes([self.user_presence]) + struct.pack(">I", self.counter) + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "AuthResponse":
        if len(data) < 6:
            raise MalformedResponse("authentication response too short")
        (counter,) = struct.unpack(">I", data[1:5])
        return cls(data[0], counter, bytes(data[5:]))


def authentication_signed_data(app: bytes, presence: int, counter: int, challenge: bytes) -> bytes:
    return app + bytes([presence]) + struct.pack(">I", counter) + challenge


def sign_authentication(private_scalar: int, app: bytes, presence: int, counter: int, challenge: bytes) -> AuthResponse:
    sig = sign(private_scalar, authentication_signed_data(app, presence, counter, challenge))
    return AuthResponse(presence, counter, sig)


def verify_authentication(
    public_key: bytes,
    app: bytes,
    challenge: bytes,
    resp: AuthResponse | bytes,
    require_presence: bool = True,
) -> int:
    """Verify an authentication response and return its signed counter."""
    if isinstance(resp, (bytes, bytearray)):
        resp = AuthResponse.from_bytes(bytes(resp))
    if resp.user_presence not in (PRESENCE_ABSENT, PRESENCE_PRESENT):
        raise MalformedResponse(f"presence byte 0x{resp.user_presence:02x}")
    if not 0 <= resp.counter <= 0xFFFFFFFF:
        raise MalformedResponse("counter out of 32-bit range")
    signed = authentication_signed_data(app, resp.user_presence, resp.counter, challenge)
    verify_signature(public_key, signed, resp.signature)
    if require_presence and resp.user_presence != PRESENCE_PRESENT:
        raise PresenceAbsent("user presence was required but not asserted")
    return resp.counter


# -- hex fixtures -----------------------------------------------------------

def load_hex_vectors(path: str | Path) -> dict[str, bytes]:
    """Read a fixture file: one ``label hex`` message per line, ``#`` comments."""
    vectors: dict[str, bytes] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        label, _, hexdata = line.partition(" ")
        if not hexdata:
            raise ValueError(f"{path}:{lineno}: expected '<label> <hex>'")
        vectors[label] = bytes.fromhex(hexdata.strip())
    return vectors


def dump_hex_vectors(vectors: dict[str, bytes], header: str = "") -> str:
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    lines += [f"{label} {value.hex()}" for label, value in vectors.items()]
    return "\n".join(lines) + "\n"
