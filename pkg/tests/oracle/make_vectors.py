"""Regenerate tests/fixtures/u2f_vectors.hex from the pure-Python oracle.

    python3 -m tests.oracle.make_vectors
"""

import hashlib
import struct
from pathlib import Path

from . import cert, p256

OUT = Path(__file__).resolve().parents[1] / "fixtures" / "u2f_vectors.hex"

ATTESTATION_KEY = 0x1F2E3D4C5B6A79880123456789ABCDEFFEDCBA98765432100F1E2D3C4B5A6978
USER_KEY = 0x7A0C6E1D9B3F5A2E4C8D0B1F3E5A7C9D2B4F6E8A0C1D3E5F7A9B0C2D4E6F8A1B
ORIGIN = "https://iot.example"


def build():
    app = hashlib.sha256(ORIGIN.encode()).digest()
    reg_challenge = hashlib.sha256(b"oracle registration challenge").digest()
    auth_challenge = hashlib.sha256(b"oracle authentication challenge").digest()
    key_handle = hashlib.sha512(b"oracle key handle").digest() + b"\xa5" * 28
    user_pub = p256.public_key(USER_KEY)
    att_cert = cert.build(ATTESTATION_KEY, serial=0x5EED)

    reg_signed = b"\x00" + app + reg_challenge + key_handle + user_pub
    reg_sig = p256.sign(ATTESTATION_KEY, reg_signed)
    assert p256.verify(p256.public_key(ATTESTATION_KEY), reg_signed, reg_sig)
    reg = b"\x05" + user_pub + bytes([len(key_handle)]) + key_handle + att_cert + reg_sig

    v = {
        "attestation_scalar": ATTESTATION_KEY.to_bytes(32, "big"),
        "attestation_public_key": p256.public_key(ATTESTATION_KEY),
        "attestation_certificate": att_cert,
        "user_scalar": USER_KEY.to_bytes(32, "big"),
        "user_public_key": user_pub,
        "origin": ORIGIN.encode(),
        "app_parameter": app,
        "registration_challenge": reg_challenge,
        "key_handle": key_handle,
        "registration_signed_data": reg_signed,
        "registration_response": reg,
        "authentication_challenge": auth_challenge,
    }
    for name, presence, counter in (("auth_present_1", 1, 1), ("auth_absent_7", 0, 7), ("auth_present_max", 1, 0xFFFFFFFF)):
        signed = app + bytes([presence]) + struct.pack(">I", counter) + auth_challenge
        sig = p256.sign(USER_KEY, signed)
        assert p256.verify(user_pub, signed, sig)
        v[name + "_signed_data"] = signed
        v[name] = bytes([presence]) + struct.pack(">I", counter) + sig

    # plain signatures over assorted messages
    for i, msg in enumerate([b"\x00", b"sample", b"test", bytes(range(256))]):
        v[f"msg_{i}"] = msg
        v[f"sig_{i}"] = p256.sign(USER_KEY, msg)
    return v


def main():
    vectors = build()
    lines = [
        "# P-256 ECDSA-SHA256 (RFC 6979 nonces, low-s) U2F raw message vectors",
        "# generated by tests/oracle/make_vectors.py; do not edit by hand",
    ]
    lines += [f"{k} {val.hex()}" for k, val in vectors.items()]
    OUT.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(vectors)} vectors to {OUT}")


if __name__ == "__main__":
    main()
