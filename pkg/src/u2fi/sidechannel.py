"""Packet-length side channel: encode bytes as broadcast frame lengths.

Wire layout of one transmission::

    preamble   1400 1420 1440
    symbol i   (128 + i, 512 + byte_i)          for each payload byte
    trailer    (512 + crc_hi, 128 + N), (512 + crc_lo, 128 + (N + 1) % 256)

Trailer pairs are sent data-frame first, which tells them apart from payload
pairs and lets a 255-byte payload carry its length without a 257th index.
Symbols are reassembled by index, so duplicates collapse and order after the
preamble does not matter.  Frames outside the three bands are ignored.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ChecksumMismatch, MissingSymbols, NoPreamble, PayloadTooLarge
from .kernels import ABSENT, BAND_WIDTH, CONFLICT, DATA_BASE, INDEX_BASE, PREAMBLE

MAX_PAYLOAD = 255
MIN_FRAME, MAX_FRAME = 60, 1500


def encode(payload: bytes) -> np.ndarray:
    data = np.frombuffer(bytes(payload), dtype=np.uint8)
    n = data.size
    if n > MAX_PAYLOAD:
        raise PayloadTooLarge(f"{n} bytes exceeds the {MAX_PAYLOAD}-byte cap")
    crc = kernels.crc16(data)
    out = np.empty(3 + 2 * n + 4, dtype=np.int64)
    out[:3] = PREAMBLE
    body = out[3 : 3 + 2 * n]
    body[0::2] = INDEX_BASE + np.arange(n)
    body[1::2] = DATA_BASE + data.astype(np.int64)
    out[3 + 2 * n :] = (
        DATA_BASE + (crc >> 8),
        INDEX_BASE + n,
        DATA_BASE + (crc & 0xFF),
        INDEX_BASE + (n + 1) % BAND_WIDTH,
    )
    return out


def _trailer(trl: np.ndarray) -> tuple[int, int]:
    present = np.flatnonzero(trl != ABSENT)
    if present.size < 2:
        raise MissingSymbols("checksum trailer incomplete")
    if present.size > 2 or np.any(trl[present] == CONFLICT):
        raise ChecksumMismatch("inconsistent checksum trailer")
    a, b = (int(x) for x in present)
    if (a + 1) % BAND_WIDTH == b:
        n = a
    elif (b + 1) % BAND_WIDTH == a:
        n = b
    else:
        raise ChecksumMismatch("checksum trailer indices are not adjacent")
    crc = (int(trl[n]) << 8) | int(trl[(n + 1) % BAND_WIDTH])
    return n, crc


def decode(observed) -> bytes:
    """Recover a payload from an observed frame-length stream.

    Raises NoPreamble, MissingSymbols or ChecksumMismatch; never returns a
    payload whose CRC fails.
    """
    frames = np.asarray(observed, dtype=np.int64).ravel()
    preambles, pay, trl = kernels.scan(frames)
    if preambles == 0:
        raise NoPreamble("no transmission preamble observed")
    n, crc = _trailer(trl)
    body = pay[:n]
    if np.any(body == ABSENT):
        missing = np.flatnonzero(body == ABSENT)
        raise MissingSymbols(f"{missing.size} of {n} symbols missing (first index {int(missing[0])})")
    if np.any(pay[n:] != ABSENT) or np.any(body == CONFLICT):
        raise ChecksumMismatch("conflicting or out-of-range symbols")
    data = body.astype(np.uint8)
    if kernels.crc16(data) != crc:
        raise ChecksumMismatch("CRC-16 mismatch")
    return data.tobytes()


# A length-only eavesdropper runs exactly the honest receiver's algorithm.
harvest = decode


class StreamDecoder:
    """Incremental receiver: ignores symbols until a preamble has been seen."""

    def __init__(self):
        self._pending: list[int] = []
        self._synced: list[int] = []

    @property
    def synced(self) -> bool:
        return bool(self._synced)

    def feed(self, frames) -> None:
        for f in np.asarray(frames, dtype=np.int64).ravel().tolist():
            if self._synced:
                self._synced.append(f)
                continue
            self._pending = (self._pending + [f])[-3:]
            if tuple(self._pending) == PREAMBLE:
                self._synced = list(PREAMBLE)

    def result(self) -> bytes:
        if not self._synced:
            raise NoPreamble("no transmission preamble observed")
        return decode(self._synced)


def split_bursts(frames) -> list[list[int]]:
    """Group frames the way a sender aggregates them on air.

    A preamble triple is one burst; an index/data pair in either order is
    one burst; anything else is a burst of one frame.
    """
    fl = [int(f) for f in np.asarray(frames, dtype=np.int64).ravel()]
    kinds = kernels.classify_numpy(np.asarray(fl, dtype=np.int64)).tolist() if fl else []
    bursts, i = [], 0
    while i < len(fl):
        if tuple(fl[i : i + 3]) == PREAMBLE:
            bursts.append(fl[i : i + 3])
            i += 3
        elif i + 1 < len(fl) and {kinds[i], kinds[i + 1]} == {kernels.INDEX, kernels.DATA}:
            bursts.append(fl[i : i + 2])
            i += 2
        else:
            bursts.append([fl[i]])
            i += 1
    return bursts


def write_capture(path, frames) -> None:
    """One decimal frame length per line."""
    with open(path, "w") as fh:
        for f in np.asarray(frames, dtype=np.int64).ravel():
            fh.write(f"{int(f)}\n")


def read_capture(path) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            v = int(line)
            if not MIN_FRAME <= v <= MAX_FRAME:
                raise ValueError(f"{path}:{lineno}: frame length {v} outside [{MIN_FRAME}, {MAX_FRAME}]")
            values.append(v)
    return np.asarray(values, dtype=np.int64)


# -- payload types ----------------------------------------------------------

_LEGACY_TAG = 0x01
_BOOTSTRAP_TAG = 0x02


@dataclass(frozen=True)
class BootstrapPayload:
    """What a U2Fi gateway broadcasts: no long-term secret fits in here."""

    ssid: str
    enrollment_nonce: bytes
    gateway_id: bytes

    def __post_init__(self):
        if len(self.ssid.encode()) > 32:
            raise ValueError("SSID longer than 32 bytes")
        if len(self.enrollment_nonce) != 16 or len(self.gateway_id) != 8:
            raise ValueError("nonce must be 16 bytes and gateway id 8 bytes")

    def to_bytes(self) -> bytes:
        ssid = self.ssid.encode()
        return bytes([_BOOTSTRAP_TAG, len(ssid)]) + ssid + self.enrollment_nonce + self.gateway_id

    @classmethod
    def from_bytes(cls, data: bytes) -> "BootstrapPayload":
        if len(data) < 2 or data[0] != _BOOTSTRAP_TAG:
            raise ValueError("not a bootstrap payload")
        n = data[1]
        if len(data) != 2 + n + 24:
            raise ValueError("bootstrap payload length mismatch")
        return cls(data[2 : 2 + n].decode(), data[2 + n : 18 + n], data[18 + n :])


@dataclass(frozen=True)
class LegacyPayload:
    """SmartCfg-style credentials in the clear: the insecure baseline."""

    ssid: str
    passphrase: str

    def to_bytes(self) -> bytes:
        ssid, pw = self.ssid.encode(), self.passphrase.encode()
        if len(ssid) > 32 or len(pw) > 63:
            raise ValueError("SSID or passphrase too long")
        return struct.pack("BB", _LEGACY_TAG, len(ssid)) + ssid + bytes([len(pw)]) + pw

    @classmethod
    def from_bytes(cls, data: bytes) -> "LegacyPayload":
        if len(data) < 3 or data[0] != _LEGACY_TAG:
            raise ValueError("not a legacy payload")
        n = data[1]
        m = data[2 + n]
        return cls(data[2 : 2 + n].decode(), data[3 + n : 3 + n + m].decode())
