"""Hot loops of the frame-length codec.

Two interchangeable backends compute the same results:

* ``numba`` -- ``@njit`` compiled loops (default when numba imports)
* ``numpy`` -- vectorised numpy, selected with ``U2FI_DISABLE_NUMBA=1``

``scan`` turns a raw frame-length stream into reassembly tables; ``crc16``
is CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection).
"""

from __future__ import annotations

import binascii
import os

import numpy as np

PREAMBLE = (1400, 1420, 1440)
INDEX_BASE = 128
DATA_BASE = 512
BAND_WIDTH = 256

OUT_OF_BAND, INDEX, DATA, PREAMBLE_BAND = 0, 1, 2, 3
ABSENT, CONFLICT = -1, -2

_CRC_POLY = 0x1021


def _crc_table() -> np.ndarray:
    table = np.zeros(256, dtype=np.uint16)
    for b in range(256):
        crc = b << 8
        for _ in range(8):
            crc = ((crc << 1) ^ _CRC_POLY) if crc & 0x8000 else (crc << 1)
        table[b] = crc & 0xFFFF
    return table


CRC_TABLE = _crc_table()


# -- numpy backend ----------------------------------------------------------

def classify_numpy(frames: np.ndarray) -> np.ndarray:
    kind = np.zeros(frames.shape, dtype=np.int8)
    kind[(frames >= INDEX_BASE) & (frames < INDEX_BASE + BAND_WIDTH)] = INDEX
    kind[(frames >= DATA_BASE) & (frames < DATA_BASE + BAND_WIDTH)] = DATA
    kind[np.isin(frames, PREAMBLE)] = PREAMBLE_BAND
    return kind


def _fill_table(idx: np.ndarray, val: np.ndarray) -> np.ndarray:
    table = np.full(BAND_WIDTH, ABSENT, dtype=np.int16)
    if idx.size == 0:
        return table
    lo = np.full(BAND_WIDTH, BAND_WIDTH, dtype=np.int64)
    hi = np.full(BAND_WIDTH, -1, dtype=np.int64)
    np.minimum.at(lo, idx, val)
    np.maximum.at(hi, idx, val)
    seen = hi >= 0
    table[seen] = lo[seen]
    table[seen & (lo != hi)] = CONFLICT
    return table


def scan_numpy(frames: np.ndarray):
    frames = np.asarray(frames, dtype=np.int64)
    kind = classify_numpy(frames)
    keep = kind != OUT_OF_BAND
    s, k = frames[keep], kind[keep]

    preambles = 0
    if s.size >= 3:
        preambles = int(np.count_nonzero(
            (s[:-2] == PREAMBLE[0]) & (s[1:-1] == PREAMBLE[1]) & (s[2:] == PREAMBLE[2])
        ))

    empty = np.empty(0, dtype=np.int64)
    if s.size < 2:
        return preambles, _fill_table(empty, empty), _fill_table(empty, empty)

    # a pair can start at i when i and i+1 are symbol frames of opposite kinds
    sym = (k == INDEX) | (k == DATA)
    ok = sym[:-1] & sym[1:] & (k[:-1] != k[1:])
    # greedy left-to-right pairing = even offsets inside each run of ``ok``
    pos = np.arange(ok.size)
    run_start = np.where(ok & ~np.concatenate(([False], ok[:-1])), pos, 0)
    run_start = np.maximum.accumulate(run_start)
    starts = pos[ok & (((pos - run_start) % 2) == 0)]

    first, second = s[starts], s[starts + 1]
    forward = k[starts] == INDEX
    pay = _fill_table(first[forward] - INDEX_BASE, second[forward] - DATA_BASE)
    trl = _fill_table(second[~forward] - INDEX_BASE, first[~forward] - DATA_BASE)
    return preambles, pay, trl


def crc16_numpy(data) -> int:
    return binascii.crc_hqx(bytes(np.asarray(data, dtype=np.uint8)), 0xFFFF)


# -- numba backend ----------------------------------------------------------

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None

if njit is not None:

    @njit(cache=True)
    def _kind(v):
        if v == PREAMBLE[0] or v == PREAMBLE[1] or v == PREAMBLE[2]:
            return PREAMBLE_BAND
        if INDEX_BASE <= v < INDEX_BASE + BAND_WIDTH:
            return INDEX
        if DATA_BASE <= v < DATA_BASE + BAND_WIDTH:
            return DATA
        return OUT_OF_BAND

    @njit(cache=True)
    def _put(table, i, v):
        cur = table[i]
        if cur == ABSENT:
            table[i] = v
        elif cur != v:
            table[i] = CONFLICT

    @njit(cache=True)
    def _scan_jit(frames):
        n = frames.shape[0]
        s = np.empty(n, dtype=np.int64)
        k = np.empty(n, dtype=np.int8)
        m = 0
        for i in range(n):
            kk = _kind(frames[i])
            if kk != OUT_OF_BAND:
                s[m] = frames[i]
                k[m] = kk
                m += 1

        preambles = 0
        for i in range(m - 2):
            if s[i] == PREAMBLE[0] and s[i + 1] == PREAMBLE[1] and s[i + 2] == PREAMBLE[2]:
                preambles += 1

        pay = np.full(BAND_WIDTH, ABSENT, dtype=np.int16)
        trl = np.full(BAND_WIDTH, ABSENT, dtype=np.int16)
        i = 0
        while i < m - 1:
            a, b = k[i], k[i + 1]
            if (a == INDEX and b == DATA):
                _put(pay, s[i] - INDEX_BASE, s[i + 1] - DATA_BASE)
                i += 2
            elif (a == DATA and b == INDEX):
                _put(trl, s[i + 1] - INDEX_BASE, s[i] - DATA_BASE)
                i += 2
            else:
                i += 1
        return preambles, pay, trl

    @njit(cache=True)
    def _crc16_jit(data, table):
        crc = 0xFFFF
        for i in range(data.shape[0]):
            crc = ((crc << 8) & 0xFFFF) ^ table[((crc >> 8) ^ data[i]) & 0xFF]
        return crc

    def scan_numba(frames):
        return _scan_jit(np.ascontiguousarray(frames, dtype=np.int64))

    def crc16_numba(data) -> int:
        return int(_crc16_jit(np.ascontiguousarray(data, dtype=np.uint8), CRC_TABLE))

else:  # pragma: no cover
    scan_numba = None
    crc16_numba = None


def _select_backend() -> str:
    flag = os.environ.get("U2FI_DISABLE_NUMBA", "").strip().lower()
    if flag in ("1", "true", "yes") or scan_numba is None:
        return "numpy"
    return "numba"


BACKEND = _select_backend()

if BACKEND == "numba":
    scan, crc16 = scan_numba, crc16_numba
else:
    scan, crc16 = scan_numpy, crc16_numpy
