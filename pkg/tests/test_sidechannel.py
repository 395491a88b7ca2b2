import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from u2fi import kernels, sidechannel
from u2fi.errors import ChecksumMismatch, DecodeError, MissingSymbols, NoPreamble, PayloadTooLarge
from u2fi.net import RadioConfig, apply_noise
from u2fi.sidechannel import BootstrapPayload, LegacyPayload, split_bursts


def crc_oracle(data: bytes) -> int:
    """Bit-by-bit CRC-16/CCITT-FALSE, independent of the table/binascii paths."""
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
    return crc


def test_crc_standard_check_value(backend):
    assert crc_oracle(b"123456789") == 0x29B1
    assert kernels.crc16(np.frombuffer(b"123456789", dtype=np.uint8)) == 0x29B1


@settings(max_examples=100, deadline=None)
@given(st.binary(max_size=255))
def test_crc_backends_match_oracle(data):
    arr = np.frombuffer(data, dtype=np.uint8)
    assert kernels.crc16_numpy(arr) == crc_oracle(data)
    if kernels.crc16_numba is not None:
        assert kernels.crc16_numba(arr) == crc_oracle(data)


def test_empty_payload_is_seven_frames(codec):
    frames = codec.encode(b"")
    assert frames.tolist() == [1400, 1420, 1440, 512 + 0xFF, 128, 512 + 0xFF, 129]
    assert codec.decode(frames) == b""


def test_single_byte_layout(codec):
    crc = crc_oracle(b"A")
    assert crc == 0xB915
    assert codec.encode(b"A").tolist() == [1400, 1420, 1440, 128, 577, 512 + (crc >> 8), 129, 512 + (crc & 0xFF), 130]


def test_payload_cap(codec):
    assert codec.decode(codec.encode(bytes(255))) == bytes(255)
    with pytest.raises(PayloadTooLarge):
        codec.encode(bytes(256))


def test_bands_disjoint_and_frames_in_range(codec):
    frames = codec.encode(bytes(range(256))[:255])
    assert frames.min() >= 60 and frames.max() <= 1500
    idx = set(range(128, 384))
    dat = set(range(512, 768))
    pre = {1400, 1420, 1440}
    assert not (idx & dat) and not (idx & pre) and not (dat & pre)


@settings(max_examples=150, deadline=None)
@given(st.binary(max_size=255))
def test_round_trip(payload):
    assert sidechannel.decode(sidechannel.encode(payload)) == payload


def test_round_trip_both_backends(codec):
    rng = np.random.default_rng(0)
    for n in [0, 1, 2, 63, 64, 128, 254, 255]:
        p = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
        assert codec.decode(codec.encode(p)) == p


def test_backends_agree_on_noisy_streams():
    if kernels.scan_numba is None:
        pytest.skip("numba not installed")
    rng = np.random.default_rng(5)
    for _ in range(300):
        frames = sidechannel.encode(rng.integers(0, 256, rng.integers(0, 80), dtype=np.uint8).tobytes())
        junk = rng.integers(60, 1501, rng.integers(0, 30))
        mixed = np.concatenate([frames, junk])
        rng.shuffle(mixed[3:])
        a = kernels.scan_numpy(mixed)
        b = kernels.scan_numba(mixed)
        assert a[0] == b[0]
        assert np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])


def _pairs(frames):
    return [list(frames[:3])] + [list(frames[i:i + 2]) for i in range(3, len(frames), 2)]


def test_triplicated_and_shuffled_symbols(codec):
    rng = np.random.default_rng(17)
    for _ in range(1000):
        p = rng.integers(0, 256, rng.integers(0, 65), dtype=np.uint8).tobytes()
        units = _pairs(codec.encode(p).tolist())
        symbols = [u for u in units[1:] for _ in range(3)]
        order = rng.permutation(len(symbols))
        stream = units[0] + [f for i in order for f in symbols[i]]
        assert codec.decode(stream) == p


def test_every_single_deletion_fails_loudly(codec):
    p = b"bootstrap-ssid\x00\x01\x02"
    frames = codec.encode(p).tolist()
    for pos in range(len(frames)):
        damaged = frames[:pos] + frames[pos + 1:]
        try:
            got = codec.decode(damaged)
        except DecodeError:
            continue
        pytest.fail(f"deleting frame {pos} decoded to {got!r}")


def test_data_frame_removed_is_missing_symbols(codec):
    frames = codec.encode(b"hello").tolist()
    del frames[3 + 2 * 2 + 1]
    with pytest.raises(MissingSymbols):
        codec.decode(frames)


def test_no_preamble(codec):
    with pytest.raises(NoPreamble):
        codec.decode(codec.encode(b"abc")[3:])
    with pytest.raises(NoPreamble):
        codec.decode([])


def test_conflicting_duplicate_is_checksum_mismatch(codec):
    frames = codec.encode(b"abc").tolist()
    frames += [128, 512 + ord("z")]
    with pytest.raises(ChecksumMismatch):
        codec.decode(frames)


def test_crc_corruption_detected(codec):
    frames = codec.encode(b"abcdef")
    frames[4] += 1
    with pytest.raises(ChecksumMismatch):
        codec.decode(frames)


def test_foreign_frames_ignored(codec):
    rng = np.random.default_rng(3)
    p = BootstrapPayload("Lobby", bytes(range(16)), b"gw-00001").to_bytes()
    clean = codec.decode(codec.encode(p))
    # 10,000 out-of-band frames interleaved around intact symbol pairs
    foreign = rng.choice(np.r_[60:128, 384:512, 768:1400, 1401:1420, 1421:1440, 1441:1501], 10_000)
    units = _pairs(codec.encode(p).tolist())
    cuts = np.sort(rng.integers(0, 10_000, len(units)))
    stream, prev = [], 0
    for u, c in zip(units, cuts):
        stream += foreign[prev:c].tolist() + u
        prev = c
    stream += foreign[prev:].tolist()
    assert codec.decode(stream) == clean == p


def test_stream_decoder_needs_preamble_first():
    frames = sidechannel.encode(b"sync").tolist()
    dec = sidechannel.StreamDecoder()
    dec.feed(frames[3:])
    assert not dec.synced
    with pytest.raises(NoPreamble):
        dec.result()
    dec.feed([7000, 1400, 1420])
    dec.feed([1440])
    assert dec.synced
    dec.feed(frames[3:])
    assert dec.result() == b"sync"


def test_split_bursts_groups_pairs():
    frames = sidechannel.encode(b"xy").tolist()
    assert split_bursts(frames) == [[1400, 1420, 1440], frames[3:5], frames[5:7], frames[7:9], frames[9:11]]
    assert split_bursts([50, 128]) == [[50], [128]]


def test_capture_file_round_trip(tmp_path):
    frames = sidechannel.encode(b"capture")
    path = tmp_path / "cap.txt"
    sidechannel.write_capture(path, frames)
    assert np.array_equal(sidechannel.read_capture(path), frames)
    path.write_text("1400\n59\n")
    with pytest.raises(ValueError):
        sidechannel.read_capture(path)


def test_legacy_harvest_exposes_passphrase(codec):
    p = LegacyPayload("HotelGuest", "correct horse battery")
    out = codec.harvest(codec.encode(p.to_bytes()))
    assert b"correct horse battery" in out
    assert LegacyPayload.from_bytes(out) == p


@settings(max_examples=100, deadline=None)
@given(
    pw=st.text(min_size=8, max_size=63).filter(lambda s: len(s.encode()) <= 63),
    nonce=st.binary(min_size=16, max_size=16),
    gid=st.binary(min_size=8, max_size=8),
)
def test_bootstrap_never_carries_passphrase(pw, nonce, gid):
    out = sidechannel.harvest(sidechannel.encode(BootstrapPayload("HotelGuest", nonce, gid).to_bytes()))
    assert BootstrapPayload.from_bytes(out).enrollment_nonce == nonce
    assert pw.encode() not in out


def test_payload_types_validate():
    with pytest.raises(ValueError):
        BootstrapPayload("x" * 33, bytes(16), bytes(8))
    with pytest.raises(ValueError):
        BootstrapPayload("x", bytes(15), bytes(8))
    with pytest.raises(ValueError):
        BootstrapPayload.from_bytes(LegacyPayload("a", "b").to_bytes())
    with pytest.raises(ValueError):
        LegacyPayload("a", "p" * 64).to_bytes()


@settings(max_examples=60, deadline=None)
@given(st.binary(max_size=64), st.integers(0, 2**32))
def test_noise_with_duplicates_and_reorder_property(payload, seed):
    cfg = RadioConfig(duplicate_prob=0.3, reorder_window=8)
    noisy = apply_noise(split_bursts(sidechannel.encode(payload)), np.random.default_rng(seed), cfg)
    # a duplicated preamble burst may move, but the receiver only needs one
    assert sidechannel.decode([f for u in noisy for f in u]) == payload


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("", "numba")])
def test_env_flag_selects_backend(flag, expected):
    import os
    import subprocess
    import sys

    if expected == "numba" and kernels.scan_numba is None:
        pytest.skip("numba not installed")
    env = dict(os.environ, U2FI_DISABLE_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, "-c", "from u2fi import kernels, sidechannel; "
         "assert sidechannel.decode(sidechannel.encode(b'ok')) == b'ok'; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, timeout=60,
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == expected


def test_benchmark_runs():
    import subprocess
    import sys
    from pathlib import Path

    if kernels.scan_numba is None:
        pytest.skip("numba not installed")
    script = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_codec.py"
    out = subprocess.run([sys.executable, str(script), "--trials", "5", "--repeat", "1"],
                         capture_output=True, text=True, timeout=120)
    assert out.returncode == 0, out.stderr
    assert "speedup" in out.stdout
