"""Compare the numba and numpy codec kernels.

    python3 benchmarks/bench_codec.py [--trials N]

Times the decode hot path (band scan + pairing + CRC) on noisy captures of
several sizes, checks both backends agree, and prints per-call timings.
"""

import argparse
import time

import numpy as np

from u2fi import kernels, sidechannel
from u2fi.net import RadioConfig, apply_noise


def make_streams(n_streams, size, rng):
    cfg = RadioConfig(duplicate_prob=0.3, reorder_window=8)
    out = []
    for _ in range(n_streams):
        payload = rng.integers(0, 256, size, dtype=np.uint8).tobytes()
        units = apply_noise(sidechannel.split_bursts(sidechannel.encode(payload)), rng, cfg)
        frames = np.asarray([f for u in units for f in u], dtype=np.int64)
        junk = rng.integers(60, 1501, frames.size // 2)
        out.append(np.concatenate([frames, junk]))
    return out


def bench(fn, streams, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for s in streams:
            fn(s)
        best = min(best, time.perf_counter() - t0)
    return best / len(streams)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.scan_numba is None:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    kernels.scan_numba(sidechannel.encode(b"warm"))  # exclude JIT compile time
    kernels.crc16_numba(np.zeros(4, np.uint8))

    print(f"{'payload':>8} {'frames':>8} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for size in (16, 64, 255):
        streams = make_streams(args.trials, size, rng)
        for s in streams:
            a, b = kernels.scan_numpy(s), kernels.scan_numba(s)
            assert a[0] == b[0] and np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])
        t_np = bench(kernels.scan_numpy, streams, args.repeat)
        t_nb = bench(kernels.scan_numba, streams, args.repeat)
        frames = int(np.mean([s.size for s in streams]))
        print(f"{size:>8} {frames:>8} {t_np * 1e6:>10.1f} {t_nb * 1e6:>10.1f} {t_np / t_nb:>7.1f}x")

    data = rng.integers(0, 256, 255, dtype=np.uint8)
    t_np = bench(kernels.crc16_numpy, [data] * args.trials, args.repeat)
    t_nb = bench(kernels.crc16_numba, [data] * args.trials, args.repeat)
    print(f"crc16 over 255 bytes: numpy/binascii {t_np * 1e6:.2f} us, numba {t_nb * 1e6:.2f} us")


if __name__ == "__main__":
    main()
