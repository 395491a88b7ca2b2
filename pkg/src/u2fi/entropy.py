"""Injectable entropy source.

With no seed it reads the OS CSPRNG.  With a seed it is a SHA-256 counter
mode stream, so every byte the simulator draws is reproducible across runs
and platforms.  ``fork(label)`` derives an independent child stream; giving
each component its own child keeps one component's draws from shifting
another's.
"""

from __future__ import annotations

import hashlib
import os
import struct


class Entropy:
    def __init__(self, seed: int | None = None, *, _key: bytes | None = None):
        if _key is not None:
            self._key = _key
        elif seed is None:
            self._key = None
        else:
            self._key = hashlib.sha256(b"u2fi-entropy" + struct.pack(">Q", seed & (2**64 - 1))).digest()
        self._counter = 0
        self._buf = b""

    @property
    def seeded(self) -> bool:
        return self._key is not None

    def fork(self, label: str) -> "Entropy":
        if self._key is None:
            return Entropy()
        return Entropy(_key=hashlib.sha256(self._key + b"/" + label.encode()).digest())

    def bytes(self, n: int) -> bytes:
        if n < 0:
            raise ValueError("negative length")
        if self._key is None:
            return os.urandom(n)
        while len(self._buf) < n:
            block = hashlib.sha256(self._key + struct.pack(">Q", self._counter)).digest()
            self._counter += 1
            self._buf += block
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("n must be positive")
        nbytes = (n.bit_length() + 7) // 8 + 1
        limit = (256**nbytes // n) * n
        while True:
            v = int.from_bytes(self.bytes(nbytes), "big")
            if v < limit:
                return v % n

    def uint64(self) -> int:
        return int.from_bytes(self.bytes(8), "big")
