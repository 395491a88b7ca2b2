"""In-process transport fabric: logical clock, event log, pub-sub broker, radio."""

from __future__ import annotations

import collections
import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)


class SimClock:
    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("the clock does not run backwards")
        self._now += seconds
        return self._now


def digest(payload: bytes, properties: dict | None = None) -> str:
    h = hashlib.sha256(payload)
    if properties:
        h.update(json.dumps(properties, sort_keys=True).encode())
    return h.hexdigest()[:16]


class EventLog:
    """Ordered audit trail; every record is a flat JSON-able dict.

    Deliveries carry ``ch`` = "broker" or "radio"; component events carry
    ``ch`` = "event".  Records never hold payloads, only digests.
    """

    def __init__(self, clock: SimClock):
        self.clock = clock
        self.records: list[dict] = []
        self._lock = threading.Lock()
        self.listeners: list[Callable[[dict], None]] = []

    def _append(self, rec: dict) -> dict:
        with self._lock:
            rec = {"i": len(self.records), "t": round(self.clock.now(), 6), **rec}
            self.records.append(rec)
        for fn in self.listeners:
            fn(rec)
        return rec

    def delivery(self, channel: str, topic: str, to: str, payload_digest: str, **extra) -> dict:
        return self._append({"ch": channel, "topic": topic, "to": to, "digest": payload_digest, **extra})

    def event(self, src: str, kind: str, **detail) -> dict:
        return self._append({"ch": "event", "src": src, "kind": kind, **detail})

    def find(self, **match) -> list[dict]:
        return [r for r in self.records if all(r.get(k) == v for k, v in match.items())]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records)

    @staticmethod
    def render(rec: dict) -> str:
        head = f"[{rec['t']:9.3f}] #{rec['i']:<4}"
        if rec["ch"] == "event":
            rest = " ".join(f"{k}={v}" for k, v in rec.items() if k not in ("i", "t", "ch", "src", "kind"))
            return f"{head} {rec['src']:<10} {rec['kind']:<22} {rest}".rstrip()
        return f"{head} {rec['ch']:<10} {rec['topic']:<22} -> {rec['to']} {rec['digest']}"


# -- broker -----------------------------------------------------------------

@dataclass(frozen=True)
class BrokerMessage:
    topic: str
    payload: bytes
    seq: int
    properties: dict = field(default_factory=dict)

    def prop(self, key: str, default=None):
        return self.properties.get(key, default)


class Subscription:
    """A subscriber's view of one topic.

    With a handler, messages are delivered by ``Broker.pump``; without one
    they queue in ``inbox`` for the caller to drain.
    """

    def __init__(self, broker: "Broker", topic: str, name: str, handler=None):
        self.broker, self.topic, self.name, self.handler = broker, topic, name, handler
        self.inbox: collections.deque[BrokerMessage] = collections.deque()
        self.active = True

    def __iter__(self):
        while self.inbox:
            yield self.inbox.popleft()

    def get(self) -> BrokerMessage | None:
        return self.inbox.popleft() if self.inbox else None

    def drain(self) -> list[BrokerMessage]:
        return list(self)

    def close(self):
        self.broker.unsubscribe(self)


class Broker:
    """MQTT-like topic broker without QoS, retention or wildcards."""

    def __init__(self, log: EventLog):
        self.log = log
        self._subs: dict[str, list[Subscription]] = collections.defaultdict(list)
        self._seq: dict[str, int] = collections.defaultdict(int)
        self._pending: collections.deque = collections.deque()
        self._lock = threading.RLock()
        self._pumping = False

    def subscribe(self, topic: str, handler: Callable[[BrokerMessage], None] | None = None,
                  name: str = "client") -> Subscription:
        sub = Subscription(self, topic, name, handler)
        with self._lock:
            self._subs[topic].append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            sub.active = False
            if sub in self._subs.get(sub.topic, []):
                self._subs[sub.topic].remove(sub)

    def publish(self, topic: str, payload: bytes | str, properties: dict | None = None) -> int:
        if not topic:
            raise ValueError("topic must be non-empty")
        if isinstance(payload, str):
            payload = payload.encode()
        with self._lock:
            self._seq[topic] += 1
            msg = BrokerMessage(topic, bytes(payload), self._seq[topic], dict(properties or {}))
            dig = digest(msg.payload, msg.properties)
            for sub in self._subs.get(topic, []):
                if sub.handler is None:
                    sub.inbox.append(msg)
                    self.log.delivery("broker", topic, sub.name, dig, seq=msg.seq)
                else:
                    self._pending.append((sub, msg, dig))
        return msg.seq

    def pump(self, limit: int = 100_000) -> int:
        """Deliver queued messages to handler subscribers in publish order."""
        if self._pumping:
            return 0
        self._pumping = True
        delivered = 0
        try:
            while self._pending and delivered < limit:
                sub, msg, dig = self._pending.popleft()
                if not sub.active:
                    continue
                self.log.delivery("broker", msg.topic, sub.name, dig, seq=msg.seq)
                delivered += 1
                sub.handler(msg)
        finally:
            self._pumping = False
        return delivered

    @property
    def idle(self) -> bool:
        return not self._pending


# -- radio ------------------------------------------------------------------

@dataclass(frozen=True)
class RadioConfig:
    duplicate_prob: float = 0.0
    reorder_window: int = 0
    drop_prob: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("duplicate_prob", "drop_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.reorder_window < 0:
            raise ValueError("reorder_window must be non-negative")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    @property
    def noiseless(self) -> bool:
        return self.duplicate_prob == 0 and self.drop_prob == 0 and self.reorder_window == 0


def apply_noise(units: list, rng: np.random.Generator, cfg: RadioConfig) -> list:
    """Drop, duplicate and locally reorder a list of transmission units.

    Each unit is dropped with ``drop_prob``, otherwise sent once plus one
    extra copy with ``duplicate_prob``; every copy then moves at most
    ``reorder_window`` positions.
    """
    out = []
    for u in units:
        if cfg.drop_prob and rng.random() < cfg.drop_prob:
            continue
        out.append(u)
        if cfg.duplicate_prob and rng.random() < cfg.duplicate_prob:
            out.append(u)
    if cfg.reorder_window and out:
        keys = np.arange(len(out)) + rng.uniform(0, cfg.reorder_window + 1, size=len(out))
        out = [out[i] for i in np.argsort(keys, kind="stable")]
    return out


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "big")


class Radio:
    """Shared broadcast medium carrying frame lengths only.

    Every listener, honest or not, hears the same transmission; with noise
    enabled each listener gets its own independently perturbed copy drawn
    from a stream seeded by (rng_seed, broadcast number, listener name).
    A sender's aggregates (see ``sidechannel.split_bursts``) travel as units.
    """

    def __init__(self, log: EventLog, config: RadioConfig | None = None, splitter=None):
        from .sidechannel import split_bursts

        self.log = log
        self.config = config or RadioConfig()
        self.splitter = splitter or split_bursts
        self._listeners: list[tuple[str, Callable]] = []
        self._broadcasts = 0
        self._lock = threading.Lock()

    def listen(self, name: str, callback: Callable[[np.ndarray], None]) -> None:
        with self._lock:
            self._listeners.append((name, callback))

    def unlisten(self, name: str) -> None:
        with self._lock:
            self._listeners = [(n, c) for n, c in self._listeners if n != name]

    def broadcast_frames(self, frames, sender: str = "radio") -> None:
        frames = np.asarray(frames, dtype=np.int64).ravel()
        with self._lock:
            self._broadcasts += 1
            number = self._broadcasts
            listeners = list(self._listeners)
        units = self.splitter(frames)
        for name, callback in listeners:
            if self.config.noiseless:
                received = frames.copy()
            else:
                rng = np.random.default_rng([self.config.rng_seed, number, _name_key(name)])
                noisy = apply_noise(units, rng, self.config)
                received = np.asarray([f for u in noisy for f in u], dtype=np.int64)
            self.log.delivery("radio", sender, name, digest(received.tobytes()), frames=int(received.size))
            callback(received)
