import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from u2fi import sidechannel
from u2fi.net import Broker, EventLog, Radio, RadioConfig, SimClock, apply_noise


@pytest.fixture
def log():
    return EventLog(SimClock())


@pytest.fixture
def broker(log):
    return Broker(log)


def test_publish_without_subscribers_advances_seq(broker, log):
    assert broker.publish("nobody", b"x") == 1
    assert broker.publish("nobody", b"y") == 2
    assert log.records == []


def test_u2f_host_register_reaches_gateway(broker):
    sub = broker.subscribe("u2f_host", name="gateway")
    broker.publish("u2f_host", b"register")
    msg = sub.get()
    assert (msg.topic, msg.payload) == ("u2f_host", b"register")


def test_consecutive_seq(broker):
    sub = broker.subscribe("t")
    broker.publish("t", "a")
    broker.publish("t", "b")
    a, b = sub.drain()
    assert b.seq == a.seq + 1


def test_no_retained_messages(broker):
    broker.publish("t", b"early")
    sub = broker.subscribe("t")
    assert sub.get() is None


def test_fan_out_and_unsubscribe(broker):
    s1, s2 = broker.subscribe("t"), broker.subscribe("t")
    broker.publish("t", b"1")
    s2.close()
    broker.publish("t", b"2")
    assert [m.payload for m in s1.drain()] == [b"1", b"2"]
    assert [m.payload for m in s2.drain()] == [b"1"]
    s2.close()


def test_topics_are_literal(broker):
    sub = broker.subscribe("device/+/cmd")
    broker.publish("device/01/cmd", b"x")
    assert sub.get() is None


def test_empty_topic_rejected(broker):
    with pytest.raises(ValueError):
        broker.publish("", b"x")


def test_handlers_run_in_publish_order(broker):
    got = []

    def h(msg):
        got.append(msg.payload)
        if msg.payload == b"a":
            broker.publish("t", b"c")

    broker.subscribe("t", h)
    broker.publish("t", b"a")
    broker.publish("t", b"b")
    assert not broker.idle
    broker.pump()
    assert got == [b"a", b"b", b"c"] and broker.idle


def test_unsubscribed_handler_skipped(broker):
    got = []
    sub = broker.subscribe("t", got.append)
    broker.publish("t", b"x")
    sub.close()
    broker.pump()
    assert got == []


def test_per_topic_fifo_under_threads(broker):
    sub = broker.subscribe("t")

    def worker(k):
        for i in range(200):
            broker.publish("t", f"{k}:{i}")

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    msgs = sub.drain()
    assert [m.seq for m in msgs] == list(range(1, 801))
    for k in range(4):
        mine = [int(m.payload.split(b":")[1]) for m in msgs if m.payload.startswith(f"{k}:".encode())]
        assert mine == list(range(200))


def test_delivery_log_lines(broker, log):
    broker.subscribe("t", name="alice")
    log.clock.advance(2.5)
    broker.publish("t", b"hi")
    (rec,) = log.records
    assert rec["t"] == 2.5 and rec["ch"] == "broker" and rec["topic"] == "t" and rec["to"] == "alice"
    assert len(rec["digest"]) == 16
    assert "alice" in EventLog.render(rec)


def test_clock_never_runs_backwards():
    with pytest.raises(ValueError):
        SimClock().advance(-1)


@pytest.mark.parametrize("kwargs", [
    {"duplicate_prob": 1.5}, {"drop_prob": -0.1}, {"reorder_window": -1}, {"rng_seed": 2**64},
])
def test_radio_config_validation(kwargs):
    with pytest.raises(ValueError):
        RadioConfig(**kwargs)


def _radio(cfg, names=("dev", "adv")):
    log = EventLog(SimClock())
    radio = Radio(log, cfg)
    got = {n: [] for n in names}
    for n in names:
        radio.listen(n, got[n].append)
    return log, radio, got


def test_identity_channel_and_symmetry():
    frames = sidechannel.encode(b"payload")
    _, radio, got = _radio(RadioConfig())
    radio.broadcast_frames(frames)
    assert np.array_equal(got["dev"][0], frames)
    assert np.array_equal(got["adv"][0], frames)


def test_drop_everything():
    _, radio, got = _radio(RadioConfig(drop_prob=1.0))
    radio.broadcast_frames(sidechannel.encode(b"x"))
    assert got["dev"][0].size == 0


def test_seeded_traces_repeat():
    cfg = RadioConfig(duplicate_prob=0.4, reorder_window=5, drop_prob=0.1, rng_seed=77)
    traces = []
    for _ in range(2):
        log, radio, got = _radio(cfg)
        for p in (b"first", b"second"):
            radio.broadcast_frames(sidechannel.encode(p))
        traces.append((log.to_jsonl(), [g.tobytes() for g in got["dev"] + got["adv"]]))
    assert traces[0] == traces[1]


def test_listener_views_independent_of_registration_order():
    cfg = RadioConfig(duplicate_prob=0.5, reorder_window=3, rng_seed=1)
    _, r1, g1 = _radio(cfg, ("a", "b"))
    _, r2, g2 = _radio(cfg, ("b", "a"))
    f = sidechannel.encode(b"order")
    r1.broadcast_frames(f)
    r2.broadcast_frames(f)
    assert np.array_equal(g1["a"][0], g2["a"][0])


def test_unlisten():
    _, radio, got = _radio(RadioConfig())
    radio.unlisten("adv")
    radio.broadcast_frames([1, 2])
    assert got["adv"] == [] and len(got["dev"]) == 1


@settings(max_examples=80, deadline=None)
@given(n=st.integers(0, 60), w=st.integers(0, 10), seed=st.integers(0, 2**32))
def test_reorder_displacement_bounded(n, w, seed):
    units = list(range(n))
    out = apply_noise(units, np.random.default_rng(seed), RadioConfig(reorder_window=w))
    assert sorted(out) == units
    assert all(abs(pos - u) <= w for pos, u in enumerate(out))


@settings(max_examples=80, deadline=None)
@given(n=st.integers(0, 60), p=st.floats(0, 1), seed=st.integers(0, 2**32))
def test_duplicates_at_most_one_extra_copy(n, p, seed):
    out = apply_noise(list(range(n)), np.random.default_rng(seed), RadioConfig(duplicate_prob=p))
    counts = np.bincount(out, minlength=n) if out else np.zeros(n, int)
    assert counts.min(initial=1) >= 1 and counts.max(initial=1) <= 2


def test_event_log_find_and_jsonl(log):
    log.event("x", "hello", a=1)
    log.event("y", "bye")
    assert [r["src"] for r in log.find(kind="hello")] == ["x"]
    assert log.to_jsonl().count("\n") == 2
    seen = []
    log.listeners.append(seen.append)
    log.event("z", "k")
    assert seen[0]["src"] == "z"
