"""Simulator tests: scheduling, links, loss, duty cycles, energy, determinism."""

import pytest
from hypothesis import given, settings, strategies as st

from sensefs.devicefs import SensorState
from sensefs.simnet import (
    DutyCycle, EnergyModel, Event, LinkModel, Network,
)


def net_with_sinks(*eids, seed=0, **kw):
    net = Network(seed, **kw)
    received = {e: [] for e in eids}
    for eid in eids:
        net.register(eid, lambda src, frame, e=eid: received[e].append(
            (net.now, src, frame)))
    return net, received


FRAME = bytes.fromhex("0B0000006E050001000000")   # any valid 11-byte frame


def test_link_model_validation():
    with pytest.raises(ValueError):
        LinkModel(latency=0)
    with pytest.raises(ValueError):
        LinkModel(loss=1.5)


def test_delivery_at_exact_latency():
    net, received = net_with_sinks("a", "b",
                                   default_link=LinkModel(latency=5))
    net.send("a", "b", FRAME)
    net.run_until_idle()
    assert received["b"] == [(5, "a", FRAME)]


def test_unknown_endpoint():
    net, _ = net_with_sinks("a")
    with pytest.raises(ValueError, match="unknown endpoint"):
        net.send("a", "nowhere", FRAME)


def test_loss_one_never_delivers():
    net, received = net_with_sinks("a", "b",
                                   default_link=LinkModel(latency=1, loss=1.0))
    for _ in range(50):
        net.send("a", "b", FRAME)
    net.run_until_idle()
    assert received["b"] == []
    assert sum(1 for l in net.log.lines if "\tdrop\t" in l) == 50


def test_loss_zero_delivers_all():
    net, received = net_with_sinks("a", "b",
                                   default_link=LinkModel(latency=1, loss=0.0))
    for _ in range(50):
        net.send("a", "b", FRAME)
    net.run_until_idle()
    assert len(received["b"]) == 50


def test_seeded_loss_trace_regression():
    # delivered-count for seed=42, loss=0.3, 1000 frames — pinned from one
    # recorded run; any RNG-consumption change must be deliberate
    net, received = net_with_sinks("a", "b", seed=42,
                                   default_link=LinkModel(latency=1, loss=0.3))
    for _ in range(1000):
        net.send("a", "b", FRAME)
    net.run_until_idle()
    delivered = len(received["b"])
    assert abs(delivered - 700) < 60        # sanity: near the expectation
    assert delivered == 705                 # regression pin


def test_jitter_within_bounds_and_seeded():
    def run(seed):
        net, received = net_with_sinks(
            "a", "b", seed=seed, default_link=LinkModel(latency=3, jitter=4))
        for _ in range(100):
            net.send("a", "b", FRAME)
        net.run_until_idle()
        return [t for t, _, _ in received["b"]]
    times = run(7)
    assert all(3 <= t <= 7 for t in times)
    assert times == run(7)
    assert times != run(8)


def test_event_ordering_same_tick():
    net = Network(0)
    order = []
    net.schedule(5, lambda: order.append("first"))
    net.schedule(5, lambda: order.append("second"))
    net.run_until_idle()
    assert order == ["first", "second"]


def test_event_cancellation():
    net = Network(0)
    fired = []
    ev = net.schedule(5, lambda: fired.append(1))
    ev.cancel()
    net.run_until_idle()
    assert fired == []


def test_run_until_advances_clock_without_events():
    net = Network(0)
    net.run_until(100)
    assert net.now == 100
    with pytest.raises(ValueError):
        net.run_until(50)


def test_causality_no_delivery_before_min_latency():
    net, received = net_with_sinks("a", "b",
                                   default_link=LinkModel(latency=2, jitter=3))
    sends = []
    for i in range(20):
        net.schedule(i * 10, lambda: sends.append(net.now) or
                     net.send("a", "b", FRAME))
    net.run_until_idle()
    deliveries = [t for t, _, _ in received["b"]]
    for sent, got in zip(sends, deliveries):
        assert got >= sent + 2


# -- duty cycles ---------------------------------------------------------

def test_duty_cycle_awake_at():
    d = DutyCycle(on_ticks=50, off_ticks=50, phase=0)
    for t in range(0, 50):
        assert d.awake_at(t)
    for t in range(50, 100):
        assert not d.awake_at(t)
    assert d.awake_at(100)
    shifted = DutyCycle(50, 50, phase=10)
    assert shifted.awake_at(10) and not shifted.awake_at(60)


@settings(max_examples=200)
@given(st.integers(1, 20), st.integers(0, 20), st.integers(0, 50),
       st.integers(0, 500), st.integers(0, 500))
def test_awake_ticks_closed_form_matches_brute_force(on, off, phase, t0, dt):
    if on + off == 0:
        return
    d = DutyCycle(on, off, phase)
    t1 = t0 + dt
    brute = sum(1 for t in range(t0, t1) if d.awake_at(t))
    assert d.awake_ticks_between(t0, t1) == brute


def test_sleeping_radio_drops_frames():
    net = Network(0, default_link=LinkModel(latency=1))
    state = SensorState("dev", duty=DutyCycle(50, 50, phase=0))
    got = []
    net.register("dev", lambda src, frame: got.append(net.now), state=state)
    net.register("cli", lambda src, frame: None)
    # delivery at t=51 lands in the off window [50, 100)
    net.schedule(50, lambda: net.send("cli", "dev", FRAME))
    # delivery at t=101 lands in the next on window
    net.schedule(100, lambda: net.send("cli", "dev", FRAME))
    net.run_until_idle()
    assert got == [101]
    assert any("\tsleepdrop\t" in l for l in net.log.lines)


# -- energy --------------------------------------------------------------

def test_tx_rx_idle_costs_charged():
    energy = EnergyModel(tx_cost_j=0.25, rx_cost_j=0.5,
                         idle_cost_j_per_tick=0.125)
    net = Network(0, energy=energy, default_link=LinkModel(latency=1))
    a = SensorState("a", energy_j=100.0)
    b = SensorState("b", energy_j=100.0)
    net.register("a", lambda src, frame: None, state=a)
    net.register("b", lambda src, frame: None, state=b)
    net.schedule(10, lambda: net.send("a", "b", FRAME))
    net.run_until_idle()
    a.settle(net.now)
    b.settle(net.now)
    # both settle through the delivery tick (now = 11): 11 idle ticks each
    assert a.energy_j == 100.0 - 11 * 0.125 - 0.25
    assert b.energy_j == 100.0 - 11 * 0.125 - 0.5


def test_energy_shortfall_fails_frame_and_pins_zero():
    energy = EnergyModel(tx_cost_j=5.0)
    net = Network(0, energy=energy, default_link=LinkModel(latency=1))
    a = SensorState("a", energy_j=3.0)
    net.register("a", lambda src, frame: None, state=a)
    net.register("b", lambda src, frame: None)
    net.send("a", "b", FRAME)
    net.run_until_idle()
    assert a.energy_j == 0.0
    assert a.sent_frames == 0
    assert any("\ttxfail\t" in l for l in net.log.lines)


def test_energy_conservation_randomized():
    # closed-form accounting matches incremental charging exactly when all
    # costs are binary-representable
    energy = EnergyModel(tx_cost_j=0.25, rx_cost_j=0.25,
                         idle_cost_j_per_tick=1.0 / 128)
    net = Network(3, energy=energy, default_link=LinkModel(latency=1, loss=0.2))
    states = {}
    for eid in ("a", "b"):
        states[eid] = SensorState(eid, energy_j=1024.0,
                                  duty=DutyCycle(30, 70, phase=0))
        net.register(eid, lambda src, frame: None, state=states[eid])
    import random
    rng = random.Random(99)
    for _ in range(500):
        t = rng.randrange(0, 5000)
        src, dst = rng.sample(["a", "b"], 2)
        net.schedule(t, lambda s=src, d=dst: net.send(s, d, FRAME))
    net.run_until_idle()
    for eid, state in states.items():
        state.settle(net.now)
        expected = (1024.0
                    - 0.25 * state.sent_frames
                    - 0.25 * state.received_frames
                    - (1.0 / 128) * state.awake_ticks)
        assert state.energy_j == expected
        # and the awake-tick count matches a brute-force scan
        brute = sum(1 for t in range(0, net.now)
                    if DutyCycle(30, 70, 0).awake_at(t))
        assert state.awake_ticks == brute


# -- determinism ----------------------------------------------------------

def run_trace(seed):
    net, _ = net_with_sinks("a", "b", seed=seed,
                            default_link=LinkModel(latency=2, jitter=3,
                                                   loss=0.25))
    for i in range(200):
        net.schedule(i, lambda: net.send("a", "b", FRAME))
    net.run_until_idle()
    return net.log.text()


def test_identical_seeds_identical_logs():
    assert run_trace(123) == run_trace(123)


def test_different_seeds_differ():
    assert run_trace(123) != run_trace(124)
