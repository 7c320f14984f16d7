import math

import numpy as np
import pytest

from ebnsim import qstate
from ebnsim.deskernel import Simulator
from ebnsim.errors import ConfigError, MissingQubitError
from ebnsim.netmodel import (
    PRESETS,
    Link,
    NetworkRuntime,
    StoredPair,
    attempt_success_probability,
    build_topology,
    channel_depolarization_probability,
    fresh_pair_rho,
    load_topology,
    processor_execute,
)

from conftest import chain_cfg

SMALL = """
[network]
seed = 3
[[node]]
id = "s"
kind = "end"
[[node]]
id = "d"
kind = "end"
[[node]]
id = "Q"
kind = "switch"
[[link]]
u = "s"
v = "Q"
length_km = 5
[[link]]
u = "Q"
v = "d"
length_km = 5
"""


def test_smallest_network_loads():
    topo = load_topology(SMALL)
    assert len(topo.nodes) == 3 and len(topo.links) == 2
    assert topo.nodes["Q"].k == 2 and topo.nodes["Q"].memories >= 2
    assert topo.link("Q", "s").delay_ns == pytest.approx(25_000.0)


def test_json_config_accepted():
    text = '{"node": [{"id": "a", "kind": "end"}, {"id": "b", "kind": "end"}], "link": [{"u": "a", "v": "b", "length_km": 1}]}'
    assert len(load_topology(text).links) == 1


def test_switch_with_fewer_memories_than_links_is_rejected():
    cfg = {
        "node": [{"id": "Q", "kind": "switch", "memories": 2}] + [{"id": f"e{i}", "kind": "end"} for i in range(3)],
        "link": [{"u": "Q", "v": f"e{i}", "length_km": 1} for i in range(3)],
    }
    with pytest.raises(ConfigError, match="memories < links") as exc:
        build_topology(cfg)
    assert "node Q" in str(exc.value)


def test_chain_is_equally_spaced():
    topo = build_topology(chain_cfg(60.0, 3))
    assert len(topo.links) == 4
    assert all(link.length_km == pytest.approx(15.0) for link in topo.links.values())


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda c: c["link"].append({"u": "s", "v": "nowhere", "length_km": 1}), "not a declared node"),
        (lambda c: c["link"][0].update(length_km=-1), "length_km"),
        (lambda c: c["link"][0].update(coupling=1.5), "coupling"),
        (lambda c: c["link"][0].update(f_src=0.1), "f_src"),
        (lambda c: c["node"][0].update(memories=3), "two memory positions"),
        (lambda c: c["node"][0].update(tech="diamond"), "unknown tech"),
        (lambda c: c["node"].append({"id": "island", "kind": "end"}), "not connected"),
        (lambda c: c.setdefault("request", []).append({"s": "s", "d": "Q"}), "end node"),
        (lambda c: c.setdefault("request", []).append({"s": "s", "d": "s"}), "s == d"),
        (lambda c: c.setdefault("tech", []).append({"name": "bad", "base": "NV", "t1_ns": 10, "t2_ns": 30}) or c["node"][0].update(tech="bad"), "T2"),
    ],
)
def test_config_errors_name_the_entity(mutate, needle):
    from ebnsim.netmodel import parse_config_text

    cfg = parse_config_text(SMALL)
    mutate(cfg)
    with pytest.raises(ConfigError, match=needle):
        build_topology(cfg)


def test_parse_error_is_a_config_error():
    with pytest.raises(ConfigError):
        load_topology("[[node]\nid=")


def test_attempt_success_probability_cases():
    nv = PRESETS["NV"]
    ideal = PRESETS["ideal"]
    assert attempt_success_probability(Link("a", "b", 0.0), ideal) == 1.0
    assert attempt_success_probability(Link("a", "b", 50.0, alpha_db_km=0.2), ideal) == pytest.approx(0.1)
    assert attempt_success_probability(Link("a", "b", 5.0, coupling=0.5), nv) == pytest.approx(0.5 * 0.3 * 10 ** -0.1)
    zero = PRESETS["ideal"].__class__("z", 1, 1, 1, photon_conversion_efficiency=0.0)
    assert attempt_success_probability(Link("a", "b", 1.0), zero) == 0.0


def test_channel_depolarization_cases():
    assert channel_depolarization_probability(Link("a", "b", 0.0, d_pmd=1.0, tau_c=1.0)) == 0.0
    assert channel_depolarization_probability(Link("a", "b", 4.0, d_pmd=0.5, tau_c=1.0)) == pytest.approx(1 - math.exp(-1))
    assert channel_depolarization_probability(Link("a", "b", 4.0, d_pmd=0.5)) == 0.0


def test_fresh_pair_is_depolarized_werner():
    link = Link("a", "b", 4.0, f_src=0.9, d_pmd=0.5, tau_c=1.0)
    p = 1 - math.exp(-1)
    f = qstate.fidelity_to_phi_plus(qstate.PairState(fresh_pair_rho(link, 0)))
    assert f == pytest.approx((1 - p) * 0.9 + p * 0.25, abs=1e-12)


def test_presets_order_gate_speeds():
    assert PRESETS["SiV"].one_qubit_gate < PRESETS["NV"].one_qubit_gate / 1000


def _node_with_pair():
    sim = Simulator(0)
    topo = load_topology(SMALL)
    net = NetworkRuntime(sim, topo)
    q = net.nodes["Q"]
    pos = q.reserve("me", 2)
    pair = StoredPair(qstate.bell_state(0), [net.nodes["s"], q], [None, None], None)
    q.store(pos[0], pair, 1, "me")
    q.store(pos[1], StoredPair(qstate.bell_state(0), [q, net.nodes["d"]], [None, None], None), 0, "me")
    return sim, q, pos


def test_processor_serializes_instructions():
    sim, q, pos = _node_with_pair()
    done = []
    processor_execute(q, 1000, pos, lambda: done.append(sim.now))
    processor_execute(q, 1000, pos, lambda: done.append(sim.now))
    sim.run_until()
    assert done == [1000, 2000]


def test_processor_rejects_empty_positions():
    sim, q, pos = _node_with_pair()
    q.clear(pos[0])
    with pytest.raises(MissingQubitError):
        processor_execute(q, 10, [pos[0]], lambda: None)


def test_memory_position_exclusivity():
    sim, q, pos = _node_with_pair()
    with pytest.raises(AssertionError):
        q.store(pos[0], StoredPair(qstate.bell_state(0), [q, q], [None, None], None), 0, "me")
    with pytest.raises(AssertionError):
        q.take(pos[0], "someone-else")
    with pytest.raises(MissingQubitError):
        q.reserve("other", q.spec.memories)


def test_saturated_switch_serves_requests_round_robin():
    # ten one-instruction jobs of 10 us queued at once finish at 10, 20, ... 100 us
    sim, q, pos = _node_with_pair()
    ends = []
    for _ in range(10):
        processor_execute(q, 10_000, pos, lambda: ends.append(sim.now))
    sim.run_until()
    assert ends == [10_000 * (i + 1) for i in range(10)]
    assert np.all(np.diff(ends) == 10_000)
