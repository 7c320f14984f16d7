import itertools
import math

import networkx as nx
import numpy as np
import pytest

from ebnsim import qstate
from ebnsim.errors import InfeasibleError, NoPathError
from ebnsim.hypervisor import (
    Edge,
    VirtualGraph,
    best_path,
    compose_fidelity,
    dejmps_bell_diagonal,
    edge_cost,
    estimate_link_fidelities,
    exact_virtual_graph,
    plan_purification,
    route,
)
from ebnsim.netmodel import RequestSpec, build_topology, link_key, load_topology_file

import oracles as O
from conftest import chain_cfg, run_cfg


def vgraph(edges, ends=("s", "d")):
    nodes = sorted({n for e in edges for n in e[:2]} | set(ends))
    kinds = {n: ("end" if n in ends else "switch") for n in nodes}
    return VirtualGraph(nodes, {link_key(u, v): Edge(*link_key(u, v), f, 0.0) for u, v, f in edges}, kinds)


def exhaustive_best(vg, s, d):
    g = nx.Graph()
    g.add_nodes_from(vg.nodes)
    for (a, b), e in vg.edges.items():
        if e.usable:
            g.add_edge(a, b)
    best = None
    for path in nx.all_simple_paths(g, s, d):
        if any(vg.kinds[n] != "switch" for n in path[1:-1]):
            continue
        key = (-vg.path_fidelity(path), len(path), tuple(path))
        if best is None or key < best:
            best = key
    return None if best is None else best[2]


def random_vgraph(rng, n):
    ends = [f"e{i}" for i in range(int(rng.integers(2, 4)))]
    switches = [f"q{i}" for i in range(n - len(ends))]
    nodes = ends + switches
    edges = []
    for a, b in itertools.combinations(nodes, 2):
        if rng.random() < 0.35:
            f = float(rng.choice([rng.uniform(0.3, 1.0), 0.25]) if rng.random() < 0.1 else rng.uniform(0.3, 1.0))
            edges.append((a, b, f))
    return vgraph(edges, ends=tuple(ends)), ends


def test_dijkstra_matches_exhaustive_enumeration_on_random_graphs():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(100):
        vg, ends = random_vgraph(rng, int(rng.integers(4, 13)))
        s, d = ends[0], ends[1]
        ref = exhaustive_best(vg, s, d)
        if ref is None:
            with pytest.raises(NoPathError):
                best_path(vg, s, d)
            continue
        got = best_path(vg, s, d)
        assert tuple(got) == ref
        assert vg.path_fidelity(got) == pytest.approx(vg.path_fidelity(ref), abs=1e-12)
        # cost/fidelity duality
        cost = sum(vg.edge(a, b).cost for a, b in zip(got, got[1:]))
        prod = math.prod((4 * vg.edge(a, b).fidelity - 1) / 3 for a, b in zip(got, got[1:]))
        assert cost == pytest.approx(-math.log(prod), abs=1e-12)
        checked += 1
    assert checked > 50


def test_direct_link_beats_two_equal_hops():
    vg = vgraph([("s", "d", 0.9), ("s", "Q", 0.9), ("Q", "d", 0.9)])
    assert best_path(vg, "s", "d") == ("s", "d")
    assert vg.path_fidelity(("s", "Q", "d")) == pytest.approx(0.81 + 0.01 / 3, abs=1e-12)


def test_two_good_hops_beat_one_poor_link():
    vg = vgraph([("s", "d", 0.88), ("s", "Q", 0.95), ("Q", "d", 0.95)])
    assert best_path(vg, "s", "d") == ("s", "Q", "d")
    w = ((4 * 0.95 - 1) / 3) ** 2
    assert vg.path_fidelity(("s", "Q", "d")) == pytest.approx((3 * w + 1) / 4, abs=1e-12)
    assert compose_fidelity([0.95, 0.95]) == pytest.approx(0.903333, abs=1e-6)


def test_disconnected_and_depolarized_edges_have_no_path():
    with pytest.raises(NoPathError):
        best_path(vgraph([("s", "Q", 0.9), ("P", "d", 0.9)]), "s", "d")
    with pytest.raises(NoPathError):
        best_path(vgraph([("s", "Q", 0.9), ("Q", "d", 0.25)]), "s", "d")
    assert edge_cost(0.25) == pytest.approx(-math.log(1e-9))


def test_end_nodes_never_relay():
    vg = vgraph([("s", "x", 0.99), ("x", "d", 0.99), ("s", "Q", 0.8), ("Q", "d", 0.8)], ends=("s", "d", "x"))
    assert best_path(vg, "s", "d") == ("s", "Q", "d")


def _pumping_oracle(f, rounds):
    fresh = O.werner_rho(f)
    cur = fresh
    out = [f]
    for _ in range(rounds):
        _, cur = O.dejmps_oracle(cur, fresh)
        out.append(np.real(O.BELL[0].conj() @ cur @ O.BELL[0]))
    return out


def test_purification_plan_examples_follow_dense_oracle():
    assert plan_purification(0.99, 0.95) == 0
    traj = _pumping_oracle(0.7, 5)
    expected = next(r for r, f in enumerate(traj) if f >= 0.75)
    assert expected == 2 and traj[1] == pytest.approx(0.5 / 0.68, abs=1e-12)
    assert plan_purification(0.7, 0.75) == expected
    with pytest.raises(InfeasibleError):
        plan_purification(0.45, 0.9)
    with pytest.raises(InfeasibleError):
        plan_purification(0.6, 0.99, max_rounds=5)


def test_bell_diagonal_dejmps_matches_dense_circuit():
    rng = np.random.default_rng(9)
    for _ in range(50):
        p1, p2 = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        n, out = dejmps_bell_diagonal(p1, p2)
        ref_n, ref_rho = O.dejmps_oracle(O.bell_diag_rho(p1), O.bell_diag_rho(p2))
        assert n == pytest.approx(ref_n, abs=1e-12)
        assert np.allclose(out, O.bell_coeffs(ref_rho), atol=1e-12)


def test_noiseless_link_estimate_is_exact():
    topo = build_topology(chain_cfg(10.0, 1, alpha_db_km=0.0))
    vg = estimate_link_fidelities(topo, n=200, seed=1)
    assert all(e.fidelity == 1.0 and e.half_width == 0.0 for e in vg.edges.values())


def test_estimate_covers_closed_form_fidelity():
    cfg = chain_cfg(8.0, 0, f_src=0.95, d_pmd=0.3, tau_c=1.0)
    topo = build_topology(cfg)
    link = topo.link("s", "d")
    p = 1 - math.exp(-((0.3 * math.sqrt(8.0)) ** 2))
    exact = (1 - p) * 0.95 + p * 0.25
    assert exact_virtual_graph(topo).edge("s", "d").fidelity == pytest.approx(exact, abs=1e-12)
    hits = 0
    for seed in range(100):
        e = estimate_link_fidelities(topo, n=1000, seed=seed).edge("s", "d")
        hits += abs(e.fidelity - exact) <= e.half_width
    assert hits >= 93
    assert link.d_pmd == 0.3


def test_demo_links_have_narrow_confidence_intervals(demo_path):
    topo = load_topology_file(demo_path)
    vg = estimate_link_fidelities(topo)
    assert all(e.half_width <= 0.01 for e in vg.edges.values())


def test_route_returns_plan_with_pipelines():
    vg = vgraph([("s", "Q", 0.85), ("Q", "d", 0.85)])
    req = RequestSpec("r", "s", "d", f_min=0.8)
    plan = route(vg, req)
    assert plan.nodes == ("s", "Q", "d") and plan.n_p >= 1 and plan.pipelines == 2
    plan0 = route(vg, RequestSpec("r", "s", "d", f_min=0.5))
    assert plan0.n_p == 0 and plan0.pipelines == 1


def _star_cfg(memories, n_req, persistence=1.0):
    nodes = [{"id": "Q", "kind": "switch", "tech": "ideal", "memories": memories}]
    links, reqs = [], []
    for i in range(n_req):
        nodes += [{"id": f"a{i}", "kind": "end", "tech": "ideal"}, {"id": f"b{i}", "kind": "end", "tech": "ideal"}]
        links += [{"u": f"a{i}", "v": "Q", "length_km": 1.0, "source": "Q", "alpha_db_km": 0.0},
                  {"u": "Q", "v": f"b{i}", "length_km": 1.0, "source": "Q", "alpha_db_km": 0.0}]
        reqs.append({"id": f"r{i}", "s": f"a{i}", "d": f"b{i}", "persistence_ms": persistence})
    return {"network": {}, "node": nodes, "link": links, "request": reqs}


def test_disjoint_requests_run_concurrently():
    res = run_cfg(_star_cfg(4, 2), exact_links=True)
    assert res.outcomes["r0"].admitted_at == res.outcomes["r1"].admitted_at == 0


def _shared_chain(n_req, memories):
    reqs = [{"persistence_ms": 1.0, "start_ms": 0.0} for _ in range(n_req)]
    return chain_cfg(2.0, 1, requests=reqs, memories=memories, alpha_db_km=0.0)


def test_exhausted_memories_queue_the_second_request():
    res = run_cfg(_shared_chain(2, 2), exact_links=True)
    out = res.outcomes
    assert out["r0"].admitted_at == 0
    assert out["r1"].admitted_at >= 1_000_000
    assert not any(o.aborted for o in out.values())


def test_reservation_never_exceeds_memories():
    from ebnsim.deskernel import Simulator
    from ebnsim.hypervisor import Hypervisor
    from ebnsim.netmodel import NetworkRuntime

    topo = build_topology(_shared_chain(5, 3))
    sim = Simulator(3)
    net = NetworkRuntime(sim, topo)
    hv = Hypervisor(sim, net, exact_virtual_graph(topo))
    hv.submit_all(topo.requests)
    peaks = {n: [] for n in net.nodes}

    def check(_record):
        for n, node in net.nodes.items():
            used = sum(r is not None for r in node.reserved)
            peaks[n].append(used)
            assert used <= node.spec.memories

    sim.trace_hooks.append(check)
    sim.run_until()
    hv.finalize()
    assert max(peaks["Q1"]) == 2  # one request (two positions) fits in three
    assert hv.peak_reserved["Q1"] == 2
    assert all(hv.outcomes[r.id].manager.records for r in topo.requests)


def test_oversized_demand_is_rejected():
    cfg = _star_cfg(2, 1)
    cfg["request"][0].update(f_min=0.99, purification="adaptive")
    res = run_cfg(cfg, exact_links=True)
    out = res.outcomes["r0"]
    assert out.aborted and "AdmissionError" in out.reason


def test_planned_fidelity_matches_delivered_with_exact_werner_links():
    cfg = chain_cfg(9.0, 2, requests=[{"persistence_ms": 1.0}], f_src=0.95, alpha_db_km=0.0)
    res = run_cfg(cfg, exact_links=True)
    plan = res.outcomes["r0"].plan
    fids = np.array([r.fidelity for r in res.records if r.c])
    assert plan.predicted_fidelity == pytest.approx(compose_fidelity([0.95] * 3), abs=1e-12)
    assert abs(fids.mean() - plan.predicted_fidelity) < 3 * max(fids.std() / math.sqrt(len(fids)), 1e-12) + 1e-9
