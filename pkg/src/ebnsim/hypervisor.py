"""Central controller: virtual graph, routing, purification planning, admission.

Stage one estimates every link's fidelity from ``n`` simulated generation
trials with randomized Pauli-correlation measurements. Stage two routes
each request over the virtual graph with Dijkstra on
``-ln(w_e)``, ``w_e = (4 F_e - 1) / 3``, which maximizes the Werner
parameter product and so the predicted end-to-end fidelity.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ebnsim import qstate
from ebnsim.deskernel import Simulator, to_clock
from ebnsim.errors import AdmissionError, InfeasibleError, NoPathError
from ebnsim.metrics import write_csv
from ebnsim.netmodel import NetworkRuntime, RequestSpec, StoredPair, Topology, link_key
from ebnsim.protocols import App, PathAssignment, PathManager, _fresh_state

EPS = 1e-9
Z95 = 1.959963984540054
_SIGN = {"X": 1.0, "Y": -1.0, "Z": 1.0}  # <Phi+| s s |Phi+> for s = X, Y, Z
_OBS = {
    "X": np.kron(qstate.PAULI[2], qstate.PAULI[2]),
    "Y": np.kron(qstate.PAULI[2] @ qstate.PAULI[1] * 1j, qstate.PAULI[2] @ qstate.PAULI[1] * 1j),
    "Z": np.kron(qstate.PAULI[1], qstate.PAULI[1]),
}


def werner_parameter(f: float) -> float:
    return (4.0 * f - 1.0) / 3.0


def edge_cost(f: float) -> float:
    return -math.log(max(EPS, werner_parameter(f)))


def compose_fidelity(fidelities) -> float:
    """Predicted fidelity after swapping Werner links in sequence."""
    w = 1.0
    for f in fidelities:
        w *= werner_parameter(f)
    return (3.0 * w + 1.0) / 4.0


@dataclass(frozen=True)
class Edge:
    u: str
    v: str
    fidelity: float
    half_width: float

    @property
    def cost(self) -> float:
        return edge_cost(self.fidelity)

    @property
    def usable(self) -> bool:
        return self.fidelity > 0.25 + EPS


@dataclass
class VirtualGraph:
    nodes: list
    edges: dict  # link_key -> Edge
    kinds: dict = field(default_factory=dict)

    def edge(self, u: str, v: str) -> Edge:
        return self.edges[link_key(u, v)]

    def adjacency(self) -> dict:
        adj: dict = {n: [] for n in self.nodes}
        for (a, b), e in self.edges.items():
            if e.usable:
                adj[a].append(b)
                adj[b].append(a)
        for n in adj:
            adj[n].sort()
        return adj

    def path_fidelity(self, path) -> float:
        return compose_fidelity(self.edge(path[i], path[i + 1]).fidelity for i in range(len(path) - 1))

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n, "kind": self.kinds.get(n, "")} for n in self.nodes],
            "edges": [
                {"u": e.u, "v": e.v, "fidelity": e.fidelity, "half_width": e.half_width, "cost": e.cost}
                for _, e in sorted(self.edges.items())
            ],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_csv(self, path) -> None:
        rows = self.to_dict()["edges"]
        write_csv(path, ("u", "v", "fidelity", "half_width", "cost"), rows)


def heralded_link_state(net: NetworkRuntime, link) -> qstate.PairState:
    """Link pair at heralding, including the source qubit's dwell during flight."""
    a, b = link.u, link.v
    state = _fresh_state(net, link, a, b, 0)
    pair = StoredPair(state, [net.nodes[a], net.nodes[b]], [None, None], None)
    return pair.touch(0)


def estimate_link_fidelities(topology: Topology, n: int | None = None, seed: int | None = None) -> VirtualGraph:
    """Monte Carlo link-fidelity estimates with 95% normal half-widths.

    Each trial measures one randomly chosen correlation ``XX``, ``YY`` or
    ``ZZ`` on a freshly heralded pair; ``(1 + 3 s o) / 4`` is an unbiased
    single-shot estimator of the fidelity to ``Phi+``.
    """
    n = topology.params.estimation_trials if n is None else int(n)
    if n < 2:
        raise ValueError("need at least 2 estimation trials")
    seed = topology.params.seed if seed is None else seed
    sim = Simulator(seed)
    net = NetworkRuntime(sim, topology)
    edges = {}
    for key in sorted(topology.links):
        link = topology.links[key]
        rho = heralded_link_state(net, link).rho
        rng = sim.rng(f"vgraph/{key[0]}-{key[1]}")
        bases = rng.integers(0, 3, size=n)
        u = rng.random(n)
        samples = np.empty(n)
        for bi, name in enumerate("XYZ"):
            expval = float(np.trace(_OBS[name] @ rho).real)
            mask = bases == bi
            outcome = np.where(u[mask] < (1.0 + expval) / 2.0, 1.0, -1.0)
            samples[mask] = (1.0 + 3.0 * _SIGN[name] * outcome) / 4.0
        mean = float(samples.mean())
        hw = float(Z95 * samples.std(ddof=1) / math.sqrt(n))
        edges[key] = Edge(key[0], key[1], min(1.0, max(0.25, mean)), hw)
    kinds = {nid: spec.kind for nid, spec in topology.nodes.items()}
    return VirtualGraph(sorted(topology.nodes), edges, kinds)


def exact_virtual_graph(topology: Topology) -> VirtualGraph:
    """Virtual graph with the exact heralded link fidelities (no sampling)."""
    net = NetworkRuntime(Simulator(0), topology)
    edges = {}
    for key in sorted(topology.links):
        f = qstate.fidelity_to_phi_plus(heralded_link_state(net, topology.links[key]))
        edges[key] = Edge(key[0], key[1], min(1.0, max(0.25, f)), 0.0)
    kinds = {nid: spec.kind for nid, spec in topology.nodes.items()}
    return VirtualGraph(sorted(topology.nodes), edges, kinds)


def best_path(vgraph: VirtualGraph, s: str, d: str) -> tuple:
    """Minimum-cost path; ties go to fewer hops, then lexicographic node ids.

    Only switches may be intermediate nodes. Raises NoPathError.
    """
    adj = vgraph.adjacency()
    if s not in adj or d not in adj:
        raise NoPathError(f"unknown node in {s}->{d}")
    heap = [(0.0, 0, (s,))]
    settled: set = set()
    while heap:
        cost, hops, path = heapq.heappop(heap)
        node = path[-1]
        if node in settled:
            continue
        settled.add(node)
        if node == d:
            return path
        if node != s and vgraph.kinds.get(node, "switch") != "switch":
            continue  # end nodes do not relay
        for nb in adj[node]:
            if nb not in settled:
                heapq.heappush(heap, (cost + vgraph.edge(node, nb).cost, hops + 1, path + (nb,)))
    raise NoPathError(f"no path {s}->{d}")


def dejmps_bell_diagonal(p1, p2) -> tuple[float, tuple]:
    """Success probability and output of DEJMPS on Bell-diagonal inputs.

    Probabilities are ordered (Phi+, Phi-, Psi+, Psi-).
    """
    a1, d1, c1, b1 = p1
    a2, d2, c2, b2 = p2
    n = (a1 + b1) * (a2 + b2) + (c1 + d1) * (c2 + d2)
    if n <= 0:
        return 0.0, tuple(p1)
    a = (a1 * a2 + b1 * b2) / n
    b = (c1 * d2 + d1 * c2) / n
    c = (c1 * c2 + d1 * d2) / n
    d = (a1 * b2 + b1 * a2) / n
    return n, (a, d, c, b)


def purification_trajectory(f_path: float, rounds: int) -> list[float]:
    """Fidelity after 0..rounds pumping rounds, each with a fresh Werner pair."""
    fresh = qstate.BellDiag.werner(f_path).p
    cur = fresh
    out = [cur[0]]
    for _ in range(rounds):
        _, cur = dejmps_bell_diagonal(cur, fresh)
        out.append(cur[0])
    return out


def plan_purification(f_path: float, f_target: float, max_rounds: int = 5) -> int:
    """Rounds needed to reach ``f_target``; raises InfeasibleError."""
    if f_path >= f_target:
        return 0
    if not 0.25 < f_path <= 1.0:
        raise InfeasibleError(f"path fidelity {f_path} outside (0.25, 1]")
    if f_path <= 0.5:
        raise InfeasibleError(f"path fidelity {f_path:.4f} below the distillation threshold")
    for r, f in enumerate(purification_trajectory(f_path, max_rounds)):
        if f >= f_target:
            return r
    raise InfeasibleError(f"{max_rounds} rounds cannot lift {f_path:.4f} to {f_target}")


@dataclass
class Plan:
    request: RequestSpec
    nodes: tuple
    predicted_fidelity: float
    n_p: int
    pipelines: int
    purification: str


def route(vgraph: VirtualGraph, request: RequestSpec, max_rounds: int = 5, pipelines: int = 2) -> Plan:
    """Max-fidelity path plus its purification plan.

    A request option ``path`` pins the node sequence and skips the search
    (and with it the exclusion of fully depolarized links).
    """
    pinned = request.options.get("path")
    if pinned is not None:
        nodes = tuple(pinned)
        if nodes[0] != request.s or nodes[-1] != request.d:
            raise NoPathError(f"pinned path {nodes} does not join {request.s} and {request.d}")
        for u, v in zip(nodes, nodes[1:]):
            if link_key(u, v) not in vgraph.edges:
                raise NoPathError(f"pinned path uses missing link {u}-{v}")
    else:
        nodes = best_path(vgraph, request.s, request.d)
    f_path = vgraph.path_fidelity(nodes)
    mode = request.options.get("purification", "planned")
    n_p = 0
    if mode != "off":
        n_p = plan_purification(f_path, request.f_min, max_rounds)
    pipes = pipelines if (n_p > 0 or mode == "adaptive") else 1
    return Plan(request, nodes, f_path, n_p, pipes, mode)


@dataclass
class RequestOutcome:
    request: RequestSpec
    plan: Plan | None = None
    manager: PathManager | None = None
    aborted: bool = False
    reason: str = ""
    admitted_at: int | None = None

    @property
    def records(self) -> list:
        return self.manager.records if self.manager else []


class Hypervisor:
    """Admits requests in arrival order and runs one PathManager per request.

    A request whose demand exceeds a node's memory capacity is rejected.
    Otherwise it waits (blocking later arrivals) until enough positions
    are free on every node of its path.
    """

    def __init__(
        self,
        sim: Simulator,
        net: NetworkRuntime,
        vgraph: VirtualGraph,
        app_factory: Callable[[RequestSpec], App] | None = None,
    ):
        self.sim = sim
        self.net = net
        self.vgraph = vgraph
        self.app_factory = app_factory or (lambda req: App())
        self.params = net.topology.params
        self.waiting: list[RequestOutcome] = []
        self.outcomes: dict[str, RequestOutcome] = {}
        self.apps: dict[str, App] = {}
        self.peak_reserved: dict[str, int] = {n: 0 for n in net.nodes}

    def submit_all(self, requests) -> None:
        for req in requests:
            self.sim.call_at(to_clock(req.start), self._arrive, req)

    def _arrive(self, req: RequestSpec) -> None:
        out = RequestOutcome(req)
        self.outcomes[req.id] = out
        try:
            out.plan = route(self.vgraph, req, self.params.max_purification_rounds, self.params.purification_pipelines)
            self._check_capacity(out.plan)
        except (NoPathError, InfeasibleError, AdmissionError) as exc:
            out.aborted = True
            out.reason = f"{type(exc).__name__}: {exc}"
            self.sim.trace({"kind": "reject", "request": req.id, "reason": out.reason, "t": self.sim.now})
            return
        self.waiting.append(out)
        self._admit()

    def _check_capacity(self, plan: Plan) -> None:
        for n, need in PathAssignment.demand(plan.nodes, plan.pipelines).items():
            if need > self.net.nodes[n].spec.memories:
                raise AdmissionError(f"node {n} has {self.net.nodes[n].spec.memories} positions, needs {need}")

    def _admit(self) -> None:
        while self.waiting:
            out = self.waiting[0]
            plan = out.plan
            demand = PathAssignment.demand(plan.nodes, plan.pipelines)
            if any(self.net.nodes[n].free_positions() < c for n, c in demand.items()):
                return  # head-of-line blocking keeps arrival order
            self.waiting.pop(0)
            rid = out.request.id
            positions = {n: self.net.nodes[n].reserve(rid, c) for n, c in demand.items()}
            for n in demand:
                node = self.net.nodes[n]
                used = node.spec.memories - node.free_positions()
                self.peak_reserved[n] = max(self.peak_reserved[n], used)
            path = PathAssignment(rid, list(plan.nodes), positions, plan.n_p, plan.pipelines, plan.predicted_fidelity)
            app = self.app_factory(out.request)
            self.apps[rid] = app
            out.manager = PathManager(
                self.sim, self.net, out.request, path, app,
                on_finish=self._finished,
                purification=plan.purification,
                max_rounds=int(out.request.options.get("max_rounds", self.params.max_purification_rounds)),
            )
            out.admitted_at = self.sim.now
            out.manager.start()
            if hasattr(app, "bind"):
                app.bind(out.manager)

    def _finished(self, pm: PathManager) -> None:
        out = self.outcomes[pm.request.id]
        out.aborted = out.aborted or pm.aborted
        if pm.aborted and not out.reason:
            out.reason = "deadline exceeded"
        for n in pm.path.nodes:
            self.net.nodes[n].release(pm.request.id)
        # admit from a fresh event so the finishing manager's stack unwinds first
        self.sim.call_after(0, self._admit)

    def finalize(self) -> None:
        """Close managers still running at the end of the simulation."""
        for out in self.outcomes.values():
            if out.manager is not None and not out.manager.finished:
                out.manager.finalize()
        for out in self.waiting:
            out.aborted = True
            out.reason = out.reason or "never admitted"
        self.waiting.clear()
