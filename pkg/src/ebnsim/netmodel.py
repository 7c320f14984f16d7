"""Physical network description, config ingestion and node runtime state.

A :class:`Topology` is immutable once loaded. The runtime side
(:class:`NodeRuntime`, :class:`Processor`, :class:`StoredPair`) is owned
by one :class:`~ebnsim.deskernel.Simulator` instance.

Config files are TOML (or JSON) with ``[network]``, ``[[tech]]``,
``[[node]]``, ``[[link]]`` and ``[[request]]`` tables, or a ``[chain]``
shorthand that expands into an equally spaced repeater chain. See
``ebnsim/data/demo.toml`` for an annotated example.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from ebnsim import qstate
from ebnsim.deskernel import Simulator, to_clock
from ebnsim.errors import ConfigError, MissingQubitError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

C_FIBER_M_S = 2.0e8
DEFAULT_ALPHA_DB_KM = 0.2
INF = math.inf


@dataclass(frozen=True)
class TechnologyPreset:
    """Memory/processor technology. Durations in ns, T1/T2 in ns.

    ``wavelength_nm`` is carried for completeness and has no effect.
    """

    name: str
    one_qubit_gate: float
    two_qubit_gate: float
    measurement: float
    photon_conversion_efficiency: float
    gate_depolarization: float = 0.0
    t1: float = INF
    t2: float = INF
    memory_model: str = "t1t2"
    memory_rate_hz: float = 0.0
    wavelength_nm: float = 1550.0

    def __post_init__(self):
        for name in ("one_qubit_gate", "two_qubit_gate", "measurement"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0", f"tech {self.name}")
        if not 0.0 <= self.photon_conversion_efficiency <= 1.0:
            raise ConfigError("photon_conversion_efficiency outside [0, 1]", f"tech {self.name}")
        if not 0.0 <= self.gate_depolarization <= 1.0:
            raise ConfigError("gate_depolarization outside [0, 1]", f"tech {self.name}")
        if not (self.t1 > 0 and self.t2 > 0):
            raise ConfigError("t1 and t2 must be > 0", f"tech {self.name}")
        if self.memory_model == "t1t2" and self.t2 > 2 * self.t1:
            raise ConfigError(f"T2={self.t2:g} exceeds 2*T1={2 * self.t1:g}", f"tech {self.name}")

    def memory_noise(self) -> qstate.NoiseChannel:
        if self.memory_model == "t1t2":
            if math.isinf(self.t1) and math.isinf(self.t2):
                return qstate.NoiseChannel.none()
            return qstate.NoiseChannel.t1t2(self.t1, self.t2)
        if self.memory_model == "dephasing":
            return qstate.NoiseChannel.dephasing(self.memory_rate_hz)
        if self.memory_model == "depolarizing":
            return qstate.NoiseChannel.depolarizing(self.memory_rate_hz)
        if self.memory_model == "none":
            return qstate.NoiseChannel.none()
        raise ConfigError(f"unknown memory model {self.memory_model!r}", f"tech {self.name}")


# Calibration knobs, not measured values; only the 1 ps SiV single-qubit gate
# is taken from the literature.
PRESETS: dict[str, TechnologyPreset] = {
    "NV": TechnologyPreset(
        "NV", one_qubit_gate=10.0, two_qubit_gate=500.0, measurement=2000.0,
        photon_conversion_efficiency=0.3, gate_depolarization=1e-3,
        t1=1.0e10, t2=1.0e9,
    ),
    "SiV": TechnologyPreset(
        "SiV", one_qubit_gate=1e-3, two_qubit_gate=100.0, measurement=1000.0,
        photon_conversion_efficiency=0.4, gate_depolarization=1e-3,
        t1=1.0e9, t2=1.3e7, wavelength_nm=737.0,
    ),
    "ideal": TechnologyPreset(
        "ideal", one_qubit_gate=1.0, two_qubit_gate=1.0, measurement=1.0,
        photon_conversion_efficiency=1.0,
    ),
}


@dataclass(frozen=True)
class SwitchNode:
    id: str
    tech: TechnologyPreset
    memories: int
    k: int = 0
    memory_noise: qstate.NoiseChannel = field(default_factory=qstate.NoiseChannel.none)
    kind: str = "switch"


@dataclass(frozen=True)
class EndNode:
    id: str
    tech: TechnologyPreset
    memories: int = 2
    memory_noise: qstate.NoiseChannel = field(default_factory=qstate.NoiseChannel.none)
    app_memory_noise: qstate.NoiseChannel = field(default_factory=qstate.NoiseChannel.none)
    kind: str = "end"


@dataclass(frozen=True)
class Link:
    """Fiber link; the EPR source sits at ``source`` (distance zero)."""

    u: str
    v: str
    length_km: float
    alpha_db_km: float = DEFAULT_ALPHA_DB_KM
    coupling: float = 1.0
    f_src: float = 1.0
    d_pmd: float = 0.0  # ps / sqrt(km)
    tau_c: float = INF  # ps
    extra_loss: float = 0.0  # per-attempt photon-loss probability besides fiber attenuation
    source: str = ""
    c_fiber: float = C_FIBER_M_S

    def __post_init__(self):
        ent = f"link {self.u}-{self.v}"
        if self.length_km < 0:
            raise ConfigError("length_km < 0", ent)
        if self.alpha_db_km < 0:
            raise ConfigError("alpha_db_km < 0", ent)
        if not 0.0 <= self.coupling <= 1.0:
            raise ConfigError("coupling outside [0, 1]", ent)
        if not 0.25 <= self.f_src <= 1.0:
            raise ConfigError("f_src outside [0.25, 1]", ent)
        if not 0.0 <= self.extra_loss <= 1.0:
            raise ConfigError("extra_loss outside [0, 1]", ent)
        if self.d_pmd < 0 or self.tau_c <= 0:
            raise ConfigError("d_pmd must be >= 0 and tau_c > 0", ent)
        if not self.source:
            object.__setattr__(self, "source", self.u)

    @property
    def key(self) -> tuple[str, str]:
        return link_key(self.u, self.v)

    @property
    def delay_ns(self) -> float:
        """Quantum and classical propagation delay, L / c_fiber."""
        return self.length_km * 1e3 / self.c_fiber * 1e9

    def other(self, node: str) -> str:
        return self.v if node == self.u else self.u


def link_key(u: str, v: str) -> tuple[str, str]:
    return (u, v) if u <= v else (v, u)


@dataclass(frozen=True)
class RequestSpec:
    """One configured request; times in ns (``inf`` allowed for the deadline)."""

    id: str
    s: str
    d: str
    f_min: float = 0.0
    deadline: float = INF
    persistence: float = 1e8
    app: str = "capacity"
    rate_hz: float | None = None
    start: float = 0.0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        ent = f"request {self.id}"
        if self.s == self.d:
            raise ConfigError("s == d", ent)
        if not 0.0 <= self.f_min <= 1.0:
            raise ConfigError("f_min outside [0, 1]", ent)
        if not self.deadline >= 0:
            raise ConfigError("deadline must be >= 0", ent)
        if not self.persistence > 0:
            raise ConfigError("persistence must be > 0", ent)
        if self.rate_hz is not None and not self.rate_hz > 0:
            raise ConfigError("rate_hz must be > 0", ent)


@dataclass(frozen=True)
class NetworkParams:
    seed: int = 0
    name: str = "network"
    source_period_ns: float = 100.0
    estimation_trials: int = 1000
    max_purification_rounds: int = 5
    purification_pipelines: int = 2


@dataclass(frozen=True)
class Topology:
    params: NetworkParams
    nodes: dict
    links: dict
    requests: tuple = ()

    def neighbors(self, node: str) -> list[str]:
        out = []
        for (a, b) in self.links:
            if a == node:
                out.append(b)
            elif b == node:
                out.append(a)
        return sorted(out)

    def link(self, u: str, v: str) -> Link:
        return self.links[link_key(u, v)]

    def with_requests(self, requests) -> "Topology":
        return replace(self, requests=tuple(requests))

    def with_params(self, **kw) -> "Topology":
        return replace(self, params=replace(self.params, **kw))


# --- physics formulas -------------------------------------------------------


def attempt_success_probability(link: Link, tech: TechnologyPreset) -> float:
    """Heralded success probability of one generation attempt."""
    p = link.coupling * tech.photon_conversion_efficiency * 10.0 ** (-link.alpha_db_km * link.length_km / 10.0)
    return min(1.0, max(0.0, p * (1.0 - link.extra_loss)))


def channel_depolarization_probability(link: Link) -> float:
    """PMD-induced depolarization of the flying photon."""
    if link.length_km == 0 or link.d_pmd == 0 or math.isinf(link.tau_c):
        return 0.0
    tau_pmd = link.d_pmd * math.sqrt(link.length_km)
    return min(1.0, max(0.0, 1.0 - math.exp(-((tau_pmd / link.tau_c) ** 2))))


def fresh_pair_rho(link: Link, source_side: int) -> np.ndarray:
    """Werner(F_src) with channel depolarization on the flying qubit.

    ``source_side`` is the pair side (0=A, 1=B) that stays at the source.
    """
    state = qstate.werner(link.f_src)
    p_dep = channel_depolarization_probability(link)
    if p_dep > 0:
        state = qstate.apply_noise(state, 1 - source_side, qstate.NoiseChannel.depolarize_prob(p_dep), 0.0)
    return state.rho


# --- config ---------------------------------------------------------------------


def _num(value, ent: str, name: str) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "+inf"):
            return INF
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{name}={value!r} is not a number", ent) from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name}={value!r} is not a number", ent)
    return float(value)


def parse_config_text(text: str) -> dict:
    text = text.strip()
    try:
        if text.startswith("{"):
            return json.loads(text)
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"parse error: {exc}") from exc


def _noise_from_table(tbl: dict, ent: str) -> qstate.NoiseChannel:
    kind = tbl.get("kind", "none")
    try:
        if kind == "t1t2":
            return qstate.NoiseChannel.t1t2(_num(tbl.get("t1_ns", INF), ent, "t1_ns"), _num(tbl.get("t2_ns", INF), ent, "t2_ns"))
        if kind in ("dephasing", "depolarizing"):
            return qstate.NoiseChannel(kind, rate=_num(tbl.get("rate_hz", 0.0), ent, "rate_hz"))
        if kind in ("depolarize_prob", "dephase_prob"):
            return qstate.NoiseChannel(kind, p=_num(tbl.get("p", 0.0), ent, "p"))
        return qstate.NoiseChannel(kind)
    except ValueError as exc:
        raise ConfigError(str(exc), ent) from exc


_TECH_KEYS = {
    "one_qubit_gate_ns": "one_qubit_gate",
    "two_qubit_gate_ns": "two_qubit_gate",
    "measurement_ns": "measurement",
    "photon_conversion_efficiency": "photon_conversion_efficiency",
    "conversion": "photon_conversion_efficiency",
    "gate_depolarization": "gate_depolarization",
    "t1_ns": "t1",
    "t2_ns": "t2",
    "memory_model": "memory_model",
    "memory_rate_hz": "memory_rate_hz",
    "wavelength_nm": "wavelength_nm",
}


def _tech_from_table(tbl: dict, base: TechnologyPreset | None, ent: str) -> TechnologyPreset:
    kw = {}
    for key, attr in _TECH_KEYS.items():
        if key in tbl:
            kw[attr] = tbl[key] if attr == "memory_model" else _num(tbl[key], ent, key)
    if base is None:
        missing = [a for a in ("one_qubit_gate", "two_qubit_gate", "measurement", "photon_conversion_efficiency") if a not in kw]
        if missing:
            raise ConfigError(f"custom tech missing {missing}", ent)
        return TechnologyPreset(name=tbl.get("name", "custom"), **kw)
    return replace(base, name=tbl.get("name", base.name), **kw)


def _expand_chain(cfg: dict) -> tuple[list, list]:
    ch = cfg["chain"]
    ent = "chain"
    h = int(ch.get("switches", 1))
    if h < 0:
        raise ConfigError("switches must be >= 0", ent)
    names = [ch.get("s", "s")] + [f"Q{i}" for i in range(1, h + 1)] + [ch.get("d", "d")]
    tech = ch.get("tech", "NV")
    nodes = [{"id": names[0], "kind": "end", "tech": tech}]
    nodes += [{"id": n, "kind": "switch", "tech": tech, "memories": int(ch.get("memories", 2))} for n in names[1:-1]]
    nodes.append({"id": names[-1], "kind": "end", "tech": tech})
    for n in nodes:
        for key in ("memory_noise", "app_memory_noise"):
            if key in ch:
                n[key] = ch[key]
    lengths = ch.get("lengths_km")
    if lengths is None:
        total = _num(ch.get("e2e_km", 10.0), ent, "e2e_km")
        lengths = [total / (h + 1)] * (h + 1)
    elif len(lengths) != h + 1:
        raise ConfigError(f"lengths_km needs {h + 1} entries", ent)
    link_defaults = {k: v for k, v in ch.items() if k in ("alpha_db_km", "coupling", "f_src", "d_pmd", "tau_c", "extra_loss")}
    links = []
    for i in range(h + 1):
        u, v = names[i], names[i + 1]
        # sources live in switches; the s-end hop keeps its source at the switch
        src = v if i == 0 and h > 0 else u
        links.append({"u": u, "v": v, "length_km": lengths[i], "source": src, **link_defaults})
    return nodes, links


def build_topology(cfg: dict) -> Topology:
    """Validate a parsed config dict into a :class:`Topology`."""
    net = dict(cfg.get("network", {}))
    defaults = dict(net.pop("defaults", {}))
    params = NetworkParams(
        seed=int(net.get("seed", 0)),
        name=str(net.get("name", "network")),
        source_period_ns=_num(net.get("source_period_ns", 100.0), "network", "source_period_ns"),
        estimation_trials=int(net.get("estimation_trials", 1000)),
        max_purification_rounds=int(net.get("max_purification_rounds", 5)),
        purification_pipelines=int(net.get("purification_pipelines", 2)),
    )
    c_fiber = _num(net.get("c_fiber_m_s", C_FIBER_M_S), "network", "c_fiber_m_s")

    techs = dict(PRESETS)
    for tbl in cfg.get("tech", []):
        name = tbl.get("name")
        if not name:
            raise ConfigError("tech entry needs a name", "tech")
        techs[name] = _tech_from_table(tbl, techs.get(tbl.get("base", name)) if tbl.get("base", name) in techs else None, f"tech {name}")

    node_tbls = list(cfg.get("node", []))
    link_tbls = list(cfg.get("link", []))
    if "chain" in cfg:
        cn, cl = _expand_chain(cfg)
        node_tbls += cn
        link_tbls += cl

    links: dict = {}
    degree: dict[str, int] = {}
    declared = {t.get("id") for t in node_tbls}
    for tbl in link_tbls:
        u, v = tbl.get("u"), tbl.get("v")
        ent = f"link {u}-{v}"
        if u not in declared or v not in declared:
            raise ConfigError("endpoint is not a declared node", ent)
        if u == v:
            raise ConfigError("self-loop", ent)
        merged = {**defaults, **tbl}
        kw = {}
        for key in ("alpha_db_km", "coupling", "f_src", "d_pmd", "tau_c", "extra_loss"):
            if key in merged:
                kw[key] = _num(merged[key], ent, key)
        if "length_km" not in merged:
            raise ConfigError("length_km is required", ent)
        link = Link(u, v, _num(merged["length_km"], ent, "length_km"), source=merged.get("source", ""), c_fiber=c_fiber, **kw)
        if link.source not in (u, v):
            raise ConfigError("source must be an endpoint", ent)
        if link.key in links:
            raise ConfigError("duplicate link", ent)
        links[link.key] = link
        degree[u] = degree.get(u, 0) + 1
        degree[v] = degree.get(v, 0) + 1

    nodes: dict = {}
    for tbl in node_tbls:
        nid = tbl.get("id")
        ent = f"node {nid}"
        if not nid:
            raise ConfigError("node needs an id", "node")
        if nid in nodes:
            raise ConfigError("duplicate node id", ent)
        tech_name = tbl.get("tech", defaults.get("tech", "NV"))
        if isinstance(tech_name, dict):
            tech = _tech_from_table(tech_name, PRESETS.get(tech_name.get("base", "")), ent)
        elif tech_name in techs:
            tech = techs[tech_name]
        else:
            raise ConfigError(f"unknown tech {tech_name!r}", ent)
        mem_noise = _noise_from_table(tbl["memory_noise"], ent) if "memory_noise" in tbl else tech.memory_noise()
        kind = tbl.get("kind", "switch")
        k = degree.get(nid, 0)
        if kind == "switch":
            m = int(tbl.get("memories", max(k, 2)))
            if m < k:
                raise ConfigError(f"memories < links ({m} < {k})", ent)
            nodes[nid] = SwitchNode(nid, tech, m, k, mem_noise)
        elif kind == "end":
            m = int(tbl.get("memories", 2))
            if m != 2:
                raise ConfigError("end nodes have exactly two memory positions", ent)
            app_noise = _noise_from_table(tbl["app_memory_noise"], ent) if "app_memory_noise" in tbl else mem_noise
            nodes[nid] = EndNode(nid, tech, 2, mem_noise, app_noise)
        else:
            raise ConfigError(f"unknown node kind {kind!r}", ent)

    if not nodes:
        raise ConfigError("no nodes declared")
    _check_connected(nodes, links)

    requests = []
    seen = set()
    for i, tbl in enumerate(cfg.get("request", [])):
        rid = str(tbl.get("id", f"r{i}"))
        ent = f"request {rid}"
        if rid in seen:
            raise ConfigError("duplicate request id", ent)
        seen.add(rid)
        for end in ("s", "d"):
            if tbl.get(end) not in nodes:
                raise ConfigError(f"{end}={tbl.get(end)!r} is not a node", ent)
            if nodes[tbl[end]].kind != "end":
                raise ConfigError(f"{end} must be an end node", ent)
        known = {"id", "s", "d", "f_min", "deadline_ms", "persistence_ms", "app", "rate_hz", "start_ms"}
        requests.append(
            RequestSpec(
                id=rid,
                s=tbl["s"],
                d=tbl["d"],
                f_min=_num(tbl.get("f_min", 0.0), ent, "f_min"),
                deadline=_num(tbl.get("deadline_ms", INF), ent, "deadline_ms") * 1e6,
                persistence=_num(tbl.get("persistence_ms", 100.0), ent, "persistence_ms") * 1e6,
                app=str(tbl.get("app", "capacity")),
                rate_hz=_num(tbl["rate_hz"], ent, "rate_hz") if "rate_hz" in tbl else None,
                start=_num(tbl.get("start_ms", 0.0), ent, "start_ms") * 1e6,
                options={k: v for k, v in tbl.items() if k not in known},
            )
        )
    return Topology(params, nodes, links, tuple(requests))


def _check_connected(nodes: dict, links: dict) -> None:
    adj: dict[str, set] = {n: set() for n in nodes}
    for (a, b) in links:
        adj[a].add(b)
        adj[b].add(a)
    start = next(iter(sorted(nodes)))
    seen = {start}
    stack = [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    missing = sorted(set(nodes) - seen)
    if missing:
        raise ConfigError(f"graph is not connected; unreachable: {missing}", f"node {missing[0]}")


def load_topology(config_text: str) -> Topology:
    """Parse TOML/JSON config text and validate it."""
    return build_topology(parse_config_text(config_text))


def load_topology_file(path) -> Topology:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return load_topology(text)


def chain_config(
    e2e_km: float,
    switches: int,
    tech: str = "NV",
    memories: int = 2,
    **link_kw: Any,
) -> dict:
    """Config dict for an equally spaced repeater chain ``s - Q1 .. Qh - d``."""
    chain = {"e2e_km": e2e_km, "switches": switches, "tech": tech, "memories": memories}
    chain.update(link_kw)
    return {"network": {}, "chain": chain}


# --- runtime ----------------------------------------------------------------------


class StoredPair:
    """A pair living in node memories, with lazy decoherence bookkeeping.

    ``ends[side]`` is the :class:`NodeRuntime` holding that qubit.
    """

    __slots__ = ("state", "ends", "positions", "tag")

    def __init__(self, state: qstate.PairState, ends, positions, tag):
        self.state = state
        self.ends = list(ends)
        self.positions = list(positions)
        self.tag = tag

    def touch(self, now: float) -> qstate.PairState:
        """Apply memory noise on both qubits up to ``now`` and return the state."""
        s = self.state
        for side in (0, 1):
            last = s.last_touched_a if side == 0 else s.last_touched_b
            dt = now - last
            if dt > 0:
                s = qstate.apply_noise(s, side, self.ends[side].spec.memory_noise, dt)
            if side == 0:
                s = replace(s, last_touched_a=max(last, now))
            else:
                s = replace(s, last_touched_b=max(last, now))
        self.state = s
        return s

    def gate_noise(self, side: int, p: float) -> None:
        if p > 0:
            self.state = qstate.apply_noise(self.state, side, qstate.NoiseChannel.depolarize_prob(p), 0.0)


class Processor:
    """Single-instruction-at-a-time FIFO processor of one node."""

    def __init__(self, sim: Simulator, node_id: str):
        self.sim = sim
        self.node_id = node_id
        self.queue: list = []
        self.executing = None
        self.busy_ns = 0
        self.completed = 0

    def submit(self, duration_ns: float, on_done: Callable[[], None], tag=None) -> list:
        instr = [to_clock(duration_ns), on_done, tag, False]
        self.queue.append(instr)
        if self.executing is None:
            self._start_next()
        return instr

    def _start_next(self) -> None:
        while self.queue:
            instr = self.queue.pop(0)
            if instr[3]:
                continue
            self.executing = instr
            self.sim.call_after(instr[0], self._finish, instr)
            return
        self.executing = None

    def _finish(self, instr) -> None:
        assert self.executing is instr, "processor serialization violated"
        self.busy_ns += instr[0]
        self.completed += 1
        self.executing = None
        if not instr[3]:
            instr[1]()
        if self.executing is None:
            self._start_next()

    def cancel_tag(self, predicate: Callable[[Any], bool]) -> None:
        """Drop queued (not yet executing) instructions whose tag matches."""
        for instr in self.queue:
            if predicate(instr[2]):
                instr[3] = True


class NodeRuntime:
    """Memories, reservations and processor of one node during a run."""

    def __init__(self, sim: Simulator, spec):
        self.spec = spec
        self.id = spec.id
        self.memory: list = [None] * spec.memories
        self.reserved: list = [None] * spec.memories
        self.processor = Processor(sim, spec.id)

    @property
    def tech(self) -> TechnologyPreset:
        return self.spec.tech

    def free_positions(self) -> int:
        return sum(1 for r in self.reserved if r is None)

    def reserve(self, owner, count: int) -> list[int]:
        free = [i for i, r in enumerate(self.reserved) if r is None]
        if len(free) < count:
            raise MissingQubitError(f"node {self.id}: need {count} positions, {len(free)} free")
        got = free[:count]
        for i in got:
            self.reserved[i] = owner
        assert sum(1 for r in self.reserved if r is not None) <= self.spec.memories
        return got

    def release(self, owner) -> None:
        for i, r in enumerate(self.reserved):
            if r == owner:
                self.reserved[i] = None
                self.memory[i] = None

    def store(self, pos: int, pair: StoredPair, side: int, owner) -> None:
        if self.reserved[pos] != owner:
            raise AssertionError(f"node {self.id} position {pos} not reserved by {owner}")
        if self.memory[pos] is not None:
            raise AssertionError(f"node {self.id} position {pos} already occupied")
        self.memory[pos] = (pair, side)
        pair.ends[side] = self
        pair.positions[side] = pos

    def rebind(self, pos: int, pair: StoredPair, side: int) -> None:
        """Point an occupied position at the pair that now owns its qubit."""
        if self.memory[pos] is None:
            raise MissingQubitError(f"node {self.id} position {pos} is empty")
        self.memory[pos] = (pair, side)
        pair.ends[side] = self
        pair.positions[side] = pos

    def take(self, pos: int, owner) -> tuple:
        if self.reserved[pos] != owner:
            raise AssertionError(f"node {self.id} position {pos} read by non-owner {owner}")
        item = self.memory[pos]
        if item is None:
            raise MissingQubitError(f"node {self.id} position {pos} is empty")
        return item

    def clear(self, pos: int) -> None:
        self.memory[pos] = None


def processor_execute(
    node: NodeRuntime,
    duration_ns: float,
    qubits,
    on_done: Callable[[], None],
    tag=None,
    valid: Callable[[], bool] | None = None,
):
    """Queue an instruction touching ``qubits`` (list of positions).

    On completion the node's gate depolarization hits every touched qubit,
    then ``on_done`` runs. If ``valid`` returns False at completion time
    (the owning attempt was aborted) the instruction has no effect.
    """
    for pos in qubits:
        if node.memory[pos] is None:
            raise MissingQubitError(f"node {node.id} position {pos} is empty")

    def done():
        if valid is not None and not valid():
            return
        p = node.tech.gate_depolarization
        for pos in qubits:
            item = node.memory[pos]
            if item is not None:
                pair, side = item
                pair.touch(node.processor.sim.now)
                pair.gate_noise(side, p)
        on_done()

    return node.processor.submit(duration_ns, done, tag)


class NetworkRuntime:
    """Runtime view of a topology inside one simulation."""

    def __init__(self, sim: Simulator, topology: Topology):
        self.sim = sim
        self.topology = topology
        self.nodes = {nid: NodeRuntime(sim, spec) for nid, spec in topology.nodes.items()}
        self._fresh: dict = {}

    def link(self, u: str, v: str) -> Link:
        return self.topology.link(u, v)

    def fresh_rho(self, link: Link, source_side: int) -> np.ndarray:
        key = (link.key, source_side)
        rho = self._fresh.get(key)
        if rho is None:
            rho = fresh_pair_rho(link, source_side)
            self._fresh[key] = rho
        return rho

    def path_delay(self, nodes, i: int, j: int) -> float:
        """Fiber delay (ns) between path positions ``i <= j``."""
        return sum(self.link(nodes[k], nodes[k + 1]).delay_ns for k in range(i, j))
