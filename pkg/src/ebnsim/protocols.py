"""Entanglement delivery along a fixed path.

One :class:`PathManager` per admitted request drives repeated attempts.
Each attempt generates link pairs on every hop in parallel, lets every
switch Bell-measure as soon as both its qubits are present (swap-asap),
forwards the outcomes to the destination which applies the Pauli
corrections, and optionally distils two end-to-end pairs with DEJMPS.

Timing of one attempt is split into four parts that always sum to the
attempt duration:

* ``t_e`` from attempt start until the last link pair is heralded,
* ``t_s`` from there until the last Bell measurement completes,
* ``t_c`` from there until the destination has applied its corrections,
* ``t_p`` everything after that (purification rounds, regeneration).

When several pipelines run (purification enabled) the first three
milestones are taken over all pipelines of the initial generation round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ebnsim import qstate
from ebnsim.deskernel import Simulator, to_clock
from ebnsim.errors import InsufficientMemoryError, MismatchedAttemptError
from ebnsim.metrics import AttemptRecord
from ebnsim.netmodel import (
    Link,
    NetworkRuntime,
    NodeRuntime,
    StoredPair,
    attempt_success_probability,
    processor_execute,
)


@dataclass
class PathAssignment:
    """A routed path with its reserved memory positions.

    ``positions[node]`` lists the positions held at that node. End nodes
    hold one position per pipeline; switches hold two per pipeline, the
    first facing the source side.
    """

    request_id: str
    nodes: list
    positions: dict = field(default_factory=dict)
    n_p: int = 0
    pipelines: int = 1
    predicted_fidelity: float = 1.0

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise ValueError("a path needs at least two nodes")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("path visits a node twice")

    @property
    def switches(self) -> int:
        return len(self.nodes) - 2

    @property
    def hops(self) -> int:
        return len(self.nodes) - 1

    def slot(self, index: int, pipeline: int, facing: str) -> tuple[str, int]:
        """Node id and memory position for the qubit of ``pipeline`` at path
        ``index``. ``facing`` is ``"left"`` (towards s) or ``"right"``."""
        node = self.nodes[index]
        held = self.positions[node]
        if index == 0 or index == len(self.nodes) - 1:
            return node, held[pipeline]
        return node, held[2 * pipeline + (0 if facing == "left" else 1)]

    @staticmethod
    def demand(nodes, pipelines: int) -> dict:
        """Positions needed per node."""
        out = {}
        for i, n in enumerate(nodes):
            out[n] = pipelines if i in (0, len(nodes) - 1) else 2 * pipelines
        return out


@dataclass(frozen=True)
class CorrectionMessage:
    request_id: str
    attempt: int
    origin: str
    outcome: int
    pipeline: int = 0
    origin_index: int = 0


def sample_link_generation(link: Link, tech, period_ns: float, rng: np.random.Generator) -> tuple[int, int] | None:
    """Heralded attempts until success on one link.

    Returns ``(attempts, elapsed_ns)`` or ``None`` when success is impossible.
    """
    p = attempt_success_probability(link, tech)
    if p <= 0.0:
        return None
    k = 1 if p >= 1.0 else int(rng.geometric(p))
    return k, k * link_cycle_ns(link, period_ns)


def link_cycle_ns(link: Link, period_ns: float) -> int:
    """One generation attempt: photon flight plus source repetition period."""
    return to_clock(link.delay_ns + period_ns)


def generate_link_entanglement(
    net: NetworkRuntime,
    link: Link,
    a: str,
    b: str,
    start: int,
    rng: np.random.Generator,
    period_ns: float | None = None,
) -> tuple[qstate.PairState, int] | None:
    """Stand-alone link generation; the pair's A side lives at ``a``.

    Memory noise of the source-side qubit during the photon's flight is
    included. Returns ``(state at heralding, t_elapsed)``.
    """
    if period_ns is None:
        period_ns = net.topology.params.source_period_ns
    tech = net.topology.nodes[link.source].tech
    got = sample_link_generation(link, tech, period_ns, rng)
    if got is None:
        return None
    _, elapsed = got
    finish = start + elapsed
    state = _fresh_state(net, link, a, b, finish)
    pair = StoredPair(state, [net.nodes[a], net.nodes[b]], [None, None], None)
    return pair.touch(finish), elapsed


def _fresh_state(net: NetworkRuntime, link: Link, a: str, b: str, finish: int) -> qstate.PairState:
    source_side = 0 if link.source == a else 1
    rho = net.fresh_rho(link, source_side)
    emitted = finish - to_clock(link.delay_ns)
    lt = [finish, finish]
    lt[source_side] = emitted
    return qstate.PairState(rho, created_at=emitted, last_touched_a=lt[0], last_touched_b=lt[1])


class App:
    """Application hooks a :class:`PathManager` calls into."""

    measure_qber = False

    def wants_pair(self, pm: "PathManager") -> bool:
        return True

    def on_pair(self, pm: "PathManager", pair: StoredPair, record: AttemptRecord) -> None:
        pass

    def on_finish(self, pm: "PathManager") -> None:
        pass


class _Pipe:
    __slots__ = ("gen", "links_pending", "swapped", "swapping", "corrections", "ready")

    def __init__(self):
        self.gen = 0
        self.reset()

    def reset(self):
        self.gen += 1
        self.links_pending = 0
        self.swapped: set = set()
        self.swapping: set = set()
        self.corrections: list = []
        self.ready = False


class _Attempt:
    def __init__(self, j: int, t0: int, pipelines: int):
        self.j = j
        self.t0 = t0
        self.alive = True
        self.phase = "generate"
        self.pipes = [_Pipe() for _ in range(pipelines)]
        self.gen_last = t0
        self.swap_last = t0
        self.milestones: tuple | None = None  # (T_gen, T_swap, T_corr)
        self.rounds = 0
        self.distil_waiting = 0
        self.deadline_event = None
        self.events: list = []
        self.messages = 0


class PathManager:
    """Runs attempts for one request over its reserved path.

    Parameters
    ----------
    sim, net
        Simulation kernel and network runtime.
    request
        :class:`~ebnsim.netmodel.RequestSpec`.
    path
        Reserved :class:`PathAssignment`.
    app
        Application receiving delivered pairs.
    on_finish
        Called once the manager stops (persistence elapsed or aborted).
    purification
        ``"planned"`` runs exactly ``path.n_p`` rounds, ``"adaptive"``
        keeps distilling while the delivered-pair fidelity is below
        ``request.f_min`` (up to ``max_rounds``), ``"off"`` never distils.
    """

    def __init__(
        self,
        sim: Simulator,
        net: NetworkRuntime,
        request,
        path: PathAssignment,
        app: App | None = None,
        on_finish: Callable[["PathManager"], None] | None = None,
        purification: str = "planned",
        max_rounds: int = 5,
    ):
        if purification not in ("planned", "adaptive", "off"):
            raise ValueError(f"unknown purification mode {purification!r}")
        self.sim = sim
        self.net = net
        self.request = request
        self.path = path
        self.app = app or App()
        self.on_finish_cb = on_finish
        self.purification = purification
        self.max_rounds = max_rounds
        self.records: list[AttemptRecord] = []
        self.n_successes = 0
        self.current: _Attempt | None = None
        self.aborted = False
        self.finished = False
        self.idle = False
        self.started_at = 0
        self.stop_at = 0
        self.corrections_applied: list[list[CorrectionMessage]] = []
        nodes = path.nodes
        self._links = [net.link(nodes[i], nodes[i + 1]) for i in range(path.hops)]
        self._node = [net.nodes[n] for n in nodes]
        self._delay_to_d = [to_clock(net.path_delay(nodes, i, len(nodes) - 1)) for i in range(len(nodes))]
        self._e2e_delay = self._delay_to_d[0]
        rid = request.id
        self._gen_rng = [sim.rng(f"req/{rid}/link/{nodes[i]}-{nodes[i + 1]}") for i in range(path.hops)]
        self._swap_rng = {n: sim.rng(f"req/{rid}/swap/{n}") for n in nodes[1:-1]}
        self._distil_rng = sim.rng(f"req/{rid}/distil")
        self._qber_rng = sim.rng(f"req/{rid}/qber")
        period = net.topology.params.source_period_ns
        self._cycle = [link_cycle_ns(l, period) for l in self._links]
        self._p = [attempt_success_probability(l, net.topology.nodes[l.source].tech) for l in self._links]
        self._pipelines = path.pipelines if purification != "off" else 1
        if self._pipelines > 1:
            for i, n in enumerate(nodes):
                need = PathAssignment.demand(nodes, self._pipelines)[n]
                if len(path.positions.get(n, ())) < need:
                    raise InsufficientMemoryError(f"node {n}: {need} positions needed for purification")

    # --- lifecycle --------------------------------------------------------------

    def start(self) -> None:
        self.started_at = self.sim.now
        self.stop_at = self.sim.now + to_clock(self.request.persistence)
        self._next()

    def kick(self) -> None:
        """Resume after the application declined a pair earlier."""
        if self.idle and not self.finished:
            self.idle = False
            self._next()

    def _next(self) -> None:
        if self.finished:
            return
        if self.aborted or self.sim.now >= self.stop_at or self._enough():
            self._finish()
            return
        if not self.app.wants_pair(self):
            self.idle = True
            return
        self._begin_attempt()

    def _enough(self) -> bool:
        cap = self.request.options.get("max_successes")
        return cap is not None and self.n_successes >= int(cap)

    def _finish(self) -> None:
        if self.finished:
            return
        self.finished = True
        self.current = None
        self.app.on_finish(self)
        if self.on_finish_cb is not None:
            self.on_finish_cb(self)

    def finalize(self) -> None:
        """Close an attempt still in flight when the run ends (counts as failed)."""
        att = self.current
        if att is not None and att.alive:
            self._close(att, c=0)
            self.aborted = True
        self._finish()

    @property
    def owner(self) -> str:
        return self.request.id

    # --- attempt ------------------------------------------------------------------

    def _begin_attempt(self) -> None:
        j = len(self.records)
        att = _Attempt(j, self.sim.now, self._pipelines)
        self.current = att
        self._flush()
        deadline = self.request.deadline
        if not math.isinf(deadline):
            att.deadline_event = self.sim.call_at(att.t0 + to_clock(deadline), self._deadline, att)
        for p in range(self._pipelines):
            self._start_pipeline(att, p)

    def _valid(self, att: _Attempt, p: int | None = None, gen: int | None = None) -> bool:
        if not (att.alive and att is self.current):
            return False
        return p is None or att.pipes[p].gen == gen

    def _start_pipeline(self, att: _Attempt, p: int) -> None:
        pipe = att.pipes[p]
        pipe.reset()
        pipe.links_pending = self.path.hops
        for i in range(self.path.hops):
            if self._p[i] <= 0.0:
                continue  # never succeeds; the deadline or the run end closes the attempt
            k = 1 if self._p[i] >= 1.0 else int(self._gen_rng[i].geometric(self._p[i]))
            finish = self.sim.now + k * self._cycle[i]
            att.events.append(self.sim.call_at(finish, self._link_done, att, p, pipe.gen, i))

    def _link_done(self, att: _Attempt, p: int, gen: int, i: int) -> None:
        if not self._valid(att, p, gen):
            return
        now = self.sim.now
        pipe = att.pipes[p]
        if att.phase == "generate":
            att.gen_last = max(att.gen_last, now)
        a, b = self.path.nodes[i], self.path.nodes[i + 1]
        state = _fresh_state(self.net, self._links[i], a, b, now)
        pair = StoredPair(state, [None, None], [None, None], (self.request.id, att.j, p, gen))
        na, pa = self.path.slot(i, p, "right")
        nb, pb = self.path.slot(i + 1, p, "left")
        self.net.nodes[na].store(pa, pair, 0, self.owner)
        self.net.nodes[nb].store(pb, pair, 1, self.owner)
        pipe.links_pending -= 1
        if self.path.switches == 0:
            self._pipeline_ready(att, p)
            return
        for idx in (i, i + 1):
            if 0 < idx < len(self.path.nodes) - 1:
                self._try_swap(att, p, idx)

    def _try_swap(self, att: _Attempt, p: int, idx: int) -> None:
        pipe = att.pipes[p]
        if idx in pipe.swapped or idx in pipe.swapping:
            return
        node_id, pl = self.path.slot(idx, p, "left")
        _, pr = self.path.slot(idx, p, "right")
        node = self.net.nodes[node_id]
        if node.memory[pl] is None or node.memory[pr] is None:
            return
        pipe.swapping.add(idx)
        gen = pipe.gen
        tech = node.tech
        processor_execute(
            node,
            tech.two_qubit_gate + tech.measurement,
            [pl, pr],
            lambda: self._swap_done(att, p, gen, idx),
            tag=(self.owner, att.j),
            valid=lambda: self._valid(att, p, gen),
        )

    def _swap_done(self, att: _Attempt, p: int, gen: int, idx: int) -> None:
        now = self.sim.now
        pipe = att.pipes[p]
        node_id, pl = self.path.slot(idx, p, "left")
        _, pr = self.path.slot(idx, p, "right")
        node = self.net.nodes[node_id]
        left, ls = node.take(pl, self.owner)
        right, rs = node.take(pr, self.owner)
        tag = (self.owner, att.j, p, gen)
        if left.tag != tag or right.tag != tag:
            raise MismatchedAttemptError(f"node {node_id}: stale qubit in attempt {att.j}")
        assert ls == 1 and rs == 0
        left.touch(now)
        right.touch(now)
        out, k, _ = qstate.swap(left.state, right.state, self._swap_rng[node_id])
        merged = StoredPair(out, [left.ends[0], right.ends[1]], [left.positions[0], right.positions[1]], tag)
        merged.ends[0].rebind(merged.positions[0], merged, 0)
        merged.ends[1].rebind(merged.positions[1], merged, 1)
        node.clear(pl)
        node.clear(pr)
        pipe.swapping.discard(idx)
        pipe.swapped.add(idx)
        if att.phase == "generate":
            att.swap_last = max(att.swap_last, now)
        msg = CorrectionMessage(self.owner, att.j, node_id, k, p, idx)
        self.sim.trace({"kind": "swap", "request": self.owner, "attempt": att.j, "node": node_id, "outcome": k, "t": now})
        arrive = now + self._delay_to_d[idx]
        att.events.append(self.sim.call_at(arrive, self._correction_arrived, att, p, gen, msg))
        # the merged pair may now enable a neighbouring switch whose other side waited
        for nb in (idx - 1, idx + 1):
            if 0 < nb < len(self.path.nodes) - 1:
                self._try_swap(att, p, nb)

    def _correction_arrived(self, att: _Attempt, p: int, gen: int, msg: CorrectionMessage) -> None:
        if not self._valid(att, p, gen):
            return
        pipe = att.pipes[p]
        pipe.corrections.append(msg)
        att.messages += 1
        if len(pipe.corrections) < self.path.switches:
            return
        d_id, dpos = self.path.slot(len(self.path.nodes) - 1, p, "left")
        d = self.net.nodes[d_id]
        msgs = sorted(pipe.corrections, key=lambda m: m.origin_index)

        def apply():
            pair, side = d.take(dpos, self.owner)
            state = pair.state
            for m in msgs:
                state = qstate.apply_pauli(state, side, m.outcome)
            pair.state = state
            if p == 0:
                self.corrections_applied.append(msgs)
            self._pipeline_ready(att, p)

        processor_execute(
            d, d.tech.one_qubit_gate, [dpos], apply,
            tag=(self.owner, att.j), valid=lambda: self._valid(att, p, gen),
        )

    def _pipeline_ready(self, att: _Attempt, p: int) -> None:
        att.pipes[p].ready = True
        if att.phase == "generate":
            if not all(pp.ready for pp in att.pipes):
                return
            now = self.sim.now
            t_gen = att.gen_last
            t_swap = max(t_gen, att.swap_last)
            att.milestones = (t_gen, t_swap, max(t_swap, now))
            att.phase = "post"
        self._after_pipelines(att)

    # --- purification -------------------------------------------------------------

    def _end_pair(self, p: int) -> StoredPair:
        d_id, dpos = self.path.slot(len(self.path.nodes) - 1, p, "left")
        return self.net.nodes[d_id].memory[dpos][0]

    def _more_rounds(self, att: _Attempt) -> bool:
        if self._pipelines < 2 or self.purification == "off":
            return False
        if att.rounds < self.path.n_p:
            return True
        if self.purification == "adaptive" and att.rounds < self.max_rounds:
            pair = self._end_pair(0)
            return qstate.fidelity_to_phi_plus(pair.touch(self.sim.now)) < self.request.f_min
        return False

    def _after_pipelines(self, att: _Attempt) -> None:
        if not self._more_rounds(att):
            self._deliver(att)
            return
        if not att.pipes[1].ready:
            return  # secondary is being regenerated
        self._distil(att)

    def _distil(self, att: _Attempt) -> None:
        att.distil_waiting = 2
        for end in (0, len(self.path.nodes) - 1):
            facing = "right" if end == 0 else "left"
            node_id, p0 = self.path.slot(end, 0, facing)
            _, p1 = self.path.slot(end, 1, facing)
            node = self.net.nodes[node_id]
            processor_execute(
                node,
                node.tech.two_qubit_gate + node.tech.measurement,
                [p0, p1],
                lambda: self._distil_local_done(att),
                tag=(self.owner, att.j),
                valid=lambda: self._valid(att),
            )

    def _distil_local_done(self, att: _Attempt) -> None:
        att.distil_waiting -= 1
        if att.distil_waiting:
            return
        now = self.sim.now
        primary, secondary = self._end_pair(0), self._end_pair(1)
        primary.touch(now)
        secondary.touch(now)
        out = qstate.dejmps(primary.state, secondary.state, self._distil_rng)
        for side in (0, 1):
            secondary.ends[side].clear(secondary.positions[side])
        att.pipes[1].ready = False
        att.pipes[1].gen += 1
        if out.success:
            primary.state = out.state
        self.sim.trace({"kind": "distil", "request": self.owner, "attempt": att.j, "success": out.success, "t": now})
        att.events.append(self.sim.call_after(2 * self._e2e_delay, self._distil_result, att, out.success))

    def _distil_result(self, att: _Attempt, success: bool) -> None:
        if not self._valid(att):
            return
        if not success:
            self._close(att, c=0)
            self._next()
            return
        att.rounds += 1
        if self._more_rounds(att):
            self._start_pipeline(att, 1)
        else:
            self._deliver(att)

    # --- completion --------------------------------------------------------------

    def _deliver(self, att: _Attempt) -> None:
        now = self.sim.now
        pair = self._end_pair(0)
        state = pair.touch(now)
        fid = qstate.fidelity_to_phi_plus(state)
        bits = (None, None)
        if self.app.measure_qber:
            bits = qstate.qber_sample(state, self._qber_rng)
        rec = self._close(att, c=1, fidelity=fid, bits=bits, keep=True)
        self.app.on_pair(self, pair, rec)
        self._flush()
        self._next()

    def _deadline(self, att: _Attempt) -> None:
        if not self._valid(att):
            return
        self._close(att, c=0)
        self.aborted = True
        self.sim.trace({"kind": "abort", "request": self.owner, "attempt": att.j, "t": self.sim.now})
        self._next()

    def _close(self, att: _Attempt, c: int, fidelity=None, bits=(None, None), keep: bool = False) -> AttemptRecord:
        now = self.sim.now
        att.alive = False
        if att.deadline_event is not None:
            Simulator.cancel(att.deadline_event)
        for ev in att.events:
            Simulator.cancel(ev)
        for node in self._node:
            node.processor.cancel_tag(lambda tag, j=att.j: tag == (self.owner, j))
        if att.milestones is not None:
            t_gen, t_swap, t_corr = att.milestones
        else:
            # closed before the initial round completed: unfinished phases end now
            t_gen = t_swap = t_corr = now
            if all(pp.links_pending == 0 for pp in att.pipes):
                t_gen = att.gen_last
                if all(len(pp.swapped) == self.path.switches for pp in att.pipes):
                    t_swap = max(t_gen, att.swap_last)
        t0 = att.t0
        rec = AttemptRecord(
            self.request.id, att.j, c,
            t_gen - t0, t_swap - t_gen, t_corr - t_swap, now - t_corr,
            fidelity=fidelity, bit_s=bits[0], bit_d=bits[1], t_total=now - t0,
        )
        self.records.append(rec)
        self.n_successes += c
        self.sim.trace({"kind": "attempt", "request": self.owner, "attempt": att.j, "c": c, "t": now})
        if not keep:
            self._flush()
        return rec

    def _flush(self) -> None:
        for n in self.path.nodes:
            node = self.net.nodes[n]
            for pos in self.path.positions.get(n, ()):
                node.clear(pos)
