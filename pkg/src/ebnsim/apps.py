"""Applications consuming end-to-end pairs.

* :class:`CapacityApp` takes every pair and discards it.
* :class:`TeleportApp` teleports one input qubit per delivered pair.
* :class:`DemandTeleportApp` feeds input qubits at a fixed rate through a
  bounded FIFO or LIFO buffer.
* :class:`ShorApp` teleports the nine physical qubits of a Shor-encoded
  logical qubit and decodes Pauli frames sampled from each qubit's
  twirled channel.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ebnsim import kernels, qstate
from ebnsim.deskernel import to_clock
from ebnsim.errors import ConfigError
from ebnsim.metrics import write_csv
from ebnsim.protocols import App

SQ2 = 1.0 / math.sqrt(2.0)
INPUT_KETS = {
    "0": np.array([1.0, 0.0], dtype=complex),
    "1": np.array([0.0, 1.0], dtype=complex),
    "+": np.array([SQ2, SQ2], dtype=complex),
    "i+": np.array([SQ2, 1j * SQ2], dtype=complex),
}
TELEPORT_COLUMNS = ("shot", "wait_ns", "fidelity", "dropped", "avg_fidelity")
LOGICAL_COLUMNS = ("shot", "syndrome", "logical_error", "p_logical", "logical_fidelity", "t_shot_ns")


class DemandBuffer:
    """Bounded queue of pending application payloads.

    FIFO serves the oldest item and drops the arriving one when full.
    LIFO serves the newest item and, when full, evicts the oldest.
    """

    def __init__(self, policy: str = "FIFO", max_size: int = 10):
        policy = policy.upper()
        if policy not in ("FIFO", "LIFO"):
            raise ConfigError(f"unknown buffer policy {policy!r}")
        if max_size < 1:
            raise ConfigError("buffer max_size must be >= 1")
        self.policy = policy
        self.max_size = int(max_size)
        self.items: deque = deque()
        self.arrivals = 0
        self.drops = 0
        self.served = 0

    def __len__(self) -> int:
        return len(self.items)

    def push(self, item):
        """Enqueue ``item``; returns the dropped item, if any."""
        self.arrivals += 1
        dropped = None
        if len(self.items) >= self.max_size:
            self.drops += 1
            if self.policy == "FIFO":
                return item
            dropped = self.items.popleft()
        self.items.append(item)
        assert len(self.items) <= self.max_size
        return dropped

    def pop(self):
        self.served += 1
        return self.items.popleft() if self.policy == "FIFO" else self.items.pop()


def input_ket(spec: str, rng: np.random.Generator) -> np.ndarray:
    if spec == "haar":
        return qstate.haar_ket(rng)
    try:
        return INPUT_KETS[spec]
    except KeyError:
        raise ConfigError(f"unknown input state {spec!r}") from None


def channel_pauli_probs(channel: qstate.NoiseChannel, dt: float) -> np.ndarray:
    """Pauli twirl (I, Z, X, Y) of a single-qubit memory channel over ``dt``."""
    if channel.is_trivial or dt <= 0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    state = qstate.apply_noise(qstate.bell_state(0), 1, channel, dt)
    return np.array(qstate.bell_diagonal(state).p)


def xor_convolve(p, q) -> np.ndarray:
    """Distribution of the product of two independent Pauli labels."""
    out = np.zeros(4)
    for i in range(4):
        for j in range(4):
            out[i ^ j] += p[i] * q[j]
    return out


def shor_syndrome(frame) -> str:
    """Eight syndrome bits of one Pauli frame.

    Six ZZ checks (two per block) followed by the two XXXXXX checks
    comparing adjacent blocks' phase parities.
    """
    f = np.asarray(frame, dtype=np.uint8).reshape(3, 3)
    x = (f >> 1) & 1
    z = f & 1
    bits = []
    for b in range(3):
        bits += [x[b, 0] ^ x[b, 1], x[b, 1] ^ x[b, 2]]
    par = z.sum(axis=1) & 1
    bits += [par[0] ^ par[1], par[1] ^ par[2]]
    return "".join(str(int(v)) for v in bits)


def sample_frames(probs: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` Pauli frames from per-qubit label distributions ``probs`` (9, 4)."""
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random((m, probs.shape[0]))
    return (u[:, :, None] > cdf[None, :, :]).sum(axis=2).astype(np.uint8)


def logical_error_probability(probs: np.ndarray) -> float:
    """Exact logical failure probability of the decoder (4^9 enumeration)."""
    probs = np.asarray(probs, dtype=float)
    labels = np.indices((4,) * 9).reshape(9, -1).T.astype(np.uint8)
    w = np.ones(labels.shape[0])
    for q in range(9):
        w *= probs[q][labels[:, q]]
    logical = kernels.shor_decode(labels)
    return float(w[logical != 0].sum())


@dataclass
class TeleportStats:
    rows: list = field(default_factory=list)
    transmission_ns: list = field(default_factory=list)

    @property
    def teleported(self) -> int:
        return sum(1 for r in self.rows if not r["dropped"])

    def mean(self, key: str) -> float | None:
        vals = [r[key] for r in self.rows if not r["dropped"] and r[key] is not None]
        return float(np.mean(vals)) if vals else None


class CapacityApp(App):
    """Benchmark application: counts pairs and discards them."""

    def __init__(self, measure_qber: bool = False):
        self.measure_qber = measure_qber
        self.delivered = 0

    def on_pair(self, pm, pair, record):
        self.delivered += 1


class TeleportApp(App):
    """Free-running teleportation, one input qubit per delivered pair."""

    def __init__(self, input_state: str = "haar", rng: np.random.Generator | None = None, measure_qber: bool = False):
        self.input_state = input_state
        self.rng = rng if rng is not None else np.random.default_rng(0)
        if input_state != "haar":
            input_ket(input_state, self.rng)  # validates the name
        self.measure_qber = measure_qber
        self.stats = TeleportStats()
        self.shots = 0

    def teleport_state(self, pm, pair) -> tuple[qstate.PairState, int]:
        """Pair as seen by the teleportation and the time the protocol takes.

        The sender Bell-measures (two-qubit gate plus measurement) while the
        receiver's qubit waits for that and for the classical message, then
        applies a one-qubit correction.
        """
        s_node = pair.ends[0]
        d_node = pair.ends[1]
        bsm = s_node.tech.two_qubit_gate + s_node.tech.measurement
        wait_d = bsm + pm._e2e_delay + d_node.tech.one_qubit_gate
        st = pair.state
        st = qstate.apply_noise(st, 0, s_node.spec.memory_noise, bsm)
        st = qstate.apply_noise(st, 1, d_node.spec.memory_noise, wait_d)
        for side, node in ((0, s_node), (1, d_node)):
            p = node.tech.gate_depolarization
            if p > 0:
                st = qstate.apply_noise(st, side, qstate.NoiseChannel.depolarize_prob(p), 0.0)
        return st, to_clock(wait_d)

    def _teleport(self, pm, pair, rho_in: np.ndarray, ket: np.ndarray) -> tuple[float, float, int]:
        st, dt = self.teleport_state(pm, pair)
        choi = qstate.teleport_channel(st)
        out = qstate.apply_channel(choi, rho_in)
        fid = qstate.state_fidelity(ket, out)
        f_e = qstate.fidelity_to_phi_plus(st)
        return fid, (2.0 * f_e + 1.0) / 3.0, dt

    def on_pair(self, pm, pair, record):
        ket = input_ket(self.input_state, self.rng)
        fid, avg, dt = self._teleport(pm, pair, np.outer(ket, ket.conj()), ket)
        self.stats.rows.append({"shot": self.shots, "wait_ns": 0, "fidelity": fid, "dropped": 0, "avg_fidelity": avg})
        self.stats.transmission_ns.append(record.t_total + dt)
        self.shots += 1

    def write(self, path) -> None:
        write_csv(path, TELEPORT_COLUMNS, self.stats.rows)


class DemandTeleportApp(TeleportApp):
    """Teleportation of input qubits arriving at ``rate_hz``.

    Waiting qubits sit in the source's application memory and decohere
    there. The pair generation only runs while the buffer is non-empty.
    """

    def __init__(self, rate_hz: float, policy: str = "FIFO", max_size: int = 10, **kw):
        super().__init__(**kw)
        if not rate_hz > 0:
            raise ConfigError("rate_hz must be > 0")
        self.rate_hz = rate_hz
        self.buffer = DemandBuffer(policy, max_size)
        self.size_series: list[tuple[int, int]] = []
        self.waits_ns: list[int] = []
        self.pm = None
        self.residual = 0

    def bind(self, pm) -> None:
        self.pm = pm
        period = 1e9 / self.rate_hz
        sim = pm.sim
        t0 = sim.now
        n = 0
        while True:
            t = t0 + to_clock(n * period)
            if t >= pm.stop_at:
                break
            sim.call_at(t, self._arrive)
            n += 1

    def _arrive(self) -> None:
        pm = self.pm
        if pm.finished:
            return
        ket = input_ket(self.input_state, self.rng)
        item = (self.shots, pm.sim.now, ket)
        self.shots += 1
        dropped = self.buffer.push(item)
        if dropped is not None:
            self.stats.rows.append({"shot": dropped[0], "wait_ns": pm.sim.now - dropped[1], "fidelity": None, "dropped": 1, "avg_fidelity": None})
        self.size_series.append((pm.sim.now, len(self.buffer)))
        pm.kick()

    def wants_pair(self, pm) -> bool:
        return len(self.buffer) > 0

    def on_pair(self, pm, pair, record):
        shot, t_arr, ket = self.buffer.pop()
        now = pm.sim.now
        wait = now - t_arr
        rho_in = qstate.apply_noise_1q(np.outer(ket, ket.conj()), pair.ends[0].spec.app_memory_noise, wait)
        fid, avg, dt = self._teleport(pm, pair, rho_in, ket)
        self.stats.rows.append({"shot": shot, "wait_ns": wait, "fidelity": fid, "dropped": 0, "avg_fidelity": avg})
        self.stats.transmission_ns.append(wait + dt)
        self.waits_ns.append(wait)
        self.size_series.append((now, len(self.buffer)))

    def on_finish(self, pm) -> None:
        self.residual = len(self.buffer)

    @property
    def delivered(self) -> int:
        return self.buffer.served


class ShorApp(TeleportApp):
    """Logical teleportation with the nine-qubit Shor code.

    ``mode="sequential"``: qubit ``i`` waits at the source from the shot's
    start until its pair arrives, then at the destination until the ninth
    pair has been used. ``mode="parallel"``: the nine pairs are treated as
    arriving over independent paths at once (no dwell), and the shot takes
    as long as the slowest of them.
    """

    def __init__(self, mode: str = "sequential", frames: int = 256, **kw):
        super().__init__(**kw)
        if mode not in ("sequential", "parallel"):
            raise ConfigError(f"unknown Shor mode {mode!r}")
        self.mode = mode
        self.frames = int(frames)
        self.pending: list = []
        self.shot_start = None
        self.logical_rows: list = []
        self.physical_avg: list = []

    def bind(self, pm) -> None:
        self.shot_start = pm.sim.now

    def on_pair(self, pm, pair, record):
        now = pm.sim.now
        if self.shot_start is None:
            self.shot_start = now - record.t_total
        st, dt = self.teleport_state(pm, pair)
        p_tel = np.array(qstate.pauli_twirl(qstate.teleport_channel(st)).p)
        self.physical_avg.append((2.0 * qstate.fidelity_to_phi_plus(st) + 1.0) / 3.0)
        self.pending.append((now + dt, p_tel, record.t_total + dt, pair.ends[0].spec, pair.ends[1].spec))
        if len(self.pending) == 9:
            self._shot(now)

    def _shot(self, now: int) -> None:
        probs = np.empty((9, 4))
        t_last = max(p[0] for p in self.pending)
        for i, (t_i, p_tel, _, s_spec, d_spec) in enumerate(self.pending):
            if self.mode == "sequential":
                dwell_s = max(0, t_i - self.shot_start)
                dwell_d = t_last - t_i
                p = xor_convolve(p_tel, channel_pauli_probs(s_spec.app_memory_noise, dwell_s))
                p = xor_convolve(p, channel_pauli_probs(d_spec.app_memory_noise, dwell_d))
            else:
                p = p_tel
            probs[i] = p / p.sum()
        t_shot = t_last - self.shot_start if self.mode == "sequential" else max(p[2] for p in self.pending)
        frames = sample_frames(probs, self.frames, self.rng)
        logical = kernels.shor_decode(frames)
        p_log = float(np.mean(logical != 0))
        self.logical_rows.append({
            "shot": len(self.logical_rows),
            "syndrome": shor_syndrome(frames[0]),
            "logical_error": int(logical[0] != 0),
            "p_logical": p_log,
            "logical_fidelity": 1.0 - 2.0 * p_log / 3.0,
            "t_shot_ns": t_shot,
        })
        self.pending = []
        self.shot_start = now

    @property
    def logical_fidelity(self) -> float | None:
        if not self.logical_rows:
            return None
        return float(np.mean([r["logical_fidelity"] for r in self.logical_rows]))

    def write_logical(self, path) -> None:
        write_csv(path, LOGICAL_COLUMNS, self.logical_rows)


def make_app(request, sim) -> App:
    """Application for a request from its ``app`` name and options."""
    opts = request.options
    rng = sim.rng(f"app/{request.id}")
    measure = bool(opts.get("qber", True))
    name = request.app
    if name == "capacity":
        return CapacityApp(measure_qber=measure)
    if name == "teleport":
        return TeleportApp(opts.get("input", "haar"), rng=rng, measure_qber=measure)
    if name == "teleport_demand":
        rate = request.rate_hz if request.rate_hz is not None else opts.get("rate_hz")
        if rate is None:
            raise ConfigError("teleport_demand needs rate_hz", f"request {request.id}")
        return DemandTeleportApp(
            rate, opts.get("policy", "FIFO"), int(opts.get("buffer_size", 10)),
            input_state=opts.get("input", "haar"), rng=rng, measure_qber=measure,
        )
    if name == "shor":
        return ShorApp(opts.get("shor_mode", "sequential"), int(opts.get("frames", 256)), input_state="haar", rng=rng, measure_qber=measure)
    raise ConfigError(f"unknown app {name!r}", f"request {request.id}")
