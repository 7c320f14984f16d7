"""Density-matrix algebra for entangled pairs.

Every pair is a full 4x4 density matrix in the computational basis
``|00>, |01>, |10>, |11>`` with qubit A as the first tensor factor. Bell
states are indexed ``k = (x << 1) | z`` so that the index doubles as the
Pauli label ``sigma_k`` with ``|beta_k> = (I (x) sigma_k)|Phi+>``::

    0: Phi+ / I     1: Phi- / Z     2: Psi+ / X     3: Psi- / XZ

The same labels are used for Bell-measurement outcomes and corrections.
All functions are pure: they return new states and never mutate inputs.
Randomness always comes from an injected ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from ebnsim import kernels
from ebnsim.errors import DegenerateStateError, InvalidChannelError, NegativeDurationError

PSD_TOL = 1e-10
_NS = 1e-9

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
# PAULI[k] applied as a correction for Bell label k (XZ is Y up to a phase)
PAULI = (I2, Z, X, X @ Z)
PAULI_NAMES = ("I", "Z", "X", "Y")

BELL_KETS = np.array([kernels.BELL[k].reshape(4) for k in range(4)], dtype=complex)
BELL_PROJECTORS = np.array([np.outer(v, v.conj()) for v in BELL_KETS])
PHI_PLUS = BELL_PROJECTORS[0]


def _qubit_index(qubit) -> int:
    if qubit in (0, "A", "a"):
        return 0
    if qubit in (1, "B", "b"):
        return 1
    raise ValueError(f"qubit must be 'A' or 'B', got {qubit!r}")


def repair(rho: np.ndarray) -> np.ndarray:
    """Hermitize, clip tiny negative eigenvalues and renormalize.

    Eigenvalues below ``-PSD_TOL`` mean the state is unphysical and raise
    :class:`DegenerateStateError`.
    """
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if not np.isfinite(tr) or tr <= 0:
        raise DegenerateStateError(f"trace {tr} cannot be normalized")
    rho = rho / tr
    w, v = np.linalg.eigh(rho)
    if w[0] < -PSD_TOL:
        raise DegenerateStateError(f"minimum eigenvalue {w[0]:.3e} below -{PSD_TOL}")
    if w[0] < 0:
        w = np.clip(w, 0.0, None)
        rho = (v * w) @ v.conj().T
        rho = rho / np.trace(rho).real
    return rho


@dataclass(frozen=True, eq=False)
class PairState:
    """One entangled pair plus the clock stamps used for lazy decoherence (ns)."""

    rho: np.ndarray
    created_at: float = 0.0
    last_touched_a: float = 0.0
    last_touched_b: float = 0.0

    def check(self, tol: float = 1e-12) -> None:
        """Raise ``DegenerateStateError`` if any density-matrix invariant fails."""
        r = self.rho
        if r.shape != (4, 4):
            raise DegenerateStateError(f"expected 4x4, got {r.shape}")
        if np.max(np.abs(r - r.conj().T)) >= tol:
            raise DegenerateStateError("not Hermitian")
        if abs(np.trace(r).real - 1.0) >= tol:
            raise DegenerateStateError(f"trace {np.trace(r).real}")
        if np.linalg.eigvalsh(r)[0] < -PSD_TOL:
            raise DegenerateStateError("not positive semidefinite")

    @classmethod
    def from_rho(cls, rho, t: float = 0.0) -> "PairState":
        rho = np.asarray(rho, dtype=complex)
        if rho.shape != (4, 4):
            raise DegenerateStateError(f"expected 4x4, got {rho.shape}")
        return cls(repair(rho), t, t, t)

    def with_rho(self, rho: np.ndarray) -> "PairState":
        return replace(self, rho=rho)


@dataclass(frozen=True)
class BellDiag:
    """Probabilities of (Phi+, Phi-, Psi+, Psi-)."""

    p: tuple[float, float, float, float]

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        if len(p) != 4 or any(v < -1e-12 or v > 1 + 1e-12 for v in p):
            raise ValueError(f"invalid Bell-diagonal probabilities {p}")
        if abs(sum(p) - 1.0) > 1e-12:
            raise ValueError(f"Bell-diagonal probabilities sum to {sum(p)}")
        object.__setattr__(self, "p", p)

    @classmethod
    def werner(cls, fidelity: float) -> "BellDiag":
        e = (1.0 - fidelity) / 3.0
        return cls((fidelity, e, e, 1.0 - fidelity - 2 * e))

    @property
    def fidelity(self) -> float:
        return self.p[0]

    def to_rho(self) -> np.ndarray:
        return np.einsum("k,kij->ij", np.asarray(self.p), BELL_PROJECTORS)

    def to_state(self, t: float = 0.0) -> PairState:
        return PairState(self.to_rho(), t, t, t)


def bell_state(k: int, t: float = 0.0) -> PairState:
    return PairState(BELL_PROJECTORS[k].copy(), t, t, t)


def werner(fidelity: float, t: float = 0.0) -> PairState:
    """Werner state with the given overlap with Phi+."""
    if not 0.0 <= fidelity <= 1.0:
        raise ValueError(f"fidelity {fidelity} outside [0, 1]")
    return BellDiag.werner(fidelity).to_state(t)


def bell_diagonal(state: PairState) -> BellDiag:
    """Diagonal of the state in the Bell basis (drops off-diagonal terms)."""
    p = np.real(np.einsum("ki,ij,kj->k", BELL_KETS.conj(), state.rho, BELL_KETS))
    p = np.clip(p, 0.0, 1.0)
    return BellDiag(tuple(p / p.sum()))


def fidelity_to_phi_plus(state: PairState) -> float:
    """<Phi+|rho|Phi+>; equals the Uhlmann fidelity because the target is pure."""
    v = BELL_KETS[0]
    f = float(np.real(v.conj() @ state.rho @ v))
    return min(1.0, max(0.0, f))


# --- noise -----------------------------------------------------------------


@dataclass(frozen=True)
class NoiseChannel:
    """Single-qubit noise. Rates are in Hz, T1/T2 in ns.

    ``kind`` is one of ``none``, ``dephasing``, ``depolarizing``, ``t1t2``,
    ``depolarize_prob`` or ``dephase_prob``. The ``*_prob`` kinds are one-shot
    and ignore ``dt``.
    """

    kind: str = "none"
    rate: float = 0.0
    t1: float = math.inf
    t2: float = math.inf
    p: float = 0.0

    _KINDS = ("none", "dephasing", "depolarizing", "t1t2", "depolarize_prob", "dephase_prob")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise InvalidChannelError(f"unknown noise kind {self.kind!r}")
        if self.rate < 0:
            raise InvalidChannelError(f"negative rate {self.rate}")
        if not 0.0 <= self.p <= 1.0:
            raise InvalidChannelError(f"probability {self.p} outside [0, 1]")
        if self.kind == "t1t2":
            if self.t1 <= 0 or self.t2 <= 0:
                raise InvalidChannelError("T1 and T2 must be positive")
            if self.t2 > 2 * self.t1 * (1 + 1e-12):
                raise InvalidChannelError(f"T2={self.t2} exceeds 2*T1={2 * self.t1}")

    @classmethod
    def none(cls) -> "NoiseChannel":
        return cls()

    @classmethod
    def dephasing(cls, rate_hz: float) -> "NoiseChannel":
        return cls("dephasing", rate=rate_hz)

    @classmethod
    def depolarizing(cls, rate_hz: float) -> "NoiseChannel":
        return cls("depolarizing", rate=rate_hz)

    @classmethod
    def t1t2(cls, t1_ns: float, t2_ns: float) -> "NoiseChannel":
        return cls("t1t2", t1=t1_ns, t2=t2_ns)

    @classmethod
    def depolarize_prob(cls, p: float) -> "NoiseChannel":
        return cls("depolarize_prob", p=p)

    @classmethod
    def dephase_prob(cls, p: float) -> "NoiseChannel":
        return cls("dephase_prob", p=p)

    @property
    def is_trivial(self) -> bool:
        if self.kind == "none":
            return True
        if self.kind in ("dephasing", "depolarizing"):
            return self.rate == 0
        if self.kind == "t1t2":
            return math.isinf(self.t1) and math.isinf(self.t2)
        return self.p == 0

    def pauli_probs(self, dt: float) -> tuple[float, float, float] | None:
        """(px, py, pz) when the channel is a Pauli channel for ``dt`` ns, else None."""
        k = self.kind
        if k == "none":
            return 0.0, 0.0, 0.0
        if k == "dephasing":
            return 0.0, 0.0, 0.5 * (1.0 - math.exp(-self.rate * dt * _NS))
        if k == "dephase_prob":
            return 0.0, 0.0, self.p
        if k == "depolarizing":
            w = 1.0 - math.exp(-self.rate * dt * _NS)
            return w / 4, w / 4, w / 4
        if k == "depolarize_prob":
            return self.p / 4, self.p / 4, self.p / 4
        return None

    def t1t2_params(self, dt: float) -> tuple[float, float]:
        """(amplitude-damping gamma, pure-dephasing probability) for ``dt`` ns."""
        gamma = 0.0 if math.isinf(self.t1) else 1.0 - math.exp(-dt / self.t1)
        inv_tphi = (0.0 if math.isinf(self.t2) else 1.0 / self.t2) - (
            0.0 if math.isinf(self.t1) else 0.5 / self.t1
        )
        inv_tphi = max(inv_tphi, 0.0)
        pz = 0.5 * (1.0 - math.exp(-dt * inv_tphi))
        return gamma, pz


def apply_noise(state: PairState, qubit, channel: NoiseChannel, dt: float) -> PairState:
    """Apply ``channel`` for ``dt`` ns to one qubit of the pair."""
    if dt < 0:
        raise NegativeDurationError(f"dt={dt} < 0")
    q = _qubit_index(qubit)
    if channel.is_trivial or (dt == 0 and channel.kind not in ("depolarize_prob", "dephase_prob")):
        return state
    rho = _apply_rho(state.rho, q, channel, dt)
    return state.with_rho(rho)


def _apply_rho(rho: np.ndarray, q: int, channel: NoiseChannel, dt: float) -> np.ndarray:
    probs = channel.pauli_probs(dt)
    if probs is not None:
        return kernels.pauli_channel(rho, q, *probs)
    gamma, pz = channel.t1t2_params(dt)
    if gamma > 0:
        rho = kernels.amplitude_damp(rho, q, gamma)
    if pz > 0:
        rho = kernels.pauli_channel(rho, q, 0.0, 0.0, pz)
    return rho


def apply_noise_1q(rho: np.ndarray, channel: NoiseChannel, dt: float) -> np.ndarray:
    """Apply ``channel`` to a single-qubit 2x2 density matrix.

    Embeds the qubit next to a maximally mixed ancilla, reusing the pair
    kernels, then traces the ancilla out.
    """
    if dt < 0:
        raise NegativeDurationError(f"dt={dt} < 0")
    if channel.is_trivial:
        return rho
    joint = np.kron(rho, I2 / 2)
    out = _apply_rho(joint, 0, channel, dt)
    return np.einsum("ibjb->ij", out.reshape(2, 2, 2, 2))


def apply_pauli(state: PairState, qubit, k: int) -> PairState:
    """Apply Pauli label ``k`` (0=I, 1=Z, 2=X, 3=XZ) on one qubit."""
    if k == 0:
        return state
    q = _qubit_index(qubit)
    op = np.kron(PAULI[k], I2) if q == 0 else np.kron(I2, PAULI[k])
    return state.with_rho(op @ state.rho @ op.conj().T)


# --- swapping ----------------------------------------------------------------


def swap_outcomes(left: PairState, right: PairState) -> tuple[np.ndarray, np.ndarray]:
    """Outcome probabilities and normalized (uncorrected) post-measurement states.

    ``left`` holds (outer, inner) and ``right`` holds (inner, outer); the two
    inner qubits are Bell-measured.
    """
    probs, posts = kernels.swap_project(left.rho, right.rho)
    total = probs.sum()
    if not np.isfinite(total) or abs(total - 1.0) > 1e-9:
        raise DegenerateStateError(f"swap outcome probabilities sum to {total}")
    probs = np.clip(probs, 0.0, None)
    probs = probs / probs.sum()
    return probs, posts


def swap(left: PairState, right: PairState, rng: np.random.Generator) -> tuple[PairState, int, float]:
    """Entanglement swap with a sampled Bell outcome.

    Returns the uncorrected state of the outer qubits, the outcome label
    (also the Pauli the far end must apply) and its probability.
    """
    probs, posts = swap_outcomes(left, right)
    k = int(rng.choice(4, p=probs))
    rho = repair(posts[k] / probs[k])
    out = PairState(
        rho,
        created_at=min(left.created_at, right.created_at),
        last_touched_a=left.last_touched_a,
        last_touched_b=right.last_touched_b,
    )
    return out, k, float(probs[k])


def swap_corrected_average(left: PairState, right: PairState) -> np.ndarray:
    """Outcome-averaged swap output with the Pauli correction on the right qubit."""
    probs, posts = swap_outcomes(left, right)
    out = np.zeros((4, 4), dtype=complex)
    for k in range(4):
        op = np.kron(I2, PAULI[k])
        out += op @ posts[k] @ op.conj().T
    return out


# --- DEJMPS ------------------------------------------------------------------


def _dejmps_unitary() -> np.ndarray:
    rx_plus = (I2 - 1j * X) / np.sqrt(2)  # Rx(pi/2), applied by the A side
    rx_minus = (I2 + 1j * X) / np.sqrt(2)  # Rx(-pi/2), applied by the B side
    local = np.kron(np.kron(rx_plus, rx_minus), np.kron(rx_plus, rx_minus))
    # qubit order (a1, b1, a2, b2); CNOT a1 -> a2 and b1 -> b2
    cnot = np.zeros((16, 16))
    for i in range(16):
        a1, b1, a2, b2 = (i >> 3) & 1, (i >> 2) & 1, (i >> 1) & 1, i & 1
        j = (a1 << 3) | (b1 << 2) | ((a2 ^ a1) << 1) | (b2 ^ b1)
        cnot[j, i] = 1.0
    return cnot @ local


_DEJMPS_U = _dejmps_unitary()
_DEJMPS_UH = _DEJMPS_U.conj().T


class DistillOutcome(NamedTuple):
    success: bool
    state: PairState | None
    probability: float


def dejmps_outcome(pair1: PairState, pair2: PairState) -> tuple[float, np.ndarray]:
    """Success probability and normalized kept state of one DEJMPS round.

    ``pair1`` is kept, ``pair2`` is measured. Returns ``(p, rho)``; ``rho``
    is ``None`` when ``p`` is zero.
    """
    joint = np.kron(pair1.rho, pair2.rho)
    rotated = _DEJMPS_U @ joint @ _DEJMPS_UH
    r = rotated.reshape(4, 4, 4, 4)  # (a1b1, a2b2, a1b1', a2b2')
    kept = r[:, 0, :, 0] + r[:, 3, :, 3]
    p = float(np.trace(kept).real)
    if p <= 1e-15:
        return 0.0, None
    return p, repair(kept / p)


def dejmps(pair1: PairState, pair2: PairState, rng: np.random.Generator) -> DistillOutcome:
    """One DEJMPS round; coincident Z outcomes keep ``pair1``."""
    p, rho = dejmps_outcome(pair1, pair2)
    if rho is not None and rng.random() < p:
        state = PairState(
            rho,
            created_at=min(pair1.created_at, pair2.created_at),
            last_touched_a=max(pair1.last_touched_a, pair2.last_touched_a),
            last_touched_b=max(pair1.last_touched_b, pair2.last_touched_b),
        )
        return DistillOutcome(True, state, p)
    return DistillOutcome(False, None, p)


# --- teleportation -------------------------------------------------------------


def teleport_channel(pair: PairState) -> np.ndarray:
    """Normalized Choi matrix (trace 1) of teleportation through ``pair``.

    The sender owns qubit A, the receiver qubit B; the receiver applies the
    Pauli labelled by the Bell outcome. Convention: ``J = (I (x) E)(|Phi+><Phi+|)``.
    """
    r = pair.rho.reshape(2, 2, 2, 2)  # (a, b, a', b')
    B = kernels.BELL
    # E(|i><j|)[b, b'] = sum_k sigma_k (sum_{a,a'} B[k,i,a] B[k,j,a'] r[a,b,a',b']) sigma_k^dag
    raw = np.einsum("kia,kjc,abcd->kijbd", B, B, r)
    choi = np.zeros((2, 2, 2, 2), dtype=complex)
    for k in range(4):
        s = PAULI[k]
        choi += np.einsum("xb,ijbd,yd->ijxy", s, raw[k], s.conj())
    # choi[i, j] = E(|i><j|); J = 1/2 sum |i><j| (x) E(|i><j|)
    J = 0.5 * choi.transpose(0, 2, 1, 3).reshape(4, 4)
    return J


def apply_channel(choi: np.ndarray, rho_in: np.ndarray) -> np.ndarray:
    """Apply the channel with normalized Choi matrix ``choi`` to a 2x2 state."""
    J = (2.0 * choi).reshape(2, 2, 2, 2)  # (i, x, j, y)
    return np.einsum("ij,ixjy->xy", rho_in, J)


def pauli_twirl(choi: np.ndarray) -> BellDiag:
    """Pauli-channel probabilities (I, Z, X, Y) of the twirled channel."""
    p = np.real(np.einsum("ki,ij,kj->k", BELL_KETS.conj(), choi, BELL_KETS))
    p = np.clip(p, 0.0, 1.0)
    return BellDiag(tuple(p / p.sum()))


def state_fidelity(psi: np.ndarray, rho: np.ndarray) -> float:
    """<psi|rho|psi> for a pure reference ket."""
    return float(np.real(psi.conj() @ rho @ psi))


def haar_ket(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    return v / np.linalg.norm(v)


# --- QBER ------------------------------------------------------------------------


def qber_sample(pair: PairState, rng: np.random.Generator, basis: str = "Z") -> tuple[int, int]:
    """Measure both qubits in the Z basis; returns (bit at A, bit at B)."""
    if basis != "Z":
        raise ValueError("only Z-basis QBER sampling is supported")
    p = np.clip(np.real(np.diag(pair.rho)), 0.0, None)
    idx = int(rng.choice(4, p=p / p.sum()))
    return idx >> 1, idx & 1


def error_probability_z(pair: PairState) -> float:
    """Probability that Z-basis outcomes at the two ends differ."""
    d = np.real(np.diag(pair.rho))
    return float(d[1] + d[2])
