"""Pure-numpy implementations of the hot numerical kernels.

These are the reference versions. ``_ckernels.pyx`` mirrors every function
here with the same signature; ``ebnsim.kernels`` picks one at import time.
"""

from __future__ import annotations

import numpy as np

_SQ = 1.0 / np.sqrt(2.0)
# BELL[k, b, c]: amplitude of |b c> in Bell state k, k = (x bit << 1) | z bit.
BELL = np.array(
    [
        [[_SQ, 0.0], [0.0, _SQ]],   # Phi+
        [[_SQ, 0.0], [0.0, -_SQ]],  # Phi-
        [[0.0, _SQ], [_SQ, 0.0]],   # Psi+
        [[0.0, _SQ], [-_SQ, 0.0]],  # Psi-
    ]
)
_SIGN = np.array([1.0, -1.0])
_ZZ = np.multiply.outer(_SIGN, _SIGN)


def _axes(qubit: int) -> tuple[int, int]:
    return (0, 2) if qubit == 0 else (1, 3)


def pauli_channel(rho: np.ndarray, qubit: int, px: float, py: float, pz: float) -> np.ndarray:
    """Apply ``rho -> (1-px-py-pz) rho + px XrX + py YrY + pz ZrZ`` on one qubit of a pair."""
    r = rho.reshape(2, 2, 2, 2)
    if qubit == 0:
        zs = r * _ZZ[:, None, :, None]
        flip = (slice(None, None, -1), slice(None), slice(None, None, -1), slice(None))
    else:
        zs = r * _ZZ[None, :, None, :]
        flip = (slice(None), slice(None, None, -1), slice(None), slice(None, None, -1))
    out = (1.0 - px - py - pz) * r + px * r[flip] + py * zs[flip] + pz * zs
    return out.reshape(4, 4)


def amplitude_damp(rho: np.ndarray, qubit: int, gamma: float) -> np.ndarray:
    """Amplitude damping with decay probability ``gamma`` on one qubit of a pair."""
    r = rho.reshape(2, 2, 2, 2)
    k0 = np.array([1.0, np.sqrt(1.0 - gamma)])
    kk = np.multiply.outer(k0, k0)
    if qubit == 0:
        out = r * kk[:, None, :, None]
        out[0, :, 0, :] += gamma * r[1, :, 1, :]
    else:
        out = r * kk[None, :, None, :]
        out[:, 0, :, 0] += gamma * r[:, 1, :, 1]
    return out.reshape(4, 4)


def swap_project(rho_left: np.ndarray, rho_right: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bell-project the inner qubits of two pairs.

    Returns ``(probs, posts)`` where ``posts[k]`` is the unnormalized 4x4
    state of the outer qubits for outcome ``k`` and ``probs[k]`` its trace.
    """
    r1 = rho_left.reshape(2, 2, 2, 2)
    r2 = rho_right.reshape(2, 2, 2, 2)
    posts = np.einsum("kbc,kBC,abAB,cdCD->kadAD", BELL, BELL, r1, r2).reshape(4, 4, 4)
    probs = np.real(np.einsum("kii->k", posts))
    return probs, posts


def shor_decode(frames: np.ndarray) -> np.ndarray:
    """Decode Pauli frames on the nine-qubit Shor code.

    ``frames`` is an ``(n, 9)`` uint8 array of labels ``(x << 1) | z``.
    Returns the residual logical Pauli per row with the same encoding, where
    logical X flips |0_L> <-> |1_L> and logical Z is the relative phase.
    """
    f = np.asarray(frames, dtype=np.uint8).reshape(-1, 3, 3)
    x = (f >> 1) & 1
    z = f & 1
    # bit flips: majority vote inside each block leaves XXX iff >= 2 flips
    block_x_fail = x.sum(axis=2) >= 2
    logical_z = block_x_fail.sum(axis=1) & 1
    # phase flips: block parity, then majority vote across blocks
    block_phase = z.sum(axis=2) & 1
    logical_x = (block_phase.sum(axis=1) >= 2).astype(np.uint8)
    return ((logical_x << 1) | logical_z).astype(np.uint8)
