"""Backend selection for the numerical kernels.

The compiled extension ``ebnsim._ckernels`` is used when it was built and
imports cleanly; otherwise the numpy versions in ``ebnsim._pykernels`` are
used. Set ``EBNSIM_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from ebnsim import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("EBNSIM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ebnsim import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

pauli_channel = _impl.pauli_channel
amplitude_damp = _impl.amplitude_damp
swap_project = _impl.swap_project
shor_decode = _impl.shor_decode

BELL = _pykernels.BELL


def backends() -> dict:
    """All importable backends by name, for tests and benchmarks."""
    out = {"python": _pykernels}
    try:
        from ebnsim import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
