"""Compare the compiled and pure-Python numerical kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat N]

Also times one end-to-end demo run under each backend (in a subprocess,
since the backend is picked at import).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit
from pathlib import Path

import numpy as np

from ebnsim import kernels, qstate

DEMO = Path(__file__).resolve().parents[1] / "src" / "ebnsim" / "data" / "demo.toml"


def cases(rng: np.random.Generator) -> dict:
    rho = qstate.werner(0.9).rho
    other = qstate.werner(0.85).rho
    frames = rng.integers(0, 4, size=(256, 9)).astype(np.int8)
    return {
        "pauli_channel": lambda m: m.pauli_channel(rho, 1, 0.01, 0.02, 0.03),
        "amplitude_damp": lambda m: m.amplitude_damp(rho, 0, 0.05),
        "swap_project": lambda m: m.swap_project(rho, other),
        "shor_decode[256]": lambda m: m.shor_decode(frames),
    }


def bench(repeat: int) -> list[tuple]:
    backends = kernels.backends()
    rows = []
    for name, fn in cases(np.random.default_rng(1)).items():
        times = {}
        for bname, mod in backends.items():
            n = 2000
            times[bname] = min(timeit.repeat(lambda: fn(mod), number=n, repeat=repeat)) / n * 1e6
        rows.append((name, times))
    return rows


def demo_time(pure: bool) -> float:
    env = dict(os.environ, EBNSIM_PURE_PYTHON="1" if pure else "0")
    code = (
        "import time, tempfile; from ebnsim import load_topology_file, run, write_outputs, BACKEND;"
        f"t=time.perf_counter(); r=run(load_topology_file({str(DEMO)!r}));"
        "write_outputs(r, tempfile.mkdtemp()); print(BACKEND, time.perf_counter()-t)"
    )
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.split()[1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rows = bench(args.repeat)
    names = sorted({b for _, t in rows for b in t})
    print(f"{'kernel':18s}" + "".join(f"{b + ' us':>14s}" for b in names) + f"{'speedup':>10s}")
    for name, t in rows:
        speed = t["python"] / t["cython"] if "cython" in t else float("nan")
        print(f"{name:18s}" + "".join(f"{t[b]:14.2f}" for b in names) + f"{speed:10.1f}x")
    if "cython" not in names:
        print("compiled backend not built; only the fallback was timed")
    print(f"demo run: python {demo_time(True):.2f} s", end="")
    if "cython" in names:
        print(f", cython {demo_time(False):.2f} s")
    else:
        print()


if __name__ == "__main__":
    main()
