"""Parameter-sweep templates and the sweep runner.

Each template maps a swept value and a series label to a config dict,
runs independent seeded simulations per ``(series, value, repetition)``,
and aggregates their summaries into ``sweep.csv`` with a mean and a
standard error per metric. A gnuplot script for the sweep is written
alongside.

Seeds are derived from the master seed, the template, the series, the
value and the repetition, so rows do not depend on sweep order. Templates
flagged ``common_numbers`` leave the value out of the seed: every point of
a series then sees the same generation draws, which removes Monte Carlo
jitter from curves that should be monotone in the swept value.
"""

from __future__ import annotations

import copy
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ebnsim import simulation
from ebnsim.apps import ShorApp, TeleportApp
from ebnsim.deskernel import derive_seed
from ebnsim.errors import ConfigError, EbnsimError
from ebnsim.metrics import fmt, write_csv
from ebnsim.netmodel import build_topology, parse_config_text

METRICS = ("C_total", "T_ms", "F", "QBER", "F_app", "t_mean_ns", "t_e_ms", "successes", "attempts", "aborted")


# --- config builders -----------------------------------------------------------


def _request(rid="r0", s="s", d="d", persistence_ms=20.0, app="capacity", **extra) -> dict:
    return {"id": rid, "s": s, "d": d, "persistence_ms": persistence_ms, "app": app, **extra}


def chain(e2e_km, switches, tech="NV", memories=2, requests=None, network=None, **chain_kw) -> dict:
    ch = {"e2e_km": float(e2e_km), "switches": int(switches), "tech": tech, "memories": memories}
    ch.update(chain_kw)
    return {"network": dict(network or {}), "chain": ch, "request": requests or [_request()]}


def star(n_pairs: int, hop_km: float, switch_tech, end_tech, memories: int, requests: int, persistence_ms: float, **link) -> dict:
    """One switch ``Q`` with ``n_pairs`` source/destination end-node pairs."""
    nodes = [{"id": "Q", "kind": "switch", "tech": switch_tech, "memories": memories}]
    links = []
    for i in range(n_pairs):
        for end in (f"a{i}", f"b{i}"):
            nodes.append({"id": end, "kind": "end", "tech": end_tech})
            links.append({"u": end, "v": "Q", "length_km": hop_km, "source": "Q", **link})
    reqs = [_request(f"r{i}", f"a{i}", f"b{i}", persistence_ms) for i in range(requests)]
    return {"network": {}, "node": nodes, "link": links, "request": reqs}


# --- templates -----------------------------------------------------------------


@dataclass
class Template:
    name: str
    purpose: str
    param: str
    values: list
    scale: str
    series: list
    build: Callable[[float, str], dict]
    reps: int = 3
    common_numbers: bool = False
    exact_links: bool = True
    plot: tuple = ("C_total",)
    extra: Callable | None = None


def _f_t1(value, series):
    h = int(series.split("=")[1])
    # lossless links isolate memory decoherence from generation randomness
    tech = {
        "base": "NV", "memory_model": "depolarizing", "memory_rate_hz": 1e9 / float(value),
        "gate_depolarization": 0.0, "photon_conversion_efficiency": 1.0,
    }
    path = ["s"] + [f"Q{i}" for i in range(1, h + 1)] + ["d"]
    req = _request(persistence_ms=5.0, path=path)
    return chain(10.0, h, tech=tech, f_src=1.0, alpha_db_km=0.0, requests=[req])


def _c_g(value, series):
    n = int(series.split("=")[1])
    g = float(value)
    switch_tech = {"base": "ideal", "one_qubit_gate_ns": g, "two_qubit_gate_ns": g, "measurement_ns": g}
    persistence = max(5.0, 60 * n * 2 * g / 1e6)
    return star(5, 2.5, switch_tech, "ideal", 10, n, persistence, alpha_db_km=0.0)


def _t_e_hops(series):
    return 0 if series == "direct" else int(series.split("=")[1])


def _t_e(value, series):
    h = _t_e_hops(series)
    req = _request(persistence_ms=1e9, max_successes=4000, qber=False)
    return chain(10.0, h, tech="ideal", alpha_db_km=0.0, extra_loss=float(value), requests=[req])


def _t_e_extra(value, series, result):
    topo = result.topology
    cycle = max(l.delay_ns for l in topo.links.values()) + topo.params.source_period_ns
    q = float(value)
    n = len(topo.links)
    if q == 0:
        e_max = 1.0
    else:
        k = np.arange(1, 20000)
        e_max = 1.0 + float(np.sum(1.0 - (1.0 - q ** k) ** n))
    return {"t_e_oracle_ms": cycle * e_max / 1e6, "T_oracle_ms": cycle / (1.0 - q) / 1e6 if n == 1 else None}


def _tech_series(series):
    parts = dict(p.split("=") for p in series.split(","))
    return parts.get("tech", "NV"), int(parts.get("h", 1)), float(parts.get("coupling", 1.0))


def _c_d(value, series):
    tech, h, coupling = _tech_series(series)
    persistence = 100.0 * max(1.0, float(value) / 10.0)
    return chain(float(value), h, tech=tech, coupling=coupling, requests=[_request(persistence_ms=persistence)])


def _c_h(value, series):
    tech, _, coupling = _tech_series(series)
    return chain(20.0, int(value), tech=tech, coupling=coupling, requests=[_request(persistence_ms=100.0)])


def _cfo_h(value, series):
    km = float(series.split("=")[1])
    return chain(km, int(value), tech="NV", f_src=0.99, memories=2, requests=[_request(persistence_ms=100.0)])


def _ec_p(value, series):
    tech = {"base": "NV", "memory_model": "dephasing", "memory_rate_hz": 500.0, "gate_depolarization": 0.0}
    quiet = {"kind": "none"}
    if series == "none":
        req = _request(app="teleport", persistence_ms=100.0, purification="off")
    elif series == "purify":
        req = _request(app="teleport", persistence_ms=100.0, f_min=0.95, purification="adaptive", max_rounds=1)
    else:
        req = _request(app="shor", persistence_ms=100.0, purification="off", shor_mode="parallel")
    return chain(float(value), 1, tech=tech, memories=4, app_memory_noise=quiet, requests=[req])


TEMPLATES: dict[str, Template] = {
    "F_T1": Template(
        "F_T1", "fidelity regimes as memory lifetime grows", "t1_ns",
        list(np.logspace(2, 10, 17)), "log", ["h=1", "h=2", "h=3"], _f_t1,
        reps=2, common_numbers=True, plot=("F",),
    ),
    "C_G": Template(
        "C_G", "how gate duration limits capacity", "gate_ns",
        list(np.logspace(1, 5, 9)), "log", [f"n={n}" for n in range(1, 6)], _c_g,
        reps=2, plot=("C_total",),
    ),
    "T_E": Template(
        "T_E", "effect of photon loss on processing time", "p_loss",
        [round(v, 2) for v in np.linspace(0.0, 0.9, 10)], "linear", ["direct", "h=2"], _t_e,
        reps=1, plot=("T_ms", "t_e_ms"), extra=_t_e_extra,
    ),
    "C_d": Template(
        "C_d", "effect of distance on capacity", "e2e_km",
        [5.0, 10.0, 20.0, 40.0, 80.0], "log", ["tech=NV,h=1", "tech=SiV,h=1"], _c_d,
        reps=3,
    ),
    "C_m": Template(
        "C_m", "memory technology comparison", "e2e_km",
        [5.0, 10.0, 20.0, 40.0], "log",
        ["tech=NV,h=1", "tech=SiV,h=1", "tech=NV,h=2", "tech=NV,h=1,coupling=0.5"], _c_d,
        reps=3,
    ),
    "C_h": Template(
        "C_h", "capacity against the number of switches", "switches",
        [0, 1, 2, 3, 4, 5], "linear", ["tech=NV", "tech=SiV"], _c_h, reps=3,
    ),
    "EC_P": Template(
        "EC_P", "error correction against purification under dephasing", "e2e_km",
        [2.0, 5.0, 10.0, 20.0, 40.0], "log", ["none", "purify", "shor"], _ec_p,
        reps=2, plot=("F_app",),
    ),
    "CFO_H": Template(
        "CFO_H", "all figures of merit against the number of switches", "switches",
        [0, 1, 2, 3, 4, 5], "linear", ["e2e_km=10", "e2e_km=50"], _cfo_h,
        reps=3, plot=("C_total", "F", "T_ms", "QBER"),
    ),
}


# --- running ---------------------------------------------------------------------


@dataclass
class ExperimentSpec:
    template: str
    values: list
    series: list
    reps: int = 1
    seed: int = 0
    out_dir: str | None = None
    param: str = ""
    scale: str = "linear"
    base: dict | None = None  # custom template only

    def __post_init__(self):
        if not self.values:
            raise ConfigError("sweep values must be nonempty", "experiment")
        if self.reps < 1:
            raise ConfigError("repetitions must be >= 1", "experiment")
        if self.template != "custom" and self.template not in TEMPLATES:
            raise ConfigError(f"unknown template {self.template!r}", "experiment")
        if self.template == "custom" and (self.base is None or not self.param):
            raise ConfigError("custom template needs [base] and param", "experiment")


def default_spec(name: str, seed: int = 0, reps: int | None = None, values=None, series=None) -> ExperimentSpec:
    t = TEMPLATES[name]
    return ExperimentSpec(
        name, list(values if values is not None else t.values), list(series or t.series),
        reps if reps is not None else t.reps, seed, param=t.param, scale=t.scale,
    )


def load_spec(text: str, seed: int | None = None) -> ExperimentSpec:
    cfg = parse_config_text(text)
    exp = dict(cfg.get("experiment", {}))
    name = exp.get("template", "custom")
    if name != "custom":
        if name not in TEMPLATES:
            raise ConfigError(f"unknown template {name!r}", "experiment")
        spec = default_spec(name, int(exp.get("seed", 0)), exp.get("reps"), exp.get("values"), exp.get("series"))
    else:
        spec = ExperimentSpec(
            "custom", list(exp.get("values", [])), ["custom"], int(exp.get("reps", 1)), int(exp.get("seed", 0)),
            param=str(exp.get("param", "")), scale=str(exp.get("scale", "linear")), base=cfg.get("base"),
        )
    if seed is not None:
        spec.seed = seed
    if "out" in exp:
        spec.out_dir = str(exp["out"])
    return spec


def set_path(cfg: dict, path: str, value) -> dict:
    """Return a copy of ``cfg`` with the dotted ``path`` set (list indices allowed)."""
    out = copy.deepcopy(cfg)
    keys = path.split(".")
    cur = out
    for k in keys[:-1]:
        cur = cur[int(k)] if isinstance(cur, list) else cur.setdefault(k, {})
    last = keys[-1]
    if isinstance(cur, list):
        cur[int(last)] = value
    else:
        cur[last] = value
    return out


def point_config(spec: ExperimentSpec, series: str, value) -> dict:
    if spec.template == "custom":
        return set_path(spec.base, spec.param, value)
    return TEMPLATES[spec.template].build(value, series)


def point_seed(spec: ExperimentSpec, series: str, value, rep: int) -> int:
    common = spec.template != "custom" and TEMPLATES[spec.template].common_numbers
    if common:
        return derive_seed(spec.seed, spec.template, series, rep)
    return derive_seed(spec.seed, spec.template, series, float(value), rep)


def point_metrics(result: simulation.RunResult) -> dict:
    """Aggregate one run's summaries into the sweep metrics."""
    sums = result.summaries
    recs = result.records
    ok = [r for r in recs if r.c == 1]
    out = {
        "C_total": float(sum(s.C for s in sums)),
        "T_ms": float(np.mean([s.T_ms for s in sums])) if sums else math.inf,
        "F": float(np.mean([r.fidelity for r in ok])) if ok else None,
        "QBER": None,
        "F_app": None,
        "t_mean_ns": float(np.mean([r.t_total for r in recs])) if recs else None,
        "t_e_ms": float(np.mean([r.t_e for r in recs])) / 1e6 if recs else None,
        "successes": len(ok),
        "attempts": len(recs),
        "aborted": sum(1 for s in sums if s.aborted),
    }
    bits = [(r.bit_s, r.bit_d) for r in ok if r.bit_s is not None]
    if bits:
        out["QBER"] = sum(1 for a, b in bits if a != b) / len(bits)
    app_f = []
    for app in result.apps.values():
        if isinstance(app, ShorApp):
            if app.logical_fidelity is not None:
                app_f.append(app.logical_fidelity)
        elif isinstance(app, TeleportApp):
            m = app.stats.mean("avg_fidelity")
            if m is not None:
                app_f.append(m)
    if app_f:
        out["F_app"] = float(np.mean(app_f))
    return out


def run_point(spec: ExperimentSpec, series: str, value, rep: int) -> dict:
    """One independent simulation; errors are reported in the row."""
    try:
        cfg = point_config(spec, series, value)
        topo = build_topology(cfg)
        exact = spec.template != "custom" and TEMPLATES[spec.template].exact_links
        result = simulation.run(topo, seed=point_seed(spec, series, value, rep), exact_links=exact)
        row = point_metrics(result)
        if spec.template != "custom" and TEMPLATES[spec.template].extra is not None:
            row.update(TEMPLATES[spec.template].extra(value, series, result))
        row["error"] = ""
        return row
    except EbnsimError as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}


def _run_job(args):
    return run_point(*args)


def _mean_stderr(vals):
    vals = [v for v in vals if v is not None and not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        return None, None
    a = np.asarray(vals, dtype=float)
    if np.isinf(a).any():
        return float(a.mean()), None
    se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return float(a.mean()), se


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> tuple[list[dict], int]:
    """Run every ``(series, value, rep)`` point; returns rows and an exit status.

    Status is 0 when every point completed without aborted requests, else 2.
    """
    jobs_list = [(spec, s, v, r) for s in spec.series for v in spec.values for r in range(spec.reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, jobs_list))
    else:
        results = [_run_job(j) for j in jobs_list]
    rows = []
    status = 0
    i = 0
    for s in spec.series:
        for v in spec.values:
            reps = results[i:i + spec.reps]
            i += spec.reps
            errors = [r["error"] for r in reps if r.get("error")]
            row = {"template": spec.template, "series": s, "param": spec.param, "value": v, "reps": spec.reps}
            keys = list(METRICS) + sorted({k for r in reps for k in r if k not in METRICS and k != "error"})
            for k in keys:
                mean, se = _mean_stderr([r.get(k) for r in reps if not r.get("error")])
                row[k] = mean
                row[k + "_se"] = se
            row["error"] = "; ".join(errors)
            if errors or (row.get("aborted") or 0) > 0:
                status = 2
            rows.append(row)
    return rows, status


def sweep_columns(rows) -> list[str]:
    cols = ["template", "series", "param", "value", "reps"]
    for r in rows:
        for k in r:
            if k not in cols and k != "error":
                cols.append(k)
    return cols + ["error"]


def gnuplot_script(spec: ExperimentSpec, metrics=("C_total",)) -> str:
    lines = [
        "# gnuplot script; run with: gnuplot plot.gp",
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set terminal pngcairo size 900,600",
        f"set xlabel '{spec.param}'",
    ]
    if spec.scale == "log":
        lines.append("set logscale x")
    for m in metrics:
        lines.append(f"set output '{spec.template}_{m}.png'")
        lines.append(f"set ylabel '{m}'")
        plots = []
        for s in spec.series:
            plots.append(
                f"'sweep.csv' using (strcol(2) eq '{s}' ? $4 : 1/0):(column('{m}')):(column('{m}_se')) "
                f"with yerrorlines title '{s}'"
            )
        lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def write_experiment(spec: ExperimentSpec, rows, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sweep = out / "sweep.csv"
    write_csv(sweep, sweep_columns(rows), rows)
    plot = out / "plot.gp"
    metrics = TEMPLATES[spec.template].plot if spec.template in TEMPLATES else ("C_total", "F", "T_ms")
    plot.write_text(gnuplot_script(spec, metrics))
    return [sweep, plot]


def default_jobs() -> int:
    return max(1, min(4, os.cpu_count() or 1))
