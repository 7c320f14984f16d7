"""Command-line entry point: ``ebnsim run | experiment | validate | presets``.

Exit codes: 0 success, 1 configuration error, 2 partial failure (an
aborted request or a failed sweep point).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

from ebnsim import experiments, simulation
from ebnsim.errors import ConfigError
from ebnsim.netmodel import PRESETS, load_topology_file

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


def _seed(arg: int | None) -> int | None:
    if arg is not None:
        return arg
    env = os.environ.get("EBNSIM_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"EBNSIM_SEED={env!r} is not an integer") from None
    return None


def cmd_run(args) -> int:
    topo = load_topology_file(args.config)
    if args.validate_only:
        print(f"ok: {len(topo.nodes)} nodes, {len(topo.links)} links, {len(topo.requests)} requests")
        return EXIT_OK
    result = simulation.run(topo, seed=_seed(args.seed), exact_links=args.exact_links)
    for path in simulation.write_outputs(result, args.out):
        print(path)
    for s in result.summaries:
        f = "-" if s.F_mean is None else f"{s.F_mean:.4f}"
        print(f"{s.request_id}: T={s.T_ms:.4g} ms C={s.C:.4g} EPR/s F={f} attempts={s.attempts} successes={s.successes}"
              + (" ABORTED" if s.aborted else ""))
    return EXIT_PARTIAL if any(s.aborted for s in result.summaries) else EXIT_OK


def cmd_validate(args) -> int:
    topo = load_topology_file(args.config)
    print(f"ok: {len(topo.nodes)} nodes, {len(topo.links)} links, {len(topo.requests)} requests")
    return EXIT_OK


def _parse_values(text: str) -> list:
    out = []
    for part in text.split(","):
        v = float(part)
        out.append(int(v) if v.is_integer() and "." not in part and "e" not in part.lower() else v)
    return out


def cmd_experiment(args) -> int:
    seed = _seed(args.seed)
    target = args.template
    if target in experiments.TEMPLATES:
        spec = experiments.default_spec(target, seed or 0, args.reps)
    elif target == "custom":
        raise ConfigError("the custom template needs an experiment spec file")
    else:
        path = Path(target)
        if not path.exists():
            raise ConfigError(f"unknown template or missing file {target!r}")
        spec = experiments.load_spec(path.read_text(), seed)
        if args.reps is not None:
            spec.reps = args.reps
    if args.values:
        spec.values = _parse_values(args.values)
    if args.series:
        spec.series = args.series.split(";")
    spec.__post_init__()
    out = args.out or spec.out_dir or os.path.join("results", spec.template)
    rows, status = experiments.run_experiment(spec, jobs=args.jobs)
    for path in experiments.write_experiment(spec, rows, out):
        print(path)
    bad = [r for r in rows if r.get("error") or (r.get("aborted") or 0) > 0]
    for r in bad:
        print(f"partial: series={r['series']} value={r['value']} {r.get('error') or 'aborted requests'}", file=sys.stderr)
    return status


def cmd_presets(args) -> int:
    cols = ("name", "one_qubit_gate", "two_qubit_gate", "measurement", "photon_conversion_efficiency",
            "gate_depolarization", "t1", "t2", "wavelength_nm")
    heads = ("preset", "1q gate ns", "2q gate ns", "meas ns", "conversion", "gate depol", "T1 ns", "T2 ns", "lambda nm")
    rows = [heads]
    for p in PRESETS.values():
        row = []
        for c in cols:
            v = getattr(p, c)
            row.append(v if isinstance(v, str) else ("inf" if math.isinf(v) else f"{v:g}"))
        rows.append(row)
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(heads))]
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip())
    return EXIT_OK


def cmd_templates(args) -> int:
    for t in experiments.TEMPLATES.values():
        print(f"{t.name:6s} {t.param:9s} series={';'.join(t.series)}  {t.purpose}")
    print("custom  <spec.toml>  any config field swept via [experiment] param")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ebnsim", description="Entanglement-based network simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="master seed (default: EBNSIM_SEED, then the config)")
    r.add_argument("--out", default="results/run")
    r.add_argument("--validate-only", action="store_true")
    r.add_argument("--exact-links", action="store_true", help="route on exact link fidelities instead of estimates")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("experiment", help="run a sweep template or an experiment spec file")
    e.add_argument("template", help="template name or path to an experiment TOML")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--reps", type=int, default=None)
    e.add_argument("--values", default=None, help="comma-separated sweep values")
    e.add_argument("--series", default=None, help="semicolon-separated series labels")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_experiment)

    sub.add_parser("presets", help="print technology presets").set_defaults(func=cmd_presets)
    sub.add_parser("templates", help="list experiment templates").set_defaults(func=cmd_templates)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
