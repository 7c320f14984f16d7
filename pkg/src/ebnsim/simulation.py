"""Single-run orchestration: build the runtime, route, run, collect."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ebnsim import apps as apps_mod
from ebnsim import metrics
from ebnsim.deskernel import Simulator, derive_seed
from ebnsim.hypervisor import Hypervisor, RequestOutcome, VirtualGraph, estimate_link_fidelities, exact_virtual_graph
from ebnsim.netmodel import NetworkRuntime, Topology


@dataclass
class RunResult:
    topology: Topology
    seed: int
    vgraph: VirtualGraph
    outcomes: dict
    apps: dict
    summaries: list = field(default_factory=list)
    end_time: int = 0
    events: int = 0

    @property
    def records(self) -> list:
        out = []
        for rid in sorted(self.outcomes):
            out.extend(self.outcomes[rid].records)
        return out

    def summary(self, request_id: str) -> metrics.RequestSummary:
        for s in self.summaries:
            if s.request_id == request_id:
                return s
        raise KeyError(request_id)


def run(
    topology: Topology,
    seed: int | None = None,
    vgraph: VirtualGraph | None = None,
    exact_links: bool = False,
    horizon_ns: int | None = None,
    trace=None,
) -> RunResult:
    """Simulate every configured request to completion.

    Parameters
    ----------
    seed
        Master seed; defaults to the config's ``network.seed``.
    vgraph
        Precomputed virtual graph. Otherwise it is estimated from
        ``estimation_trials`` samples per link, or computed exactly when
        ``exact_links`` is set.
    horizon_ns
        Optional hard stop; attempts still running are closed as failed.
    """
    seed = topology.params.seed if seed is None else int(seed)
    if vgraph is None:
        if exact_links:
            vgraph = exact_virtual_graph(topology)
        else:
            vgraph = estimate_link_fidelities(topology, seed=derive_seed(seed, "vgraph"))
    sim = Simulator(seed)
    if trace is not None:
        sim.trace_hooks.append(trace)
    net = NetworkRuntime(sim, topology)
    hv = Hypervisor(sim, net, vgraph, lambda req: apps_mod.make_app(req, sim))
    hv.submit_all(topology.requests)
    stats = sim.run_until(horizon_ns)
    hv.finalize()
    summaries = []
    for req in topology.requests:
        out: RequestOutcome = hv.outcomes.get(req.id) or RequestOutcome(req, aborted=True, reason="never arrived")
        hv.outcomes[req.id] = out
        summaries.append(metrics.summarize(req.id, out.records, req.persistence, out.aborted))
    return RunResult(topology, seed, vgraph, hv.outcomes, hv.apps, summaries, sim.now, stats.events)


def write_outputs(result: RunResult, out_dir) -> list[Path]:
    """Write attempts.csv, summary.csv, vgraph.json and any app CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "attempts.csv", out / "summary.csv", out / "vgraph.json"]
    metrics.write_attempts(written[0], result.records)
    metrics.write_summary(written[1], result.summaries)
    result.vgraph.write_json(written[2])
    tele_rows, logical_rows = [], []
    for rid in sorted(result.apps):
        app = result.apps[rid]
        if isinstance(app, apps_mod.TeleportApp):
            tele_rows += [dict(r, request_id=rid) for r in app.stats.rows]
        if isinstance(app, apps_mod.ShorApp):
            logical_rows += [dict(r, request_id=rid) for r in app.logical_rows]
    if tele_rows:
        written.append(out / "teleport.csv")
        metrics.write_csv(written[-1], ("request_id",) + apps_mod.TELEPORT_COLUMNS, tele_rows)
    if logical_rows:
        written.append(out / "logical.csv")
        metrics.write_csv(written[-1], ("request_id",) + apps_mod.LOGICAL_COLUMNS, logical_rows)
    return written
