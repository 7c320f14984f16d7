import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ebnsim import kernels  # noqa: E402

KERNEL_FUNCS = ("pauli_channel", "amplitude_damp", "swap_project", "shor_decode")


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request, monkeypatch):
    """Run the test once per importable kernel backend."""
    mod = kernels.backends()[request.param]
    for name in KERNEL_FUNCS:
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


def chain_cfg(e2e_km=10.0, switches=1, tech="ideal", requests=(), network=None, **chain_kw):
    """Config dict for an equally spaced chain with the given requests."""
    from ebnsim.netmodel import chain_config

    cfg = chain_config(e2e_km, switches, tech=tech, **chain_kw)
    cfg["network"].update(network or {})
    cfg["request"] = [dict({"id": f"r{i}", "s": "s", "d": "d"}, **r) for i, r in enumerate(requests)]
    return cfg


def run_cfg(cfg, seed=1, **kw):
    from ebnsim import simulation
    from ebnsim.netmodel import build_topology

    return simulation.run(build_topology(cfg), seed=seed, **kw)


@pytest.fixture
def demo_path():
    from importlib import resources

    return str(resources.files("ebnsim") / "data" / "demo.toml")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
