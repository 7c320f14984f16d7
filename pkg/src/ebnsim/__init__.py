"""ebnsim: discrete-event simulator for entanglement-based quantum networks."""

from ebnsim.errors import ConfigError, EbnsimError
from ebnsim.kernels import BACKEND
from ebnsim.netmodel import PRESETS, Topology, load_topology, load_topology_file
from ebnsim.simulation import RunResult, run, write_outputs

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "EbnsimError",
    "PRESETS",
    "RunResult",
    "Topology",
    "load_topology",
    "load_topology_file",
    "run",
    "write_outputs",
    "__version__",
]
