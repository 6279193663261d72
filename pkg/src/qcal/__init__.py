"""qcal: declarative calibration pipelines for simulated superconducting qubits."""

from importlib import resources

__version__ = "0.1.0"


def default_runcard(platform: str = "sim_1q") -> str:
    """Text of the shipped full-chain runcard for ``platform``."""
    return resources.files(__name__).joinpath(f"runcards/default_{platform}.yml").read_text()
