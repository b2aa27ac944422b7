"""Simulation and time-tag analysis of heralded single-photon absorption by a trapped ion."""

__version__ = "0.1.0"

from .config import ExperimentConfig, ScanSpec, load_config, load_scan  # noqa: E402
from .sequencer import run_experiment  # noqa: E402
from .tags import Channel, TagStream, read_tags, write_tags  # noqa: E402
