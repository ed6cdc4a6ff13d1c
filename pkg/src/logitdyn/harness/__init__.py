"""Toy-scenario runner, sweeps, verification batteries and file emitters."""

from .config import ScenarioConfig, load_config
from .output import emit_csv, emit_json, emit_svg
from .scenario import run_matched_comparison, run_scenario, run_sweep
from .verify import run_suite
