"""Batch experiment runner and the ``flowcap`` command."""
from .experiments import load_config, run_config, validate_config
