"""Python bindings for the chaingem library."""

from ._core import (
    ConfigError,
    DivergenceError,
    __version__,
    add_noise,
    cer,
    cli,
    compute_metrics,
    default_config,
    edit_distance,
    normalize_config,
    project,
    run_pipeline,
)

__all__ = [
    "ConfigError",
    "DivergenceError",
    "__version__",
    "add_noise",
    "cer",
    "cli",
    "compute_metrics",
    "default_config",
    "edit_distance",
    "normalize_config",
    "project",
    "run_pipeline",
]
