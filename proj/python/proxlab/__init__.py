"""Python bindings for proxlab."""

from ._proxlab import (
    ConfigError,
    DomainError,
    NonFiniteError,
    ShapeError,
    VersionError,
    alpha,
    approx_prox_logp,
    bench_prox,
    cli,
    coupled_ppo_loss,
    decoupled_loss,
    gradcheck,
    grpo_advantages,
    load_config,
    run_experiment,
    summarize,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "NonFiniteError",
    "ShapeError",
    "VersionError",
    "alpha",
    "approx_prox_logp",
    "bench_prox",
    "cli",
    "coupled_ppo_loss",
    "decoupled_loss",
    "gradcheck",
    "grpo_advantages",
    "load_config",
    "run_experiment",
    "summarize",
]
