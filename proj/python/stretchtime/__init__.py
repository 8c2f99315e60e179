"""Symplectic positional embeddings and the StretchTime forecaster."""

from ._stretchtime import (
    HamiltonianBand,
    Model,
    config_keys,
    expm_oracle,
    flow_matrix,
    generate,
    generator,
    oscillating_warp_grid,
    resolve_config,
    rope_feasibility_check,
    rope_flow,
    rotary_bands,
    train,
    verify,
)

__all__ = [
    "HamiltonianBand",
    "Model",
    "config_keys",
    "expm_oracle",
    "flow_matrix",
    "generate",
    "generator",
    "oscillating_warp_grid",
    "resolve_config",
    "rope_feasibility_check",
    "rope_flow",
    "rotary_bands",
    "train",
    "verify",
]
