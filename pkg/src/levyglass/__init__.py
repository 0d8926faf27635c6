"""Glauber dynamics and metastable wells of heavy-tailed (Levy) spin glasses."""

from __future__ import annotations

import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

from .couplings import (  # noqa: E402
    CouplingLaw, CouplingMatrix, RegimeParams, relevant_edges, sample_matrix,
    structure_diagnostics,
)
from .errors import (  # noqa: E402
    ConfigError, InputError, LevyGlassError, ResourceCapError, StructuralError,
    UnsupportedVariantError,
)

__version__ = "0.1.0"

__all__ = [
    "CouplingLaw", "CouplingMatrix", "RegimeParams", "relevant_edges", "sample_matrix",
    "structure_diagnostics", "ConfigError", "InputError", "LevyGlassError",
    "ResourceCapError", "StructuralError", "UnsupportedVariantError",
]
