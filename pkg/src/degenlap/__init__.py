"""degenlap: numerics for degenerate p-Laplacian equations.

Subpackages:
    geometry    -- Euclidean / Heisenberg metric backends, balls, sampling
    weights     -- Muckenhoupt and reverse-Holder constant estimation
    grids       -- masked uniform grids and grid functions
    energy      -- p-energy, weak form, Dirichlet solver
    diagnostics -- oscillation decay, Harnack quotients, continuity sets
    distortion  -- mappings of finite distortion
    catalog     -- closed-form fixtures with machine-checkable claims
    cli         -- batch front-end (`degenlap` command)
"""
from __future__ import annotations

__version__ = "0.1.0"
