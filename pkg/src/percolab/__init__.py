"""percolab: competition growth and Bernoulli percolation on finite lattice boxes."""

from percolab.lattice import (
    BoxDomain,
    DomainError,
    EdgeId,
    EdgeWeightField,
    derive_seed,
    p_boundary,
)

__all__ = [
    "BoxDomain",
    "DomainError",
    "EdgeId",
    "EdgeWeightField",
    "derive_seed",
    "p_boundary",
]

__version__ = "0.1.0"
