"""Stability-certified GRU system identification (C++ core bindings)."""

try:
    from ._grustab import (
        Model,
        delta_iss_residual,
        generate_dataset,
        tank_equilibrium,
        train,
    )
except ImportError:  # building in-tree: the extension sits next to the package
    from _grustab import (  # noqa: F401
        Model,
        delta_iss_residual,
        generate_dataset,
        tank_equilibrium,
        train,
    )

__all__ = [
    "Model",
    "delta_iss_residual",
    "generate_dataset",
    "tank_equilibrium",
    "train",
]
