"""Planning and simulation toolkit for a point-mass robot that must find,
collect and deposit objects with unknown positions in minimum time."""

__version__ = "0.1.0"

from . import (  # noqa: F401
    cost_oracle,
    curve_traversal,
    fourier_curve,
    hybrid_core,
    mission,
    param_optimizer,
    time_driven,
    world,
)
