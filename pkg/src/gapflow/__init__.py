"""gapflow: thin-gap Stokes/Navier-Stokes flow between two nearly touching
rigid particles.

Closed-form gap velocity/pressure fields for every rigid mode, predicted
blow-up rates, a penalized staggered-grid solver with the rigid-body
balance system, and a sweep harness that verifies the rates numerically.
"""

from .geometry import (Ball, Box, GapGeometry, GapProfile, GeometryError,
                       OutOfNeckError, ProfileKind, Region,
                       UnsupportedGeometryError)
from .keller_fields import (AuxiliaryField, ResidualSample, RigidMode,
                            aux_field, divergence, keller, rigid_modes,
                            stokes_residual, vertical_cancellation)
from .rate_oracle import (Quantity, RatePrediction, predicted_lower,
                          predicted_scaling, predicted_upper, prediction)

__version__ = "0.1.0"
