"""pointreg: rigid point cloud registration toolkit.

Core pieces:

* se3 — SE(3)/se(3) rigid-motion math (exp/log maps, composition, errors).
* data — OFF/XYZ formats, surface sampling, perturbations, visibility.
* encoder — pooled per-point MLP features and the analytic moment encoder,
  plus the PNLKW1 binary weight format shared with external trainers.
* solver — feature-space inverse-compositional registration.
* icp — classical point-to-point ICP baseline.
* metrics — the pose loss, success criteria, and the results CSV schema.
* bench — experiment engines (benchmark, timing, cost sweep, fixtures).
* service — FastAPI app exposing all of the above over HTTP.
* cli — thin command-line client of the service.
"""

__version__ = "0.1.0"

from .errors import (
    AngleNearPi,
    DegenerateCloud,
    DegenerateConfiguration,
    DegenerateMesh,
    DimensionMismatch,
    EmptyVisibleSet,
    FormatError,
    NumericalFailure,
    ParseError,
    PointregError,
)

__all__ = [
    "__version__",
    "AngleNearPi",
    "DegenerateCloud",
    "DegenerateConfiguration",
    "DegenerateMesh",
    "DimensionMismatch",
    "EmptyVisibleSet",
    "FormatError",
    "NumericalFailure",
    "ParseError",
    "PointregError",
]
