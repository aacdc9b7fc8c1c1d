"""Eye-to-hand calibration toolkit: temporal PnP initialization followed by
render-and-compare refinement, plus pose-error metrics and annotation export.
"""

__version__ = "0.1.0"

from .se3 import (  # noqa: F401
    Extrinsic,
    Intrinsics,
    PoseTangent,
    project,
    retract,
    rotation_geodesic_deg,
    transform_point,
    translation_dist_m,
)
