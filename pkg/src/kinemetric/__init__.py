"""Joint-angle estimation toolkit.

Rotation conversions and the angle metric (:mod:`rotmath`), camera geometry
and volumetric fusion (:mod:`geomcam`), a kinematic skeleton with marker
scaling (:mod:`kinmodel`), marker inverse kinematics (:mod:`iksolve`), a
numpy volumetric regressor with its training harness (:mod:`learn`) and
synthetic data plus file formats (:mod:`synth`, :mod:`fileio`).
"""
from .errors import (
    DegenerateRepresentation,
    DegenerateView,
    DegenerateVirtualDistance,
    InvalidArgument,
    KinemetricError,
    MissingData,
    ParseError,
    ShapeMismatch,
    UnsolvableFrame,
)
from .rotmath import AngleSet, mpjae, mpjae_per_joint

__version__ = "0.1.0"
