from sinkscale.core import (
    ScalingInstance,
    SparseNonnegMatrix,
    TargetVectors,
    validate_instance,
)
from sinkscale.matching import BipartiteGraph, distinguish
from sinkscale.sinkhorn import StoppingRule, certify_potential, run

__all__ = [
    "BipartiteGraph",
    "ScalingInstance",
    "SparseNonnegMatrix",
    "StoppingRule",
    "TargetVectors",
    "certify_potential",
    "distinguish",
    "run",
    "validate_instance",
]

try:
    from ._version_generated import __version__
except ImportError:
    __version__ = "unreleased"
