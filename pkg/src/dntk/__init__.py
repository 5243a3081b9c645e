"""Per-class tangent-kernel gradient features and their compression.

The package extracts per-logit parameter gradients from a small network,
sketches them to a tractable width, and replaces the sample set with a
much smaller synthetic gradient set chosen by local-global spectral
analysis. Kernel ridge regression on the compressed set stands in for the
full model; metrics and theory modules quantify how much is lost.
"""

from . import (
    baselines,
    cluster,
    distill,
    errors,
    io,
    kernel,
    krr,
    metrics,
    numerics,
    pipeline,
    sketch,
    tangent,
    theory,
)

__all__ = [
    "baselines",
    "cluster",
    "distill",
    "errors",
    "io",
    "kernel",
    "krr",
    "metrics",
    "numerics",
    "pipeline",
    "sketch",
    "tangent",
    "theory",
]

__version__ = "0.1.0"
