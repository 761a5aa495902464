"""Python bindings for the seafloor anomaly detector."""

from ._core import (
    dbscan,
    detect,
    evaluate,
    kde_fit,
    kde_score,
    kl_closed_form,
    overlap_coefficient,
    percentile,
    pixel_bounds,
    rethreshold,
    synth,
    train,
    tsne,
)

__all__ = [
    "dbscan",
    "detect",
    "evaluate",
    "kde_fit",
    "kde_score",
    "kl_closed_form",
    "overlap_coefficient",
    "percentile",
    "pixel_bounds",
    "rethreshold",
    "synth",
    "train",
    "tsne",
]
