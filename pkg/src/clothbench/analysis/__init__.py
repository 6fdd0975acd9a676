"""Embedding and image metrics used by the experiment reports.

Pure numerical helpers: principal component analysis of bias vectors,
symmetric chamfer distance between binary silhouettes, Pearson/Spearman
correlations, and threshold-rate curves for controller comparisons.
"""

from .metrics import (
    ChamferResult,
    PcaResult,
    RateCurve,
    UndefinedCorrelationError,
    chamfer,
    chamfer_components,
    pca,
    pearson,
    rate_curve,
    spearman,
)

__all__ = [
    "ChamferResult",
    "PcaResult",
    "RateCurve",
    "UndefinedCorrelationError",
    "chamfer",
    "chamfer_components",
    "pca",
    "pearson",
    "rate_curve",
    "spearman",
]
