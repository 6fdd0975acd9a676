"""Metric primitives: PCA, chamfer distance, correlations, rate curves.

Everything in this module is a pure function of its arguments and safe to
call from parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

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


class UndefinedCorrelationError(ValueError):
    """A correlation was requested for a sequence with zero variance."""


# ---------------------------------------------------------------------------
# Principal component analysis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PcaResult:
    """Mean-centered covariance eigendecomposition of a point cloud.

    Attributes:
        mean: (d,) centroid of the input points.
        components: (d, d) orthonormal rows, sorted by descending variance.
        explained_variance_ratios: (d,) ratios summing to 1.
        projections: (n, d) input points expressed in component coordinates.
        degenerate: True when the cloud carries no variance at all; the
            ratio vector is then fixed to (1, 0, ..., 0) by convention.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratios: np.ndarray
    projections: np.ndarray
    degenerate: bool

    def reconstruct(self) -> np.ndarray:
        """Map projections back to the original coordinates (lossless)."""
        return self.mean + self.projections @ self.components


def pca(points: np.ndarray) -> PcaResult:
    """Principal component analysis of an (n, d) point cloud.

    Sign convention: within each component the loading of largest magnitude
    is made positive, so results are reproducible across eigensolvers.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"expected (n, d) points, got shape {pts.shape}")
    n, d = pts.shape
    if n < 2:
        raise ValueError(f"PCA needs at least 2 points, got {n}")
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = (centered.T @ centered) / n
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending order
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    components = eigvecs[:, order].T  # rows are components
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    total = float(eigvals.sum())
    degenerate = total <= 1e-300 * max(1, d)
    if degenerate:
        ratios = np.zeros(d)
        ratios[0] = 1.0
    else:
        ratios = eigvals / total
    projections = centered @ components.T
    return PcaResult(
        mean=mean,
        components=components,
        explained_variance_ratios=ratios,
        projections=projections,
        degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# Symmetric chamfer distance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChamferResult:
    """Symmetric chamfer distance with its two directional terms.

    ``distance = forward + backward`` where each term is the mean, over one
    image's foreground pixels, of the exact Euclidean distance to the other
    image's nearest foreground pixel.  Per-direction *mean* (rather than sum)
    keeps the value independent of image resolution and silhouette area.

    ``empty_input`` marks the sentinel case: when either image has no
    foreground there is no distance to measure, so the full image diagonal —
    an upper bound on any realizable pixel distance — is returned instead.
    """

    distance: float
    forward: float
    backward: float
    empty_input: bool


def chamfer_components(image_a: np.ndarray, image_b: np.ndarray) -> ChamferResult:
    """Symmetric chamfer distance between two equally-shaped binary images."""
    a = np.asarray(image_a)
    b = np.asarray(image_b)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"images must share one 2-D shape, got {a.shape} vs {b.shape}")
    fg_a = a > 0
    fg_b = b > 0
    if not fg_a.any() or not fg_b.any():
        diagonal = float(np.hypot(*a.shape))
        return ChamferResult(distance=diagonal, forward=diagonal / 2,
                             backward=diagonal / 2, empty_input=True)
    # distance_transform_edt measures distance to the nearest zero, so feed
    # it the inverted mask to get distance to the nearest foreground pixel.
    dist_to_b = ndimage.distance_transform_edt(~fg_b)
    dist_to_a = ndimage.distance_transform_edt(~fg_a)
    forward = float(dist_to_b[fg_a].mean())
    backward = float(dist_to_a[fg_b].mean())
    return ChamferResult(distance=forward + backward, forward=forward,
                         backward=backward, empty_input=False)


def chamfer(image_a: np.ndarray, image_b: np.ndarray) -> float:
    """Scalar symmetric chamfer distance in pixels (see chamfer_components)."""
    return chamfer_components(image_a, image_b).distance


# ---------------------------------------------------------------------------
# Correlations
# ---------------------------------------------------------------------------


def _validate_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xa = np.asarray(x, dtype=np.float64).ravel()
    ya = np.asarray(y, dtype=np.float64).ravel()
    if xa.shape != ya.shape:
        raise ValueError(f"length mismatch: {xa.shape[0]} vs {ya.shape[0]}")
    if xa.shape[0] < 3:
        raise ValueError(f"need at least 3 samples, got {xa.shape[0]}")
    return xa, ya


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson product-moment correlation of two equal-length sequences."""
    xa, ya = _validate_pair(x, y)
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    ssx = float(xc @ xc)
    ssy = float(yc @ yc)
    if ssx == 0.0 or ssy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for zero-variance input")
    return float((xc @ yc) / np.sqrt(ssx * ssy))


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    xa, ya = _validate_pair(x, y)
    return pearson(rankdata(xa), rankdata(ya))


# ---------------------------------------------------------------------------
# Threshold-rate curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateCurve:
    """Fraction of samples strictly below each threshold.

    ``thresholds`` is sorted ascending and ``rates`` is therefore
    non-decreasing; both arrays have equal length.
    """

    thresholds: np.ndarray
    rates: np.ndarray


def rate_curve(errors: np.ndarray, thresholds: np.ndarray) -> RateCurve:
    """Rate (in [0, 1]) of ``errors`` falling below each threshold."""
    err = np.asarray(errors, dtype=np.float64).ravel()
    thr = np.sort(np.asarray(thresholds, dtype=np.float64).ravel())
    if err.size == 0:
        raise ValueError("need at least one error sample")
    if thr.size == 0:
        raise ValueError("need at least one threshold")
    rates = (err[None, :] < thr[:, None]).mean(axis=1)
    return RateCurve(thresholds=thr, rates=rates)
