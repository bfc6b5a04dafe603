"""
Dense map reconstruction from GMM parameters and ground-truth blurring.
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import Normalization, RenderConfig
from .core import (
    LOG_2PI,
    AllComponentsFiltered,
    FixationPoints,
    GaussianComponent,
    GmmParams,
    NonPositiveDefinite,
    SaliencyMap,
    ShapeMismatch,
    ZeroMap,
    mahalanobis_sq,
    pixel_centers,
)

logger = logging.getLogger(__name__)

BLUR_TRUNCATE = 4.0


def eval_component(p: Tuple[float, float], comp: GaussianComponent) -> float:
    """Density of one component at p, in 1/pixels²"""
    if comp.determinant <= 0 or comp.cov[0] <= 0:
        raise NonPositiveDefinite(f"covariance {comp.cov} is not positive definite")
    maha, log_det = mahalanobis_sq(np.array([p]), np.array([comp.mean]), np.array([comp.cov]))
    return float(np.exp(-LOG_2PI - 0.5 * log_det[0] - 0.5 * maha[0, 0]))


def select_components(weights: np.ndarray, threshold_gt: float) -> np.ndarray:
    """Mask of components with π_c > G_t / C"""
    weights = np.asarray(weights, dtype=np.float64)
    return weights > threshold_gt / weights.size


def canvas_centers(width: int, height: int) -> np.ndarray:
    u, v = pixel_centers(width, height)
    return np.stack([u.ravel(), v.ravel()], axis=1)


def component_density(centers: np.ndarray, mean: np.ndarray, cov: np.ndarray,
                      cutoff: Optional[float] = 6.0) -> np.ndarray:
    """Density of one component at each row of centers; zero beyond the cutoff"""
    maha, log_det = mahalanobis_sq(centers, mean.reshape(1, 2), cov.reshape(1, 3))
    maha = maha[:, 0]
    density = np.exp(-LOG_2PI - 0.5 * log_det[0] - 0.5 * maha)
    if cutoff is not None:
        density[maha > cutoff * cutoff] = 0.0
    return density


def render_map(gmm: GmmParams, cfg: RenderConfig) -> SaliencyMap:
    """Î(i,j) = Σ over selected components of π_c·N(pixel center; μ_c, Σ_c)"""
    selected = np.flatnonzero(select_components(gmm.weights, cfg.threshold_gt))
    if selected.size == 0:
        raise AllComponentsFiltered(
            f"no component weight exceeds G_t/C = {cfg.threshold_gt / gmm.n_components:g}"
        )
    if selected.size < gmm.n_components:
        logger.debug(f"Threshold G_t={cfg.threshold_gt} keeps {selected.size}/{gmm.n_components} components")

    centers = canvas_centers(cfg.width, cfg.height)
    weights, means, covs = gmm.weights, gmm.means, gmm.covs
    values = np.zeros(cfg.height * cfg.width)
    # fixed component order keeps the sum reproducible
    for c in selected:
        values += weights[c] * component_density(centers, means[c], covs[c], cfg.mahalanobis_cutoff)
    return normalize_map(SaliencyMap(values=values.reshape(cfg.height, cfg.width)), cfg.normalize)


def convolve_gmm(gmm: GmmParams, sigma: float) -> GmmParams:
    """Mixture convolved with an isotropic Gaussian: every Σ_c becomes Σ_c + σ²I"""
    if not sigma >= 0 or not math.isfinite(sigma):
        raise ValueError("sigma must be finite and nonnegative")
    covs = gmm.covs + np.array([sigma * sigma, sigma * sigma, 0.0])
    return GmmParams.from_arrays(gmm.weights, gmm.means, covs, gmm.canvas_width, gmm.canvas_height)


def blur_fixations(points: FixationPoints, sigma: float, cfg: RenderConfig) -> SaliencyMap:
    """Impulse map of fixations convolved with a truncated, renormalized Gaussian"""
    if len(points) == 0:
        raise ValueError("cannot blur an empty fixation set")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if (points.canvas_width, points.canvas_height) != (cfg.width, cfg.height):
        raise ShapeMismatch(
            f"points canvas {points.canvas_width}x{points.canvas_height} "
            f"differs from render canvas {cfg.width}x{cfg.height}"
        )

    impulses = np.zeros((cfg.height, cfg.width))
    rows, cols = points.pixel_indices()
    np.add.at(impulses, (rows, cols), 1.0)
    # scipy normalizes the truncated kernel to unit sum
    blurred = gaussian_filter(impulses, sigma=sigma, mode="constant", cval=0.0, truncate=BLUR_TRUNCATE)
    return normalize_map(SaliencyMap(values=np.maximum(blurred, 0.0)), cfg.normalize)


def normalize_map(saliency: SaliencyMap, mode: Normalization = Normalization.NONE) -> SaliencyMap:
    """Scale a map to unit sum or unit maximum"""
    mode = Normalization(mode)
    if mode == Normalization.NONE:
        return saliency
    values = saliency.values
    scale = math.fsum(values.ravel()) if mode == Normalization.SUM_TO_ONE else float(values.max())
    if scale <= 0:
        raise ZeroMap(f"cannot apply {mode.value} normalization to an all-zero map")
    return SaliencyMap(values=values / scale)
