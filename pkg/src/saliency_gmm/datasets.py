"""
Synthetic SALICON-like fixation data and observer subsampling.
"""

import logging
import math
from typing import List, Tuple

import numpy as np

from .config import RenderConfig, SynthConfig
from .core import FixationPoints, GmmParams, SaliencyMap
from .render import blur_fixations

logger = logging.getLogger(__name__)

MARGIN_FRACTION = 0.1
MAX_TRUE_CORRELATION = 0.3

SynthImage = Tuple[FixationPoints, SaliencyMap, GmmParams]


def _sample_truth(rng: np.random.Generator, cfg: SynthConfig) -> GmmParams:
    width, height = cfg.canvas
    low, high = cfg.modes_range
    n_modes = int(rng.integers(low, high + 1))

    # means stay inset from the border
    margin_u, margin_v = MARGIN_FRACTION * width, MARGIN_FRACTION * height
    means = np.stack([
        rng.uniform(margin_u, width - margin_u, n_modes),
        rng.uniform(margin_v, height - margin_v, n_modes),
    ], axis=1)

    var_low, var_high = cfg.cluster_var_range
    var_u = rng.uniform(var_low, var_high, n_modes)
    var_v = rng.uniform(var_low, var_high, n_modes)
    rho = rng.uniform(-MAX_TRUE_CORRELATION, MAX_TRUE_CORRELATION, n_modes)
    covs = np.stack([var_u, var_v, rho * np.sqrt(var_u * var_v)], axis=1)

    weights = rng.dirichlet(np.ones(n_modes))
    return GmmParams.from_arrays(weights, means, covs, width, height)


def sample_points(truth: GmmParams, n_points: int, rng: np.random.Generator) -> FixationPoints:
    """Draw fixations from a mixture and clip them onto its canvas"""
    labels = rng.choice(truth.n_components, size=n_points, p=truth.weights)
    means, covs = truth.means, truth.covs
    z = rng.standard_normal((n_points, 2))

    l11 = np.sqrt(covs[labels, 0])
    l21 = covs[labels, 2] / l11
    l22 = np.sqrt(covs[labels, 1] - l21 * l21)
    u = means[labels, 0] + l11 * z[:, 0]
    v = means[labels, 1] + l21 * z[:, 0] + l22 * z[:, 1]

    width, height = truth.canvas_width, truth.canvas_height
    u = np.clip(u, 0.0, np.nextafter(float(width), 0.0))
    v = np.clip(v, 0.0, np.nextafter(float(height), 0.0))
    return FixationPoints(points=np.stack([u, v], axis=1), canvas_width=width, canvas_height=height)


def synth_dataset(cfg: SynthConfig) -> List[SynthImage]:
    """(fixations, blurred ground truth, true mixture) per image, reproducible under cfg.seed"""
    width, height = cfg.canvas
    render_cfg = RenderConfig(width=width, height=height)
    images: List[SynthImage] = []
    for child in np.random.SeedSequence(cfg.seed).spawn(cfg.n_images):
        rng = np.random.default_rng(child)
        truth = _sample_truth(rng, cfg)
        points = sample_points(truth, cfg.points_per_image, rng)
        gt = blur_fixations(points, cfg.blur_sigma, render_cfg)
        images.append((points, gt, truth))
    logger.info(f"Generated {cfg.n_images} synthetic images on {width}x{height}")
    return images


def subsample_points(points: FixationPoints, ratio: float, seed: int = 0) -> FixationPoints:
    """
    Keep ⌈ratio·N⌉ fixations chosen uniformly without replacement.

    Point lists carry no observer ids, so points stand in for participants.
    """
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    n_total = len(points)
    keep = min(n_total, max(1, math.ceil(ratio * n_total - 1e-9)))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n_total, size=keep, replace=False))
    logger.debug(f"Subsampled {keep}/{n_total} fixations (ratio {ratio:g})")
    return FixationPoints(points=points.points[chosen], canvas_width=points.canvas_width,
                          canvas_height=points.canvas_height)
