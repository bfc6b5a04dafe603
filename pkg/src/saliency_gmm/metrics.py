"""
Saliency evaluation suite.

Distribution-based metrics compare two dense maps (cc, sim, kl_div, emd, mse);
location-based metrics score a dense prediction against fixation points
(nss, auc, info_gain).
"""

import logging
import math
from typing import Callable, Dict, List, Optional

import numpy as np
import ot
from scipy.spatial.distance import cdist
from skimage.transform import downscale_local_mean
from sklearn.metrics import roc_auc_score

from .config import AucVariant, MetricConfig
from .core import (
    ConstantMap,
    FixationPoints,
    MissingNegatives,
    SaliencyMap,
    ShapeMismatch,
    ZeroMap,
    pixel_centers,
)

logger = logging.getLogger(__name__)


def _same_shape(pred: SaliencyMap, gt: SaliencyMap) -> None:
    if pred.values.shape != gt.values.shape:
        raise ShapeMismatch(f"prediction is {pred.width}x{pred.height} but reference is {gt.width}x{gt.height}")


def _on_canvas(pred: SaliencyMap, points: FixationPoints) -> None:
    if (points.canvas_width, points.canvas_height) != (pred.width, pred.height):
        raise ShapeMismatch(
            f"fixations live on {points.canvas_width}x{points.canvas_height}, "
            f"prediction is {pred.width}x{pred.height}"
        )
    if len(points) == 0:
        raise ValueError("at least one fixation is required")


def _sum_normalized(values: np.ndarray, name: str) -> np.ndarray:
    total = math.fsum(values.ravel())
    if total <= 0:
        raise ZeroMap(f"{name} map sums to zero")
    return values / total


def _z_scores(values: np.ndarray) -> np.ndarray:
    centered = values - values.mean()
    std = np.sqrt(np.mean(centered * centered))
    if std <= 0:
        raise ConstantMap("prediction map is constant")
    return centered / std


def cc(pred: SaliencyMap, gt: SaliencyMap) -> float:
    """Pearson correlation over pixels"""
    _same_shape(pred, gt)
    p = pred.values.ravel() - pred.values.mean()
    g = gt.values.ravel() - gt.values.mean()
    sxx, syy = np.sum(p * p), np.sum(g * g)
    if sxx <= 0 or syy <= 0:
        raise ConstantMap("correlation is undefined for a constant map")
    return float(np.clip(np.sum(p * g) / math.sqrt(sxx * syy), -1.0, 1.0))


def sim(pred: SaliencyMap, gt: SaliencyMap) -> float:
    """Histogram intersection of the sum-normalized maps"""
    _same_shape(pred, gt)
    p = _sum_normalized(pred.values, "prediction")
    g = _sum_normalized(gt.values, "ground-truth")
    return float(np.sum(np.minimum(p, g)))


def kl_div(pred: SaliencyMap, gt: SaliencyMap, cfg: MetricConfig = MetricConfig()) -> float:
    """KL(gt ‖ pred) with eps regularization, both maps sum-normalized"""
    _same_shape(pred, gt)
    eps = cfg.kl_eps
    p = _sum_normalized(pred.values, "prediction")
    g = _sum_normalized(gt.values, "ground-truth")
    return float(np.sum(g * np.log(eps + g / (eps + p))))


def mse(pred: SaliencyMap, gt: SaliencyMap) -> float:
    """Mean squared error between max-normalized maps"""
    _same_shape(pred, gt)
    p_max, g_max = pred.values.max(), gt.values.max()
    if p_max <= 0 or g_max <= 0:
        raise ZeroMap("cannot max-normalize an all-zero map")
    return float(np.mean((pred.values / p_max - gt.values / g_max) ** 2))


def _downsample(values: np.ndarray, max_side: int) -> np.ndarray:
    factor = math.ceil(max(values.shape) / max_side)
    if factor <= 1:
        return values
    # partial blocks are zero padded
    return downscale_local_mean(values, (factor, factor))


def transport_cost(source: np.ndarray, target: np.ndarray) -> float:
    """Exact optimal-transport cost between two equal-mass 2D histograms, cell units"""
    rows, cols = np.indices(source.shape)
    cells = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.float64)
    a, b = source.ravel(), target.ravel()
    src, dst = np.flatnonzero(a > 0), np.flatnonzero(b > 0)
    cost = cdist(cells[src], cells[dst], metric="euclidean")
    plan = ot.emd(a[src], b[dst], cost, numItermax=1_000_000)
    return float(np.sum(plan * cost))


def emd(pred: SaliencyMap, gt: SaliencyMap, cfg: MetricConfig = MetricConfig()) -> float:
    """Earth mover's distance after block-mean downsampling to emd_max_side"""
    _same_shape(pred, gt)
    _sum_normalized(pred.values, "prediction")
    _sum_normalized(gt.values, "ground-truth")
    p = _sum_normalized(_downsample(pred.values, cfg.emd_max_side), "prediction")
    g = _sum_normalized(_downsample(gt.values, cfg.emd_max_side), "ground-truth")
    if np.array_equal(p, g):
        return 0.0
    return transport_cost(p, g)


def nss(pred: SaliencyMap, points: FixationPoints) -> float:
    """Mean z-scored saliency at the fixations"""
    _on_canvas(pred, points)
    z = _z_scores(pred.values)
    rows, cols = points.pixel_indices()
    return float(np.mean(z[rows, cols]))


def _fixation_mask(pred: SaliencyMap, points: FixationPoints) -> np.ndarray:
    mask = np.zeros(pred.values.shape, dtype=bool)
    rows, cols = points.pixel_indices()
    mask[rows, cols] = True
    return mask


def auc_judd(pred: SaliencyMap, points: FixationPoints) -> float:
    """ROC area with thresholds at the saliency of every fixated pixel"""
    _on_canvas(pred, points)
    mask = _fixation_mask(pred, points)
    positives = np.sort(pred.values[mask])
    others = np.sort(pred.values[~mask])
    if others.size == 0:
        raise MissingNegatives("every pixel is fixated; no negatives for AUC-Judd")

    thresholds = positives[::-1]
    # fraction of each population at or above every threshold
    tp = (positives.size - np.searchsorted(positives, thresholds, side="left")) / positives.size
    fp = (others.size - np.searchsorted(others, thresholds, side="left")) / others.size
    tp = np.concatenate([[0.0], tp, [1.0]])
    fp = np.concatenate([[0.0], fp, [1.0]])
    return float(np.sum(np.diff(fp) * (tp[1:] + tp[:-1]) / 2.0))


def _split_generators(cfg: MetricConfig) -> List[np.random.Generator]:
    return [np.random.default_rng(child) for child in np.random.SeedSequence(cfg.seed).spawn(cfg.auc_splits)]


def _split_auc(positives: np.ndarray, negatives: np.ndarray) -> float:
    labels = np.concatenate([np.ones(positives.size), np.zeros(negatives.size)])
    scores = np.concatenate([positives, negatives])
    return float(roc_auc_score(labels, scores))


def auc_borji(pred: SaliencyMap, points: FixationPoints, cfg: MetricConfig = MetricConfig()) -> float:
    """Fixated pixels against uniformly sampled pixels, averaged over seeded splits"""
    _on_canvas(pred, points)
    values = pred.values.ravel()
    positives = pred.values[_fixation_mask(pred, points)]
    scores = []
    for rng in _split_generators(cfg):
        picks = rng.integers(0, values.size, size=positives.size)
        scores.append(_split_auc(positives, values[picks]))
    return float(np.mean(scores))


def _rescaled_pixels(negatives: FixationPoints, width: int, height: int):
    scale_u = width / negatives.canvas_width
    scale_v = height / negatives.canvas_height
    cols = np.clip(np.floor(negatives.points[:, 0] * scale_u), 0, width - 1).astype(np.intp)
    rows = np.clip(np.floor(negatives.points[:, 1] * scale_v), 0, height - 1).astype(np.intp)
    return rows, cols


def auc_shuffled(pred: SaliencyMap, points: FixationPoints, negatives: Optional[FixationPoints],
                 cfg: MetricConfig = MetricConfig()) -> float:
    """Fixated pixels against fixations pooled from other images"""
    _on_canvas(pred, points)
    if negatives is None or len(negatives) == 0:
        raise MissingNegatives("shuffled AUC needs negative fixations from other images")
    positives = pred.values[_fixation_mask(pred, points)]
    rows, cols = _rescaled_pixels(negatives, pred.width, pred.height)
    pool = pred.values[rows, cols]
    replace = pool.size < positives.size
    scores = []
    for rng in _split_generators(cfg):
        picks = rng.choice(pool.size, size=positives.size, replace=replace)
        scores.append(_split_auc(positives, pool[picks]))
    return float(np.mean(scores))


def auc(pred: SaliencyMap, points: FixationPoints, variant: AucVariant = AucVariant.JUDD,
        negatives: Optional[FixationPoints] = None, cfg: MetricConfig = MetricConfig()) -> float:
    variant = AucVariant(variant)
    if variant == AucVariant.JUDD:
        return auc_judd(pred, points)
    if variant == AucVariant.BORJI:
        return auc_borji(pred, points, cfg)
    return auc_shuffled(pred, points, negatives, cfg)


def default_baseline(width: int, height: int) -> np.ndarray:
    """Centered isotropic Gaussian prior with σ = height/3, sum-normalized"""
    u, v = pixel_centers(width, height)
    sigma = height / 3.0
    prior = np.exp(-((u - width / 2.0) ** 2 + (v - height / 2.0) ** 2) / (2.0 * sigma * sigma))
    return prior / prior.sum()


def info_gain(pred: SaliencyMap, points: FixationPoints, cfg: MetricConfig = MetricConfig()) -> float:
    """Mean log2 gain over the baseline at the fixations, in bits"""
    _on_canvas(pred, points)
    baseline = cfg.baseline if cfg.baseline is not None else default_baseline(pred.width, pred.height)
    if baseline.shape != pred.values.shape:
        raise ShapeMismatch(f"baseline shape {baseline.shape} differs from prediction {pred.values.shape}")
    eps = cfg.kl_eps
    p = _sum_normalized(pred.values, "prediction")
    b = _sum_normalized(baseline, "baseline")
    rows, cols = points.pixel_indices()
    return float(np.mean(np.log2(eps + p[rows, cols]) - np.log2(eps + b[rows, cols])))


MAP_METRICS: Dict[str, Callable[..., float]] = {
    "cc": lambda pred, gt, cfg: cc(pred, gt),
    "sim": lambda pred, gt, cfg: sim(pred, gt),
    "kl": kl_div,
    "emd": emd,
    "mse": lambda pred, gt, cfg: mse(pred, gt),
}

POINT_METRICS: Dict[str, Callable[..., float]] = {
    "nss": lambda pred, points, negatives, cfg: nss(pred, points),
    "auc-judd": lambda pred, points, negatives, cfg: auc_judd(pred, points),
    "auc-borji": lambda pred, points, negatives, cfg: auc_borji(pred, points, cfg),
    "sauc": auc_shuffled,
    "ig": lambda pred, points, negatives, cfg: info_gain(pred, points, cfg),
}

METRIC_NAMES = tuple(MAP_METRICS) + tuple(POINT_METRICS)


def evaluate_metric(name: str, pred: SaliencyMap, gt: Optional[SaliencyMap] = None,
                    points: Optional[FixationPoints] = None, negatives: Optional[FixationPoints] = None,
                    cfg: MetricConfig = MetricConfig()) -> float:
    """Dispatch one metric by its command-line name"""
    if name in MAP_METRICS:
        if gt is None:
            raise ValueError(f"metric {name} needs a ground-truth map")
        return MAP_METRICS[name](pred, gt, cfg)
    if name in POINT_METRICS:
        if points is None:
            raise ValueError(f"metric {name} needs fixation points")
        return POINT_METRICS[name](pred, points, negatives, cfg)
    raise ValueError(f"Unknown metric: {name}. Choose from {', '.join(METRIC_NAMES)}")
