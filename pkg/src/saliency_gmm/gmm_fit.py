"""
Fit Gaussian mixtures to fixation points by expectation-maximization.

Each restart is seeded with k-means++ followed by one Lloyd pass, then runs
EM with the covariance structure enforced and the variance floor applied in
every M-step.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from .config import CovarianceMode, EmConfig
from .core import (
    FixationPoints,
    GmmParams,
    TooFewPoints,
    log_gaussian_density,
)

logger = logging.getLogger(__name__)

EMPTY_COMPONENT_MASS = 1e-8
DEGENERATE_WEIGHT = 1e-6
MAX_CORRELATION = 1.0 - 1e-6


@dataclass
class FitResult:
    """Outcome of a single EM restart"""
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    log_likelihood: float
    history: List[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: D² sampling of k centers from the rows of X"""
    n_samples = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[rng.integers(0, n_samples)]
    closest = np.sum((X - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a center
            centers[i] = X[rng.integers(0, n_samples)]
        else:
            centers[i] = X[rng.choice(n_samples, p=closest / total)]
        closest = np.minimum(closest, np.sum((X - centers[i]) ** 2, axis=1))
    return centers


def lloyd_pass(X: np.ndarray, centers: np.ndarray):
    """One assignment/update step; empty clusters keep their center"""
    d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    updated = centers.copy()
    for j in range(centers.shape[0]):
        members = labels == j
        if np.any(members):
            updated[j] = X[members].mean(axis=0)
    return updated, labels


def constrain_covariances(scatter: np.ndarray, mode: CovarianceMode, min_var: float) -> np.ndarray:
    """Project weighted scatter (C x 3) onto the covariance mode with the variance floor"""
    covs = np.array(scatter, dtype=np.float64, copy=True)
    if mode == CovarianceMode.SPHERICAL:
        shared = 0.5 * (covs[:, 0] + covs[:, 1])
        covs[:, 0] = shared
        covs[:, 1] = shared
        covs[:, 2] = 0.0
    elif mode == CovarianceMode.DIAGONAL:
        covs[:, 2] = 0.0
    covs[:, 0] = np.maximum(covs[:, 0], min_var)
    covs[:, 1] = np.maximum(covs[:, 1], min_var)
    if mode == CovarianceMode.FULL:
        limit = MAX_CORRELATION * np.sqrt(covs[:, 0] * covs[:, 1])
        covs[:, 2] = np.clip(covs[:, 2], -limit, limit)
    return covs


def weighted_scatter(X: np.ndarray, resp: np.ndarray, means: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """Responsibility-weighted (var_u, var_v, cov_uv) per component"""
    du = X[:, None, 0] - means[None, :, 0]
    dv = X[:, None, 1] - means[None, :, 1]
    safe = np.maximum(mass, np.finfo(np.float64).tiny)
    return np.stack([
        np.sum(resp * du * du, axis=0) / safe,
        np.sum(resp * dv * dv, axis=0) / safe,
        np.sum(resp * du * dv, axis=0) / safe,
    ], axis=1)


def _log_joint(X: np.ndarray, weights: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return log_gaussian_density(X, means, covs) + log_w[None, :]


def responsibilities(points: FixationPoints, gmm: GmmParams) -> np.ndarray:
    """Posterior probability of each component for each point, N x C"""
    X = points.points
    log_joint = _log_joint(X, gmm.weights, gmm.means, gmm.covs)
    return np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))


def log_likelihood(points: FixationPoints, gmm: GmmParams) -> float:
    """Σ_k log Σ_c π_c N(p_k; μ_c, Σ_c) in nats"""
    log_joint = _log_joint(points.points, gmm.weights, gmm.means, gmm.covs)
    return float(np.sum(logsumexp(log_joint, axis=1)))


class GmmFitter:
    """EM fitting of C-component mixtures with restarts"""

    def __init__(self, n_components: int, mode: CovarianceMode = CovarianceMode.DIAGONAL,
                 config: Optional[EmConfig] = None):
        if n_components < 1:
            raise TooFewPoints("component count must be at least 1")
        self.n_components = n_components
        self.mode = CovarianceMode(mode)
        self.config = config or EmConfig()
        self.best_: Optional[FitResult] = None
        self.restarts_: List[FitResult] = []

    def fit(self, points: FixationPoints) -> GmmParams:
        X = points.points
        n_points = X.shape[0]
        C = self.n_components
        if n_points < C:
            raise TooFewPoints(f"{n_points} points cannot support {C} components")

        if C > 1 and np.all(X == X[0]):
            logger.warning(f"All {n_points} points coincide; returning one effective component out of {C}")
            self.best_ = self._degenerate_solution(X)
            self.restarts_ = [self.best_]
            return self._to_gmm(self.best_, points)

        seeds = np.random.SeedSequence(self.config.seed).spawn(self.config.n_init)
        self.restarts_ = [self._run_restart(X, np.random.default_rng(seed)) for seed in seeds]
        # first restart wins ties
        best_index = int(np.argmax([result.log_likelihood for result in self.restarts_]))
        self.best_ = self.restarts_[best_index]
        logger.info(
            f"Fitted {C}-component {self.mode.value} GMM to {n_points} points: "
            f"log-likelihood {self.best_.log_likelihood:.4f} after {self.best_.n_iter} iterations "
            f"(restart {best_index + 1}/{len(self.restarts_)})"
        )
        return self._to_gmm(self.best_, points)

    def _degenerate_solution(self, X: np.ndarray) -> FitResult:
        C = self.n_components
        weights = np.full(C, DEGENERATE_WEIGHT)
        weights[0] = 1.0 - DEGENERATE_WEIGHT * (C - 1)
        means = np.repeat(X[:1], C, axis=0)
        covs = np.tile([self.config.min_var, self.config.min_var, 0.0], (C, 1))
        ll = float(np.sum(logsumexp(_log_joint(X, weights, means, covs), axis=1)))
        return FitResult(weights, means, covs, ll, [ll], 0, True)

    def _initialize(self, X: np.ndarray, rng: np.random.Generator):
        C = self.n_components
        centers, labels = lloyd_pass(X, kmeans_plusplus(X, C, rng))
        resp = np.zeros((X.shape[0], C))
        resp[np.arange(X.shape[0]), labels] = 1.0
        mass = resp.sum(axis=0)

        # clusters with fewer than two members borrow the global spread
        global_var = np.maximum(X.var(axis=0), self.config.min_var)
        scatter = weighted_scatter(X, resp, centers, mass)
        sparse = mass < 2
        scatter[sparse] = [global_var[0], global_var[1], 0.0]

        weights = np.maximum(mass, 1.0) / np.maximum(mass, 1.0).sum()
        covs = constrain_covariances(scatter, self.mode, self.config.min_var)
        return weights, centers, covs

    def _run_restart(self, X: np.ndarray, rng: np.random.Generator) -> FitResult:
        cfg = self.config
        weights, means, covs = self._initialize(X, rng)
        history: List[float] = []
        previous = -np.inf
        converged = False
        n_iter = 0

        for n_iter in range(1, cfg.max_iter + 1):
            # E-step
            log_joint = _log_joint(X, weights, means, covs)
            log_norm = logsumexp(log_joint, axis=1, keepdims=True)
            ll = float(np.sum(log_norm))
            history.append(ll)
            if np.isfinite(previous) and abs(ll - previous) <= cfg.tol * abs(previous):
                converged = True
                break
            previous = ll
            resp = np.exp(log_joint - log_norm)

            # M-step
            mass = resp.sum(axis=0)
            means = (resp.T @ X) / np.maximum(mass, np.finfo(np.float64).tiny)[:, None]
            covs = constrain_covariances(weighted_scatter(X, resp, means, mass), self.mode, cfg.min_var)
            weights = mass / mass.sum()

            empty = np.flatnonzero(mass < EMPTY_COMPONENT_MASS)
            if empty.size:
                weights, means, covs = self._rescue(X, weights, means, covs, empty)

        final = _log_joint(X, weights, means, covs)
        ll = float(np.sum(logsumexp(final, axis=1)))
        if not history or history[-1] != ll:
            history.append(ll)
        logger.debug(f"EM restart finished: {n_iter} iterations, converged={converged}, ll={ll:.6f}")
        return FitResult(weights, means, covs, ll, history, n_iter, converged)

    def _rescue(self, X, weights, means, covs, empty):
        """Re-seed starved components at the worst-explained points"""
        logger.warning(f"Re-seeding {empty.size} empty component(s)")
        live = np.setdiff1d(np.arange(weights.size), empty)
        density = logsumexp(_log_joint(X, weights[live], means[live], covs[live]), axis=1)
        order = np.argsort(density, kind="stable")
        global_var = np.maximum(X.var(axis=0), self.config.min_var)
        for slot, component in enumerate(empty):
            means[component] = X[order[slot % X.shape[0]]]
            covs[component] = [global_var[0], global_var[1], 0.0]
        covs = constrain_covariances(covs, self.mode, self.config.min_var)
        weights = weights.copy()
        weights[empty] = EMPTY_COMPONENT_MASS
        return weights / weights.sum(), means, covs

    def _to_gmm(self, result: FitResult, points: FixationPoints) -> GmmParams:
        weights = result.weights / result.weights.sum()
        return GmmParams.from_arrays(weights, result.means, result.covs,
                                     points.canvas_width, points.canvas_height)


def fit_gmm(points: FixationPoints, C: int, mode: CovarianceMode = CovarianceMode.DIAGONAL,
            config: Optional[EmConfig] = None) -> GmmParams:
    """Fit a C-component GMM; the restart with the highest log-likelihood wins"""
    return GmmFitter(C, mode, config).fit(points)
