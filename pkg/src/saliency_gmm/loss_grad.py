"""
Correlation reconstruction loss L = 1 − CC(Î, I_gt) and its analytic gradients.

The component gate π_c > G_t/C is held fixed inside one evaluation: gated-out
components contribute nothing to Î and receive zero gradient w.r.t. Θ.
"""

import logging
import math
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .config import TransformConfig
from .core import (
    AllComponentsFiltered,
    AnchorGrid,
    ConstantMap,
    GmmParams,
    RawParamMap,
    SaliencyMap,
)
from .render import canvas_centers, component_density, select_components
from .transform import transform_params, transform_vjp

logger = logging.getLogger(__name__)

GRADIENT_FIELDS = ("pi", "mu_u", "mu_v", "var_u", "var_v", "cov_uv")


class LossReport(BaseModel):
    """CC reconstruction loss"""
    model_config = ConfigDict(frozen=True)

    loss: float = Field(..., description="1 − cc")
    cc: float = Field(..., description="Pearson correlation of Î and I_gt")
    selected_components: int = Field(..., ge=0)


class GradReport(BaseModel):
    """Loss value with gradients w.r.t. Θ (C x 6) and optionally Θ̂ (H x W x 6)"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    loss: LossReport
    d_theta: np.ndarray
    d_raw: Optional[np.ndarray] = None


class _Reconstruction:
    """Selected-component densities and the mixture they form"""

    def __init__(self, gmm: GmmParams, width: int, height: int, threshold_gt: float,
                 cutoff: Optional[float]):
        self.selected = np.flatnonzero(select_components(gmm.weights, threshold_gt))
        if self.selected.size == 0:
            raise AllComponentsFiltered(
                f"no component weight exceeds G_t/C = {threshold_gt / gmm.n_components:g}"
            )
        self.centers = canvas_centers(width, height)
        self.weights = gmm.weights
        self.means = gmm.means
        self.covs = gmm.covs
        self.mixture = np.zeros(self.centers.shape[0])
        self.densities = {}
        for c in self.selected:
            density = component_density(self.centers, self.means[c], self.covs[c], cutoff)
            self.densities[c] = density
            self.mixture += self.weights[c] * density


def _centered(values: np.ndarray):
    centered = values - values.mean()
    return centered, np.sum(centered * centered)


def _correlation(pred: np.ndarray, gt: np.ndarray):
    pc, sxx = _centered(pred)
    gc, syy = _centered(gt)
    if sxx <= 0:
        raise ConstantMap("reconstructed map has zero variance")
    if syy <= 0:
        raise ConstantMap("ground-truth map has zero variance")
    sxy = np.sum(pc * gc)
    cc = float(np.clip(sxy / math.sqrt(sxx * syy), -1.0, 1.0))
    return cc, pc, gc, sxx, syy


def _report(cc: float, selected: int) -> LossReport:
    return LossReport(loss=1.0 - cc, cc=cc, selected_components=selected)


def cc_loss(gmm: GmmParams, gt: SaliencyMap, G_t: float = 0.2,
            cutoff: Optional[float] = 6.0) -> LossReport:
    """1 − CC between the thresholded reconstruction and the ground truth"""
    recon = _Reconstruction(gmm, gt.width, gt.height, G_t, cutoff)
    cc, *_ = _correlation(recon.mixture, gt.values.ravel())
    return _report(cc, recon.selected.size)


def cc_loss_grad(gmm: GmmParams, gt: SaliencyMap, G_t: float = 0.2,
                 cutoff: Optional[float] = 6.0) -> GradReport:
    """Loss and ∂L/∂(π, μ_u, μ_v, var_u, var_v, cov_uv) per component"""
    recon = _Reconstruction(gmm, gt.width, gt.height, G_t, cutoff)
    cc, pc, gc, sxx, syy = _correlation(recon.mixture, gt.values.ravel())

    # ∂L/∂Î per pixel
    g_map = -(gc / math.sqrt(sxx * syy) - cc * pc / sxx)

    d_theta = np.zeros((gmm.n_components, len(GRADIENT_FIELDS)))
    for c in recon.selected:
        density = recon.densities[c]
        du = recon.centers[:, 0] - recon.means[c, 0]
        dv = recon.centers[:, 1] - recon.means[c, 1]
        var_u, var_v, cov_uv = recon.covs[c]
        det = var_u * var_v - cov_uv * cov_uv
        # a, b = Σ⁻¹(p − μ)
        a = (var_v * du - cov_uv * dv) / det
        b = (var_u * dv - cov_uv * du) / det
        weighted = g_map * density
        pi_c = recon.weights[c]

        d_theta[c, 0] = np.sum(weighted)
        d_theta[c, 1] = pi_c * np.sum(weighted * a)
        d_theta[c, 2] = pi_c * np.sum(weighted * b)
        # ∂N/∂Σ = ½·N·(Σ⁻¹ddᵀΣ⁻¹ − Σ⁻¹); cov_uv occupies both off-diagonal entries
        d_theta[c, 3] = 0.5 * pi_c * np.sum(weighted * (a * a - var_v / det))
        d_theta[c, 4] = 0.5 * pi_c * np.sum(weighted * (b * b - var_u / det))
        d_theta[c, 5] = pi_c * np.sum(weighted * (a * b + cov_uv / det))

    return GradReport(loss=_report(cc, recon.selected.size), d_theta=d_theta)


def raw_grad(raw: RawParamMap, grid: AnchorGrid, tcfg: TransformConfig, gt: SaliencyMap,
             G_t: float = 0.2, cutoff: Optional[float] = 6.0) -> GradReport:
    """Loss gradient through the full Θ̂ → Θ → Î → L pipeline"""
    gmm = transform_params(raw, grid, tcfg)
    report = cc_loss_grad(gmm, gt, G_t, cutoff)
    d_raw = transform_vjp(raw, grid, tcfg, report.d_theta)
    return GradReport(loss=report.loss, d_theta=report.d_theta, d_raw=d_raw)
