"""
Map unconstrained network-side parameters to valid GMM parameters.

Cell (i, j) of an H x W raw map becomes component c = i·W + j:

    π     = softmax over all cells of π̂
    μ_u   = (sigmoid(μ̂_u) + u_a)·w_a,  μ_v = (sigmoid(μ̂_v) + v_a)·h_a
    var   = var_floor + softplus_β(σ̂)
    cov   = ρ·sqrt(var_u·var_v),  ρ = corr_bound·tanh(σ̂_uv)   (full mode)
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .config import AnchorLayout, CovarianceMode, TransformConfig
from .core import (
    RAW_PARAMS_PER_CELL,
    AnchorGrid,
    GmmParams,
    RawParamMap,
    ShapeMismatch,
)
from .utils import NumericUtils

logger = logging.getLogger(__name__)

PI, MU_U, MU_V, S_U, S_V, S_UV = range(RAW_PARAMS_PER_CELL)


def make_anchor_grid(layout: AnchorLayout, H: int, W: int,
                     canvas_width: int, canvas_height: int) -> AnchorGrid:
    """Reference points in cell units and the pixel size of one cell"""
    if H < 1 or W < 1:
        raise ValueError("anchor grid needs at least one cell per axis")
    layout = AnchorLayout(layout)
    rows, cols = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    middle_u = np.full_like(cols, W / 2.0 - 0.5)
    middle_v = np.full_like(rows, H / 2.0 - 0.5)

    if layout == AnchorLayout.SQUARE:
        u_a, v_a = cols, rows
    elif layout == AnchorLayout.HORIZONTAL:
        u_a, v_a = cols, middle_v
    elif layout == AnchorLayout.VERTICAL:
        u_a, v_a = middle_u, rows
    else:
        u_a, v_a = middle_u, middle_v

    anchors = np.stack([u_a, v_a], axis=2)
    anchors.setflags(write=False)
    return AnchorGrid(
        layout=layout,
        anchors=anchors,
        cell_size=(canvas_width / W, canvas_height / H),
        canvas_width=canvas_width,
        canvas_height=canvas_height,
    )


def raw_output_size(H: int, W: int) -> int:
    """Number of raw network outputs H·W·K"""
    return H * W * RAW_PARAMS_PER_CELL


@dataclass
class TransformState:
    """Forward intermediates reused by the backward pass"""
    weights: np.ndarray
    sig_u: np.ndarray
    sig_v: np.ndarray
    var_u: np.ndarray
    var_v: np.ndarray
    cov_uv: np.ndarray
    tanh_uv: np.ndarray


def _check_shapes(raw: RawParamMap, grid: AnchorGrid) -> None:
    if (raw.H, raw.W) != (grid.H, grid.W):
        raise ShapeMismatch(f"raw map is {raw.H}x{raw.W} but anchor grid is {grid.H}x{grid.W}")


def _forward(raw: RawParamMap, grid: AnchorGrid, cfg: TransformConfig):
    _check_shapes(raw, grid)
    theta = raw.flat()
    anchors = grid.anchors.reshape(-1, 2)
    w_a, h_a = grid.cell_size

    weights = softmax(theta[:, PI])
    sig_u = NumericUtils.sigmoid(theta[:, MU_U])
    sig_v = NumericUtils.sigmoid(theta[:, MU_V])
    means = np.stack([(sig_u + anchors[:, 0]) * w_a, (sig_v + anchors[:, 1]) * h_a], axis=1)

    var_u = cfg.var_floor + NumericUtils.softplus(theta[:, S_U], cfg.beta)
    tanh_uv = np.zeros_like(var_u)
    if cfg.mode == CovarianceMode.SPHERICAL:
        var_v = var_u.copy()
        cov_uv = np.zeros_like(var_u)
    else:
        var_v = cfg.var_floor + NumericUtils.softplus(theta[:, S_V], cfg.beta)
        if cfg.mode == CovarianceMode.FULL:
            tanh_uv = np.tanh(theta[:, S_UV])
            cov_uv = cfg.corr_bound * tanh_uv * np.sqrt(var_u * var_v)
        else:
            cov_uv = np.zeros_like(var_u)

    covs = np.stack([var_u, var_v, cov_uv], axis=1)
    state = TransformState(weights, sig_u, sig_v, var_u, var_v, cov_uv, tanh_uv)
    return weights, means, covs, state


def transform_params(raw: RawParamMap, grid: AnchorGrid, cfg: TransformConfig) -> GmmParams:
    """Θ̂ → Θ with anchor offsets, softmax weights and positive covariances"""
    weights, means, covs, _ = _forward(raw, grid, cfg)
    return GmmParams.from_arrays(weights, means, covs, grid.canvas_width, grid.canvas_height)


def transform_vjp(raw: RawParamMap, grid: AnchorGrid, cfg: TransformConfig,
                  d_theta: np.ndarray) -> np.ndarray:
    """Jᵀ·d_theta: pull C x 6 gradients w.r.t. (π, μ_u, μ_v, var_u, var_v, cov_uv) back to H x W x 6"""
    _, _, _, state = _forward(raw, grid, cfg)
    theta = raw.flat()
    d_theta = np.asarray(d_theta, dtype=np.float64).reshape(-1, RAW_PARAMS_PER_CELL)
    w_a, h_a = grid.cell_size
    d_raw = np.zeros_like(theta)

    g_pi = d_theta[:, 0]
    d_raw[:, PI] = state.weights * (g_pi - np.dot(state.weights, g_pi))
    d_raw[:, MU_U] = d_theta[:, 1] * state.sig_u * (1.0 - state.sig_u) * w_a
    d_raw[:, MU_V] = d_theta[:, 2] * state.sig_v * (1.0 - state.sig_v) * h_a

    g_var_u = d_theta[:, 3].copy()
    g_var_v = d_theta[:, 4].copy()
    g_cov = d_theta[:, 5]
    if cfg.mode == CovarianceMode.SPHERICAL:
        d_raw[:, S_U] = (g_var_u + g_var_v) * NumericUtils.softplus_grad(theta[:, S_U], cfg.beta)
        return d_raw.reshape(raw.grid.shape)

    if cfg.mode == CovarianceMode.FULL:
        # cov = ρ·sqrt(var_u·var_v) feeds back into both variances
        g_var_u += g_cov * state.cov_uv / (2.0 * state.var_u)
        g_var_v += g_cov * state.cov_uv / (2.0 * state.var_v)
        d_raw[:, S_UV] = (g_cov * cfg.corr_bound * (1.0 - state.tanh_uv ** 2)
                          * np.sqrt(state.var_u * state.var_v))
    d_raw[:, S_U] = g_var_u * NumericUtils.softplus_grad(theta[:, S_U], cfg.beta)
    d_raw[:, S_V] = g_var_v * NumericUtils.softplus_grad(theta[:, S_V], cfg.beta)
    return d_raw.reshape(raw.grid.shape)
