"""
Domain types, errors and shared Gaussian math.

Coordinates: u runs along the width (columns), v along the height (rows).
Pixel (i, j) is evaluated at its center (u=j+0.5, v=i+0.5). Covariance
entries are variances/covariance in pixels².
"""

import logging
import math
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import AnchorLayout

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
RAW_PARAMS_PER_CELL = 6


class SaliencyGmmError(Exception):
    """Base class for library errors"""
    exit_code: int = 1


class ValidationFailure(SaliencyGmmError):
    exit_code = 2


class TooFewPoints(ValidationFailure):
    pass


class DegenerateInput(ValidationFailure):
    pass


class NonPositiveDefinite(ValidationFailure):
    pass


class AllComponentsFiltered(ValidationFailure):
    pass


class ZeroMap(ValidationFailure):
    pass


class ConstantMap(ValidationFailure):
    pass


class ShapeMismatch(ValidationFailure):
    pass


class MissingNegatives(ValidationFailure):
    pass


class LineError(ValidationFailure):
    """Error tied to a 1-based line of an input file"""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ParseError(LineError):
    pass


class BoundsError(LineError):
    pass


class IoError(SaliencyGmmError):
    exit_code = 3


class FormatError(IoError):
    pass


class DivergenceDetected(SaliencyGmmError):
    exit_code = 4


class FixationPoints(BaseModel):
    """Fixation coordinates on an image canvas"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    points: np.ndarray = Field(..., description="N x 2 array of (u, v) pixel coordinates")
    canvas_width: int = Field(..., ge=1)
    canvas_height: int = Field(..., ge=1)

    @field_validator("points", mode="before")
    @classmethod
    def _as_array(cls, value) -> np.ndarray:
        array = np.asarray(value, dtype=np.float64).reshape(-1, 2)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def _check_bounds(self) -> "FixationPoints":
        u, v = self.points[:, 0], self.points[:, 1]
        inside = (u >= 0) & (u < self.canvas_width) & (v >= 0) & (v < self.canvas_height)
        if not np.all(inside):
            first = int(np.flatnonzero(~inside)[0])
            raise ValueError(f"point {first} lies outside the {self.canvas_width}x{self.canvas_height} canvas")
        return self

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def pixel_indices(self) -> Tuple[np.ndarray, np.ndarray]:
        """Row and column of the pixel holding each point"""
        rows = np.floor(self.points[:, 1]).astype(np.intp)
        cols = np.floor(self.points[:, 0]).astype(np.intp)
        return rows, cols


class SaliencyMap(BaseModel):
    """Dense nonnegative scalar field, rows = height"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray = Field(..., description="height x width array")

    @field_validator("values", mode="before")
    @classmethod
    def _as_grid(cls, value) -> np.ndarray:
        array = np.array(value, dtype=np.float64)
        if array.ndim != 2 or min(array.shape) < 1:
            raise ValueError("saliency map must be a non-empty 2D grid")
        if not np.all(np.isfinite(array)) or np.any(array < 0):
            raise ValueError("saliency map values must be finite and nonnegative")
        array.setflags(write=False)
        return array

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def height(self) -> int:
        return int(self.values.shape[0])


class GaussianComponent(BaseModel):
    """One weighted bivariate Gaussian"""
    model_config = ConfigDict(frozen=True)

    weight: float
    mean: Tuple[float, float]
    cov: Tuple[float, float, float] = Field(..., description="(var_u, var_v, cov_uv) in pixels²")

    @property
    def determinant(self) -> float:
        var_u, var_v, cov_uv = self.cov
        return var_u * var_v - cov_uv * cov_uv


class GmmParams(BaseModel):
    """Gaussian mixture in absolute image coordinates"""
    model_config = ConfigDict(frozen=True)

    components: List[GaussianComponent]
    canvas_width: int = Field(..., ge=1)
    canvas_height: int = Field(..., ge=1)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([comp.weight for comp in self.components], dtype=np.float64)

    @property
    def means(self) -> np.ndarray:
        return np.array([comp.mean for comp in self.components], dtype=np.float64).reshape(-1, 2)

    @property
    def covs(self) -> np.ndarray:
        return np.array([comp.cov for comp in self.components], dtype=np.float64).reshape(-1, 3)

    @classmethod
    def from_arrays(cls, weights: np.ndarray, means: np.ndarray, covs: np.ndarray,
                    canvas_width: int, canvas_height: int) -> "GmmParams":
        components = [
            GaussianComponent(
                weight=float(w),
                mean=(float(m[0]), float(m[1])),
                cov=(float(s[0]), float(s[1]), float(s[2])),
            )
            for w, m, s in zip(weights, means, covs)
        ]
        return cls(components=components, canvas_width=canvas_width, canvas_height=canvas_height)


class RawParamMap(BaseModel):
    """H x W x 6 grid of unconstrained parameters (π̂, μ̂_u, μ̂_v, σ̂_u, σ̂_v, σ̂_uv)"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: np.ndarray

    @field_validator("grid", mode="before")
    @classmethod
    def _as_grid(cls, value) -> np.ndarray:
        array = np.array(value, dtype=np.float64)
        if array.ndim != 3 or array.shape[2] != RAW_PARAMS_PER_CELL:
            raise ValueError(f"raw parameter map must have shape H x W x {RAW_PARAMS_PER_CELL}")
        if min(array.shape[:2]) < 1:
            raise ValueError("raw parameter map needs at least one cell")
        if not np.all(np.isfinite(array)):
            raise ValueError("raw parameters must be finite")
        array.setflags(write=False)
        return array

    @property
    def H(self) -> int:
        return int(self.grid.shape[0])

    @property
    def W(self) -> int:
        return int(self.grid.shape[1])

    @classmethod
    def zeros(cls, H: int, W: int) -> "RawParamMap":
        return cls(grid=np.zeros((H, W, RAW_PARAMS_PER_CELL)))

    def flat(self) -> np.ndarray:
        """C x 6 view in row-major cell order"""
        return self.grid.reshape(-1, RAW_PARAMS_PER_CELL)


class AnchorGrid(BaseModel):
    """Per-cell reference points (cell units) and cell size (pixels per cell)"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    layout: AnchorLayout
    anchors: np.ndarray = Field(..., description="H x W x 2 array of (u_a, v_a)")
    cell_size: Tuple[float, float] = Field(..., description="(w_a, h_a)")
    canvas_width: int = Field(..., ge=1)
    canvas_height: int = Field(..., ge=1)

    @property
    def H(self) -> int:
        return int(self.anchors.shape[0])

    @property
    def W(self) -> int:
        return int(self.anchors.shape[1])


def validate_gmm(gmm: GmmParams) -> List[str]:
    """Describe every violated GmmParams / GaussianComponent invariant"""
    violations: List[str] = []
    if gmm.n_components < 1:
        violations.append("gmm has no components")
        return violations

    total = math.fsum(comp.weight for comp in gmm.components)
    if not math.isfinite(total) or abs(total - 1.0) > 1e-9:
        violations.append(f"weights sum {round(total, 12):g} ≠ 1")

    for index, comp in enumerate(gmm.components):
        values = (comp.weight, *comp.mean, *comp.cov)
        if not all(math.isfinite(x) for x in values):
            violations.append(f"component {index} has non-finite parameters")
            continue
        if comp.weight < 0:
            violations.append(f"component {index} has negative weight {comp.weight:g}")
        var_u, var_v, _ = comp.cov
        if var_u <= 0 or var_v <= 0 or comp.determinant <= 0:
            violations.append(f"component {index} not positive definite")
    return violations


def cholesky_2x2(covs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower Cholesky factors (l11, l21, l22) of stacked [[var_u, cov], [cov, var_v]]"""
    covs = np.asarray(covs, dtype=np.float64).reshape(-1, 3)
    var_u, var_v, cov_uv = covs[:, 0], covs[:, 1], covs[:, 2]
    det = var_u * var_v - cov_uv * cov_uv
    if np.any(var_u <= 0) or np.any(det <= 0):
        bad = int(np.flatnonzero((var_u <= 0) | (det <= 0))[0])
        raise NonPositiveDefinite(f"component {bad} covariance is not positive definite")
    l11 = np.sqrt(var_u)
    l21 = cov_uv / l11
    l22 = np.sqrt(var_v - l21 * l21)
    return l11, l21, l22


def mahalanobis_sq(points: np.ndarray, means: np.ndarray, covs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Squared Mahalanobis distances (N x C) and log determinants (C,)"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    means = np.asarray(means, dtype=np.float64).reshape(-1, 2)
    l11, l21, l22 = cholesky_2x2(covs)
    du = points[:, None, 0] - means[None, :, 0]
    dv = points[:, None, 1] - means[None, :, 1]
    z1 = du / l11
    z2 = (dv - l21 * z1) / l22
    log_det = 2.0 * (np.log(l11) + np.log(l22))
    return z1 * z1 + z2 * z2, log_det


def log_gaussian_density(points: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """log N(p; μ_c, Σ_c) for every point/component pair, N x C"""
    maha, log_det = mahalanobis_sq(points, means, covs)
    return -LOG_2PI - 0.5 * log_det - 0.5 * maha


def pixel_centers(width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    """Continuous (u, v) coordinates of every pixel center, each height x width"""
    u = np.arange(width, dtype=np.float64) + 0.5
    v = np.arange(height, dtype=np.float64) + 0.5
    return np.meshgrid(u, v)
