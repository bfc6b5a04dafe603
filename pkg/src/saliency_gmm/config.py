import logging
import os
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

load_dotenv()


class Config:
    """Application configuration"""

    # Logging
    LOG_LEVEL: str = os.getenv("SGMM_LOG", "INFO").upper()
    LOG_FILE: str = os.getenv("SGMM_LOG_FILE", "")

    # Batch execution
    THREADS: int = int(os.getenv("SGMM_THREADS", "1"))
    SEED: int = int(os.getenv("SGMM_SEED", "0"))

    @classmethod
    def validate_config(cls) -> bool:
        """Validate that the environment holds usable values"""
        level_ok = isinstance(logging.getLevelName(cls.LOG_LEVEL), int)
        return level_ok and cls.THREADS >= 1


class CovarianceMode(str, Enum):
    SPHERICAL = "spherical"
    DIAGONAL = "diag"
    FULL = "full"


class AnchorLayout(str, Enum):
    SQUARE = "square"
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"
    NONE = "none"


class Normalization(str, Enum):
    NONE = "none"
    SUM_TO_ONE = "sum"
    MAX_TO_ONE = "max"


class AucVariant(str, Enum):
    JUDD = "judd"
    BORJI = "borji"
    SHUFFLED = "shuffled"


class EmConfig(BaseModel):
    """Expectation-maximization settings"""
    model_config = ConfigDict(frozen=True)

    max_iter: int = Field(200, ge=1, description="Maximum EM iterations per restart")
    tol: float = Field(1e-6, gt=0, description="Relative log-likelihood change threshold")
    n_init: int = Field(4, ge=1, description="Number of random restarts")
    min_var: float = Field(1.0, gt=0, description="Variance floor in pixels²")
    seed: int = Field(0, ge=0, description="Seed for k-means++ initialization")


class RenderConfig(BaseModel):
    """Reconstruction canvas and component selection"""
    model_config = ConfigDict(frozen=True)

    width: int = Field(..., ge=1, description="Canvas width in pixels")
    height: int = Field(..., ge=1, description="Canvas height in pixels")
    threshold_gt: float = Field(0.2, ge=0, description="Component threshold G_t")
    normalize: Normalization = Field(Normalization.NONE, description="Normalization applied last")
    mahalanobis_cutoff: Optional[float] = Field(
        6.0, gt=0, description="Skip pixels farther than this Mahalanobis distance; None disables"
    )


class TransformConfig(BaseModel):
    """Raw-to-GMM activation settings"""
    model_config = ConfigDict(frozen=True)

    mode: CovarianceMode = Field(CovarianceMode.DIAGONAL, description="Covariance structure")
    beta: float = Field(1.0, gt=0, description="Softplus sharpness β")
    var_floor: float = Field(1.0, gt=0, description="Variance floor in pixels²")
    corr_bound: float = Field(0.99, gt=0, lt=1, description="Maximum absolute correlation ρ_max")


class OptConfig(BaseModel):
    """Gradient-descent settings"""
    model_config = ConfigDict(frozen=True)

    lr: float = Field(1e-2, ge=0, description="Step size γ")
    epochs: int = Field(500, ge=1, description="Number of epochs N_e")
    batch: int = Field(1, ge=1, description="Images per update step N_b")
    momentum: float = Field(0.9, ge=0, lt=1, description="Momentum coefficient")
    seed: int = Field(0, ge=0, description="Seed for example ordering")
    divergence_threshold: float = Field(10.0, gt=0, description="Loss magnitude treated as divergence")

    @field_validator("lr")
    @classmethod
    def _finite_lr(cls, value: float) -> float:
        if not np.isfinite(value):
            raise ValueError("lr must be finite")
        return value


class MetricConfig(BaseModel):
    """Evaluation constants"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kl_eps: float = Field(1e-12, gt=0, description="Regularizer for KL and IG")
    emd_max_side: int = Field(32, ge=2, description="Maximum side after EMD downsampling")
    auc_splits: int = Field(100, ge=1, description="Splits for Borji and shuffled AUC")
    seed: int = Field(0, ge=0, description="Seed for randomized AUC variants")
    baseline: Optional[np.ndarray] = Field(
        None, description="Baseline map for IG; centered Gaussian prior when omitted", exclude=True
    )

    @field_validator("baseline")
    @classmethod
    def _valid_baseline(cls, value: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if value is None:
            return value
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2 or not np.all(np.isfinite(value)) or np.any(value < 0):
            raise ValueError("baseline must be a finite nonnegative 2D array")
        return value


class SynthConfig(BaseModel):
    """Synthetic SALICON-like dataset settings"""
    model_config = ConfigDict(frozen=True)

    n_images: int = Field(50, ge=1, description="Number of images")
    canvas: Tuple[int, int] = Field((640, 480), description="(width, height) in pixels")
    modes_range: Tuple[int, int] = Field((3, 5), description="Inclusive cluster-count range")
    points_per_image: int = Field(460, ge=1, description="Fixations per image")
    cluster_var_range: Tuple[float, float] = Field((400.0, 2500.0), description="Cluster variance range, pixels²")
    blur_sigma: float = Field(19.0, gt=0, description="Ground-truth blur standard deviation")
    seed: int = Field(0, ge=0, description="Dataset seed")

    @model_validator(mode="after")
    def _check_ranges(self) -> "SynthConfig":
        width, height = self.canvas
        if width < 1 or height < 1:
            raise ValueError("canvas sides must be at least 1")
        low, high = self.modes_range
        if low < 1 or high < low:
            raise ValueError("modes_range must satisfy 1 <= min <= max")
        var_low, var_high = self.cluster_var_range
        if var_low <= 0 or var_high < var_low:
            raise ValueError("cluster_var_range must satisfy 0 < min <= max")
        return self
