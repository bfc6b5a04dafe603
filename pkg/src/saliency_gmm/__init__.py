"""
Saliency GMM

Gaussian-mixture representation of eye-fixation maps: EM fitting of fixation
points, thresholded rendering, anchor-based parameter transforms, a
correlation loss with analytic gradients, a desk-scale trainer and the
standard saliency evaluation metrics.
"""

__version__ = "1.0.0"

from .config import (
    AnchorLayout,
    AucVariant,
    Config,
    CovarianceMode,
    EmConfig,
    MetricConfig,
    Normalization,
    OptConfig,
    RenderConfig,
    SynthConfig,
    TransformConfig,
)
from .core import (
    AnchorGrid,
    FixationPoints,
    GaussianComponent,
    GmmParams,
    RawParamMap,
    SaliencyGmmError,
    SaliencyMap,
    validate_gmm,
)
from .gmm_fit import fit_gmm
from .loss_grad import cc_loss, cc_loss_grad, raw_grad
from .pipeline import SaliencyPipeline, create_pipeline
from .render import blur_fixations, convolve_gmm, eval_component, render_map
from .trainer import TinyPredictor, direct_fit, predict, train_toy
from .transform import make_anchor_grid, transform_params

__all__ = [
    "AnchorGrid",
    "AnchorLayout",
    "AucVariant",
    "Config",
    "CovarianceMode",
    "EmConfig",
    "FixationPoints",
    "GaussianComponent",
    "GmmParams",
    "MetricConfig",
    "Normalization",
    "OptConfig",
    "RawParamMap",
    "RenderConfig",
    "SaliencyGmmError",
    "SaliencyMap",
    "SaliencyPipeline",
    "SynthConfig",
    "TinyPredictor",
    "TransformConfig",
    "blur_fixations",
    "cc_loss",
    "cc_loss_grad",
    "convolve_gmm",
    "create_pipeline",
    "direct_fit",
    "eval_component",
    "fit_gmm",
    "make_anchor_grid",
    "predict",
    "raw_grad",
    "render_map",
    "train_toy",
    "transform_params",
    "validate_gmm",
    "__version__",
]
