"""
Gradient-descent learning of GMM parameters.

Two realizations of the training loop (output → transform → reconstruct →
loss → backprop):

- direct_fit: free raw parameters for one image.
- ToyTrainer / train_toy: a TinyPredictor producing the raw parameters from
  a single-channel feature image.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import correlate2d

from .config import OptConfig, TransformConfig
from .core import (
    RAW_PARAMS_PER_CELL,
    AnchorGrid,
    DivergenceDetected,
    GmmParams,
    RawParamMap,
    SaliencyMap,
    ShapeMismatch,
)
from .loss_grad import raw_grad
from .transform import S_U, S_V, transform_params
from .utils import NumericUtils

logger = logging.getLogger(__name__)

N_FILTERS = 8
KERNEL_SIZE = 5
PADDING = KERNEL_SIZE // 2
LOG_EVERY = 50


class SgdMomentum:
    """v ← m·v − γ·g ; x ← x + v"""

    def __init__(self, lr: float, momentum: float, size: int):
        self.lr = lr
        self.momentum = momentum
        self.velocity = np.zeros(size)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.velocity = self.momentum * self.velocity - self.lr * grad
        return params + self.velocity


def _check_loss(loss: float, step: int, threshold: float) -> None:
    if not np.isfinite(loss) or abs(loss) > threshold:
        raise DivergenceDetected(f"loss {loss} at step {step}; reduce the learning rate")


def direct_fit(init: RawParamMap, grid: AnchorGrid, tcfg: TransformConfig, gt: SaliencyMap,
               opt: OptConfig, G_t: float = 0.2,
               cutoff: Optional[float] = 6.0) -> Tuple[RawParamMap, List[float]]:
    """Optimize free raw parameters against one ground-truth map; returns (params, loss trace)"""
    params = init.grid.ravel().copy()
    optimizer = SgdMomentum(opt.lr, opt.momentum, params.size)
    trace: List[float] = []

    for step in range(opt.epochs):
        current = RawParamMap(grid=params.reshape(init.grid.shape))
        report = raw_grad(current, grid, tcfg, gt, G_t, cutoff)
        loss = report.loss.loss
        _check_loss(loss, step, opt.divergence_threshold)
        trace.append(loss)
        if step % LOG_EVERY == 0:
            logger.debug(f"direct-fit step {step}: loss {loss:.6f}, {report.loss.selected_components} components")

        params = optimizer.step(params, report.d_raw.ravel())
        if not np.all(np.isfinite(params)):
            raise DivergenceDetected(f"parameters became non-finite at step {step}")

    result = RawParamMap(grid=params.reshape(init.grid.shape))
    logger.info(f"direct-fit finished after {opt.epochs} steps: loss {trace[0]:.4f} -> {min(trace):.4f} (best)")
    return result, trace


@dataclass
class ForwardCache:
    padded: np.ndarray
    pre_activation: np.ndarray
    pooled: np.ndarray
    pool_shape: Tuple[int, int]


class TinyPredictor:
    """
    Two-stage raw-parameter head standing in for the feature network.

    Stage 1: 8 learned 5x5 filters with bias and ReLU over the input map
    (scaled to max 1, zero padded to keep its size). Stage 2: the ReLU
    responses are average-pooled into H x W cells and a shared affine map
    turns each pooled 8-vector into the 6 raw parameters of that cell.
    """

    PARAM_SHAPES = (
        ("conv_w", (N_FILTERS, KERNEL_SIZE, KERNEL_SIZE)),
        ("conv_b", (N_FILTERS,)),
        ("head_w", (RAW_PARAMS_PER_CELL, N_FILTERS)),
        ("head_b", (RAW_PARAMS_PER_CELL,)),
    )
    N_PARAMS = sum(int(np.prod(shape)) for _, shape in PARAM_SHAPES)

    def __init__(self, conv_w: np.ndarray, conv_b: np.ndarray, head_w: np.ndarray, head_b: np.ndarray):
        self.conv_w = np.asarray(conv_w, dtype=np.float64).reshape(N_FILTERS, KERNEL_SIZE, KERNEL_SIZE)
        self.conv_b = np.asarray(conv_b, dtype=np.float64).reshape(N_FILTERS)
        self.head_w = np.asarray(head_w, dtype=np.float64).reshape(RAW_PARAMS_PER_CELL, N_FILTERS)
        self.head_b = np.asarray(head_b, dtype=np.float64).reshape(RAW_PARAMS_PER_CELL)

    @classmethod
    def create(cls, seed: int = 0, init_scale: float = 0.1,
               head_bias: Optional[Sequence[float]] = None) -> "TinyPredictor":
        """He-initialized filters, small random head, optional head bias"""
        rng = np.random.default_rng(seed)
        fan_in = KERNEL_SIZE * KERNEL_SIZE
        conv_w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (N_FILTERS, KERNEL_SIZE, KERNEL_SIZE))
        conv_b = np.zeros(N_FILTERS)
        head_w = rng.normal(0.0, init_scale, (RAW_PARAMS_PER_CELL, N_FILTERS))
        head_b = np.zeros(RAW_PARAMS_PER_CELL) if head_bias is None else np.asarray(head_bias, dtype=np.float64)
        return cls(conv_w, conv_b, head_w, head_b)

    @classmethod
    def zeros(cls, head_bias: Optional[Sequence[float]] = None) -> "TinyPredictor":
        head_b = np.zeros(RAW_PARAMS_PER_CELL) if head_bias is None else head_bias
        return cls(np.zeros((N_FILTERS, KERNEL_SIZE, KERNEL_SIZE)), np.zeros(N_FILTERS),
                   np.zeros((RAW_PARAMS_PER_CELL, N_FILTERS)), head_b)

    def parameters(self) -> np.ndarray:
        """Flat copy in checkpoint order: conv_w, conv_b, head_w, head_b"""
        return np.concatenate([getattr(self, name).ravel() for name, _ in self.PARAM_SHAPES])

    @classmethod
    def from_parameters(cls, flat: np.ndarray) -> "TinyPredictor":
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if flat.size != cls.N_PARAMS:
            raise ShapeMismatch(f"expected {cls.N_PARAMS} predictor parameters, got {flat.size}")
        pieces = {}
        offset = 0
        for name, shape in cls.PARAM_SHAPES:
            size = int(np.prod(shape))
            pieces[name] = flat[offset:offset + size].reshape(shape)
            offset += size
        return cls(**pieces)

    def forward(self, feature: SaliencyMap, H: int, W: int) -> Tuple[RawParamMap, ForwardCache]:
        x = feature.values
        rows, cols = x.shape
        if rows % H or cols % W:
            raise ShapeMismatch(f"{cols}x{rows} input cannot be pooled into {W}x{H} cells")
        peak = x.max()
        if peak > 0:
            x = x / peak
        padded = np.pad(x, PADDING)

        pre_activation = np.stack([
            correlate2d(padded, kernel, mode="valid") + bias
            for kernel, bias in zip(self.conv_w, self.conv_b)
        ])
        activation = np.maximum(pre_activation, 0.0)
        pool_h, pool_w = rows // H, cols // W
        pooled = activation.reshape(N_FILTERS, H, pool_h, W, pool_w).mean(axis=(2, 4))

        out = np.einsum("ok,khw->hwo", self.head_w, pooled) + self.head_b
        return RawParamMap(grid=out), ForwardCache(padded, pre_activation, pooled, (pool_h, pool_w))

    def backward(self, cache: ForwardCache, d_raw: np.ndarray) -> np.ndarray:
        """Flat parameter gradient given ∂L/∂(raw map), H x W x 6"""
        d_head_w = np.einsum("hwo,khw->ok", d_raw, cache.pooled)
        d_head_b = d_raw.sum(axis=(0, 1))
        d_pooled = np.einsum("ok,hwo->khw", self.head_w, d_raw)

        pool_h, pool_w = cache.pool_shape
        d_activation = np.repeat(np.repeat(d_pooled, pool_h, axis=1), pool_w, axis=2) / (pool_h * pool_w)
        d_pre = d_activation * (cache.pre_activation > 0)

        d_conv_w = np.stack([correlate2d(cache.padded, d_pre[k], mode="valid") for k in range(N_FILTERS)])
        d_conv_b = d_pre.sum(axis=(1, 2))
        return np.concatenate([d_conv_w.ravel(), d_conv_b, d_head_w.ravel(), d_head_b])


def cell_scale_bias(grid: AnchorGrid, tcfg: TransformConfig) -> np.ndarray:
    """Head bias whose untrained output puts one cell-sized Gaussian in every cell"""
    target_var = (min(grid.cell_size) / 2.0) ** 2
    excess = max(target_var - tcfg.var_floor, 1e-3)
    sigma_raw = NumericUtils.inverse_softplus(excess, tcfg.beta)
    bias = np.zeros(RAW_PARAMS_PER_CELL)
    bias[S_U] = sigma_raw
    bias[S_V] = sigma_raw
    return bias


def predict(predictor: TinyPredictor, feature: SaliencyMap, grid: AnchorGrid,
            tcfg: TransformConfig) -> GmmParams:
    """Forward pass followed by the parameter transform"""
    raw, _ = predictor.forward(feature, grid.H, grid.W)
    return transform_params(raw, grid, tcfg)


class ToyTrainer:
    """Mini-batch SGD with momentum for a TinyPredictor"""

    def __init__(self, grid: AnchorGrid, tcfg: TransformConfig, opt: OptConfig,
                 G_t: float = 0.2, cutoff: Optional[float] = 6.0):
        self.grid = grid
        self.tcfg = tcfg
        self.opt = opt
        self.G_t = G_t
        self.cutoff = cutoff
        self.epoch_losses: List[float] = []
        self.step_losses: List[float] = []

    def loss_and_grad(self, predictor: TinyPredictor, feature: SaliencyMap,
                      gt: SaliencyMap) -> Tuple[float, np.ndarray]:
        raw, cache = predictor.forward(feature, self.grid.H, self.grid.W)
        report = raw_grad(raw, self.grid, self.tcfg, gt, self.G_t, self.cutoff)
        return report.loss.loss, predictor.backward(cache, report.d_raw)

    def mean_loss(self, predictor: TinyPredictor, dataset: Sequence[Tuple[SaliencyMap, SaliencyMap]]) -> float:
        losses = [self.loss_and_grad(predictor, feature, gt)[0] for feature, gt in dataset]
        return float(np.mean(losses))

    def fit(self, dataset: Sequence[Tuple[SaliencyMap, SaliencyMap]], predictor: TinyPredictor) -> TinyPredictor:
        if not dataset:
            raise ValueError("training needs at least one example")
        opt = self.opt
        rng = np.random.default_rng(opt.seed)
        params = predictor.parameters()
        optimizer = SgdMomentum(opt.lr, opt.momentum, params.size)
        self.epoch_losses = [self.mean_loss(predictor, dataset)]
        self.step_losses = []
        logger.info(f"Training on {len(dataset)} examples, initial mean loss {self.epoch_losses[0]:.4f}")

        step = 0
        for epoch in range(1, opt.epochs + 1):
            order = rng.permutation(len(dataset))
            for start in range(0, len(order), opt.batch):
                batch = order[start:start + opt.batch]
                grad = np.zeros_like(params)
                batch_loss = 0.0
                for index in batch:
                    feature, gt = dataset[index]
                    loss, g = self.loss_and_grad(predictor, feature, gt)
                    _check_loss(loss, step, opt.divergence_threshold)
                    batch_loss += loss
                    grad += g
                grad /= len(batch)
                self.step_losses.append(batch_loss / len(batch))

                params = optimizer.step(params, grad)
                if not np.all(np.isfinite(params)):
                    raise DivergenceDetected(f"predictor weights became non-finite at step {step}")
                predictor = TinyPredictor.from_parameters(params)
                step += 1

            self.epoch_losses.append(self.mean_loss(predictor, dataset))
            logger.info(f"Epoch {epoch}/{opt.epochs}: mean loss {self.epoch_losses[-1]:.4f}")
        return predictor


def train_toy(dataset: Sequence[Tuple[SaliencyMap, SaliencyMap]], predictor: TinyPredictor,
              grid: AnchorGrid, tcfg: TransformConfig, opt: OptConfig,
              G_t: float = 0.2) -> TinyPredictor:
    """Train a TinyPredictor on (feature image, ground-truth map) pairs"""
    return ToyTrainer(grid, tcfg, opt, G_t).fit(dataset, predictor)
