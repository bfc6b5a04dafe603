"""
Command orchestrator: one method per command-line verb.

Every public method returns a status dictionary; library exceptions are
logged and folded into {"status": "error", "message", "exit_code"}.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from pydantic import ValidationError

from .config import (
    AnchorLayout,
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
from .core import FixationPoints, GmmParams, RawParamMap, SaliencyGmmError, SaliencyMap, ShapeMismatch
from .data_io import (
    MapFormat,
    load_checkpoint,
    load_fixation_points,
    load_gmm,
    load_map,
    save_checkpoint,
    save_fixation_points,
    save_gmm,
    save_map,
)
from .datasets import subsample_points, synth_dataset
from .gmm_fit import fit_gmm
from .loss_grad import cc_loss
from .metrics import METRIC_NAMES, evaluate_metric, kl_div, mse, nss, sim
from .metrics import cc as cc_metric
from .render import blur_fixations, convolve_gmm, render_map, select_components
from .trainer import TinyPredictor, ToyTrainer, cell_scale_bias, direct_fit, predict
from .transform import make_anchor_grid, raw_output_size, transform_params
from .utils import FileUtils, HashUtils

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

DEFAULT_BLUR_SIGMA = 19.0


def _error_result(command: str, exc: Exception) -> Dict[str, Any]:
    if isinstance(exc, SaliencyGmmError):
        exit_code = exc.exit_code
    elif isinstance(exc, (ValidationError, ValueError)):
        exit_code = 2
    else:
        exit_code = 1
    logger.error(f"Error running {command}: {exc}")
    return {
        "status": "error",
        "command": command,
        "message": f"Error running {command}: {exc}",
        "exit_code": exit_code,
    }


def _output_paths(inputs: Sequence[Path], out: Path, suffix: str) -> List[Path]:
    """A single input writes to out; several inputs write <stem><suffix> inside out"""
    if len(inputs) == 1 and out.suffix:
        return [out]
    return [out / f"{Path(path).name.split('.')[0]}{suffix}" for path in inputs]


class SaliencyPipeline:
    """Batch orchestrator for the saliency GMM commands"""

    def __init__(self, threads: Optional[int] = None, seed: Optional[int] = None):
        self.threads = threads if threads is not None else Config.THREADS
        self.seed = seed if seed is not None else Config.SEED
        if self.threads < 1:
            raise ValueError("thread count must be at least 1")

    def _map(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """Apply fn to every item; results keep input order"""
        items = list(items)
        if self.threads == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            return list(executor.map(fn, items))

    def _run(self, command: str, fn: Callable[[], Dict[str, Any]]) -> Dict[str, Any]:
        try:
            result = fn()
        except Exception as e:
            return _error_result(command, e)
        logger.info(f"{command} completed")
        return {"status": "success", "command": command, "exit_code": 0, **result}

    # Data generation

    def synth(self, out_dir: Path, cfg: Optional[SynthConfig] = None) -> Dict[str, Any]:
        """Write points, ground-truth map and true mixture for every synthetic image"""
        def work():
            config = cfg or SynthConfig(seed=self.seed)
            images = synth_dataset(config)
            for index, (points, gt, truth) in enumerate(images):
                stem = f"image_{index:03d}"
                save_fixation_points(points, out_dir / f"{stem}.csv")
                save_map(gt, out_dir / f"{stem}.gt.f64", MapFormat.F64RAW)
                save_gmm(truth, out_dir / f"{stem}.truth.json")
            return {"message": f"Generated {len(images)} images", "images": len(images), "out": str(out_dir)}
        return self._run("synth", work)

    def subsample(self, points_path: Path, ratio: float, out: Path) -> Dict[str, Any]:
        def work():
            points = load_fixation_points(points_path)
            kept = subsample_points(points, ratio, self.seed)
            save_fixation_points(kept, out)
            return {"message": f"Kept {len(kept)} of {len(points)} fixations", "kept": len(kept), "out": str(out)}
        return self._run("subsample", work)

    # Fitting and rendering

    def fit(self, points_paths: Sequence[Path], components: int, mode: CovarianceMode,
            out: Path, em: Optional[EmConfig] = None) -> Dict[str, Any]:
        def work():
            config = em or EmConfig(seed=self.seed)
            targets = _output_paths(points_paths, out, ".gmm.json")

            def fit_one(pair):
                source, target = pair
                gmm = fit_gmm(load_fixation_points(source), components, mode, config)
                save_gmm(gmm, target)
                return str(target)

            written = self._map(fit_one, zip(points_paths, targets))
            return {"message": f"Fitted {len(written)} mixture(s)", "outputs": written}
        return self._run("fit", work)

    def render(self, gmm_paths: Sequence[Path], out: Path, threshold_gt: float = 0.2,
               normalize: Normalization = Normalization.NONE,
               fmt: Optional[MapFormat] = None, smooth_sigma: float = 0.0) -> Dict[str, Any]:
        def work():
            suffix = ".pgm" if fmt == MapFormat.PGM else ".f64"
            targets = _output_paths(gmm_paths, out, suffix)

            def render_one(pair):
                source, target = pair
                gmm = load_gmm(source)
                if smooth_sigma:
                    gmm = convolve_gmm(gmm, smooth_sigma)
                cfg = RenderConfig(width=gmm.canvas_width, height=gmm.canvas_height,
                                   threshold_gt=threshold_gt, normalize=normalize)
                save_map(render_map(gmm, cfg), target, fmt)
                return str(target)

            written = self._map(render_one, zip(gmm_paths, targets))
            return {"message": f"Rendered {len(written)} map(s)", "outputs": written}
        return self._run("render", work)

    def blur(self, points_paths: Sequence[Path], out: Path, sigma: float = DEFAULT_BLUR_SIGMA,
             normalize: Normalization = Normalization.NONE, fmt: Optional[MapFormat] = None) -> Dict[str, Any]:
        def work():
            suffix = ".pgm" if fmt == MapFormat.PGM else ".gt.f64"
            targets = _output_paths(points_paths, out, suffix)

            def blur_one(pair):
                source, target = pair
                points = load_fixation_points(source)
                cfg = RenderConfig(width=points.canvas_width, height=points.canvas_height, normalize=normalize)
                save_map(blur_fixations(points, sigma, cfg), target, fmt)
                return str(target)

            written = self._map(blur_one, zip(points_paths, targets))
            return {"message": f"Blurred {len(written)} fixation set(s)", "outputs": written}
        return self._run("blur", work)

    # Gradient-based learning

    def direct_fit(self, gt_path: Path, grid_shape, layout: AnchorLayout, tcfg: TransformConfig,
                   opt: OptConfig, out: Path, threshold_gt: float = 0.2,
                   trace_path: Optional[Path] = None) -> Dict[str, Any]:
        def work():
            gt = load_map(gt_path)
            H, W = grid_shape
            grid = make_anchor_grid(layout, H, W, gt.width, gt.height)
            init = RawParamMap.zeros(H, W)
            raw, trace = direct_fit(init, grid, tcfg, gt, opt, threshold_gt)
            gmm = transform_params(raw, grid, tcfg)
            save_gmm(gmm, out)
            if trace_path is not None:
                FileUtils.save_json({"loss": trace}, trace_path)
            final = cc_loss(gmm, gt, threshold_gt)
            return {
                "message": f"Direct fit reached CC {final.cc:.4f}",
                "initial_loss": trace[0],
                "final_loss": final.loss,
                "cc": final.cc,
                "raw_outputs": raw_output_size(H, W),
                "map_pixels": gt.width * gt.height,
                "out": str(out),
            }
        return self._run("direct-fit", work)

    def train_toy(self, gt_paths: Sequence[Path], grid_shape, layout: AnchorLayout,
                  tcfg: TransformConfig, opt: OptConfig, out: Path,
                  feature_paths: Optional[Sequence[Path]] = None, threshold_gt: float = 0.2) -> Dict[str, Any]:
        def work():
            gts = self._map(load_map, gt_paths)
            features = self._map(load_map, feature_paths) if feature_paths else gts
            if len(features) != len(gts):
                raise ShapeMismatch(f"{len(features)} feature images for {len(gts)} ground-truth maps")
            H, W = grid_shape
            grid = make_anchor_grid(layout, H, W, gts[0].width, gts[0].height)
            predictor = TinyPredictor.create(opt.seed, head_bias=cell_scale_bias(grid, tcfg))
            trainer = ToyTrainer(grid, tcfg, opt, threshold_gt)
            predictor = trainer.fit(list(zip(features, gts)), predictor)
            save_checkpoint(predictor, out)
            return {
                "message": f"Trained on {len(gts)} images for {opt.epochs} epochs",
                "epoch_losses": trainer.epoch_losses,
                "out": str(out),
            }
        return self._run("train-toy", work)

    def predict(self, checkpoint: Path, feature_paths: Sequence[Path], grid_shape, layout: AnchorLayout,
                tcfg: TransformConfig, out: Path) -> Dict[str, Any]:
        def work():
            predictor = load_checkpoint(checkpoint)
            targets = _output_paths(feature_paths, out, ".gmm.json")
            H, W = grid_shape

            def predict_one(pair):
                source, target = pair
                feature = load_map(source)
                grid = make_anchor_grid(layout, H, W, feature.width, feature.height)
                save_gmm(predict(predictor, feature, grid, tcfg), target)
                return str(target)

            written = self._map(predict_one, zip(feature_paths, targets))
            return {"message": f"Predicted {len(written)} mixture(s)", "outputs": written}
        return self._run("predict", work)

    # Evaluation

    def evaluate(self, pred_paths: Sequence[Path], metrics: Sequence[str], out: Optional[Path] = None,
                 gt_paths: Optional[Sequence[Path]] = None, points_paths: Optional[Sequence[Path]] = None,
                 negatives_paths: Optional[Sequence[Path]] = None,
                 cfg: Optional[MetricConfig] = None) -> Dict[str, Any]:
        def work():
            config = cfg or MetricConfig(seed=self.seed)
            unknown = [name for name in metrics if name not in METRIC_NAMES]
            if unknown:
                raise ValueError(f"Unknown metric(s): {', '.join(unknown)}")
            for label, paths in (("ground-truth", gt_paths), ("points", points_paths)):
                if paths and len(paths) != len(pred_paths):
                    raise ShapeMismatch(f"{len(paths)} {label} files for {len(pred_paths)} predictions")
            negatives = self._pooled_negatives(negatives_paths) if negatives_paths else None
            config_hash = HashUtils.config_hash(config)

            def evaluate_one(index):
                pred = load_map(pred_paths[index])
                gt = load_map(gt_paths[index]) if gt_paths else None
                points = load_fixation_points(points_paths[index]) if points_paths else None
                image = Path(pred_paths[index]).name.split(".")[0]
                return [
                    {"image": image, "metric": name,
                     "value": evaluate_metric(name, pred, gt, points, negatives, config),
                     "config_hash": config_hash}
                    for name in metrics
                ]

            records = [record for batch in self._map(evaluate_one, range(len(pred_paths))) for record in batch]
            if out is not None:
                FileUtils.write_json_lines(records, out)
            return {"message": f"Evaluated {len(pred_paths)} prediction(s)", "records": records}
        return self._run("evaluate", work)

    @staticmethod
    def _pooled_negatives(paths: Sequence[Path]) -> FixationPoints:
        """Concatenate fixation sets, rescaled onto the first set's canvas"""
        sets = [load_fixation_points(path) for path in paths]
        width, height = sets[0].canvas_width, sets[0].canvas_height
        scaled = [
            points.points * [width / points.canvas_width, height / points.canvas_height]
            for points in sets
        ]
        pooled = np.clip(np.concatenate(scaled), 0.0, [np.nextafter(width, 0), np.nextafter(height, 0)])
        return FixationPoints(points=pooled, canvas_width=width, canvas_height=height)

    def fidelity(self, points: FixationPoints, components: int, mode: CovarianceMode,
                 sigma: float = DEFAULT_BLUR_SIGMA, em: Optional[EmConfig] = None,
                 threshold_gt: float = 0.0) -> Dict[str, float]:
        """
        How well a fitted mixture reproduces the blurred fixation map.

        The mixture is rendered convolved with the same σ as the ground truth,
        so both maps describe the fixation density at one scale.
        """
        _, scores = self._fit_and_score(points, components, mode, sigma, em, threshold_gt)
        return scores

    def _fit_and_score(self, points: FixationPoints, components: int, mode: CovarianceMode,
                       sigma: float, em: Optional[EmConfig], threshold_gt: float) -> Tuple[GmmParams, Dict[str, float]]:
        config = em or EmConfig(seed=self.seed)
        cfg = RenderConfig(width=points.canvas_width, height=points.canvas_height,
                           threshold_gt=threshold_gt, normalize=Normalization.SUM_TO_ONE)
        gmm = fit_gmm(points, components, mode, config)
        rendered = render_map(convolve_gmm(gmm, sigma), cfg)
        gt = blur_fixations(points, sigma, cfg)
        return gmm, _fidelity_scores(rendered, gt, points)

    def sweep(self, points_paths: Sequence[Path], components: Sequence[int], modes: Sequence[CovarianceMode],
              thresholds: Sequence[float] = (), out: Optional[Path] = None,
              sigma: float = DEFAULT_BLUR_SIGMA, em: Optional[EmConfig] = None) -> Dict[str, Any]:
        """Fidelity per (image, C, mode) and selected-component counts per G_t"""
        def work():
            config = em or EmConfig(seed=self.seed)
            jobs = [(path, C, CovarianceMode(mode)) for path in points_paths for C in components for mode in modes]

            def run_job(job):
                path, C, mode = job
                points = load_fixation_points(path)
                image = Path(path).name.split(".")[0]
                gmm, scores = self._fit_and_score(points, C, mode, sigma, config, 0.0)
                records = [{"image": image, "components": C, "cov": mode.value, **scores}]
                if thresholds:
                    records.extend(
                        {"image": image, "components": C, "cov": mode.value, "threshold_gt": G_t,
                         "selected": int(select_components(gmm.weights, G_t).sum())}
                        for G_t in thresholds
                    )
                return records

            records = [record for batch in self._map(run_job, jobs) for record in batch]
            if out is not None:
                FileUtils.write_json_lines(records, out)
            return {"message": f"Swept {len(jobs)} configuration(s)", "records": records}
        return self._run("sweep", work)


def _fidelity_scores(rendered: SaliencyMap, gt: SaliencyMap, points: FixationPoints) -> Dict[str, float]:
    return {
        "mse": mse(rendered, gt),
        "kl": kl_div(rendered, gt),
        "cc": cc_metric(rendered, gt),
        "sim": sim(rendered, gt),
        "nss": nss(rendered, points),
    }


def format_result(result: Dict[str, Any]) -> str:
    return json.dumps(result, indent=2, default=str)


def create_pipeline(threads: Optional[int] = None, seed: Optional[int] = None) -> SaliencyPipeline:
    """Factory function to create a new pipeline instance"""
    return SaliencyPipeline(threads, seed)
