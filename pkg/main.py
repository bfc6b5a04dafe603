#!/usr/bin/env python3
"""
Saliency GMM
Fit, render, learn and evaluate Gaussian-mixture eye-fixation maps
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from src.saliency_gmm.config import (
    AnchorLayout,
    Config,
    CovarianceMode,
    EmConfig,
    MetricConfig,
    Normalization,
    OptConfig,
    SynthConfig,
    TransformConfig,
)
from src.saliency_gmm.data_io import MapFormat
from src.saliency_gmm.metrics import METRIC_NAMES
from src.saliency_gmm.pipeline import create_pipeline, format_result
from src.saliency_gmm.utils import ParseUtils

logger = logging.getLogger(__name__)

DEFAULT_METRICS = "cc,sim,kl,emd,nss,auc-judd,auc-borji,ig"


def configure_logging() -> None:
    """stderr handler plus an optional file handler; stdout carries command output"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if Config.LOG_FILE:
        handlers.append(logging.FileHandler(Config.LOG_FILE))
    logging.basicConfig(
        level=getattr(logging, Config.LOG_LEVEL, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
    )


def _add_grid_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--grid', default='6x6', help='Anchor grid as HxW cells')
    parser.add_argument('--layout', choices=[m.value for m in AnchorLayout], default='square',
                        help='Anchor layout')
    parser.add_argument('--cov', choices=[m.value for m in CovarianceMode], default='diag',
                        help='Covariance structure')
    parser.add_argument('--gt-threshold', type=float, default=0.2, help='Component threshold G_t')


def _add_opt_arguments(parser: argparse.ArgumentParser, lr: float, epochs: int) -> None:
    parser.add_argument('--lr', type=float, default=lr, help='Learning rate')
    parser.add_argument('--epochs', type=int, default=epochs, help='Gradient steps (direct-fit) or epochs')
    parser.add_argument('--batch', type=int, default=1, help='Images per update step')
    parser.add_argument('--momentum', type=float, default=0.9, help='Momentum coefficient')


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=argparse.SUPPRESS, help='Seed (default: SGMM_SEED)')
    common.add_argument('--threads', type=int, default=argparse.SUPPRESS, help='Worker threads (default: SGMM_THREADS)')
    common.add_argument('--out', '-o', type=Path, default=argparse.SUPPRESS, help='Output file or directory')

    parser = argparse.ArgumentParser(
        description="Gaussian-mixture eye-fixation maps: fit, render, learn, evaluate",
        parents=[common],
    )
    commands = parser.add_subparsers(dest='command', required=True)

    synth = commands.add_parser('synth', parents=[common], help='Generate a synthetic dataset')
    synth.add_argument('--images', type=int, default=50, help='Number of images')
    synth.add_argument('--canvas', default='640x480', help='Canvas as WIDTHxHEIGHT')
    synth.add_argument('--points', type=int, default=460, help='Fixations per image')
    synth.add_argument('--sigma', type=float, default=19.0, help='Ground-truth blur sigma')

    fit = commands.add_parser('fit', parents=[common], help='Fit a GMM to fixation points')
    fit.add_argument('inputs', nargs='+', type=Path, help='Fixation files (CSV or JSON)')
    fit.add_argument('--components', '-c', type=int, default=20, help='Number of components')
    fit.add_argument('--cov', choices=[m.value for m in CovarianceMode], default='diag')
    fit.add_argument('--max-iter', type=int, default=200)
    fit.add_argument('--n-init', type=int, default=4)

    render = commands.add_parser('render', parents=[common], help='Render GMM files to maps')
    render.add_argument('inputs', nargs='+', type=Path, help='GMM parameter files')
    render.add_argument('--gt-threshold', type=float, default=0.2, help='Component threshold G_t')
    render.add_argument('--normalize', choices=[m.value for m in Normalization], default='none')
    render.add_argument('--format', choices=[m.value for m in MapFormat], default=None)
    render.add_argument('--smooth', type=float, default=0.0,
                        help='Convolve each component with a Gaussian of this sigma (pixels), e.g. 19 to match blur')

    blur = commands.add_parser('blur', parents=[common], help='Blur fixation points into ground-truth maps')
    blur.add_argument('inputs', nargs='+', type=Path, help='Fixation files')
    blur.add_argument('--sigma', type=float, default=19.0, help='Gaussian sigma in pixels')
    blur.add_argument('--normalize', choices=[m.value for m in Normalization], default='none')
    blur.add_argument('--format', choices=[m.value for m in MapFormat], default=None)

    direct = commands.add_parser('direct-fit', parents=[common], help='Learn free GMM parameters for one map')
    direct.add_argument('gt', type=Path, help='Ground-truth map')
    direct.add_argument('--trace', type=Path, default=None, help='Write the loss trace as JSON')
    _add_grid_arguments(direct)
    _add_opt_arguments(direct, lr=1e-2, epochs=500)

    train = commands.add_parser('train-toy', parents=[common], help='Train the tiny predictor')
    train.add_argument('gt', nargs='+', type=Path, help='Ground-truth maps')
    train.add_argument('--features', nargs='+', type=Path, default=None,
                       help='Feature images (default: the ground-truth maps)')
    _add_grid_arguments(train)
    _add_opt_arguments(train, lr=1e-3, epochs=20)

    pred = commands.add_parser('predict', parents=[common], help='Predict GMMs with a trained predictor')
    pred.add_argument('checkpoint', type=Path, help='Predictor checkpoint')
    pred.add_argument('features', nargs='+', type=Path, help='Feature images')
    _add_grid_arguments(pred)

    evaluate = commands.add_parser('evaluate', parents=[common], help='Score predicted maps')
    evaluate.add_argument('pred', nargs='+', type=Path, help='Predicted maps')
    evaluate.add_argument('--gt', nargs='+', type=Path, default=None, help='Ground-truth maps')
    evaluate.add_argument('--points', nargs='+', type=Path, default=None, help='Fixation files')
    evaluate.add_argument('--negatives', nargs='+', type=Path, default=None,
                          help='Fixations from other images for sAUC')
    evaluate.add_argument('--metrics', default=DEFAULT_METRICS,
                          help=f"Comma-separated subset of {','.join(METRIC_NAMES)}")
    evaluate.add_argument('--splits', type=int, default=100, help='Splits for Borji and shuffled AUC')

    sub = commands.add_parser('subsample', parents=[common], help='Keep a fraction of the fixations')
    sub.add_argument('input', type=Path, help='Fixation file')
    sub.add_argument('--ratio', type=float, default=0.7, help='Fraction in (0, 1]')

    sweep = commands.add_parser('sweep', parents=[common], help='Fidelity over component counts and thresholds')
    sweep.add_argument('inputs', nargs='+', type=Path, help='Fixation files')
    sweep.add_argument('--components', default='3,5,10,20', help='Comma-separated component counts')
    sweep.add_argument('--cov', default='diag', help='Comma-separated covariance modes')
    sweep.add_argument('--thresholds', default='', help='Comma-separated G_t values')
    sweep.add_argument('--sigma', type=float, default=19.0)

    args = parser.parse_args(argv)
    # global flags may appear before or after the subcommand
    for name in ('seed', 'threads', 'out'):
        if not hasattr(args, name):
            setattr(args, name, None)
    return args


def _require_out(args: argparse.Namespace) -> Path:
    if args.out is None:
        raise ValueError(f"{args.command} requires --out")
    return args.out


def run_command(args: argparse.Namespace) -> dict:
    """Dispatch parsed arguments to the pipeline"""
    pipeline = create_pipeline(args.threads, args.seed)
    seed = pipeline.seed
    command = args.command

    if command == 'synth':
        width, height = ParseUtils.parse_canvas(args.canvas)
        cfg = SynthConfig(n_images=args.images, canvas=(width, height), points_per_image=args.points,
                          blur_sigma=args.sigma, seed=seed)
        return pipeline.synth(_require_out(args), cfg)
    if command == 'fit':
        em = EmConfig(max_iter=args.max_iter, n_init=args.n_init, seed=seed)
        return pipeline.fit(args.inputs, args.components, CovarianceMode(args.cov), _require_out(args), em)
    if command == 'render':
        fmt = MapFormat(args.format) if args.format else None
        return pipeline.render(args.inputs, _require_out(args), args.gt_threshold,
                               Normalization(args.normalize), fmt, args.smooth)
    if command == 'blur':
        fmt = MapFormat(args.format) if args.format else None
        return pipeline.blur(args.inputs, _require_out(args), args.sigma, Normalization(args.normalize), fmt)
    if command in ('direct-fit', 'train-toy', 'predict'):
        grid = ParseUtils.parse_grid(args.grid)
        layout = AnchorLayout(args.layout)
        tcfg = TransformConfig(mode=CovarianceMode(args.cov))
        if command == 'predict':
            return pipeline.predict(args.checkpoint, args.features, grid, layout, tcfg, _require_out(args))
        opt = OptConfig(lr=args.lr, epochs=args.epochs, batch=args.batch, momentum=args.momentum, seed=seed)
        if command == 'direct-fit':
            return pipeline.direct_fit(args.gt, grid, layout, tcfg, opt, _require_out(args),
                                       args.gt_threshold, args.trace)
        return pipeline.train_toy(args.gt, grid, layout, tcfg, opt, _require_out(args),
                                  args.features, args.gt_threshold)
    if command == 'evaluate':
        metrics = ParseUtils.parse_list(args.metrics, str)
        cfg = MetricConfig(auc_splits=args.splits, seed=seed)
        return pipeline.evaluate(args.pred, metrics, args.out, args.gt, args.points, args.negatives, cfg)
    if command == 'subsample':
        return pipeline.subsample(args.input, args.ratio, _require_out(args))
    if command == 'sweep':
        components = ParseUtils.parse_list(args.components, int)
        modes = [CovarianceMode(mode) for mode in ParseUtils.parse_list(args.cov, str)]
        thresholds = ParseUtils.parse_list(args.thresholds, float)
        return pipeline.sweep(args.inputs, components, modes, thresholds, args.out, args.sigma,
                              EmConfig(seed=seed))
    raise ValueError(f"unknown command {command}")


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    configure_logging()
    if not Config.validate_config():
        logger.error("Invalid SGMM_LOG / SGMM_THREADS environment values")
        return 2
    try:
        args = parse_arguments(argv)
        result = run_command(args)
    except KeyboardInterrupt:
        logger.warning("Operation cancelled by user.")
        return 1
    except ValueError as e:
        # configuration models reject bad flag values
        logger.error(f"Invalid arguments: {e}")
        return 2

    print(format_result(result))
    return int(result["exit_code"])


if __name__ == "__main__":
    sys.exit(main())
