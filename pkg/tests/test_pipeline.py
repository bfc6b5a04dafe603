#!/usr/bin/env python3
"""
Tests for the command orchestrator and the command-line entry point
"""

import io
import json
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path
import sys
import os

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from main import main, parse_arguments
from src.saliency_gmm.config import (
    AnchorLayout,
    CovarianceMode,
    EmConfig,
    MetricConfig,
    Normalization,
    OptConfig,
    RenderConfig,
    SynthConfig,
    TransformConfig,
)
from src.saliency_gmm.core import DivergenceDetected, GmmParams, ParseError
from src.saliency_gmm.data_io import load_checkpoint, load_fixation_points, load_gmm, load_map, save_gmm, save_map
from src.saliency_gmm.datasets import synth_dataset
from src.saliency_gmm.gmm_fit import fit_gmm
from src.saliency_gmm.metrics import cc
from src.saliency_gmm.pipeline import SaliencyPipeline, _error_result, create_pipeline, format_result
from src.saliency_gmm.render import blur_fixations, convolve_gmm, render_map
from src.saliency_gmm.utils import HashUtils

SLOW = os.getenv("SGMM_SLOW_TESTS") == "1"


class PipelineTestCase(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.pipeline = create_pipeline(threads=2, seed=0)

    def tearDown(self):
        self._tmp.cleanup()

    def synth_small(self, n_images: int = 2) -> Path:
        out = self.tmp / "data"
        cfg = SynthConfig(n_images=n_images, canvas=(64, 48), points_per_image=100,
                          cluster_var_range=(4.0, 25.0), blur_sigma=3.0, seed=0)
        result = self.pipeline.synth(out, cfg)
        self.assertEqual(result["status"], "success")
        return out


class TestErrorResults(unittest.TestCase):
    """Test the error dictionary shape"""

    def test_exit_codes(self):
        """Test library, validation and unexpected failures"""
        cases = [
            (ParseError(3, "bad row"), 2),
            (DivergenceDetected("loss is nan"), 4),
            (ValueError("ratio must be in (0, 1]"), 2),
            (RuntimeError("boom"), 1),
        ]
        for exc, code in cases:
            with self.subTest(exc=type(exc).__name__):
                result = _error_result("fit", exc)
                self.assertEqual(result["status"], "error")
                self.assertEqual(result["command"], "fit")
                self.assertEqual(result["exit_code"], code)
                self.assertIn(str(exc), result["message"])

    def test_format_result(self):
        """Test results render as JSON, paths included"""
        text = format_result({"status": "success", "out": Path("a/b.json"), "exit_code": 0})
        self.assertEqual(json.loads(text)["out"], str(Path("a/b.json")))

    def test_thread_count_validated(self):
        """Test a zero thread count is refused"""
        with self.assertRaises(ValueError):
            SaliencyPipeline(threads=0)


class TestDataCommands(PipelineTestCase):
    """Test synth, subsample and blur"""

    def test_synth_writes_three_files_per_image(self):
        """Test points, ground truth and true mixture files"""
        out = self.synth_small()
        for index in range(2):
            stem = out / f"image_{index:03d}"
            points = load_fixation_points(f"{stem}.csv")
            self.assertEqual(len(points), 100)
            self.assertEqual(load_map(f"{stem}.gt.f64").values.shape, (48, 64))
            self.assertEqual(load_gmm(f"{stem}.truth.json").canvas_width, 64)

    def test_synth_matches_library(self):
        """Test files carry the same points as the generator"""
        out = self.synth_small(n_images=1)
        expected = synth_dataset(SynthConfig(n_images=1, canvas=(64, 48), points_per_image=100,
                                             cluster_var_range=(4.0, 25.0),
                                             blur_sigma=3.0, seed=0))[0][0]
        np.testing.assert_array_equal(load_fixation_points(out / "image_000.csv").points, expected.points)

    def test_subsample(self):
        """Test the kept count and output file"""
        out = self.synth_small(n_images=1)
        result = self.pipeline.subsample(out / "image_000.csv", 0.5, self.tmp / "half.csv")
        self.assertEqual(result["status"], "success")
        self.assertEqual(result["kept"], 50)
        self.assertEqual(len(load_fixation_points(self.tmp / "half.csv")), 50)

    def test_subsample_bad_ratio(self):
        """Test validation errors exit with 2"""
        out = self.synth_small(n_images=1)
        result = self.pipeline.subsample(out / "image_000.csv", 1.5, self.tmp / "half.csv")
        self.assertEqual(result["status"], "error")
        self.assertEqual(result["exit_code"], 2)

    def test_blur_matches_ground_truth(self):
        """Test the blur command reproduces the synthetic ground truth"""
        out = self.synth_small(n_images=1)
        result = self.pipeline.blur([out / "image_000.csv"], self.tmp / "blurred.f64", sigma=3.0)
        self.assertEqual(result["status"], "success")
        np.testing.assert_allclose(load_map(self.tmp / "blurred.f64").values,
                                   load_map(out / "image_000.gt.f64").values, rtol=1e-12, atol=1e-15)


class TestFitRenderEvaluate(PipelineTestCase):
    """Test the fit, render and evaluate chain"""

    def test_chain(self):
        """Test every stage on two small images"""
        data = self.synth_small()
        inputs = [data / "image_000.csv", data / "image_001.csv"]

        fitted = self.pipeline.fit(inputs, 3, CovarianceMode.DIAGONAL, self.tmp / "gmms")
        self.assertEqual(fitted["status"], "success")
        gmm_paths = [Path(path) for path in fitted["outputs"]]
        self.assertEqual([path.name for path in gmm_paths], ["image_000.gmm.json", "image_001.gmm.json"])
        gmm = load_gmm(gmm_paths[0])
        self.assertEqual(gmm.n_components, 3)
        self.assertTrue(np.all(gmm.covs[:, 2] == 0.0))

        rendered = self.pipeline.render(gmm_paths, self.tmp / "maps", smooth_sigma=3.0)
        self.assertEqual(rendered["status"], "success")
        map_paths = [Path(path) for path in rendered["outputs"]]
        self.assertEqual(load_map(map_paths[0]).values.shape, (48, 64))

        scores_path = self.tmp / "scores.jsonl"
        cfg = MetricConfig(seed=0)
        evaluated = self.pipeline.evaluate(
            map_paths, ["cc", "nss", "auc-judd"], scores_path,
            gt_paths=[data / "image_000.gt.f64", data / "image_001.gt.f64"], points_paths=inputs, cfg=cfg,
        )
        self.assertEqual(evaluated["status"], "success")
        records = evaluated["records"]
        self.assertEqual(len(records), 6)
        self.assertEqual({record["image"] for record in records}, {"image_000", "image_001"})
        self.assertTrue(all(record["config_hash"] == HashUtils.config_hash(cfg) for record in records))
        lines = scores_path.read_text().splitlines()
        self.assertEqual([json.loads(line) for line in lines], records)
        cc_values = [record["value"] for record in records if record["metric"] == "cc"]
        self.assertTrue(all(value > 0.5 for value in cc_values))

    def test_render_smoothing(self):
        """Test --smooth renders the mixture convolved with an isotropic Gaussian"""
        gmm = GmmParams.from_arrays([0.6, 0.4], [[20.0, 15.0], [44.0, 30.0]],
                                    [[9.0, 4.0, 1.0], [2.0, 6.0, 0.0]], 64, 48)
        source = self.tmp / "mix.gmm.json"
        save_gmm(gmm, source)
        result = self.pipeline.render([source], self.tmp / "smooth.f64", threshold_gt=0.0, smooth_sigma=3.0)
        self.assertEqual(result["status"], "success")
        expected = render_map(convolve_gmm(gmm, 3.0), RenderConfig(width=64, height=48, threshold_gt=0.0))
        np.testing.assert_array_equal(load_map(self.tmp / "smooth.f64").values, expected.values)

        bad = self.pipeline.render([source], self.tmp / "bad.f64", smooth_sigma=-1.0)
        self.assertEqual(bad["exit_code"], 2)

    def test_single_input_writes_named_output(self):
        """Test a single input with a file suffix writes exactly that file"""
        data = self.synth_small(n_images=1)
        target = self.tmp / "model.json"
        result = self.pipeline.fit([data / "image_000.csv"], 2, CovarianceMode.FULL, target)
        self.assertEqual(result["outputs"], [str(target)])
        self.assertTrue(target.exists())

    def test_parse_error_exit_code(self):
        """Test malformed fixation files exit with 2"""
        path = self.tmp / "bad.csv"
        path.write_text("# 64,48\n1,2\nx,y\n")
        result = self.pipeline.fit([path], 2, CovarianceMode.DIAGONAL, self.tmp / "out.json")
        self.assertEqual(result["status"], "error")
        self.assertEqual(result["exit_code"], 2)
        self.assertIn("line 3", result["message"])

    def test_missing_file_exit_code(self):
        """Test unreadable inputs exit with 3"""
        result = self.pipeline.fit([self.tmp / "absent.csv"], 2, CovarianceMode.DIAGONAL, self.tmp / "out.json")
        self.assertEqual(result["exit_code"], 3)

    def test_unknown_metric(self):
        """Test unknown metric names are rejected"""
        path = self.tmp / "pred.f64"
        save_map(render_map(GmmParams.from_arrays([1.0], [[32.0, 24.0]], [[30.0, 30.0, 0.0]], 64, 48),
                            RenderConfig(width=64, height=48)), path)
        result = self.pipeline.evaluate([path], ["cc", "bogus"], gt_paths=[path])
        self.assertEqual(result["exit_code"], 2)
        self.assertIn("bogus", result["message"])

    def test_evaluate_count_mismatch(self):
        """Test mismatched prediction and ground-truth lists"""
        path = self.tmp / "pred.f64"
        save_map(render_map(GmmParams.from_arrays([1.0], [[32.0, 24.0]], [[30.0, 30.0, 0.0]], 64, 48),
                            RenderConfig(width=64, height=48)), path)
        result = self.pipeline.evaluate([path], ["cc"], gt_paths=[path, path])
        self.assertEqual(result["exit_code"], 2)


class TestLearningCommands(PipelineTestCase):
    """Test direct-fit, train-toy and predict"""

    def setUp(self):
        super().setUp()
        truth = GmmParams.from_arrays([0.6, 0.4], [[10.0, 12.0], [22.0, 20.0]],
                                      [[14.0, 12.0, 0.0], [16.0, 12.0, 0.0]], 32, 32)
        self.gt_path = self.tmp / "gt.f64"
        save_map(render_map(truth, RenderConfig(width=32, height=32, threshold_gt=0.0)), self.gt_path)

    def test_direct_fit(self):
        """Test the loss falls and the trace is written"""
        trace_path = self.tmp / "trace.json"
        result = self.pipeline.direct_fit(
            self.gt_path, (2, 2), AnchorLayout.SQUARE, TransformConfig(), OptConfig(lr=0.05, epochs=60),
            self.tmp / "fit.json", trace_path=trace_path,
        )
        self.assertEqual(result["status"], "success")
        self.assertLess(result["final_loss"], result["initial_loss"])
        self.assertEqual(result["raw_outputs"], 24)
        self.assertEqual(result["map_pixels"], 1024)
        self.assertEqual(len(json.loads(trace_path.read_text())["loss"]), 60)
        self.assertEqual(load_gmm(self.tmp / "fit.json").n_components, 4)

    def test_direct_fit_divergence_exit_code(self):
        """Test divergence exits with 4"""
        result = self.pipeline.direct_fit(
            self.gt_path, (2, 2), AnchorLayout.SQUARE, TransformConfig(),
            OptConfig(lr=0.05, epochs=5, divergence_threshold=1e-9), self.tmp / "fit.json",
        )
        self.assertEqual(result["status"], "error")
        self.assertEqual(result["exit_code"], 4)

    def test_train_then_predict(self):
        """Test a checkpoint is written and predictions load"""
        checkpoint = self.tmp / "model.ckpt"
        trained = self.pipeline.train_toy([self.gt_path, self.gt_path], (4, 4), AnchorLayout.SQUARE,
                                          TransformConfig(), OptConfig(lr=1e-3, epochs=2), checkpoint)
        self.assertEqual(trained["status"], "success")
        self.assertEqual(len(trained["epoch_losses"]), 3)
        self.assertEqual(load_checkpoint(checkpoint).parameters().size, 262)

        predicted = self.pipeline.predict(checkpoint, [self.gt_path], (4, 4), AnchorLayout.SQUARE,
                                          TransformConfig(), self.tmp / "pred.gmm.json")
        self.assertEqual(predicted["status"], "success")
        gmm = load_gmm(self.tmp / "pred.gmm.json")
        self.assertEqual(gmm.n_components, 16)
        self.assertAlmostEqual(float(gmm.weights.sum()), 1.0, delta=1e-9)

    def test_train_feature_count_mismatch(self):
        """Test feature and ground-truth lists must pair up"""
        result = self.pipeline.train_toy([self.gt_path], (2, 2), AnchorLayout.SQUARE, TransformConfig(),
                                         OptConfig(epochs=1), self.tmp / "model.ckpt",
                                         feature_paths=[self.gt_path, self.gt_path])
        self.assertEqual(result["exit_code"], 2)


class TestSweepAndFidelity(PipelineTestCase):
    """Test sweeps and mixture fidelity"""

    def test_sweep_records(self):
        """Test one fidelity record per configuration plus threshold counts"""
        data = self.synth_small(n_images=1)
        out = self.tmp / "sweep.jsonl"
        result = self.pipeline.sweep([data / "image_000.csv"], [2, 3], [CovarianceMode.DIAGONAL, CovarianceMode.FULL],
                                     thresholds=[0.0, 3.0], out=out, sigma=3.0)
        self.assertEqual(result["status"], "success")
        records = result["records"]
        self.assertEqual(len(records), 4 * 3)
        fidelity = [record for record in records if "threshold_gt" not in record]
        self.assertEqual(len(fidelity), 4)
        for record in fidelity:
            self.assertTrue({"mse", "kl", "cc", "sim", "nss"} <= set(record))
        counts = {(r["components"], r["cov"], r["threshold_gt"]): r["selected"] for r in records if "selected" in r}
        self.assertEqual(counts[(3, "full", 0.0)], 3)
        self.assertEqual(counts[(3, "full", 3.0)], 0)
        self.assertEqual(len(out.read_text().splitlines()), 12)

    def test_fidelity_on_small_sample(self):
        """Test twenty-component fits reproduce the blurred fixation map"""
        cfg = SynthConfig(n_images=3, seed=11)
        scores = [
            self.pipeline.fidelity(points, 20, CovarianceMode.DIAGONAL, sigma=19.0, em=EmConfig(seed=0))
            for points, _, _ in synth_dataset(cfg)
        ]
        self.assertGreaterEqual(np.mean([s["cc"] for s in scores]), 0.9)
        self.assertGreaterEqual(np.mean([s["sim"] for s in scores]), 0.75)
        self.assertLessEqual(np.mean([s["kl"] for s in scores]), 0.3)

    def test_fidelity_compares_at_blur_scale(self):
        """Test the fitted mixture is convolved with the ground-truth kernel before scoring"""
        points = synth_dataset(SynthConfig(n_images=1, seed=3))[0][0]
        em = EmConfig(seed=0)
        scores = self.pipeline.fidelity(points, 20, CovarianceMode.DIAGONAL, sigma=19.0, em=em)

        gmm = fit_gmm(points, 20, CovarianceMode.DIAGONAL, em)
        cfg = RenderConfig(width=640, height=480, threshold_gt=0.0, normalize=Normalization.SUM_TO_ONE)
        gt = blur_fixations(points, 19.0, cfg)
        self.assertAlmostEqual(scores["cc"], cc(render_map(convolve_gmm(gmm, 19.0), cfg), gt), places=12)
        self.assertGreater(scores["cc"], cc(render_map(gmm, cfg), gt))
        self.assertGreaterEqual(scores["cc"], 0.9)

    @unittest.skipUnless(SLOW, "set SGMM_SLOW_TESTS=1 to run")
    def test_fidelity_band_on_fifty_images(self):
        """Test CC, SIM and KL land in the band on at least 90% of images"""
        passing = 0
        for points, _, _ in synth_dataset(SynthConfig(n_images=50, seed=0)):
            s = self.pipeline.fidelity(points, 20, CovarianceMode.DIAGONAL, sigma=19.0, em=EmConfig(seed=0))
            passing += s["cc"] >= 0.95 and s["sim"] >= 0.80 and s["kl"] <= 0.15
        self.assertGreaterEqual(passing, 45)


class TestMain(unittest.TestCase):
    """Test the command-line entry point"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def run_main(self, argv):
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            code = main(argv)
        return code, buffer.getvalue()

    def test_global_flags_before_or_after_command(self):
        """Test --seed and --out parse on either side of the verb"""
        before = parse_arguments(["--seed", "3", "synth", "--out", "x"])
        after = parse_arguments(["synth", "--seed", "3", "--out", "x"])
        self.assertEqual((before.seed, before.out), (3, Path("x")))
        self.assertEqual((after.seed, after.out), (3, Path("x")))
        self.assertIsNone(parse_arguments(["synth"]).threads)

    def test_render_smooth_flag(self):
        """Test --smooth defaults to off and parses a sigma"""
        self.assertEqual(parse_arguments(["render", "a.gmm.json"]).smooth, 0.0)
        self.assertEqual(parse_arguments(["render", "a.gmm.json", "--smooth", "19"]).smooth, 19.0)

    def test_synth_then_fit(self):
        """Test successful commands exit with 0 and print the result"""
        data = self.tmp / "data"
        code, output = self.run_main(["synth", "--images", "1", "--canvas", "48x32", "--points", "30",
                                      "--sigma", "2", "--seed", "1", "--out", str(data)])
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(output)["images"], 1)
        code, output = self.run_main(["fit", str(data / "image_000.csv"), "-c", "2", "--cov", "full",
                                      "--out", str(self.tmp / "model.json")])
        self.assertEqual(code, 0)
        self.assertEqual(load_gmm(self.tmp / "model.json").n_components, 2)

    def test_missing_out(self):
        """Test commands needing --out exit with 2"""
        code, _ = self.run_main(["synth", "--images", "1"])
        self.assertEqual(code, 2)

    def test_bad_values(self):
        """Test invalid flag values exit with 2"""
        out = str(self.tmp / "data")
        for argv in (["synth", "--canvas", "0x10", "--out", out],
                     ["synth", "--images", "0", "--out", out],
                     ["direct-fit", "gt.f64", "--grid", "axb", "--out", out]):
            with self.subTest(argv=argv):
                code, _ = self.run_main(argv)
                self.assertEqual(code, 2)

    def test_unknown_choice(self):
        """Test argparse rejects unknown covariance modes"""
        with self.assertRaises(SystemExit) as ctx:
            parse_arguments(["fit", "a.csv", "--cov", "banana"])
        self.assertEqual(ctx.exception.code, 2)

    def test_io_error_exit_code(self):
        """Test a missing input exits with 3"""
        code, output = self.run_main(["render", str(self.tmp / "absent.json"), "--out", str(self.tmp / "m.f64")])
        self.assertEqual(code, 3)
        self.assertEqual(json.loads(output)["status"], "error")


if __name__ == '__main__':
    unittest.main()
