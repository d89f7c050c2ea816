#!/usr/bin/env python3
"""
Unit tests for the nmsparse command line tool.
"""

import io
import json
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from nmsparse.cli import EXIT_CONFIG, EXIT_INPUT, EXIT_OK, build_parser, main
from nmsparse.manifest import RunManifest
from nmsparse.tensor_core import load_dense, load_weights


def run_cli(*argv):
    """Run main() and return (exit code, stdout, stderr)."""
    with patch("sys.stdout", new_callable=io.StringIO) as out, patch("sys.stderr", new_callable=io.StringIO) as err:
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


class CliTestCase(unittest.TestCase):
    """Synthesizes a small weight/calibration pair in a temporary directory."""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.weights = self.tmp / "layer.dwt"
        self.calib = self.tmp / "calib.dwt"
        code, _, _ = run_cli("synth", "--rows", 8, "--cols", 256, "--outlier-cols", 4,
                             "--outlier-scale", 10, "--seed", 1, "--output", self.weights)
        self.assertEqual(code, EXIT_OK)
        code, _, _ = run_cli("synth", "--kind", "calib", "--rows", 64, "--cols", 256, "--outlier-cols", 4,
                             "--outlier-scale", 10, "--seed", 2, "--output", self.calib)
        self.assertEqual(code, EXIT_OK)

    def tearDown(self):
        self._tmp.cleanup()

    def prune(self, *extra):
        return run_cli("prune", self.weights, "--calib", self.calib, "--output-dir", self.tmp / "out", *extra)


class TestParser(unittest.TestCase):
    """Test the argument parser."""

    def test_subcommands(self):
        """Pipeline flags parse onto the prune command."""
        parser = build_parser()
        args = parser.parse_args(["prune", "a.dwt", "--calib", "c.dwt", "--pattern", "8:16", "--equalize"])
        self.assertEqual(args.command, "prune")
        self.assertEqual(args.pattern, "8:16")
        self.assertTrue(args.equalize)
        self.assertIsNone(args.reconstruct)
        self.assertEqual(args.jobs, 1)

    def test_seed_flags(self):
        """Commands that draw random numbers take --seed; prune has none."""
        parser = build_parser()
        self.assertEqual(parser.parse_args(["analyze", "--seed", "3"]).seed, 3)
        self.assertEqual(parser.parse_args(["ablate", "--seed", "4"]).seed, 4)
        self.assertEqual(parser.parse_args(["synth", "--rows", "1", "--cols", "4", "--seed", "5",
                                            "--output", "x.dwt"]).seed, 5)
        with patch("sys.stderr", new_callable=io.StringIO):
            with self.assertRaises(SystemExit):
                parser.parse_args(["prune", "a.dwt", "--calib", "c.dwt", "--seed", "1"])

    def test_command_required(self):
        """A subcommand is mandatory."""
        with patch("sys.stderr", new_callable=io.StringIO):
            with self.assertRaises(SystemExit):
                build_parser().parse_args([])


class TestSynthInspect(CliTestCase):
    """Test fixture generation and header inspection."""

    def test_synth_is_seeded(self):
        """The same seed writes the same file."""
        again = self.tmp / "again.dwt"
        run_cli("synth", "--rows", 8, "--cols", 256, "--outlier-cols", 4,
                "--outlier-scale", 10, "--seed", 1, "--output", again)
        self.assertEqual(again.read_bytes(), self.weights.read_bytes())

    def test_inspect_dense(self):
        """DWT1 headers print as JSON."""
        code, out, _ = run_cli("inspect", self.weights)
        self.assertEqual(code, EXIT_OK)
        info = json.loads(out)
        self.assertEqual(info["format"], "DWT1")
        self.assertEqual((info["rows"], info["cols"]), (8, 256))
        self.assertEqual(info["dtype"], "float32")
        self.assertEqual(info["file_bytes"], 13 + 8 * 256 * 4)

    def test_inspect_sparse(self):
        """NMS1 headers list both patterns and the stream sizes."""
        self.prune("--salient", "8:256")
        code, out, _ = run_cli("inspect", self.tmp / "out" / "layer.nms1")
        self.assertEqual(code, EXIT_OK)
        info = json.loads(out)
        self.assertEqual(info["format"], "NMS1")
        self.assertEqual(info["residual_pattern"], "2:4")
        self.assertEqual(info["salient_pattern"], "8:256")
        self.assertEqual(info["file_bytes"], (self.tmp / "out" / "layer.nms1").stat().st_size)

    def test_inspect_corrupt(self):
        """A corrupt NMS1 file exits 1."""
        bad = self.tmp / "bad.nms1"
        bad.write_bytes(b"NMS1\x01\x00")
        code, _, err = run_cli("inspect", bad)
        self.assertEqual(code, EXIT_INPUT)
        self.assertIn("error:", err)


class TestPruneEval(CliTestCase):
    """Test pruning files and evaluating the results."""

    def test_prune_writes_file_and_manifest(self):
        """prune writes one NMS1 file and a manifest that reads back."""
        report = self.tmp / "run.json"
        code, out, _ = self.prune("--pattern", "8:16", "--salient", "4:256", "--variance-correct",
                                  "--report", report)
        self.assertEqual(code, EXIT_OK)
        self.assertIn("layer.dwt", out)
        self.assertTrue((self.tmp / "out" / "layer.nms1").exists())

        manifest = RunManifest.from_json(report.read_text())
        self.assertEqual(str(manifest.config.residual_shape), "8:16")
        self.assertEqual(str(manifest.config.salient_shape), "4:256")
        self.assertEqual(len(manifest.layers), 1)
        metrics = manifest.layers[0]
        self.assertAlmostEqual(metrics.residual_fraction + metrics.salient_fraction, metrics.kept_fraction)
        self.assertAlmostEqual(metrics.salient_fraction, 4 / 256)

    def test_eval_after_prune(self):
        """A reconstructed 2:4 layer has a small, non-zero output error."""
        self.prune("--reconstruct", "--max-iters", 20)
        code, out, _ = run_cli("eval", self.tmp / "out" / "layer.nms1", "--dense", self.weights,
                               "--calib", self.calib, "--json")
        self.assertEqual(code, EXIT_OK)
        result = json.loads(out)
        self.assertGreater(result["relative_error"], 0.0)
        self.assertLess(result["relative_error"], 1.0)
        self.assertEqual(result["kept_fraction"], 0.5)
        self.assertEqual(result["storage"]["residual_bits_per_block"], 3)

    def test_dense_pattern_is_lossless(self):
        """4:4 keeps every weight, so the output error is exactly zero."""
        self.assertEqual(self.prune("--pattern", "4:4")[0], EXIT_OK)
        code, out, _ = run_cli("eval", self.tmp / "out" / "layer.nms1", "--dense", self.weights,
                               "--calib", self.calib, "--json")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(json.loads(out)["relative_error"], 0.0)

    def test_parallel_jobs(self):
        """Outputs and manifest order do not depend on the job count."""
        sources = [self.weights]
        for seed in (9, 10, 11):
            extra = self.tmp / f"layer{seed}.dwt"
            run_cli("synth", "--rows", 4, "--cols", 256, "--outlier-cols", 2, "--outlier-scale", 5,
                    "--seed", seed, "--output", extra)
            sources.append(extra)
        flags = ("--pattern", "8:16", "--salient", "16:256", "--equalize", "--variance-correct",
                 "--reconstruct", "--max-iters", 20, "--json")

        manifests = {}
        for jobs in (1, 4):
            code, out, _ = run_cli("prune", *sources, "--calib", self.calib,
                                   "--output-dir", self.tmp / f"jobs{jobs}", "--jobs", jobs, *flags)
            self.assertEqual(code, EXIT_OK)
            manifests[jobs] = json.loads(out)["layers"]

        self.assertEqual([Path(m["input"]).name for m in manifests[4]], [p.name for p in sources])
        for source in sources:
            name = source.with_suffix(".nms1").name
            serial = (self.tmp / "jobs1" / name).read_bytes()
            self.assertEqual((self.tmp / "jobs4" / name).read_bytes(), serial, name)

        def stable(layer):
            return {k: v for k, v in layer.items() if k not in ("output", "wall_time_s")}

        self.assertEqual([stable(m) for m in manifests[1]], [stable(m) for m in manifests[4]])

    def test_repeated_runs_are_byte_identical(self):
        """Pruning the same inputs twice writes the same bytes."""
        flags = ("--pattern", "2:4", "--salient", "8:256", "--variance-correct", "--reconstruct", "--max-iters", 10)
        self.assertEqual(self.prune(*flags)[0], EXIT_OK)
        first = (self.tmp / "out" / "layer.nms1").read_bytes()
        self.assertEqual(self.prune(*flags)[0], EXIT_OK)
        self.assertEqual((self.tmp / "out" / "layer.nms1").read_bytes(), first)

    def test_config_file_with_override(self):
        """Flags override values from the config file."""
        cfg = self.tmp / "cfg.json"
        cfg.write_text(json.dumps({"schema": "v1", "residual_shape": "8:16", "scorer": "magnitude"}))
        code, out, _ = self.prune("--config", cfg, "--scorer", "ria", "--json")
        self.assertEqual(code, EXIT_OK)
        config = json.loads(out)["config"]
        self.assertEqual(config["residual_shape"], "8:16")
        self.assertEqual(config["scorer"], "ria")

    def test_decode(self):
        """Decoding restores the kept weights exactly and zeros the rest."""
        self.prune("--salient", "16:256")
        dense_out = self.tmp / "decoded.dwt"
        code, _, _ = run_cli("decode", self.tmp / "out" / "layer.nms1", "--output", dense_out)
        self.assertEqual(code, EXIT_OK)
        decoded = load_dense(dense_out)
        original = load_weights(self.weights).data
        self.assertEqual(decoded.shape, original.shape)
        kept = decoded != 0
        self.assertEqual(kept.sum(), 8 * 128 + 8 * 16)
        np.testing.assert_array_equal(decoded[kept], original[kept])


class TestExitCodes(CliTestCase):
    """Test the documented exit codes."""

    def test_bad_pattern(self):
        """N > M is a configuration error."""
        code, _, err = self.prune("--pattern", "5:4")
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("invalid configuration", err)

    def test_bad_salient(self):
        """Salient shapes outside K:256 are configuration errors."""
        self.assertEqual(self.prune("--salient", "5:256")[0], EXIT_CONFIG)

    def test_missing_file(self):
        """A missing input exits 1 with a message on stderr."""
        code, _, err = run_cli("eval", self.tmp / "nope.nms1", "--dense", self.weights, "--calib", self.calib)
        self.assertEqual(code, EXIT_INPUT)
        self.assertTrue(err.startswith("error:"))

    def test_shape_mismatch(self):
        """Calibration with the wrong width exits 1."""
        narrow = self.tmp / "narrow.dwt"
        run_cli("synth", "--kind", "calib", "--rows", 16, "--cols", 128, "--output", narrow)
        self.assertEqual(run_cli("prune", self.weights, "--calib", narrow)[0], EXIT_INPUT)

    def test_bad_log_level(self):
        """An unknown log level is a configuration error."""
        self.assertEqual(run_cli("--log-level", "chatty", "inspect", self.weights)[0], EXIT_CONFIG)

    def test_ablate_needs_both_files(self):
        """--weights without --calib is a configuration error."""
        self.assertEqual(run_cli("ablate", "--weights", self.weights)[0], EXIT_CONFIG)

    def test_bad_synth_arguments(self):
        """Out-of-range fixture arguments are configuration errors, not input errors."""
        output = self.tmp / "bad.dwt"
        code, _, err = run_cli("synth", "--rows", 4, "--cols", 16, "--outlier-scale", 0.5, "--output", output)
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("outlier_scale", err)
        code, _, _ = run_cli("synth", "--rows", 4, "--cols", 16, "--outlier-cols", 17, "--output", output)
        self.assertEqual(code, EXIT_CONFIG)
        self.assertFalse(output.exists())

    def test_unstructured_layout_too_wide(self):
        """A row-wide salient block that overflows the NMS1 header exits 2 without writing."""
        wide = self.tmp / "wide.dwt"
        wide_calib = self.tmp / "wide_calib.dwt"
        run_cli("synth", "--rows", 1, "--cols", 65792, "--output", wide)
        run_cli("synth", "--kind", "calib", "--rows", 2, "--cols", 65792, "--output", wide_calib)
        code, _, err = run_cli("prune", wide, "--calib", wide_calib, "--output-dir", self.tmp / "wide",
                               "--salient", "4:256", "--salient-layout", "unstructured")
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("65535", err)
        self.assertFalse((self.tmp / "wide" / "wide.nms1").exists())


class TestAnalyzeAblate(unittest.TestCase):
    """Test the analyze and ablate commands."""

    def test_verify_superset_summary(self):
        """The superset and dominance checks print a one-line summary."""
        code, out, _ = run_cli("analyze", "--verify-superset", "--blocks", 500)
        self.assertEqual(code, EXIT_OK)
        self.assertIn(
            "1296/1296 stacked patterns valid, dominance holds on 12870-pattern exhaustive check "
            "(500 random blocks)",
            out,
        )

    def test_pattern_table_json(self):
        """The JSON table carries counts and bits per block."""
        code, out, _ = run_cli("analyze", "--patterns", "2:4,8:16,4:256", "--json")
        self.assertEqual(code, EXIT_OK)
        rows = {row["pattern"]: row for row in json.loads(out)["patterns"]}
        self.assertEqual(rows["2:4"]["config_count"], 6)
        self.assertEqual(rows["8:16"]["bits_per_block"], 14)
        self.assertEqual(rows["4:256"]["bits_per_block"], 28)

    def test_bad_pattern_list(self):
        """An unparsable pattern list exits 2."""
        self.assertEqual(run_cli("analyze", "--patterns", "2:x")[0], EXIT_CONFIG)

    def test_ablate_synthetic(self):
        """The ablation ladder runs on a synthetic fixture."""
        code, out, _ = run_cli("ablate", "--rows", 8, "--cols", 256, "--samples", 64,
                               "--max-iters", 10, "--json")
        self.assertEqual(code, EXIT_OK)
        rows = json.loads(out)["rows"]
        self.assertEqual(rows[0]["name"], "magnitude")
        self.assertEqual(len(rows), 7)
        for row in rows:
            self.assertEqual(row["kept_fraction"], 0.5)


if __name__ == "__main__":
    unittest.main()
