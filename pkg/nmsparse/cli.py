"""
Command line driver.

Exit codes
----------
0  success
1  malformed input (unreadable file, bad format, shape mismatch)
2  invalid configuration or pattern string
3  numerical failure
"""

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from . import __version__
from .codec import SparseEncodedTensor, decode_layer, encode
from .config import PipelineConfig
from .errors import ConfigError, FormatError, NumericalError, PatternError, ShapeError
from .flexibility import SHAPE_2_4, pattern_summary, verify_dominance, verify_superset
from .layer import PrunedLayer
from .log import configure_logging
from .manifest import LayerMetrics, RunManifest
from .patterns import PatternShape
from .pipeline import ablation_grid, output_error, run_pipeline_detailed
from .reconstruct import ReconstructionSettings
from .storage import metadata_bits_report
from .tensor_core import (
    CalibrationSet,
    WeightMatrix,
    decode_dense,
    load_calibration,
    load_weights,
    save_dense,
    synth_calibration,
    synth_outlier_matrix,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _print_json(data) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def _build_config(args) -> PipelineConfig:
    """Config file (if any) with command line flags on top."""
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {
        "residual_shape": args.pattern,
        "scorer": args.scorer,
        "use_equalization": args.equalize,
        "use_variance_correction": args.variance_correct,
        "reconstruct": args.reconstruct,
        "activation_power": args.activation_power,
        "epsilon": args.epsilon,
        "salient_layout": args.salient_layout,
    }
    if args.no_ria_activation:
        overrides["ria_activation"] = False
    if args.variance_kept_only:
        overrides["variance_includes_zeros"] = False
    if args.max_iters is not None:
        overrides["reconstruction"] = ReconstructionSettings(
            **{**cfg.reconstruction.to_dict(), "max_iters": args.max_iters}
        )
    cfg = cfg.with_overrides(**overrides)
    if args.salient is not None:
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), "salient_shape": args.salient})
    return cfg


def _layer_metrics(
    source: Path, target: Path, dense: WeightMatrix, calib: CalibrationSet, run, file_bytes: int, elapsed: float
) -> LayerMetrics:
    layer: PrunedLayer = run.layer
    report = metadata_bits_report(layer)
    elements = max(layer.rows * layer.cols, 1)
    recon = run.reconstruction
    return LayerMetrics(
        input=str(source),
        output=str(target),
        rows=layer.rows,
        cols=layer.cols,
        relative_error=output_error(dense, layer, calib),
        correction_factor=layer.correction_factor,
        residual_fraction=layer.residual_mask.kept_count / elements,
        salient_fraction=(layer.salient.count if layer.salient else 0) / elements,
        kept_fraction=layer.kept_fraction(),
        metadata_bits=report.residual_metadata_bits + report.salient_metadata_bits,
        metadata_bits_per_element=report.metadata_bits_per_element,
        file_bytes=file_bytes,
        wall_time_s=elapsed,
        initial_loss=recon.initial_loss if recon else None,
        final_loss=recon.final_loss if recon else None,
        iterations=recon.iterations if recon else None,
    )


def _prune_one(source: Path, output_dir: Optional[Path], calib: CalibrationSet, cfg: PipelineConfig) -> LayerMetrics:
    started = time.perf_counter()
    dense = load_weights(source)
    run = run_pipeline_detailed(dense, calib, cfg)
    target = (output_dir or source.parent) / (source.stem + ".nms1")
    file_bytes = encode(run.layer).write(target)
    logger.info("%s -> %s (%d bytes)", source, target, file_bytes)
    return _layer_metrics(source, target, dense, calib, run, file_bytes, time.perf_counter() - started)


def cmd_prune(args) -> int:
    """Prune DWT1 weight files into NMS1 files and write a manifest."""
    cfg = _build_config(args)
    started = time.perf_counter()
    calib = load_calibration(args.calib)
    output_dir = Path(args.output_dir) if args.output_dir else None
    if output_dir is not None:
        output_dir.mkdir(parents=True, exist_ok=True)
    sources = [Path(p) for p in args.weights]
    jobs = max(1, int(args.jobs))
    if jobs == 1 or len(sources) == 1:
        metrics = [_prune_one(source, output_dir, calib, cfg) for source in sources]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            metrics = list(pool.map(lambda s: _prune_one(s, output_dir, calib, cfg), sources))

    manifest = RunManifest(
        config=cfg,
        calibration=str(args.calib),
        layers=metrics,
        tool_version=__version__,
        wall_time_s=time.perf_counter() - started,
        created_at=datetime.now(timezone.utc).isoformat(),
    )
    if args.report:
        Path(args.report).write_text(manifest.to_json() + "\n", encoding="utf-8")
    if args.json:
        _print_json(manifest.to_dict())
    else:
        for m in metrics:
            print(f"{m.input} -> {m.output}: rel. error {m.relative_error:.6f}, "
                  f"kept {m.kept_fraction:.4f}, {m.metadata_bits_per_element:.4f} metadata bits/element")
    return EXIT_OK


def _parse_patterns(text: str) -> List[PatternShape]:
    return [PatternShape.parse(part) for part in text.split(",") if part.strip()]


def cmd_analyze_patterns(args) -> int:
    """Print configuration counts and bit costs, optionally with the superset check."""
    shapes = _parse_patterns(args.patterns)
    result: Dict = {"patterns": [pattern_summary(shape, args.stack) for shape in shapes]}
    if args.verify_superset:
        superset = verify_superset(SHAPE_2_4, 4)
        dominance = verify_dominance(args.blocks, args.seed, SHAPE_2_4, 4)
        result["superset"] = superset.to_dict()
        result["dominance"] = dominance.to_dict()
        result["summary"] = (
            f"{superset.valid_count}/{superset.stacked_count} stacked patterns valid, "
            f"dominance {'holds' if dominance.holds else 'FAILS'} on "
            f"{superset.outer_count}-pattern exhaustive check ({dominance.blocks} random blocks)"
        )
    if args.json:
        _print_json(result)
        return EXIT_OK

    print(f"{'pattern':>8} {'configs':>10} {'stacked':>10} {'bits/block':>10} {'bits/elem':>10}")
    for row in result["patterns"]:
        stacked = row["stacked_config_count"]
        stacked_text = str(stacked) if stacked else "-"
        print(
            f"{row['pattern']:>8} {row['config_count']:>10} {stacked_text:>10} "
            f"{row['bits_per_block']:>10} {row['bits_per_element']:>10.4f}"
        )
    if "summary" in result:
        print(result["summary"])
    return EXIT_OK


def cmd_eval(args) -> int:
    """Compare an NMS1 file against its dense original on calibration data."""
    layer = decode_layer(SparseEncodedTensor.read(args.sparse))
    dense = load_weights(args.dense)
    calib = load_calibration(args.calib)
    if dense.shape != layer.residual.shape:
        raise ShapeError(f"Dense shape {dense.shape} differs from sparse shape {layer.residual.shape}")
    report = metadata_bits_report(layer)
    elements = max(layer.rows * layer.cols, 1)
    result = {
        "relative_error": output_error(dense, layer, calib),
        "residual_fraction": layer.residual_mask.kept_count / elements,
        "salient_fraction": (layer.salient.count if layer.salient else 0) / elements,
        "kept_fraction": layer.kept_fraction(),
        "correction_factor": layer.correction_factor,
        "storage": report.to_dict(),
    }
    if args.json:
        _print_json(result)
    else:
        print(f"relative output error  {result['relative_error']:.6g}")
        print(f"kept fraction          {result['kept_fraction']:.6f} "
              f"(residual {result['residual_fraction']:.6f}, salient {result['salient_fraction']:.6f})")
        print(f"metadata bits/element  {report.metadata_bits_per_element:.6f}")
        print(f"total bits/element     {report.total_bits_per_element:.6f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    """Print the header of a DWT1 or NMS1 file."""
    blob = Path(args.file).read_bytes()
    if blob[:4] == b"NMS1":
        data = SparseEncodedTensor.from_bytes(blob).header.to_dict()
    else:
        array = decode_dense(blob)
        data = {"format": "DWT1", "rows": array.shape[0], "cols": array.shape[1],
                "dtype": str(array.dtype), "file_bytes": len(blob)}
    _print_json(data)
    return EXIT_OK


def cmd_decode(args) -> int:
    """Convert an NMS1 file to a dense DWT1 file (residual plus salient)."""
    layer = decode_layer(SparseEncodedTensor.read(args.sparse))
    save_dense(args.output, layer.effective_weights(), layer.residual.dtype)
    return EXIT_OK


def cmd_synth(args) -> int:
    """Write a seeded synthetic weight or calibration DWT1 file."""
    if args.kind == "weights":
        data = synth_outlier_matrix(args.rows, args.cols, args.outlier_cols, args.outlier_scale, args.seed).data
    else:
        data = synth_calibration(args.rows, args.cols, args.outlier_cols, args.outlier_scale, args.seed).data
    save_dense(args.output, data, args.dtype)
    return EXIT_OK


def cmd_ablate(args) -> int:
    """Run the scorer/equalization/correction/reconstruction ladder on one layer."""
    cfg = _build_config(args)
    if args.weights:
        dense = load_weights(args.weights)
        calib = load_calibration(args.calib)
    else:
        dense = synth_outlier_matrix(args.rows, args.cols, args.outlier_cols, args.outlier_scale, args.seed)
        calib = synth_calibration(args.samples, args.cols, args.outlier_cols, args.outlier_scale, args.seed + 1)
    rows = ablation_grid(dense, calib, cfg)
    if args.json:
        _print_json({"config": cfg.to_dict(), "rows": [row.to_dict() for row in rows]})
        return EXIT_OK
    print(f"{'method':<18} {'rel. error':>12} {'factor':>8}")
    for row in rows:
        print(f"{row.name:<18} {row.relative_error:>12.6f} {row.correction_factor:>8.4f}")
    return EXIT_OK


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="PipelineConfig JSON file (schema v1)")
    parser.add_argument("--pattern", help="residual N:M pattern, N kept (e.g. 2:4, 8:16)")
    parser.add_argument("--salient", help="salient K:256 pattern (4:256, 8:256, 16:256) or none")
    parser.add_argument("--salient-layout", choices=("structured", "unstructured"))
    parser.add_argument("--scorer", choices=("magnitude", "ria"))
    parser.add_argument("--equalize", action="store_true", default=None)
    parser.add_argument("--variance-correct", action="store_true", default=None)
    parser.add_argument("--variance-kept-only", action="store_true",
                        help="compute the residual variance over kept values only")
    parser.add_argument("--reconstruct", action="store_true", default=None)
    parser.add_argument("--max-iters", type=int, help="reconstruction iteration limit")
    parser.add_argument("--activation-power", type=float)
    parser.add_argument("--no-ria-activation", action="store_true",
                        help="drop the activation factor from RIA scores")
    parser.add_argument("--epsilon", type=float)
    parser.add_argument("--json", action="store_true", help="print JSON instead of a table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmsparse", description="N:M semi-structured sparsification toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", help="overrides NMSPARSE_LOG")
    sub = parser.add_subparsers(dest="command", required=True)

    prune = sub.add_parser("prune", help="prune DWT1 weight files into NMS1 files")
    prune.add_argument("weights", nargs="+", help="DWT1 weight files")
    prune.add_argument("--calib", required=True, help="DWT1 calibration activations")
    prune.add_argument("--output-dir", help="directory for NMS1 files (default: next to the input)")
    prune.add_argument("--report", help="write the run manifest JSON here")
    prune.add_argument("--jobs", type=int, default=1)
    _add_pipeline_flags(prune)
    prune.set_defaults(handler=cmd_prune)

    analyze = sub.add_parser("analyze", help="pattern counts, bit costs and the 2:4 vs 8:16 checks")
    analyze.add_argument("--patterns", default="2:4,8:16")
    analyze.add_argument("--stack", type=int, default=16, help="stack smaller blocks to this width")
    analyze.add_argument("--verify-superset", action="store_true")
    analyze.add_argument("--blocks", type=int, default=10000, help="random blocks for the dominance check")
    analyze.add_argument("--seed", type=int, default=0)
    analyze.add_argument("--json", action="store_true")
    analyze.set_defaults(handler=cmd_analyze_patterns)

    evaluate = sub.add_parser("eval", help="output error and storage of an NMS1 file")
    evaluate.add_argument("sparse", help="NMS1 file")
    evaluate.add_argument("--dense", required=True, help="original DWT1 weights")
    evaluate.add_argument("--calib", required=True, help="DWT1 calibration activations")
    evaluate.add_argument("--json", action="store_true")
    evaluate.set_defaults(handler=cmd_eval)

    inspect = sub.add_parser("inspect", help="print a DWT1/NMS1 header")
    inspect.add_argument("file")
    inspect.set_defaults(handler=cmd_inspect)

    decode = sub.add_parser("decode", help="convert NMS1 to dense DWT1")
    decode.add_argument("sparse")
    decode.add_argument("--output", required=True)
    decode.set_defaults(handler=cmd_decode)

    synth = sub.add_parser("synth", help="write a seeded synthetic DWT1 fixture")
    synth.add_argument("--kind", choices=("weights", "calib"), default="weights")
    synth.add_argument("--rows", type=int, required=True, help="rows (samples for calib)")
    synth.add_argument("--cols", type=int, required=True)
    synth.add_argument("--outlier-cols", type=int, default=0)
    synth.add_argument("--outlier-scale", type=float, default=1.0)
    synth.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--output", required=True)
    synth.set_defaults(handler=cmd_synth)

    ablate = sub.add_parser("ablate", help="compare scorer and correction combinations on one layer")
    ablate.add_argument("--weights", help="DWT1 weights (synthetic fixture if omitted)")
    ablate.add_argument("--calib", help="DWT1 calibration, required with --weights")
    ablate.add_argument("--rows", type=int, default=64)
    ablate.add_argument("--cols", type=int, default=512)
    ablate.add_argument("--samples", type=int, default=256)
    ablate.add_argument("--outlier-cols", type=int, default=8)
    ablate.add_argument("--outlier-scale", type=float, default=10.0)
    ablate.add_argument("--seed", type=int, default=0)
    _add_pipeline_flags(ablate)
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def _run(handler: Callable, args) -> int:
    try:
        return handler(args)
    except (ConfigError, PatternError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FormatError, ShapeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging(args.log_level)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "ablate" and bool(args.weights) != bool(args.calib):
        print("error: --weights and --calib must be given together", file=sys.stderr)
        return EXIT_CONFIG
    return _run(args.handler, args)


if __name__ == "__main__":
    sys.exit(main())
