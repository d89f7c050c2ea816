"""
Example script demonstrating the nmsparse pipeline on a synthetic layer.

Run this script with:
    python example_pipeline.py
"""

import tempfile
from pathlib import Path

from nmsparse import (
    PipelineConfig,
    SparseEncodedTensor,
    decode_layer,
    encode,
    metadata_bits_report,
    output_error,
    run_pipeline,
    synth_calibration,
    synth_outlier_matrix,
)
from nmsparse.log import configure_logging

configure_logging("INFO")

# A 64x512 layer whose inputs have 8 outlier channels
weights = synth_outlier_matrix(64, 512, outlier_cols=8, outlier_scale=10.0, seed=0)
calib = synth_calibration(256, 512, outlier_cols=8, outlier_scale=10.0, seed=1)

configs = {
    "2:4 magnitude": PipelineConfig(scorer="magnitude"),
    "2:4 ria": PipelineConfig(),
    "8:16 ria": PipelineConfig(residual_shape="8:16"),
    "8:16 ria + 8:256 salient": PipelineConfig(residual_shape="8:16", salient_shape="8:256"),
    "8:16 full": PipelineConfig(
        residual_shape="8:16",
        salient_shape="8:256",
        use_equalization=True,
        use_variance_correction=True,
        reconstruct=True,
    ),
}

print(f"{'method':<28} {'rel. error':>10} {'kept':>7} {'meta bits/elem':>15}")
for name, cfg in configs.items():
    layer = run_pipeline(weights, calib, cfg)
    report = metadata_bits_report(layer)
    print(f"{name:<28} {output_error(weights, layer, calib):>10.5f} {layer.kept_fraction():>7.4f} "
          f"{report.metadata_bits_per_element:>15.4f}")

# Store the last layer and read it back
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "layer.nms1"
    size = encode(layer).write(path)
    restored = decode_layer(SparseEncodedTensor.read(path))
    print(f"\nNMS1 file: {size} bytes (dense float64: {weights.data.nbytes} bytes), "
          f"round trip exact: {restored == layer}")
