"""Run manifest written by ``nmsparse prune``."""

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

from .config import PipelineConfig
from .errors import ConfigError


@dataclass(frozen=True)
class LayerMetrics:
    """Metrics for one pruned weight file."""

    input: str
    output: str
    rows: int
    cols: int
    relative_error: float
    correction_factor: float
    residual_fraction: float
    salient_fraction: float
    kept_fraction: float
    metadata_bits: int
    metadata_bits_per_element: float
    file_bytes: int
    wall_time_s: float
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None
    iterations: Optional[int] = None

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and not math.isfinite(value):
                raise ValueError(f"Metric {f.name} is not finite: {value}")


@dataclass(frozen=True)
class RunManifest:
    config: PipelineConfig
    calibration: str
    layers: List[LayerMetrics] = field(default_factory=list)
    tool_version: str = ""
    wall_time_s: float = 0.0
    created_at: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "calibration": self.calibration,
            "layers": [asdict(layer) for layer in self.layers],
            "tool_version": self.tool_version,
            "wall_time_s": self.wall_time_s,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        try:
            return cls(
                config=PipelineConfig.from_dict(data["config"]),
                calibration=data["calibration"],
                layers=[LayerMetrics(**layer) for layer in data.get("layers", [])],
                tool_version=data.get("tool_version", ""),
                wall_time_s=float(data.get("wall_time_s", 0.0)),
                created_at=data.get("created_at", ""),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"Malformed manifest: {exc}")

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls.from_dict(json.loads(text))
