"""
Pipeline configuration and its JSON schema ("v1").

Every field goes through a ``_validate_*`` helper that normalizes the value
or raises :class:`ConfigError` naming what is accepted.
"""

import json
from math import gcd
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

from .errors import ConfigError, PatternError
from .importance import DEFAULT_ACTIVATION_POWER, DEFAULT_CLAMP_MIN, SCORERS
from .patterns import PatternShape
from .reconstruct import ReconstructionSettings

SCHEMA_VERSION = "v1"
SALIENT_BLOCK = 256
DEFAULT_SALIENT_KEEPS = (4, 8, 16)
SALIENT_LAYOUTS = ("structured", "unstructured")


def _validate_pattern(value: Union[str, PatternShape]) -> PatternShape:
    """Validate the residual N:M pattern."""
    try:
        shape = value if isinstance(value, PatternShape) else PatternShape.parse(value)
    except PatternError as exc:
        raise ConfigError(str(exc))
    return shape


def _validate_salient(value: Union[None, str, PatternShape], allow_any: bool) -> Optional[PatternShape]:
    """Validate the salient K:256 pattern; ``None``, ``"none"`` and ``"0"`` turn it off."""
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "off", "0")):
        return None
    try:
        shape = value if isinstance(value, PatternShape) else PatternShape.parse(value)
    except PatternError as exc:
        raise ConfigError(str(exc))
    if allow_any:
        return shape
    if shape.m_block != SALIENT_BLOCK or shape.n_keep not in DEFAULT_SALIENT_KEEPS:
        options = ", ".join(f"{k}:{SALIENT_BLOCK}" for k in DEFAULT_SALIENT_KEEPS)
        raise ConfigError(f"Invalid salient pattern '{shape}'. Valid options: none, {options}")
    return shape


def _validate_scorer(scorer: str) -> str:
    """Validate the scorer name."""
    if scorer not in SCORERS:
        raise ConfigError(f"Invalid scorer '{scorer}'. Valid options: {', '.join(SCORERS)}")
    return scorer


def _validate_positive(name: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be numeric, got {value!r}")
    if not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return float(value)


def _validate_non_negative(name: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be numeric, got {value!r}")
    if value < 0:
        raise ConfigError(f"{name} must be non-negative, got {value}")
    return float(value)


def _validate_layout(layout: str) -> str:
    """Validate the salient layout."""
    if layout not in SALIENT_LAYOUTS:
        raise ConfigError(f"Invalid salient_layout '{layout}'. Valid options: {', '.join(SALIENT_LAYOUTS)}")
    return layout


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for one pruning run.

    Parameters
    ----------
    residual_shape : PatternShape or str, default "2:4"
        N:M pattern for non-salient weights (N kept).
    salient_shape : PatternShape, str or None, default None
        K:256 pattern for salient weights, or None to skip salient extraction.
    scorer : {"magnitude", "ria"}, default "ria"
    use_equalization : bool, default False
        Score on W·diag(s)^-1 instead of W.
    use_variance_correction : bool, default False
    epsilon : float, default 1e-8
        Added to the residual variance in the correction factor.
    activation_power : float, default 0.5
        Exponent on ||X_j||_2 in RIA.
    ria_activation : bool, default True
        Multiply RIA scores by the activation factor.
    clamp_min : float, default 1e-8
        Floor for every divisor in scoring.
    variance_includes_zeros : bool, default True
        Compute the residual variance over the whole tensor, pruned zeros
        included. False uses only the kept values.
    salient_layout : {"structured", "unstructured"}, default "structured"
        "unstructured" keeps the same salient count per row without the
        K-per-256-block constraint.
    reconstruct : bool, default False
    reconstruction : ReconstructionSettings
    allow_any_salient : bool, default False
        Accept salient patterns other than 4, 8 or 16 of 256.
    """

    residual_shape: PatternShape = PatternShape(2, 4)
    salient_shape: Optional[PatternShape] = None
    scorer: str = "ria"
    use_equalization: bool = False
    use_variance_correction: bool = False
    epsilon: float = 1e-8
    activation_power: float = DEFAULT_ACTIVATION_POWER
    ria_activation: bool = True
    clamp_min: float = DEFAULT_CLAMP_MIN
    variance_includes_zeros: bool = True
    salient_layout: str = "structured"
    reconstruct: bool = False
    reconstruction: ReconstructionSettings = field(default_factory=ReconstructionSettings)
    allow_any_salient: bool = False

    def __post_init__(self):
        set_ = lambda name, value: object.__setattr__(self, name, value)  # noqa: E731
        set_("residual_shape", _validate_pattern(self.residual_shape))
        set_("salient_shape", _validate_salient(self.salient_shape, self.allow_any_salient))
        set_("scorer", _validate_scorer(self.scorer))
        set_("epsilon", _validate_positive("epsilon", self.epsilon))
        set_("clamp_min", _validate_positive("clamp_min", self.clamp_min))
        set_("activation_power", _validate_non_negative("activation_power", self.activation_power))
        set_("salient_layout", _validate_layout(self.salient_layout))
        if isinstance(self.reconstruction, dict):
            set_("reconstruction", ReconstructionSettings.from_dict(self.reconstruction))
        for name in ("use_equalization", "use_variance_correction", "ria_activation",
                     "variance_includes_zeros", "reconstruct", "allow_any_salient"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be true or false, got {getattr(self, name)!r}")

    @property
    def block_multiple(self) -> int:
        """Column counts must be a multiple of this."""
        m = self.residual_shape.m_block
        if self.salient_shape is not None:
            s = self.salient_shape.m_block
            m = m * s // gcd(m, s)
        return m

    def with_overrides(self, **changes) -> "PipelineConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        data = {"schema": SCHEMA_VERSION}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, PatternShape):
                value = str(value)
            elif isinstance(value, ReconstructionSettings):
                value = value.to_dict()
            data[f.name] = value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PipelineConfig":
        data = dict(data)
        schema = data.pop("schema", None)
        if schema != SCHEMA_VERSION:
            raise ConfigError(f"Unsupported config schema {schema!r}, expected {SCHEMA_VERSION!r}")
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc))

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config is not valid JSON: {exc}")
        if not isinstance(data, dict):
            raise ConfigError("Config JSON must be an object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PipelineConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))
