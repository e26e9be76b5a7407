"""Session configuration: documented defaults, file loading, environment overrides."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Union, get_args, get_origin, get_type_hints

import yaml

from .annotation import AnnotatorConfig, Connectivity, Strategy
from .detection import DetectorConfig, FalkonParams, MinibootstrapConfig
from .orchestrator import OrchestratorConfig
from .simworld import SIZE_SPLITS, ScenarioKind

ENV_PREFIX = "SOCIALCUES_"
ALL_LABELS = tuple(l for labels in SIZE_SPLITS.values() for l in labels)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotatorSection:
    depth_band: Optional[float] = None  # None: 0.30 hand-proximal, 0.05 distance-based
    hand_radius: float = 0.25
    min_blob_px: int = 20
    connectivity: str = Connectivity.FOUR.value
    continuity_step: float = 0.05
    corridor_px: float = 10.0


@dataclass(frozen=True)
class BootstrapSection:
    n_batches: int = 10
    batch_size: int = 2000
    hard_threshold: float = -0.7
    max_negatives: int = 6000


@dataclass(frozen=True)
class FalkonSection:
    M: Optional[int] = None  # None: min(500, n)
    sigma: Optional[float] = None  # None: median pairwise distance
    lam: float = 1e-6
    t_iters: int = 20


@dataclass(frozen=True)
class DetectorSection:
    lambda_rls: float = 1.0
    score_threshold: float = 0.0
    nms_iou: float = 0.3
    max_proposals: int = 300


@dataclass(frozen=True)
class OrchestratorSection:
    engage_seconds: float = 1.5
    await_timeout: float = 10.0
    locate_timeout: float = 5.0
    hand_confidence: float = 0.6
    hand_frames: int = 3
    teacher_loss_tolerance: int = 7


@dataclass(frozen=True)
class SessionConfig:
    scenario: str = ScenarioKind.CONSTRAINED.value
    strategy: str = Strategy.HAND_PROXIMAL.value
    seed: int = 0
    out: str = "out"
    script: Optional[str] = None  # scenario script file for run-pipeline
    label: str = "025_mug"  # object taught in run-pipeline
    labels: tuple[str, ...] = ALL_LABELS
    fps: float = 7.0
    n_frames: int = 300
    session_lead_frames: int = 60
    test_frames: int = 100
    train_stride: int = 3
    annotator: AnnotatorSection = AnnotatorSection()
    bootstrap: BootstrapSection = BootstrapSection()
    falkon: FalkonSection = FalkonSection()
    detector: DetectorSection = DetectorSection()
    orchestrator: OrchestratorSection = OrchestratorSection()

    def __post_init__(self):
        try:
            ScenarioKind(self.scenario)
            Strategy(self.strategy)
            Connectivity(self.annotator.connectivity)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.n_frames < 1 or self.test_frames < 1 or self.train_stride < 1 or self.fps <= 0:
            raise ConfigError("frame counts, stride and fps must be positive")
        unknown = [l for l in self.labels if l not in ALL_LABELS]
        if unknown:
            raise ConfigError(f"unknown object labels {unknown}")
        try:
            self.orchestrator_config()
            self.annotator_config(Strategy.DISTANCE_BASED.value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    # -- module configs ---------------------------------------------------

    def annotator_config(self, strategy: Optional[str] = None) -> AnnotatorConfig:
        a = self.annotator
        kw = {k: v for k, v in asdict(a).items() if v is not None}
        return AnnotatorConfig.for_strategy(strategy or self.strategy, **kw)

    def detector_config(self) -> DetectorConfig:
        d = self.detector
        return DetectorConfig(
            bootstrap=MinibootstrapConfig(**asdict(self.bootstrap)),
            falkon=FalkonParams(self.falkon.M, self.falkon.sigma, self.falkon.lam, self.falkon.t_iters, self.seed),
            lambda_rls=d.lambda_rls,
            score_threshold=d.score_threshold,
            nms_iou=d.nms_iou,
            max_proposals=d.max_proposals,
        )

    def orchestrator_config(self) -> OrchestratorConfig:
        return OrchestratorConfig(
            fps=self.fps,
            n_frames=self.n_frames,
            train_stride=self.train_stride,
            annotator=self.annotator_config(Strategy.HAND_PROXIMAL.value),
            detector=self.detector_config(),
            **asdict(self.orchestrator),
        )

    def to_json(self) -> dict:
        return asdict(self)


def _coerce(value, hint, key: str):
    """Check a scalar against its field type; numeric strings become numbers (YAML reads ``1e-4`` as text)."""
    if get_origin(hint) is Union:
        args = [a for a in get_args(hint) if a is not type(None)]
        if value is None:
            return None
        hint = args[0]
    if hint is float:
        if isinstance(value, bool):
            raise ConfigError(f"{key} must be a number")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be a number, got {value!r}") from None
    if hint is int:
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"{key} must be an integer, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if hint is str and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def _build(cls, data: Mapping[str, Any], where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys {[f'{where}{k}' for k in unknown]}")
    kw = {}
    defaults = cls()
    hints = get_type_hints(cls)
    for k, v in data.items():
        cur = getattr(defaults, k)
        if is_dataclass(cur):
            kw[k] = _build(type(cur), v, f"{where}{k}.")
        elif isinstance(cur, tuple):
            if isinstance(v, str) or not hasattr(v, "__iter__"):
                raise ConfigError(f"{where}{k} must be a list")
            kw[k] = tuple(v)
        else:
            kw[k] = _coerce(v, hints[k], f"{where}{k}")
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def config_from_mapping(data: Mapping[str, Any]) -> SessionConfig:
    return _build(SessionConfig, data, "")


def _set_path(d: dict, path: list[str], value) -> None:
    for p in path[:-1]:
        d = d.setdefault(p, {})
    d[path[-1]] = value


def env_overrides(environ: Mapping[str, str]) -> dict:
    """``SOCIALCUES_SEED=3`` or ``SOCIALCUES_FALKON__LAM=1e-4`` style overrides."""
    out: dict = {}
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__")]
        if path == ["falkon", "m"]:
            path = ["falkon", "M"]
        _set_path(out, path, yaml.safe_load(environ[key]))
    return out


def _merge(base: dict, over: Mapping) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, environ: Optional[Mapping[str, str]] = None, overrides: Optional[Mapping] = None) -> SessionConfig:
    """Defaults, then the config file, then environment variables, then explicit overrides."""
    data: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        data = loaded or {}
        if not isinstance(data, Mapping):
            raise ConfigError("config file must hold a mapping")
    data = _merge(data, env_overrides(os.environ if environ is None else environ))
    data = _merge(data, {k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_mapping(data)


def with_overrides(cfg: SessionConfig, **kw) -> SessionConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
