"""Run configuration: defaults, YAML loading, and the config fingerprint.

Every constant defaults to the shared reference setup, so a faithful run
needs only dataset paths. The fingerprint is a stable hash over everything
that affects pipeline results (data layout, model, training, scoring
constants, seed); evaluation-time knobs (aggregation operator, FPR budgets,
output paths) are deliberately excluded so ablations can share artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import SchemaError
from .graphs import FEATURE_LAYOUT_VERSION
from .synth import SynthConfig
from .training import TrainConfig

BASELINE_METHODS = ("iforest", "autoencoder")


@dataclass
class RunConfig:
    # Data
    dataset_preset: str = "canonical"
    schema: dict | None = None  # custom SchemaMap fields; overrides the preset
    input_csv: str | None = None  # None means: synthesize first
    benign_tag: str | None = None  # None: use the schema's tag
    window_seconds: float = 30.0
    rate_denominator: str = "duration"
    feature_layout_version: str = FEATURE_LAYOUT_VERSION
    train_fraction: float = 0.8
    std_floor: float = 1e-6
    # Model
    hidden: int = 128
    dropout: float = 0.2
    # Training
    train: TrainConfig = field(default_factory=TrainConfig)
    # Scoring
    alpha: float = 1.0
    tau_mad: float = 1e-3
    tau_clip: float = 10.0
    lambda_src: float = 1.0
    lambda_dst: float = 0.2
    aggregation: str = "q90"
    fpr_budgets: tuple[float, ...] = (0.01, 0.05)
    # Run
    seed: int = 0
    out_dir: str = "runs/default"
    baselines: tuple[str, ...] = BASELINE_METHODS
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self) -> None:
        # The run seed governs all stages unless a section pins its own.
        self.train = dataclasses.replace(self.train, seed=self.seed)
        self.synth = dataclasses.replace(self.synth, seed=self.seed)

    def fingerprint(self) -> str:
        """Stable 12-hex-digit hash of the result-determining configuration."""
        payload = {
            "dataset_preset": self.dataset_preset,
            "schema": self.schema,
            "benign_tag": self.benign_tag,
            "window_seconds": self.window_seconds,
            "rate_denominator": self.rate_denominator,
            "feature_layout_version": self.feature_layout_version,
            "train_fraction": self.train_fraction,
            "std_floor": self.std_floor,
            "hidden": self.hidden,
            "dropout": self.dropout,
            "train": dataclasses.asdict(self.train),
            "alpha": self.alpha,
            "tau_mad": self.tau_mad,
            "tau_clip": self.tau_clip,
            "lambda_src": self.lambda_src,
            "lambda_dst": self.lambda_dst,
            "seed": self.seed,
            "synth": dataclasses.asdict(self.synth),
        }
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fingerprint"] = self.fingerprint()
        return d


def _apply_section(cls, defaults, values: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise SchemaError(f"unknown {section} config keys: {sorted(unknown)}")
    coerced = dict(values)
    for f in dataclasses.fields(cls):
        if f.name in coerced and isinstance(getattr(defaults, f.name), tuple):
            coerced[f.name] = tuple(coerced[f.name])
    return dataclasses.replace(defaults, **coerced)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional YAML file plus CLI overrides.

    The YAML is a flat mapping of RunConfig fields with optional nested
    ``train`` and ``synth`` sections. Unknown keys are schema errors.
    """
    data: dict = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text())
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise SchemaError(f"{path}: config must be a mapping")
        data.update(raw)
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})

    train_section = data.pop("train", {}) or {}
    synth_section = data.pop("synth", {}) or {}
    config = _apply_section(RunConfig, RunConfig(), data, "run")
    config.train = _apply_section(TrainConfig, config.train, train_section, "train")
    config.synth = _apply_section(SynthConfig, config.synth, synth_section, "synth")
    # Re-pin section seeds to the run seed unless explicitly overridden.
    if "seed" not in train_section:
        config.train = dataclasses.replace(config.train, seed=config.seed)
    if "seed" not in synth_section:
        config.synth = dataclasses.replace(config.synth, seed=config.seed)
    if config.aggregation not in ("mean", "max", "q90", "topk_mean"):
        raise SchemaError(f"unknown aggregation operator {config.aggregation!r}")
    return config
