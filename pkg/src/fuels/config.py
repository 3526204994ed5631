"""Experiment configuration: defaults, JSON parsing and validation."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .prototypes import NOISE_KINDS

METHODS = ("fuels", "solo", "fedavg", "fedprox", "fedrep")
PROTOTYPES = ("periodicity", "concat")
DOWNLINK_MODES = ("all", "selected")


@dataclass
class ExperimentConfig:
    method: str = "fuels"
    # data
    n_clients: int = 100
    clusters: int = 2
    K: int = 1440
    p: int = 24
    c: int = 3
    q: int = 3
    shift: int = 1
    train_fraction: float = 0.8
    data_noise: float = 0.1
    data_csv: str | None = None
    # model and optimisation
    B: int = 24
    h: int = 128
    lr: float = 0.001
    T: int = 200
    epochs: int = 1
    # contrastive machinery
    tau: float = 0.02
    rho: float = 5.0
    beta_percentile: float = 50.0
    alpha: float = 1.0
    prototype: str = "periodicity"
    use_intra: bool = True
    learn_filter: bool = True
    noise_kind: str | None = None
    noise_scale: float = 0.0
    # baselines
    mu: float = 0.01
    # execution
    downlink: str = "all"
    workers: int = 1
    eval_every: int = 1
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond: bool, name: str, msg: str):
            if not cond:
                raise ConfigError(msg, field=name)

        need(self.method in METHODS, "method", f"must be one of {METHODS}")
        for name in ("n_clients", "clusters", "K", "p", "c", "q", "B", "h", "T", "epochs", "workers", "eval_every"):
            value = getattr(self, name)
            need(isinstance(value, int) and not isinstance(value, bool) and value >= 1, name, "must be an integer >= 1")
        need(isinstance(self.shift, int) and self.shift >= 0, "shift", "must be an integer >= 0")
        need(self.n_clients >= self.clusters, "n_clients", "must be >= clusters")
        need(0.0 < self.train_fraction < 1.0, "train_fraction", "must lie in (0, 1)")
        need(self.data_noise >= 0, "data_noise", "must be >= 0")
        need(self.lr > 0 and math.isfinite(self.lr), "lr", "must be positive")
        need(self.tau > 0 and math.isfinite(self.tau), "tau", "must be positive")
        need(self.rho >= 0, "rho", "must be >= 0")
        need(0.0 <= self.beta_percentile <= 100.0, "beta_percentile", "must lie in [0, 100]")
        need(0.0 < self.alpha <= 1.0, "alpha", "must lie in (0, 1]")
        need(self.prototype in PROTOTYPES, "prototype", f"must be one of {PROTOTYPES}")
        need(self.noise_kind is None or self.noise_kind in NOISE_KINDS, "noise_kind", f"must be null or one of {NOISE_KINDS}")
        need(self.noise_scale >= 0, "noise_scale", "must be >= 0")
        need(self.mu >= 0, "mu", "must be >= 0")
        need(self.downlink in DOWNLINK_MODES, "downlink", f"must be one of {DOWNLINK_MODES}")
        if self.method == "fuels" and self.prototype == "periodicity":
            need(
                self.B == self.p,
                "B",
                f"periodicity-aware prototypes need batch size equal to the period (B={self.B}, p={self.p})",
            )

    @property
    def rep_dim(self) -> int:
        return 2 * self.h

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(doc) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}", field=unknown[0])
    values = {}
    for key, value in doc.items():
        default = _FIELDS[key].default
        # JSON has no int/float distinction worth trusting for float fields
        if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        values[key] = value
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(source=None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from a JSON file path, a JSON string, or a dict; ``overrides`` win."""
    if source is None:
        doc = {}
    elif isinstance(source, dict):
        doc = dict(source)
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            path = Path(text)
            if not path.is_file():
                raise ConfigError(f"config file not found: {text}")
            text = path.read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    if overrides:
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        doc.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(doc)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
