"""Run configuration and the flat ``key = value`` config file format.

Example file::

    # pull/push toy
    method = toy_pullpush
    n_clients = 5
    toy_lambda = -0.1
    partition.scheme = pathological
    dataset.kind = blobs
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .client import ClientHyper
from .distance import ServerHyper
from .neural import MlpSpec

METHODS = ("diversifed", "fedavg", "separate", "toy_pullpush")
SCHEMES = ("pathological", "dirichlet", "practical")
DATASET_KINDS = ("blobs", "idx")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class PartitionConfig:
    scheme: str = "pathological"
    alpha: float = 0.1
    classes_per_client: int = 2
    groups: int = 3
    dominant_classes: int = 3
    dominant_fraction: float = 0.8
    train_per_client: int = 300
    test_per_client: int = 100


@dataclass
class DatasetConfig:
    kind: str = "blobs"
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    num_classes: int = 10
    feature_dim: int = 20
    separation: float = 3.0
    noise: float = 1.0
    samples_per_class: int = 1500
    test_samples_per_class: int = 500


@dataclass
class RunConfig:
    method: str = "diversifed"
    n_clients: int = 40
    rounds: int = 500
    local_epochs: int = 10
    batch_size: int = 100
    lam: float = 2.0
    tau: float = 1.0
    alpha_t: float = 1.0
    lr: float = 1e-3
    epsilon_dist: float = 1e-8
    normalize_by_sqrt_dim: bool = False
    participation_fraction: float = 1.0
    seed: int = 0
    toy_lambda: float = 0.0
    hidden: tuple[int, ...] = (64,)
    check_identity: bool = False
    workers: int = 1
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    output_csv: str = ""
    output_json: str = ""

    @property
    def client_hyper(self) -> ClientHyper:
        return ClientHyper(self.lam, self.alpha_t, self.local_epochs, self.batch_size, self.lr)

    @property
    def server_hyper(self) -> ServerHyper:
        return ServerHyper(self.tau, self.alpha_t, self.epsilon_dist, self.normalize_by_sqrt_dim)

    def mlp_spec(self, input_dim: int, num_classes: int) -> MlpSpec:
        return MlpSpec((input_dim, *self.hidden, num_classes))

    def replace(self, **overrides) -> "RunConfig":
        """Copy with flat-key overrides, e.g. ``cfg.replace(**{"partition.alpha": 0.5})``."""
        return apply_overrides(self, overrides)

    def to_flat(self) -> dict[str, Any]:
        out = {}
        for key, (path, _) in KEYS.items():
            value = _get(self, path)
            out[key] = list(value) if isinstance(value, tuple) else value
        return out

    def validate(self) -> "RunConfig":
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg} (got {_get(self, KEYS[key][0])!r})")

        need(self.method in METHODS, "method", f"must be one of {METHODS}")
        need(self.n_clients >= 1, "n_clients", "must be >= 1")
        need(self.rounds >= 1, "rounds", "must be >= 1")
        need(self.local_epochs >= 1, "local_epochs", "must be >= 1")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.lam >= 0, "lambda", "must be >= 0")
        need(self.tau > 0, "tau", "must be > 0")
        need(self.alpha_t > 0, "alpha_t", "must be > 0")
        need(self.lr > 0, "lr", "must be > 0")
        need(self.epsilon_dist > 0, "epsilon_dist", "must be > 0")
        need(0 < self.participation_fraction <= 1, "participation_fraction", "must be in (0, 1]")
        need(math.isfinite(self.toy_lambda), "toy_lambda", "must be finite")
        need(all(h >= 1 for h in self.hidden), "hidden", "layer widths must be positive")
        need(self.workers >= 1, "workers", "must be >= 1")
        p, d = self.partition, self.dataset
        need(p.scheme in SCHEMES, "partition.scheme", f"must be one of {SCHEMES}")
        need(p.alpha > 0, "partition.alpha", "must be > 0")
        need(1 <= p.classes_per_client <= d.num_classes, "partition.classes_per_client",
             "must be in [1, num_classes]")
        need(p.groups >= 1, "partition.groups", "must be >= 1")
        need(p.dominant_classes >= 1, "partition.dominant_classes", "must be >= 1")
        need(0 <= p.dominant_fraction <= 1, "partition.dominant_fraction", "must be in [0, 1]")
        need(p.train_per_client >= 1, "partition.train_per_client", "must be >= 1")
        need(p.test_per_client >= 1, "partition.test_per_client", "must be >= 1")
        need(d.kind in DATASET_KINDS, "dataset.kind", f"must be one of {DATASET_KINDS}")
        need(d.num_classes >= 2, "dataset.num_classes", "must be >= 2")
        need(d.feature_dim >= 1, "dataset.feature_dim", "must be >= 1")
        need(d.noise >= 0, "dataset.noise", "must be >= 0")
        need(d.samples_per_class >= 1, "dataset.samples_per_class", "must be >= 1")
        need(d.test_samples_per_class >= 1, "dataset.test_samples_per_class", "must be >= 1")
        if d.kind == "idx":
            need(bool(d.train_images and d.train_labels), "dataset.train_images",
                 "idx datasets need train image and label paths")
        return self


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    text = text.strip().strip("[]()")
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


# flat key -> (attribute path, parser)
KEYS: dict[str, tuple[tuple[str, ...], Any]] = {
    "method": (("method",), str),
    "n_clients": (("n_clients",), int),
    "rounds": (("rounds",), int),
    "local_epochs": (("local_epochs",), int),
    "batch_size": (("batch_size",), int),
    "lambda": (("lam",), float),
    "tau": (("tau",), float),
    "alpha_t": (("alpha_t",), float),
    "lr": (("lr",), float),
    "epsilon_dist": (("epsilon_dist",), float),
    "normalize_by_sqrt_dim": (("normalize_by_sqrt_dim",), _parse_bool),
    "participation_fraction": (("participation_fraction",), float),
    "seed": (("seed",), int),
    "toy_lambda": (("toy_lambda",), float),
    "hidden": (("hidden",), _parse_ints),
    "check_identity": (("check_identity",), _parse_bool),
    "workers": (("workers",), int),
    "partition.scheme": (("partition", "scheme"), str),
    "partition.alpha": (("partition", "alpha"), float),
    "partition.classes_per_client": (("partition", "classes_per_client"), int),
    "partition.groups": (("partition", "groups"), int),
    "partition.dominant_classes": (("partition", "dominant_classes"), int),
    "partition.dominant_fraction": (("partition", "dominant_fraction"), float),
    "partition.train_per_client": (("partition", "train_per_client"), int),
    "partition.test_per_client": (("partition", "test_per_client"), int),
    "dataset.kind": (("dataset", "kind"), str),
    "dataset.train_images": (("dataset", "train_images"), str),
    "dataset.train_labels": (("dataset", "train_labels"), str),
    "dataset.test_images": (("dataset", "test_images"), str),
    "dataset.test_labels": (("dataset", "test_labels"), str),
    "dataset.num_classes": (("dataset", "num_classes"), int),
    "dataset.feature_dim": (("dataset", "feature_dim"), int),
    "dataset.separation": (("dataset", "separation"), float),
    "dataset.noise": (("dataset", "noise"), float),
    "dataset.samples_per_class": (("dataset", "samples_per_class"), int),
    "dataset.test_samples_per_class": (("dataset", "test_samples_per_class"), int),
    "output.csv": (("output_csv",), str),
    "output.json": (("output_json",), str),
}


def _get(cfg, path):
    obj = cfg
    for name in path:
        obj = getattr(obj, name)
    return obj


def _coerce(key: str, value):
    parser = KEYS[key][1]
    if isinstance(value, str):
        try:
            return parser(value.strip())
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {value!r} ({exc})") from None
    if parser is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if parser is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if parser is _parse_bool and isinstance(value, bool):
        return value
    if parser is _parse_ints and isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    if parser is str and isinstance(value, str):
        return value
    raise ConfigError(f"{key}: expected {getattr(parser, '__name__', parser)}, got {value!r}")


def apply_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    cfg = dataclasses.replace(cfg, partition=dataclasses.replace(cfg.partition),
                              dataset=dataclasses.replace(cfg.dataset))
    for key, value in overrides.items():
        if key not in KEYS:
            raise ConfigError(f"{key}: unknown config key")
        path = KEYS[key][0]
        target = _get(cfg, path[:-1])
        setattr(target, path[-1], _coerce(key, value))
    return cfg


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{key}: unknown config key ({source}:{lineno})")
        out[key] = value
    return out


def parse_config(path: Optional[str] = None, overrides: Optional[dict[str, Any]] = None,
                 base: Optional[RunConfig] = None) -> RunConfig:
    """Defaults, then the file (if any), then ``overrides``; validated."""
    values: dict[str, Any] = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        values.update(parse_kv_text(p.read_text(), str(p)))
    values.update(overrides or {})
    return apply_overrides(base or RunConfig(), values).validate()


def from_flat(flat: dict[str, Any]) -> RunConfig:
    return apply_overrides(RunConfig(), flat).validate()
