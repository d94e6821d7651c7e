"""Run configuration: YAML text with model, signal and experiment sections."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path as FsPath

import yaml

from ..errors import ConfigError
from ..sde import make_model
from ..signal import PiecewiseSignal, SmoothSignal, make_signal

KINDS = ("simulate", "lan", "limit", "bayes-mle", "estimate", "rates", "mc")

# experiment keys accepted per kind (beyond the shared ones)
SHARED_KEYS = {"theta", "n_values", "h_values", "replicates", "dt", "search", "refine_tol"}
KIND_KEYS = {
    "simulate": {"horizon"},
    "lan": {"t_grid", "calibration_horizon"},
    "limit": {"calibration_horizon", "J_hat"},
    "bayes-mle": {"J", "h_true", "grid"},
    "estimate": set(),
    "rates": {"bootstrap"},
    "mc": {"zeta_values"},
}


@dataclass
class RunConfig:
    kind: str
    model: dict = field(default_factory=lambda: {"id": "white"})
    signal: dict = field(default_factory=lambda: {"id": "sin"})
    experiment: dict = field(default_factory=dict)
    seed: int = 0
    threads: int = 1
    out: str = "results"
    thresholds: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    # -- accessors -----------------------------------------------------
    def get(self, key, default=None):
        return self.experiment.get(key, default)

    @property
    def theta(self):
        return float(self.experiment.get("theta", 1.0))

    @property
    def replicates(self):
        return int(self.experiment.get("replicates", 1))

    @property
    def dt(self):
        dt = self.experiment.get("dt")
        return None if dt is None else float(dt)

    def build_model(self):
        return make_model(self.model)

    def build_signal(self):
        return make_signal(self.signal)

    # -- validation ----------------------------------------------------
    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not isinstance(self.experiment, dict):
            raise ConfigError("experiment section must be a mapping")
        unknown = set(self.experiment) - SHARED_KEYS - KIND_KEYS[self.kind]
        if unknown:
            raise ConfigError(f"unknown experiment keys for {self.kind}: {sorted(unknown)}")
        if self.kind != "bayes-mle":
            self.build_model()
            signal = self.build_signal()
            if self.kind == "lan" and not isinstance(signal, SmoothSignal):
                raise ConfigError("lan needs a smooth signal")
            if self.kind == "limit" and not isinstance(signal, PiecewiseSignal):
                raise ConfigError("limit needs a piecewise signal")
        if not self.theta > 0:
            raise ConfigError("theta must be positive")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if int(self.threads) < 1:
            raise ConfigError("threads must be >= 1")
        search = self.experiment.get("search")
        if search is not None and not (len(search) == 2 and 0 < search[0] < search[1]):
            raise ConfigError("search must be [lo, hi] with 0 < lo < hi")
        for name, spec in self.thresholds.items():
            if not isinstance(spec, dict) or not set(spec) <= {"min", "max"} or not spec:
                raise ConfigError(f"threshold {name!r} must be a mapping with 'min' and/or 'max'")

    # -- serialisation -------------------------------------------------
    def to_dict(self):
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        if "kind" not in data:
            raise ConfigError("config needs a 'kind'")
        data = copy.deepcopy(data)
        for key in ("model", "signal"):
            if isinstance(data.get(key), str):
                data[key] = {"id": data[key]}
        return cls(**data)

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(yaml.safe_load(text))

    @classmethod
    def load(cls, path):
        return cls.loads(FsPath(path).read_text())

    def digest(self):
        """sha256 of the canonical JSON form."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_overrides(self, seed=None, out=None, threads=None, dt=None):
        d = self.to_dict()
        if seed is not None:
            d["seed"] = int(seed)
        if out is not None:
            d["out"] = str(out)
        if threads is not None:
            d["threads"] = int(threads)
        if dt is not None:
            d["experiment"]["dt"] = float(dt)
        return RunConfig.from_dict(d)
