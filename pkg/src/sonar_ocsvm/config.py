"""Experiment configuration: nested dataclasses with YAML round-tripping."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ._validation import ConfigError
from .sonar import SCHEDULE_KINDS
from .streams import PRESETS

__all__ = [
    "ALGORITHMS",
    "PROFILES",
    "RffSettings",
    "SourceSettings",
    "CpdSettings",
    "RunConfig",
    "defaults",
    "load_config",
    "apply_overrides",
]

ALGORITHMS = ("sonar", "sgd_ocsvm", "sonarc", "oracle_restart")


@dataclass
class RffSettings:
    gamma: float = 0.5
    r_min: float = 0.5
    delta: float | None = None  # None: lam / 2
    n_pairs: int | None = None  # None: recommended count
    feature_constant: float = 1.0


@dataclass
class SourceSettings:
    preset: str | None = "stationary2"
    csv: list | None = None
    feature_columns: list | None = None
    label_column: str | None = None
    exclude_columns: list = field(default_factory=list)
    delimiter: str = ","
    scale: float = 1.0
    standardize: bool | None = None  # None: on for CSV input, off for presets


@dataclass
class CpdSettings:
    threshold_C: float | None = None
    grid: list | None = None
    delta: float | None = None  # None: lam / 2
    horizon: int | None = None  # None: number of training rows
    min_window: int | None = None
    reference: str = "main"
    tune_mode: str = "safe"
    tune_streams: int = 10
    tune_seed: int = 10_000


@dataclass
class RunConfig:
    algorithm: str = "sonar"
    lam: float = 0.01
    epsilon: float = 0.0
    schedule: str | None = None  # None: theory for sonar, bottou for sgd_ocsvm
    eta0: float | None = None  # None: 1.0 for sonar, 0.5 for sgd_ocsvm
    rff: RffSettings = field(default_factory=RffSettings)
    source: SourceSettings = field(default_factory=SourceSettings)
    cpd: CpdSettings = field(default_factory=CpdSettings)
    changepoints: list | None = None
    runs: int = 20
    seed: int = 0
    output_dir: str = "runs"
    workers: int = 1
    smoothing_window: int = 200

    # -- resolved values --

    @property
    def rff_delta(self):
        return self.rff.delta if self.rff.delta is not None else self.lam / 2

    @property
    def cpd_delta(self):
        return self.cpd.delta if self.cpd.delta is not None else self.lam / 2

    @property
    def schedule_kind(self):
        if self.schedule is not None:
            return self.schedule
        return "bottou" if self.algorithm == "sgd_ocsvm" else "theory"

    @property
    def base_rate(self):
        if self.eta0 is not None:
            return self.eta0
        return 0.5 if self.algorithm == "sgd_ocsvm" else 1.0

    @property
    def standardize(self):
        if self.source.standardize is not None:
            return self.source.standardize
        return bool(self.source.csv)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        errors = []
        kwargs = {}
        nested = {"rff": RffSettings, "source": SourceSettings, "cpd": CpdSettings}
        names = {f.name for f in dataclasses.fields(cls)}
        for key, value in data.items():
            if key not in names:
                errors.append(f"{key}: unknown field")
            elif key in nested:
                sub = nested[key]
                sub_names = {f.name for f in dataclasses.fields(sub)}
                bad = [k for k in (value or {}) if k not in sub_names]
                errors.extend(f"{key}.{k}: unknown field" for k in bad)
                kwargs[key] = sub(**{k: v for k, v in (value or {}).items() if k in sub_names})
            else:
                kwargs[key] = value
        if errors:
            raise ConfigError("; ".join(errors))
        cfg = cls(**kwargs)
        if isinstance(cfg.source.csv, str):
            cfg.source.csv = [cfg.source.csv]
        if cfg.source.csv:
            # a CSV source replaces the default preset
            cfg.source.preset = None
        return cfg

    def validate(self):
        """Raise ConfigError naming every offending field."""
        errors = []

        def check(ok, name, message):
            if not ok:
                errors.append(f"{name}: {message}")

        def number(value):
            return isinstance(value, (int, float)) and not isinstance(value, bool)

        check(self.algorithm in ALGORITHMS, "algorithm", f"must be one of {', '.join(ALGORITHMS)}")
        check(number(self.lam) and 0 <= self.lam <= 1, "lam", "must lie in [0, 1]")
        check(number(self.epsilon) and 0 <= self.epsilon < 1, "epsilon", "must lie in [0, 1)")
        check(self.schedule is None or self.schedule in SCHEDULE_KINDS, "schedule",
              f"must be one of {', '.join(SCHEDULE_KINDS)}")
        check(self.eta0 is None or (number(self.eta0) and self.eta0 > 0), "eta0", "must be positive")
        check(number(self.rff.gamma) and self.rff.gamma > 0, "rff.gamma", "must be positive")
        check(number(self.rff.r_min) and 0 < self.rff.r_min < 1, "rff.r_min", "must lie in (0, 1)")
        if number(self.lam):
            check(0 < self.rff_delta < 1, "rff.delta", "must lie in (0, 1) (lam = 0 needs an explicit delta)")
        check(self.rff.n_pairs is None or (isinstance(self.rff.n_pairs, int) and self.rff.n_pairs >= 1),
              "rff.n_pairs", "must be a positive integer")
        check(number(self.rff.feature_constant) and self.rff.feature_constant > 0,
              "rff.feature_constant", "must be positive")
        src = self.source
        check(src.preset is not None or bool(src.csv), "source",
              "give source.preset or source.csv")
        check(src.preset is None or src.preset in PRESETS, "source.preset",
              f"unknown preset {src.preset!r}; valid presets: {', '.join(PRESETS)}")
        check(number(src.scale) and src.scale > 0, "source.scale", "must be positive")
        check(isinstance(self.runs, int) and self.runs >= 1, "runs", "must be an integer >= 1")
        check(isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a non-negative integer")
        check(isinstance(self.workers, int) and self.workers >= 1, "workers", "must be an integer >= 1")
        check(isinstance(self.smoothing_window, int) and self.smoothing_window >= 1,
              "smoothing_window", "must be a positive integer")
        cpd = self.cpd
        check(cpd.threshold_C is None or (number(cpd.threshold_C) and cpd.threshold_C > 0),
              "cpd.threshold_C", "must be positive")
        if cpd.grid is not None:
            grid_ok = bool(cpd.grid) and all(number(c) and c > 0 for c in cpd.grid)
            check(grid_ok and list(cpd.grid) == sorted(cpd.grid), "cpd.grid",
                  "must be a nonempty ascending list of positive values")
        if number(self.lam):
            check(0 < self.cpd_delta < 1, "cpd.delta", "must lie in (0, 1)")
        check(cpd.horizon is None or (isinstance(cpd.horizon, int) and cpd.horizon >= 2),
              "cpd.horizon", "must be an integer >= 2")
        check(cpd.min_window is None or (isinstance(cpd.min_window, int) and cpd.min_window >= 1),
              "cpd.min_window", "must be a positive integer")
        check(cpd.reference in ("main", "slowest"), "cpd.reference", "must be 'main' or 'slowest'")
        check(cpd.tune_mode in ("safe", "detect"), "cpd.tune_mode", "must be 'safe' or 'detect'")
        check(isinstance(cpd.tune_streams, int) and cpd.tune_streams >= 1, "cpd.tune_streams",
              "must be a positive integer")
        if self.algorithm == "oracle_restart" and self.changepoints is None:
            check(src.preset is not None, "changepoints", "required for CSV sources")
        if errors:
            raise ConfigError("; ".join(errors))
        return self


PROFILES = {
    "skab": {
        "lam": 0.005,
        "algorithm": "sonarc",
        "runs": 1,
        "source": {
            "preset": None,
            "label_column": "anomaly",
            "exclude_columns": ["datetime", "changepoint"],
            "delimiter": ";",
            "standardize": True,
        },
        "cpd": {"tune_mode": "detect", "grid": [10.0 ** -n for n in range(12, 0, -1)]},
    },
    "iot": {
        "lam": 0.1,
        "runs": 1,
        "source": {"preset": None, "standardize": True},
    },
}


def defaults() -> RunConfig:
    return RunConfig()


def _merge(base, update):
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, profile=None) -> dict:
    """Defaults, then a named profile, then a YAML file, as a plain dict.

    ``path`` may also point at a ``manifest.json`` written by a previous run.
    """
    data = defaults().to_dict()
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"profile: unknown profile {profile!r}; valid: {', '.join(PROFILES)}")
        data = _merge(data, PROFILES[profile])
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config: top level must be a mapping")
        if isinstance(loaded.get("config"), dict) and "summary" in loaded:
            # a run manifest: replay its recorded config
            loaded = loaded["config"]
        data = _merge(data, loaded)
    return data


def apply_overrides(data: dict, overrides: dict) -> dict:
    """Set dotted keys (``"rff.gamma"``) that are not None."""
    out = copy.deepcopy(data)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = out
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return out
