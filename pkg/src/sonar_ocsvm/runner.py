"""Experiment pipeline: source -> (standardize) -> embed -> learner -> metrics."""

from __future__ import annotations

import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from ._validation import ConfigError, InputError
from .config import RunConfig
from .kernel_features import RffConfig, embed_many, recommended_feature_count, sample_rff
from .metrics import MetricTrace, aggregate, smooth, write_sidecar, write_trace_csv
from .sgd_ocsvm import step_ocsvm
from .sonar import OUTLIER, ModelState, SonarParams, StepSchedule, init_state, save_state, step
from .sonarc import CpdConfig, default_grid, max_cpd_statistic, oracle_restart_runner, run_cpd
from .streams import (
    PhaseSpec,
    generate_arrays,
    preset,
    read_csv_arrays,
    standardize_array,
)

__all__ = [
    "Stream",
    "RunResult",
    "load_stream",
    "derive_seeds",
    "rff_config_for",
    "run_once",
    "tune_cpd",
    "run_experiment",
    "second_half_type1",
    "skab_paths",
    "grid_points",
]


@dataclass
class Stream:
    X: np.ndarray
    labels: list | None = None
    phase_ids: np.ndarray | None = None

    @property
    def changepoints(self):
        if self.phase_ids is None:
            return []
        pid = np.asarray(self.phase_ids)
        return [int(i) for i in np.flatnonzero(pid[1:] != pid[:-1]) + 1]

    @property
    def train_mask(self):
        if self.labels is None:
            return np.ones(len(self.X), dtype=bool)
        return np.array([lab != OUTLIER for lab in self.labels], dtype=bool)


@dataclass
class RunResult:
    trace: MetricTrace
    state: ModelState | None
    rff: RffConfig
    seeds: dict
    restarts: list = field(default_factory=list)
    threshold_C: float | None = None


def derive_seeds(base_seed, run_index):
    """Independent stream and RFF seeds for one repetition."""
    ss = np.random.SeedSequence([int(base_seed), int(run_index)])
    stream_seed, rff_seed = (int(v) for v in ss.generate_state(2, dtype=np.uint64))
    return {"run": int(run_index), "stream": stream_seed, "rff": rff_seed}


def load_stream(cfg: RunConfig, stream_seed=0) -> Stream:
    src = cfg.source
    if src.preset is not None:
        X, pid = generate_arrays(preset(src.preset, seed=stream_seed, scale=src.scale))
        return Stream(X=X, labels=None, phase_ids=pid)
    parts, labels, phases = [], [], []
    for path in src.csv:
        X, lab, ph = read_csv_arrays(path, src.feature_columns, src.label_column,
                                     delimiter=src.delimiter, exclude_columns=src.exclude_columns)
        if X.size == 0:
            continue
        parts.append(X)
        labels.extend(lab)
        phases.extend(ph)
    if not parts:
        raise InputError("CSV source contains no rows")
    dims = {p.shape[1] for p in parts}
    if len(dims) != 1:
        raise InputError(f"CSV files disagree on feature count: {sorted(dims)}")
    X = np.vstack(parts)
    if cfg.standardize:
        X = standardize_array(X)
    has_labels = src.label_column is not None
    return Stream(X=X, labels=labels if has_labels else None, phase_ids=None)


def rff_config_for(cfg: RunConfig, input_dim, rff_seed) -> RffConfig:
    n_pairs = cfg.rff.n_pairs
    if n_pairs is None:
        n_pairs = recommended_feature_count(input_dim, cfg.rff.r_min, cfg.rff_delta,
                                            cfg.rff.feature_constant)
    return RffConfig(cfg.rff.gamma, int(n_pairs), int(input_dim), int(rff_seed))


def _online(Z, mask, cfg: RunConfig):
    params = SonarParams(lam=cfg.lam, epsilon=cfg.epsilon)
    state = init_state(Z.shape[1], params, StepSchedule(cfg.schedule_kind, cfg.base_rate))
    update = step_ocsvm if cfg.algorithm == "sgd_ocsvm" else step
    n = Z.shape[0]
    decisions = np.zeros(n, dtype=bool)
    margins = np.full(n, np.nan)
    shrink = 1.0 - cfg.epsilon
    for i in range(n):
        x = Z[i]
        decisions[i] = float(state.w @ x) < state.rho * shrink
        if mask[i]:
            state, _ = update(state, x, params, check=False)
        norm = math.sqrt(float(state.w @ state.w))
        margins[i] = state.rho / norm if norm > 1e-12 else np.nan
    return decisions, margins, state


def _cpd_config(cfg: RunConfig, horizon, threshold):
    return CpdConfig(int(max(horizon, 2)), cfg.lam, cfg.cpd_delta, threshold,
                     cfg.cpd.min_window, cfg.cpd.reference, cfg.epsilon)


def _tuning_streams(cfg: RunConfig, horizon):
    """Stationary streams of length ``horizon``, each drawn from one phase
    distribution of an independently seeded instance of the source preset."""
    src = cfg.source
    for k in range(cfg.cpd.tune_streams):
        seeds = derive_seeds(cfg.cpd.tune_seed + cfg.seed, k)
        phases = preset(src.preset, seed=seeds["stream"], scale=src.scale)
        base = phases[k % len(phases)]
        spec = PhaseSpec(horizon, base.centers, base.std, base.kind, seed=seeds["stream"] % 2**32)
        rff = rff_config_for(cfg, spec.dim, seeds["rff"])
        yield embed_many(sample_rff(rff), spec.sample())


def tune_cpd(cfg: RunConfig, stream: Stream | None = None, Z=None):
    """Threshold for SONARC plus the per-stream peak statistics.

    ``safe`` mode tunes on stationary streams generated from the preset;
    ``detect`` mode tunes on the (embedded) stream ``Z`` itself.
    """
    grid = list(cfg.cpd.grid) if cfg.cpd.grid is not None else default_grid()
    if cfg.cpd.tune_mode == "detect":
        if Z is None:
            raise ConfigError("cpd.tune_mode: 'detect' needs the evaluation stream")
        mask = stream.train_mask if stream is not None else None
        horizon = cfg.cpd.horizon or int(np.sum(mask) if mask is not None else len(Z))
        peaks = [max_cpd_statistic(Z, _cpd_config(cfg, horizon, 1.0), mask)]
        hits = [c for c in grid if c <= peaks[0]]
        if not hits:
            raise ConfigError(f"cpd.grid: no value detects a change (peak statistic {peaks[0]:.3g})")
        return hits[-1], peaks
    if cfg.source.preset is None:
        raise ConfigError("cpd.threshold_C: give a threshold or use tune_mode 'detect' for CSV sources")
    horizon = cfg.cpd.horizon
    if horizon is None:
        horizon = sum(p.length for p in preset(cfg.source.preset, scale=cfg.source.scale))
    peaks = [max_cpd_statistic(Zs, _cpd_config(cfg, horizon, 1.0))
             for Zs in _tuning_streams(cfg, horizon)]
    for c in grid:
        if all(c > p for p in peaks):
            return c, peaks
    counts = {c: sum(c <= p for p in peaks) for c in grid}
    raise ConfigError(f"cpd.grid: every value triggers on stationary data; triggers per C: {counts}")


def run_once(cfg: RunConfig, run_index=0, threshold_C=None, stream: Stream | None = None) -> RunResult:
    seeds = derive_seeds(cfg.seed, run_index)
    stream = stream if stream is not None else load_stream(cfg, seeds["stream"])
    rff = rff_config_for(cfg, stream.X.shape[1], seeds["rff"])
    Z = embed_many(sample_rff(rff), stream.X)
    mask = stream.train_mask
    state = None
    restarts = []
    if cfg.algorithm in ("sonar", "sgd_ocsvm"):
        decisions, margins, state = _online(Z, mask, cfg)
        trace = MetricTrace.from_decisions(decisions, stream.labels, margins)
    elif cfg.algorithm == "sonarc":
        if threshold_C is None:
            threshold_C = cfg.cpd.threshold_C
        if threshold_C is None:
            threshold_C, _ = tune_cpd(cfg, stream, Z)
        horizon = cfg.cpd.horizon or int(mask.sum())
        run = run_cpd(Z, _cpd_config(cfg, horizon, threshold_C), mask)
        state = run.ensemble.main
        restarts = run.restarts
        trace = MetricTrace.from_decisions(run.decisions, stream.labels, run.margins, run.restarted)
    else:
        cps = cfg.changepoints if cfg.changepoints is not None else stream.changepoints
        trace = oracle_restart_runner(Z, cps, cfg.lam, cfg.epsilon, stream.labels, mask)
        restarts = list(cps)
    return RunResult(trace=trace, state=state, rff=rff, seeds=seeds, restarts=restarts,
                     threshold_C=threshold_C)


def second_half_type1(trace_or_curve):
    """Largest cumulative Type I value over the second half of a run."""
    curve = np.asarray(getattr(trace_or_curve, "type1_cum", trace_or_curve), dtype=float)
    tail = curve[len(curve) // 2:]
    return float(np.nanmax(tail)) if tail.size else math.nan


def _package_version():
    try:
        return version("sonar-ocsvm")
    except PackageNotFoundError:
        return "unknown"


def _run_job(args):
    cfg_dict, run_index, threshold = args
    cfg = RunConfig.from_dict(cfg_dict)
    return run_once(cfg, run_index, threshold)


def run_experiment(cfg: RunConfig, out_dir=None, log=None):
    """Execute ``cfg.runs`` repetitions and write per-run files, an
    aggregate and a manifest. Returns ``(manifest, results)``."""
    cfg.validate()
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    threshold, peaks = None, None
    if cfg.algorithm == "sonarc":
        threshold = cfg.cpd.threshold_C
        if threshold is None and cfg.cpd.tune_mode == "safe":
            threshold, peaks = tune_cpd(cfg)
            if log:
                log(f"tuned threshold_C = {threshold:g} (stationary peaks up to {max(peaks):.3g})")
    jobs = [(cfg.to_dict(), k, threshold) for k in range(cfg.runs)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_job(job))
            if log:
                r = results[-1]
                log(f"run {job[1]}: final type1 {r.trace.type1_cum[-1]:.5f}, restarts {len(r.restarts)}")
    for res in results:
        k = res.seeds["run"]
        write_trace_csv(res.trace, out / f"run_{k:03d}.csv")
        write_sidecar(out / f"run_{k:03d}.json", config=cfg.to_dict(), seeds=res.seeds,
                      detected_changes=res.restarts, smoothing_window=cfg.smoothing_window,
                      extra={"threshold_C": res.threshold_C, "rff": vars(res.rff)})
        if res.state is not None:
            save_state(res.state, out / f"run_{k:03d}_state.json", rff=res.rff)
    agg = aggregate([r.trace for r in results])
    _write_aggregate(agg, out / "aggregate.csv", cfg.smoothing_window)
    final_t1 = [r.trace.type1_cum[-1] for r in results]
    manifest = {
        "config": cfg.to_dict(),
        "resolved": {
            "schedule": cfg.schedule_kind,
            "eta0": cfg.base_rate,
            "rff_delta": cfg.rff_delta,
            "rff_pairs": results[0].rff.num_pairs,
            "feature_dim": 2 * results[0].rff.num_pairs,
            "standardize": cfg.standardize,
            "threshold_C": threshold if threshold is not None else results[0].threshold_C,
            "tuning_peaks": peaks,
        },
        "version": _package_version(),
        "seeds": [r.seeds for r in results],
        "summary": {
            "final_type1_mean": float(np.nanmean(final_t1)),
            "second_half_type1_max": second_half_type1(agg.mean["type1_cum"]),
            "restarts_per_run": agg.restarts,
            "mean_restarts": agg.mean_restarts,
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable))
    return manifest, results


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _write_aggregate(agg, path, window):
    cols = ["index"]
    data = [np.arange(len(agg.mean["type1_cum"]))]
    for key in ("type1_cum", "type2_cum", "margin"):
        cols += [f"{key}_mean", f"{key}_std", f"{key}_count"]
        data += [agg.mean[key], agg.std[key], agg.count[key]]
    cols.append("margin_smoothed")
    data.append(smooth(agg.mean["margin"], window))
    with Path(path).open("w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in zip(*data):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if math.isnan(v) else repr(float(v))


# -- helpers for the CLI -----------------------------------------------------

def skab_paths(root=None):
    """``valve1/*.csv`` then ``valve2/*.csv`` under a SKAB ``data`` directory,
    in numeric file order. ``root`` defaults to ``$SKAB_DATA_DIR``."""
    root = root or os.environ.get("SKAB_DATA_DIR")
    if not root:
        return []
    paths = []
    for sub in ("valve1", "valve2"):
        files = list((Path(root) / sub).glob("*.csv"))
        files.sort(key=lambda p: [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", p.stem)])
        paths.extend(files)
    return [str(p) for p in paths]


def grid_points(xlim=(-4.0, 4.0), ylim=(-4.0, 4.0), n=100):
    xs = np.linspace(xlim[0], xlim[1], n)
    ys = np.linspace(ylim[0], ylim[1], n)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])
