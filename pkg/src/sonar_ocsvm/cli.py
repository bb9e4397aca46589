"""Command-line interface.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 failed
``--assert-*`` check.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from ._validation import ConfigError, InputError
from .config import PROFILES, RunConfig, apply_overrides, defaults, load_config
from .kernel_features import embed_many, sample_rff
from .metrics import offline_eval
from .runner import grid_points, load_stream, run_experiment, tune_cpd
from .sonar import load_state
from .streams import generate, preset, write_csv

__all__ = ["cli", "main", "defaults", "RunConfig"]

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ASSERT = 0, 1, 2, 3


class AcceptanceFailure(Exception):
    pass


def _floats(text):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    vals = _floats(text)
    return None if vals is None else [int(v) for v in vals]


_CONFIG_OPTIONS = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML config file."),
    click.option("--profile", type=click.Choice(sorted(PROFILES)), help="Named parameter profile."),
    click.option("--algorithm", type=str),
    click.option("--lam", "--lambda", "lam", type=float, help="Anticipated outlier proportion."),
    click.option("--epsilon", type=float),
    click.option("--schedule", type=str, help="theory, adagrad or bottou."),
    click.option("--eta0", type=float),
    click.option("--gamma", type=float, help="RBF bandwidth."),
    click.option("--r-min", type=float),
    click.option("--rff-delta", type=float),
    click.option("--n-pairs", type=int, help="Explicit number of cos-sin pairs."),
    click.option("--preset", "preset_name", type=str),
    click.option("--csv", "csv_paths", multiple=True, type=click.Path(dir_okay=False)),
    click.option("--label-column", type=str),
    click.option("--feature-column", "feature_columns", multiple=True),
    click.option("--exclude-column", "exclude_columns", multiple=True),
    click.option("--delimiter", type=str),
    click.option("--scale", type=float, help="Multiplier on preset phase lengths."),
    click.option("--standardize/--no-standardize", default=None),
    click.option("--runs", type=int),
    click.option("--seed", type=int),
    click.option("--output-dir", type=click.Path(file_okay=False)),
    click.option("--workers", type=int),
    click.option("--threshold-c", type=float),
    click.option("--grid", type=str, help="Comma-separated ascending threshold grid."),
    click.option("--cpd-delta", type=float),
    click.option("--horizon", type=int),
    click.option("--min-window", type=int),
    click.option("--reference", type=str),
    click.option("--tune-mode", type=str),
    click.option("--tune-streams", type=int),
    click.option("--changepoints", type=str, help="Comma-separated row indices."),
    click.option("--smoothing-window", type=int),
    click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE",
                 help="Override any config key, e.g. cpd.reference=slowest."),
]


def config_options(func):
    for option in reversed(_CONFIG_OPTIONS):
        func = option(func)
    return func


def build_config(opts) -> RunConfig:
    """Defaults < profile < YAML file < flags."""
    data = load_config(opts.pop("config_path", None), opts.pop("profile", None))
    flags = {
        "algorithm": opts.get("algorithm"),
        "lam": opts.get("lam"),
        "epsilon": opts.get("epsilon"),
        "schedule": opts.get("schedule"),
        "eta0": opts.get("eta0"),
        "rff.gamma": opts.get("gamma"),
        "rff.r_min": opts.get("r_min"),
        "rff.delta": opts.get("rff_delta"),
        "rff.n_pairs": opts.get("n_pairs"),
        "source.preset": opts.get("preset_name"),
        "source.csv": list(opts.get("csv_paths") or []) or None,
        "source.label_column": opts.get("label_column"),
        "source.feature_columns": list(opts.get("feature_columns") or []) or None,
        "source.exclude_columns": list(opts.get("exclude_columns") or []) or None,
        "source.delimiter": opts.get("delimiter"),
        "source.scale": opts.get("scale"),
        "source.standardize": opts.get("standardize"),
        "runs": opts.get("runs"),
        "seed": opts.get("seed"),
        "output_dir": opts.get("output_dir"),
        "workers": opts.get("workers"),
        "cpd.threshold_C": opts.get("threshold_c"),
        "cpd.grid": _floats(opts.get("grid")),
        "cpd.delta": opts.get("cpd_delta"),
        "cpd.horizon": opts.get("horizon"),
        "cpd.min_window": opts.get("min_window"),
        "cpd.reference": opts.get("reference"),
        "cpd.tune_mode": opts.get("tune_mode"),
        "cpd.tune_streams": opts.get("tune_streams"),
        "changepoints": _ints(opts.get("changepoints")),
        "smoothing_window": opts.get("smoothing_window"),
    }
    for item in opts.get("assignments") or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        flags[key.strip()] = yaml.safe_load(raw)
    if flags["source.preset"] is not None:
        data["source"]["csv"] = None
    data = apply_overrides(data, flags)
    return RunConfig.from_dict(data).validate()


@click.group()
@click.version_option(package_name="sonar-ocsvm")
def cli():
    """Streaming one-class novelty detection experiments."""


@cli.command()
@click.option("--preset", "preset_name", required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--scale", type=float, default=1.0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def generate_cmd(preset_name, seed, scale, out_path):
    """Write a synthetic preset stream to CSV."""
    write_csv(generate(preset(preset_name, seed=seed, scale=scale)), out_path)
    click.echo(out_path)


generate_cmd.name = "generate"


@cli.command()
@config_options
@click.option("--assert-type1-max", type=float,
              help="Fail (exit 3) if the aggregated second-half Type I error exceeds this.")
@click.option("--assert-restarts", type=(float, float), default=None,
              help="Fail (exit 3) unless mean restarts per run lies in [MIN, MAX].")
@click.option("--print-config", is_flag=True, help="Print the resolved config and exit.")
def run(assert_type1_max, assert_restarts, print_config, **opts):
    """Run seeded repetitions and write metric files plus a manifest."""
    cfg = build_config(opts)
    if print_config:
        click.echo(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
        return
    manifest, _ = run_experiment(cfg, log=lambda msg: click.echo(msg, err=True))
    summary = manifest["summary"]
    click.echo(json.dumps(summary, indent=2))
    failures = []
    if assert_type1_max is not None and not summary["second_half_type1_max"] <= assert_type1_max:
        failures.append(f"second-half Type I {summary['second_half_type1_max']:.5f} > {assert_type1_max}")
    if assert_restarts is not None:
        lo, hi = assert_restarts
        if not lo <= summary["mean_restarts"] <= hi:
            failures.append(f"mean restarts {summary['mean_restarts']:.2f} outside [{lo}, {hi}]")
    if failures:
        raise AcceptanceFailure("; ".join(failures))


@cli.command("tune-cpd")
@config_options
def tune_cpd_cmd(**opts):
    """Select the changepoint threshold C from a grid."""
    cfg = build_config(opts)
    stream = Z = None
    if cfg.cpd.tune_mode == "detect":
        from .runner import derive_seeds, rff_config_for

        seeds = derive_seeds(cfg.seed, 0)
        stream = load_stream(cfg, seeds["stream"])
        Z = embed_many(sample_rff(rff_config_for(cfg, stream.X.shape[1], seeds["rff"])), stream.X)
    threshold, peaks = tune_cpd(cfg, stream, Z)
    click.echo(json.dumps({"threshold_C": threshold, "peaks": peaks}, indent=2))


def _load_model(path):
    state, rff_cfg = load_state(path)
    if rff_cfg is None:
        raise ConfigError(f"model: {path} has no RFF settings")
    return state, sample_rff(rff_cfg)


@cli.command("eval-offline")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@config_options
def eval_offline_cmd(model_path, **opts):
    """Classify a labeled dataset with a saved final iterate."""
    cfg = build_config(opts)
    if cfg.source.label_column is None:
        raise ConfigError("source.label_column: offline evaluation needs labels")
    state, rff_map = _load_model(model_path)
    stream = load_stream(cfg)
    Z = embed_many(rff_map, stream.X)
    click.echo(json.dumps(offline_eval(state, Z, stream.labels, cfg.epsilon), indent=2))


@cli.command("grid-export")
@click.option("--model", "model_paths", required=True, multiple=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Saved state(s); with two, their disagreement is reported.")
@click.option("--xlim", type=(float, float), default=(-4.0, 4.0), show_default=True)
@click.option("--ylim", type=(float, float), default=(-4.0, 4.0), show_default=True)
@click.option("--n", "n_points", type=int, default=100, show_default=True)
@click.option("--epsilon", type=float, default=0.0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
def grid_export_cmd(model_paths, xlim, ylim, n_points, epsilon, out_path):
    """Evaluate saved models on a 2-D raw-space grid."""
    if n_points < 2:
        raise ConfigError("n: need at least 2 points per axis")
    P = grid_points(xlim, ylim, n_points)
    columns = {"x0": P[:, 0], "x1": P[:, 1]}
    flags = []
    for k, path in enumerate(model_paths):
        state, rff_map = _load_model(path)
        if rff_map.config.input_dim != 2:
            raise ConfigError(f"model: {path} expects {rff_map.config.input_dim}-D input, grid is 2-D")
        scores = embed_many(rff_map, P) @ state.w
        flagged = scores < state.rho * (1.0 - epsilon)
        columns[f"score_{k}"] = scores
        columns[f"outlier_{k}"] = flagged.astype(int)
        flags.append(flagged)
    if out_path:
        header = list(columns)
        rows = np.column_stack([columns[c] for c in header])
        with Path(out_path).open("w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(repr(float(v)) if "score" in h or h[0] == "x" else str(int(v))
                                  for h, v in zip(header, row)) + "\n")
    report = {"cells": int(P.shape[0]), "outlier_fraction": [float(f.mean()) for f in flags]}
    if len(flags) == 2:
        report["disagreement"] = float(np.mean(flags[0] != flags[1]))
    click.echo(json.dumps(report, indent=2))


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="sonar-ocsvm", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        sys.exit(EXIT_CONFIG)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_CONFIG)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except InputError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    except AcceptanceFailure as exc:
        click.echo(f"check failed: {exc}", err=True)
        sys.exit(EXIT_ASSERT)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
