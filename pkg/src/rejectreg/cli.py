"""Command-line interface.

Every command accepts ``--config FILE`` (a flat JSON object whose keys are
the long option names with dashes replaced by underscores); explicit flags
override the file. Exit codes: 0 success, 2 configuration error, 3 I/O or
parse error, 4 numerical failure.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import experiments as ex
from .calibration import DEFAULT_U, calibrate_knn
from .core import DimensionMismatchError, LabeledDataset, RejectRegError, check_query, evaluate_arrays
from .io import (
    ArtifactError,
    ModelArtifact,
    ParseError,
    Standardizer,
    format_outcomes,
    read_features_csv,
    read_labeled_csv,
    resolve_data_path,
    write_text,
)
from .oracle import MODELS, get_model, sample

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 2, 3, 4
JOBS_ENV = "REJECTREG_JOBS"


class ConfigError(RejectRegError, ValueError):
    pass


@dataclass
class RunConfig:
    data: Optional[str] = None
    unlabeled: Optional[str] = None
    synthetic: Optional[str] = None
    n: int = 1000
    epsilon: float = 0.2
    epsilons: tuple = ex.DEFAULT_EPSILONS
    lambda_grid: Optional[tuple] = None
    k: Optional[int] = None
    k_sigma: Optional[int] = None
    k_grid: tuple = ex.DEFAULT_K_GRID
    folds: int = 10
    shared_k: bool = False
    u: float = DEFAULT_U
    seed: int = 0
    reps: int = 100
    jobs: int = 1
    deterministic_zeta: bool = False
    standardize: bool = False
    fractions: tuple = (0.5, 0.2, 0.3)
    n_grid: tuple = (200, 800, 3200)
    N: int = 10_000
    c: float = 1.0
    mc_n: int = 20_000
    out: Optional[str] = None
    json_twin: bool = False

    def validate(self, command: str) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(0.0 <= self.epsilon < 1.0, f"epsilon must lie in [0, 1), got {self.epsilon}")
        need(len(self.epsilons) > 0, "epsilon grid is empty")
        need(all(0.0 <= e < 1.0 for e in self.epsilons), "every epsilon must lie in [0, 1)")
        need(self.u >= 0, f"u must be >= 0, got {self.u}")
        need(0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer")
        need(self.reps >= 1, "reps must be >= 1")
        need(self.jobs >= 1 or self.jobs == -1, "jobs must be >= 1 (or -1 for all cores)")
        need(self.folds >= 2, "folds must be >= 2")
        need(len(self.k_grid) > 0 and min(self.k_grid) >= 1, "k grid must hold positive integers")
        need(self.k is None or self.k >= 1, "k must be >= 1")
        need(self.k_sigma is None or self.k_sigma >= 1, "k_sigma must be >= 1")
        need(self.n >= 1 and self.N >= 1 and self.mc_n >= 1, "sizes must be positive")
        if self.lambda_grid is not None:
            need(len(self.lambda_grid) > 0, "lambda grid is empty")
            need(min(self.lambda_grid) >= 0, "lambdas must be nonnegative")
        need(len(self.fractions) == 3 and min(self.fractions) > 0
             and abs(sum(self.fractions) - 1) <= 1e-9, "fractions must be three positives summing to 1")
        need(len(self.n_grid) >= 3, "rate study needs at least 3 n values")
        if self.synthetic is not None:
            need(self.synthetic in MODELS, f"unknown synthetic model {self.synthetic!r}")
        if command in ("fit", "benchmark", "sweep"):
            need((self.data is None) != (self.synthetic is None),
                 "give exactly one of data or synthetic")
        if command in ("fit", "predict", "benchmark", "sweep", "rate-study"):
            need(self.out is not None, "out is required")
        return self


_TUPLE_FIELDS = {"epsilons": float, "lambda_grid": float, "k_grid": int, "fractions": float, "n_grid": int}


def _coerce(name: str, value):
    f = {f.name: f for f in fields(RunConfig)}[name]
    if value is None:
        return None
    if name in _TUPLE_FIELDS:
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list")
        try:
            return tuple(_TUPLE_FIELDS[name](v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: bad list {value!r}") from None
    typ = str(f.type)
    try:
        if "bool" in typ:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if "int" in typ:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if "float" in typ:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if not isinstance(value, str):
            raise TypeError
        return value
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: bad value {value!r} for type {typ}") from None


def build_config(config_path: Optional[str], overrides: dict, command: str) -> RunConfig:
    values = {}
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a flat JSON object")
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values.update(doc)
    if "jobs" not in values and os.environ.get(JOBS_ENV):
        values["jobs"] = os.environ[JOBS_ENV]
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    return cfg.validate(command)


def _load_data(cfg: RunConfig) -> tuple[LabeledDataset, str]:
    if cfg.synthetic:
        return sample(get_model(cfg.synthetic), cfg.n, cfg.seed), cfg.synthetic
    path = resolve_data_path(cfg.data)
    return read_labeled_csv(path), Path(path).stem


def _standardized(ds: LabeledDataset, scaler: Standardizer | None) -> LabeledDataset:
    return ds if scaler is None else LabeledDataset(scaler.transform(ds.X), ds.y)


def _k_arg(cfg: RunConfig):
    if cfg.k is None:
        return None
    return (cfg.k, cfg.k_sigma or cfg.k)


def _cv(cfg: RunConfig) -> ex.CvSpec:
    return ex.CvSpec(folds=cfg.folds, k_grid=cfg.k_grid, shared_k=cfg.shared_k)


def _write_meta(cfg: RunConfig, metadata: dict) -> None:
    doc = {"config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(cfg).items()},
           "report": metadata}
    write_text(str(cfg.out) + ".meta.json", json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _guard(fn):
    """Map exceptions to exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except (OSError, ParseError, ArtifactError, DimensionMismatchError) as e:
            click.echo(f"i/o error: {e}", err=True)
            sys.exit(EXIT_IO)
        except (RejectRegError, ValueError, RuntimeError, FloatingPointError) as e:
            click.echo(f"numerical error: {e}", err=True)
            sys.exit(EXIT_NUMERIC)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _common(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(), help="Flat JSON config file."),
        click.option("--seed", type=int),
        click.option("--out", type=click.Path()),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _data_opts(f):
    opts = [
        click.option("--data", help="Labeled CSV (header row, label in last column)."),
        click.option("--synthetic", type=click.Choice(sorted(MODELS)), help="Synthetic model instead of a CSV."),
        click.option("--n", type=int, help="Sample size for --synthetic."),
        click.option("--k", type=int, help="Fixed k (skips cross-validation)."),
        click.option("--k-sigma", type=int, help="Fixed k for the variance estimate (defaults to --k)."),
        click.option("--cv", "k_grid", help="Comma-separated k grid for cross-validation."),
        click.option("--folds", type=int),
        click.option("--shared-k/--separate-k", default=None, help="One CV-selected k for both estimates."),
        click.option("--u", type=float, help="Perturbation bound for the variance scores."),
        click.option("--standardize/--no-standardize", default=None, help="Standardize features on the training part."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Regression with reject option: kNN plug-in predictors."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@_common
@_data_opts
@click.option("--unlabeled", help="Unlabeled CSV for calibration; otherwise the data is split.")
@click.option("--epsilon", type=float)
@click.option("--deterministic-zeta/--random-zeta", default=None)
@click.option("--json-twin/--no-json-twin", default=None, help="Also write a JSON copy of the artifact.")
@_guard
def fit(config_path, **kw):
    """Fit, calibrate and save a predictor."""
    cfg = build_config(config_path, kw, "fit")
    data, _ = _load_data(cfg)
    test = None
    if cfg.unlabeled:
        train, cal = data, read_features_csv(resolve_data_path(cfg.unlabeled))
    else:
        train, cal, test = ex.split(data, ex.SplitSpec(cfg.fractions, cfg.seed))
    scaler = Standardizer.fit(train.X) if cfg.standardize else None
    train_s = _standardized(train, scaler)
    cal_X = cal.X if scaler is None else scaler.transform(cal.X)
    model, sel = ex.fit_knn(train_s, _k_arg(cfg), _cv(cfg), cfg.seed)
    pred = calibrate_knn(model, cal_X, cfg.epsilon, cfg.u, cfg.seed, cfg.deterministic_zeta)
    art = ModelArtifact(pred, scaler)
    art.save(cfg.out, json_twin=cfg.json_twin)
    click.echo(f"k_f={model.k} k_sigma={model.k_sigma}")
    click.echo(f"threshold_equivalent={pred.threshold_equivalent()!r}")
    if test is not None:
        acc, vals = art.predict_batch(test.X)
        rep = evaluate_arrays(acc, vals, test.y)
        click.echo(f"test_reject_rate={rep.reject_rate!r} test_err={rep.err_accepted!r}")


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--features", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--deterministic-zeta/--random-zeta", default=None)
@_guard
def predict(model_path, features, out, deterministic_zeta):
    """Predict or reject each row of a features CSV."""
    art = ModelArtifact.load(model_path, deterministic_zeta=deterministic_zeta)
    X = read_features_csv(features).X
    check_query(X, art.predictor.dimension)
    accept, values = art.predict_batch(X)
    write_text(out, format_outcomes(accept, values))


@main.command()
@_common
@_data_opts
@click.option("--epsilons", help="Comma-separated epsilon grid.")
@click.option("--reps", type=int)
@click.option("--jobs", type=int, help=f"Worker processes (env {JOBS_ENV}).")
@click.option("--rows-out", type=click.Path(), help="Also write per-repetition rows.")
@_guard
def benchmark(config_path, rows_out, **kw):
    """Repeated split/fit/calibrate/evaluate over an epsilon grid, one row per epsilon."""
    cfg = build_config(config_path, kw, "benchmark")
    data, name = _load_data(cfg)
    if cfg.standardize:
        # global standardization; per-repetition refits change little and cost a lot
        data = _standardized(data, Standardizer.fit(data.X))
    report = ex.run_epsilon_grid(data, cfg.epsilons, _cv(cfg), cfg.reps, cfg.seed,
                                 cfg.fractions, cfg.u, _k_arg(cfg), cfg.jobs, name)
    write_text(cfg.out, report.to_csv())
    _write_meta(cfg, report.metadata)
    if rows_out:
        write_text(rows_out, report.rows_csv())


@main.command()
@_common
@_data_opts
@click.option("--lambda-grid", help="Comma-separated lambdas (default: 50-point geometric grid).")
@_guard
def sweep(config_path, **kw):
    """Error, rejection rate and penalized risk of the lambda-threshold rule."""
    cfg = build_config(config_path, kw, "sweep")
    data, _ = _load_data(cfg)
    train, cal, test = ex.split(data, ex.SplitSpec(cfg.fractions, cfg.seed))
    if cfg.standardize:
        sc = Standardizer.fit(train.X)
        train, test = _standardized(train, sc), _standardized(test, sc)
        cal = type(cal)(sc.transform(cal.X))
    model, _ = ex.fit_knn(train, _k_arg(cfg), _cv(cfg), cfg.seed)
    report = ex.lambda_sweep(model, cal, test, cfg.lambda_grid)
    write_text(cfg.out, report.to_csv())


@main.command("rate-study")
@_common
@click.option("--synthetic", type=click.Choice(sorted(MODELS)))
@click.option("--n-grid", help="Comma-separated labeled sizes.")
@click.option("--N", "N", type=int, help="Unlabeled calibration size.")
@click.option("--epsilon", type=float)
@click.option("--reps", type=int)
@click.option("--c", type=float, help="k = round(c * n^(2/(d+2))).")
@click.option("--mc-n", type=int, help="Monte-Carlo points per excess-risk estimate.")
@click.option("--jobs", type=int)
@_guard
def rate_study(config_path, **kw):
    """Excess-risk decay of the kNN predictor on a synthetic model."""
    cfg = build_config(config_path, kw, "rate-study")
    if not 0 < cfg.epsilon < 1:
        raise ConfigError("rate study needs 0 < epsilon < 1")
    report = ex.rate_study(get_model(cfg.synthetic or "sine1d"), cfg.n_grid, cfg.N, cfg.epsilon, cfg.reps,
                           cfg.seed, cfg.c, mc_n=cfg.mc_n, jobs=cfg.jobs)
    write_text(cfg.out, report.to_csv())
    _write_meta(cfg, report.metadata)
    click.echo(f"slope={report.slope!r} ci=({report.slope_ci[0]!r}, {report.slope_ci[1]!r})")


if __name__ == "__main__":
    main()
