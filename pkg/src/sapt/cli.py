"""Command-line front end: simulate, estimate, weights, forecast.

Settings resolve with precedence flags > config file > defaults; the fully
resolved configuration is echoed as comment lines at the top of every output
file.  Exit codes: 0 success, 2 configuration or schema error, 3 numerical
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

import numpy as np

from . import io as sapt_io
from .data import demean, FactorSet
from .exceptions import NumericError, ValidationError
from .forecast import ALL_MODELS, forecast_evaluate
from .inference import (
    default_bandwidth,
    latent_unit_asymptotics,
    longrun_fe,
    unit_asymptotics,
    wald_intervals,
)
from .latent import estimate_latent
from .moments import lag_covariances
from .simulate import MonteCarloReport, SimConfig, run_monte_carlo
from .weights import (
    haversine_matrix,
    weights_banded,
    weights_from_correlation,
    weights_from_distance,
    weights_radius,
    EARTH_RADIUS_KM,
)
from .yule_walker import estimate_observed


def _parse_lambda(text: str):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"lambda must be 'auto' or a number, got {text!r}")
    if value < 0:
        raise ValidationError(f"lambda must be nonnegative, got {value}")
    return value


def _parse_k(text: str):
    if text == "boost":
        return "boost"
    try:
        value = int(text)
    except ValueError:
        raise ValidationError(f"k must be 'boost' or an integer >= 0, got {text!r}")
    if value < 0:
        raise ValidationError(f"k must be >= 0, got {value}")
    return value


def _parse_float_list(text: str):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ValidationError(f"cannot parse float list {text!r}")


def _parse_models(text: str):
    if text == "all":
        return ALL_MODELS
    models = tuple(m.strip() for m in text.split(",") if m.strip())
    unknown = set(models) - set(ALL_MODELS)
    if unknown:
        raise ValidationError(f"unknown models {sorted(unknown)}; choose from {ALL_MODELS}")
    return models


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValidationError(f"expected a positive integer, got {value}")
    return value


@dataclass(frozen=True)
class Opt:
    """One resolvable setting: flag name, parser, default, help text."""

    name: str                  # flag spelling without leading dashes
    parse: object              # callable str -> value
    default: object = None
    help: str = ""
    choices: tuple = ()
    required: bool = False

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


_COMMON = [
    Opt("config", str, None, "plain-text key=value settings file"),
    Opt("out-dir", str, ".", "directory for output files"),
]

_OPTS = {
    "simulate": _COMMON + [
        Opt("N", _positive_int, None, "cross-section size", required=True),
        Opt("T", _positive_int, None, "sample length", required=True),
        Opt("K", _positive_int, None, "number of factors", required=True),
        Opt("q", _positive_int, 3, "neighbors per side of the banded weight matrix"),
        Opt("reps", _positive_int, 1, "number of replications"),
        Opt("seed", int, 0, "base seed; replication r uses spawn key (seed, r)"),
        Opt("task", str, "forecast", "simulation task",
            choices=("observed", "latent", "coverage", "forecast")),
        Opt("lambda", _parse_lambda, 1e-3, "ridge penalty or 'auto'"),
        Opt("k", _parse_k, 1, "instrument lag (0 disables stacking) or 'boost'"),
        Opt("kbar", _positive_int, 5, "largest lag scanned by boosting"),
        Opt("k0", _positive_int, 2, "autocovariance lags accumulated in the eigenanalysis"),
        Opt("fraction", float, 0.8, "training fraction for the forecast task"),
        Opt("K-rule", str, "fixed", "factor-count rule for the latent task",
            choices=("fixed", "ic1", "ic2", "ratio")),
        Opt("jobs", _positive_int, 1, "worker processes for replications"),
    ],
    "estimate": _COMMON + [
        Opt("panel", str, None, "panel CSV (time,unit columns)", required=True),
        Opt("factors", str, None, "observed-factor CSV; omit for latent mode"),
        Opt("weights", str, None, "spatial weight CSV", required=True),
        Opt("lambda", _parse_lambda, "auto", "ridge penalty or 'auto'"),
        Opt("lambda-grid", _parse_float_list, None, "candidate penalties for 'auto'"),
        Opt("k", _parse_k, 1, "instrument lag or 'boost'"),
        Opt("kbar", _positive_int, 5, "largest lag scanned by boosting"),
        Opt("k0", _positive_int, 2, "autocovariance lags in the eigenanalysis"),
        Opt("K-rule", str, "ratio", "factor-count rule (latent mode)",
            choices=("fixed", "ic1", "ic2", "ratio")),
        Opt("K", _positive_int, None, "factor count when K-rule=fixed"),
        Opt("infer", bool, False, "add Wald interval endpoints (needs k=1)"),
        Opt("level", float, 0.05, "two-sided interval significance level"),
    ],
    "weights": _COMMON + [
        Opt("weights-source", str, None, "construction recipe", required=True,
            choices=("locations", "distances", "correlation", "banded", "radius")),
        Opt("locations", str, None, "locations CSV (id,lat,lon)"),
        Opt("distances", str, None, "dense distance CSV"),
        Opt("panel", str, None, "panel CSV for the correlation source"),
        Opt("N", _positive_int, None, "size for the banded source"),
        Opt("q", _positive_int, 1, "band half-width for the banded source"),
        Opt("radius-km", float, EARTH_RADIUS_KM, "sphere radius for haversine distances"),
        Opt("threshold", float, None, "neighbor cutoff for the radius source"),
    ],
    "forecast": _COMMON + [
        Opt("panel", str, None, "panel CSV", required=True),
        Opt("factors", str, None, "observed-factor CSV"),
        Opt("weights", str, None, "spatial weight CSV", required=True),
        Opt("models", _parse_models, ALL_MODELS, "models to score, or 'all'"),
        Opt("fraction", float, 0.8, "training fraction of the chronological split"),
        Opt("lambda", _parse_lambda, "auto", "ridge penalty or 'auto'"),
        Opt("lambda-grid", _parse_float_list, None, "candidate penalties for 'auto'"),
        Opt("k", _parse_k, 1, "instrument lag or 'boost'"),
        Opt("kbar", _positive_int, 5, "largest lag scanned by boosting"),
        Opt("k0", _positive_int, 2, "autocovariance lags in the eigenanalysis"),
        Opt("K-rule", str, "ratio", "factor-count rule (latent model)",
            choices=("fixed", "ic1", "ic2", "ratio")),
        Opt("K", _positive_int, None, "factor count when K-rule=fixed"),
    ],
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sapt",
        description="Spatial-interaction factor models: simulate, estimate, forecast.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, opts in _OPTS.items():
        p = sub.add_parser(command)
        for opt in opts:
            if opt.parse is bool:
                p.add_argument(f"--{opt.name}", dest=opt.dest, action="store_true",
                               default=None, help=opt.help)
            else:
                kwargs = {"dest": opt.dest, "type": str, "default": None,
                          "help": opt.help}
                p.add_argument(f"--{opt.name}", **kwargs)
    return parser


def _load_config_file(path: str) -> dict:
    settings = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise OSError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValidationError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        settings[key.strip()] = value.strip()
    return settings


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"cannot parse boolean {text!r}")


def _resolve(command: str, args: argparse.Namespace) -> dict:
    opts = {opt.name: opt for opt in _OPTS[command]}
    file_settings = {}
    config_path = getattr(args, "config", None)
    if config_path:
        file_settings = _load_config_file(config_path)
        unknown = set(file_settings) - set(opts) - {"config"}
        if unknown:
            raise ValidationError(
                f"unknown config keys {sorted(unknown)}; valid keys: {sorted(opts)}"
            )
    resolved = {}
    for name, opt in opts.items():
        flag_value = getattr(args, opt.dest)
        try:
            if flag_value is not None:
                value = opt.parse(flag_value) if opt.parse is not bool and \
                    isinstance(flag_value, str) else flag_value
            elif name in file_settings:
                raw = file_settings[name]
                value = _parse_bool(raw) if opt.parse is bool else opt.parse(raw)
            else:
                value = opt.default
        except (ValidationError, ValueError) as exc:
            raise ValidationError(f"--{name}: {exc}") from exc
        if opt.choices and value is not None and value not in opt.choices:
            raise ValidationError(
                f"--{name} must be one of {opt.choices}, got {value!r}"
            )
        if opt.required and value is None:
            raise ValidationError(f"--{name} is required")
        resolved[name] = value
    return resolved


def _echo(settings: dict, command: str) -> dict:
    echo = {k: v for k, v in settings.items() if v is not None and k != "config"}
    echo["command"] = command
    return echo


def _check_panel_variation(panel) -> None:
    stds = panel.values.std(axis=0)
    if np.any(stds == 0.0):
        bad = int(np.argmax(stds == 0.0))
        raise ValidationError(f"unit {panel.unit_ids[bad]!r} is constant over time")


def _n_factors_spec(settings: dict):
    rule = settings["K-rule"]
    if rule == "fixed":
        if settings.get("K") is None:
            raise ValidationError("K-rule=fixed requires --K")
        return settings["K"]
    return rule


def _cmd_simulate(settings: dict) -> int:
    config = SimConfig(N=settings["N"], T=settings["T"], K=settings["K"],
                       q=settings["q"], reps=settings["reps"], seed=settings["seed"])
    task = settings["task"]
    options = {"lam": settings["lambda"], "k": settings["k"], "kbar": settings["kbar"]}
    if task == "forecast":
        options["fraction"] = settings["fraction"]
    if task == "latent":
        options["k0"] = settings["k0"]
        options["n_factors"] = _n_factors_spec(settings) if settings["K-rule"] != "fixed" \
            else settings["K"]
    report = run_monte_carlo(config, task=task, jobs=settings["jobs"], **options)
    echo = _echo(settings, "simulate")
    _write_report(settings["out-dir"], report, echo)
    return 0


def _write_report(out_dir: str, report: MonteCarloReport, echo: dict) -> None:
    names = list(report.metric_names)
    rep_rows = [[rec["rep"], rec["seed_key"], *[rec[name] for name in names]]
                for rec in report.records]
    for failure in report.failures:
        rep_rows.append([failure["rep"], failure["seed_key"],
                         *[f"error: {failure['error']}" for _ in names]])
    rep_rows.sort(key=lambda row: row[0])
    rep_rows = [[str(row[0]), str(row[1]), *row[2:]] for row in rep_rows]
    sapt_io.write_table(f"{out_dir}/reps.csv", ["rep", "seed", *names], rep_rows, echo)

    summary = report.summary()
    formatted = report.formatted_summary()
    columns, row = ["task", "N", "T", "K", "reps", "seed", "failed"], [
        report.task, str(report.config.N), str(report.config.T),
        str(report.config.K), str(report.config.reps), str(report.config.seed),
        str(len(report.failures)),
    ]
    for name in names:
        mean, sd = summary[name]
        columns += [f"{name}_mean", f"{name}_sd", name]
        row += [mean, sd, formatted[name]]
    sapt_io.write_table(f"{out_dir}/summary.csv", columns, [row], echo)


def _cmd_weights(settings: dict) -> int:
    source = settings["weights-source"]
    radius = settings["radius-km"]
    if source == "banded":
        if settings.get("N") is None:
            raise ValidationError("banded source requires --N")
        weights = weights_banded(settings["N"], settings["q"])
        ids = tuple(f"u{j + 1}" for j in range(settings["N"]))
    elif source == "correlation":
        if not settings.get("panel"):
            raise ValidationError("correlation source requires --panel")
        panel = sapt_io.read_panel(settings["panel"])
        _check_panel_variation(panel)
        weights = weights_from_correlation(panel)
        ids = panel.unit_ids
    else:
        if settings.get("distances"):
            ids, dist = sapt_io.read_distances(settings["distances"])
        elif settings.get("locations"):
            locations = sapt_io.read_locations(settings["locations"])
            dist = haversine_matrix(locations, radius_km=radius)
            ids = locations.ids
        else:
            raise ValidationError(f"{source} source requires --distances or --locations")
        if source == "radius":
            if settings.get("threshold") is None:
                raise ValidationError("radius source requires --threshold")
            weights = weights_radius(dist, settings["threshold"])
        else:
            weights = weights_from_distance(dist)
    echo = _echo(settings, "weights")
    sapt_io.write_matrix(f"{settings['out-dir']}/weights.csv", ids, weights.values, echo)
    return 0


def _estimate_from_settings(settings: dict):
    panel = sapt_io.read_panel(settings["panel"])
    _check_panel_variation(panel)
    weights = sapt_io.read_weights(settings["weights"])
    grid = settings.get("lambda-grid")
    kwargs = {"lam": settings["lambda"], "k": settings["k"], "kbar": settings["kbar"]}
    if grid:
        kwargs["lambda_grid"] = grid
    panel_dm = demean(panel)
    if settings.get("factors"):
        factors = demean(sapt_io.read_factors(settings["factors"]))
        estimate = estimate_observed(panel_dm, factors, weights, **kwargs)
        return panel_dm, factors, weights, estimate, None
    estimate, fit = estimate_latent(panel_dm, weights, k0=settings["k0"],
                                    n_factors=_n_factors_spec(settings), **kwargs)
    factors = FactorSet(fit.factors, demeaned=panel_dm.demeaned)
    return panel_dm, factors, weights, estimate, fit


def _cmd_estimate(settings: dict) -> int:
    panel, factors, weights, estimate, fit = _estimate_from_settings(settings)
    echo = _echo(settings, "estimate")
    k_factors = estimate.params.n_factors
    factor_ids = factors.factor_ids if fit is None else \
        tuple(f"lf{j + 1}" for j in range(k_factors))
    columns = ["unit", "rho", *[f"b_{fid}" for fid in factor_ids], "lambda"]
    rows = []
    intervals = None
    if settings["infer"]:
        if estimate.lag_pair != (0, 1):
            raise ValidationError("interval construction requires the lag pair (0, 1)")
        covs = lag_covariances(panel, factors, yf_lags=(0, 1), f_lags=(0, 1))
        bandwidth = default_bandwidth(panel.n_periods)
        intervals = []
        for i in range(panel.n_units):
            longrun = longrun_fe(factors.values, estimate.residuals[:, i],
                                 bandwidth=bandwidth, kernel="bartlett")
            if fit is None:
                info = unit_asymptotics(i, covs, weights, longrun)
            else:
                info = latent_unit_asymptotics(i, covs, weights, longrun,
                                               rotation=np.eye(k_factors))
            beta_hat = np.concatenate([[estimate.params.rho[i]],
                                       estimate.params.loadings[i]])
            intervals.append(wald_intervals(info, beta_hat, panel.n_periods,
                                            level=settings["level"]))
        columns += ["rho_lo", "rho_hi"]
        for fid in factor_ids:
            columns += [f"b_{fid}_lo", f"b_{fid}_hi"]
    for i, unit in enumerate(panel.unit_ids):
        row = [unit, estimate.params.rho[i], *estimate.params.loadings[i],
               estimate.lambda_used[i]]
        if intervals is not None:
            bounds = intervals[i]
            row += [bounds[0, 0], bounds[0, 1]]
            for j in range(k_factors):
                row += [bounds[j + 1, 0], bounds[j + 1, 1]]
        rows.append(row)
    out = settings["out-dir"]
    if fit is not None:
        echo["n_factors_selected"] = fit.n_factors
        echo["k0"] = fit.k0_used
    sapt_io.write_table(f"{out}/estimates.csv", columns, rows, echo)
    if fit is not None:
        sapt_io.write_matrix(f"{out}/loadings.csv", panel.unit_ids,
                             fit.loadings[:, :], echo)
        sapt_io.write_time_table(f"{out}/factors_est.csv", factor_ids, fit.factors, echo)
    return 0


def _cmd_forecast(settings: dict) -> int:
    panel = sapt_io.read_panel(settings["panel"])
    _check_panel_variation(panel)
    weights = sapt_io.read_weights(settings["weights"])
    factors = sapt_io.read_factors(settings["factors"]) if settings.get("factors") else None
    models = settings["models"]
    if factors is None:
        models = tuple(m for m in models if m == "sapt-latent")
        if not models:
            raise ValidationError("without --factors only the sapt-latent model can run")
    kwargs = {"fraction": settings["fraction"], "lam": settings["lambda"],
              "k": settings["k"], "kbar": settings["kbar"], "k0": settings["k0"],
              "n_factors": _n_factors_spec(settings)}
    if settings.get("lambda-grid"):
        kwargs["lambda_grid"] = settings["lambda-grid"]
    reports = forecast_evaluate(panel, factors, weights, models=models, **kwargs)
    echo = _echo(settings, "forecast")
    rows = [[r.model, str(panel.n_units), str(panel.n_periods), str(r.split_index),
             r.fe, ""] for r in reports]
    sapt_io.write_table(f"{settings['out-dir']}/forecast.csv",
                        ["model", "N", "T", "T1", "fe", "fe_sd"], rows, echo)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "weights": _cmd_weights,
    "forecast": _cmd_forecast,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        settings = _resolve(args.command, args)
        return _COMMANDS[args.command](settings)
    except ValidationError as exc:
        print(f"sapt: configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"sapt: numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"sapt: i/o failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
