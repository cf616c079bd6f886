"""Command-line front end.

Three subcommands: ``estimate`` runs the estimator pipeline on a CSV file
and writes a JSON report; ``simulate`` runs Monte Carlo scenarios from a
TOML file or a named preset and writes per-scenario summary CSV+JSON;
``report`` renders summary JSON as aligned text or markdown, optionally
with deviations against a reference file. Exit codes: 0 ok, 1 runtime
error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from importlib import resources

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from .errors import TTIPWError
from .estimators import FractileSchedule, compute_z
from .inference import variance_estimate
from .montecarlo import (
    Case,
    Distribution,
    FractileOverrides,
    PropensityMode,
    ScenarioConfig,
    evaluate_estimators,
    run_study,
    summarize,
)
from .propensity import LinkFamily, fit_mle
from .sample import CSVSchema, Sample, load_csv
from . import __version__

SUMMARY_COLUMNS = (
    "estimator",
    "mean",
    "median",
    "rmse",
    "ks_ratio",
    "trim_pct",
    "rej01",
    "rej05",
    "rej10",
    "failed_reps",
)


def build_parser():
    parser = argparse.ArgumentParser(prog="ttipw", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ttipw {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate the ATE from a CSV file")
    est.add_argument("--data", required=True, help="input CSV path")
    est.add_argument("--y", required=True, help="outcome column name")
    est.add_argument("--d", required=True, help="treatment column name")
    est.add_argument("--x", required=True, help="comma-separated covariate column names")
    est.add_argument("--link", default="logit", choices=[f.value for f in LinkFamily])
    est.add_argument(
        "--known-propensity",
        metavar="COL",
        help="use this CSV column as the propensity score and skip the MLE",
    )
    est.add_argument("--estimators", default="notrim,tz,tzo", help="comma-separated labels")
    est.add_argument("--lambda-k", type=float, default=0.25, help="trim fractile factor")
    est.add_argument("--iota", type=float, default=1e-10, help="trim fractile exponent shrink")
    est.add_argument("--phi-range", default="2,16", help="tail fractile factor range 'lo,hi'")
    est.add_argument("--k", type=int, help="override the trim-by-z fractile k_n")
    est.add_argument("--k-x", type=int, help="override the adaptive trim-by-x fractile")
    est.add_argument("--k-p", type=int, help="override the trim-by-propensity fractile")
    est.add_argument("--k-y", type=int, help="override the trim-by-y fractile")
    est.add_argument("--nu", type=float, help="override the fixed trim-by-x threshold")
    est.add_argument("--trim-col", help="covariate column used for x/fixed trimming")
    est.add_argument("--level", type=float, default=0.95, help="confidence level")
    est.add_argument("--out", required=True, help="output JSON report path")
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="run Monte Carlo scenarios")
    source = sim.add_mutually_exclusive_group(required=True)
    source.add_argument("--scenario", help="TOML scenario file")
    source.add_argument("--preset", help="named built-in scenario grid (e.g. table1a)")
    sim.add_argument("--n", type=int, help="override sample size in every scenario")
    sim.add_argument("--reps", type=int, help="override replication count")
    sim.add_argument("--beta", type=float, help="override the treatment index slope")
    sim.add_argument("--seed", type=int, help="override the RNG seed (env TTIPW_SEED)")
    sim.add_argument("--lambda-k", type=float, help="override the trim fractile factor")
    sim.add_argument("--iota", type=float, help="override the trim fractile exponent shrink")
    sim.add_argument("--phi-range", help="override the tail fractile factor range 'lo,hi'")
    sim.add_argument("--k", type=int, help="override the trim-by-z fractile k_n")
    sim.add_argument("--k-x", type=int, help="override the adaptive trim-by-x fractile")
    sim.add_argument("--k-p", type=int, help="override the trim-by-propensity fractile")
    sim.add_argument("--k-y", type=int, help="override the trim-by-y fractile")
    sim.add_argument("--nu", type=float, help="override the fixed trim-by-x threshold")
    sim.add_argument("--threads", type=int, default=None, help="parallel workers (env TTIPW_THREADS)")
    sim.add_argument("--out", required=True, help="output directory for summary files")
    sim.set_defaults(func=cmd_simulate)

    rep = sub.add_parser("report", help="render a summary JSON as a table")
    rep.add_argument("--summary", required=True, help="summary JSON written by simulate")
    rep.add_argument("--format", default="text", choices=["text", "markdown"])
    rep.add_argument("--compare", help="reference summary JSON; adds deviation columns")
    rep.add_argument("--out", help="write the table here instead of stdout")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TTIPWError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, tomllib.TOMLDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def _split_csv_list(text):
    return tuple(part.strip() for part in text.split(",") if part.strip())


def cmd_estimate(args):
    x_cols = _split_csv_list(args.x)
    extra = (args.known_propensity,) if args.known_propensity else ()
    schema = CSVSchema(y=args.y, d=args.d, x=x_cols + extra)
    sample = load_csv(args.data, schema)

    fit = None
    if args.known_propensity:
        probs = sample.x[:, -1].copy()
        sample = Sample(
            y=sample.y,
            d=sample.d,
            x=sample.x[:, : len(x_cols)],
            column_names=(args.y, args.d) + x_cols,
        )
    else:
        fit = fit_mle(sample, LinkFamily(args.link))
        probs = fit.probs

    zseries = compute_z(sample, probs)
    phi_lo, phi_hi = (float(v) for v in _split_csv_list(args.phi_range))
    schedule = FractileSchedule(lambda_k=args.lambda_k, iota=args.iota, phi_range=(phi_lo, phi_hi))
    labels = _split_csv_list(args.estimators)
    trim_col = x_cols.index(args.trim_col) if args.trim_col else 0
    reports = evaluate_estimators(
        labels,
        sample,
        zseries,
        probs,
        schedule,
        trim_col,
        k=args.k,
        k_x=args.k_x,
        k_p=args.k_p,
        k_y=args.k_y,
        nu=args.nu,
    )

    inference = None
    if "tzo" in reports:
        tzo = reports["tzo"]
        b_hat = tzo.diagnostics["bias_value"] if tzo.diagnostics.get("bias_feasible") else 0.0
        k_n = args.k if args.k is not None else schedule.k(sample.n)
        inf_report = variance_estimate(
            sample,
            fit,
            zseries,
            k_n,
            b_hat,
            theta_hat=tzo.theta_hat,
            level=args.level,
        )
        inference = {
            "estimator": "tzo",
            "v_hat_sq": inf_report.v_hat_sq,
            "std_error": inf_report.std_error,
            "t_stat": inf_report.t_stat,
            "ci": list(inf_report.ci),
            "level": inf_report.level,
            "d_hat_vec": None
            if inf_report.d_hat_vec is None
            else [float(v) for v in inf_report.d_hat_vec],
        }

    payload = {
        "schema_version": 1,
        "command": "estimate",
        "input": {
            "data": args.data,
            "y": args.y,
            "d": args.d,
            "x": list(x_cols),
            "link": args.link,
            "known_propensity": args.known_propensity,
            "n": sample.n,
        },
        "estimates": [_report_to_dict(label, reports[label]) for label in labels],
        "inference": inference,
    }
    _write_json(payload, args.out)
    print(f"wrote {args.out}")
    return 0


def _report_to_dict(label, report):
    return {
        "estimator": label,
        "tag": report.estimator_tag.value,
        "theta_hat": report.theta_hat,
        "bias_correction": report.bias_correction,
        "trimmed_count": report.trimmed_count,
        "trimmed_fraction": report.trimmed_fraction,
        "threshold": _json_number(report.threshold),
        "diagnostics": {key: _json_number(value) for key, value in report.diagnostics.items()},
    }


def _json_number(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)  # 'inf' / 'nan' are not valid JSON literals
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _write_json(payload, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

_CASE_FOR_NAME = {case.value: case for case in Case}
_DIST_FOR_NAME = {dist.value: dist for dist in Distribution}
_MODE_FOR_NAME = {mode.value: mode for mode in PropensityMode}


def scenario_from_mapping(mapping):
    """Build a ScenarioConfig from one TOML scenario table."""
    data = dict(mapping)
    fractiles = data.pop("fractiles", {})
    schedule = FractileSchedule(
        lambda_k=float(fractiles.get("lambda_k", 0.25)),
        iota=float(fractiles.get("iota", 1e-10)),
        phi_range=(float(fractiles.get("phi_min", 2.0)), float(fractiles.get("phi_max", 16.0))),
    )
    raw_overrides = data.pop("overrides", {})
    overrides = FractileOverrides(
        k=raw_overrides.get("k"),
        k_x=raw_overrides.get("k_x"),
        k_p=raw_overrides.get("k_p"),
        k_y=raw_overrides.get("k_y"),
        nu=raw_overrides.get("nu"),
    )
    kwargs = {
        "n": int(data.pop("n")),
        "replications": int(data.pop("replications")),
        "case": _CASE_FOR_NAME[data.pop("case", "scalar")],
        "alpha": float(data.pop("alpha", 0.0)),
        "beta": float(data.pop("beta", 0.25)),
        "dist_outcomes": _DIST_FOR_NAME[data.pop("dist_outcomes", "normal")],
        "dist_x": _DIST_FOR_NAME[data.pop("dist_x", "normal")],
        "dist_u": _DIST_FOR_NAME[data.pop("dist_u", "normal")],
        "propensity_mode": _MODE_FOR_NAME[data.pop("propensity_mode", "known")],
        "seed": int(data.pop("seed", 0)),
        "fractiles": schedule,
        "overrides": overrides,
        "name": str(data.pop("name", "")),
    }
    if "estimators" in data:
        kwargs["estimators"] = tuple(data.pop("estimators"))
    if data:
        raise ValueError(f"unknown scenario keys: {sorted(data)}")
    return ScenarioConfig(**kwargs)


def load_scenarios(path):
    """Read one or many scenarios from a TOML file."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    tables = doc.get("scenario")
    if tables is None:
        raise ValueError(f"{path}: no [scenario] or [[scenario]] tables found")
    if isinstance(tables, dict):
        tables = [tables]
    return [scenario_from_mapping(t) for t in tables]


def load_preset(name):
    """Load a packaged scenario grid by name."""
    ref = resources.files("ttipw").joinpath("presets", f"{name}.toml")
    if not ref.is_file():
        available = sorted(
            p.name[: -len(".toml")]
            for p in resources.files("ttipw").joinpath("presets").iterdir()
            if p.name.endswith(".toml")
        )
        raise ValueError(f"unknown preset {name!r}; available: {available}")
    doc = tomllib.loads(ref.read_text(encoding="utf-8"))
    tables = doc["scenario"]
    if isinstance(tables, dict):
        tables = [tables]
    return [scenario_from_mapping(t) for t in tables]


def _env_int(name):
    raw = os.environ.get(name)
    return int(raw) if raw else None


def cmd_simulate(args):
    scenarios = load_preset(args.preset) if args.preset else load_scenarios(args.scenario)

    overrides = {}
    if args.n is not None:
        overrides["n"] = args.n
    if args.reps is not None:
        overrides["replications"] = args.reps
    if args.beta is not None:
        overrides["beta"] = args.beta
    seed = args.seed if args.seed is not None else _env_int("TTIPW_SEED")
    if seed is not None:
        overrides["seed"] = seed
    threads = args.threads if args.threads is not None else (_env_int("TTIPW_THREADS") or 1)

    os.makedirs(args.out, exist_ok=True)
    seen = set()
    for scenario in scenarios:
        schedule = scenario.fractiles
        if args.lambda_k is not None or args.iota is not None or args.phi_range is not None:
            phi = (
                tuple(float(v) for v in _split_csv_list(args.phi_range))
                if args.phi_range
                else schedule.phi_range
            )
            schedule = FractileSchedule(
                lambda_k=args.lambda_k if args.lambda_k is not None else schedule.lambda_k,
                iota=args.iota if args.iota is not None else schedule.iota,
                phi_range=phi,
            )
        fixed = scenario.overrides
        if any(v is not None for v in (args.k, args.k_x, args.k_p, args.k_y, args.nu)):
            fixed = FractileOverrides(
                k=args.k if args.k is not None else fixed.k,
                k_x=args.k_x if args.k_x is not None else fixed.k_x,
                k_p=args.k_p if args.k_p is not None else fixed.k_p,
                k_y=args.k_y if args.k_y is not None else fixed.k_y,
                nu=args.nu if args.nu is not None else fixed.nu,
            )
        if overrides or schedule is not scenario.fractiles or fixed is not scenario.overrides:
            scenario = dataclasses.replace(
                scenario, fractiles=schedule, overrides=fixed, **dict(overrides, name="")
            )
        if scenario.name in seen:  # overrides can collapse grid points
            continue
        seen.add(scenario.name)
        results = run_study(scenario, n_jobs=threads)
        rows = summarize(scenario, results)
        base = os.path.join(args.out, scenario.name)
        _write_summary_csv(rows, base + ".csv")
        _write_json(_summary_payload(scenario, rows), base + ".json")
        print(f"wrote {base}.csv and {base}.json")
    return 0


def _row_values(row):
    return (
        row.estimator,
        row.mean,
        row.median,
        row.rmse,
        row.ks_ratio,
        row.trim_pct,
        row.reject_1,
        row.reject_5,
        row.reject_10,
        row.failed_reps,
    )


def _write_summary_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for row in rows:
            values = _row_values(row)
            fh.write(
                ",".join([values[0]] + [repr(float(v)) for v in values[1:-1]] + [str(values[-1])])
                + "\n"
            )


def _summary_payload(scenario, rows):
    return {
        "schema_version": 1,
        "scenario": {
            "name": scenario.name,
            "case": scenario.case.value,
            "alpha": scenario.alpha,
            "beta": scenario.beta,
            "dist_outcomes": scenario.dist_outcomes.value,
            "dist_x": scenario.dist_x.value,
            "dist_u": scenario.dist_u.value,
            "n": scenario.n,
            "propensity_mode": scenario.propensity_mode.value,
            "link": scenario.link.value,
            "seed": scenario.seed,
            "replications": scenario.replications,
            "estimators": list(scenario.estimators),
        },
        "rows": [
            {column: _json_number(value) for column, value in zip(SUMMARY_COLUMNS, _row_values(row))}
            for row in rows
        ],
    }


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

_METRIC_COLUMNS = SUMMARY_COLUMNS[1:-1]  # float-valued metrics


def _format_cell(value):
    if value is None:
        return "-"
    if isinstance(value, str):
        return value
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def render_table(rows, fmt="text", reference=None):
    """Render summary rows; with a reference, append per-cell deviations."""
    header = list(SUMMARY_COLUMNS)
    table = []
    for row in rows:
        table.append([_format_cell(row.get(col)) for col in SUMMARY_COLUMNS])
    if reference is not None:
        ref_by_name = {r["estimator"]: r for r in reference}
        header += [f"d_{col}" for col in _METRIC_COLUMNS]
        for raw, rendered in zip(rows, table):
            ref = ref_by_name.get(raw["estimator"])
            for col in _METRIC_COLUMNS:
                if ref is None or not isinstance(ref.get(col), (int, float)) or not isinstance(
                    raw.get(col), (int, float)
                ):
                    rendered.append("-")
                else:
                    rendered.append(f"{raw[col] - ref[col]:+.4f}")

    widths = [max(len(header[j]), *(len(r[j]) for r in table)) for j in range(len(header))]
    lines = []
    if fmt == "markdown":
        lines.append("| " + " | ".join(h.ljust(w) for h, w in zip(header, widths)) + " |")
        lines.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
        for r in table:
            lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |")
    else:
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
        for r in table:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def cmd_report(args):
    with open(args.summary, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    rows = payload.get("rows", [])
    if not rows:
        raise ValueError(f"{args.summary}: summary contains no rows")
    reference = None
    if args.compare:
        with open(args.compare, "r", encoding="utf-8") as fh:
            reference = json.load(fh).get("rows", [])
    text = render_table(rows, fmt=args.format, reference=reference)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
