"""Command-line surface for the invitation planner.

Subcommands:

  gen           draw a synthetic input bundle into a directory
  plan          rolling-window planning over a horizon; writes plan.csv
  solve         plan a single window with the configured solver
  backtest      leave-one-year-out forecast comparison on first_time.csv
  compare       greedy vs exact on one window, side by side
  export-model  write the single-window model in MPS text form
  validate      re-check a saved plan.csv against the inputs

Exit status:

  0  success
  1  error: bad arguments, broken or missing files, invalid configuration
  2  validate found rule violations in the plan
  3  a hard-demand window was infeasible at every sweep radius

Every run writes manifest.json into the output directory: the resolved
configuration, sha256 of each input file, and version stamps. Manifests
carry no timestamps, so seeded runs reproduce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import json
import math
import os
import sys
from typing import Mapping, Optional, Sequence

from . import __version__, fileio
from .bilp import build_model, export_mps
from .datagen import (
    GenSpec,
    donor_postal_codes,
    generate,
    genspec_from_dict,
    genspec_to_dict,
)
from .demand import DemandPanel, DemandTarget
from .eligibility import build_feasible_pairs
from .errors import DonorPlanError, InvalidInputError
from .forecast import (
    backtest_loyo,
    holt_winters_additive,
    ols_trend_seasonal,
    same_month_mean,
    seasonal_naive,
)
from .pipeline import (
    WindowConfig,
    merge_window_plans,
    prepare_window,
    run_horizon,
    run_window,
    window_config_from_dict,
    window_config_to_dict,
)
from .plan_eval import InvitationPlan, validate_plan

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATIONS = 2
EXIT_INFEASIBLE = 3

BUNDLE_FILES = {
    "donors": "donors.csv",
    "sessions": "sessions.csv",
    "demand_panel": "demand_panel.csv",
    "postal_codes": "postal_codes.csv",
    "donations": "donations.csv",
    "suspensions": "suspensions.csv",
    "first_time": "first_time.csv",
    "invitations": "invitations.csv",
}
REQUIRED_INPUTS = ("donors", "sessions", "demand_panel", "postal_codes")

BACKTEST_METHODS = {
    "holt_winters": holt_winters_additive,
    "seasonal_naive": seasonal_naive,
    "same_month_mean": same_month_mean,
    "ols_trend_seasonal": ols_trend_seasonal,
}


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(
            f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(raw, dict):
        raise InvalidInputError(f"{path}: config must be a JSON object")
    return raw


def _window_config(path: Optional[str]) -> WindowConfig:
    if path is None:
        return WindowConfig()
    return window_config_from_dict(_load_json(path))


def _bundle_paths(data_dir: str) -> fileio.IngestPaths:
    resolved: dict[str, Optional[str]] = {}
    for key, name in BUNDLE_FILES.items():
        path = os.path.join(data_dir, name)
        if os.path.exists(path):
            resolved[key] = path
        elif key in REQUIRED_INPUTS:
            raise InvalidInputError(f"missing required input file: {path}")
        else:
            resolved[key] = None
    return fileio.IngestPaths(**resolved)


def _ingest(data_dir: str, as_of: dt.date) -> fileio.IngestResult:
    return fileio.ingest(_bundle_paths(data_dir), as_of)


def _manifest(
    out_dir: str,
    command: str,
    config: Mapping[str, object],
    checksums: Mapping[str, str],
    outputs: Sequence[str],
) -> None:
    written = {
        name: fileio.sha256_file(os.path.join(out_dir, name))
        for name in sorted(outputs)
    }
    fileio.write_manifest(
        os.path.join(out_dir, "manifest.json"),
        {
            "command": command,
            "config": dict(config),
            "inputs": dict(sorted(checksums.items())),
            "outputs": written,
            "donorplan_version": __version__,
            "python_version": ".".join(map(str, sys.version_info[:3])),
        },
    )


def _parse_as_of(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError as exc:
        raise InvalidInputError(f"bad --as-of date: {text!r}") from exc


def _opt_float(v) -> object:
    """Blank out missing or undefined numeric cells."""
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return v


def _metric_rows(scope: str, metrics) -> list[tuple[str, str, object]]:
    return [
        (scope, "fulfillment_rate", metrics.fulfillment_rate),
        (scope, "adverse_invited", metrics.adverse_invited),
        (scope, "avg_distance_km", metrics.avg_distance_km),
        (scope, "avg_invites_per_non_hf", metrics.avg_invites_per_non_hf),
        (scope, "runtime_s", metrics.runtime_s),
        (
            scope,
            "peak_memory_mb",
            "" if metrics.peak_memory_mb is None else metrics.peak_memory_mb,
        ),
    ]


def _cmd_gen(args) -> int:
    raw = _load_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = genspec_from_dict(raw)
    registry, panel, first_time, table = generate(spec)
    os.makedirs(args.out, exist_ok=True)
    codes = donor_postal_codes(registry, table)
    out = lambda name: os.path.join(args.out, name)
    fileio.write_donors(out("donors.csv"), registry, codes)
    fileio.write_donations(out("donations.csv"), registry)
    fileio.write_suspensions(out("suspensions.csv"), registry)
    fileio.write_invitations(out("invitations.csv"), registry)
    fileio.write_sessions(out("sessions.csv"), registry.sessions)
    fileio.write_demand_panel(out("demand_panel.csv"), panel)
    fileio.write_first_time(out("first_time.csv"), first_time)
    fileio.write_postal_codes(out("postal_codes.csv"), table)
    _manifest(
        args.out,
        "gen",
        genspec_to_dict(spec),
        {"config": fileio.sha256_file(args.config)},
        list(BUNDLE_FILES.values()),
    )
    print(
        f"generated {len(registry.donors)} donors, "
        f"{len(registry.sessions)} sessions into {args.out}"
    )
    return EXIT_OK


def _cmd_plan(args) -> int:
    cfg = _window_config(args.config)
    as_of = _parse_as_of(args.as_of)
    ingested = _ingest(args.data, as_of)
    result = run_horizon(
        ingested.registry,
        ingested.panel,
        cfg,
        args.windows,
        first_time=ingested.first_time,
    )
    os.makedirs(args.out, exist_ok=True)
    rows: list[tuple[str, str, object]] = []
    for i, w in enumerate(result.windows):
        scope = f"window_{i}"
        rows.append((scope, "start_month", str(w.months[0])))
        rows.append((scope, "status", w.status))
        rows.append(
            (
                scope,
                "chosen_radius_km",
                "" if w.chosen_radius_km is None else w.chosen_radius_km,
            )
        )
        rows.append(
            (scope, "invitations", 0 if w.plan is None else len(w.plan.entries))
        )
        if w.metrics is not None:
            rows.append((scope, "fulfillment_rate", w.metrics.fulfillment_rate))
    if result.merged_metrics is not None:
        # merged rows stop before runtime/memory: those vary run to run
        rows.extend(_metric_rows("merged", result.merged_metrics)[:4])
    rows.append(("merged", "violations", len(result.merged_violations)))
    rows.append(
        ("merged", "invite_budget_breaches", len(result.invite_budget_breaches))
    )
    merged_plan, _ = merge_window_plans(result.windows, cfg)
    if merged_plan is None:
        merged_plan = InvitationPlan(
            entries=(),
            demand_mode=cfg.demand_mode,
            slacks={},
            objective_terms={},
            solver=cfg.solver,
        )
    fileio.write_plan(os.path.join(args.out, "plan.csv"), merged_plan)
    fileio.write_report(os.path.join(args.out, "report.csv"), rows)
    _manifest(
        args.out,
        "plan",
        {
            **window_config_to_dict(cfg),
            "as_of": as_of.isoformat(),
            "windows": args.windows,
        },
        ingested.report.checksums,
        ["plan.csv", "report.csv"],
    )
    infeasible = [w for w in result.windows if w.status == "infeasible"]
    for w in infeasible:
        print(f"window starting {w.months[0]}: infeasible at every radius")
    print(
        f"planned {len(merged_plan.entries)} invitations over "
        f"{len(result.windows)} windows into {args.out}"
    )
    return EXIT_INFEASIBLE if infeasible else EXIT_OK


def _cmd_solve(args) -> int:
    cfg = _window_config(args.config)
    as_of = _parse_as_of(args.as_of)
    ingested = _ingest(args.data, as_of)
    w = run_window(
        ingested.registry,
        ingested.panel,
        cfg,
        first_time=ingested.first_time,
    )
    os.makedirs(args.out, exist_ok=True)
    rows: list[tuple[str, str, object]] = [
        (cfg.solver, "status", w.status),
        (
            cfg.solver,
            "chosen_radius_km",
            "" if w.chosen_radius_km is None else w.chosen_radius_km,
        ),
    ]
    if w.plan is not None:
        rows.append((cfg.solver, "invitations", len(w.plan.entries)))
        rows.extend(_metric_rows(cfg.solver, w.metrics))
        fileio.write_plan(os.path.join(args.out, "plan.csv"), w.plan)
    fileio.write_report(os.path.join(args.out, "report.csv"), rows)
    _manifest(
        args.out,
        "solve",
        {**window_config_to_dict(cfg), "as_of": as_of.isoformat()},
        ingested.report.checksums,
        ["plan.csv", "report.csv"] if w.plan is not None else ["report.csv"],
    )
    if w.status == "infeasible":
        print(f"window starting {w.months[0]}: infeasible at every radius")
        return EXIT_INFEASIBLE
    print(
        f"{cfg.solver} planned {len(w.plan.entries)} invitations "
        f"at radius {w.chosen_radius_km} km into {args.out}"
    )
    return EXIT_OK


def _cmd_backtest(args) -> int:
    path = os.path.join(args.data, BUNDLE_FILES["first_time"])
    if not os.path.exists(path):
        raise InvalidInputError(f"missing required input file: {path}")
    series, _ = fileio.read_first_time(path)
    if series is None:
        raise InvalidInputError(f"{path}: no observations to backtest")
    years = sorted({y for (y, _, _) in series.entries})
    if args.years:
        years = [int(y) for y in args.years.split(",")]
    result = backtest_loyo(series, BACKTEST_METHODS, years)
    os.makedirs(args.out, exist_ok=True)
    rows: list[tuple[str, str, object]] = []
    for name in BACKTEST_METHODS:
        for year in years:
            cell = result.cells[(name, year)]
            value = "" if cell.mae is None else cell.mae
            rows.append((name, f"mae_{year}", value))
        pooled = result.pooled_mae.get(name)
        rows.append((name, "pooled_mae", _opt_float(pooled)))
        rel = result.relative_mae.get(name)
        rows.append((name, "relative_mae", _opt_float(rel)))
    fileio.write_report(os.path.join(args.out, "report.csv"), rows)
    _manifest(
        args.out,
        "backtest",
        {"years": years, "methods": sorted(BACKTEST_METHODS)},
        {"first_time": fileio.sha256_file(path)},
        ["report.csv"],
    )
    for name in BACKTEST_METHODS:
        pooled = _opt_float(result.pooled_mae.get(name))
        shown = f"{pooled:.3f}" if pooled != "" else "n/a"
        print(f"{name}: pooled MAE {shown}")
    return EXIT_OK


def _scaled_panel(panel: DemandPanel, factor: float) -> DemandPanel:
    if factor == 1.0:
        return panel
    return DemandPanel({k: v * factor for k, v in panel.units.items()})


def _cmd_compare(args) -> int:
    cfg = _window_config(args.config)
    as_of = _parse_as_of(args.as_of)
    if args.demand_scale <= 0:
        raise InvalidInputError("--demand-scale must be positive")
    ingested = _ingest(args.data, as_of)
    panel = _scaled_panel(ingested.panel, args.demand_scale)
    os.makedirs(args.out, exist_ok=True)
    rows: list[tuple[str, str, object]] = []
    outputs = ["report.csv"]
    exit_code = EXIT_OK
    for solver in ("greedy", "exact"):
        scfg = dataclasses.replace(cfg, solver=solver)
        w = run_window(
            ingested.registry, panel, scfg, first_time=ingested.first_time
        )
        rows.append((solver, "status", w.status))
        if w.plan is None:
            exit_code = EXIT_INFEASIBLE
            continue
        rows.append((solver, "invitations", len(w.plan.entries)))
        rows.append((solver, "objective", w.plan.objective_total))
        rows.extend(_metric_rows(solver, w.metrics))
        name = f"plan_{solver}.csv"
        fileio.write_plan(os.path.join(args.out, name), w.plan)
        outputs.append(name)
    fileio.write_report(os.path.join(args.out, "report.csv"), rows)
    _manifest(
        args.out,
        "compare",
        {
            **window_config_to_dict(cfg),
            "as_of": as_of.isoformat(),
            "demand_scale": args.demand_scale,
        },
        ingested.report.checksums,
        outputs,
    )
    for scope, metric, value in rows:
        if metric in ("fulfillment_rate", "runtime_s"):
            print(f"{scope} {metric}: {value}")
    return exit_code


def _cmd_export_model(args) -> int:
    cfg = _window_config(args.config)
    as_of = _parse_as_of(args.as_of)
    ingested = _ingest(args.data, as_of)
    setup = prepare_window(
        ingested.registry, ingested.panel, cfg, first_time=ingested.first_time
    )
    radius = args.radius if args.radius is not None else cfg.radius_sweep[0]
    pairs = build_feasible_pairs(setup.pool, cfg.eligibility(radius))
    dtargets = [
        DemandTarget(
            month=cls[0],
            blood_group=cls[1],
            target=setup.targets.get(cls, setup.residuals[cls]),
            residual=setup.residuals[cls],
        )
        for cls in sorted(
            setup.residuals, key=lambda c: (c[0], c[1].order_index)
        )
    ]
    model = build_model(pairs, dtargets, setup.pool, cfg.model_config())
    os.makedirs(args.out, exist_ok=True)
    with open(
        os.path.join(args.out, "model.mps"), "w", encoding="utf-8"
    ) as fh:
        fh.write(export_mps(model))
    _manifest(
        args.out,
        "export-model",
        {
            **window_config_to_dict(cfg),
            "as_of": as_of.isoformat(),
            "radius_km": radius,
        },
        ingested.report.checksums,
        ["model.mps"],
    )
    print(
        f"exported model with {len(model.variables)} variables, "
        f"{len(model.constraints)} rows to {args.out}/model.mps"
    )
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = _window_config(args.config)
    as_of = _parse_as_of(args.as_of)
    ingested = _ingest(args.data, as_of)
    setup = prepare_window(
        ingested.registry, ingested.panel, cfg, first_time=ingested.first_time
    )
    plan = fileio.read_plan(
        args.plan, setup.pool, setup.residuals, cfg.demand_mode
    )
    radius = args.radius if args.radius is not None else cfg.radius_sweep[-1]
    violations = validate_plan(
        plan,
        setup.pool,
        setup.residuals,
        cfg.model_config(),
        cfg.eligibility(radius),
    )
    os.makedirs(args.out, exist_ok=True)
    rows = [
        (v.family, v.subject, v.detail) for v in violations
    ] or [("validation", "result", "clean")]
    fileio.write_report(os.path.join(args.out, "report.csv"), rows)
    _manifest(
        args.out,
        "validate",
        {
            **window_config_to_dict(cfg),
            "as_of": as_of.isoformat(),
            "radius_km": radius,
        },
        {**ingested.report.checksums, "plan": fileio.sha256_file(args.plan)},
        ["report.csv"],
    )
    if violations:
        for v in violations:
            print(f"{v.family}: {v.subject}: {v.detail}")
        print(f"{len(violations)} violation(s) found")
        return EXIT_VIOLATIONS
    print(f"plan {args.plan} passes all checks")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="donorplan",
        description="Donor-session invitation planning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_args(p, config_required=False):
        p.add_argument("--data", required=True, help="input bundle directory")
        p.add_argument(
            "--config",
            required=config_required,
            help="JSON planning configuration",
        )
        p.add_argument(
            "--as-of", required=True, dest="as_of",
            help="planning clock, ISO date, first day of the horizon",
        )
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen", help="generate a synthetic input bundle")
    p.add_argument("--config", required=True, help="JSON generator spec")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override spec seed")
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("plan", help="rolling-window planning")
    add_data_args(p)
    p.add_argument(
        "--windows", type=int, default=1, help="number of consecutive windows"
    )
    p.set_defaults(fn=_cmd_plan)

    p = sub.add_parser("solve", help="plan one window")
    add_data_args(p)
    p.set_defaults(fn=_cmd_solve)

    p = sub.add_parser("backtest", help="forecast method comparison")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--years", default=None, help="comma-separated held-out years"
    )
    p.set_defaults(fn=_cmd_backtest)

    p = sub.add_parser("compare", help="greedy vs exact on one window")
    add_data_args(p)
    p.add_argument(
        "--demand-scale", type=float, default=1.0, dest="demand_scale",
        help="multiply all demand units by this factor",
    )
    p.set_defaults(fn=_cmd_compare)

    p = sub.add_parser("export-model", help="write the window model as MPS")
    add_data_args(p)
    p.add_argument(
        "--radius", type=float, default=None, help="eligibility radius in km"
    )
    p.set_defaults(fn=_cmd_export_model)

    p = sub.add_parser("validate", help="re-check a saved plan")
    add_data_args(p)
    p.add_argument("--plan", required=True, help="plan.csv to validate")
    p.add_argument(
        "--radius", type=float, default=None,
        help="eligibility radius in km (default: largest sweep value)",
    )
    p.set_defaults(fn=_cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DonorPlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
