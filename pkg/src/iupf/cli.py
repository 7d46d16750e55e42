"""Command-line entry point: run, fields, report, sweep."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .control import build_vehicle_fields
from .errors import ConvergenceError, InstabilityError, IupfError, ScenarioError
from .fieldgrid import field_to_csv
from .scenario import PRESET_NAMES, load_scenario, preset_path
from .sim import export_run, run

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3


def _resolve_scenario_arg(value: str) -> Path:
    path = Path(value)
    if path.exists():
        return path
    if value in PRESET_NAMES:
        return preset_path(value)
    return path  # let load_scenario report the missing file


def _parse_overrides(pairs) -> dict:
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ScenarioError(f"override {pair!r} must look like key.path=value")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _load(args) -> "Scenario":
    overrides = _parse_overrides(getattr(args, "set", None))
    seed = getattr(args, "seed", None)
    scenario = load_scenario(_resolve_scenario_arg(args.scenario), overrides=overrides, seed=seed)
    stride = getattr(args, "stride", None)
    if stride is not None:
        scenario.config.setdefault("output", {})["snapshot_stride"] = int(stride)
    return scenario


def _cmd_run(args) -> int:
    scenario = _load(args)
    log = run(scenario, mode=args.mode)
    written = export_run(log, args.out)
    safety = log.safety
    print(f"run complete: {len(log.records)} steps, {len(written)} artifacts in {args.out}")
    print(f"min separation: {safety.min_separation:.3f} m "
          f"(below 15 m: {safety.time_below_warning:.1f} s, below 8 m: {safety.time_below_critical:.1f} s)")
    return EXIT_OK


def _cmd_fields(args) -> int:
    scenario = _load(args)
    problem = scenario.problem()
    vehicles = scenario.vehicles()
    host = next(v for v in vehicles if v.is_host)
    atoms = {v.id: [v.state] for v in vehicles}
    styles = {v.id: v.style for v in vehicles}
    pair, unified = build_vehicle_fields(host.id, atoms, styles, problem)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    field_to_csv(pair.benefit, out / "benefit.csv")
    field_to_csv(pair.risk, out / "risk.csv")
    field_to_csv(unified.phi, out / "unified.csv")
    print(f"wrote benefit.csv, risk.csv, unified.csv to {out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    safety_path = run_dir / "safety.json"
    if not safety_path.exists():
        raise ScenarioError(f"{run_dir} does not look like an exported run (no safety.json)")
    with open(safety_path) as fh:
        safety = json.load(fh)
    print("safety report")
    sep = safety.get("min_separation_m")
    print(f"  min separation: {'n/a' if sep is None else f'{sep:.3f} m'}")
    print(f"  time below {safety.get('warning_threshold_m', 15.0):g} m: {safety.get('time_below_15m_s', 0.0):.1f} s")
    print(f"  time below {safety.get('critical_threshold_m', 8.0):g} m: {safety.get('time_below_8m_s', 0.0):.1f} s")

    conv_path = run_dir / "convergence.jsonl"
    records = []
    if conv_path.exists():
        with open(conv_path) as fh:
            records = [json.loads(line) for line in fh if line.strip()]
    print("convergence")
    if records:
        gaps = [r["w2_gap"] for r in records]
        rhos = [r["rho_hat"] for r in records if r.get("rho_hat") is not None]
        print(f"  {len(records)} best-response iterations logged")
        print(f"  final W2 gap: {gaps[-1]:.6g}; max: {max(gaps):.6g}")
        if rhos:
            print(f"  mean contraction estimate: {sum(rhos) / len(rhos):.3f}")
    else:
        print("  no records")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ScenarioError("sweep needs at least one value")
    base_out = Path(args.out)
    for value in values:
        overrides = _parse_overrides(getattr(args, "set", None))
        overrides[args.key] = value
        scenario = load_scenario(
            _resolve_scenario_arg(args.scenario), overrides=overrides,
            seed=getattr(args, "seed", None),
        )
        sub = base_out / f"{args.key}={value}"
        log = run(scenario, mode=args.mode)
        export_run(log, sub)
        print(f"{args.key}={value}: min separation "
              f"{log.safety.min_separation:.3f} m -> {sub}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iupf",
        description="Unified potential field multi-vehicle highway simulator.",
        epilog=(
            "Override any scenario key with --set, e.g. --set fusion.gamma1=6.0 "
            "or --set vehicles.host.cost.target_speed_mps=20. Scenario schema "
            "sections: scenario (dt_s, duration_s, seed, sigma_w, lane_width_m, "
            "n_lanes, a_max_mps2, omega_max_mps2), grid (s_min_m, s_max_m, "
            "d_min_m, d_max_m, n_s, n_d), fields (tikhonov_B, tikhonov_R, "
            "v_max_mps, cg_tol, cg_max_iter), fusion (gamma1..gamma5, alpha1, "
            "alpha2, tau_step, max_steps, steady_tol, epsilon_m), planner "
            "(horizon_steps, sweeps, damping, fp_max_iters, fp_w2_tol, "
            "temperature, replan_stride, scripted_svs), styles.<label> (alpha_B, alpha_R, "
            "lambda_B_m, lambda_R_m, sigma_B_m, sigma_R_m, r_s, r_d), vehicles "
            "(id, s_m, d_m, speed_mps, style, is_host, cost.*), output "
            "(snapshot_stride)."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, scenario=True):
        if scenario:
            p.add_argument("--scenario", required=True,
                           help="scenario TOML path or preset name "
                                f"({', '.join(PRESET_NAMES)})")
            p.add_argument("--seed", type=int, default=None, help="seed override")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="dotted-key scenario override (repeatable)")

    p_run = sub.add_parser("run", help="simulate a scenario and export artifacts")
    add_common(p_run)
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--mode", choices=("replan_every_step", "plan_once"),
                       default="replan_every_step")
    p_run.add_argument("--stride", type=int, default=None, help="field snapshot stride")
    p_run.set_defaults(func=_cmd_run)

    p_fields = sub.add_parser("fields", help="export B/R/Phi for the initial configuration")
    add_common(p_fields)
    p_fields.add_argument("--out", required=True)
    p_fields.set_defaults(func=_cmd_fields)

    p_report = sub.add_parser("report", help="summarize an exported run")
    p_report.add_argument("run_dir")
    p_report.set_defaults(func=_cmd_report)

    p_sweep = sub.add_parser("sweep", help="grid over one dotted scenario key")
    add_common(p_sweep)
    p_sweep.add_argument("--key", required=True, help="dotted scenario key to vary")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--mode", choices=("replan_every_step", "plan_once"),
                         default="replan_every_step")
    p_sweep.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for violation in getattr(exc, "violations", []) or []:
            print(f"  - {violation}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, InstabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except IupfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
