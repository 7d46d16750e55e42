"""Closed simulation loop and run persistence.

Per step: rebuild the population measures, re-solve fields and fusion,
run the best-response iteration, apply each vehicle's first control, then
propagate everyone with seeded process noise. Runs are fully deterministic
for a fixed scenario and seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field, replace as dc_replace
from pathlib import Path

import numpy as np

from .control import build_vehicle_fields, fixed_point_iteration
from .dynamics import (
    VehicleState,
    clamp_control,
    propagate,
    sample_noise,
    saturate_acceleration,
)
from .errors import ConvergenceError, InstabilityError, IupfError
from .fieldgrid import ScalarField, normalize, sample_bilinear
from .scenario import Scenario, dump_toml

__all__ = [
    "StepRecord",
    "SafetyReport",
    "RunLog",
    "run",
    "min_separation",
    "export_run",
    "CRITICAL_SEPARATION",
    "WARNING_SEPARATION",
]

CRITICAL_SEPARATION = 8.0
WARNING_SEPARATION = 15.0


@dataclass
class StepRecord:
    t: float
    vehicle_states: dict  # id -> 6-array
    vehicle_controls: dict  # id -> 2-array
    min_separation: float  # math.inf for a single vehicle
    phi_host: float
    bbar_host: float
    rbar_host: float
    field_stats: dict

    def to_json_obj(self, host_id: str, order) -> dict:
        sep = self.min_separation
        return {
            "t_s": round(self.t, 9),
            "vehicles": [
                {
                    "id": vid,
                    "state": [float(v) for v in self.vehicle_states[vid]],
                    "control": [float(v) for v in self.vehicle_controls[vid]],
                    "is_host": vid == host_id,
                }
                for vid in order
            ],
            "min_separation_m": None if math.isinf(sep) else float(sep),
            "phi_host": float(self.phi_host),
            "bbar_host": float(self.bbar_host),
            "rbar_host": float(self.rbar_host),
            "field_stats": self.field_stats,
        }


@dataclass
class SafetyReport:
    min_separation: float
    time_below_warning: float
    time_below_critical: float
    critical_threshold: float = CRITICAL_SEPARATION
    warning_threshold: float = WARNING_SEPARATION

    def to_json_obj(self) -> dict:
        sep = self.min_separation
        return {
            "min_separation_m": None if math.isinf(sep) else float(sep),
            "time_below_15m_s": float(self.time_below_warning),
            "time_below_8m_s": float(self.time_below_critical),
            "critical_threshold_m": self.critical_threshold,
            "warning_threshold_m": self.warning_threshold,
        }


@dataclass
class RunLog:
    scenario: Scenario
    mode: str
    records: list = dc_field(default_factory=list)
    snapshots: dict = dc_field(default_factory=dict)  # step index -> {name: ScalarField}
    convergence: list = dc_field(default_factory=list)  # (step, ConvergenceReport)
    plans: dict = dc_field(default_factory=dict)  # final planning round, id -> TrajectoryPlan
    safety: SafetyReport | None = None
    error: str | None = None


def min_separation(states) -> float:
    """Minimum pairwise distance between projected positions; inf for < 2."""
    pts = [s.position() if isinstance(s, VehicleState) else (s[0], s[1]) for s in states]
    if len(pts) < 2:
        return math.inf
    arr = np.asarray(pts, dtype=float)
    diff = arr[:, None, :] - arr[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    iu = np.triu_indices(len(pts), k=1)
    return float(dist[iu].min())


def _safety_from_records(records, dt: float) -> SafetyReport:
    seps = [r.min_separation for r in records]
    overall = min(seps) if seps else math.inf
    below_warn = sum(1 for s in seps if s < WARNING_SEPARATION) * dt
    below_crit = sum(1 for s in seps if s < CRITICAL_SEPARATION) * dt
    return SafetyReport(overall, below_warn, below_crit)


def _field_stats(pair, unified) -> dict:
    def stats(f: ScalarField) -> dict:
        return {
            "min": float(f.values.min()),
            "max": float(f.values.max()),
            "mean": float(f.values.mean()),
        }

    return {
        "benefit": stats(pair.benefit),
        "risk": stats(pair.risk),
        "unified": stats(unified.phi),
    }


def _host_samples(pair, unified, host_state, grid) -> tuple[float, float, float]:
    p = grid.clamp_point(host_state.position())
    return (
        sample_bilinear(unified.phi, p),
        sample_bilinear(normalize(pair.benefit), p),
        sample_bilinear(normalize(pair.risk), p),
    )


def run(scenario: Scenario, mode: str = "replan_every_step") -> RunLog:
    """Execute the closed loop and return the full log.

    ``plan_once`` plans a single open-loop round at t=0 with the horizon
    stretched to the whole run (used by noise-free consistency checks).
    """
    if mode not in ("replan_every_step", "plan_once"):
        raise IupfError(f"unknown run mode {mode!r}")
    log = RunLog(scenario=scenario, mode=mode)
    try:
        _run_into(log, scenario, mode)
    except IupfError as exc:
        log.safety = _safety_from_records(log.records, scenario.dt)
        log.error = str(exc)
        message = f"run aborted at step {len(log.records)}: {exc}"
        # Preserve the error category so callers (e.g. the CLI exit codes)
        # can still distinguish solver non-convergence from other failures.
        if isinstance(exc, ConvergenceError):
            raise ConvergenceError(message, residual=exc.residual, partial=log) from exc
        if isinstance(exc, InstabilityError):
            raise InstabilityError(message) from exc
        raise IupfError(message) from exc
    log.safety = _safety_from_records(log.records, scenario.dt)
    return log


def _run_into(log: RunLog, scenario: Scenario, mode: str) -> None:
    dt = scenario.dt
    n_steps = scenario.n_steps
    stride = scenario.snapshot_stride
    grid = scenario.grid()
    sim_model = scenario.model()
    problem = scenario.problem()
    if mode == "plan_once":
        problem = dc_replace(problem, horizon=n_steps)
    planner_cfg = scenario.planner_config()
    fp_max = int(planner_cfg.get("fp_max_iters", 2))
    fp_tol = float(planner_cfg.get("fp_w2_tol", 0.05))
    replan_stride = int(planner_cfg.get("replan_stride", 1))
    coast_margin = float(planner_cfg.get("coast_margin_m", 100.0))
    scripted_svs = bool(planner_cfg.get("scripted_svs", False))

    vehicles = scenario.vehicles()
    order = [v.id for v in vehicles]
    host_id = next(v.id for v in vehicles if v.is_host)
    rng = np.random.default_rng(scenario.seed)
    warm: dict = {}
    plans = None
    fields_by_id = None
    plan_step = 0

    for k in range(n_steps):
        frozen = {
            v.id for v in vehicles
            if v.state.s > grid.s_max - coast_margin or v.state.s < grid.s_min + 1.0
        }
        if scripted_svs:
            # Ablation mode: only the host plans; SVs hold lane and speed.
            frozen |= {v.id for v in vehicles if v.id != host_id}
        need_plan = plans is None or (mode == "replan_every_step" and k % replan_stride == 0)
        if need_plan:
            plans, report, fields_by_id = fixed_point_iteration(
                vehicles, problem, max_k=fp_max, w2_tol=fp_tol,
                warm=warm, frozen_ids=frozen,
            )
            log.convergence.append((k, report))
            plan_step = k
            # warm start for the next replan: shift controls one step forward
            for vid, plan in plans.items():
                shifted = np.vstack([plan.controls[1:], plan.controls[-1:]])
                warm.setdefault(vid, {})["controls"] = shifted

        offset = min(k - plan_step, plans[host_id].horizon - 1)
        controls = {
            vid: clamp_control(plan.control_at(offset), problem.a_max, problem.omega_max)
            for vid, plan in plans.items()
        }

        pair, unified = fields_by_id[host_id]
        host_state = next(v.state for v in vehicles if v.id == host_id)
        phi_h, bbar_h, rbar_h = _host_samples(pair, unified, host_state, grid)
        log.records.append(StepRecord(
            t=k * dt,
            vehicle_states={v.id: v.state.as_array() for v in vehicles},
            vehicle_controls={vid: u.as_array() for vid, u in controls.items()},
            min_separation=min_separation([v.state for v in vehicles]),
            phi_host=phi_h,
            bbar_host=bbar_h,
            rbar_host=rbar_h,
            field_stats=_field_stats(pair, unified),
        ))
        if k % stride == 0:
            log.snapshots[k] = {
                "benefit": pair.benefit,
                "risk": pair.risk,
                "unified": unified.phi,
            }

        new_vehicles = []
        for v in vehicles:
            w = sample_noise(sim_model, rng)
            x_next = propagate(sim_model, v.state, controls[v.id], w)
            x_next = saturate_acceleration(x_next, problem.a_max)
            new_vehicles.append(dc_replace(v, state=x_next))
        vehicles = new_vehicles

    log.plans = plans or {}
    if n_steps % stride == 0:
        atoms = {v.id: [v.state] for v in vehicles}
        styles = {v.id: v.style for v in vehicles}
        pair, unified = build_vehicle_fields(
            host_id, atoms, styles, problem, phi_warm=warm.get(host_id, {}).get("phi"),
        )
        log.snapshots[n_steps] = {
            "benefit": pair.benefit,
            "risk": pair.risk,
            "unified": unified.phi,
        }


# -- persistence -------------------------------------------------------

def _write_snapshot_csv(path: Path, fields: dict) -> None:
    spec = fields["benefit"].spec
    s = spec.s_coords()
    d = spec.d_coords()
    b, r, u = fields["benefit"].values, fields["risk"].values, fields["unified"].values
    with open(path, "w", newline="") as fh:
        fh.write("s,d,benefit,risk,unified\n")
        for i in range(spec.n_s):
            for j in range(spec.n_d):
                fh.write(
                    f"{s[i]:.9g},{d[j]:.9g},{b[i, j]:.9g},{r[i, j]:.9g},{u[i, j]:.9g}\n"
                )


def export_run(log: RunLog, out_dir) -> list:
    """Write steps.jsonl, per-snapshot field CSVs, convergence.jsonl,
    safety.json, and the resolved scenario TOML. Returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    scenario = log.scenario
    order = [str(v["id"]) for v in scenario.config["vehicles"]]
    host_id = next(str(v["id"]) for v in scenario.config["vehicles"] if v.get("is_host"))

    steps_path = out / "steps.jsonl"
    with open(steps_path, "w", newline="") as fh:
        for rec in log.records:
            fh.write(json.dumps(rec.to_json_obj(host_id, order), sort_keys=True) + "\n")
    written.append(steps_path)

    for k in sorted(log.snapshots):
        path = out / f"fields_t{k}.csv"
        _write_snapshot_csv(path, log.snapshots[k])
        written.append(path)

    conv_path = out / "convergence.jsonl"
    with open(conv_path, "w", newline="") as fh:
        for step, report in log.convergence:
            for record in report.jsonl_records():
                fh.write(json.dumps({"step": step, **record}, sort_keys=True) + "\n")
    written.append(conv_path)

    safety_path = out / "safety.json"
    safety = log.safety or _safety_from_records(log.records, scenario.dt)
    with open(safety_path, "w", newline="") as fh:
        json.dump(safety.to_json_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(safety_path)

    resolved_path = out / "scenario.resolved.toml"
    with open(resolved_path, "w", newline="") as fh:
        fh.write(dump_toml(scenario.config))
    written.append(resolved_path)
    return written
