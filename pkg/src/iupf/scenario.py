"""Scenario files: TOML schema, validation, presets, dotted-key overrides.

All physical quantities carry SI unit suffixes in their key names. The two
bundled presets encode the highway lane-change and overtaking studies.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import tomli

from .control import CostParams, PlanningProblem
from .dynamics import VehicleState, build_system_matrices
from .errors import ScenarioError
from .fieldgrid import GridSpec
from .fields import FieldParams
from .fusion import FusionParams
from .population import DrivingStyle, StyleParameters, Vehicle

__all__ = ["Scenario", "load_scenario", "preset_path", "apply_overrides", "dump_toml"]

PRESET_NAMES = ("lane_change", "overtaking")


def preset_path(name: str) -> Path:
    """Filesystem path of a bundled preset scenario."""
    if name not in PRESET_NAMES:
        raise ScenarioError(f"unknown preset {name!r}; available: {PRESET_NAMES}")
    return Path(resources.files("iupf").joinpath(f"presets/{name}.toml"))


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def apply_overrides(config: dict, overrides: dict) -> dict:
    """Apply dotted-key overrides in place; keys must already exist.

    Vehicle entries are addressed as ``vehicles.<id>.<key>``.
    """
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = config
        try:
            for i, part in enumerate(parts[:-1]):
                if part == "vehicles" and isinstance(node.get("vehicles"), list):
                    vid = parts[i + 1]
                    match = [v for v in node["vehicles"] if v.get("id") == vid]
                    if not match:
                        raise KeyError(vid)
                    node = match[0]
                    parts = parts[i + 2:]
                    for p in parts[:-1]:
                        node = node[p]
                    break
                node = node[part]
            leaf = parts[-1]
            if leaf not in node:
                raise KeyError(leaf)
        except (KeyError, TypeError, IndexError):
            raise ScenarioError(f"override key {dotted!r} does not address an existing schema key")
        node[leaf] = _parse_value(value) if isinstance(value, str) else value
    return config


@dataclass
class Scenario:
    """Validated scenario plus constructors for the planning machinery."""

    config: dict
    source: str = "<memory>"

    # -- accessors -----------------------------------------------------
    @property
    def name(self) -> str:
        return self.config["scenario"].get("name", "scenario")

    @property
    def dt(self) -> float:
        return float(self.config["scenario"]["dt_s"])

    @property
    def duration(self) -> float:
        return float(self.config["scenario"]["duration_s"])

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def seed(self) -> int:
        return int(self.config["scenario"].get("seed", 0))

    @property
    def sigma_w(self) -> float:
        return float(self.config["scenario"].get("sigma_w", 0.0))

    @property
    def lane_width(self) -> float:
        return float(self.config["scenario"].get("lane_width_m", 3.75))

    @property
    def n_lanes(self) -> int:
        return int(self.config["scenario"].get("n_lanes", 3))

    @property
    def snapshot_stride(self) -> int:
        return int(self.config.get("output", {}).get("snapshot_stride", 25))

    def lane_offsets(self) -> tuple:
        w = self.lane_width
        n = self.n_lanes
        return tuple(w * (i - (n - 1) / 2.0) for i in range(n))

    def grid(self) -> GridSpec:
        g = self.config["grid"]
        return GridSpec(
            s_min=float(g["s_min_m"]), s_max=float(g["s_max_m"]),
            d_min=float(g["d_min_m"]), d_max=float(g["d_max_m"]),
            n_s=int(g["n_s"]), n_d=int(g["n_d"]),
        )

    def field_params(self) -> FieldParams:
        f = self.config.get("fields", {})
        return FieldParams(
            tikhonov_B=float(f.get("tikhonov_B", 1.0)),
            tikhonov_R=float(f.get("tikhonov_R", 1.0)),
            v_max=float(f.get("v_max_mps", 33.3)),
            cg_tol=float(f.get("cg_tol", 1e-8)),
            cg_max_iter=int(f.get("cg_max_iter", 5000)),
            use_spreading_smoothing=bool(f.get("use_spreading_smoothing", False)),
        )

    def fusion_params(self) -> FusionParams:
        f = self.config.get("fusion", {})
        return FusionParams(
            epsilon=float(f["epsilon_m"]) if "epsilon_m" in f else None,
            gamma1=float(f.get("gamma1", 3.3)),
            gamma2=float(f.get("gamma2", 3.3)),
            gamma3=float(f.get("gamma3", 0.5)),
            gamma4=float(f.get("gamma4", 0.5)),
            gamma5=float(f.get("gamma5", 0.1)),
            alpha1=float(f.get("alpha1", 2.8)),
            alpha2=float(f.get("alpha2", 2.8)),
            tau_step=float(f.get("tau_step", 1e-4)),
            max_steps=int(f.get("max_steps", 5000)),
            steady_tol=float(f.get("steady_tol", 1e-6)),
            stabilization=float(f.get("stabilization", 2.0)),
        )

    def style_params(self) -> dict:
        out = {}
        for label, entry in self.config["styles"].items():
            out[label] = StyleParameters(
                alpha_B=float(entry["alpha_B"]),
                alpha_R=float(entry["alpha_R"]),
                lambda_B=float(entry["lambda_B_m"]),
                lambda_R=float(entry["lambda_R_m"]),
                sigma_B=float(entry.get("sigma_B_m", self.lane_width)),
                sigma_R=float(entry.get("sigma_R_m", self.lane_width)),
                r_s=float(entry.get("r_s", 1.0)),
                r_d=float(entry.get("r_d", 1.0)),
            )
        return out

    def vehicles(self) -> list:
        styles = self.style_params()
        out = []
        for entry in self.config["vehicles"]:
            style = DrivingStyle(
                label=entry["style"],
                aggressiveness=float(entry.get("aggressiveness", 0.5)),
                reaction_time=float(entry.get("reaction_time", 0.5)),
                social_awareness=float(entry.get("social_awareness", 0.5)),
            )
            state = VehicleState(
                s=float(entry["s_m"]), d=float(entry["d_m"]),
                s_dot=float(entry["speed_mps"]), d_dot=float(entry.get("d_dot_mps", 0.0)),
            )
            out.append(Vehicle(
                id=str(entry["id"]), state=state, style=style,
                params=styles[entry["style"]], is_host=bool(entry.get("is_host", False)),
            ))
        return out

    def cost_params(self) -> dict:
        styles = self.style_params()
        half_width = 0.5 * self.n_lanes * self.lane_width
        out = {}
        for entry in self.config["vehicles"]:
            cost = entry.get("cost", {})
            sp = styles[entry["style"]]
            out[str(entry["id"])] = CostParams(
                r_s=float(cost.get("r_s", sp.r_s)),
                r_d=float(cost.get("r_d", sp.r_d)),
                terminal_lane_weight=float(cost.get("terminal_lane_weight", 0.0)),
                terminal_speed_weight=float(cost.get("terminal_speed_weight", 0.0)),
                target_speed=float(cost.get("target_speed_mps", entry["speed_mps"])),
                target_lane_offset=float(cost.get("target_lane_offset_m", entry["d_m"])),
                penalty_weight=float(cost.get("penalty_weight", 0.0)),
                separation_weight=float(cost.get("separation_weight", 0.0)),
                separation_gap=float(cost.get("separation_gap_m", 12.0)),
                road_half_width=half_width,
                vehicle_width=float(cost.get("vehicle_width_m", 1.8)),
                speed_margin=float(cost.get("speed_margin", 1.2)),
                lane_mode=str(cost.get("lane_mode", "fixed")),
            )
        return out

    def model(self):
        return build_system_matrices(self.dt, self.sigma_w)

    def planning_model(self):
        """Noise-free twin of the simulation model, used by the planners."""
        return build_system_matrices(self.dt, 0.0)

    def planner_config(self) -> dict:
        return self.config.get("planner", {})

    def problem(self) -> PlanningProblem:
        p = self.planner_config()
        return PlanningProblem(
            model=self.planning_model(),
            grid=self.grid(),
            style_params=self.style_params(),
            field_params=self.field_params(),
            fusion_params=self.fusion_params(),
            cost_params=self.cost_params(),
            horizon=int(p.get("horizon_steps", 30)),
            a_max=float(self.config["scenario"].get("a_max_mps2", 3.0)),
            omega_max=float(self.config["scenario"].get("omega_max_mps2", 1.0)),
            n_measure_samples=int(p.get("n_measure_samples", 5)),
            sweeps=int(p.get("sweeps", 60)),
            br_tol=float(p.get("br_tol", 1e-5)),
            damping=float(p.get("damping", 0.5)),
            temperature=float(p.get("temperature", 0.1)),
            lane_offsets=self.lane_offsets(),
            lane_width=self.lane_width,
            lane_lookahead=float(p.get("lane_lookahead_m", 90.0)),
            merge_back_gap=float(p.get("merge_back_gap_m", 40.0)),
            merge_front_gap=float(p.get("merge_front_gap_m", 15.0)),
        )

    # -- validation ----------------------------------------------------
    def validate(self) -> None:
        violations = []
        cfg = self.config
        for section in ("scenario", "grid", "styles", "vehicles"):
            if section not in cfg:
                violations.append(f"missing [{section}] section")
        if violations:
            raise ScenarioError(f"invalid scenario {self.source}", violations=violations)
        dt = cfg["scenario"].get("dt_s", 0)
        duration = cfg["scenario"].get("duration_s", 0)
        if not dt > 0:
            violations.append("dt_s must be positive")
        elif abs(duration / dt - round(duration / dt)) > 1e-9:
            violations.append("duration_s must be an integral number of steps")
        vehicles = cfg.get("vehicles", [])
        if len(vehicles) < 1:
            violations.append("at least one vehicle required")
        hosts = [v for v in vehicles if v.get("is_host", False)]
        if len(hosts) != 1:
            violations.append(f"exactly one host vehicle required, found {len(hosts)}")
        ids = [v.get("id") for v in vehicles]
        if len(set(ids)) != len(ids):
            violations.append("vehicle ids must be unique")
        for v in vehicles:
            if v.get("style") not in cfg.get("styles", {}):
                violations.append(f"vehicle {v.get('id')!r} references undefined style {v.get('style')!r}")
        if violations:
            raise ScenarioError(f"invalid scenario {self.source}", violations=violations)
        # construction checks surface parameter errors early
        self.grid()
        self.field_params()
        self.fusion_params()
        self.style_params()
        self.vehicles()
        self.cost_params()


def load_scenario(path, overrides=None, seed=None) -> Scenario:
    """Parse, override, and validate a scenario TOML file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            config = tomli.load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}")
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}")
    if overrides:
        apply_overrides(config, overrides)
    if seed is not None:
        config["scenario"]["seed"] = int(seed)
    scenario = Scenario(config=config, source=str(path))
    scenario.validate()
    return scenario


# -- minimal TOML emitter for the resolved-config export ----------------

def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)} to TOML")


def _is_table_array(v) -> bool:
    return isinstance(v, list) and bool(v) and isinstance(v[0], dict)


def dump_toml(config: dict) -> str:
    """Serialize the scenario schema (nested tables, one array-of-tables)."""
    lines: list[str] = []

    def emit(prefix: str, table: dict, header: str | None):
        scalars = {k: v for k, v in table.items() if not isinstance(v, dict) and not _is_table_array(v)}
        if header is not None:
            lines.append(header)
        for k, v in scalars.items():
            lines.append(f"{k} = {_fmt_value(v)}")
        if header is not None or scalars:
            lines.append("")
        for k, v in table.items():
            name = f"{prefix}.{k}" if prefix else k
            if isinstance(v, dict):
                emit(name, v, f"[{name}]")
            elif _is_table_array(v):
                for row in v:
                    emit(name, row, f"[[{name}]]")

    emit("", config, None)
    return "\n".join(lines).rstrip() + "\n"
