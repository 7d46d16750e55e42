"""Read-only loaders for the artifact directory written by ``iupf run``.

The viewer never touches the simulator itself; everything is reconstructed
from steps.jsonl, fields_t<k>.csv, safety.json, and scenario.resolved.toml.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli

_SNAPSHOT_RE = re.compile(r"fields_t(\d+)\.csv$")


class ArtifactError(RuntimeError):
    """The run directory is missing or malformed."""


@dataclass(frozen=True)
class FieldSnapshot:
    step: int
    t: float
    s: np.ndarray  # (n_s,)
    d: np.ndarray  # (n_d,)
    benefit: np.ndarray  # (n_s, n_d)
    risk: np.ndarray
    unified: np.ndarray


@dataclass
class RunArtifacts:
    run_dir: Path
    scenario: dict
    steps: list  # parsed steps.jsonl objects, in order
    snapshots: list  # FieldSnapshot, sorted by step
    safety: dict

    @property
    def dt(self) -> float:
        return float(self.scenario["scenario"]["dt_s"])

    @property
    def host_id(self) -> str:
        for v in self.scenario["vehicles"]:
            if v.get("is_host"):
                return str(v["id"])
        raise ArtifactError("resolved scenario has no host vehicle")

    @property
    def vehicle_ids(self) -> list:
        return [str(v["id"]) for v in self.scenario["vehicles"]]

    def times(self) -> np.ndarray:
        return np.array([rec["t_s"] for rec in self.steps], dtype=float)

    def snapshot_at(self, t: float) -> FieldSnapshot:
        """Snapshot closest in time to ``t``."""
        if not self.snapshots:
            raise ArtifactError("run has no field snapshots")
        return min(self.snapshots, key=lambda snap: abs(snap.t - t))

    def trajectory(self, vehicle_id: str) -> np.ndarray:
        """(n_steps, 6) state history of one vehicle."""
        rows = []
        for rec in self.steps:
            for v in rec["vehicles"]:
                if v["id"] == vehicle_id:
                    rows.append(v["state"])
                    break
            else:
                raise ArtifactError(f"vehicle {vehicle_id!r} missing from a step record")
        return np.array(rows, dtype=float)

    def host_series(self, key: str) -> np.ndarray:
        return np.array([rec[key] for rec in self.steps], dtype=float)

    def separations(self) -> np.ndarray:
        """Per-step minimum separation; NaN where undefined (single vehicle)."""
        return np.array(
            [np.nan if rec["min_separation_m"] is None else rec["min_separation_m"]
             for rec in self.steps],
            dtype=float,
        )


def _load_snapshot(path: Path, step: int, dt: float) -> FieldSnapshot:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 5:
        raise ArtifactError(f"{path.name}: expected 5 columns s,d,benefit,risk,unified")
    s = np.unique(data[:, 0])
    d = np.unique(data[:, 1])
    if len(s) * len(d) != len(data):
        raise ArtifactError(f"{path.name}: rows do not form a full grid")
    shape = (len(s), len(d))
    return FieldSnapshot(
        step=step,
        t=step * dt,
        s=s,
        d=d,
        benefit=data[:, 2].reshape(shape),
        risk=data[:, 3].reshape(shape),
        unified=data[:, 4].reshape(shape),
    )


def load_run(run_dir) -> RunArtifacts:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ArtifactError(f"{run_dir} is not a directory")
    scenario_path = run_dir / "scenario.resolved.toml"
    steps_path = run_dir / "steps.jsonl"
    for required in (scenario_path, steps_path):
        if not required.exists():
            raise ArtifactError(f"{run_dir} is not an exported run: missing {required.name}")

    with open(scenario_path, "rb") as fh:
        scenario = tomli.load(fh)
    dt = float(scenario["scenario"]["dt_s"])

    steps = []
    with open(steps_path) as fh:
        for line in fh:
            if line.strip():
                steps.append(json.loads(line))

    snapshots = []
    for path in run_dir.iterdir():
        match = _SNAPSHOT_RE.match(path.name)
        if match:
            snapshots.append(_load_snapshot(path, int(match.group(1)), dt))
    snapshots.sort(key=lambda snap: snap.step)

    safety = {}
    safety_path = run_dir / "safety.json"
    if safety_path.exists():
        with open(safety_path) as fh:
            safety = json.load(fh)

    return RunArtifacts(run_dir=run_dir, scenario=scenario, steps=steps,
                        snapshots=snapshots, safety=safety)
