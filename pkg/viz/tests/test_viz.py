"""Viewer tests against a synthesized run directory (no simulator needed)."""

import json
import math

import numpy as np
import pytest

from iupf_viz.artifacts import ArtifactError, load_run
from iupf_viz.cli import EXIT_OK, EXIT_VALIDATION, main
from iupf_viz.plots import render_field_frames, render_layers, render_timeseries_and_safety

N_STEPS = 20
DT = 0.5  # 20 steps -> t in [0, 9.5], so 7.5 s is in range
N_S, N_D = 12, 5


def _write_snapshot(path, step):
    s = np.linspace(0.0, 110.0, N_S)
    d = np.linspace(-8.0, 8.0, N_D)
    with open(path, "w") as fh:
        fh.write("s,d,benefit,risk,unified\n")
        for i in range(N_S):
            for j in range(N_D):
                b = math.exp(-((s[i] - 50 - step) / 30) ** 2)
                r = math.exp(-((s[i] - 80) / 20) ** 2)
                fh.write(f"{s[i]:.9g},{d[j]:.9g},{b:.9g},{r:.9g},{b - r:.9g}\n")


@pytest.fixture
def run_dir(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    (out / "scenario.resolved.toml").write_text(
        "[scenario]\n"
        f"dt_s = {DT}\n"
        f"duration_s = {N_STEPS * DT}\n"
        "seed = 1\n"
        "\n"
        "[[vehicles]]\n"
        'id = "host"\n'
        "is_host = true\n"
        "\n"
        "[[vehicles]]\n"
        'id = "sv"\n'
        "is_host = false\n"
    )
    with open(out / "steps.jsonl", "w") as fh:
        for k in range(N_STEPS):
            t = k * DT
            rec = {
                "t_s": t,
                "vehicles": [
                    {"id": "host", "is_host": True,
                     "state": [20.0 + 20.0 * t, 0.05 * k, 20.0, 0.0, 0.0, 0.0],
                     "control": [0.0, 0.0]},
                    {"id": "sv", "is_host": False,
                     "state": [50.0 + 15.0 * t, 3.75, 15.0, 0.0, 0.0, 0.0],
                     "control": [0.0, 0.0]},
                ],
                "min_separation_m": 30.0 - 0.8 * k,
                "phi_host": 0.1 * math.sin(t),
                "bbar_host": 0.5 + 0.1 * math.cos(t),
                "rbar_host": 0.3,
                "field_stats": {},
            }
            fh.write(json.dumps(rec) + "\n")
    for step in (0, 10, 20):
        _write_snapshot(out / f"fields_t{step}.csv", step)
    (out / "safety.json").write_text(json.dumps({
        "min_separation_m": 30.0 - 0.8 * (N_STEPS - 1),
        "time_below_15m_s": 0.5,
        "time_below_8m_s": 0.0,
        "critical_threshold_m": 8.0,
        "warning_threshold_m": 15.0,
    }))
    return out


# -- loading ---------------------------------------------------------------

def test_load_run_structure(run_dir):
    run = load_run(run_dir)
    assert run.dt == DT
    assert run.host_id == "host"
    assert run.vehicle_ids == ["host", "sv"]
    assert len(run.steps) == N_STEPS
    assert [snap.step for snap in run.snapshots] == [0, 10, 20]
    assert [snap.t for snap in run.snapshots] == [0.0, 5.0, 10.0]
    snap = run.snapshots[0]
    assert snap.benefit.shape == (N_S, N_D)
    # reshaping preserves the (s, d) indexing of the CSV
    assert snap.unified[3, 2] == pytest.approx(snap.benefit[3, 2] - snap.risk[3, 2])


def test_snapshot_at_picks_nearest(run_dir):
    run = load_run(run_dir)
    assert run.snapshot_at(0.0).step == 0
    assert run.snapshot_at(7.5).step == 10  # equidistant tie goes to the earlier snapshot
    assert run.snapshot_at(8.0).step == 20
    assert run.snapshot_at(4.0).step == 10


def test_trajectory_and_series(run_dir):
    run = load_run(run_dir)
    traj = run.trajectory("host")
    assert traj.shape == (N_STEPS, 6)
    assert traj[0, 0] == pytest.approx(20.0)
    assert np.all(np.diff(traj[:, 0]) > 0)
    assert run.host_series("rbar_host") == pytest.approx(np.full(N_STEPS, 0.3))
    seps = run.separations()
    assert seps[0] == pytest.approx(30.0)
    assert np.all(np.isfinite(seps))


def test_load_run_rejects_non_run_dir(tmp_path):
    with pytest.raises(ArtifactError):
        load_run(tmp_path)
    with pytest.raises(ArtifactError):
        load_run(tmp_path / "missing")


def test_null_separation_becomes_nan(run_dir):
    lines = (run_dir / "steps.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    rec["min_separation_m"] = None
    lines[0] = json.dumps(rec)
    (run_dir / "steps.jsonl").write_text("\n".join(lines) + "\n")
    seps = load_run(run_dir).separations()
    assert math.isnan(seps[0]) and np.isfinite(seps[1:]).all()


# -- rendering ---------------------------------------------------------------

def test_render_field_frames_default_times(run_dir, tmp_path):
    run = load_run(run_dir)
    written = render_field_frames(run, tmp_path / "figs")
    names = [p.name for p in written]
    assert names == ["fields_t0s.png", "fields_t7.5s.png"]
    assert all(p.stat().st_size > 0 for p in written)


def test_render_layers_and_timeseries(run_dir, tmp_path):
    run = load_run(run_dir)
    layer_paths = render_layers(run, tmp_path / "figs")
    ts_paths = render_timeseries_and_safety(run, tmp_path / "figs", window=5)
    names = [p.name for p in layer_paths + ts_paths]
    assert names == ["layers.png", "host_timeseries.png", "safety.png"]
    assert all(p.stat().st_size > 0 for p in layer_paths + ts_paths)


# -- CLI ---------------------------------------------------------------------

def test_cli_renders_everything(run_dir, tmp_path, capsys):
    out = tmp_path / "figs"
    code = main([str(run_dir), "--out", str(out)])
    assert code == EXIT_OK
    produced = {p.name for p in out.iterdir()}
    assert produced == {"fields_t0s.png", "fields_t7.5s.png", "layers.png",
                        "host_timeseries.png", "safety.png"}
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 5


def test_cli_custom_times_and_window(run_dir, tmp_path):
    out = tmp_path / "figs"
    code = main([str(run_dir), "--out", str(out), "--times", "2.0", "--window", "3"])
    assert code == EXIT_OK
    assert (out / "fields_t2s.png").exists()
    assert not (out / "fields_t7.5s.png").exists()


def test_cli_bad_inputs(tmp_path, capsys):
    assert main([str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
    assert main([str(tmp_path), "--out", str(tmp_path / "o"), "--window", "0"]) == EXIT_VALIDATION
    assert main(["--nope"]) == EXIT_VALIDATION
    capsys.readouterr()
