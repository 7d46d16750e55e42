"""Figure renderers. Every function writes PNGs and returns the paths."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .artifacts import FieldSnapshot, RunArtifacts

CRITICAL_SEPARATION = 8.0
WARNING_SEPARATION = 15.0

_LAYERS = (("benefit", "viridis"), ("risk", "magma"), ("unified", "coolwarm"))


def _states_at_step(run: RunArtifacts, step: int) -> dict:
    idx = min(step, len(run.steps) - 1)
    rec = run.steps[idx]
    return {v["id"]: np.asarray(v["state"], dtype=float) for v in rec["vehicles"]}


def _draw_layer(ax, snap: FieldSnapshot, name: str, cmap: str):
    values = getattr(snap, name)
    mesh = ax.pcolormesh(snap.s, snap.d, values.T, cmap=cmap, shading="nearest")
    ax.set_ylabel("d [m]")
    ax.set_title(name, loc="left", fontsize=9)
    return mesh


def _scatter_vehicles(ax, run: RunArtifacts, states: dict):
    host = run.host_id
    for vid, state in states.items():
        is_host = vid == host
        ax.plot(state[0], state[1], marker="*" if is_host else "o",
                markersize=11 if is_host else 6,
                color="white", markeredgecolor="black", linestyle="none")
        ax.annotate(vid, (state[0], state[1]), textcoords="offset points",
                    xytext=(5, 5), fontsize=7, color="white")


def render_field_frames(run: RunArtifacts, out_dir, times=(0.0, 7.5)) -> list:
    """One three-panel frame (benefit/risk/unified) per requested time.

    Each time picks the nearest available snapshot; vehicle positions from
    the matching step are overlaid.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for t in times:
        snap = run.snapshot_at(t)
        states = _states_at_step(run, snap.step)
        fig, axes = plt.subplots(3, 1, figsize=(10, 7), sharex=True, constrained_layout=True)
        for ax, (name, cmap) in zip(axes, _LAYERS):
            mesh = _draw_layer(ax, snap, name, cmap)
            fig.colorbar(mesh, ax=ax, shrink=0.9)
            _scatter_vehicles(ax, run, states)
        axes[-1].set_xlabel("s [m]")
        fig.suptitle(f"fields at t = {snap.t:g} s (requested {t:g} s)")
        path = out / f"fields_t{t:g}s.png"
        fig.savefig(path, dpi=130)
        plt.close(fig)
        written.append(path)
    return written


def render_layers(run: RunArtifacts, out_dir) -> list:
    """Layered summary figure: final benefit/risk/unified with all vehicle
    trajectories drawn on top of the unified layer."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snap = run.snapshots[-1]
    fig, axes = plt.subplots(3, 1, figsize=(10, 7), sharex=True, constrained_layout=True)
    for ax, (name, cmap) in zip(axes, _LAYERS):
        mesh = _draw_layer(ax, snap, name, cmap)
        fig.colorbar(mesh, ax=ax, shrink=0.9)
    unified_ax = axes[-1]
    host = run.host_id
    for vid in run.vehicle_ids:
        traj = run.trajectory(vid)
        is_host = vid == host
        unified_ax.plot(traj[:, 0], traj[:, 1],
                        linewidth=2.0 if is_host else 1.0,
                        color="black" if is_host else "dimgray",
                        label=f"{vid} (host)" if is_host and vid != "host" else vid)
        unified_ax.plot(traj[-1, 0], traj[-1, 1], marker="*" if is_host else "o",
                        color="white", markeredgecolor="black", linestyle="none")
    unified_ax.legend(fontsize=7, loc="upper left", ncol=len(run.vehicle_ids))
    unified_ax.set_xlabel("s [m]")
    fig.suptitle(f"final fields at t = {snap.t:g} s with trajectories")
    path = out / "layers.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return [path]


def render_timeseries_and_safety(run: RunArtifacts, out_dir, window: int = 10) -> list:
    """Host field samples over time plus the separation safety plot.

    The safety plot shows the raw minimum separation, a rolling mean with a
    +/-1 sigma band (``window`` steps), and the 8 m / 15 m threshold lines.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    t = run.times()

    fig, ax = plt.subplots(figsize=(9, 4), constrained_layout=True)
    ax.plot(t, run.host_series("phi_host"), label=r"$\Phi$ at host", color="tab:blue")
    ax.plot(t, run.host_series("bbar_host"), label=r"$\bar B$ at host", color="tab:green")
    ax.plot(t, run.host_series("rbar_host"), label=r"$\bar R$ at host", color="tab:red")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("field value")
    ax.set_title("host-sampled fields")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    path = out / "host_timeseries.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)

    sep = pd.Series(run.separations(), index=t)
    fig, ax = plt.subplots(figsize=(9, 4), constrained_layout=True)
    ax.plot(sep.index, sep.values, color="tab:blue", linewidth=1.0, label="min separation")
    if window > 1 and sep.notna().any():
        rolling = sep.rolling(window, min_periods=1)
        mean = rolling.mean()
        std = rolling.std().fillna(0.0)
        ax.plot(mean.index, mean.values, color="tab:blue", linewidth=2.0,
                label=f"rolling mean ({window})")
        ax.fill_between(mean.index, mean - std, mean + std, color="tab:blue",
                        alpha=0.2, label=r"$\pm 1\sigma$")
    ax.axhline(WARNING_SEPARATION, color="orange", linestyle="--",
               label=f"warning {WARNING_SEPARATION:g} m")
    ax.axhline(CRITICAL_SEPARATION, color="red", linestyle="--",
               label=f"critical {CRITICAL_SEPARATION:g} m")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("separation [m]")
    ax.set_ylim(bottom=0.0)
    ax.set_title("minimum inter-vehicle separation")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    path = out / "safety.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)
    return written
