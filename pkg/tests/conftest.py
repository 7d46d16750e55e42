"""Shared fixtures and helpers for the test suite."""

import copy

import numpy as np
import pytest

from iupf.fieldgrid import GridSpec, ScalarField
from iupf.scenario import Scenario


def smooth_random_field(spec: GridSpec, rng: np.random.Generator,
                        amplitude: float = 1.0, modes: int = 3) -> ScalarField:
    """Band-limited random field: smooth enough for finite differences."""
    S, D = spec.mesh()
    ls = spec.s_max - spec.s_min
    ld = spec.d_max - spec.d_min
    values = np.zeros_like(S)
    for _ in range(modes):
        ks = rng.integers(0, 3)
        kd = rng.integers(0, 3)
        phase_s = rng.uniform(0, 2 * np.pi)
        phase_d = rng.uniform(0, 2 * np.pi)
        coef = rng.uniform(-1.0, 1.0)
        values += coef * np.cos(2 * np.pi * ks * (S - spec.s_min) / ls + phase_s) \
            * np.cos(2 * np.pi * kd * (D - spec.d_min) / ld + phase_d)
    peak = np.abs(values).max()
    if peak > 0:
        values *= amplitude / peak
    return ScalarField(spec, values)


SMALL_CONFIG = {
    "scenario": {"name": "small", "dt_s": 0.1, "duration_s": 1.0, "seed": 3,
                 "lane_width_m": 3.75, "n_lanes": 3, "sigma_w": 0.05,
                 "a_max_mps2": 3.0, "omega_max_mps2": 1.0},
    "grid": {"s_min_m": 0.0, "s_max_m": 200.0, "d_min_m": -8.0, "d_max_m": 8.0,
             "n_s": 40, "n_d": 8},
    "fields": {"tikhonov_B": 1.0, "tikhonov_R": 1.0, "v_max_mps": 33.3,
               "cg_tol": 1e-8, "cg_max_iter": 5000},
    "fusion": {"gamma1": 3.3, "gamma2": 3.3, "gamma3": 0.5, "gamma4": 0.5,
               "gamma5": 0.1, "alpha1": 2.8, "alpha2": 2.8, "tau_step": 2e-3,
               "max_steps": 15, "steady_tol": 1e-5, "stabilization": 2.0},
    "planner": {"horizon_steps": 5, "sweeps": 10, "damping": 0.5, "br_tol": 1e-5,
                "fp_max_iters": 1, "fp_w2_tol": 0.05, "n_measure_samples": 3,
                "temperature": 0.05, "lane_lookahead_m": 60.0,
                "merge_back_gap_m": 40.0, "merge_front_gap_m": 15.0,
                "replan_stride": 1, "coast_margin_m": 60.0, "scripted_svs": False},
    "styles": {"cooperative": {"alpha_B": 1.0, "alpha_R": 1.0, "lambda_B_m": 155.0,
                               "lambda_R_m": 8.0, "sigma_B_m": 3.75, "sigma_R_m": 3.75,
                               "r_s": 1.0, "r_d": 1.0}},
    "output": {"snapshot_stride": 5},
    "vehicles": [
        {"id": "host", "s_m": 50.0, "d_m": 0.0, "speed_mps": 20.0,
         "style": "cooperative", "is_host": True,
         "cost": {"terminal_lane_weight": 2.0, "terminal_speed_weight": 0.5,
                  "target_speed_mps": 20.0, "target_lane_offset_m": 0.0,
                  "penalty_weight": 1.0, "lane_mode": "fixed"}},
        {"id": "sv", "s_m": 80.0, "d_m": 0.0, "speed_mps": 18.0,
         "style": "cooperative",
         "cost": {"terminal_lane_weight": 2.0, "terminal_speed_weight": 0.5,
                  "target_speed_mps": 18.0, "target_lane_offset_m": 0.0,
                  "penalty_weight": 1.0, "lane_mode": "fixed"}},
    ],
}


def small_scenario(**scenario_overrides) -> Scenario:
    """Fast two-vehicle scenario for loop/persistence tests."""
    config = copy.deepcopy(SMALL_CONFIG)
    config["scenario"].update(scenario_overrides)
    sc = Scenario(config=config)
    sc.validate()
    return sc


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
