"""Per-vehicle optimal control and the population best-response iteration.

Planning is a certainty-equivalent discrete Pontryagin sweep: forward
rollout of the noise-free dynamics, backward adjoint recursion, damped
control update toward u = -R^-1 B^T Y with a cost-based line search. The
population level iterates the best-response operator and monitors the
Wasserstein-2 distance between successive induced measures.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from . import fields as fields_mod
from . import fusion as fusion_mod
from .dynamics import (
    DEFAULT_A_MAX,
    DEFAULT_OMEGA_MAX,
    ControlInput,
    DynamicsModel,
    VehicleState,
)
from .errors import ConvergenceError, InvalidParameterError
from .fieldgrid import GridSpec, ScalarField, sample_bilinear_gradient, sample_bilinear_many
from .fusion import FusionParams, UnifiedField
from .population import PopulationMeasure, StyleParameters, Vehicle, wasserstein2

__all__ = [
    "CostParams",
    "TrajectoryPlan",
    "ConvergenceReport",
    "PlanningProblem",
    "running_cost",
    "hamiltonian",
    "rollout",
    "backward_sweep",
    "control_gradients",
    "optimal_control_from_adjoint",
    "evaluate_cost",
    "hold_controls",
    "solve_best_response",
    "fixed_point_iteration",
]


@dataclass(frozen=True)
class CostParams:
    """Running/terminal cost weights for one vehicle."""

    r_s: float = 1.0
    r_d: float = 1.0
    terminal_lane_weight: float = 0.0
    terminal_speed_weight: float = 0.0
    target_speed: float = 0.0
    target_lane_offset: float = 0.0
    penalty_weight: float = 0.0
    # Optional soft-separation hinge against other vehicles' positions.
    separation_weight: float = 0.0
    separation_gap: float = 12.0
    road_half_width: float = 5.625
    vehicle_width: float = 1.8
    speed_margin: float = 1.2
    # "fixed" keeps target_lane_offset as configured; "softmax"/"argmax"
    # re-target it each planning round from unified-field corridor scores.
    lane_mode: str = "fixed"

    def __post_init__(self):
        if not (self.r_s > 0 and self.r_d > 0):
            raise InvalidParameterError("control-cost diagonals must be positive")
        if self.lane_mode not in ("fixed", "softmax", "argmax"):
            raise InvalidParameterError(f"unknown lane_mode {self.lane_mode!r}")

    def R(self) -> np.ndarray:
        return np.diag([self.r_s, self.r_d])


@dataclass
class TrajectoryPlan:
    """States (K+1, 6), controls (K, 2), adjoints (K+1, 6), final cost."""

    states: np.ndarray
    controls: np.ndarray
    adjoints: np.ndarray
    cost: float
    cost_history: list = dc_field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    def state_at(self, k: int) -> VehicleState:
        return VehicleState.from_array(self.states[k])

    def control_at(self, k: int) -> ControlInput:
        return ControlInput.from_array(self.controls[k])


@dataclass
class ConvergenceReport:
    w2_gaps: list
    w2_to_final: list
    rho_hat: float | None
    converged: bool
    iterations: int
    costs: list  # one dict {vehicle_id: cost} per iteration

    def jsonl_records(self) -> list:
        out = []
        for k, gap in enumerate(self.w2_gaps):
            out.append(
                {
                    "iteration": k + 1,
                    "w2_gap": gap,
                    "rho_hat": self.rho_hat,
                    "costs": self.costs[k] if k < len(self.costs) else {},
                }
            )
        return out


def _phi_values(phi) -> ScalarField:
    return phi.phi if isinstance(phi, UnifiedField) else phi


def _others_positions(others) -> np.ndarray | None:
    """(m, 2) atom positions from a measure/array, or None when empty."""
    if others is None:
        return None
    if isinstance(others, PopulationMeasure):
        if others.is_empty():
            return None
        return others.state_matrix()[:, :2]
    arr = np.atleast_2d(np.asarray(others, dtype=float))
    return arr if arr.size else None


def _penalty_terms(states: np.ndarray, cp: CostParams, others_pos) -> tuple[np.ndarray, np.ndarray]:
    """Soft-constraint penalties and their state gradients, vectorized.

    Quadratic hinges on lane-boundary excursion, speed-envelope violation,
    and (when enabled) separation below the configured gap.
    """
    n = states.shape[0]
    vals = np.zeros(n)
    grads = np.zeros((n, 6))
    pw = cp.penalty_weight
    if pw > 0:
        bound = cp.road_half_width - 0.5 * cp.vehicle_width
        d = states[:, 1]
        exc = np.maximum(np.abs(d) - bound, 0.0)
        vals += pw * exc**2
        grads[:, 1] += pw * 2.0 * exc * np.sign(d)

        v = states[:, 2]
        low = np.maximum(-v, 0.0)
        hi_lim = cp.speed_margin * cp.target_speed
        high = np.maximum(v - hi_lim, 0.0)
        vals += pw * (low**2 + high**2)
        grads[:, 2] += pw * 2.0 * (high - low)
    if cp.separation_weight > 0 and others_pos is not None:
        delta = states[:, None, :2] - others_pos[None, :, :]
        dist = np.sqrt(np.einsum("nmk,nmk->nm", delta, delta)) + 1e-9
        short = np.maximum(cp.separation_gap - dist, 0.0)
        vals += cp.separation_weight * (short**2).sum(axis=1)
        coef = -2.0 * cp.separation_weight * short / dist
        grads[:, 0] += (coef * delta[:, :, 0]).sum(axis=1)
        grads[:, 1] += (coef * delta[:, :, 1]).sum(axis=1)
    return vals, grads


def _clamped_positions(spec, states: np.ndarray) -> np.ndarray:
    """Trajectory sample points clamped into the field domain; the field is
    extended by its edge value so excursions see a flat potential while the
    lane and boundary penalties pull the plan back."""
    pts = states[:, :2].copy()
    pts[:, 0] = np.clip(pts[:, 0], spec.s_min, spec.s_max)
    pts[:, 1] = np.clip(pts[:, 1], spec.d_min, spec.d_max)
    return pts


def _running_terms(states: np.ndarray, controls: np.ndarray, phi: ScalarField,
                   cp: CostParams, others_pos) -> tuple[np.ndarray, np.ndarray]:
    """Per-step running cost L(x_k, u_k) and its state gradient."""
    vals, gs, gd = sample_bilinear_gradient(phi, _clamped_positions(phi.spec, states))
    pen, pen_grad = _penalty_terms(states, cp, others_pos)
    r = np.array([cp.r_s, cp.r_d])
    L = -vals + 0.5 * (controls**2 @ r) + pen
    grad = pen_grad
    grad[:, 0] -= gs
    grad[:, 1] -= gd
    return L, grad


def _terminal_terms(x_final: np.ndarray, cp: CostParams) -> tuple[float, np.ndarray]:
    g = np.zeros(6)
    d_err = x_final[1] - cp.target_lane_offset
    v_err = x_final[2] - cp.target_speed
    psi = 0.5 * cp.terminal_lane_weight * d_err**2 + 0.5 * cp.terminal_speed_weight * v_err**2
    g[1] = cp.terminal_lane_weight * d_err
    g[2] = cp.terminal_speed_weight * v_err
    return float(psi), g


def running_cost(x, u, phi, cp: CostParams, others=None) -> float:
    """Instantaneous cost L = -Phi(pi(x)) + u^T R u / 2 + penalties."""
    xv = x.as_array() if isinstance(x, VehicleState) else np.asarray(x, dtype=float)
    uv = u.as_array() if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    L, _ = _running_terms(
        xv.reshape(1, 6), uv.reshape(1, 2), _phi_values(phi), cp, _others_positions(others)
    )
    return float(L[0])


def hamiltonian(x, u, y, phi, cp: CostParams, model: DynamicsModel,
                drift=None, others=None) -> float:
    """H = L(x, u) + y^T (A x + B u + drift); the z-trace term vanishes in
    the certainty-equivalent sweep."""
    xv = x.as_array() if isinstance(x, VehicleState) else np.asarray(x, dtype=float)
    uv = u.as_array() if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    yv = np.asarray(y, dtype=float)
    f = model.A @ xv + model.B @ uv
    if drift is not None:
        f = f + np.asarray(drift, dtype=float)
    return running_cost(xv, uv, phi, cp, others) + float(yv @ f)


def rollout(model: DynamicsModel, x0: np.ndarray, controls: np.ndarray) -> np.ndarray:
    """Noise-free forward propagation; returns (K+1, 6) state array."""
    K = controls.shape[0]
    states = np.empty((K + 1, 6))
    states[0] = x0
    for k in range(K):
        states[k + 1] = model.A @ states[k] + model.B @ controls[k]
    return states


def evaluate_cost(plan_or_states, phi, cp: CostParams, model: DynamicsModel,
                  controls=None, others=None) -> float:
    """dt * sum_k L(x_k, u_k) + Psi(x_K), the noise-free cost realization."""
    if isinstance(plan_or_states, TrajectoryPlan):
        states, controls = plan_or_states.states, plan_or_states.controls
    else:
        states = np.asarray(plan_or_states, dtype=float)
        controls = np.asarray(controls, dtype=float)
    others_pos = _others_positions(others)
    L, _ = _running_terms(states[:-1], controls, _phi_values(phi), cp, others_pos)
    psi, _ = _terminal_terms(states[-1], cp)
    return float(model.dt * L.sum() + psi)


def backward_sweep(states: np.ndarray, controls: np.ndarray, phi, cp: CostParams,
                   model: DynamicsModel, others=None) -> np.ndarray:
    """Discrete adjoint recursion Y_k = A^T Y_{k+1} + dt * grad_x L(x_k, u_k),
    Y_K = grad_x Psi(x_K). Returns (K+1, 6)."""
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    K = controls.shape[0]
    _, grads = _running_terms(states[:-1], controls, _phi_values(phi), cp, _others_positions(others))
    Y = np.empty((K + 1, 6))
    _, Y[K] = _terminal_terms(states[K], cp)
    At = model.A.T
    for k in range(K - 1, -1, -1):
        Y[k] = At @ Y[k + 1] + model.dt * grads[k]
    return Y


def control_gradients(controls: np.ndarray, adjoints: np.ndarray, cp: CostParams,
                      model: DynamicsModel) -> np.ndarray:
    """Exact total-cost gradient w.r.t. each control: dt*R u_k + B^T Y_{k+1}."""
    r = np.array([cp.r_s, cp.r_d])
    return model.dt * controls * r + adjoints[1:] @ model.B


def optimal_control_from_adjoint(y_next, cp: CostParams, model: DynamicsModel,
                                 a_max: float = DEFAULT_A_MAX,
                                 omega_max: float = DEFAULT_OMEGA_MAX) -> ControlInput:
    """Pointwise optimality condition u = -R^-1 B^T y, clamped to bounds."""
    y = np.asarray(y_next, dtype=float)
    u = -(model.B.T @ y) / np.array([cp.r_s, cp.r_d])
    return ControlInput(
        float(np.clip(u[0], -a_max, a_max)),
        float(np.clip(u[1], -omega_max, omega_max)),
    )


def solve_best_response(x0, phi, cp: CostParams, model: DynamicsModel, horizon: int,
                        *, others=None, u0=None, sweeps: int = 60, tol: float = 1e-5,
                        damping: float = 0.5, a_max: float = DEFAULT_A_MAX,
                        omega_max: float = DEFAULT_OMEGA_MAX) -> TrajectoryPlan:
    """Iterated rollout / adjoint sweep / damped control update.

    The update target is the clamped minimizer of the discrete Hamiltonian,
    u = -(1/dt) R^-1 B^T Y_{k+1}; a halving line search keeps the cost
    nonincreasing across accepted steps.
    """
    if horizon < 1:
        raise InvalidParameterError("horizon must be at least 1")
    x0 = x0.as_array() if isinstance(x0, VehicleState) else np.asarray(x0, dtype=float)
    phi = _phi_values(phi)
    others_pos = _others_positions(others)
    bounds = np.array([a_max, omega_max])
    r = np.array([cp.r_s, cp.r_d])

    u = np.zeros((horizon, 2)) if u0 is None else np.clip(np.asarray(u0, dtype=float).copy(), -bounds, bounds)
    states = rollout(model, x0, u)
    cost = evaluate_cost(states, phi, cp, model, controls=u, others=others_pos)
    history = [cost]
    Y = backward_sweep(states, u, phi, cp, model, others=others_pos)

    for _ in range(sweeps):
        target = np.clip(-(Y[1:] @ model.B) / (model.dt * r), -bounds, bounds)
        direction = target - u
        step_inf = float(np.max(np.abs(direction)))
        if step_inf < tol:
            break
        eta = damping
        accepted = False
        for _try in range(12):
            u_try = u + eta * direction
            states_try = rollout(model, x0, u_try)
            cost_try = evaluate_cost(states_try, phi, cp, model, controls=u_try, others=others_pos)
            if cost_try <= cost + 1e-12 * max(1.0, abs(cost)):
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            # No descent direction left at numerical resolution: treat a tiny
            # remaining update as converged, otherwise report failure.
            if step_inf < 1e-3:
                break
            raise ConvergenceError(
                "best-response line search failed to make monotone progress",
                partial=TrajectoryPlan(states, u, Y, cost, history),
            )
        moved = eta * step_inf
        u, states, cost = u_try, states_try, cost_try
        history.append(cost)
        Y = backward_sweep(states, u, phi, cp, model, others=others_pos)
        if moved < tol:
            break

    return TrajectoryPlan(states=states, controls=u, adjoints=Y, cost=cost, cost_history=history)


@dataclass
class PlanningProblem:
    """Everything the best-response iteration needs besides the vehicles."""

    model: DynamicsModel
    grid: GridSpec
    style_params: dict  # label -> StyleParameters
    field_params: fields_mod.FieldParams
    fusion_params: FusionParams
    cost_params: dict  # vehicle id -> CostParams
    horizon: int
    a_max: float = DEFAULT_A_MAX
    omega_max: float = DEFAULT_OMEGA_MAX
    n_measure_samples: int = 5
    sweeps: int = 60
    br_tol: float = 1e-5
    damping: float = 0.5
    temperature: float = 0.1
    lane_offsets: tuple = (-3.75, 0.0, 3.75)
    lane_width: float = 3.75
    lane_lookahead: float = 90.0
    # Gap-acceptance window for lane retargeting: a candidate lane occupied
    # within (-merge_back_gap, merge_front_gap) of the planner is masked out.
    merge_back_gap: float = 40.0
    merge_front_gap: float = 15.0


# Jerk-level feedback gains for the hold controller: longitudinal PD on
# (speed error, acceleration), lateral PDD on (offset, rate, acceleration).
_HOLD_KV, _HOLD_KA = 0.4, 1.2
_HOLD_KP, _HOLD_KDV, _HOLD_KDA = 0.3, 0.9, 1.5


def hold_controls(model: DynamicsModel, state, cp: CostParams, horizon: int,
                  a_max: float = DEFAULT_A_MAX,
                  omega_max: float = DEFAULT_OMEGA_MAX) -> np.ndarray:
    """Closed-loop lane/speed hold rollout for vehicles outside the planning
    domain. Returns a (horizon, 2) jerk sequence."""
    x = state.as_array() if isinstance(state, VehicleState) else np.asarray(state, dtype=float).copy()
    u = np.empty((horizon, 2))
    for k in range(horizon):
        u_s = -_HOLD_KV * (x[2] - cp.target_speed) - _HOLD_KA * x[4]
        u_d = -_HOLD_KP * (x[1] - cp.target_lane_offset) - _HOLD_KDV * x[3] - _HOLD_KDA * x[5]
        u[k] = (np.clip(u_s, -a_max, a_max), np.clip(u_d, -omega_max, omega_max))
        x = model.A @ x + model.B @ u[k]
    return u


def _sample_indices(horizon: int, n: int) -> np.ndarray:
    return np.unique(np.round(np.linspace(0, horizon, min(n, horizon + 1))).astype(int))


def _plan_atoms(plan: TrajectoryPlan, idx: np.ndarray) -> list:
    return [VehicleState.from_array(plan.states[k]) for k in idx]


def _measures_from_atoms(atoms_by_label: dict) -> dict:
    out = {}
    for label, states in atoms_by_label.items():
        out[label] = PopulationMeasure.from_states(states)
    return out


def _feasible_lanes(state: np.ndarray, problem: PlanningProblem, others_pos) -> np.ndarray:
    """Gap-acceptance mask over candidate lane centers.

    The current lane is always allowed. Any other lane is ruled out when a
    vehicle occupies it within (-merge_back_gap, merge_front_gap) of the
    planner's station.
    """
    offsets = np.asarray(problem.lane_offsets)
    current = int(np.argmin(np.abs(offsets - state[1])))
    feasible = np.ones(len(offsets), dtype=bool)
    if others_pos is None or len(others_pos) == 0:
        return feasible
    others_pos = np.asarray(others_pos, dtype=float)
    for i, center in enumerate(offsets):
        if i == current:
            continue
        in_lane = np.abs(others_pos[:, 1] - center) <= 0.5 * problem.lane_width
        ahead = others_pos[:, 0] - state[0]
        blocked = in_lane & (ahead > -problem.merge_back_gap) & (ahead < problem.merge_front_gap)
        if np.any(blocked):
            feasible[i] = False
    return feasible


def _lane_target(phi: ScalarField, state: np.ndarray, problem: PlanningProblem,
                 cp: CostParams, others_pos=None) -> float:
    """Score feasible lane centers by mean unified-field value along each
    corridor ahead, then softmax-blend (T > 0) or argmax (T -> 0)."""
    grid = problem.grid
    s0 = min(max(state[0], grid.s_min), grid.s_max)
    s_hi = min(s0 + problem.lane_lookahead, grid.s_max)
    s_mask = (grid.s_coords() >= s0) & (grid.s_coords() <= s_hi)
    if not np.any(s_mask):
        return cp.target_lane_offset
    d = grid.d_coords()
    scores = []
    for center in problem.lane_offsets:
        d_mask = np.abs(d - center) <= 0.5 * problem.lane_width
        scores.append(float(phi.values[np.ix_(s_mask, d_mask)].mean()))
    scores = np.asarray(scores)
    offsets = np.asarray(problem.lane_offsets)
    feasible = _feasible_lanes(state, problem, others_pos)
    scores, offsets = scores[feasible], offsets[feasible]
    if cp.lane_mode == "argmax" or problem.temperature <= 0:
        return float(offsets[int(np.argmax(scores))])
    w = np.exp((scores - scores.max()) / problem.temperature)
    w /= w.sum()
    return float(w @ offsets)


def build_vehicle_fields(vehicle_id: str, atoms_by_vehicle: dict, styles_by_vehicle: dict,
                         problem: PlanningProblem, phi_warm: ScalarField | None = None):
    """Leave-one-out benefit/risk solves plus Cahn-Hilliard fusion for one
    planner. Returns (FieldPair, UnifiedField)."""
    atoms_by_label: dict[str, list] = {}
    for vid, atoms in atoms_by_vehicle.items():
        if vid == vehicle_id:
            continue
        atoms_by_label.setdefault(styles_by_vehicle[vid].label, []).extend(atoms)
    measures = _measures_from_atoms(atoms_by_label)
    pair = fields_mod.solve_field_pair(measures, problem.grid, problem.style_params,
                                       problem.field_params)
    unified = fusion_mod.fuse(pair.benefit, pair.risk, problem.fusion_params, phi0=phi_warm)
    return pair, unified


def fixed_point_iteration(vehicles, problem: PlanningProblem, max_k: int = 10,
                          w2_tol: float = 1e-2, warm: dict | None = None,
                          frozen_ids=frozenset()):
    """Iterate the best-response operator over all (non-frozen) vehicles.

    Each iteration rebuilds every planner's leave-one-out fields from the
    others' sampled plan trajectories, re-solves the best responses, and
    measures the W2 gap between successive induced population measures.

    Returns (plans by id, ConvergenceReport, fields by id) where fields maps
    each vehicle id to its final (FieldPair, UnifiedField).
    """
    if max_k < 1:
        raise InvalidParameterError("max_k must be at least 1")
    vehicles = list(vehicles)
    warm = warm if warm is not None else {}
    idx = _sample_indices(problem.horizon, problem.n_measure_samples)
    styles_by_vehicle = {v.id: v.style for v in vehicles}

    plans: dict[str, TrajectoryPlan] = {}
    for v in vehicles:
        if v.id in frozen_ids:
            u0 = hold_controls(problem.model, v.state, problem.cost_params[v.id],
                               problem.horizon, problem.a_max, problem.omega_max)
        else:
            u0 = warm.get(v.id, {}).get("controls")
            if u0 is None or len(u0) != problem.horizon:
                u0 = np.zeros((problem.horizon, 2))
        states = rollout(problem.model, v.state.as_array(), u0)
        plans[v.id] = TrajectoryPlan(states, np.asarray(u0, dtype=float), np.zeros_like(states), np.nan)

    def induced_measure(current_plans):
        return PopulationMeasure.from_states(
            [VehicleState.from_array(current_plans[v.id].states[k]) for v in vehicles for k in idx]
        )

    measure_history = [induced_measure(plans)]
    gaps: list[float] = []
    costs: list[dict] = []
    fields_by_id: dict = {}
    converged = False
    iterations = 0

    for iterations in range(1, max_k + 1):
        atoms_by_vehicle = {v.id: _plan_atoms(plans[v.id], idx) for v in vehicles}
        current_pos = {v.id: plans[v.id].states[0, :2] for v in vehicles}
        new_plans: dict[str, TrajectoryPlan] = {}
        iter_costs: dict[str, float] = {}
        for v in vehicles:
            cp = problem.cost_params[v.id]
            pair, unified = build_vehicle_fields(
                v.id, atoms_by_vehicle, styles_by_vehicle, problem,
                phi_warm=warm.get(v.id, {}).get("phi"),
            )
            fields_by_id[v.id] = (pair, unified)
            warm.setdefault(v.id, {})["phi"] = unified.phi
            if v.id in frozen_ids:
                new_plans[v.id] = plans[v.id]
                continue
            others_pos = np.array([current_pos[o.id] for o in vehicles if o.id != v.id])
            if cp.lane_mode != "fixed":
                cp = replace(cp, target_lane_offset=_lane_target(
                    unified.phi, v.state.as_array(), problem, cp,
                    others_pos=others_pos if len(others_pos) else None,
                ))
            plan = solve_best_response(
                v.state.as_array(), unified.phi, cp, problem.model, problem.horizon,
                others=others_pos if len(others_pos) else None,
                u0=plans[v.id].controls, sweeps=problem.sweeps, tol=problem.br_tol,
                damping=problem.damping, a_max=problem.a_max, omega_max=problem.omega_max,
            )
            new_plans[v.id] = plan
            iter_costs[v.id] = plan.cost
            warm[v.id]["controls"] = plan.controls
        plans = new_plans
        costs.append(iter_costs)
        measure_history.append(induced_measure(plans))
        gaps.append(wasserstein2(measure_history[-1], measure_history[-2]))
        if gaps[-1] < w2_tol:
            converged = True
            break

    final = measure_history[-1]
    w2_to_final = [wasserstein2(m, final) for m in measure_history[:-1]]
    rho_hat = None
    if iterations >= 3:
        ratios = [
            gaps[j + 1] / gaps[j]
            for j in range(len(gaps) - 1)
            if gaps[j] > 1e-15 and gaps[j + 1] > 1e-15
        ]
        if ratios:
            rho_hat = float(np.exp(np.mean(np.log(ratios))))
    report = ConvergenceReport(
        w2_gaps=gaps, w2_to_final=w2_to_final, rho_hat=rho_hat,
        converged=converged, iterations=iterations, costs=costs,
    )
    return plans, report, fields_by_id
