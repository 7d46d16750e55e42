"""Discrete-time linear Frenet kinematics.

State x = (s, d, s_dot, d_dot, s_ddot, d_ddot); controls are longitudinal
jerk and lateral acceleration rate. Triple-integrator chains per axis with
additive Gaussian process noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, NumericsError

__all__ = [
    "VehicleState",
    "ControlInput",
    "DynamicsModel",
    "build_system_matrices",
    "propagate",
    "sample_noise",
    "clamp_control",
    "saturate_acceleration",
    "project_position",
    "DEFAULT_A_MAX",
    "DEFAULT_OMEGA_MAX",
]

# Actuator bounds used throughout the highway scenarios (m/s^2 rate limits).
DEFAULT_A_MAX = 3.0
DEFAULT_OMEGA_MAX = 1.0

_CHOL_JITTER = 1e-12


@dataclass(frozen=True)
class VehicleState:
    s: float
    d: float
    s_dot: float
    d_dot: float
    s_ddot: float = 0.0
    d_ddot: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.d, self.s_dot, self.d_dot, self.s_ddot, self.d_ddot])

    @classmethod
    def from_array(cls, x) -> "VehicleState":
        x = np.asarray(x, dtype=float)
        return cls(*(float(v) for v in x))

    def position(self) -> tuple[float, float]:
        return (self.s, self.d)


@dataclass(frozen=True)
class ControlInput:
    a_s: float = 0.0
    omega_d: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.a_s, self.omega_d])

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        return cls(float(u[0]), float(u[1]))


@dataclass(frozen=True)
class DynamicsModel:
    dt: float
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    sigma_w: float
    noise_factor: np.ndarray = field(repr=False, default=None)


def build_system_matrices(dt: float, sigma_w: float = 0.0) -> DynamicsModel:
    """Assemble A, B, Q for step ``dt`` and noise intensity ``sigma_w``."""
    if not dt > 0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    if sigma_w < 0:
        raise InvalidParameterError(f"sigma_w must be nonnegative, got {sigma_w}")

    h = float(dt)
    A = np.eye(6)
    A[0, 2] = A[1, 3] = A[2, 4] = A[3, 5] = h
    A[0, 4] = A[1, 5] = h**2 / 2.0

    B = np.zeros((6, 2))
    B[0, 0] = B[1, 1] = h**3 / 6.0
    B[2, 0] = B[3, 1] = h**2 / 2.0
    B[4, 0] = B[5, 1] = h

    # Rank-one per axis: outer product of (h^2/2, h, 1) along each chain.
    axis = np.array([h**2 / 2.0, h, 1.0])
    block = np.outer(axis, axis)
    Q = np.zeros((6, 6))
    for offset in (0, 1):
        idx = np.array([offset, offset + 2, offset + 4])
        Q[np.ix_(idx, idx)] = block
    Q *= sigma_w**2

    if sigma_w == 0.0:
        L = np.zeros((6, 6))
    else:
        try:
            L = np.linalg.cholesky(Q + _CHOL_JITTER * np.eye(6))
        except np.linalg.LinAlgError as exc:  # pragma: no cover - Q is PSD
            raise NumericsError("noise covariance factorization failed") from exc

    model = DynamicsModel(dt=h, A=A, B=B, Q=Q, sigma_w=float(sigma_w))
    object.__setattr__(model, "noise_factor", L)
    for m in (model.A, model.B, model.Q, model.noise_factor):
        m.setflags(write=False)
    return model


def propagate(model: DynamicsModel, x: VehicleState, u: ControlInput, w=None) -> VehicleState:
    """One step of x+ = A x + B u + w. Inputs must be finite; ``u`` is
    assumed already clamped."""
    xv = x.as_array()
    uv = u.as_array()
    wv = np.zeros(6) if w is None else np.asarray(w, dtype=float)
    if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(uv)) and np.all(np.isfinite(wv))):
        raise NumericsError("non-finite state, control, or noise component")
    return VehicleState.from_array(model.A @ xv + model.B @ uv + wv)


def sample_noise(model: DynamicsModel, rng: np.random.Generator) -> np.ndarray:
    """Draw w ~ N(0, Q) via the cached Cholesky factor."""
    if model.sigma_w == 0.0:
        return np.zeros(6)
    return model.noise_factor @ rng.standard_normal(6)


def clamp_control(
    u: ControlInput, a_max: float = DEFAULT_A_MAX, omega_max: float = DEFAULT_OMEGA_MAX
) -> ControlInput:
    return ControlInput(
        a_s=min(max(u.a_s, -a_max), a_max),
        omega_d=min(max(u.omega_d, -omega_max), omega_max),
    )


def saturate_acceleration(x: VehicleState, a_max: float = DEFAULT_A_MAX) -> VehicleState:
    """Clamp the acceleration states to the configured envelope.

    The actuator bounds apply to jerk only; this keeps the integrated
    acceleration states physically meaningful after long rollouts.
    """
    if abs(x.s_ddot) <= a_max and abs(x.d_ddot) <= a_max:
        return x
    return VehicleState(
        x.s,
        x.d,
        x.s_dot,
        x.d_dot,
        min(max(x.s_ddot, -a_max), a_max),
        min(max(x.d_ddot, -a_max), a_max),
    )


def project_position(x: VehicleState) -> tuple[float, float]:
    """(s, d) components of the state."""
    return (x.s, x.d)
