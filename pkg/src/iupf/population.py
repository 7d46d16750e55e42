"""Driving styles, empirical population measures, mean-field drift, and the
Wasserstein-2 distance between vehicle populations."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dynamics import VehicleState
from .errors import InvalidParameterError

__all__ = [
    "STYLE_LABELS",
    "DrivingStyle",
    "StyleParameters",
    "Vehicle",
    "PopulationMeasure",
    "KernelConfig",
    "style_defaults",
    "partition_by_style",
    "wasserstein2",
    "mean_field_drift",
]

STYLE_LABELS = ("conservative", "aggressive", "cooperative")

_WEIGHT_TOL = 1e-12

# Amplification factors per label. Conservative drivers see risk amplified and
# benefit damped; aggressive drivers the opposite; cooperative sits between.
_ALPHA_B = {"conservative": 0.6, "cooperative": 1.0, "aggressive": 1.4}
_ALPHA_R = {"conservative": 1.4, "cooperative": 1.0, "aggressive": 0.7}
# Decay lengths shared across styles: long-range benefit, short-range risk.
_LAMBDA_B = 155.0
_LAMBDA_R = 8.0
_LANE_WIDTH = 3.75


@dataclass(frozen=True)
class DrivingStyle:
    """Label plus continuous traits (each in [0, 1])."""

    label: str
    aggressiveness: float = 0.5
    reaction_time: float = 0.5
    social_awareness: float = 0.5

    def __post_init__(self):
        if self.label not in STYLE_LABELS:
            raise InvalidParameterError(f"unknown style label {self.label!r}")
        for name in ("aggressiveness", "reaction_time", "social_awareness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidParameterError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class StyleParameters:
    """Field amplification/decay/spread parameters plus control-cost weights."""

    alpha_B: float
    alpha_R: float
    lambda_B: float
    lambda_R: float
    sigma_B: float
    sigma_R: float
    r_s: float
    r_d: float

    def __post_init__(self):
        for name in ("alpha_B", "alpha_R", "lambda_B", "lambda_R", "sigma_B", "sigma_R", "r_s", "r_d"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be strictly positive")


def style_defaults(label: str, aggressiveness: float = 0.5) -> StyleParameters:
    """Documented default parameter table for the three style labels.

    Control-cost weights scale down with the aggressiveness trait so more
    aggressive drivers tolerate larger control effort.
    """
    if label not in STYLE_LABELS:
        raise InvalidParameterError(f"unknown style label {label!r}")
    if not 0.0 <= aggressiveness <= 1.0:
        raise InvalidParameterError("aggressiveness outside [0, 1]")
    r = 1.0 * (1.0 - 0.5 * aggressiveness)
    return StyleParameters(
        alpha_B=_ALPHA_B[label],
        alpha_R=_ALPHA_R[label],
        lambda_B=_LAMBDA_B,
        lambda_R=_LAMBDA_R,
        sigma_B=_LANE_WIDTH,
        sigma_R=_LANE_WIDTH,
        r_s=r,
        r_d=r,
    )


@dataclass(frozen=True)
class Vehicle:
    id: str
    state: VehicleState
    style: DrivingStyle
    params: StyleParameters
    is_host: bool = False


@dataclass(frozen=True)
class PopulationMeasure:
    """Weighted atoms (state, weight, style); weights sum to one.

    An empty measure is the zero-source marker used when a style has no
    vehicles after exclusion.
    """

    atoms: tuple = dc_field(default=())

    def __post_init__(self):
        if self.atoms:
            w = np.array([a[1] for a in self.atoms])
            if np.any(w < 0) or abs(w.sum() - 1.0) > _WEIGHT_TOL:
                raise InvalidParameterError("weights must be nonnegative and sum to 1")

    @classmethod
    def from_states(cls, states, styles=None) -> "PopulationMeasure":
        """Uniform measure over the given states."""
        states = list(states)
        if not states:
            return cls(())
        w = 1.0 / len(states)
        if styles is None:
            styles = [None] * len(states)
        return cls(tuple((x, w, th) for x, th in zip(states, styles)))

    def __len__(self) -> int:
        return len(self.atoms)

    def is_empty(self) -> bool:
        return not self.atoms

    def state_matrix(self) -> np.ndarray:
        """(n, 6) array of atom states."""
        return np.array([a[0].as_array() for a in self.atoms]).reshape(len(self.atoms), 6)

    def weights(self) -> np.ndarray:
        return np.array([a[1] for a in self.atoms])


def partition_by_style(vehicles, exclude_id=None) -> dict:
    """Split vehicles into one renormalized sub-measure per style label."""
    groups: dict[str, list] = {label: [] for label in STYLE_LABELS}
    remaining = 0
    for v in vehicles:
        if exclude_id is not None and v.id == exclude_id:
            continue
        groups[v.style.label].append(v)
        remaining += 1
    if remaining == 0 and exclude_id is None:
        raise InvalidParameterError("cannot partition an empty vehicle list")
    out = {}
    for label, group in groups.items():
        if group:
            w = 1.0 / len(group)
            out[label] = PopulationMeasure(tuple((v.state, w, v.style) for v in group))
        else:
            out[label] = PopulationMeasure(())
    return out


def wasserstein2(m1: PopulationMeasure, m2: PopulationMeasure) -> float:
    """Exact W2 between two uniform measures with equal atom counts.

    Solved as a minimum-cost perfect matching on squared Euclidean ground
    cost in the 6-dimensional state space.
    """
    if len(m1) != len(m2):
        raise InvalidParameterError(
            f"measures must have equal atom counts ({len(m1)} vs {len(m2)})"
        )
    if m1.is_empty():
        return 0.0
    n = len(m1)
    for m in (m1, m2):
        if np.any(np.abs(m.weights() - 1.0 / n) > _WEIGHT_TOL):
            raise InvalidParameterError("wasserstein2 requires uniform weights")
    x = m1.state_matrix()
    y = m2.state_matrix()
    diff = x[:, None, :] - y[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].sum() / n))


@dataclass(frozen=True)
class KernelConfig:
    """Interaction kernel for the mean-field drift term.

    By default the gain is zero and all interaction flows through the unified
    potential in the running cost. A positive gain adds an exponential
    repulsion in the velocity components.
    """

    gain: float = 0.0
    decay_by_style: dict = dc_field(default_factory=lambda: {label: _LAMBDA_R for label in STYLE_LABELS})


def mean_field_drift(x: VehicleState, measures_by_style: dict, kernel_config: KernelConfig) -> np.ndarray:
    """Aggregate kernel drift sum over all style sub-measures (6-vector)."""
    drift = np.zeros(6)
    if kernel_config.gain == 0.0:
        return drift
    p = np.array(x.position())
    for label, measure in measures_by_style.items():
        lam = kernel_config.decay_by_style.get(label, _LAMBDA_R)
        for atom_state, weight, _style in measure.atoms:
            delta = p - np.array(atom_state.position())
            r = float(np.linalg.norm(delta))
            if r < 1e-12:
                continue  # coincident atoms exert no directed push
            push = kernel_config.gain * np.exp(-r / lam) * (delta / r)
            drift[2] += weight * push[0]
            drift[3] += weight * push[1]
    return drift
