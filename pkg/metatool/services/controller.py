"""Quadratic free-energy control model of the user block.

The control signal u = (dx, dy, dpsi) moves the hand; through the lever arm
r = tip - hand it moves the tip by G u with G = [I | rot90(r)]. The free energy
of a tip error e is

    F(u) = |G u - e|^2 / (2 sigma_eff^2) + u^T P u / 2,
    sigma_eff^2 = sigma_0^2 + sigma_act^2 |r|^2,

and its Hessian in u is the control precision whose Gaussian entropy sets
control confidence.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from ..core.errors import ValidationError, require
from ..types import FloatArray, Pose
from .confidence import Channel, ConfidenceScore, squash_to_confidence
from .toyworld import ToolSpec, forward_kinematics

logger = logging.getLogger(__name__)

CONTROL_DIM = 3
SYMMETRY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ControllerParams:
    """Observation noise (m), execution noise (rad) and prior precision of the control signal."""

    obs_noise: float = 1.0
    bend_noise: float = 0.05
    prior_precision: Any = None

    def __post_init__(self) -> None:
        prior = np.eye(CONTROL_DIM) if self.prior_precision is None else np.array(self.prior_precision, dtype=float)
        prior.setflags(write=False)
        object.__setattr__(self, "prior_precision", prior)
        self.validate()

    def validate(self) -> "ControllerParams":
        require(self.obs_noise > 0, "controller.obs_noise must be > 0")
        require(self.bend_noise >= 0, "controller.bend_noise must be >= 0")
        check_spd(self.prior_precision, "controller.prior_precision")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "obs_noise": self.obs_noise,
            "bend_noise": self.bend_noise,
            "prior_precision": self.prior_precision.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ControllerParams":
        return cls(**data)


def check_spd(matrix: Any, name: str = "matrix") -> FloatArray:
    """Validate a symmetric positive-definite 3x3 matrix."""
    m = np.asarray(matrix, dtype=float)
    require(m.shape == (CONTROL_DIM, CONTROL_DIM), f"{name} must be {CONTROL_DIM}x{CONTROL_DIM}")
    require(bool(np.allclose(m, m.T, atol=SYMMETRY_TOL, rtol=0.0)), f"{name} must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"{name} must be positive definite") from exc
    return m


def lever_arm(tool: ToolSpec, hand: Pose = (0.0, 0.0, 0.0)) -> FloatArray:
    """Tip minus hand position at the given hand heading."""
    return forward_kinematics(tool, (0.0, 0.0, hand[2]))


def control_jacobian(r: FloatArray) -> FloatArray:
    """G = [I_2 | rot90(r)]: tip displacement per unit (dx, dy, dpsi)."""
    return np.array([[1.0, 0.0, -r[1]],
                     [0.0, 1.0, r[0]]])


def effective_variance(r: FloatArray, params: ControllerParams) -> float:
    return params.obs_noise ** 2 + params.bend_noise ** 2 * float(r @ r)


def free_energy(u: Any, error: Any, tool: ToolSpec, params: ControllerParams,
                hand: Pose = (0.0, 0.0, 0.0)) -> float:
    """Quadratic free energy of control signal ``u`` against tip error ``error``."""
    u = np.asarray(u, dtype=float)
    e = np.asarray(error, dtype=float)
    r = lever_arm(tool, hand)
    resid = control_jacobian(r) @ u - e
    return float(resid @ resid / (2.0 * effective_variance(r, params)) + 0.5 * u @ params.prior_precision @ u)


def control_precision(tool: ToolSpec, params: ControllerParams,
                      hand: Pose = (0.0, 0.0, 0.0)) -> FloatArray:
    """Exact Hessian of :func:`free_energy` in u."""
    r = lever_arm(tool, hand)
    g = control_jacobian(r)
    precision = g.T @ g / effective_variance(r, params) + params.prior_precision
    return 0.5 * (precision + precision.T)


def gaussian_entropy(precision: Any) -> float:
    """Entropy (nats) of a 3-D Gaussian with the given precision matrix."""
    m = np.asarray(precision, dtype=float)
    require(m.shape == (CONTROL_DIM, CONTROL_DIM), "control precision must be 3x3")
    require(bool(np.allclose(m, m.T, atol=SYMMETRY_TOL, rtol=0.0)), "control precision must be symmetric")
    sign, logdet = np.linalg.slogdet(m)
    if sign <= 0:
        raise ValidationError("control precision has non-positive determinant")
    return 0.5 * CONTROL_DIM * (1.0 + math.log(2.0 * math.pi)) - 0.5 * float(logdet)


def bare_hand_entropy(params: ControllerParams) -> float:
    """Control entropy with a zero-length tool; the default reference of the control channel."""
    bare = ToolSpec((0.0,), (0.0,), id="bare-hand")
    return gaussian_entropy(control_precision(bare, params))


def control_confidence(precision: Any, reference: float, scale: float) -> ConfidenceScore:
    """Control-channel confidence from the entropy of the control posterior."""
    h = gaussian_entropy(precision)
    return ConfidenceScore(Channel.CONTROL, h, squash_to_confidence(h, reference, scale))


def tool_control_confidence(tool: ToolSpec, params: ControllerParams, scale: float,
                            reference: Optional[float] = None,
                            hand: Pose = (0.0, 0.0, 0.0)) -> ConfidenceScore:
    """Control confidence of holding ``tool`` at ``hand``; reference defaults to the bare hand."""
    ref = bare_hand_entropy(params) if reference is None else reference
    return control_confidence(control_precision(tool, params, hand), ref, scale)
