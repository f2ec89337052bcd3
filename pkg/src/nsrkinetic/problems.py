"""Initial/boundary data for the benchmark problems (all Maxwellian at t=0)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _backend as B

SOD_LEFT = (1.0, 0.0, 1.0)     # (rho, u1, T) for x -> -inf
SOD_RIGHT = (0.125, 0.0, 0.8)  # (rho, u1, T) for x -> +inf
SOD_SMOOTHING = 0.005


def _sin(a):
    return B.torch.sin(a) if B.is_torch(a) else np.sin(a)


def _logistic_blend(x, left, right, b):
    if B.is_torch(x):
        s = B.torch.sigmoid(x / b)
    else:
        s = 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x) / b))
    return (right - left) * s + left


def wave1d_ic(x):
    x = x[..., 0]
    two_pi = 2 * np.pi
    rho = 1 + 0.5 * _sin(two_pi * x)
    T = 1 + 0.5 * _sin(two_pi * x + 0.2)
    return rho, 0 * x, T


def sod1d_ic(x):
    x = x[..., 0]
    rho = _logistic_blend(x, SOD_LEFT[0], SOD_RIGHT[0], SOD_SMOOTHING)
    u1 = _logistic_blend(x, SOD_LEFT[1], SOD_RIGHT[1], SOD_SMOOTHING)
    T = _logistic_blend(x, SOD_LEFT[2], SOD_RIGHT[2], SOD_SMOOTHING)
    return rho, u1, T


def wave2d_ic(x):
    two_pi = 2 * np.pi
    rho = 1 + 0.5 * _sin(two_pi * x[..., 0]) * _sin(two_pi * x[..., 1])
    return rho, 0 * rho, 1 + 0 * rho


def wave2d_shifted_ic(x):
    two_pi = 2 * np.pi
    rho = 1 + 0.4 * _sin(two_pi * x[..., 0] + 0.3) * _sin(two_pi * (x[..., 1] + 0.4))
    return rho, 0 * rho, 1 + 0 * rho


@dataclass(frozen=True)
class ProblemSpec:
    """``ic`` maps points (..., dim) to (rho, u1, T) with u2 = u3 = 0."""

    name: str
    dim: int
    lower: tuple
    upper: tuple
    t_end: float
    boundary: str
    ic: Callable

    def macro_ic(self, x):
        rho, u1, T = self.ic(x)
        zero = 0 * u1
        return rho, B.stack([u1, zero, zero], -1), T

    def boundary_states(self):
        """Far-field (rho, u, T) on the (left, right) x-boundaries for Dirichlet problems."""
        if self.boundary != "dirichlet":
            return None
        (rl, ul, tl), (rr, ur, tr) = SOD_LEFT, SOD_RIGHT
        return (rl, (ul, 0.0, 0.0), tl), (rr, (ur, 0.0, 0.0), tr)


PROBLEMS = {
    "wave1d": ProblemSpec("wave1d", 1, (-0.5,), (0.5,), 0.1, "periodic", wave1d_ic),
    "sod1d": ProblemSpec("sod1d", 1, (-0.5,), (0.5,), 0.1, "dirichlet", sod1d_ic),
    "wave2d": ProblemSpec("wave2d", 2, (-0.5, -0.5), (0.5, 0.5), 0.1, "periodic", wave2d_ic),
    "wave2d_shifted": ProblemSpec("wave2d_shifted", 2, (-0.5, -0.5), (0.5, 0.5), 0.1,
                                  "periodic", wave2d_shifted_ic),
}


def get_problem(name: str) -> ProblemSpec:
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
