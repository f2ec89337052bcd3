"""Macroscopic moments, Maxwellians and the BGK relaxation operator.

Array-level helpers work on numpy or torch arrays whose last axis is the
linear velocity index, so they batch over spatial samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend as B
from .velocity_grid import VelocityGrid

MAX_MOMENT_EXPONENT = 4


class UnphysicalStateError(ValueError):
    """Raised when a distribution has non-positive density or temperature."""


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    values: np.ndarray
    grid: VelocityGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.size != self.grid.n_v:
            raise ValueError(f"expected {self.grid.n_v} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("distribution values must be finite")
        object.__setattr__(self, "values", v)

    def __add__(self, other):
        return DiscreteDistribution(self.values + other.values, self.grid)

    def __sub__(self, other):
        return DiscreteDistribution(self.values - other.values, self.grid)

    def __mul__(self, a):
        return DiscreteDistribution(a * self.values, self.grid)

    __rmul__ = __mul__

    def as_tensor(self):
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True)
class MacroState:
    """Density, bulk velocity and temperature.

    ``E_dir`` holds the per-direction energies; when omitted they take their
    equilibrium values ½ρ(T + u_i²).
    """

    rho: float
    u: tuple = (0.0, 0.0, 0.0)
    T: float = 1.0
    E_dir: tuple | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "u", tuple(float(x) for x in np.broadcast_to(self.u, (3,))))
        if self.E_dir is None:
            e = tuple(0.5 * self.rho * (self.T + ui * ui) for ui in self.u)
            object.__setattr__(self, "E_dir", e)
        else:
            object.__setattr__(self, "E_dir", tuple(float(x) for x in self.E_dir))

    @property
    def m(self):
        return tuple(self.rho * ui for ui in self.u)

    @property
    def E(self):
        return float(sum(self.E_dir))


@dataclass(frozen=True)
class KineticConfig:
    """``discrete_equilibrium`` selects the moment-matching Maxwellian."""

    kn: float = 1.0
    tau: float | None = None
    discrete_equilibrium: bool = True

    def __post_init__(self):
        if not self.kn > 0:
            raise ValueError("Knudsen number must be positive")
        if self.tau is None:
            object.__setattr__(self, "tau", float(self.kn))
        if not self.tau > 0:
            raise ValueError("relaxation time must be positive")


# ---------------------------------------------------------------- array level

def macro_moments(values, grid: VelocityGrid):
    """Return (rho, m, E_dir) with shapes (...,), (..., 3), (..., 3)."""
    w = B.as_like(grid.weights, values)
    v = B.as_like(grid.points, values)
    fw = values * w
    rho = fw.sum(-1)
    m = fw @ v
    e_dir = 0.5 * (fw @ (v * v))
    return rho, m, e_dir


def macro_vector_dense(values, grid: VelocityGrid):
    """(ρ, m₁, m₂, m₃, E₁, E₂, E₃) along the last axis."""
    rho, m, e_dir = macro_moments(values, grid)
    return B.concat([rho[..., None], m, e_dir], axis=-1)


def primitive_variables(rho, m, e_dir):
    """(u, T) from conserved moments; T uses three velocity dimensions."""
    u = m / rho[..., None]
    energy = e_dir.sum(-1)
    T = (2.0 * energy / rho - (u * u).sum(-1)) / 3.0
    return u, T


def maxwellian_axis_factors(rho, u, T, grid: VelocityGrid):
    """Per-axis Maxwellian factors ρ^{1/3} (2πT)^{-1/2} exp(-(v_i-u_i)²/2T)."""
    ref = rho if B.is_torch(rho) else np.asarray(rho, dtype=float)
    rho = B.as_like(rho, ref)
    u = B.as_like(u, ref)
    T = B.as_like(T, ref)
    scale = rho ** (1.0 / 3.0) / B.sqrt(2.0 * np.pi * T)
    out = []
    for i, ax in enumerate(grid.axes):
        p = B.as_like(ax.points, ref)
        d = p - u[..., i, None]
        out.append(scale[..., None] * B.exp(-(d * d) / (2.0 * T[..., None])))
    return out


def maxwellian_values(rho, u, T, grid: VelocityGrid):
    """Dense Maxwellian samples, shape (..., N_v)."""
    a, b, c = maxwellian_axis_factors(rho, u, T, grid)
    full = a[..., :, None, None] * b[..., None, :, None] * c[..., None, None, :]
    return full.reshape(full.shape[:-3] + (grid.n_v,))


# φ = (1, v1, v2, v3, |v|²/2) written as sums of monomials (coef, exponents)
_PHI = [[(1.0, (0, 0, 0))], [(1.0, (1, 0, 0))], [(1.0, (0, 1, 0))], [(1.0, (0, 0, 1))],
        [(0.5, (2, 0, 0)), (0.5, (0, 2, 0)), (0.5, (0, 0, 2))]]


def _phi_products(p, q):
    out = {}
    for c1, e1 in _PHI[p]:
        for c2, e2 in _PHI[q]:
            e = tuple(a + b for a, b in zip(e1, e2))
            out[e] = out.get(e, 0.0) + c1 * c2
    return out


_PHI_PAIRS = {(p, q): _phi_products(p, q) for p in range(5) for q in range(5)}
_PHI_SINGLE = {p: {e: c for c, e in _PHI[p]} for p in range(5)}


def discrete_maxwellian_params(rho, m, energy, grid: VelocityGrid, tol=1e-14, max_iter=60):
    """Coefficients a of the equilibrium exp(a·(1, v, |v|²/2)) whose discrete
    moments (ρ, m, E) match the targets to round-off.

    Newton on the convex dual started from the closed-form Maxwellian, with
    per-sample backtracking.  The equilibrium is separable across axes, so
    every moment is a product of per-axis sums and a step costs O(N_axis).
    """
    rho = np.asarray(rho, float)
    batch = rho.shape
    target = np.concatenate([rho[..., None], np.asarray(m, float),
                             np.asarray(energy, float)[..., None]], -1).reshape(-1, 5)
    r0 = target[:, 0]
    u = target[:, 1:4] / r0[:, None]
    T = np.maximum((2 * target[:, 4] / r0 - (u * u).sum(1)) / 3, 1e-8)
    a = np.concatenate([(np.log(r0) - 1.5 * np.log(2 * np.pi * T)
                         - 0.5 * (u * u).sum(1) / T)[:, None], u / T[:, None], -1 / T[:, None]], 1)
    axes = [(ax.points, ax.weights) for ax in grid.axes]
    powers = [np.stack([p ** k for k in range(5)], 0) for p, _ in axes]

    def axis_sums(a):
        # S[i][:, k] = Σ_l ω_l v_l^k exp(a_i v_l + a4 v_l²/2); log-shifted for range safety
        sums, logs = [], np.zeros(len(a))
        for i, (p, w) in enumerate(axes):
            ex = a[:, 1 + i, None] * p + 0.5 * a[:, 4, None] * p * p
            top = ex.max(1)
            e = np.exp(ex - top[:, None]) * w
            sums.append(e @ powers[i].T)
            logs = logs + top
        return sums, logs

    def moment(sums, scale, exps):
        return scale * sums[0][:, exps[0]] * sums[1][:, exps[1]] * sums[2][:, exps[2]]

    def evaluate(a):
        sums, logs = axis_sums(a)
        scale = np.exp(np.clip(a[:, 0] + logs, -700, 700))
        mom = np.stack([sum(c * moment(sums, scale, e) for e, c in _PHI_SINGLE[p].items())
                        for p in range(5)], 1)
        return sums, scale, mom

    def dual(a):
        _, _, mom = evaluate(a)
        return mom[:, 0] - (a * target).sum(1)

    for _ in range(max_iter):
        sums, scale, mom = evaluate(a)
        res = mom - target
        size = np.abs(target) + np.abs(mom[:, :1])
        if np.all(np.abs(res) <= tol * size):
            break
        J = np.empty((len(a), 5, 5))
        for (p, q), terms in _PHI_PAIRS.items():
            J[:, p, q] = sum(c * moment(sums, scale, e) for e, c in terms.items())
        try:
            step = np.linalg.solve(J, res[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise UnphysicalStateError("moments are not attainable by an equilibrium on this "
                                       "velocity grid (temperature below grid resolution?)") from None
        d0 = dual(a)
        t = np.ones(len(a))
        for _ in range(40):
            bad = dual(a - t[:, None] * step) > d0 + 1e-13 * np.abs(d0)
            if not bad.any():
                break
            t = np.where(bad, 0.5 * t, t)
        a = a - t[:, None] * step
    else:
        res = evaluate(a)[2] - target
        if not np.all(np.abs(res) <= 1e-9 * (np.abs(target) + np.abs(target[:, :1]))):
            raise UnphysicalStateError("equilibrium moment matching did not converge")
    return a.reshape(batch + (5,))


def equilibrium_axis_factors(a, grid: VelocityGrid):
    """Per-axis factors of exp(a·(1, v, |v|²/2)); the constant is split evenly."""
    out = []
    for i, ax in enumerate(grid.axes):
        p = ax.points
        out.append(np.exp(a[..., 0, None] / 3.0 + a[..., 1 + i, None] * p
                          + 0.5 * a[..., 4, None] * p * p))
    return out


def discrete_maxwellian_values(rho, m, energy, grid: VelocityGrid):
    """Dense moment-matching equilibrium, shape (..., N_v)."""
    a = discrete_maxwellian_params(rho, m, energy, grid)
    f1, f2, f3 = equilibrium_axis_factors(a, grid)
    full = f1[..., :, None, None] * f2[..., None, :, None] * f3[..., None, None, :]
    return full.reshape(full.shape[:-3] + (grid.n_v,))


def bgk_rhs(values, grid: VelocityGrid, tau: float, discrete: bool = False):
    """(M[f] - f)/τ with M built from the discrete moments of f.

    ``discrete=True`` uses the moment-matching equilibrium so that the
    operator conserves mass, momentum and energy to round-off.
    """
    rho, m, e_dir = macro_moments(values, grid)
    if discrete:
        M = discrete_maxwellian_values(rho, m, e_dir.sum(-1), grid)
    else:
        u, T = primitive_variables(rho, m, e_dir)
        M = maxwellian_values(rho, u, T, grid)
    return (M - values) / tau


def _check_state(rho, T):
    if not rho > 0:
        raise UnphysicalStateError(f"non-positive density {rho}")
    if T is not None and not T > 0:
        raise UnphysicalStateError(f"non-positive temperature {T}")


# -------------------------------------------------------------- object level

def moments_from_ddf(f: DiscreteDistribution) -> MacroState:
    rho, m, e_dir = macro_moments(f.values, f.grid)
    _check_state(rho, None)
    u, T = primitive_variables(np.asarray(rho), m, e_dir)
    _check_state(rho, T)
    return MacroState(float(rho), tuple(u), float(T), tuple(e_dir))


def maxwellian_ddf(state: MacroState, grid: VelocityGrid) -> DiscreteDistribution:
    _check_state(state.rho, state.T)
    vals = maxwellian_values(state.rho, np.asarray(state.u), state.T, grid)
    return DiscreteDistribution(vals, grid)


def bgk_collision(f: DiscreteDistribution, cfg: KineticConfig) -> DiscreteDistribution:
    moments_from_ddf(f)  # validates ρ, T
    vals = bgk_rhs(f.values, f.grid, cfg.tau, discrete=cfg.discrete_equilibrium)
    return DiscreteDistribution(vals, f.grid)


def moment_tensor(f: DiscreteDistribution, i1: int, i2: int, i3: int) -> float:
    exps = (i1, i2, i3)
    if any(e < 0 or e > MAX_MOMENT_EXPONENT for e in exps):
        raise ValueError(f"moment exponents must lie in [0, {MAX_MOMENT_EXPONENT}]")
    v = f.grid.points
    mono = v[:, 0] ** i1 * v[:, 1] ** i2 * v[:, 2] ** i3
    return float(np.sum(f.grid.weights * mono * f.values))
