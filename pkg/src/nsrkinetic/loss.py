"""Residuals and adaptive-weight losses for the split ansatz.

Per-entry weights come from trainable raw parameters r (w = r²). For the
distribution loss the weight is the rank-one product w = w¹⊗w²⊗w³ and the
denominator is the rank-one Π_i (w^(i) + ε^{1/3}). It is separable, so the
CPD form reduces to a factor rescaling followed by a Gram-matrix norm and
never touches the N_v entries of the residual; the dense form uses the same
denominator, so both agree to round-off.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .cpd import (CpdTensor, cpd_fnorm_sq, cpd_macro_vector,
                  cpd_maxwellian_factors, cpd_rank1_scale, cpd_sum)
from .moments import macro_vector_dense, maxwellian_values
from .neural_ansatz import DTYPE, AnsatzOutput, SplitAnsatz, ansatz_forward
from .velocity_grid import VelocityGrid

SETS = ("ic", "bc", "pde")
_FLOOR = 1e-8     # lower bound on ρ, T when building the BGK target inside the loss


@dataclass(frozen=True)
class SamplePlan:
    n_ic: int = 100
    n_bc: int = 200
    n_pde: int = 500
    seed: int = 0

    def __post_init__(self):
        if min(self.n_ic, self.n_bc, self.n_pde) < 1:
            raise ValueError("sample counts must be at least 1")


class AdaptiveWeights:
    """Raw trainable weights per loss set: three per-axis vectors for the
    distribution loss and a 7-vector for the macroscopic loss."""

    def __init__(self, grid_shape, eps: float = 1e-6, init: float = 1.0):
        if not eps > 0:
            raise ValueError("epsilon must be positive")
        self.eps = float(eps)
        self.grid_shape = tuple(grid_shape)
        self.raw = {}
        for s in SETS:
            for i, n in enumerate(self.grid_shape):
                self.raw[f"{s}_f{i + 1}"] = torch.full((n,), init, dtype=DTYPE, requires_grad=True)
            self.raw[f"{s}_c"] = torch.full((7,), init, dtype=DTYPE, requires_grad=True)

    @property
    def params(self):
        return list(self.raw.values())

    def f_weights(self, which):
        return [self.raw[f"{which}_f{i + 1}"] ** 2 for i in range(3)]

    def c_weights(self, which):
        return self.raw[f"{which}_c"] ** 2

    def state(self):
        return {f"w_{k}": v for k, v in self.raw.items()}

    def load_state(self, tensors):
        with torch.no_grad():
            for k, v in self.raw.items():
                v.copy_(tensors[f"w_{k}"])


def _check_which(which):
    if which not in SETS:
        raise ValueError(f"loss set must be one of {SETS}, got {which!r}")


def _log_term(w1, w2, w3):
    W = w1[:, None, None] * w2[None, :, None] * w3[None, None, :]
    return torch.log1p(W).sum()


def _denominators(weights: AdaptiveWeights, which):
    w = weights.f_weights(which)
    e3 = weights.eps ** (1.0 / 3.0)
    return w, [wi + e3 for wi in w]


def adaptive_loss_f(terms, weights: AdaptiveWeights, which: str):
    """mean_s Σ_l terms²/D_l + Σ_l log(1 + w_l), terms (S, N_v)."""
    _check_which(which)
    w, d = _denominators(weights, which)
    D = (d[0][:, None, None] * d[1][None, :, None] * d[2][None, None, :]).reshape(-1)
    return (terms * terms / D).sum(-1).mean() + _log_term(*w)


def adaptive_loss_f_cpd(residual: CpdTensor, weights: AdaptiveWeights, which: str):
    """Same value as adaptive_loss_f on the materialized residual."""
    _check_which(which)
    w, d = _denominators(weights, which)
    scaled = cpd_rank1_scale(residual, *[torch.sqrt(di) for di in d])
    return cpd_fnorm_sq(scaled).mean() + _log_term(*w)


def adaptive_loss_C(terms, weights: AdaptiveWeights, which: str):
    """mean_s Σ_k terms²/(w_k + ε) + Σ_k log(1 + w_k), terms (S, 7)."""
    _check_which(which)
    w = weights.c_weights(which)
    return (terms * terms / (w + weights.eps)).sum(-1).mean() + torch.log1p(w).sum()


def macro_vector(g, grid: VelocityGrid):
    """(ρ, m₁, m₂, m₃, E₁, E₂, E₃) of a dense array (..., N_v) or a CpdTensor."""
    if isinstance(g, CpdTensor):
        return cpd_macro_vector(g, grid)
    return macro_vector_dense(g, grid)


# ------------------------------------------------------------------- residual

@dataclass
class CollisionModel:
    """``kind`` is bgk, fast (needs a SpectralOperator) or reduced (needs a ReducedKernel)."""

    kind: str = "bgk"
    tau: float = 1.0
    operator: object = None

    def __post_init__(self):
        if self.kind not in ("bgk", "fast", "reduced"):
            raise ValueError(f"unknown collision model {self.kind!r}")
        if self.kind != "bgk" and self.operator is None:
            raise ValueError(f"{self.kind} collision needs an operator")


def _bgk_state(mv):
    rho = torch.clamp(mv[..., 0], min=_FLOOR)
    u = mv[..., 1:4] / rho[..., None]
    T = (2 * mv[..., 4:7].sum(-1) / rho - (u * u).sum(-1)) / 3
    return rho, u, torch.clamp(T, min=_FLOOR)


def dense_collision(f, grid: VelocityGrid, model: CollisionModel):
    if model.kind == "bgk":
        rho, u, T = _bgk_state(macro_vector_dense(f, grid))
        return (maxwellian_values(rho, u, T, grid) - f) / model.tau
    if model.kind == "fast":
        from .spectral_collision import fast_collision_values
        return fast_collision_values(f, model.operator)
    from .reduced_collision import reduced_collision_values
    return reduced_collision_values(f, model.operator)


def _velocity(grid, axis, ref):
    return torch.tensor(np.array(grid.axes[axis].points), dtype=ref.dtype)


def _cpd_residual(out: AnsatzOutput, grid: VelocityGrid, dim: int, tau: float) -> CpdTensor:
    A = out.f.factors
    dt = out.df[dim]
    dx = [out.df[k] for k in range(dim)]
    v = [_velocity(grid, a, A[0]) for a in range(dim)]
    # x-direction transport on axis 1 merges with ∂t of P and the BGK loss term
    blocks = [CpdTensor(dt[0] + v[0][:, None] * dx[0][0] + A[0] / tau, A[1], A[2])]
    q_block = dt[1] if dim == 1 else dt[1] + v[1][:, None] * dx[1][1]
    blocks.append(CpdTensor(A[0], q_block, A[2]))
    blocks.append(CpdTensor(A[0], A[1], dt[2]))
    vP = v[0][:, None] * A[0]
    blocks.append(CpdTensor(vP, dx[0][1], A[2]))
    blocks.append(CpdTensor(vP, A[1], dx[0][2]))
    if dim == 2:
        vQ = v[1][:, None] * A[1]
        blocks.append(CpdTensor(dx[1][0], vQ, A[2]))
        blocks.append(CpdTensor(A[0], vQ, dx[1][2]))
    rho, u, T = _bgk_state(cpd_macro_vector(out.f, grid))
    M = cpd_maxwellian_factors(rho, u, T, grid)
    blocks.append(CpdTensor(M.P / tau, M.Q, M.R))
    return cpd_sum(blocks, [1] * (len(blocks) - 1) + [-1])


def residual(ansatz: SplitAnsatz, grid: VelocityGrid, model: CollisionModel, x, t):
    """r = ∂f/∂t + v·∇ₓf − Q[f] at the rows of (x, t).

    Dense mode returns (S, N_v); CPD mode returns a CpdTensor and supports BGK only.
    """
    if ansatz.mode == "cpd" and model.kind != "bgk":
        raise ValueError("CPD-mode residual supports only the BGK collision model")
    out = ansatz_forward(ansatz, grid, x, t, with_jacobian=True)
    return residual_from_output(out, grid, model, ansatz.dim)


def residual_from_output(out: AnsatzOutput, grid: VelocityGrid, model: CollisionModel, dim: int):
    if isinstance(out.f, CpdTensor):
        return _cpd_residual(out, grid, dim, model.tau)
    r = out.df[dim]
    for a in range(dim):
        r = r + torch.tensor(grid.points[:, a], dtype=DTYPE) * out.df[a]
    return r - dense_collision(out.f, grid, model)


# ---------------------------------------------------------------- total loss

@dataclass
class SampleSet:
    """Rows are (x₁, …, x_dim, t). ``bc_a``/``bc_b`` are matched boundary pairs:
    opposite faces at equal remaining coordinates for periodic problems, the
    lower/upper x faces for Dirichlet ones."""

    ic: torch.Tensor
    bc_a: torch.Tensor
    bc_b: torch.Tensor
    pde: torch.Tensor


def _split(z, dim):
    return z[:, :dim], z[:, dim]


def _maxwellian_target(rho, u, T, grid, mode):
    if mode == "cpd":
        return cpd_maxwellian_factors(rho, u, T, grid)
    return maxwellian_values(rho, u, T, grid)


def _diff(a, b):
    if isinstance(a, CpdTensor):
        return cpd_sum([a, b], [1, -1])
    return a - b


def _cat_batch(a, b):
    if isinstance(a, CpdTensor):
        # ranks may differ: pad the lower-rank side with zero columns
        k = max(a.rank, b.rank)

        def pad(t):
            if t.rank == k:
                return t
            z = [torch.zeros(F.shape[:-1] + (k - t.rank,), dtype=F.dtype) for F in t.factors]
            return CpdTensor(*[torch.cat([F, zz], -1) for F, zz in zip(t.factors, z)])
        a, b = pad(a), pad(b)
        return CpdTensor(*[torch.cat([p, q], 0) for p, q in zip(a.factors, b.factors)])
    return torch.cat([a, b], 0)


def _f_loss(g, weights, which):
    if isinstance(g, CpdTensor):
        return adaptive_loss_f_cpd(g, weights, which)
    return adaptive_loss_f(g, weights, which)


def total_loss(ansatz: SplitAnsatz, weights: AdaptiveWeights, samples: SampleSet,
               problem, grid: VelocityGrid, model: CollisionModel):
    """Σ over {IC, BC, PDE} of the distribution and macroscopic losses.

    Returns (total, parts) with parts keyed ic_f, ic_c, bc_f, bc_c, pde_f, pde_c.
    """
    dim = ansatz.dim
    parts = {}

    x0, t0 = _split(samples.ic, dim)
    f0 = ansatz_forward(ansatz, grid, x0, t0).f
    rho, u, T = problem.macro_ic(x0)
    d_ic = _diff(f0, _maxwellian_target(rho, u, T, grid, ansatz.mode))

    xa, ta = _split(samples.bc_a, dim)
    xb, tb = _split(samples.bc_b, dim)
    fa = ansatz_forward(ansatz, grid, xa, ta).f
    fb = ansatz_forward(ansatz, grid, xb, tb).f
    states = problem.boundary_states()
    if states is None:
        d_bc = _diff(fa, fb)
    else:
        targets = []
        for (r, uu, TT), n in zip(states, (len(xa), len(xb))):
            rr = torch.full((n,), float(r), dtype=DTYPE)
            ut = torch.tensor(uu, dtype=DTYPE).expand(n, 3)
            Tv = torch.full((n,), float(TT), dtype=DTYPE)
            targets.append(_maxwellian_target(rr, ut, Tv, grid, ansatz.mode))
        d_bc = _cat_batch(_diff(fa, targets[0]), _diff(fb, targets[1]))

    xp, tp = _split(samples.pde, dim)
    r = residual(ansatz, grid, model, xp, tp)

    for name, g in (("ic", d_ic), ("bc", d_bc), ("pde", r)):
        parts[f"{name}_f"] = _f_loss(g, weights, name)
        parts[f"{name}_c"] = adaptive_loss_C(macro_vector(g, grid), weights, name)
    total = sum(parts.values())
    return total, parts
