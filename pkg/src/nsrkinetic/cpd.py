"""Canonical polyadic (CP) third-order tensors.

Factors have shape (..., N_i, K); leading axes batch independent tensors,
which is how per-sample distributions are carried through the loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend as B
from .moments import MacroState, maxwellian_axis_factors, _check_state
from .velocity_grid import VelocityGrid

MATERIALIZE_LIMIT = 10 ** 6


@dataclass(frozen=True, eq=False)
class CpdTensor:
    P: object
    Q: object
    R: object

    def __post_init__(self):
        P, Q, R = self.P, self.Q, self.R
        if not (P.shape[-1] == Q.shape[-1] == R.shape[-1]):
            raise ValueError("factors must share the rank (column count)")
        if not (P.shape[:-2] == Q.shape[:-2] == R.shape[:-2]):
            raise ValueError("factors must share batch dimensions")

    @property
    def rank(self):
        return int(self.P.shape[-1])

    @property
    def dims(self):
        return (int(self.P.shape[-2]), int(self.Q.shape[-2]), int(self.R.shape[-2]))

    @property
    def batch_shape(self):
        return tuple(self.P.shape[:-2])

    @property
    def factors(self):
        return self.P, self.Q, self.R

    def __getitem__(self, idx):
        return CpdTensor(self.P[idx], self.Q[idx], self.R[idx])


def materialize(t: CpdTensor):
    n = int(np.prod(t.dims))
    if n > MATERIALIZE_LIMIT:
        raise ValueError(f"refusing to materialize {n} entries (limit {MATERIALIZE_LIMIT})")
    return B.einsum("...ir,...jr,...kr->...ijk", t.P, t.Q, t.R)


def cpd_add(a: CpdTensor, b: CpdTensor, sign: int = 1) -> CpdTensor:
    if a.dims != b.dims:
        raise ValueError(f"dimension mismatch {a.dims} vs {b.dims}")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return CpdTensor(B.concat([a.P, sign * b.P], -1),
                     B.concat([a.Q, b.Q], -1),
                     B.concat([a.R, b.R], -1))


def cpd_sum(terms, signs=None) -> CpdTensor:
    """Concatenate several CP tensors into one (ranks add)."""
    terms = list(terms)
    signs = [1] * len(terms) if signs is None else list(signs)
    dims = terms[0].dims
    for t in terms:
        if t.dims != dims:
            raise ValueError(f"dimension mismatch {dims} vs {t.dims}")
    return CpdTensor(B.concat([s * t.P for s, t in zip(signs, terms)], -1),
                     B.concat([t.Q for t in terms], -1),
                     B.concat([t.R for t in terms], -1))


def cpd_derivative(t: CpdTensor, dP, dQ, dR) -> CpdTensor:
    """Product rule: d⟦P,Q,R⟧ = ⟦[P',P,P], [Q,Q',Q], [R,R,R']⟧."""
    for a, b in ((t.P, dP), (t.Q, dQ), (t.R, dR)):
        if tuple(a.shape) != tuple(b.shape):
            raise ValueError(f"derivative factor shape {tuple(b.shape)} != {tuple(a.shape)}")
    return CpdTensor(B.concat([dP, t.P, t.P], -1),
                     B.concat([t.Q, dQ, t.Q], -1),
                     B.concat([t.R, t.R, dR], -1))


def gram_hadamard(t: CpdTensor):
    """H = (PᵀP)∘(QᵀQ)∘(RᵀR), shape (..., K, K)."""
    gp = B.einsum("...ir,...is->...rs", t.P, t.P)
    gq = B.einsum("...ir,...is->...rs", t.Q, t.Q)
    gr = B.einsum("...ir,...is->...rs", t.R, t.R)
    return gp * gq * gr


def cpd_fnorm_sq(t: CpdTensor):
    """Squared Frobenius norm from the factor Gram matrices only."""
    return gram_hadamard(t).sum((-2, -1))


def cpd_moments(t: CpdTensor, grid: VelocityGrid, i1: int, i2: int, i3: int):
    if t.dims != grid.shape:
        raise ValueError(f"tensor dims {t.dims} do not match grid {grid.shape}")
    parts = []
    for F, ax, e in zip(t.factors, grid.axes, (i1, i2, i3)):
        kern = B.as_like(ax.weights * ax.points ** e, F)
        parts.append(B.einsum("...ir,i->...r", F, kern))
    return (parts[0] * parts[1] * parts[2]).sum(-1)


def cpd_macro_vector(t: CpdTensor, grid: VelocityGrid):
    """(ρ, m₁, m₂, m₃, E₁, E₂, E₃) via per-axis weighted sums."""
    sums = []
    for F, ax in zip(t.factors, grid.axes):
        kern = np.stack([ax.weights * ax.points ** e for e in range(3)], axis=-1)
        sums.append(B.einsum("...ir,ie->...er", F, B.as_like(kern, F)))
    s1, s2, s3 = sums

    def mom(a, b, c):
        return (s1[..., a, :] * s2[..., b, :] * s3[..., c, :]).sum(-1)

    rho = mom(0, 0, 0)
    parts = [rho, mom(1, 0, 0), mom(0, 1, 0), mom(0, 0, 1),
             0.5 * mom(2, 0, 0), 0.5 * mom(0, 2, 0), 0.5 * mom(0, 0, 2)]
    return B.stack(parts, axis=-1)


def cpd_maxwellian_factors(rho, u, T, grid: VelocityGrid) -> CpdTensor:
    a, b, c = maxwellian_axis_factors(rho, u, T, grid)
    return CpdTensor(a[..., None], b[..., None], c[..., None])


def cpd_maxwellian(state: MacroState, grid: VelocityGrid) -> CpdTensor:
    """Rank-one Maxwellian; each factor carries ρ^{1/3}."""
    _check_state(state.rho, state.T)
    return cpd_maxwellian_factors(state.rho, np.asarray(state.u), state.T, grid)


def cpd_rank1_scale(t: CpdTensor, a, b, c) -> CpdTensor:
    """Element-wise division by the rank-one tensor a⊗b⊗c."""
    for F, s in zip(t.factors, (a, b, c)):
        if s.shape[-1] != F.shape[-2]:
            raise ValueError(f"scale length {s.shape[-1]} != factor rows {F.shape[-2]}")
    return CpdTensor(t.P / a[..., None], t.Q / b[..., None], t.R / c[..., None])


def cpd_axis_scale(t: CpdTensor, axis: int, vec) -> CpdTensor:
    """Multiply the tensor by a vector along one axis (rank unchanged)."""
    fs = list(t.factors)
    fs[axis] = fs[axis] * B.as_like(vec, fs[axis])[..., None]
    return CpdTensor(*fs)


def cpd_scale(t: CpdTensor, c) -> CpdTensor:
    if not B.is_torch(c) and np.ndim(c) == 0:
        return CpdTensor(c * t.P, t.Q, t.R)
    return CpdTensor(t.P * c[..., None, None], t.Q, t.R)
