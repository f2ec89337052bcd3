"""Sine MLPs with multi-scale input and the Maxwellian-split ansatz.

The split ansatz is f = M^eq + C·√M^eq·f̃, where one network gives
(ρ̃, ũ, T̃) and a second gives f̃. M^eq = ρ̃ (πT̃)^{-3/2} exp(-|v-ũ|²/T̃), so
T̃ plays the role of 2T. In CPD mode the second network outputs the factor
matrices of a rank-K tensor, and f is a rank-(K+1) CpdTensor.

Input derivatives ∂/∂(x, t) are propagated analytically layer by layer. The
propagation is built from torch ops, so losses that contain these derivatives
can be differentiated in reverse mode with respect to the parameters.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import torch

from .cpd import CpdTensor
from .velocity_grid import VelocityGrid

DTYPE = torch.float64
POSITIVE_RANGE = (1e-3, 1e3)


@dataclass(frozen=True)
class ScaleSet:
    values: tuple = (1.0, 4.0, 16.0)
    time_scale: float = 1.0     # t enters the network as time_scale * t

    def __post_init__(self):
        if not self.time_scale > 0:
            raise ValueError("time_scale must be positive")
        object.__setattr__(self, "time_scale", float(self.time_scale))
        v = tuple(float(c) for c in self.values)
        if not v:
            raise ValueError("need at least one input scale")
        if any(c <= 0 for c in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("scales must be positive and strictly increasing")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


class Mlp:
    """Fully connected net: sin(ω·(W h + b)) on hidden layers, linear output."""

    def __init__(self, widths, omega: float = 30.0, seed: int | None = 0, init: str = "sine"):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"invalid layer widths {widths}")
        self.widths = widths
        self.omega = float(omega)
        gen = torch.Generator().manual_seed(0 if seed is None else int(seed))
        self.params = []
        for l, (m_in, m_out) in enumerate(zip(widths[:-1], widths[1:])):
            if init == "zeros":
                bound = 0.0
            elif l == 0:
                bound = 1.0 / m_in
            else:
                bound = math.sqrt(6.0 / m_in) / self.omega
            W = (torch.rand(m_out, m_in, generator=gen, dtype=DTYPE) * 2 - 1) * bound
            b = (torch.rand(m_out, generator=gen, dtype=DTYPE) * 2 - 1) * bound
            self.params += [W.requires_grad_(), b.requires_grad_()]

    @property
    def layers(self):
        return [(self.params[2 * i], self.params[2 * i + 1]) for i in range(len(self.widths) - 1)]

    @property
    def n_params(self):
        return sum(p.numel() for p in self.params)

    def shapes(self):
        return [list(p.shape) for p in self.params]

    def set_layers(self, layers):
        for (W, b), (W0, b0) in zip(layers, self.layers):
            with torch.no_grad():
                W0.copy_(torch.as_tensor(W, dtype=DTYPE))
                b0.copy_(torch.as_tensor(b, dtype=DTYPE))


def _inputs(scales: ScaleSet, x, t):
    x = torch.as_tensor(x, dtype=DTYPE)
    t = torch.as_tensor(t, dtype=DTYPE)
    if x.ndim == 1:
        x = x[:, None]
    if t.ndim == 1:
        t = t[:, None]
    if x.shape[0] != t.shape[0]:
        raise ValueError(f"x has {x.shape[0]} rows but t has {t.shape[0]}")
    z = torch.cat([x, scales.time_scale * t], -1)
    return z, torch.cat([c * z for c in scales.values], -1)


def _check_input(net: Mlp, scales: ScaleSet, z):
    if len(scales) * z.shape[-1] != net.widths[0]:
        raise ValueError(f"network expects {net.widths[0]} inputs, got "
                         f"{len(scales)} scales x {z.shape[-1]} coordinates")


def forward(net: Mlp, scales: ScaleSet, x, t):
    """Network output for rows of (x, t); x is (B, dim), t is (B,) or (B, 1)."""
    z, h = _inputs(scales, x, t)
    _check_input(net, scales, z)
    layers = net.layers
    for l, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if l < len(layers) - 1:
            h = torch.sin(net.omega * h)
    return h


def forward_with_input_jacobian(net: Mlp, scales: ScaleSet, x, t):
    """(output (B, m_L), ∂output/∂(x, t) (B, m_L, dim + 1))."""
    z, h = _inputs(scales, x, t)
    _check_input(net, scales, z)
    d = z.shape[-1]
    eye = torch.eye(d, dtype=DTYPE)
    eye[-1, -1] = scales.time_scale
    J = torch.cat([c * eye for c in scales.values], 0)          # (m0, d), batch-free
    layers = net.layers
    for l, (W, b) in enumerate(layers):
        h = h @ W.T + b
        J = W @ J if J.ndim == 2 else torch.einsum("oi,bid->bod", W, J)
        if l < len(layers) - 1:
            s = net.omega * h
            J = (net.omega * torch.cos(s))[..., None] * J
            h = torch.sin(s)
    if J.ndim == 2:
        J = J.expand(h.shape[0], *J.shape)
    return h, J


# -------------------------------------------------------------- split ansatz

@dataclass
class SplitAnsatz:
    nn1: Mlp
    nn2: Mlp
    scales: ScaleSet
    grid_shape: tuple
    dim: int
    C: float = 0.1
    mode: str = "cpd"
    rank: int = 8

    @property
    def params(self):
        return self.nn1.params + self.nn2.params

    def architecture(self):
        return {"nn1": self.nn1.widths, "nn2": self.nn2.widths, "omega": self.nn1.omega,
                "scales": list(self.scales.values),
                "time_scale": self.scales.time_scale, "grid_shape": list(self.grid_shape),
                "dim": self.dim, "C": self.C, "mode": self.mode, "rank": self.rank}


def nn2_width(mode, rank, grid_shape):
    return int(np.prod(grid_shape)) if mode == "dense" else rank * int(sum(grid_shape))


def build_split_ansatz(dim: int, grid: VelocityGrid, width: int = 80, depth: int = 5,
                       mode: str = "cpd", rank: int = 8, C: float = 0.1,
                       scales: ScaleSet = ScaleSet(), omega: float = 30.0,
                       seed: int = 0, eq_state: tuple | None = None,
                       head_scale: float = 1.0) -> SplitAnsatz:
    """``depth`` hidden layers of ``width`` neurons in each network.

    ``head_scale`` multiplies the initial output layers of both networks.
    ``eq_state`` = (rho, T) sets nn1's output bias so the initial equilibrium
    sits near that uniform state.
    """
    if mode not in ("dense", "cpd"):
        raise ValueError(f"unknown ansatz mode {mode!r}")
    if mode == "cpd" and rank < 1:
        raise ValueError("CPD rank must be positive")
    m0 = len(scales) * (dim + 1)
    hidden = [width] * depth
    nn1 = Mlp([m0] + hidden + [5], omega, seed)
    nn2 = Mlp([m0] + hidden + [nn2_width(mode, rank, grid.shape)], omega, seed + 1)
    with torch.no_grad():
        if head_scale != 1.0:
            for net in (nn1, nn2):
                for p in net.layers[-1]:
                    p.mul_(head_scale)
        if eq_state is not None:
            rho, T = eq_state
            if not (rho > 0 and T > 0):
                raise ValueError("eq_state needs positive density and temperature")
            b = nn1.layers[-1][1]
            b[0] += math.log(rho)
            b[4] += math.log(2.0 * T)      # the equilibrium is parameterized by T̃ = 2T
    return SplitAnsatz(nn1, nn2, scales, tuple(grid.shape), dim, float(C), mode, int(rank))


@dataclass
class AnsatzOutput:
    """``f`` is (B, N_v) or a CpdTensor with batch B. ``df[k]`` is the
    derivative along input coordinate k (x₁, …, t): a (B, N_v) tensor in dense
    mode, the factor derivatives (dP, dQ, dR) in CPD mode (see cpd_derivative)."""

    f: object
    df: list | None
    eq: tuple      # (rho, u, T̃) of the equilibrium part


def _positive(raw, d_raw):
    lo, hi = POSITIVE_RANGE
    e = torch.exp(raw)
    val = torch.clamp(e, lo, hi)
    if d_raw is None:
        return val, None
    inside = ((e > lo) & (e < hi)).to(DTYPE)
    return val, (val * inside)[..., None] * d_raw


def _equilibrium_axes(a: SplitAnsatz, grid: VelocityGrid, o1, J1):
    """Per-axis factors m_i of M^eq, their square roots and log-derivatives ℓ_i (B, N_i, d)."""
    rho, drho = _positive(o1[:, 0], None if J1 is None else J1[:, 0])
    Tt, dTt = _positive(o1[:, 4], None if J1 is None else J1[:, 4])
    u = o1[:, 1:4]
    root_scale = rho ** (1.0 / 6.0) / (math.pi * Tt) ** 0.25
    facs, roots, logs = [], [], []
    for i, ax in enumerate(grid.axes):
        v = torch.tensor(np.array(ax.points), dtype=DTYPE)
        c = v - u[:, i, None]
        # √m in closed form: sqrt of an underflowed factor has an infinite derivative
        r = root_scale[:, None] * torch.exp(-0.5 * c * c / Tt[:, None])
        roots.append(r)
        facs.append(r * r)
        if J1 is not None:
            du = J1[:, 1 + i]
            ell = ((drho / (3 * rho[:, None]) - 0.5 * dTt / Tt[:, None])[:, None, :]
                   + (2 * c / Tt[:, None])[..., None] * du[:, None, :]
                   + (c * c / (Tt * Tt)[:, None])[..., None] * dTt[:, None, :])
            logs.append(ell)
    return facs, roots, (logs if J1 is not None else None), (rho, u, Tt)


def _outer3(a, b, c):
    full = a[..., :, None, None] * b[..., None, :, None] * c[..., None, None, :]
    return full.reshape(full.shape[:-3] + (-1,))


def split_values(eq_facs, eq_logs, ft, dft, C, eq_roots=None):
    """Dense f = M + C√M f̃ and its input derivatives.

    eq_logs are per-axis log-derivatives; ft is (B, N_v), dft (B, N_v, d).
    """
    M = _outer3(*eq_facs)
    sq = torch.sqrt(M) if eq_roots is None else _outer3(*eq_roots)
    f = M + C * sq * ft
    if eq_logs is None:
        return f, None
    l1, l2, l3 = eq_logs
    L = (l1[:, :, None, None, :] + l2[:, None, :, None, :] + l3[:, None, None, :, :])
    L = L.reshape(L.shape[0], -1, L.shape[-1])
    df = M[..., None] * L + C * sq[..., None] * (0.5 * L * ft[..., None] + dft)
    return f, [df[..., k] for k in range(df.shape[-1])]


def _cpd_factors(a: SplitAnsatz, o2, J2):
    B = o2.shape[0]
    K = a.rank
    out, dout, start = [], [], 0
    for n in a.grid_shape:
        stop = start + n * K
        out.append(o2[:, start:stop].reshape(B, n, K))
        if J2 is not None:
            dout.append(J2[:, start:stop].reshape(B, n, K, -1))
        start = stop
    return out, (dout if J2 is not None else None)


def ansatz_forward(a: SplitAnsatz, grid: VelocityGrid, x, t, with_jacobian: bool = False):
    if tuple(grid.shape) != tuple(a.grid_shape):
        raise ValueError(f"ansatz built for grid {a.grid_shape}, got {grid.shape}")
    if with_jacobian:
        o1, J1 = forward_with_input_jacobian(a.nn1, a.scales, x, t)
        o2, J2 = forward_with_input_jacobian(a.nn2, a.scales, x, t)
    else:
        o1, J1 = forward(a.nn1, a.scales, x, t), None
        o2, J2 = forward(a.nn2, a.scales, x, t), None
    facs, roots, logs, eq = _equilibrium_axes(a, grid, o1, J1)
    if a.mode == "dense":
        f, df = split_values(facs, logs, o2, J2, a.C, roots)
        return AnsatzOutput(f, df, eq)
    F, dF = _cpd_factors(a, o2, J2)
    mats, neq = [m[..., None] for m in facs], [r[..., None] * G for r, G in zip(roots, F)]
    neq[0] = a.C * neq[0]
    f = CpdTensor(*[torch.cat([m, n], -1) for m, n in zip(mats, neq)])
    if logs is None:
        return AnsatzOutput(f, None, eq)
    df = []
    for k in range(logs[0].shape[-1]):
        parts = []
        for i in range(3):
            dm = facs[i][..., None] * logs[i][..., k, None]
            dn = roots[i][..., None] * (dF[i][..., k] + 0.5 * logs[i][..., k, None] * F[i])
            if i == 0:
                dn = a.C * dn
            parts.append(torch.cat([dm, dn], -1))
        df.append(tuple(parts))
    return AnsatzOutput(f, df, eq)


def ansatz_eval(a: SplitAnsatz, grid: VelocityGrid, x, t):
    """f at the rows of (x, t): a (B, N_v) tensor in dense mode, a CpdTensor in CPD mode."""
    return ansatz_forward(a, grid, x, t).f


# ------------------------------------------------------------------ gradients

def parameter_gradient(loss, params):
    """Flat reverse-mode gradient of a scalar loss."""
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss.item()}")
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return torch.cat([(torch.zeros_like(p) if g is None else g).reshape(-1)
                      for g, p in zip(grads, params)])


def flat_parameters(params):
    return torch.cat([p.detach().reshape(-1) for p in params])


def set_flat_parameters(params, flat):
    flat = torch.as_tensor(flat, dtype=DTYPE)
    i = 0
    with torch.no_grad():
        for p in params:
            n = p.numel()
            p.copy_(flat[i:i + n].reshape(p.shape))
            i += n
    if i != flat.numel():
        raise ValueError(f"expected {i} parameters, got {flat.numel()}")


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, ansatz: SplitAnsatz, extra_tensors=None, meta=None):
    """One JSON header line, then all parameters as little-endian float64."""
    extra_tensors = dict(extra_tensors or {})
    header = {"architecture": ansatz.architecture(), "nn1_shapes": ansatz.nn1.shapes(),
              "nn2_shapes": ansatz.nn2.shapes(),
              "extra": [[k, list(v.shape)] for k, v in extra_tensors.items()],
              "meta": meta or {}}
    blobs = [flat_parameters(ansatz.params)]
    blobs += [v.detach().reshape(-1) for v in extra_tensors.values()]
    data = torch.cat(blobs).numpy().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(data)


def load_checkpoint(path):
    """Return (ansatz, extra tensors dict, header)."""
    with open(path, "rb") as fh:
        line = fh.readline()
        data = fh.read()
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path} is not a checkpoint") from exc
    arch = header["architecture"]
    flat = np.frombuffer(data, "<f8").copy()
    nn1 = Mlp(arch["nn1"], arch["omega"], init="zeros")
    nn2 = Mlp(arch["nn2"], arch["omega"], init="zeros")
    a = SplitAnsatz(nn1, nn2, ScaleSet(tuple(arch["scales"]), arch.get("time_scale", 1.0)), tuple(arch["grid_shape"]),
                    arch["dim"], arch["C"], arch["mode"], arch["rank"])
    n = nn1.n_params + nn2.n_params
    set_flat_parameters(a.params, flat[:n])
    extra, i = {}, n
    for k, shape in header["extra"]:
        size = int(np.prod(shape))
        extra[k] = torch.tensor(flat[i:i + size].reshape(shape), dtype=DTYPE)
        i += size
    if i != flat.size:
        raise ValueError("checkpoint payload size does not match its header")
    return a, extra, header


def check_compatible(target: SplitAnsatz, source: SplitAnsatz):
    """Raise ValueError naming the first differing layer or setting."""
    for name in ("mode", "rank", "dim", "grid_shape"):
        if getattr(target, name) != getattr(source, name):
            raise ValueError(f"architecture mismatch in {name}: "
                             f"{getattr(source, name)} vs {getattr(target, name)}")
    if target.scales != source.scales:
        raise ValueError(f"architecture mismatch in scales: {source.scales} vs {target.scales}")
    for net in ("nn1", "nn2"):
        a, b = getattr(source, net).shapes(), getattr(target, net).shapes()
        if len(a) != len(b):
            raise ValueError(f"architecture mismatch in {net}: {len(a) // 2} vs {len(b) // 2} layers")
        for k, (sa, sb) in enumerate(zip(a, b)):
            if sa != sb:
                kind = "weight" if k % 2 == 0 else "bias"
                raise ValueError(f"architecture mismatch in {net} layer {k // 2 + 1} {kind}: "
                                 f"{tuple(sa)} vs {tuple(sb)}")
