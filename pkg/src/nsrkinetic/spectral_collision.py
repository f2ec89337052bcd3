"""Quadratic collision operator with the VSS kernel.

Two discretizations on a periodized cubic velocity box of side 2L:

* ``fast_collision``: Fourier-Galerkin method in Carleman form.  The kernel
  4C'|x|^(α-1) is separable, so each half-sphere direction e contributes a
  product of two filtered fields, evaluated by zero-padded FFTs in
  O(M N³ log N).
* ``direct_collision``: a brute-force oracle.  For every relative velocity
  g (radial Gauss-Legendre times a sphere rule) and every scattering
  direction σ (Gauss-Jacobi in cos θ aligned with ĝ, so the angular
  singularity is integrated exactly) the weak form is applied: f(v)g(v-g) is
  removed at v and deposited at v' = v + (|g|σ - g)/2.  Off-grid values are
  obtained by trigonometric interpolation, which preserves mass exactly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.special as sps

from . import _backend as B
from .moments import DiscreteDistribution
from .velocity_grid import VelocityGrid

try:
    import torch
except ImportError:  # pragma: no cover
    torch = None

DIRECT_MAX_POINTS = 2000
CACHE_MAGIC = b"NSRSPEC1"
CACHE_VERSION = 1


@dataclass(frozen=True)
class CollisionKernelSpec:
    """VSS kernel B = C'_α sin^(α-1)(θ/2) |g|^α."""

    alpha: float = 0.0
    c_alpha: float = 1.0
    sphere_points: tuple = (8, 8)
    modes: int | None = None

    @property
    def c_alpha_prime(self):
        a = self.alpha
        return (a + 3.0) * (a + 5.0) / 24.0 * self.c_alpha

    @property
    def total_cross_section(self):
        """∫ B dσ at |g| = 1."""
        return 8.0 * np.pi * self.c_alpha_prime / (self.alpha + 1.0)

    @classmethod
    def for_knudsen(cls, kn, alpha=0.0, **kw):
        """Choose C_α so that ∫ B dσ = |g|^α / Kn."""
        cp = (alpha + 1.0) / (8.0 * np.pi * kn)
        c = cp * 24.0 / ((alpha + 3.0) * (alpha + 5.0))
        return cls(alpha=alpha, c_alpha=c, **kw)


def sphere_quadrature(n_theta, n_phi):
    """Gauss-Legendre in cos θ times uniform azimuth on S²."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    ph = 2 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1 - x ** 2)
    e = np.stack([np.outer(st, np.cos(ph)), np.outer(st, np.sin(ph)),
                  np.outer(x, np.ones(n_phi))], -1).reshape(-1, 3)
    return e, np.outer(w, np.full(n_phi, 2 * np.pi / n_phi)).ravel()


def _box(grid: VelocityGrid):
    if not (grid.is_uniform and grid.is_cubic):
        raise ValueError("spectral collision requires a uniform cubic velocity grid")
    ax = grid.axes[0]
    return len(ax), 0.5 * (ax.upper - ax.lower)


def truncation_radius(half_side):
    return 4.0 * half_side / (3.0 + np.sqrt(2.0))


def _modes(n, half_side):
    return np.pi * sfft.fftfreq(n, 1.0 / n) / half_side


# ---------------------------------------------------------------- fast method

@dataclass(frozen=True, eq=False)
class SpectralOperator:
    grid: VelocityGrid
    spec: CollisionKernelSpec
    gain_f: np.ndarray   # (D, N, N, N) real weights on f̂ per direction
    gain_g: np.ndarray   # (D, N, N, N) real weights on ĝ per direction
    loss_g: np.ndarray   # (N, N, N) loss weights on ĝ
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.gain_f.shape[-1]

    @property
    def padded(self):
        return (3 * self.n + 1) // 2


def _radial_phi(s, R, alpha):
    """∫_0^R ρ^α cos(ρ s) dρ."""
    if alpha == 0:
        small = np.abs(s) < 1e-12
        return np.where(small, R, np.sin(R * s) / np.where(small, 1.0, s))
    t, wt = sps.roots_jacobi(64, 0.0, alpha)
    rho = (t + 1) * R / 2
    wr = wt * (R / 2) ** (alpha + 1)
    return np.cos(s[..., None] * rho) @ wr


def build_spectral_operator(grid: VelocityGrid, spec: CollisionKernelSpec) -> SpectralOperator:
    n, L = _box(grid)
    if spec.modes is not None and spec.modes != n:
        raise ValueError(f"modes ({spec.modes}) must equal the axis count ({n})")
    R = truncation_radius(L)
    xi = _modes(n, L)
    X = np.stack(np.meshgrid(xi, xi, xi, indexing="ij"), -1)
    e, w = sphere_quadrature(*spec.sphere_points)
    # integrand is even in e, so keep the upper half sphere with doubled weight
    keep = e[:, 2] > 0
    e, w = e[keep], 2 * w[keep]
    s = X @ e.T
    phi = _radial_phi(s, R, spec.alpha)
    perp = np.sqrt(np.maximum((X ** 2).sum(-1)[..., None] - s ** 2, 0.0))
    tiny = perp < 1e-12
    psi = np.where(tiny, np.pi * R ** 2,
                   2 * np.pi * R * sps.j1(R * perp) / np.where(tiny, 1.0, perp))
    gain_f = np.ascontiguousarray(np.moveaxis(4 * spec.c_alpha_prime * w * phi, -1, 0))
    gain_g = np.ascontiguousarray(np.moveaxis(psi, -1, 0))
    loss_g = (gain_f * gain_g).sum(0)
    entries = gain_f.size + gain_g.size + loss_g.size
    meta = {"box_half_side": L, "box_side": 2 * L, "truncation_radius": R,
            "directions": int(e.shape[0]), "modes": n,
            "table_entries": int(entries), "table_bytes": int(8 * entries)}
    return SpectralOperator(grid, spec, gain_f, gain_g, loss_g, meta)


def _fft_mod(a):
    return torch.fft if B.is_torch(a) else sfft


def _table(t, ref):
    return torch.as_tensor(t, dtype=ref.dtype, device=ref.device) if B.is_torch(ref) else t


def _pad_axis(a, axis, n, p):
    """Zero-pad a spectrum in FFT order from n to p modes along ``axis``."""
    pos = (n + 1) // 2
    lo = a.narrow(axis, 0, pos) if B.is_torch(a) else np.take(a, np.arange(pos), axis)
    hi = a.narrow(axis, pos, n - pos) if B.is_torch(a) else np.take(a, np.arange(pos, n), axis)
    shape = list(a.shape)
    shape[axis] = p - n
    if B.is_torch(a):
        z = torch.zeros(shape, dtype=a.dtype, device=a.device)
        return torch.cat([lo, z, hi], dim=axis)
    return np.concatenate([lo, np.zeros(shape, a.dtype), hi], axis=axis)


def _crop_axis(a, axis, n, p):
    pos = (n + 1) // 2
    if B.is_torch(a):
        return torch.cat([a.narrow(axis, 0, pos), a.narrow(axis, p - (n - pos), n - pos)], dim=axis)
    idx = np.concatenate([np.arange(pos), np.arange(p - (n - pos), p)])
    return np.take(a, idx, axis)


def _pad3(a, n, p):
    for ax in (-3, -2, -1):
        a = _pad_axis(a, ax, n, p)
    return a


def _crop3(a, n, p):
    for ax in (-3, -2, -1):
        a = _crop_axis(a, ax, n, p)
    return a


def _q_tilde(f, g, op: SpectralOperator):
    """Non-symmetrized Q̃(f, g) on (..., N, N, N) arrays."""
    fft = _fft_mod(f)
    n, p = op.n, op.padded
    axes = (-3, -2, -1)
    fh = fft.fftn(f, axes=axes) if not B.is_torch(f) else fft.fftn(f, dim=axes)
    gh = fft.fftn(g, axes=axes) if not B.is_torch(g) else fft.fftn(g, dim=axes)
    fh = fh / n ** 3
    gh = gh / n ** 3

    def ifft(a):
        return (fft.ifftn(a, dim=axes) if B.is_torch(a) else fft.ifftn(a, axes=axes)) * p ** 3

    ga = _table(op.gain_f, f)
    gb = _table(op.gain_g, f)
    lg = _table(op.loss_g, f)
    a = ifft(_pad3(ga * fh[..., None, :, :, :], n, p))
    b = ifft(_pad3(gb * gh[..., None, :, :, :], n, p))
    prod = (a * b).sum(-4)
    prod = prod - ifft(_pad3(fh, n, p)) * ifft(_pad3(lg * gh, n, p))
    qh = fft.fftn(prod, dim=axes) if B.is_torch(prod) else fft.fftn(prod, axes=axes)
    qh = _crop3(qh / p ** 3, n, p)
    out = fft.ifftn(qh, dim=axes) if B.is_torch(qh) else fft.ifftn(qh, axes=axes)
    return out.real * n ** 3


def fast_collision_values(f, op: SpectralOperator, g=None, chunk: int = 8):
    """Q(f, g) on arrays shaped (..., N_v); g defaults to f."""
    n = op.n
    shape = f.shape
    fb = f.reshape((-1, n, n, n))
    gb = fb if g is None else g.reshape((-1, n, n, n))
    outs = []
    for i in range(0, fb.shape[0], chunk):
        fi, gi = fb[i:i + chunk], gb[i:i + chunk]
        if g is None:
            outs.append(_q_tilde(fi, fi, op))
        else:
            outs.append(0.5 * (_q_tilde(fi, gi, op) + _q_tilde(gi, fi, op)))
    out = B.concat(outs, 0) if len(outs) > 1 else outs[0]
    return out.reshape(shape)


def fast_collision(f: DiscreteDistribution, op: SpectralOperator,
                   g: DiscreteDistribution | None = None) -> DiscreteDistribution:
    if not f.grid.same_as(op.grid) or (g is not None and not g.grid.same_as(op.grid)):
        raise ValueError("distribution grid does not match the spectral operator grid")
    vals = fast_collision_values(f.values, op, None if g is None else g.values)
    return DiscreteDistribution(vals, f.grid)


def save_spectral_operator(op: SpectralOperator, path):
    """Binary cache: header then complex tables as (re, im) float64 pairs."""
    n = op.n
    d = op.gain_f.shape[0]
    ax = op.grid.axes[0]
    head = struct.pack("<8sI4I5d", CACHE_MAGIC, CACHE_VERSION, n, d,
                       op.spec.sphere_points[0], op.spec.sphere_points[1],
                       op.spec.alpha, op.spec.c_alpha, ax.lower, ax.upper,
                       op.meta["truncation_radius"])
    with open(path, "wb") as fh:
        fh.write(head)
        for t in (op.gain_f, op.gain_g, op.loss_g):
            c = np.empty(t.shape + (2,), "<f8")
            c[..., 0] = t.real
            c[..., 1] = np.imag(t)
            fh.write(c.tobytes())


def load_spectral_operator(path, grid: VelocityGrid) -> SpectralOperator:
    with open(path, "rb") as fh:
        buf = fh.read()
    fmt = "<8sI4I5d"
    magic, ver, n, d, nt, nph, alpha, c_alpha, lo, hi, R = struct.unpack_from(fmt, buf, 0)
    if magic != CACHE_MAGIC or ver != CACHE_VERSION:
        raise ValueError("not a spectral kernel cache file")
    gn, _ = _box(grid)
    ax = grid.axes[0]
    if gn != n or not np.isclose(ax.lower, lo) or not np.isclose(ax.upper, hi):
        raise ValueError("cached tables were built for a different grid")
    off = struct.calcsize(fmt)
    tabs = []
    for shape in ((d, n, n, n), (d, n, n, n), (n, n, n)):
        cnt = int(np.prod(shape)) * 2
        c = np.frombuffer(buf, "<f8", cnt, off).reshape(shape + (2,))
        off += 8 * cnt
        tabs.append(np.ascontiguousarray(c[..., 0]))
    spec = CollisionKernelSpec(alpha=alpha, c_alpha=c_alpha, sphere_points=(nt, nph), modes=n)
    meta = {"box_half_side": 0.5 * (hi - lo), "box_side": hi - lo, "truncation_radius": R,
            "directions": d, "modes": n, "table_entries": int(sum(t.size for t in tabs)),
            "table_bytes": int(8 * sum(t.size for t in tabs))}
    return SpectralOperator(grid, spec, *tabs, meta)


# -------------------------------------------------------------- direct oracle

@dataclass(frozen=True)
class DirectQuadrature:
    radial: int = 12          # Gauss-Legendre nodes per radial sub-interval
    g_sphere: tuple = (10, 20)
    sigma: tuple = (10, 10)   # (polar, azimuth) nodes for σ about ĝ


def _orthonormal_frame(e):
    a = np.array([1.0, 0, 0]) if abs(e[0]) < 0.9 else np.array([0, 1.0, 0])
    ex = np.cross(e, a)
    ex /= np.linalg.norm(ex)
    return ex, np.cross(e, ex)


def _direct_tilde(fs, gs, n, L, spec: CollisionKernelSpec, quad: DirectQuadrature):
    alpha, cp = spec.alpha, spec.c_alpha_prime
    R = truncation_radius(L)
    xi = _modes(n, L)
    gh = sfft.fftn(gs, axes=(1, 2, 3))
    x1, w1 = np.polynomial.legendre.leggauss(quad.radial)
    # |g| ≤ R: the full σ sphere is admissible; beyond it a band of θ is cut.
    r_in, w_in = (x1 + 1) * R / 2, w1 * R / 2
    span = (np.sqrt(2) - 1) * R
    r_out, w_out = R + (x1 + 1) * span / 2, w1 * span / 2
    rs = np.concatenate([r_in, r_out])
    wr = np.concatenate([w_in, w_out]) * rs ** 2
    E, we = sphere_quadrature(*quad.g_sphere)
    ph = 2 * np.pi * np.arange(quad.sigma[1]) / quad.sigma[1]
    wph = 2 * np.pi / quad.sigma[1]
    a = 0.5 * (alpha - 1.0)
    xj, wj = sps.roots_jacobi(quad.sigma[0], a, 0.0)
    wj = wj * 2.0 ** (-a)
    xl, wl = np.polynomial.legendre.leggauss(quad.sigma[0])
    gain_hat = np.zeros(fs.shape, complex)
    loss = np.zeros(fs.shape)
    for r, wrr in zip(rs, wr):
        if r <= R:
            ct, wct = xj, wj
        else:
            c_hi, c_lo = np.cos(2 * np.arccos(R / r)), np.cos(2 * np.arcsin(R / r))
            ct = c_lo + (xl + 1) * (c_hi - c_lo) / 2
            wct = wl * (c_hi - c_lo) / 2 * ((1 - ct) / 2) ** a
        st = np.sqrt(1 - ct ** 2)
        wsig = np.repeat(wct, len(ph)) * wph * cp * r ** alpha
        for e, wee in zip(E, we):
            gv = r * e
            ex, ey = _orthonormal_frame(e)
            sig = (ct[:, None, None] * e + st[:, None, None]
                   * (np.cos(ph)[None, :, None] * ex + np.sin(ph)[None, :, None] * ey)).reshape(-1, 3)
            W = wrr * wee
            p1, p2, p3 = (np.exp(-1j * xi * gv[i]) for i in range(3))
            shifted = np.real(sfft.ifftn(gh * p1[:, None, None] * p2[None, :, None] * p3[None, None, :],
                                         axes=(1, 2, 3)))
            pair = fs * shifted
            loss += W * wsig.sum() * pair
            d = (r * sig - gv) / 2
            e1, e2, e3 = (np.exp(-1j * np.outer(d[:, i], xi)) for i in range(3))
            phase = np.einsum("s,sa,sb,sc->abc", wsig, e1, e2, e3, optimize=True)
            gain_hat += W * sfft.fftn(pair, axes=(1, 2, 3)) * phase
    return np.real(sfft.ifftn(gain_hat, axes=(1, 2, 3))) - loss


def direct_collision_values(f, g, grid: VelocityGrid, spec: CollisionKernelSpec,
                            quad: DirectQuadrature = DirectQuadrature(),
                            max_points: int = DIRECT_MAX_POINTS):
    """Symmetrized direct Q(f, g) on arrays (..., N_v); g=None means Q(f, f)."""
    n, L = _box(grid)
    if grid.n_v > max_points:
        raise ValueError(f"direct collision limited to {max_points} velocity points, got {grid.n_v}")
    f = np.asarray(f, dtype=float)
    shape = f.shape
    fb = f.reshape(-1, n, n, n)
    if g is None:
        out = _direct_tilde(fb, fb, n, L, spec, quad)
    else:
        gb = np.asarray(g, dtype=float).reshape(fb.shape)
        out = 0.5 * (_direct_tilde(fb, gb, n, L, spec, quad) + _direct_tilde(gb, fb, n, L, spec, quad))
    return out.reshape(shape)


def direct_collision(f: DiscreteDistribution, g: DiscreteDistribution,
                     spec: CollisionKernelSpec, quad: DirectQuadrature = DirectQuadrature(),
                     max_points: int = DIRECT_MAX_POINTS) -> DiscreteDistribution:
    if not f.grid.same_as(g.grid):
        raise ValueError("f and g live on different grids")
    same = f is g or np.array_equal(f.values, g.values)
    vals = direct_collision_values(f.values, None if same else g.values, f.grid, spec, quad, max_points)
    return DiscreteDistribution(vals, f.grid)
