"""Finite-volume discrete-velocity solver used to produce reference data.

Transport is MUSCL (minmod slopes) with the upwind flux per discrete
velocity and SSP-RK2 in time. Collisions are Strang-split around it. BGK
relaxes exactly toward the moment-matching equilibrium; the quadratic
operator is sub-stepped with explicit RK2.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .moments import (KineticConfig, discrete_maxwellian_values, macro_moments,
                      maxwellian_values, primitive_variables)
from .velocity_grid import VelocityGrid, grid_from_bytes, grid_to_bytes

RECORD_MAGIC = b"NSRSOL01"
FIELD_NAMES = ("rho", "u1", "u2", "u3", "T")


class NumericalFailure(RuntimeError):
    """Non-finite values or non-positive density during a run."""


@dataclass(frozen=True)
class FvmConfig:
    """``output_times`` defaults to (0, t_end). Snapshots of the full
    distribution are taken at ``snapshot_times`` on every
    ``snapshot_stride``-th cell (flat cell order)."""

    cells: tuple = (400,)
    cfl: float = 0.5
    t_end: float = 0.1
    boundary: str = "periodic"
    collision: str = "bgk"
    reconstruction: str = "minmod"
    integrator: str = "ssprk2"
    output_times: tuple | None = None
    snapshot_times: tuple = ()
    snapshot_stride: int = 1

    def __post_init__(self):
        cells = (self.cells,) if isinstance(self.cells, int) else tuple(int(c) for c in self.cells)
        object.__setattr__(self, "cells", cells)
        if len(cells) not in (1, 2):
            raise ValueError("only 1D and 2D spatial domains are supported")
        if min(cells) < 4:
            raise ValueError("need at least 4 cells per dimension")
        if not 0 < self.cfl < 1:
            raise ValueError(f"CFL number must lie in (0, 1), got {self.cfl}")
        if not self.t_end > 0:
            raise ValueError("end time must be positive")
        if self.boundary not in ("periodic", "dirichlet"):
            raise ValueError(f"unknown boundary type {self.boundary!r}")
        if self.collision not in ("bgk", "spectral", "none"):
            raise ValueError(f"unknown collision {self.collision!r}")
        if self.reconstruction not in ("minmod", "constant"):
            raise ValueError(f"unknown reconstruction {self.reconstruction!r}")
        if self.integrator != "ssprk2":
            raise ValueError(f"unknown integrator {self.integrator!r}")
        out = (0.0, self.t_end) if self.output_times is None else self.output_times
        out = tuple(sorted(float(t) for t in out))
        snaps = tuple(sorted(float(t) for t in self.snapshot_times))
        for t in out + snaps:
            if t < 0 or t > self.t_end * (1 + 1e-12):
                raise ValueError(f"requested time {t} outside [0, {self.t_end}]")
        object.__setattr__(self, "output_times", out)
        object.__setattr__(self, "snapshot_times", snaps)
        if self.snapshot_stride < 1:
            raise ValueError("snapshot stride must be positive")


@dataclass
class SolutionRecord:
    """Macroscopic fields ``fields[t, *cells, k]`` with k over FIELD_NAMES,
    conserved totals per output time and optional distribution snapshots."""

    grid: VelocityGrid
    lower: tuple
    upper: tuple
    cells: tuple
    times: np.ndarray
    fields: np.ndarray
    totals: np.ndarray
    snapshot_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    snapshot_cells: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    snapshots: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return len(self.cells)

    def centers(self):
        return [cell_centers(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.cells)]

    def field(self, name, time_index=-1):
        return self.fields[time_index, ..., FIELD_NAMES.index(name)]

    def time_index(self, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise ValueError(f"time {t} not stored; available {self.times.tolist()}")
        return i

    def interpolate(self, name, t, x):
        """Linear interpolation of a field to points x (..., dim)."""
        vals = self.field(name, self.time_index(t))
        x = np.asarray(x, float)
        periodic = self.meta.get("boundary", "periodic") == "periodic"
        axes, data = [], vals
        for d, (lo, hi, c) in enumerate(zip(self.lower, self.upper, self.centers())):
            if periodic:
                L = hi - lo
                c = np.concatenate([c[-1:] - L, c, c[:1] + L])
                data = np.concatenate([np.take(data, [-1], d), data, np.take(data, [0], d)], d)
            axes.append(c)
        if self.dim == 1:
            return np.interp(x[..., 0], axes[0], data)
        from scipy.interpolate import RegularGridInterpolator
        return RegularGridInterpolator(axes, data, bounds_error=False, fill_value=None)(x)


def cell_centers(lo, hi, n):
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5)


def conserved_totals(f, grid: VelocityGrid, cell_volume):
    rho, m, e = macro_moments(f.reshape(-1, grid.n_v), grid)
    return cell_volume * np.concatenate([[rho.sum()], m.sum(0), [e.sum()]])


def macro_fields(f, grid: VelocityGrid):
    rho, m, e = macro_moments(f, grid)
    u, T = primitive_variables(rho, m, e)
    return np.concatenate([rho[..., None], u, T[..., None]], -1)


def equilibrium_field(rho, u, T, grid: VelocityGrid, discrete=True):
    """Distribution field from macroscopic data (..., ) / (..., 3) / (...,).

    ``discrete=True`` builds the moment-matching equilibrium so the field is
    exactly invariant under the solver's BGK step.
    """
    rho, u, T = np.asarray(rho, float), np.asarray(u, float), np.asarray(T, float)
    if not discrete:
        return maxwellian_values(rho, u, T, grid)
    m = rho[..., None] * u
    energy = 0.5 * rho * (3 * T + (u * u).sum(-1))
    return discrete_maxwellian_values(rho, m, energy, grid)


# ------------------------------------------------------------------ transport

def _minmod(a, b):
    return np.maximum(np.minimum(a, b), 0) + np.minimum(np.maximum(a, b), 0)


def _pad(f, ghosts):
    """f has the transport axis first; ghosts is None (periodic) or a pair of
    arrays broadcastable to one cell slab."""
    if ghosts is None:
        return np.concatenate([f[-2:], f, f[:2]], 0)
    left = np.broadcast_to(ghosts[0], f.shape[1:])
    right = np.broadcast_to(ghosts[1], f.shape[1:])
    return np.concatenate([np.stack([left, left]), f, np.stack([right, right])], 0)


def _flux_divergence(f, c, dx, ghosts, limited=True):
    g = _pad(f, ghosts)
    if limited:
        d = np.diff(g, axis=0)
        s = _minmod(d[:-1], d[1:])            # slopes for cells -1 .. n
    else:
        s = np.zeros_like(g[1:-1])
    left = g[1:-2] + 0.5 * s[:-1]             # upwind side of each interface
    right = g[2:-1] - 0.5 * s[1:]
    flux = np.maximum(c, 0) * left
    flux += np.minimum(c, 0) * right
    return -(flux[1:] - flux[:-1]) / dx


def _transport_axis(f, axis, c, dx, dt, ghosts, limited):
    h = np.moveaxis(f, axis, 0)
    g = None
    if ghosts is not None:
        g = tuple(np.moveaxis(x, axis, 0)[0] if x.ndim == h.ndim else x for x in ghosts)
    h1 = h + dt * _flux_divergence(h, c, dx, g, limited)
    h2 = 0.5 * h + 0.5 * (h1 + dt * _flux_divergence(h1, c, dx, g, limited))
    return np.moveaxis(h2, 0, axis)


# ------------------------------------------------------------------ collision

def _bgk_relax(f, grid, tau, dt, discrete=True):
    rho, m, e = macro_moments(f, grid)
    if discrete:
        M = discrete_maxwellian_values(rho, m, e.sum(-1), grid)
    else:
        u, T = primitive_variables(rho, m, e)
        M = maxwellian_values(rho, u, T, grid)
    return M + (f - M) * math.exp(-dt / tau)


def _spectral_step(f, op, dt):
    from .spectral_collision import fast_collision_values
    flat = f.reshape(-1, f.shape[-1])
    rho = macro_moments(flat, op.grid)[0]
    tau_eff = 1.0 / (op.spec.total_cross_section * rho.max())
    n_sub = max(1, math.ceil(dt / (0.5 * tau_eff)))
    h = dt / n_sub
    for _ in range(n_sub):
        k1 = fast_collision_values(flat, op)
        mid = flat + h * k1
        flat = 0.5 * flat + 0.5 * (mid + h * fast_collision_values(mid, op))
    return flat.reshape(f.shape)


# ---------------------------------------------------------------------- solve

def solve(ic, grid: VelocityGrid, cfg: FvmConfig, kinetic: KineticConfig = KineticConfig(),
          lower=None, upper=None, boundary_states=None, operator=None, meta=None) -> SolutionRecord:
    """Advance the distribution field ``ic`` (*cells, N_v) or macroscopic
    data (rho, u, T) per cell to ``cfg.t_end``.

    ``boundary_states`` gives the (left, right) far-field (rho, u, T) for
    Dirichlet runs along x; other directions are then zero-gradient.
    ``operator`` is a SpectralOperator when ``cfg.collision == "spectral"``.
    """
    dim = len(cfg.cells)
    lower = tuple(lower) if lower is not None else (-0.5,) * dim
    upper = tuple(upper) if upper is not None else (0.5,) * dim
    if isinstance(ic, tuple):
        f = equilibrium_field(*ic, grid, discrete=kinetic.discrete_equilibrium)
    else:
        f = np.array(ic, dtype=np.float64)
    if f.shape != tuple(cfg.cells) + (grid.n_v,):
        raise ValueError(f"initial field has shape {f.shape}, expected {tuple(cfg.cells) + (grid.n_v,)}")
    if cfg.collision == "spectral" and (operator is None or not operator.grid.same_as(grid)):
        raise ValueError("spectral collision needs a SpectralOperator built on the same grid")
    dx = [(hi - lo) / n for lo, hi, n in zip(lower, upper, cfg.cells)]
    vol = float(np.prod(dx))
    ghosts = [None] * dim
    if cfg.boundary == "dirichlet":
        if boundary_states is None:
            raise ValueError("dirichlet boundary needs boundary_states")
        pair = [equilibrium_field(np.array(r), np.array(u, float), np.array(T), grid,
                                  discrete=kinetic.discrete_equilibrium)
                for r, u, T in boundary_states]
        ghosts[0] = tuple(pair)
    vmax = [np.abs(ax.points).max() for ax in grid.axes[:dim]]
    dt_max = cfg.cfl * min(h / v for h, v in zip(dx, vmax))
    limited = cfg.reconstruction == "minmod"

    def transport(f, dt):
        def one(f, a, h):
            gh = ghosts[a]
            if gh is None and cfg.boundary == "dirichlet":
                # zero-gradient: reuse the edge slabs
                edge = np.moveaxis(f, a, 0)
                gh = (np.moveaxis(edge[:1], 0, a), np.moveaxis(edge[-1:], 0, a))
            return _transport_axis(f, a, grid.points[:, a], dx[a], h, gh, limited)
        if dim == 1:
            return one(f, 0, dt)
        return one(one(one(f, 0, 0.5 * dt), 1, dt), 0, 0.5 * dt)

    def collide(f, dt):
        if cfg.collision == "bgk":
            return _bgk_relax(f, grid, kinetic.tau, dt, kinetic.discrete_equilibrium)
        if cfg.collision == "spectral":
            return _spectral_step(f, operator, dt)
        return f

    events = sorted(set(cfg.output_times) | set(cfg.snapshot_times))
    snap_cells = np.arange(0, int(np.prod(cfg.cells)), cfg.snapshot_stride)
    times, fields, totals, snaps = [], [], [], []

    def record(t, f):
        if any(abs(t - s) <= 1e-12 for s in cfg.output_times):
            times.append(t)
            fields.append(macro_fields(f, grid))
            totals.append(conserved_totals(f, grid, vol))
        if any(abs(t - s) <= 1e-12 for s in cfg.snapshot_times):
            snaps.append(f.reshape(-1, grid.n_v)[snap_cells].copy())

    t, steps = 0.0, 0
    for target in events:
        while target - t > 1e-14 * max(1.0, target):
            dt = min(dt_max, target - t)
            f = collide(transport(collide(f, 0.5 * dt), dt), 0.5 * dt)
            t = target if target - t - dt <= 1e-14 * max(1.0, target) else t + dt
            steps += 1
            rho = macro_moments(f, grid)[0]
            if not (np.all(np.isfinite(f)) and rho.min() > 0):
                raise NumericalFailure(f"non-positive or non-finite density at t={t:.6g}")
        record(target, f)

    info = {"boundary": cfg.boundary, "steps": steps, "dt_max": dt_max, "config": asdict(cfg),
            "kn": kinetic.kn, "tau": kinetic.tau}
    info.update(meta or {})
    return SolutionRecord(
        grid=grid, lower=lower, upper=upper, cells=tuple(cfg.cells),
        times=np.array(times), fields=np.array(fields), totals=np.array(totals),
        snapshot_times=np.array(cfg.snapshot_times, float),
        snapshot_cells=snap_cells if snaps else np.zeros(0, dtype=np.int64),
        snapshots=np.array(snaps) if snaps else None, meta=info)


def solve_problem(problem, grid: VelocityGrid, cfg: FvmConfig,
                  kinetic: KineticConfig = KineticConfig(), operator=None) -> SolutionRecord:
    """Run one of the registered benchmark problems from its Maxwellian IC."""
    if len(cfg.cells) != problem.dim:
        raise ValueError(f"{problem.name} is {problem.dim}D but cells={cfg.cells}")
    if cfg.boundary != problem.boundary:
        raise ValueError(f"{problem.name} uses {problem.boundary} boundaries")
    centers = [cell_centers(lo, hi, n) for lo, hi, n in zip(problem.lower, problem.upper, cfg.cells)]
    x = np.stack(np.meshgrid(*centers, indexing="ij"), -1)
    rho, u, T = problem.macro_ic(x)
    return solve((rho, u, T), grid, cfg, kinetic, problem.lower, problem.upper,
                 problem.boundary_states(), operator, meta={"problem": problem.name})


# ---------------------------------------------------------------- record file

def save_record(rec: SolutionRecord, path):
    header = {
        "lower": list(rec.lower), "upper": list(rec.upper), "cells": list(rec.cells),
        "n_times": len(rec.times), "n_snapshot_times": len(rec.snapshot_times) if rec.snapshots is not None else 0,
        "n_snapshot_cells": len(rec.snapshot_cells), "fields": list(FIELD_NAMES), "meta": rec.meta,
    }
    hbytes = json.dumps(header, sort_keys=True, default=_json_default).encode()
    parts = [RECORD_MAGIC, struct.pack("<Q", len(hbytes)), hbytes, grid_to_bytes(rec.grid),
             np.ascontiguousarray(rec.times, "<f8").tobytes(),
             np.ascontiguousarray(rec.fields, "<f8").tobytes(),
             np.ascontiguousarray(rec.totals, "<f8").tobytes()]
    if rec.snapshots is not None:
        parts += [np.ascontiguousarray(rec.snapshot_times, "<f8").tobytes(),
                  np.ascontiguousarray(rec.snapshot_cells, "<i8").tobytes(),
                  np.ascontiguousarray(rec.snapshots, "<f8").tobytes()]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def load_record(path) -> SolutionRecord:
    buf = open(path, "rb").read()
    if buf[:8] != RECORD_MAGIC:
        raise ValueError(f"{path} is not a solution record")
    (hlen,) = struct.unpack_from("<Q", buf, 8)
    header = json.loads(buf[16:16 + hlen])
    grid, off = grid_from_bytes(buf, 16 + hlen)
    cells = tuple(header["cells"])
    nt = header["n_times"]

    def take(count, dtype="<f8"):
        nonlocal off
        a = np.frombuffer(buf, dtype, count, off)
        off += a.nbytes
        return a.copy()

    times = take(nt)
    fields = take(nt * int(np.prod(cells)) * 5).reshape((nt,) + cells + (5,))
    totals = take(nt * 5).reshape(nt, 5)
    ns, nc = header["n_snapshot_times"], header["n_snapshot_cells"]
    snaps, st, sc = None, np.zeros(0), np.zeros(0, dtype=np.int64)
    if ns:
        st = take(ns)
        sc = take(nc, "<i8")
        snaps = take(ns * nc * grid.n_v).reshape(ns, nc, grid.n_v)
    if off != len(buf):
        raise ValueError("trailing bytes in solution record")
    return SolutionRecord(grid, tuple(header["lower"]), tuple(header["upper"]), cells, times,
                          fields, totals, st, sc, snaps, header["meta"])


# -------------------------------------------------------------------- metrics

def error_metrics(numerical: dict, reference: dict) -> dict:
    """Relative errors with unnormalized ℓ2 norms over the samples.

    rho, T: ‖num − ref‖ / ‖num‖.  u: ‖num − ref‖ / (1 + ‖num‖), which stays
    finite when the velocity vanishes.
    """
    out = {}
    for key in ("rho", "u", "T"):
        if key not in numerical or key not in reference:
            continue
        a = np.asarray(numerical[key], float)
        b = np.asarray(reference[key], float)
        if a.size == 0 or b.size == 0:
            raise ValueError(f"empty field {key!r}")
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch for {key!r}: {a.shape} vs {b.shape}")
        diff = np.linalg.norm(a - b)
        den = 1.0 + np.linalg.norm(a) if key == "u" else np.linalg.norm(a)
        out[key] = float(diff / den)
    if not out:
        raise ValueError("no comparable fields")
    return out
