"""Data-driven reduced quadratic collision operator.

Snapshots of a BGK solution give a distribution basis G and a collision
basis H̃ (truncated SVDs, H̃ made exactly conservative).  The kernel
K̂_ijr = ⟨Q(g_i, g_j), h̃_r⟩ is then precomputed once and

    Q[f] ≈ Σ_r (Σ_ij K̂_ijr â_i â_j) h̃_r,   â = Gᵀf.

All bases live in √ω-scaled space, where the Euclidean inner product is the
velocity quadrature, and outputs are unscaled on the way out.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _backend as B
from .spectral_collision import SpectralOperator, fast_collision_values
from .velocity_grid import VelocityGrid, grid_from_bytes, grid_to_bytes

MODEL_MAGIC = b"NSRRED01"
MODEL_VERSION = 1
_HEADER = struct.Struct("<8sI5Q")


@dataclass(frozen=True, eq=False)
class SnapshotMatrix:
    """Columns of ``A`` (N_v × N_s) are distribution snapshots."""

    A: np.ndarray
    grid: VelocityGrid
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != self.grid.n_v:
            raise ValueError(f"snapshot matrix must be N_v x N_s with N_v={self.grid.n_v}")
        if A.shape[1] == 0:
            raise ValueError("snapshot matrix has no columns")
        if not np.all(np.isfinite(A)):
            raise ValueError("snapshot matrix contains non-finite entries")
        object.__setattr__(self, "A", A)

    @property
    def n_s(self):
        return self.A.shape[1]


@dataclass(frozen=True, eq=False)
class BasisSet:
    """``G`` and ``H_tilde`` are orthonormal in √ω-scaled space."""

    G: np.ndarray
    H_tilde: np.ndarray
    sv_A: np.ndarray
    sv_Q: np.ndarray
    e_A: float
    e_Q: float
    grid: VelocityGrid

    @property
    def n_a(self):
        return self.G.shape[1]

    @property
    def n_b(self):
        return self.H_tilde.shape[1]

    def physical_G(self):
        return self.G / np.sqrt(self.grid.weights)[:, None]

    def physical_H(self):
        return self.H_tilde / np.sqrt(self.grid.weights)[:, None]


@dataclass(frozen=True, eq=False)
class ReducedKernel:
    K_hat: np.ndarray
    basis: BasisSet
    kernel: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.basis.grid


# ------------------------------------------------------------------ snapshots

def collect_snapshots(record, samples=None) -> SnapshotMatrix:
    """Snapshot matrix from a solution record holding distribution snapshots.

    ``samples`` is a sequence of (time_index, cell_index) pairs into
    ``record.snapshots``; by default every stored snapshot is used.
    Duplicates are kept.
    """
    if record.snapshots is None:
        raise ValueError("solution record holds no distribution snapshots")
    n_t, n_c, _ = record.snapshots.shape
    if samples is None:
        samples = [(i, j) for i in range(n_t) for j in range(n_c)]
    samples = list(samples)
    if not samples:
        raise ValueError("empty sample plan")
    ti = np.array([s[0] for s in samples])
    ci = np.array([s[1] for s in samples])
    A = record.snapshots[ti, ci].T
    flat = np.stack(np.meshgrid(*record.centers(), indexing="ij"), -1).reshape(-1, record.dim)
    coords = flat[record.snapshot_cells[ci]]
    meta = {"problem": record.meta.get("problem"),
            "times": record.snapshot_times[ti].tolist(),
            "x": coords.tolist()}
    return SnapshotMatrix(A, record.grid, meta)


# ---------------------------------------------------------------------- basis

def _orthonormalize(X, drop_tol=1e-12):
    """Modified Gram–Schmidt with one re-pass; nearly dependent columns are dropped."""
    cols = []
    for k in range(X.shape[1]):
        v = X[:, k].copy()
        norm0 = np.linalg.norm(v)
        for _ in range(2):
            for q in cols:
                v -= (q @ v) * q
        nv = np.linalg.norm(v)
        if norm0 > 0 and nv > drop_tol * norm0:
            cols.append(v / nv)
    return np.stack(cols, 1) if cols else np.zeros((X.shape[0], 0))


def conserved_moment_basis(grid: VelocityGrid):
    """Orthonormalized √ω·[1, v, |v|²] (columns)."""
    V = grid.points
    M = np.concatenate([np.ones((grid.n_v, 1)), V, (V * V).sum(1, keepdims=True)], 1)
    return _orthonormalize(np.sqrt(grid.weights)[:, None] * M)


def truncation_error(sv, rank):
    """Relative Frobenius error of the rank-``rank`` SVD truncation."""
    total = np.sum(sv ** 2)
    return float(np.sqrt(np.sum(sv[rank:] ** 2) / total)) if total > 0 else 0.0


def _svd(X):
    try:
        return np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"SVD failed: {exc}") from exc


def build_basis(snap: SnapshotMatrix, op: SpectralOperator, n_a: int, n_b: int,
                Q=None) -> BasisSet:
    """Truncated SVD bases of the snapshots and of their collision terms.

    ``Q`` (N_v × N_s) may be passed to reuse precomputed collision columns.
    """
    grid = snap.grid
    if not grid.same_as(op.grid):
        raise ValueError("snapshot grid does not match the spectral operator grid")
    bound = min(grid.n_v, snap.n_s)
    if not (1 <= n_a <= bound and 1 <= n_b <= bound):
        raise ValueError(f"ranks must lie in [1, {bound}], got n_a={n_a}, n_b={n_b}")
    sw = np.sqrt(grid.weights)[:, None]
    if Q is None:
        Q = fast_collision_values(snap.A.T.copy(), op).T
    U, sA, _ = _svd(sw * snap.A)
    W, sQ, _ = _svd(sw * Q)
    H = W[:, :n_b]
    Mt = conserved_moment_basis(grid)
    H_bar = H - Mt @ (Mt.T @ H)
    H_t = _orthonormalize(H_bar)
    # re-project: MGS round-off can leak back into the moment directions
    H_t = _orthonormalize(H_t - Mt @ (Mt.T @ H_t))
    return BasisSet(G=U[:, :n_a].copy(), H_tilde=H_t, sv_A=sA, sv_Q=sQ,
                    e_A=truncation_error(sA, n_a), e_Q=truncation_error(sQ, n_b), grid=grid)


def build_kernel_tensor(basis: BasisSet, op: SpectralOperator, chunk: int = 16) -> ReducedKernel:
    """K̂_ijr = ⟨Q(g_i, g_j), h̃_r⟩ with the symmetrized bilinear form."""
    if not basis.grid.same_as(op.grid):
        raise ValueError("basis grid does not match the spectral operator grid")
    g = basis.physical_G().T                      # (n_a, N_v)
    sw = np.sqrt(basis.grid.weights)
    n_a = basis.n_a
    pairs = [(i, j) for i in range(n_a) for j in range(i, n_a)]
    K = np.zeros((n_a, n_a, basis.n_b))
    for s in range(0, len(pairs), chunk):
        block = pairs[s:s + chunk]
        ii = [p[0] for p in block]
        jj = [p[1] for p in block]
        q = fast_collision_values(g[ii], op, g[jj])
        proj = (q * sw) @ basis.H_tilde
        for (i, j), row in zip(block, proj):
            K[i, j] = row
            K[j, i] = row
    spec = op.spec
    kernel = {"alpha": spec.alpha, "c_alpha": spec.c_alpha,
              "sphere_points": list(spec.sphere_points), "modes": op.n}
    return ReducedKernel(K, basis, kernel)


# ----------------------------------------------------------------- evaluation

def reduced_collision_values(f, model: ReducedKernel):
    """Reduced Q for arrays (..., N_v); numpy or torch."""
    basis = model.basis
    sw = np.sqrt(basis.grid.weights)
    G = B.as_like(basis.G, f)
    H = B.as_like(basis.H_tilde, f)
    K = B.as_like(model.K_hat, f)
    a = (f * B.as_like(sw, f)) @ G
    q = B.einsum("...i,...j,ijr->...r", a, a, K)
    return (q @ H.T) / B.as_like(sw, f)


def reduced_collision_eval(f, model: ReducedKernel):
    from .moments import DiscreteDistribution
    if not f.grid.same_as(model.grid):
        raise ValueError("distribution grid does not match the reduced model grid")
    return DiscreteDistribution(reduced_collision_values(f.values, model), f.grid)


# ---------------------------------------------------------------------- files

def save_reduced_model(model: ReducedKernel, path, extra: dict | None = None):
    """Binary model file plus ``<path>.json`` sidecar with the truncation errors."""
    b = model.basis
    n_v = b.grid.n_v
    parts = [_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, n_v, b.n_a, b.n_b, len(b.sv_A), len(b.sv_Q)),
             grid_to_bytes(b.grid)]
    for arr in (b.G, b.H_tilde, model.K_hat, b.sv_A, b.sv_Q, np.array([b.e_A, b.e_Q])):
        parts.append(np.ascontiguousarray(arr, "<f8").tobytes())
    kernel = json.dumps(model.kernel, sort_keys=True).encode()
    parts += [struct.pack("<Q", len(kernel)), kernel]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))
    side = {"e_A": b.e_A, "e_Q": b.e_Q, "n_a": b.n_a, "n_b": b.n_b, "n_v": n_v,
            "kernel": model.kernel}
    side.update(extra or {})
    with open(str(path) + ".json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)


def load_reduced_model(path) -> ReducedKernel:
    buf = open(path, "rb").read()
    magic, version, n_v, n_a, n_b, l_a, l_q = _HEADER.unpack_from(buf, 0)
    if magic != MODEL_MAGIC:
        raise ValueError(f"{path} is not a reduced collision model")
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    grid, off = grid_from_bytes(buf, _HEADER.size)
    if grid.n_v != n_v:
        raise ValueError("grid block does not match N_v")

    def take(count):
        nonlocal off
        a = np.frombuffer(buf, "<f8", count, off).copy()
        off += 8 * count
        return a

    G = take(n_v * n_a).reshape(n_v, n_a)
    H = take(n_v * n_b).reshape(n_v, n_b)
    K = take(n_a * n_a * n_b).reshape(n_a, n_a, n_b)
    sA, sQ = take(l_a), take(l_q)
    e_A, e_Q = take(2)
    (klen,) = struct.unpack_from("<Q", buf, off)
    kernel = json.loads(buf[off + 8:off + 8 + klen])
    basis = BasisSet(G, H, sA, sQ, float(e_A), float(e_Q), grid)
    return ReducedKernel(K, basis, kernel)


def snapshot_config(cfg, n_x: int = 64, n_t: int = 16):
    """Copy of a 1D FvmConfig that stores n_t × n_x uniformly spaced snapshots."""
    from dataclasses import replace
    cells = int(np.prod(cfg.cells))
    if cells % n_x:
        raise ValueError(f"{cells} cells cannot be sampled uniformly at {n_x} points")
    times = tuple(np.linspace(0.0, cfg.t_end, n_t).tolist())
    return replace(cfg, snapshot_times=times, snapshot_stride=cells // n_x)
