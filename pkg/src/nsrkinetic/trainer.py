"""Monte Carlo sampling, Adam with cosine annealing and the training loop."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .cpd import CpdTensor
from .loss import AdaptiveWeights, CollisionModel, SamplePlan, SampleSet, total_loss
from .neural_ansatz import (DTYPE, SplitAnsatz, ansatz_forward, check_compatible,
                            flat_parameters, load_checkpoint, save_checkpoint)

METRIC_COLUMNS = ("step", "lr", "ic_f", "ic_c", "bc_f", "bc_c", "pde_f", "pde_c",
                  "ic", "bc", "pde", "total", "wall_time")


class TrainingDiverged(FloatingPointError):
    def __init__(self, diagnostic: dict):
        self.diagnostic = diagnostic
        super().__init__(f"non-finite loss at step {diagnostic['step']}: {diagnostic}")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 10000
    lr0: float = 0.005
    t_max: int | None = None          # defaults to steps
    pi_factor: bool = False
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    resample_interval: int = 0        # 0 keeps the first sample sets
    checkpoint_interval: int = 0
    stop_loss: float | None = None    # stop once the total loss falls to this value
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.t_max is not None and self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.resample_interval < 0 or self.checkpoint_interval < 0:
            raise ValueError("intervals must be non-negative")

    @property
    def annealing_length(self):
        return self.t_max if self.t_max is not None else max(self.steps, 1)


# ------------------------------------------------------------------- sampling

def _check_domain(problem):
    lo, hi = np.asarray(problem.lower, float), np.asarray(problem.upper, float)
    if lo.shape != (problem.dim,) or hi.shape != (problem.dim,):
        raise ValueError("domain bounds do not match the problem dimension")
    if not np.all(hi > lo) or not problem.t_end > 0:
        raise ValueError(f"degenerate domain {problem.lower}..{problem.upper}, t_end={problem.t_end}")
    return lo, hi


def sample_points(plan: SamplePlan, problem, seed: int | None = None) -> SampleSet:
    """Uniform i.i.d. points for the IC, BC and PDE sets.

    Each of the ``n_bc`` boundary samples is a matched pair (bc_a, bc_b): the
    same time and tangential coordinate on opposite faces. The face axis is x
    for Dirichlet problems and drawn at random for periodic ones.
    """
    lo, hi = _check_domain(problem)
    rng = np.random.default_rng(plan.seed if seed is None else seed)
    dim = problem.dim

    def box(n):
        return lo + (hi - lo) * rng.random((n, dim))

    ic = np.concatenate([box(plan.n_ic), np.zeros((plan.n_ic, 1))], 1)
    tb = problem.t_end * rng.random((plan.n_bc, 1))
    a = box(plan.n_bc)
    if problem.boundary == "dirichlet" or dim == 1:
        axis = np.zeros(plan.n_bc, int)
    else:
        axis = rng.integers(0, dim, plan.n_bc)
    rows = np.arange(plan.n_bc)
    b = a.copy()
    a[rows, axis] = lo[axis]
    b[rows, axis] = hi[axis]
    pde = np.concatenate([box(plan.n_pde), problem.t_end * rng.random((plan.n_pde, 1))], 1)
    t = lambda z: torch.tensor(z, dtype=DTYPE)
    return SampleSet(t(ic), t(np.concatenate([a, tb], 1)), t(np.concatenate([b, tb], 1)), t(pde))


# ------------------------------------------------------------------- schedule

def lr_schedule(cfg: TrainConfig, i: int) -> float:
    """½η₀(1 + cos(i/T_max)), or with π·i/T_max when ``pi_factor`` is set."""
    if i < 0:
        raise ValueError("step index must be non-negative")
    arg = i / cfg.annealing_length
    if cfg.pi_factor:
        arg *= math.pi
    return 0.5 * cfg.lr0 * (1.0 + math.cos(arg))


# ---------------------------------------------------------------- train loop

@dataclass
class TrainResult:
    ansatz: SplitAnsatz
    weights: AdaptiveWeights
    history: list = field(default_factory=list)

    @property
    def final_loss(self):
        return self.history[-1]["total"] if self.history else math.nan

    def steps_to_reach(self, target):
        """First logged step whose total loss is ≤ target, or None."""
        for row in self.history:
            if row["total"] <= target:
                return row["step"]
        return None


def _row(step, lr, parts, t0):
    vals = {k: float(v.detach()) for k, v in parts.items()}
    for s in ("ic", "bc", "pde"):
        vals[s] = vals[f"{s}_f"] + vals[f"{s}_c"]
    vals["total"] = vals["ic"] + vals["bc"] + vals["pde"]
    return {"step": step, "lr": lr, **vals, "wall_time": time.perf_counter() - t0}


def _save(path, ansatz, weights, meta):
    save_checkpoint(path, ansatz, weights.state(), meta)


def train(ansatz: SplitAnsatz, weights: AdaptiveWeights, problem, grid, model: CollisionModel,
          plan: SamplePlan, cfg: TrainConfig, out_dir=None, log=None,
          meta: dict | None = None) -> TrainResult:
    """Adam over network and weight parameters; one row per step in the history.

    The row for step i holds the loss evaluated before update i; a final row
    (step = number of updates) holds the loss after the last update. With
    ``out_dir`` set, metrics.csv, periodic checkpoints and final.ckpt are
    written there.
    """
    torch.manual_seed(cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    params = ansatz.params + weights.params
    opt = torch.optim.Adam(params, lr=cfg.lr0, betas=tuple(cfg.betas), eps=cfg.adam_eps)
    samples = sample_points(plan, problem, cfg.seed)
    meta = {"problem": problem.name, "train": asdict(cfg), "plan": asdict(plan),
            "collision": model.kind, "tau": model.tau, **(meta or {})}
    result = TrainResult(ansatz, weights)
    fh = writer = None
    if out is not None:
        fh = open(out / "metrics.csv", "w", newline="")
        writer = csv.DictWriter(fh, METRIC_COLUMNS)
        writer.writeheader()
    t0 = time.perf_counter()
    try:
        step = 0
        while True:
            if cfg.resample_interval and step and step % cfg.resample_interval == 0:
                samples = sample_points(plan, problem, cfg.seed + step)
            lr = lr_schedule(cfg, step)
            loss, parts = total_loss(ansatz, weights, samples, problem, grid, model)
            row = _row(step, lr, parts, t0)
            if not math.isfinite(row["total"]):
                diag = {k: row[k] for k in METRIC_COLUMNS if k != "wall_time"}
                if out is not None:
                    (out / "diagnostic.json").write_text(json.dumps(diag, indent=2))
                raise TrainingDiverged(diag)
            result.history.append(row)
            if writer is not None:
                writer.writerow(row)
            if log is not None:
                log(row)
            done = step >= cfg.steps or (cfg.stop_loss is not None and row["total"] <= cfg.stop_loss)
            if done:
                break
            for g in opt.param_groups:
                g["lr"] = lr
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            step += 1
            if out is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
                _save(out / f"step_{step:06d}.ckpt", ansatz, weights, {**meta, "step": step})
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        _save(out / "final.ckpt", ansatz, weights, {**meta, "step": step})
    return result


def warm_start(checkpoint, like: SplitAnsatz | None = None) -> SplitAnsatz:
    """Ansatz initialized from a checkpoint (path or loaded ansatz).

    With ``like`` given, the architectures must match and the parameters are
    copied into ``like``, which is returned.
    """
    src = load_checkpoint(checkpoint)[0] if not isinstance(checkpoint, SplitAnsatz) else checkpoint
    if like is None:
        return src
    check_compatible(like, src)
    with torch.no_grad():
        for p, q in zip(like.params, src.params):
            p.copy_(q)
    return like


def fit_regression(net, x, y, cfg: TrainConfig, forward_fn):
    """Plain mean-squared-error fit with the same optimizer and schedule."""
    opt = torch.optim.Adam(net.params, lr=cfg.lr0, betas=tuple(cfg.betas), eps=cfg.adam_eps)
    for i in range(cfg.steps):
        for g in opt.param_groups:
            g["lr"] = lr_schedule(cfg, i)
        loss = ((forward_fn(x) - y) ** 2).mean()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    with torch.no_grad():
        return float(((forward_fn(x) - y) ** 2).mean())


def parameters_equal(a: SplitAnsatz, b: SplitAnsatz) -> bool:
    return bool(torch.equal(flat_parameters(a.params), flat_parameters(b.params)))


def predict_fields(ansatz: SplitAnsatz, grid, x, t, batch: int = 256):
    """(rho, u1, u2, u3, T) of the ansatz at rows of (x, t), as a numpy array (n, 5)."""
    from .loss import macro_vector
    x = torch.as_tensor(np.asarray(x, float).reshape(len(x), -1), dtype=DTYPE)
    t = torch.as_tensor(np.broadcast_to(np.asarray(t, float), (len(x),)).copy(), dtype=DTYPE)
    rows = []
    with torch.no_grad():
        for s in range(0, len(x), batch):
            f = ansatz_forward(ansatz, grid, x[s:s + batch], t[s:s + batch]).f
            if not isinstance(f, CpdTensor):
                f = f.reshape(f.shape[0], -1)
            mv = macro_vector(f, grid).numpy()
            rho = mv[:, 0]
            u = mv[:, 1:4] / rho[:, None]
            T = (2 * mv[:, 4:].sum(-1) / rho - (u * u).sum(-1)) / 3
            rows.append(np.concatenate([rho[:, None], u, T[:, None]], 1))
    return np.concatenate(rows, 0)
