"""End-to-end acceptance checks, one test per criterion.

Each test appends a PASS/FAIL line that the terminal summary prints.
Criteria 9 and 10 train networks and take several minutes each.
"""
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE
from helpers import smooth_periodic
from nsrkinetic.cpd import (CpdTensor, cpd_add, cpd_derivative, cpd_fnorm_sq, cpd_macro_vector,
                            cpd_moments, materialize)
from nsrkinetic.loss import (AdaptiveWeights, CollisionModel, SamplePlan, adaptive_loss_f,
                             adaptive_loss_f_cpd, total_loss)
from nsrkinetic.moments import (DiscreteDistribution, KineticConfig, MacroState, bgk_collision,
                                macro_moments, macro_vector_dense, maxwellian_ddf, moment_tensor)
from nsrkinetic.neural_ansatz import build_split_ansatz
from nsrkinetic.problems import get_problem
from nsrkinetic.reduced_collision import (build_basis, build_kernel_tensor, collect_snapshots,
                                          reduced_collision_values, snapshot_config)
from nsrkinetic.reference_solver import FvmConfig, solve_problem
from nsrkinetic.spectral_collision import (CollisionKernelSpec, DirectQuadrature,
                                           build_spectral_operator, direct_collision_values,
                                           fast_collision_values)
from nsrkinetic.trainer import sample_points
from nsrkinetic.velocity_grid import build_uniform_grid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def report(n, name, ok, detail, t0):
    ACCEPTANCE.append(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail} "
                      f"({time.perf_counter() - t0:.1f} s)")
    assert ok, detail


def _rand_cpd(rng, dims, k):
    return CpdTensor(*(rng.standard_normal((n, k)) for n in dims))


def test_criterion_01_fnorm():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        dims = tuple(rng.integers(1, 9, 3))
        t = _rand_cpd(rng, dims, int(rng.integers(1, 5)))
        dense = (materialize(t) ** 2).sum()
        worst = max(worst, abs(cpd_fnorm_sq(t) - dense) / dense)
    took = time.perf_counter() - t0
    report(1, "CPD Frobenius norm", worst <= 1e-11 and took < 1,
           f"max rel err {worst:.2e} (<= 1e-11)", t0)


def test_criterion_02_closure():
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    worst, ranks_ok = 0.0, True
    for _ in range(100):
        dims = tuple(rng.integers(1, 9, 3))
        k1, k2 = (int(k) for k in rng.integers(0, 5, 2))
        a, b = _rand_cpd(rng, dims, k1), _rand_cpd(rng, dims, k2)
        for sign in (1, -1):
            s = cpd_add(a, b, sign)
            ranks_ok &= s.rank == k1 + k2
            worst = max(worst, np.abs(materialize(s) - (materialize(a) + sign * materialize(b))).max())
        dP, dQ, dR = (rng.standard_normal(F.shape) for F in a.factors)
        d = cpd_derivative(a, dP, dQ, dR)
        ranks_ok &= d.rank == 3 * k1
        want = sum(materialize(CpdTensor(*f)) for f in ((dP, a.Q, a.R), (a.P, dQ, a.R), (a.P, a.Q, dR)))
        worst = max(worst, np.abs(materialize(d) - want).max())
    report(2, "CPD closure", worst <= 1e-13 and ranks_ok and time.perf_counter() - t0 < 1,
           f"max abs err {worst:.2e} (<= 1e-13), ranks exact: {ranks_ok}", t0)


def test_criterion_03_moments():
    t0 = time.perf_counter()
    rng = np.random.default_rng(103)
    grid = build_uniform_grid(-6, 6, (8, 8, 8))
    exps = [(i, j, k) for i in range(3) for j in range(3) for k in range(3)]
    worst = 0.0
    for _ in range(50):
        t = _rand_cpd(rng, grid.shape, int(rng.integers(1, 5)))
        vals = materialize(t).ravel()
        mv_dense = macro_vector_dense(vals, grid)
        worst = max(worst, np.abs(cpd_macro_vector(t, grid) - mv_dense).max() / max(1, np.abs(mv_dense).max()))
        f = DiscreteDistribution(vals, grid)
        i1, i2, i3 = exps[int(rng.integers(len(exps)))]
        want = moment_tensor(f, i1, i2, i3)
        worst = max(worst, abs(cpd_moments(t, grid, i1, i2, i3) - want) / max(1.0, abs(want)))
    report(3, "CPD moments", worst <= 1e-12 and time.perf_counter() - t0 < 1,
           f"max rel err {worst:.2e} (<= 1e-12)", t0)


def test_criterion_04_bgk():
    t0 = time.perf_counter()
    g24 = build_uniform_grid(-10, 10, (24, 24, 24))
    M = maxwellian_ddf(MacroState(1.0, (0.5, 0.0, -0.3), 1.1), g24)
    fixed = np.abs(bgk_collision(M, KineticConfig(kn=1.0)).values).max()
    rng = np.random.default_rng(104)
    g8 = build_uniform_grid(-6, 6, (8, 8, 8))
    worst = 0.0
    for _ in range(20):
        v = rng.random(g8.n_v) + 1e-3
        q = bgk_collision(DiscreteDistribution(v / (v @ g8.weights), g8), KineticConfig(kn=0.1)).values
        rho, m, e = macro_moments(q, g8)
        worst = max(worst, abs(rho), np.abs(m).max(), abs(e.sum()))
    ok = fixed <= 1e-6 and worst <= 1e-10 and time.perf_counter() - t0 < 10
    report(4, "BGK fixed point and conservation", ok,
           f"|Q[M]| {fixed:.2e} (<= 1e-6), moments {worst:.2e} (<= 1e-10)", t0)


def test_criterion_05_spectral_vs_direct():
    t0 = time.perf_counter()
    spec = CollisionKernelSpec.for_knudsen(1.0, sphere_points=(16, 16))
    quad = DirectQuadrature(radial=16, g_sphere=(14, 28), sigma=(14, 14))
    gaps, masses = {}, []
    for n in (8, 12):
        g = build_uniform_grid(-5, 5, (n, n, n))
        op = build_spectral_operator(g, spec)
        # one batched direct call shares the σ phase tensors across the 10 cases
        f = np.stack([smooth_periodic(g, np.random.default_rng(seed)) for seed in range(10)])
        qf = fast_collision_values(f, op)
        qd = direct_collision_values(f, None, g, spec, quad)
        gaps[n] = list(np.linalg.norm(qf - qd, axis=1) / np.linalg.norm(qd, axis=1))
        masses.extend(np.abs(qf @ g.weights) / (np.abs(qf) @ g.weights))
    g8, g12 = np.array(gaps[8]), np.array(gaps[12])
    ok = g8.max() <= 1e-2 and (g12 < g8).all() and max(masses) <= 1e-10 \
        and time.perf_counter() - t0 < 300
    report(5, "fast vs direct collision", ok,
           f"max gap 8^3 {g8.max():.2e} (<= 1e-2), 12^3 {g12.max():.2e}, decreasing in "
           f"{(g12 < g8).sum()}/10, mass {max(masses):.1e} (<= 1e-10)", t0)


def test_criterion_06_reduced_model():
    t0 = time.perf_counter()
    grid = build_uniform_grid(-8, 8, (16, 16, 16))
    op = build_spectral_operator(grid, CollisionKernelSpec.for_knudsen(1.0))
    prob, kin = get_problem("wave1d"), KineticConfig(kn=1.0)
    rec = solve_problem(prob, grid, snapshot_config(FvmConfig(cells=(128,)), 64, 16), kin)
    snap = collect_snapshots(rec)
    model = build_kernel_tensor(build_basis(snap, op, 40, 40), op)
    basis = model.basis
    # held out: odd cells (training used even ones) at a time between snapshot times
    held = solve_problem(prob, grid, FvmConfig(cells=(128,), t_end=0.05, snapshot_times=(0.05,)),
                         kin).snapshots[0][1::8][:16]
    qf = fast_collision_values(held, op)
    qr = reduced_collision_values(held, model)
    held_err = (np.linalg.norm(qf - qr, axis=1) / np.linalg.norm(qf, axis=1)).max()
    rng = np.random.default_rng(106)
    cons = 0.0
    for _ in range(10):
        f = rng.standard_normal(grid.n_v)
        rho, m, e = macro_moments(reduced_collision_values(f, model), grid)
        cons = max(cons, max(abs(rho), np.abs(m).max(), abs(e.sum())) / np.linalg.norm(f))
    f = held[0]
    homog = np.array_equal(reduced_collision_values(4.0 * f, model), 16.0 * reduced_collision_values(f, model))
    ok = (snap.n_s >= 128 and basis.e_A <= 5e-3 and held_err <= 5e-2 and cons <= 1e-10 and homog
          and time.perf_counter() - t0 < 900)
    report(6, "reduced collision model", ok,
           f"N_s {snap.n_s}, e_A {basis.e_A:.2e} (<= 5e-3), held-out {held_err:.2e} (<= 5e-2), "
           f"conservation {cons:.1e} (<= 1e-10), homogeneity exact: {homog}", t0)


def test_criterion_07_gradients():
    t0 = time.perf_counter()
    grid = build_uniform_grid(-5, 5, (6, 6, 6))
    prob = get_problem("wave1d")
    ansatz = build_split_ansatz(1, grid, width=16, depth=3, mode="cpd", rank=2, omega=3.0, seed=7)
    weights = AdaptiveWeights(grid.shape)
    rng = np.random.default_rng(107)
    with torch.no_grad():
        for v in weights.raw.values():
            v.copy_(torch.tensor(rng.uniform(0.5, 1.5, v.shape)))
    samples = sample_points(SamplePlan(6, 6, 10, seed=1), prob)
    params = ansatz.params + weights.params
    model = CollisionModel("bgk", tau=1.0)

    def loss():
        return total_loss(ansatz, weights, samples, prob, grid, model)[0]

    L = loss()
    grads = torch.autograd.grad(L, params)
    h, worst = 1e-6, 0.0
    for _ in range(20):
        dirs = [torch.tensor(rng.standard_normal(p.shape)) for p in params]
        analytic = sum((g * d).sum() for g, d in zip(grads, dirs)).item()
        vals = []
        with torch.no_grad():
            for s in (1, -1):
                for p, d in zip(params, dirs):
                    p.add_(s * h * d)
                vals.append(loss().item())
                for p, d in zip(params, dirs):
                    p.sub_(s * h * d)
        fd = (vals[0] - vals[1]) / (2 * h)
        worst = max(worst, abs(fd - analytic) / max(abs(analytic), 1e-12))
    report(7, "parameter gradients", worst <= 1e-5 and time.perf_counter() - t0 < 60,
           f"max rel err {worst:.2e} (<= 1e-5)", t0)


def test_criterion_08_loss_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(108)
    worst = 0.0
    for i in range(50):
        dims = tuple(int(n) for n in rng.integers(2, 13, 3))
        which = ("ic", "bc", "pde")[i % 3]
        w = AdaptiveWeights(dims)
        with torch.no_grad():
            for k, v in w.raw.items():
                if k.startswith(which):
                    v.copy_(torch.tensor(rng.uniform(-1.5, 1.5, v.shape)))
        k = int(rng.integers(1, 5))
        r = CpdTensor(*[torch.tensor(rng.standard_normal((3, n, k))) for n in dims])
        dense = adaptive_loss_f(materialize(r).reshape(3, -1), w, which).item()
        fast = adaptive_loss_f_cpd(r, w, which).item()
        worst = max(worst, abs(fast - dense) / max(1.0, abs(dense)))
    report(8, "dense vs CPD loss", worst <= 1e-10 and time.perf_counter() - t0 < 10,
           f"max rel err {worst:.2e} (<= 1e-10)", t0)


def test_criterion_09_desk_wave1d(tmp_path):
    from nsrkinetic.cli import cmd_evaluate, cmd_run_reference, cmd_train, load_spec
    t0 = time.perf_counter()
    spec = load_spec(CONFIGS / "wave1d_desk.toml")
    assert (spec.grid.n, spec.grid.lower, spec.grid.upper) == ((16, 16, 16), -8.0, 8.0)
    assert spec.network.rank == 8 and spec.training.steps == 2000 and spec.kn == 1.0
    assert (spec.sampling.n_ic, spec.sampling.n_bc, spec.sampling.n_pde) == (100, 200, 500)
    cmd_run_reference(spec, tmp_path / "ref")
    t_ref = time.perf_counter() - t0
    result = cmd_train(spec, tmp_path / "train")
    doc = cmd_evaluate(spec, tmp_path / "eval", tmp_path / "train" / "final.ckpt",
                       tmp_path / "ref" / "record.bin")
    err = next(r for r in doc["errors"] if r["t"] == pytest.approx(0.1))
    drop = result.history[0]["total"] / result.final_loss
    took = time.perf_counter() - t0
    ok = max(err["rho"], err["u"], err["T"]) <= 2e-2 and took - t_ref <= 1800
    report(9, "desk wave1d NSR_CPD", ok,
           f"t=0.1 rho {err['rho']:.2e} u {err['u']:.2e} T {err['T']:.2e} (<= 2e-2), "
           f"loss drop {drop:.1e}x, reference {t_ref:.0f} s", t0)


def test_criterion_10_transfer(tmp_path):
    from nsrkinetic.cli import cmd_train, load_spec
    t0 = time.perf_counter()
    base = load_spec(CONFIGS / "wave2d_desk.toml")
    shifted = load_spec(CONFIGS / "wave2d_shifted_desk.toml")
    cmd_train(base, tmp_path / "base")
    cold = cmd_train(shifted, tmp_path / "cold")
    warm = cmd_train(shifted, tmp_path / "warm", init_from=tmp_path / "base" / "final.ckpt")
    target = cold.final_loss
    reached = warm.steps_to_reach(target)
    n = shifted.training.steps
    ok = reached is not None and reached <= 0.5 * n and time.perf_counter() - t0 <= 3600
    report(10, "transfer to shifted 2D IC", ok,
           f"warm start reaches cold final loss {target:.4g} at step {reached} of {n} "
           f"(<= {0.5 * n:g})", t0)


def test_criterion_11_reference_convergence():
    t0 = time.perf_counter()
    grid = build_uniform_grid(-8, 8, (16, 16, 16))
    prob, kin = get_problem("wave1d"), KineticConfig(kn=0.1)
    recs = {n: solve_problem(prob, grid, FvmConfig(cells=(n,)), kin) for n in (50, 100, 200)}
    coarse = lambda a: 0.5 * (a[0::2] + a[1::2])
    rho = {n: r.field("rho") for n, r in recs.items()}
    d1 = np.linalg.norm(coarse(rho[100]) - rho[50]) / np.sqrt(50)
    d2 = np.linalg.norm(coarse(rho[200]) - rho[100]) / np.sqrt(100)
    drift = max((np.abs(r.totals[-1] - r.totals[0]) / prob.t_end).max() for r in recs.values())
    ok = d1 / d2 >= 1.5 and drift <= 1e-10 and time.perf_counter() - t0 < 300
    report(11, "reference solver convergence", ok,
           f"differences {d1:.2e} -> {d2:.2e}, ratio {d1 / d2:.2f} (>= 1.5), drift {drift:.1e} "
           f"(<= 1e-10)", t0)
