import numpy as np
import pytest

from nsrkinetic.moments import KineticConfig, UnphysicalStateError, macro_moments
from nsrkinetic.problems import get_problem
from nsrkinetic.reference_solver import (FvmConfig, NumericalFailure, cell_centers,
                                         equilibrium_field, error_metrics, load_record,
                                         save_record, solve, solve_problem)
from nsrkinetic.spectral_collision import CollisionKernelSpec, build_spectral_operator
from nsrkinetic.velocity_grid import build_uniform_grid

G8 = build_uniform_grid(-4.5, 4.5, (8, 8, 8))
G16 = build_uniform_grid(-8, 8, (16, 16, 16))


def _uniform(n, grid, rho=1.2, u=(0.3, -0.1, 0.2), T=0.9):
    return (np.full(n, rho), np.tile(np.asarray(u, float), (n, 1)), np.full(n, T))


@pytest.mark.parametrize("collision", ["bgk", "none"])
def test_uniform_maxwellian_is_steady(collision):
    cfg = FvmConfig(cells=(16,), t_end=0.05, collision=collision)
    rec = solve(_uniform(16, G8), G8, cfg, KineticConfig(kn=0.01))
    np.testing.assert_allclose(rec.fields[-1], rec.fields[0], rtol=0, atol=1e-12)


def test_uniform_maxwellian_dirichlet_matching_far_field():
    cfg = FvmConfig(cells=(12,), t_end=0.05, boundary="dirichlet")
    state = (1.2, (0.3, -0.1, 0.2), 0.9)
    rec = solve(_uniform(12, G8), G8, cfg, KineticConfig(kn=0.1), boundary_states=(state, state))
    np.testing.assert_allclose(rec.fields[-1], rec.fields[0], rtol=0, atol=1e-12)


def test_collisionless_mass_conservation():
    n = 32
    x = cell_centers(-0.5, 0.5, n)
    rng = np.random.default_rng(0)
    f = rng.random((n, G8.n_v)) * (1 + 0.5 * np.sin(2 * np.pi * x))[:, None]
    rec = solve(f, G8, FvmConfig(cells=(n,), t_end=0.1, collision="none"), KineticConfig(kn=1e6))
    assert abs(rec.totals[-1, 0] - rec.totals[0, 0]) <= 1e-12 * rec.totals[0, 0]


def test_bgk_periodic_conservation_drift():
    rec = solve_problem(get_problem("wave1d"), G8, FvmConfig(cells=(40,)), KineticConfig(kn=0.05))
    drift = np.abs(rec.totals[-1] - rec.totals[0]) / rec.meta["config"]["t_end"]
    assert drift.max() <= 1e-10


def test_bgk_2d_conservation():
    rec = solve_problem(get_problem("wave2d"), G8, FvmConfig(cells=(8, 8), t_end=0.02),
                        KineticConfig(kn=0.1))
    assert np.abs(rec.totals[-1] - rec.totals[0]).max() <= 1e-10
    rho = rec.field("rho")
    # IC and split scheme are both symmetric under point inversion (x, v) -> (-x, -v)
    np.testing.assert_allclose(rho, rho[::-1, ::-1], atol=1e-12)


def test_relaxation_keeps_positivity_at_small_kn():
    rec = solve_problem(get_problem("sod1d"), G8, FvmConfig(cells=(32,), boundary="dirichlet",
                                                            t_end=0.05), KineticConfig(kn=1e-4))
    assert rec.field("rho").min() > 0.1
    assert rec.field("T").min() > 0


def test_sod_far_field_values():
    rec = solve_problem(get_problem("sod1d"), G8, FvmConfig(cells=(40,), boundary="dirichlet",
                                                            t_end=0.02), KineticConfig(kn=0.01))
    rho0, T0 = rec.field("rho", 0), rec.field("T", 0)
    assert rho0[0] == pytest.approx(1.0, abs=1e-12)
    assert rho0[-1] == pytest.approx(0.125, abs=1e-12)
    assert T0[0] == pytest.approx(1.0, abs=1e-12)
    assert T0[-1] == pytest.approx(0.8, abs=1e-12)


def test_wave_grid_convergence_order():
    prob = get_problem("wave1d")
    rho = {n: solve_problem(prob, G8, FvmConfig(cells=(n,)), KineticConfig(kn=0.1)).field("rho")
           for n in (25, 50, 100)}
    coarse = lambda a: 0.5 * (a[0::2] + a[1::2])
    d1 = np.linalg.norm(coarse(rho[50]) - rho[25]) / np.sqrt(25)
    d2 = np.linalg.norm(coarse(rho[100]) - rho[50]) / np.sqrt(50)
    assert d1 / d2 >= 1.5


def test_spectral_collision_run_conserves_mass():
    g = G8
    op = build_spectral_operator(g, CollisionKernelSpec.for_knudsen(0.5))
    rec = solve_problem(get_problem("wave1d"), g, FvmConfig(cells=(8,), t_end=0.01,
                                                            collision="spectral"),
                        KineticConfig(kn=0.5), operator=op)
    assert abs(rec.totals[-1, 0] - rec.totals[0, 0]) <= 1e-12
    with pytest.raises(ValueError):
        solve_problem(get_problem("wave1d"), g, FvmConfig(cells=(8,), collision="spectral"))


def test_bad_configs():
    for kw in [dict(cfl=1.2), dict(cfl=0.0), dict(cells=(3,)), dict(boundary="wall"),
               dict(output_times=(0.0, 0.2)), dict(cells=(4, 4, 4))]:
        with pytest.raises(ValueError):
            FvmConfig(**kw)
    with pytest.raises(ValueError):
        solve(np.ones((5, G8.n_v)), G8, FvmConfig(cells=(6,)))


def test_negative_density_detected():
    f = np.ones((8, G8.n_v))
    f[3] = -5.0
    with pytest.raises(NumericalFailure):
        solve(f, G8, FvmConfig(cells=(8,), t_end=0.01, collision="none"))


def test_snapshots_and_output_times():
    cfg = FvmConfig(cells=(16,), t_end=0.03, output_times=(0.0, 0.01, 0.03),
                    snapshot_times=(0.0, 0.015, 0.03), snapshot_stride=4)
    rec = solve_problem(get_problem("wave1d"), G8, cfg, KineticConfig(kn=0.1))
    np.testing.assert_allclose(rec.times, [0.0, 0.01, 0.03])
    assert rec.snapshots.shape == (3, 4, G8.n_v)
    rho = macro_moments(rec.snapshots[-1], G8)[0]
    np.testing.assert_allclose(rho, rec.field("rho")[::4], rtol=1e-13)


def test_record_round_trip(tmp_path):
    cfg = FvmConfig(cells=(8,), t_end=0.01, snapshot_times=(0.01,), snapshot_stride=2)
    rec = solve_problem(get_problem("wave1d"), G8, cfg, KineticConfig(kn=0.1))
    path = tmp_path / "ref.bin"
    save_record(rec, path)
    back = load_record(path)
    assert back.grid.same_as(rec.grid)
    assert back.cells == rec.cells
    np.testing.assert_array_equal(back.fields, rec.fields)
    np.testing.assert_array_equal(back.snapshots, rec.snapshots)
    np.testing.assert_array_equal(back.snapshot_cells, rec.snapshot_cells)
    assert back.meta["problem"] == "wave1d"
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage!" + path.read_bytes()[8:])
    with pytest.raises(ValueError):
        load_record(bad)


def test_interpolation_reproduces_nodes_and_wraps():
    rec = solve_problem(get_problem("wave1d"), G8, FvmConfig(cells=(10,), t_end=0.01),
                        KineticConfig(kn=0.1))
    x = cell_centers(-0.5, 0.5, 10)[:, None]
    np.testing.assert_allclose(rec.interpolate("rho", 0.0, x), rec.field("rho", 0), rtol=1e-14)
    edge = rec.interpolate("rho", 0.0, np.array([[-0.5], [0.5]]))
    r0 = rec.field("rho", 0)
    assert edge[0] == pytest.approx(0.5 * (r0[0] + r0[-1]))
    assert edge[1] == pytest.approx(edge[0])


def test_error_metrics_examples():
    rng = np.random.default_rng(0)
    f = {"rho": rng.random(20) + 1, "u": rng.random(20), "T": rng.random(20) + 1}
    assert error_metrics(f, f) == {"rho": 0.0, "u": 0.0, "T": 0.0}
    n = 9
    e = error_metrics({"u": np.zeros(n)}, {"u": np.full(n, 0.1)})
    assert e["u"] == pytest.approx(0.1 * np.sqrt(n))
    ref = rng.random(30) + 0.5
    assert error_metrics({"rho": 2 * ref}, {"rho": ref})["rho"] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        error_metrics({"rho": np.zeros(0)}, {"rho": np.zeros(0)})


def test_unresolvable_temperature_rejected():
    coarse = build_uniform_grid(-6, 6, (8, 8, 8))   # spacing 1.5: T below 0.5625 unreachable
    with pytest.raises(UnphysicalStateError):
        equilibrium_field(np.ones(1), np.zeros((1, 3)), np.full(1, 0.5), coarse)


def test_equilibrium_field_matches_requested_moments():
    rho, u, T = np.array([0.7, 1.4]), np.array([[0.2, 0, 0], [-0.5, 0.1, 0]]), np.array([0.8, 1.3])
    f = equilibrium_field(rho, u, T, G8)
    r, m, e = macro_moments(f, G8)
    np.testing.assert_allclose(r, rho, rtol=1e-13)
    np.testing.assert_allclose(m, rho[:, None] * u, atol=1e-13)
    np.testing.assert_allclose(e.sum(-1), 0.5 * rho * (3 * T + (u * u).sum(-1)), rtol=1e-13)
