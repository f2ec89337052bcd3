import csv
import json

import numpy as np
import pytest

from nsrkinetic.cli import (EXIT_CONFIG, EXIT_OK, ConfigError, load_spec, main,
                            validate_errors_json)
from nsrkinetic.neural_ansatz import load_checkpoint
from nsrkinetic.problems import get_problem
from nsrkinetic.reference_solver import load_record
from nsrkinetic.trainer import parameters_equal

SMALL = """
problem = "{problem}"
kn = {kn}
collision = "{collision}"
method = "{method}"
seed = 1

[grid]
lower = -4.5
upper = 4.5
n = [8, 8, 8]

[reference]
cells = [32]
snapshots = true

[network]
width = 8
depth = 2
rank = 2
omega = 1.0
eq_state = [1.0, 1.0]
head_scale = 0.1

[training]
steps = 3

[sampling]
n_ic = 8
n_bc = 8
n_pde = 16

[basis]
n_a = 6
n_b = 6
n_x = 16
n_t = 4

[evaluate]
points = 10
"""


def _config(tmp_path, name="c.toml", problem="wave1d", kn=1.0, collision="bgk", method="nsr_cpd",
            extra=""):
    p = tmp_path / name
    p.write_text(SMALL.format(problem=problem, kn=kn, collision=collision, method=method) + extra)
    return p


@pytest.fixture(scope="module")
def reference_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("ref")
    cfg = _config(d)
    assert main(["run-reference", "--config", str(cfg), "--out", str(d / "out")]) == EXIT_OK
    return cfg, d / "out"


def test_spec_defaults_and_validation(tmp_path):
    spec = load_spec()
    assert spec.network.width == 80 and spec.network.depth == 5
    assert spec.training.steps == 10000 and spec.training.lr0 == 0.005
    assert (spec.sampling.n_ic, spec.sampling.n_bc, spec.sampling.n_pde) == (100, 200, 500)
    with pytest.raises(ConfigError, match="requires collision=bgk"):
        load_spec(_config(tmp_path, collision="quad", method="nsr_cpd"))
    with pytest.raises(ConfigError, match="requires collision=quad"):
        load_spec(_config(tmp_path, collision="bgk", method="nsr_reduced"))
    with pytest.raises(ConfigError, match="network.bogus"):
        load_spec(_write(tmp_path, '[network]\nbogus = 1\n'))
    with pytest.raises(ConfigError, match="training.steps: expected an integer"):
        load_spec(_write(tmp_path, '[training]\nsteps = 1.5\n'))
    with pytest.raises(ConfigError, match="not found"):
        load_spec(tmp_path / "missing.toml")
    assert load_spec(None, {"kn": 0.01, "steps": 7, "seed": 3}).kn == 0.01


def _write(tmp_path, text):
    p = tmp_path / "x.toml"
    p.write_text(text)
    return p


def test_incompatible_method_rejected_before_compute(tmp_path, capsys):
    cfg = _config(tmp_path, collision="quad", method="nsr_cpd")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "CPD residual supports only" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_run_reference_outputs(reference_run):
    cfg, out = reference_run
    rows = list(csv.DictReader(open(out / "macro.csv")))
    assert list(rows[0]) == ["t", "x", "rho", "u1", "T"]
    assert sorted({float(r["t"]) for r in rows}) == [0.0, 0.1]
    assert len(rows) == 64
    rec = load_record(out / "record.bin")
    assert rec.snapshots.shape[:2] == (4, 16)
    echo = json.loads((out / "config.json").read_text())
    assert echo["spec"]["problem"] == "wave1d" and echo["spec"]["kn"] == 1.0


def test_sod_initial_state():
    p = get_problem("sod1d")
    rho, u, T = p.macro_ic(np.array([[-0.5], [0.0], [0.5]]))
    assert rho[0] == pytest.approx(1.0, abs=1e-12) and T[0] == pytest.approx(1.0, abs=1e-12)
    assert rho[2] == pytest.approx(0.125, abs=1e-12) and T[2] == pytest.approx(0.8, abs=1e-12)
    assert rho[1] == pytest.approx(0.5625, abs=1e-15)


def test_build_basis_and_determinism(tmp_path, reference_run):
    cfg, out = reference_run
    rec = str(out / "record.bin")
    for d in ("a", "b"):
        assert main(["build-basis", "--config", str(cfg), "--snapshots", rec,
                     "--out", str(tmp_path / d)]) == EXIT_OK
    assert (tmp_path / "a" / "model.bin").read_bytes() == (tmp_path / "b" / "model.bin").read_bytes()
    side = json.loads((tmp_path / "a" / "model.bin.json").read_text())
    assert side["n_a"] == 6 and 0 <= side["e_A"] < 1
    assert main(["build-basis", "--config", str(cfg), "--out", str(tmp_path / "c")]) == EXIT_CONFIG


def test_train_steps_zero_and_warm_start(tmp_path):
    cfg = _config(tmp_path)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "t0"), "--steps", "0"]) == EXIT_OK
    from nsrkinetic.cli import build_ansatz, velocity_grid
    spec = load_spec(cfg)
    a0, _, header = load_checkpoint(tmp_path / "t0" / "final.ckpt")
    assert parameters_equal(a0, build_ansatz(spec, velocity_grid(spec)))
    assert header["meta"]["grid"]["n"] == [8, 8, 8]
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "t1")]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "t1" / "metrics.csv")))
    assert len(rows) == 4
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "t2"), "--steps", "0",
                 "--init-from", str(tmp_path / "t1" / "final.ckpt")]) == EXIT_OK
    a1, w1, _ = load_checkpoint(tmp_path / "t1" / "final.ckpt")
    a2, w2, _ = load_checkpoint(tmp_path / "t2" / "final.ckpt")
    assert parameters_equal(a1, a2)
    assert all(np.array_equal(w1[k], w2[k]) for k in w1)
    assert not np.array_equal(w1["w_pde_c"], np.ones(7))
    wide = _config(tmp_path, "w.toml", extra="")
    wide.write_text(wide.read_text().replace("width = 8", "width = 9"))
    assert main(["train", "--config", str(wide), "--out", str(tmp_path / "t3"),
                 "--init-from", str(tmp_path / "t1" / "final.ckpt")]) == EXIT_CONFIG


def test_train_reduced_and_quad(tmp_path, reference_run):
    cfg, out = reference_run
    main(["build-basis", "--config", str(cfg), "--snapshots", str(out / "record.bin"),
          "--out", str(tmp_path / "basis")])
    model = tmp_path / "basis" / "model.bin"
    red = _config(tmp_path, "r.toml", collision="quad", method="nsr_reduced")
    red.write_text(red.read_text().replace('n_t = 4', f'n_t = 4\nmodel = "{model}"'))
    assert main(["train", "--config", str(red), "--out", str(tmp_path / "r")]) == EXIT_OK
    quad = _config(tmp_path, "q.toml", collision="quad", method="nr_quad")
    assert main(["train", "--config", str(quad), "--out", str(tmp_path / "q"), "--steps", "1"]) == EXIT_OK
    dense = _config(tmp_path, "d.toml", method="nr_dense")
    assert main(["train", "--config", str(dense), "--out", str(tmp_path / "d"), "--steps", "1"]) == EXIT_OK


def test_evaluate_outputs_and_schema(tmp_path, reference_run):
    cfg, out = reference_run
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "t")])
    ck = tmp_path / "t" / "final.ckpt"
    assert main(["evaluate", "--config", str(cfg), "--checkpoint", str(ck),
                 "--reference", str(out / "record.bin"), "--out", str(tmp_path / "e")]) == EXIT_OK
    doc = json.loads((tmp_path / "e" / "errors.json").read_text())
    validate_errors_json(doc)
    assert [r["t"] for r in doc["errors"]] == [0.0, 0.1]
    rows = list(csv.DictReader(open(tmp_path / "e" / "errors.csv")))
    assert list(rows[0]) == ["t", "rho", "u", "T"]
    import jsonschema
    with pytest.raises(jsonschema.ValidationError):
        validate_errors_json({**doc, "errors": [{"t": 0, "rho": -1, "u": 0, "T": 0}]})


def test_evaluate_against_own_fields_is_zero(tmp_path, reference_run):
    from nsrkinetic.cli import evaluate_against
    from nsrkinetic.reference_solver import SolutionRecord, cell_centers
    from nsrkinetic.trainer import predict_fields
    cfg, out = reference_run
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "t")])
    a, _, _ = load_checkpoint(tmp_path / "t" / "final.ckpt")
    rec = load_record(out / "record.bin")
    x = cell_centers(-0.5, 0.5, 10)[:, None]
    fields = np.stack([predict_fields(a, rec.grid, x, t) for t in (0.0, 0.1)])
    own = SolutionRecord(rec.grid, (-0.5,), (0.5,), (10,), np.array([0.0, 0.1]), fields,
                         np.zeros((2, 5)), meta={"boundary": "periodic"})
    rows = evaluate_against(a, rec.grid, own, get_problem("wave1d"), 10, (0.0, 0.1))
    assert all(r[k] < 1e-12 for r in rows for k in ("rho", "u", "T"))


def test_evaluate_problem_mismatch(tmp_path, reference_run):
    cfg, out = reference_run
    sod = _config(tmp_path, "s.toml", problem="sod1d")
    main(["train", "--config", str(sod), "--out", str(tmp_path / "s")])
    assert main(["evaluate", "--config", str(cfg), "--checkpoint", str(tmp_path / "s" / "final.ckpt"),
                 "--reference", str(out / "record.bin"), "--out", str(tmp_path / "e")]) == EXIT_CONFIG
