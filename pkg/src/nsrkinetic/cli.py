"""Command-line front end: run-reference, build-basis, train, evaluate.

Experiments are described by a TOML file (see configs/); flags override a
few fields. Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:          # python < 3.11
    import tomli as tomllib

from .moments import KineticConfig, UnphysicalStateError
from .problems import PROBLEMS, get_problem
from .reference_solver import (FIELD_NAMES, FvmConfig, NumericalFailure, error_metrics,
                               load_record, save_record, solve_problem)
from .velocity_grid import build_uniform_grid

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
METHODS = ("nr_dense", "nsr_cpd", "nr_quad", "nsr_reduced", "reference")
SCHEMA_PATH = Path(__file__).with_name("errors.schema.json")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ configs

@dataclass
class GridSection:
    lower: float = -8.0
    upper: float = 8.0
    n: tuple = (16, 16, 16)


@dataclass
class ReferenceSection:
    cells: tuple = (400,)
    cfl: float = 0.5
    reconstruction: str = "minmod"
    snapshots: bool = False          # store n_t x n_x distributions (basis section)
    record: str = ""                 # existing record for evaluate / build-basis


@dataclass
class NetworkSection:
    width: int = 80
    depth: int = 5
    rank: int = 8
    C: float = 0.1
    scales: tuple = (1.0, 4.0, 16.0)
    time_scale: float = 1.0
    omega: float = 30.0
    head_scale: float = 1.0
    eq_state: tuple = ()             # (rho, T) for the initial equilibrium, empty = none


@dataclass
class TrainingSection:
    steps: int = 10000
    lr0: float = 0.005
    t_max: int = 0                   # 0 = steps
    pi_factor: bool = False
    resample_interval: int = 0
    checkpoint_interval: int = 0
    eps: float = 1e-6
    warm_weights: bool = True        # --init-from also restores the adaptive weights


@dataclass
class SamplingSection:
    n_ic: int = 100
    n_bc: int = 200
    n_pde: int = 500


@dataclass
class BasisSection:
    n_a: int = 40
    n_b: int = 40
    n_x: int = 64
    n_t: int = 16
    model: str = ""                  # reduced model file used by nsr_reduced training


@dataclass
class EvaluateSection:
    points: int = 100                # per spatial axis
    times: tuple = (0.0, 0.1)


@dataclass
class ExperimentSpec:
    problem: str = "wave1d"
    kn: float = 1.0
    collision: str = "bgk"
    method: str = "nsr_cpd"
    seed: int = 0
    grid: GridSection = field(default_factory=GridSection)
    reference: ReferenceSection = field(default_factory=ReferenceSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    basis: BasisSection = field(default_factory=BasisSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem: unknown {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if self.method not in METHODS:
            raise ConfigError(f"method: unknown {self.method!r}; choose from {list(METHODS)}")
        if self.collision not in ("bgk", "quad"):
            raise ConfigError(f"collision: must be bgk or quad, got {self.collision!r}")
        if not self.kn > 0:
            raise ConfigError("kn: must be positive")
        need = {"nr_dense": "bgk", "nsr_cpd": "bgk", "nr_quad": "quad", "nsr_reduced": "quad"}
        if self.method in need and self.collision != need[self.method]:
            why = (" (the CPD residual supports only the rank-one BGK collision)"
                   if self.method == "nsr_cpd" else "")
            raise ConfigError(f"method {self.method} requires collision={need[self.method]}, "
                              f"got {self.collision}{why}")
        g = self.grid
        if not g.upper > g.lower or len(g.n) != 3 or min(g.n) < 2:
            raise ConfigError("grid: need upper > lower and three axis counts >= 2")
        if len(self.reference.cells) != get_problem(self.problem).dim:
            raise ConfigError(f"reference.cells: {self.problem} needs "
                              f"{get_problem(self.problem).dim} cell counts")
        if self.network.eq_state and len(self.network.eq_state) != 2:
            raise ConfigError("network.eq_state: expected [rho, T]")
        if self.training.steps < 0:
            raise ConfigError("training.steps: must be non-negative")
        return self


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{where}.{key}: unknown field" if where else f"{key}: unknown field")
        default = getattr(cls(), key)
        name = f"{where}.{key}" if where else key
        if is_dataclass(default):
            kwargs[key] = _build(type(default), value, name)
        elif isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{name}: expected a list")
            kwargs[key] = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{name}: expected true/false")
            kwargs[key] = value
        elif isinstance(default, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name}: expected a number, got {value!r}")
            if isinstance(default, int) and not isinstance(default, bool) and not float(value).is_integer():
                raise ConfigError(f"{name}: expected an integer, got {value!r}")
            kwargs[key] = type(default)(value)
        else:
            if not isinstance(value, str):
                raise ConfigError(f"{name}: expected a string")
            kwargs[key] = value
    return cls(**kwargs)


def load_spec(path=None, overrides: dict | None = None) -> ExperimentSpec:
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
    spec = _build(ExperimentSpec, data, "")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "steps":
            spec = replace(spec, training=replace(spec.training, steps=int(value)))
        else:
            spec = replace(spec, **{key: value})
    return spec.validate()


def _echo(spec, out: Path, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    doc = {"spec": asdict(spec), **(extra or {})}
    (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def velocity_grid(spec):
    g = spec.grid
    return build_uniform_grid(g.lower, g.upper, tuple(g.n))


def spectral_operator(spec, grid):
    from .spectral_collision import CollisionKernelSpec, build_spectral_operator
    return build_spectral_operator(grid, CollisionKernelSpec.for_knudsen(spec.kn))


# ----------------------------------------------------------------- commands

def _write_macro_csv(path, rec):
    centers = rec.centers()
    mesh = np.stack(np.meshgrid(*centers, indexing="ij"), -1).reshape(-1, rec.dim)
    coords = ["x", "y"][:rec.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + coords + ["rho", "u1", "T"])
        for i, t in enumerate(rec.times):
            F = rec.fields[i].reshape(-1, len(FIELD_NAMES))
            for xyz, row in zip(mesh, F):
                w.writerow([f"{t:.6g}"] + [f"{c:.10g}" for c in xyz]
                           + [f"{row[0]:.12g}", f"{row[1]:.12g}", f"{row[4]:.12g}"])


def cmd_run_reference(spec: ExperimentSpec, out: Path):
    problem = get_problem(spec.problem)
    grid = velocity_grid(spec)
    r = spec.reference
    cfg = FvmConfig(cells=tuple(r.cells), cfl=r.cfl, t_end=problem.t_end, boundary=problem.boundary,
                    collision="bgk" if spec.collision == "bgk" else "spectral",
                    reconstruction=r.reconstruction, output_times=tuple(spec.evaluate.times))
    if r.snapshots:
        from .reduced_collision import snapshot_config
        cfg = snapshot_config(cfg, spec.basis.n_x, spec.basis.n_t)
    op = spectral_operator(spec, grid) if spec.collision == "quad" else None
    _echo(spec, out)
    rec = solve_problem(problem, grid, cfg, KineticConfig(kn=spec.kn), operator=op)
    save_record(rec, out / "record.bin")
    _write_macro_csv(out / "macro.csv", rec)
    return rec


def cmd_build_basis(spec: ExperimentSpec, out: Path, snapshots=None):
    from .reduced_collision import (build_basis, build_kernel_tensor, collect_snapshots,
                                    save_reduced_model)
    source = snapshots or spec.reference.record
    if not source:
        raise ConfigError("build-basis needs a snapshot source (--snapshots or reference.record)")
    if not Path(source).exists():
        raise ConfigError(f"snapshot source {source} not found")
    rec = load_record(source)
    if rec.snapshots is None:
        raise ConfigError(f"{source} holds no distribution snapshots (run-reference with "
                          "reference.snapshots = true)")
    grid = rec.grid
    op = spectral_operator(spec, grid)
    snap = collect_snapshots(rec)
    _echo(spec, out, {"snapshots": str(source)})
    model = build_kernel_tensor(build_basis(snap, op, spec.basis.n_a, spec.basis.n_b), op)
    save_reduced_model(model, out / "model.bin", {"n_s": snap.n_s, "kn": spec.kn,
                                                  "problem": rec.meta.get("problem")})
    return model


def _collision_model(spec, grid):
    from .loss import CollisionModel
    if spec.method in ("nr_dense", "nsr_cpd"):
        return CollisionModel("bgk", tau=spec.kn)
    if spec.method == "nr_quad":
        return CollisionModel("fast", tau=spec.kn, operator=spectral_operator(spec, grid))
    from .reduced_collision import load_reduced_model
    if not spec.basis.model:
        raise ConfigError("basis.model: nsr_reduced needs a reduced model file")
    model = load_reduced_model(spec.basis.model)
    if not model.grid.same_as(grid):
        raise ConfigError("basis.model: reduced model velocity grid differs from the config grid")
    return CollisionModel("reduced", tau=spec.kn, operator=model)


def build_ansatz(spec, grid):
    from .neural_ansatz import ScaleSet, build_split_ansatz
    n = spec.network
    mode = "cpd" if spec.method == "nsr_cpd" else "dense"
    return build_split_ansatz(get_problem(spec.problem).dim, grid, width=n.width, depth=n.depth,
                              mode=mode, rank=n.rank, C=n.C, scales=ScaleSet(tuple(n.scales), n.time_scale),
                              omega=n.omega, seed=spec.seed,
                              eq_state=tuple(n.eq_state) or None, head_scale=n.head_scale)


def cmd_train(spec: ExperimentSpec, out: Path, init_from=None):
    from .loss import AdaptiveWeights, SamplePlan
    from .neural_ansatz import load_checkpoint
    from .trainer import TrainConfig, train, warm_start
    if spec.method == "reference":
        raise ConfigError("method reference is not trainable; use run-reference")
    problem = get_problem(spec.problem)
    grid = velocity_grid(spec)
    model = _collision_model(spec, grid)
    ansatz = build_ansatz(spec, grid)
    t = spec.training
    weights = AdaptiveWeights(grid.shape, eps=t.eps)
    if init_from is not None:
        if not Path(init_from).exists():
            raise ConfigError(f"--init-from {init_from} not found")
        _, extra, _ = load_checkpoint(init_from)
        try:
            warm_start(init_from, ansatz)
            if t.warm_weights:
                weights.load_state(extra)
        except (ValueError, KeyError, RuntimeError) as exc:
            raise ConfigError(f"--init-from {init_from}: {exc}") from None
    cfg = TrainConfig(steps=t.steps, lr0=t.lr0, t_max=t.t_max or None, pi_factor=t.pi_factor,
                      resample_interval=t.resample_interval,
                      checkpoint_interval=t.checkpoint_interval, seed=spec.seed)
    s = spec.sampling
    plan = SamplePlan(s.n_ic, s.n_bc, s.n_pde, seed=spec.seed)
    _echo(spec, out, {"init_from": None if init_from is None else str(init_from)})
    meta = {"grid": asdict(spec.grid), "kn": spec.kn, "method": spec.method,
            "init_from": None if init_from is None else str(init_from)}
    return train(ansatz, weights, problem, grid, model, plan, cfg, out_dir=out, meta=meta)


def evaluation_points(problem, n):
    axes = [lo + (hi - lo) * (np.arange(n) + 0.5) / n for lo, hi in zip(problem.lower, problem.upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, problem.dim)


def evaluate_against(ansatz, grid, rec, problem, points: int, times):
    from .trainer import predict_fields
    x = evaluation_points(problem, points)
    rows = []
    for t in times:
        p = predict_fields(ansatz, grid, x, t)
        ref = {k: rec.interpolate(n, t, x) for k, n in (("rho", "rho"), ("u", "u1"), ("T", "T"))}
        err = error_metrics({"rho": p[:, 0], "u": p[:, 1], "T": p[:, 4]}, ref)
        rows.append({"t": float(t), **err})
    return rows


def cmd_evaluate(spec: ExperimentSpec, out: Path, checkpoint, reference=None):
    from .neural_ansatz import load_checkpoint
    from .velocity_grid import build_uniform_grid as bug
    ref_path = reference or spec.reference.record
    for p, what in ((checkpoint, "checkpoint"), (ref_path, "reference record")):
        if not p or not Path(p).exists():
            raise ConfigError(f"{what} {p!r} not found")
    ansatz, _, header = load_checkpoint(checkpoint)
    rec = load_record(ref_path)
    meta = header.get("meta", {})
    p_ck, p_ref = meta.get("problem"), rec.meta.get("problem")
    if p_ck != p_ref:
        raise ConfigError(f"problem mismatch: checkpoint trained on {p_ck}, reference is {p_ref}")
    g = meta.get("grid")
    grid = bug(g["lower"], g["upper"], tuple(g["n"])) if g else rec.grid
    problem = get_problem(p_ck)
    rows = evaluate_against(ansatz, grid, rec, problem, spec.evaluate.points, spec.evaluate.times)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "errors.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["t", "rho", "u", "T"])
        w.writeheader()
        w.writerows(rows)
    doc = {"problem": p_ck, "method": meta.get("method"), "kn": meta.get("kn"),
           "checkpoint": str(checkpoint), "reference": str(ref_path),
           "points_per_axis": spec.evaluate.points, "errors": rows}
    validate_errors_json(doc)
    (out / "errors.json").write_text(json.dumps(doc, indent=2))
    return doc


def validate_errors_json(doc):
    import jsonschema
    jsonschema.validate(doc, json.loads(SCHEMA_PATH.read_text()))


# --------------------------------------------------------------------- main

def _parser():
    ap = argparse.ArgumentParser(prog="nsrkinetic", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run-reference", "build-basis", "train", "evaluate"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment TOML file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--kn", type=float)
        if name == "train":
            p.add_argument("--steps", type=int)
            p.add_argument("--init-from", help="checkpoint to warm-start from")
        if name == "build-basis":
            p.add_argument("--snapshots", help="solution record holding snapshots")
        if name == "evaluate":
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--reference", help="reference solution record")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    out = Path(args.out)
    try:
        spec = load_spec(args.config, {"seed": args.seed, "kn": args.kn,
                                       "steps": getattr(args, "steps", None)})
        if args.command == "run-reference":
            cmd_run_reference(spec, out)
        elif args.command == "build-basis":
            cmd_build_basis(spec, out, args.snapshots)
        elif args.command == "train":
            cmd_train(spec, out, args.init_from)
        else:
            doc = cmd_evaluate(spec, out, args.checkpoint, args.reference)
            for row in doc["errors"]:
                print(f"t={row['t']:g}  rho={row['rho']:.3e}  u={row['u']:.3e}  T={row['T']:.3e}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, UnphysicalStateError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
