"""Reference solve, training and evaluation for one experiment config.

    python3 scripts/desk_run.py configs/wave1d_desk.toml runs/wave1d
"""
import argparse
import json
import time
from pathlib import Path

from nsrkinetic.cli import cmd_evaluate, cmd_run_reference, cmd_train, load_spec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("out")
    ap.add_argument("--steps", type=int)
    ap.add_argument("--reference", help="reuse an existing reference record")
    args = ap.parse_args()
    spec = load_spec(args.config, {"steps": args.steps})
    out = Path(args.out)
    ref = Path(args.reference) if args.reference else out / "reference" / "record.bin"
    t0 = time.perf_counter()
    if not ref.exists():
        cmd_run_reference(spec, ref.parent)
        print(f"reference done in {time.perf_counter() - t0:.0f} s")
    t1 = time.perf_counter()
    res = cmd_train(spec, out / "train")
    print(f"trained {len(res.history) - 1} steps in {time.perf_counter() - t1:.0f} s, "
          f"loss {res.history[0]['total']:.4g} -> {res.final_loss:.4g}")
    doc = cmd_evaluate(spec, out / "eval", out / "train" / "final.ckpt", ref)
    print(json.dumps(doc["errors"], indent=2))


if __name__ == "__main__":
    main()
