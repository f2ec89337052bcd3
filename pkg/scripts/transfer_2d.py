"""Cold start vs warm start on the shifted 2D wave.

Trains the base 2D wave, then the shifted problem from scratch and from
the base checkpoint, and reports when the warm run reaches the cold run's
final loss.
"""
import argparse
from pathlib import Path

from nsrkinetic.cli import cmd_train, load_spec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--base", default="configs/wave2d_desk.toml")
    ap.add_argument("--shifted", default="configs/wave2d_shifted_desk.toml")
    ap.add_argument("--out", default="runs/transfer")
    args = ap.parse_args()
    out = Path(args.out)
    cmd_train(load_spec(args.base), out / "base")
    shifted = load_spec(args.shifted)
    cold = cmd_train(shifted, out / "cold")
    warm = cmd_train(shifted, out / "warm", init_from=out / "base" / "final.ckpt")
    n = shifted.training.steps
    hit = warm.steps_to_reach(cold.final_loss)
    print(f"cold: {cold.history[0]['total']:.4g} -> {cold.final_loss:.4g} in {n} steps")
    print(f"warm: {warm.history[0]['total']:.4g} -> {warm.final_loss:.4g}; "
          f"reaches cold final loss at step {hit}")


if __name__ == "__main__":
    main()
