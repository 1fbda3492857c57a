"""Expert load spread under bias correction versus none, on a skewed synthetic stream."""

import argparse

from tilevl.moe import SIGMOID, SOFTMAX, simulate_bias_balancing


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--window", type=int, default=500)
    ap.add_argument("--margin", type=float, default=2.0)
    ap.add_argument("--routing", choices=(SOFTMAX, SIGMOID), default=SIGMOID)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    common = dict(steps=args.steps, window=args.window, margin=args.margin, routing=args.routing, seed=args.seed)
    for step in (0.0, 0.0001, 0.001, 0.01):
        cvs = simulate_bias_balancing(step=step, **common)
        trace = " ".join(f"{c:.3f}" for c in cvs)
        print(f"step={step:<7g} first={cvs[0]:.3f} last={cvs[-1]:.3f}  windows: {trace}")


if __name__ == "__main__":
    main()
