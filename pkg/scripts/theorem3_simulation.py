"""Vanilla vs augmented ridge risk in the coupled minimal covariance model.

Sweeps sigma_w at n=100, d=500, d0=200, d_c=50 and writes per-setting Monte
Carlo means, the deterministic-equivalent predictions and the bootstrap
confidence that augmentation is worse.

    python scripts/theorem3_simulation.py --out runs/theorem3 --workers 4
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from symbreak import ridgetheory as rt

VAN, AUG = rt.EstimatorMode.VANILLA, rt.EstimatorMode.AUGMENTED


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigma-ws", default="0.01,0.02,0.05,0.1,0.2,0.5")
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--d", type=int, default=500)
    ap.add_argument("--d0", type=int, default=200)
    ap.add_argument("--d-c", type=int, default=50)
    ap.add_argument("--sigma-c", type=float, default=1.0)
    ap.add_argument("--sigma-noise", type=float, default=0.5)
    ap.add_argument("--lam", type=float, default=1e-8)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/theorem3")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["sigma_w", "vanilla_mc", "vanilla_stderr", "augmented_mc", "augmented_stderr",
              "vanilla_theory", "augmented_theory", "confidence_augmented_worse"]
    rows = []
    for sw in (float(v) for v in args.sigma_ws.split(",")):
        problem, _ = rt.minimal_model_problem(
            args.n, args.d, args.d0, args.d_c, args.sigma_c, sw, args.sigma_noise, args.lam, beta_seed=args.seed
        )
        mc = rt.monte_carlo_risks(problem, [VAN, AUG], args.trials, seed=args.seed, workers=args.workers)
        theory = {m: rt.dof_and_deterministic_risk(problem, m).risk for m in (VAN, AUG)}
        conf = rt.bootstrap_positive_fraction(np.subtract(mc[AUG].risks, mc[VAN].risks), seed=args.seed)
        row = [sw, mc[VAN].mean, mc[VAN].stderr, mc[AUG].mean, mc[AUG].stderr, theory[VAN], theory[AUG], conf]
        rows.append(row)
        print(f"sigma_w={sw:<6g} vanilla {mc[VAN].mean:.4f} ({theory[VAN]:.4f})  "
              f"augmented {mc[AUG].mean:.4f} ({theory[AUG]:.4f})  P(aug worse)={conf:.3f}")
    with open(out / "theorem3.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows([[format(v, ".17g") for v in r] for r in rows])


if __name__ == "__main__":
    main()
