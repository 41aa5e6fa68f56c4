"""Classification harness on a separable toy corpus: precision per training scenario."""
import argparse

from beatsynth.experiments import toy_harness

ap = argparse.ArgumentParser()
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

for name, res in toy_harness(seed=args.seed).items():
    print(f"{name:<16} precision {res.precision:.3f}  AP {res.avg_precision:.3f}  ROC-AUC {res.roc_auc:.3f}")
