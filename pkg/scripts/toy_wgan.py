"""WGAN-GP on sine-bump beats: average DTW to the template, trained vs untrained vs noise.

    python3 scripts/toy_wgan.py --steps 200 --seed 0
"""
import argparse

from beatsynth.experiments import toy_wgan

ap = argparse.ArgumentParser()
ap.add_argument("--steps", type=int, default=200)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

r = toy_wgan(steps=args.steps, seed=args.seed)
print(f"avg DTW   trained {r.dtw_trained:.3f}  untrained {r.dtw_untrained:.3f}  noise {r.dtw_noise:.3f}")
print(f"runtime   {r.seconds:.1f} s")
