"""Regenerate the bundled synthetic records and the toy run config.

    python3 scripts/make_fixtures.py [--out src/beatsynth/fixtures]
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from beatsynth.ingest import Annotation, encode_format212, write_annotations_csv
from beatsynth.io import write_json
from beatsynth.toys import synthetic_ecg

SECONDS = 180.0
FS = 360

TOY_CONFIG = {
    "seed": 7,
    "data": {"records": [{"dat": "toyN.dat", "ann": "toyN.csv", "id": "toyN"},
                         {"dat": "toyL.dat", "ann": "toyL.csv", "id": "toyL"}],
             "fs": FS, "gain": 200.0, "labels": ["N", "L"], "split": [0.7, 0.3]},
    "segment": {"length": 32, "cutoff": 0.75},
    "embed": {"bins": 8},
    "ddpm": {"cases": ["00", "01", "02"], "T": 20, "steps": 40, "hidden": 8, "emb_dim": 8, "batch_size": 8,
             "lr": 2e-3},
    "wgan": {"steps": 20, "batch_size": 8, "n_critic": 2, "lr": 1e-4, "beta1": 0.0, "beta2": 0.9,
             "lambda_gp": 10.0, "latent_dim": 16, "generator_widths": [32, 16], "critic_widths": [8, 16]},
    "harness": {"train_per_class": 120, "minority": 6, "test_per_class": 60, "scale": 1.0, "threshold": 0.5,
                "classifier_widths": [4, 8], "epochs": 6, "batch_size": 32, "lr": 2e-3},
    "plots": True,
}


def write_record(out: Path, name: str, label: str, seed: int) -> None:
    adc, peaks = synthetic_ecg(label, SECONDS, FS, seed)
    # second channel carries a scaled copy so both 12-bit halves of each frame are exercised
    (out / f"{name}.dat").write_bytes(encode_format212(adc, -(adc // 2)))
    write_annotations_csv(out / f"{name}.csv", [Annotation(int(p), label) for p in peaks])


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/beatsynth/fixtures"))
    out = Path(ap.parse_args().out)
    out.mkdir(parents=True, exist_ok=True)
    write_record(out, "toyN", "N", 11)
    write_record(out, "toyL", "L", 12)
    write_json(out / "toy_config.json", TOY_CONFIG)
    print(f"fixtures written to {out}")


if __name__ == "__main__":
    main()
