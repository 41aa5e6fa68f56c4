"""Small directional experiments on synthetic beats, shared by scripts/ and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import diffusion as dm
from . import imaging, metrics, toys, wgan_gp
from .classifier import ClassifierConfig


@dataclass
class ToyDdpmResult:
    early_loss: float      # mean L_simple over the first ``window`` steps
    final_loss: float      # mean over the last ``window`` steps
    mmd_samples: float
    mmd_noise: float
    seconds: float
    losses: list[float] = field(repr=False, default_factory=list)


def toy_ddpm(steps: int = 400, seed: int = 0, n_train: int = 256, length: int = 16, T: int = 50,
             n_samples: int = 128, window: int = 50, cfg: dm.DdpmTrainConfig | None = None) -> ToyDdpmResult:
    """Case 00 on embedded bimodal beats; MMD is measured on de-embedded beats."""
    t0 = time.perf_counter()
    beats = toys.bimodal_beats(n_train, length, seed)
    images = np.stack([imaging.embed(b).channels for b in beats])
    cfg = cfg or dm.DdpmTrainConfig(T=T)
    model, sched, trace = dm.train_ddpm(images, dm.CASES["00"], cfg, steps, seed)
    losses = [r.loss for r in trace]
    shape = (n_samples,) + images.shape[1:]
    samples = dm.ancestral_sample(model, sched, shape, seed + 1)
    noise = np.random.default_rng(seed + 2).standard_normal(shape)
    synth = np.stack([imaging.deembed(x).samples for x in samples])
    noise_beats = np.stack([imaging.deembed(x).samples for x in noise])
    return ToyDdpmResult(
        early_loss=float(np.mean(losses[:window])), final_loss=float(np.mean(losses[-window:])),
        mmd_samples=metrics.mmd_linear(synth, beats), mmd_noise=metrics.mmd_linear(noise_beats, beats),
        seconds=time.perf_counter() - t0, losses=losses)


@dataclass
class ToyWganResult:
    dtw_trained: float
    dtw_untrained: float
    dtw_noise: float
    seconds: float


def toy_wgan(steps: int = 300, seed: int = 0, n_train: int = 512, n_eval: int = 64,
             cfg: wgan_gp.WganConfig = wgan_gp.WganConfig()) -> ToyWganResult:
    """Average DTW to the sine-bump template for trained, untrained and uniform-noise beats."""
    t0 = time.perf_counter()
    length = cfg.generator.output_len
    data = toys.sine_bump_beats(n_train, length, seed)
    template = toys.sine_bump_template(length)
    untrained, _, _ = wgan_gp.train_wgan_gp(data, 0, seed, cfg)
    trained, _, _ = wgan_gp.train_wgan_gp(data, steps, seed, cfg)
    noise = np.random.default_rng(seed + 2).uniform(-1.0, 1.0, (n_eval, length))

    def avg(x):
        return metrics.avg_distance_to_template(list(x), template, "dtw")

    return ToyWganResult(
        dtw_trained=avg(wgan_gp.sample_generator(trained, n_eval, seed + 1)),
        dtw_untrained=avg(wgan_gp.sample_generator(untrained, n_eval, seed + 1)),
        dtw_noise=avg(noise), seconds=time.perf_counter() - t0)


def toy_harness(seed: int = 0, length: int = 32, n_train: int = 200, n_test: int = 100, minority: int = 10,
                noise: float = 0.15) -> dict[str, metrics.ScenarioResult]:
    """Separable N/L corpus; the synthetic pool is drawn from the real N distribution."""
    n_pool, l_pool = n_train * 2, n_train
    train_n = toys.labelled_corpus(n_pool, "N", length, seed, noise)
    train_l = toys.labelled_corpus(l_pool, "L", length, seed + 1, noise)
    test = (toys.labelled_corpus(n_test, "N", length, seed + 2, noise, "test")
            + toys.labelled_corpus(n_test, "L", length, seed + 3, noise, "test"))
    synth = toys.labelled_corpus(n_train, "N", length, seed + 4, noise, "synth")
    cfg = metrics.HarnessConfig(n_train, minority, n_test, classifier=ClassifierConfig((4, 8), epochs=15))
    return metrics.classification_harness(train_n, train_l, test, {"toy": synth}, cfg, seed)
