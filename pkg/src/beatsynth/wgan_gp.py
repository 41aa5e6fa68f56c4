"""1-D WGAN-GP: transposed-conv generator, instance-norm critic, gradient-penalty training."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class GeneratorSpec:
    latent_dim: int = 100
    output_len: int = 64
    widths: tuple[int, ...] = (256, 128, 64, 32)


@dataclass(frozen=True)
class CriticSpec:
    input_len: int = 64
    widths: tuple[int, ...] = (32, 64, 128, 256)
    slope: float = 0.2


@dataclass(frozen=True)
class GpConfig:
    lambda_gp: float = 10.0

    def __post_init__(self):
        if self.lambda_gp < 0:
            raise ConfigError("lambda_gp must be >= 0")


@dataclass(frozen=True)
class WganConfig:
    generator: GeneratorSpec = GeneratorSpec()
    critic: CriticSpec = CriticSpec()
    gp: GpConfig = GpConfig()
    n_critic: int = 5
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9


class Generator(ad.Module):
    """Four (ConvT k4 s2 p1 -> BatchNorm -> ReLU) blocks, a final ConvT, a dense layer, tanh.

    The latent enters as a length-1 sequence with ``latent_dim`` channels, so
    the conv stack ends at length 2**5 = 32 before the dense layer maps it to
    ``output_len``.
    """

    def __init__(self, spec: GeneratorSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        c_in = spec.latent_dim
        self.blocks = []
        for i, w in enumerate(spec.widths):
            conv = ad.ConvTranspose1d(c_in, w, 4, rng, stride=2, padding=1)
            bn = ad.BatchNorm1d(w)
            setattr(self, f"conv{i}", conv)
            setattr(self, f"bn{i}", bn)
            self.blocks.append((conv, bn))
            c_in = w
        self.final = ad.ConvTranspose1d(c_in, 1, 4, rng, stride=2, padding=1)
        self.conv_len = 2 ** (len(spec.widths) + 1)
        self.fc = ad.Dense(self.conv_len, spec.output_len, rng)

    def forward(self, z, training: bool = True) -> Tensor:
        z = ad.as_tensor(z)
        if z.ndim == 2:
            z = z.reshape(z.shape[0], z.shape[1], 1)
        if z.ndim != 3 or z.shape[1:] != (self.spec.latent_dim, 1):
            raise ad.ShapeError(f"generator: expected (B, {self.spec.latent_dim}, 1) latent, got {z.shape}")
        h = z
        for conv, bn in self.blocks:
            h = ad.relu(bn(conv(h), training=training))
        h = self.final(h)
        return ad.tanh(self.fc(h))


class Critic(ad.Module):
    """Conv -> LeakyReLU, three (Conv k4 s2 p1 -> InstanceNorm -> LeakyReLU) blocks, Conv, dense."""

    def __init__(self, spec: CriticSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        if spec.input_len % 16:
            raise ConfigError(f"critic input length must be a multiple of 16, got {spec.input_len}")
        w = spec.widths
        self.first = ad.Conv1d(1, w[0], 4, rng, stride=2, padding=1)
        self.blocks = []
        for i in range(1, len(w)):
            conv = ad.Conv1d(w[i - 1], w[i], 4, rng, stride=2, padding=1)
            setattr(self, f"conv{i}", conv)
            self.blocks.append(conv)
        self.final = ad.Conv1d(w[-1], 1, 3, rng, stride=1, padding=1)
        self.out_len = spec.input_len // 2 ** len(w)
        self.fc = ad.Dense(self.out_len, 1, rng)

    def forward(self, x) -> Tensor:
        x = ad.as_tensor(x)
        if x.ndim == 2:
            x = x.reshape(x.shape[0], 1, x.shape[1])
        if x.ndim != 3 or x.shape[1:] != (1, self.spec.input_len):
            raise ad.ShapeError(f"critic: expected (B, 1, {self.spec.input_len}) input, got {x.shape}")
        h = ad.leaky_relu(self.first(x), self.spec.slope)
        for conv in self.blocks:
            h = ad.leaky_relu(ad.functional.instance_norm(conv(h)), self.spec.slope)
        return self.fc(self.final(h))


def generator_forward(gen: Generator, z, training: bool = False) -> Tensor:
    return gen(z, training=training)


def critic_forward(critic: Callable, x) -> Tensor:
    return critic(x)


class CriticTerms(NamedTuple):
    loss: Tensor
    wasserstein: float
    penalty: float


def gradient_penalty(critic: Callable, real: np.ndarray, fake: np.ndarray, rng: np.random.Generator) -> Tensor:
    """mean over the batch of (||grad_x D(x_hat)||_2 - 1)^2 at random real/fake interpolates."""
    B = real.shape[0]
    eta = rng.uniform(0.0, 1.0, size=(B,) + (1,) * (real.ndim - 1))
    x_hat = Tensor(eta * real + (1.0 - eta) * fake, requires_grad=True)
    try:
        g = ad.input_gradient(critic, x_hat, create_graph=True)
    except ad.DoubleBackwardError as exc:
        raise ConfigError(f"critic is not twice differentiable: {exc}") from exc
    axes = tuple(range(1, g.ndim))
    norms = ad.sqrt((g * g).sum(axis=axes) + 1e-12)
    return ((norms - 1.0) * (norms - 1.0)).mean()


def critic_terms(critic: Callable, real, fake, cfg: GpConfig, rng: np.random.Generator) -> CriticTerms:
    real = np.asarray(real.data if isinstance(real, Tensor) else real, dtype=np.float64)
    fake = np.asarray(fake.data if isinstance(fake, Tensor) else fake, dtype=np.float64)
    if real.shape != fake.shape:
        raise ad.ShapeError(f"critic_loss: real {real.shape} and fake {fake.shape} batches differ")
    d_real = critic(real).mean()
    d_fake = critic(fake).mean()
    loss = d_fake - d_real
    penalty = 0.0
    if cfg.lambda_gp > 0:
        gp = gradient_penalty(critic, real, fake, rng)
        loss = loss + cfg.lambda_gp * gp
        penalty = gp.item()
    return CriticTerms(loss, d_real.item() - d_fake.item(), penalty)


def critic_loss(critic: Callable, real, fake, cfg: GpConfig, rng: np.random.Generator) -> Tensor:
    return critic_terms(critic, real, fake, cfg, rng).loss


def generator_loss(critic: Callable, fake) -> Tensor:
    return -critic(fake).mean()


@dataclass
class WganTraceRow:
    step: int
    w_estimate: float
    d_loss: float
    g_loss: float


def train_wgan_gp(beats: np.ndarray, steps: int, seed: int, cfg: WganConfig = WganConfig(),
                  callback: Callable | None = None) -> tuple[Generator, Critic, list[WganTraceRow]]:
    """Alternate ``n_critic`` critic updates with one generator update, ``steps`` times."""
    beats = np.asarray(beats, dtype=np.float64)
    if beats.ndim != 2 or len(beats) == 0:
        raise ValueError(f"train_wgan_gp needs a non-empty (N, L) array, got {beats.shape}")
    if beats.shape[1] != cfg.generator.output_len or beats.shape[1] != cfg.critic.input_len:
        raise ConfigError(f"beat length {beats.shape[1]} does not match generator/critic lengths")
    init = np.random.default_rng(seed)
    gen, critic = Generator(cfg.generator, init), Critic(cfg.critic, init)
    opt_g = ad.Adam(gen.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    opt_d = ad.Adam(critic.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    rng = np.random.default_rng(seed + 1)
    B, zdim = cfg.batch_size, cfg.generator.latent_dim
    data = beats[:, None, :]
    trace: list[WganTraceRow] = []
    for step in range(1, steps + 1):
        for _ in range(cfg.n_critic):
            real = data[rng.integers(0, len(data), size=B)]
            with ad.no_grad():
                fake = gen(rng.standard_normal((B, zdim)), training=True).data
            terms = critic_terms(critic, real, fake, cfg.gp, rng)
            opt_d.zero_grad()
            terms.loss.backward()
            opt_d.step()
        fake_t = gen(rng.standard_normal((B, zdim)), training=True)
        g_loss = generator_loss(critic, fake_t)
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()
        d_val, g_val = terms.loss.item(), g_loss.item()
        if not (np.isfinite(d_val) and np.isfinite(g_val)):
            raise NumericError(f"non-finite WGAN-GP loss at step {step}")
        trace.append(WganTraceRow(step, terms.wasserstein, d_val, g_val))
        if callback is not None:
            callback(trace[-1])
    return gen, critic, trace


def sample_generator(gen: Generator, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` beats with the generator in inference mode (running batch-norm stats).

    float64 tanh rounds to exactly +-1 for pre-activations beyond ~19, so
    samples are clamped to the open interval.
    """
    z = np.random.default_rng(seed).standard_normal((n, gen.spec.latent_dim))
    with ad.no_grad():
        out = gen(z, training=False).data[:, 0, :]
    edge = np.nextafter(1.0, 0.0)
    return np.clip(out, -edge, edge)


def wgan_meta(cfg: WganConfig) -> dict:
    return {"kind": "wgan_gp", "generator": asdict(cfg.generator), "critic": asdict(cfg.critic)}


def load_generator(state: dict, meta: dict) -> Generator:
    if meta.get("kind") != "wgan_gp":
        raise ConfigError(f"checkpoint kind {meta.get('kind')!r} is not a WGAN-GP generator")
    g = meta["generator"]
    gen = Generator(GeneratorSpec(g["latent_dim"], g["output_len"], tuple(g["widths"])), np.random.default_rng(0))
    gen.load_state_dict({k[len("gen."):]: v for k, v in state.items() if k.startswith("gen.")})
    return gen
