"""Denoising diffusion with learned variance: schedules, forward/posterior maths, losses, timestep samplers,
a small convolutional denoiser, training and ancestral sampling.

Timesteps are 1-based (``t`` in ``1..T``). Schedule arrays have length
``T + 1`` and index 0 holds the ``t = 0`` convention (``alpha_bar[0] = 1``,
``beta[0] = 0``).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericError

MAX_BETA = 0.999
COSINE_OFFSET = 0.008
HYBRID_LAMBDA = 0.001
HISTORY_LEN = 10


# ---------------------------------------------------------------------------
# schedules

@dataclass
class NoiseSchedule:
    kind: str
    beta: np.ndarray
    s: float = COSINE_OFFSET

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.size < 2 or beta[0] != 0.0:
            raise ValueError("beta must be padded with beta[0] = 0")
        if np.any(beta[1:] <= 0) or np.any(beta[1:] >= 1):
            raise ValueError("beta_t must lie in (0, 1)")
        self.beta = beta
        self.alpha = 1.0 - beta
        self.alpha_bar = np.cumprod(self.alpha)
        ab_prev = np.concatenate([[1.0], self.alpha_bar[:-1]])
        self.alpha_bar_prev = ab_prev
        with np.errstate(divide="ignore", invalid="ignore"):
            bt = np.where(np.arange(beta.size) > 0, (1.0 - ab_prev) / (1.0 - self.alpha_bar) * beta, 0.0)
        self.beta_tilde = bt
        # at t = 1 the posterior variance is zero; both variance bounds fall back to beta_1
        self.log_beta = np.log(np.where(beta > 0, beta, 1.0))
        lbt = np.log(np.where(bt > 0, bt, 1.0))
        lbt[1] = self.log_beta[1]
        self.log_beta_tilde = lbt
        self.var_low = np.where(np.arange(beta.size) == 1, beta, bt)

    @property
    def T(self) -> int:
        return self.beta.size - 1


def linear_schedule(T: int) -> NoiseSchedule:
    """Linear betas with endpoints 1e-4 and 0.02 scaled by 1000/T."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    scale = 1000.0 / T
    lo, hi = 1e-4 * scale, 0.02 * scale
    betas = np.array([(lo + hi) / 2.0]) if T == 1 else np.linspace(lo, hi, T)
    betas = np.clip(betas, 1e-12, MAX_BETA)
    return NoiseSchedule("linear", np.concatenate([[0.0], betas]))


def cosine_alpha_bar(t, T: int, s: float = COSINE_OFFSET):
    """Unclipped cumulative signal retention f(t)/f(0) of the cosine schedule."""
    f = lambda u: np.cos((np.asarray(u, dtype=np.float64) / T + s) / (1.0 + s) * np.pi / 2.0) ** 2
    return f(t) / f(0)


def cosine_schedule(T: int, s: float = COSINE_OFFSET) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    ab = cosine_alpha_bar(np.arange(T + 1), T, s)
    betas = np.minimum(1.0 - ab[1:] / ab[:-1], MAX_BETA)
    return NoiseSchedule("cosine", np.concatenate([[0.0], betas]), s)


def make_schedule(kind: str, T: int) -> NoiseSchedule:
    if kind == "linear":
        return linear_schedule(T)
    if kind == "cosine":
        return cosine_schedule(T)
    raise ConfigError(f"unknown schedule kind {kind!r}")


def _coef(arr: np.ndarray, t, ndim: int):
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= arr.size):
        raise ValueError(f"timestep out of range: {t}")
    c = arr[t]
    if c.ndim == 0:
        return float(c)
    return c.reshape(c.shape + (1,) * (ndim - 1))


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _exp(x):
    return x.exp() if isinstance(x, Tensor) else np.exp(x)


def _log(x):
    return x.log() if isinstance(x, Tensor) else np.log(x)


# ---------------------------------------------------------------------------
# forward process and reverse-step parameterisations

def q_sample(sched: NoiseSchedule, x0, t, eps):
    x0, eps = np.asarray(x0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"q_sample: x0 {x0.shape} and noise {eps.shape} differ in shape")
    if np.any(np.asarray(t) < 1):
        raise ValueError("q_sample: t must be >= 1")
    ab = _coef(sched.alpha_bar, t, x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_params(sched: NoiseSchedule, x0, x_t, t):
    """Mean and variance of q(x_{t-1} | x_t, x0)."""
    if np.any(np.asarray(t) < 1):
        raise ValueError("posterior undefined at t = 0")
    x0, x_t = np.asarray(x0, dtype=np.float64), np.asarray(x_t, dtype=np.float64)
    nd = x0.ndim
    ab, ab_prev = _coef(sched.alpha_bar, t, nd), _coef(sched.alpha_bar_prev, t, nd)
    beta, alpha = _coef(sched.beta, t, nd), _coef(sched.alpha, t, nd)
    c0 = np.sqrt(ab_prev) * beta / (1.0 - ab)
    ct = np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab)
    return c0 * x0 + ct * x_t, _coef(sched.beta_tilde, t, nd)


def mu_from_eps(sched: NoiseSchedule, x_t, t, eps_hat):
    nd = _data(x_t).ndim
    alpha, ab = _coef(sched.alpha, t, nd), _coef(sched.alpha_bar, t, nd)
    return (x_t - eps_hat * ((1.0 - alpha) / np.sqrt(1.0 - ab))) * (1.0 / np.sqrt(alpha))


def sigma_from_v(sched: NoiseSchedule, v, t):
    """Reverse-step variance interpolated in log space between beta_t (v=1) and beta~_t (v=0)."""
    nd = _data(v).ndim
    lb, lbt = _coef(sched.log_beta, t, nd), _coef(sched.log_beta_tilde, t, nd)
    if isinstance(v, Tensor):
        return (v * lb + (1.0 - v) * lbt).exp()
    # power form is exact at v = 0 and v = 1
    v = np.asarray(v, dtype=np.float64)
    return np.power(_coef(sched.beta, t, nd), v) * np.power(_coef(sched.var_low, t, nd), 1.0 - v)


def fixed_variance(sched: NoiseSchedule, t, ndim: int):
    return _coef(sched.var_low, t, ndim)


def gaussian_kl(mu1, var1, mu2, var2):
    """Elementwise KL(N(mu1, var1) || N(mu2, var2))."""
    for v in (var1, var2):
        if np.any(_data(v) <= 0):
            raise ValueError("gaussian_kl: variances must be positive")
    return 0.5 * (_log(var2) - _log(var1) + (var1 + (mu1 - mu2) * (mu1 - mu2)) / var2 - 1.0)


def gaussian_nll(x, mu, var):
    """Elementwise negative log density of a continuous Gaussian."""
    return 0.5 * (_log(var) + math.log(2.0 * math.pi) + (x - mu) * (x - mu) / var)


def prior_kl(sched: NoiseSchedule, x0) -> np.ndarray:
    """KL(q(x_T | x0) || N(0, I)) per batch element, averaged over elements."""
    x0 = np.asarray(x0, dtype=np.float64)
    T = sched.T
    ab = sched.alpha_bar[T]
    kl = gaussian_kl(math.sqrt(ab) * x0, np.full_like(x0, 1.0 - ab), 0.0, np.ones_like(x0))
    return kl.reshape(len(x0), -1).mean(axis=1)


# ---------------------------------------------------------------------------
# timestep samplers

class UniformSampler:
    def __init__(self, T: int):
        self.T = T

    def probs(self) -> np.ndarray:
        return np.full(self.T, 1.0 / self.T)

    def draw(self, rng: np.random.Generator, batch: int | None = None):
        n = 1 if batch is None else batch
        t = rng.integers(1, self.T + 1, size=n)
        w = np.ones(n)
        return (int(t[0]), 1.0) if batch is None else (t, w)

    def update(self, t, losses) -> None:
        pass


class ImportanceSampler:
    """Draws t with probability proportional to the RMS of its last 10 losses.

    Until every timestep has a full history, draws are uniform with weight 1.
    A small uniform floor (``uniform_mix``) keeps every p_t positive.
    """

    def __init__(self, T: int, history: int = HISTORY_LEN, uniform_mix: float = 1e-3):
        self.T = T
        self.history = np.zeros((T, history))
        self.filled = np.zeros(T, dtype=np.int64)
        self.uniform_mix = uniform_mix

    @property
    def warm(self) -> bool:
        return bool(np.all(self.filled == self.history.shape[1]))

    def probs(self) -> np.ndarray:
        if not self.warm:
            return np.full(self.T, 1.0 / self.T)
        rms = np.sqrt(np.mean(self.history ** 2, axis=1))
        if rms.sum() <= 0:
            return np.full(self.T, 1.0 / self.T)
        p = rms / rms.sum()
        p = p * (1.0 - self.uniform_mix) + self.uniform_mix / self.T
        return p / p.sum()

    def draw(self, rng: np.random.Generator, batch: int | None = None):
        n = 1 if batch is None else batch
        if not self.warm:
            t = rng.integers(1, self.T + 1, size=n)
            w = np.ones(n)
        else:
            p = self.probs()
            t = rng.choice(self.T, size=n, p=p) + 1
            w = 1.0 / (self.T * p[t - 1])
        return (int(t[0]), float(w[0])) if batch is None else (t, w)

    def update(self, t, losses) -> None:
        t = np.atleast_1d(np.asarray(t))
        losses = np.atleast_1d(np.asarray(losses, dtype=np.float64))
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep out of range 1..{self.T}: {t}")
        for ti, li in zip(t, losses):
            row = self.history[ti - 1]
            if self.filled[ti - 1] == row.size:
                row[:-1] = row[1:].copy()
                row[-1] = li
            else:
                row[self.filled[ti - 1]] = li
                self.filled[ti - 1] += 1


def make_sampler(kind: str, T: int):
    if kind == "uniform":
        return UniformSampler(T)
    if kind == "loss-second-moment":
        return ImportanceSampler(T)
    raise ConfigError(f"unknown timestep sampler {kind!r}")


# ---------------------------------------------------------------------------
# run configurations

@dataclass(frozen=True)
class DiffusionCaseConfig:
    learn_sigma: bool = False
    schedule: str = "linear"
    objective: str = "simple"
    sampler: str = "uniform"
    lambda_hybrid: float = HYBRID_LAMBDA

    def __post_init__(self):
        if self.objective not in ("simple", "vlb", "hybrid"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.objective == "hybrid" and not self.learn_sigma:
            raise ConfigError("hybrid objective requires learn_sigma")
        if self.lambda_hybrid < 0:
            raise ConfigError("lambda_hybrid must be >= 0")


CASES = {
    "00": DiffusionCaseConfig(False, "linear", "simple", "uniform"),
    "01": DiffusionCaseConfig(True, "cosine", "vlb", "uniform"),
    "02": DiffusionCaseConfig(True, "cosine", "vlb", "loss-second-moment"),
}


@dataclass
class DenoiserOutput:
    eps_hat: object
    v: object = None
    # oracle models may supply the reverse-step mean directly
    mean: object = None


# ---------------------------------------------------------------------------
# losses

class LossOutput(NamedTuple):
    loss: Tensor
    t: np.ndarray
    per_sample: np.ndarray


def _per_sample_mean(x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    return x.reshape(x.shape[0], -1).mean(axis=1)


def vlb_terms(sched: NoiseSchedule, out: DenoiserOutput, x0, x_t, t, detach_mean: bool = False):
    """Per-sample L_{t-1} (KL for t >= 2, continuous Gaussian NLL of x0 at t = 1).

    Returns a (B,) tensor averaged over elements. With ``detach_mean`` the
    gradient reaches only the variance output.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    t = np.asarray(t)
    nd = x0.ndim
    eps_hat = out.eps_hat
    if detach_mean and isinstance(eps_hat, Tensor):
        eps_hat = eps_hat.detach()
    mu = out.mean if out.mean is not None else mu_from_eps(sched, x_t, t, eps_hat)
    var = sigma_from_v(sched, out.v, t) if out.v is not None else fixed_variance(sched, t, nd)
    if not isinstance(var, Tensor):
        var = np.broadcast_to(var, x0.shape)
    t_safe = np.maximum(t, 2) if t.ndim else max(int(t), 2)
    mu_q, var_q = posterior_params(sched, x0, x_t, t_safe)
    var_q = np.broadcast_to(var_q, x0.shape)
    kl = _per_sample_mean(gaussian_kl(mu_q, var_q, mu, var))
    nll = _per_sample_mean(gaussian_nll(x0, mu, var))
    first = (np.broadcast_to(t, (x0.shape[0],)) == 1).astype(np.float64)
    return kl * (1.0 - first) + nll * first


def diffusion_loss(model: Callable, sched: NoiseSchedule, case: DiffusionCaseConfig, x0: np.ndarray,
                   sampler, rng: np.random.Generator, objective: str | None = None,
                   lambda_hybrid: float | None = None) -> LossOutput:
    objective = objective or case.objective
    lam = case.lambda_hybrid if lambda_hybrid is None else lambda_hybrid
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    B = x0.shape[0]
    t, w = sampler.draw(rng, B)
    eps = rng.standard_normal(x0.shape)
    x_t = q_sample(sched, x0, t, eps)
    out = model(Tensor(x_t), t)
    eps_hat = out.eps_hat if isinstance(out.eps_hat, Tensor) else Tensor(out.eps_hat)
    mse = _per_sample_mean((eps_hat - eps).square())
    if objective == "simple":
        sampler.update(t, mse.data)
        return LossOutput(mse.mean(), t, mse.data.copy())
    vb = vlb_terms(sched, out, x0, x_t, t, detach_mean=(objective == "hybrid"))
    sampler.update(t, vb.data)
    weights = sched.T * w
    vlb = (vb * weights).mean() + float(prior_kl(sched, x0).mean())
    if objective == "vlb":
        return LossOutput(vlb, t, vb.data.copy())
    return LossOutput(mse.mean() + lam * vlb, t, mse.data + lam * vb.data)


def loss_simple(model, sched, x0, sampler, rng) -> Tensor:
    return diffusion_loss(model, sched, CASES["00"], x0, sampler, rng, objective="simple").loss


def loss_vlb(model, sched, x0, sampler, rng) -> Tensor:
    """Unbiased estimate of the full bound: T * w_t * L_{t-1} + L_T, batch averaged."""
    return diffusion_loss(model, sched, CASES["01"], x0, sampler, rng, objective="vlb").loss


def loss_hybrid(model, sched, x0, sampler, rng, lam: float = HYBRID_LAMBDA) -> Tensor:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return diffusion_loss(model, sched, CASES["01"], x0, sampler, rng, objective="hybrid",
                          lambda_hybrid=lam).loss


# ---------------------------------------------------------------------------
# denoiser network

def timestep_embedding(t, dim: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


@dataclass
class DenoiserConfig:
    channels: int = 3
    hidden: int = 32
    emb_dim: int = 32
    learn_sigma: bool = False


class Denoiser(ad.Module):
    """conv3x3 -> SiLU -> conv3x3 -> SiLU -> conv3x3, timestep added as per-channel bias."""

    def __init__(self, cfg: DenoiserConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        c, h = cfg.channels, cfg.hidden
        self.conv1 = ad.Conv2d(c, h, 3, rng, padding=1)
        self.temb1 = ad.Dense(cfg.emb_dim, h, rng)
        self.conv2 = ad.Conv2d(h, h, 3, rng, padding=1)
        self.temb2 = ad.Dense(cfg.emb_dim, h, rng)
        self.conv3 = ad.Conv2d(h, c * (2 if cfg.learn_sigma else 1), 3, rng, padding=1)

    def forward(self, x, t) -> DenoiserOutput:
        x = ad.as_tensor(x)
        B = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (B,))
        emb = timestep_embedding(t, self.cfg.emb_dim)
        h = self.conv1(x) + self.temb1(emb).reshape(B, self.cfg.hidden, 1, 1)
        h = ad.silu(h)
        h = self.conv2(h) + self.temb2(emb).reshape(B, self.cfg.hidden, 1, 1)
        h = ad.silu(h)
        out = self.conv3(h)
        c = self.cfg.channels
        if self.cfg.learn_sigma:
            return DenoiserOutput(out[:, :c], out[:, c:])
        return DenoiserOutput(out)


# ---------------------------------------------------------------------------
# sampling and training

def ancestral_sample(model: Callable, sched: NoiseSchedule, shape: tuple[int, ...], seed: int,
                     batch_size: int = 64) -> np.ndarray:
    """Draw x_T ~ N(0, I) and run the learned reverse chain down to x_0."""
    rng = np.random.default_rng(seed)
    x_all = rng.standard_normal(shape)
    n = shape[0]
    chunks = []
    with ad.no_grad():
        for lo in range(0, n, batch_size):
            x = x_all[lo:lo + batch_size]
            for t in range(sched.T, 0, -1):
                tt = np.full(x.shape[0], t)
                out = model(x, tt)
                if out.mean is not None:
                    mu = _data(out.mean)
                else:
                    mu = _data(mu_from_eps(sched, x, tt, _data(out.eps_hat)))
                if t > 1:
                    if out.v is not None:
                        # outside [0, 1] the log-variance extrapolates and an undertrained chain blows up
                        var = sigma_from_v(sched, np.clip(_data(out.v), 0.0, 1.0), tt)
                    else:
                        var = fixed_variance(sched, tt, x.ndim)
                    x = mu + np.sqrt(var) * rng.standard_normal(x.shape)
                else:
                    x = np.array(mu, dtype=np.float64, copy=True)
                if not np.all(np.isfinite(x)):
                    raise NumericError(f"reverse chain produced non-finite values at t={t}")
            chunks.append(np.broadcast_to(x, x_all[lo:lo + batch_size].shape).copy())
    return np.concatenate(chunks, axis=0)


@dataclass
class DdpmTrainConfig:
    T: int = 100
    hidden: int = 32
    emb_dim: int = 32
    batch_size: int = 16
    lr: float = 2e-3


@dataclass
class TraceRow:
    step: int
    objective: str
    loss: float
    t_mean: float


def build_denoiser(images_shape: tuple[int, ...], case: DiffusionCaseConfig, cfg: DdpmTrainConfig,
                   seed: int) -> Denoiser:
    rng = np.random.default_rng(seed)
    dcfg = DenoiserConfig(images_shape[1], cfg.hidden, cfg.emb_dim, case.learn_sigma)
    return Denoiser(dcfg, rng)


def train_ddpm(images: np.ndarray, case: DiffusionCaseConfig, cfg: DdpmTrainConfig, steps: int,
               seed: int, callback: Callable | None = None) -> tuple[Denoiser, NoiseSchedule, list[TraceRow]]:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or len(images) == 0:
        raise ValueError(f"train_ddpm needs a non-empty (N, C, H, W) array, got {images.shape}")
    sched = make_schedule(case.schedule, cfg.T)
    model = build_denoiser(images.shape, case, cfg, seed)
    sampler = make_sampler(case.sampler, cfg.T)
    opt = ad.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(seed + 1)
    trace: list[TraceRow] = []
    for step in range(1, steps + 1):
        idx = rng.integers(0, len(images), size=cfg.batch_size)
        res = diffusion_loss(model, sched, case, images[idx], sampler, rng)
        value = res.loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite DDPM loss at step {step}")
        opt.zero_grad()
        res.loss.backward()
        opt.step()
        trace.append(TraceRow(step, case.objective, value, float(np.mean(res.t))))
        if callback is not None:
            callback(trace[-1])
    return model, sched, trace


def ddpm_meta(model: Denoiser, sched: NoiseSchedule, case: DiffusionCaseConfig, size: int) -> dict:
    return {"kind": "ddpm", "case": asdict(case), "denoiser": asdict(model.cfg), "T": sched.T,
            "schedule": sched.kind, "image_size": size}


def load_ddpm(state: dict, meta: dict) -> tuple[Denoiser, NoiseSchedule, DiffusionCaseConfig]:
    if meta.get("kind") != "ddpm":
        raise ConfigError(f"checkpoint kind {meta.get('kind')!r} is not a DDPM")
    case = DiffusionCaseConfig(**meta["case"])
    model = Denoiser(DenoiserConfig(**meta["denoiser"]), np.random.default_rng(0))
    model.load_state_dict(state)
    return model, make_schedule(meta["schedule"], meta["T"]), case
