"""Biased reverse process: posterior, ancestral steps, protection and restoration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .bgd import BgdParams, forward_diffuse, sample_terminal
from .denoiser import NoisePredictor
from .errors import NumericalError, ShapeError, TimestepError
from .schedule import VarianceSchedule

Mode = Literal["standard", "adversarial"]


@dataclass(frozen=True)
class SamplerConfig:
    """Protection/restoration hyperparameters.

    ``t_r = 0`` is accepted so that the empty adversarial loop can be
    exercised; real runs use ``t_r >= 1``.
    """

    t_r: int = 20
    eta: float = 1.4
    t_sn_levels: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self):
        if int(self.t_r) != self.t_r or self.t_r < 0:
            raise ValueError(f"t_r must be a non-negative integer, got {self.t_r}")
        if self.eta < 1:
            raise ValueError(f"eta must be >= 1, got {self.eta}")
        levels = tuple(int(t) for t in self.t_sn_levels)
        check_levels(levels)
        object.__setattr__(self, "t_sn_levels", levels)

    @property
    def restore_steps(self) -> int:
        return restore_steps(self.t_r, self.eta)


def check_levels(levels) -> None:
    """Slight-noise timesteps must be >= 1 and strictly increasing."""
    if not levels:
        raise ValueError("at least one permission level is required")
    if levels[0] < 1:
        raise ValueError(f"slight-noise timesteps must be >= 1, got {levels[0]}")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"slight-noise timesteps must be strictly increasing, got {list(levels)}")


def restore_steps(t_r: int, eta: float) -> int:
    """``round(eta * t_r)`` with halves rounded up."""
    return int(math.floor(eta * t_r + 0.5))


@dataclass(frozen=True, eq=False)
class PosteriorParams:
    mean: np.ndarray
    variance_scale: float


def _sigma(schedule: VarianceSchedule, t: int) -> tuple[float, float]:
    ab = schedule.alpha_bar(t)
    return ab, math.sqrt(1.0 - ab)


def estimate_x0(x_t, t: int, eps_hat, schedule: VarianceSchedule, bgd: BgdParams) -> np.ndarray:
    """Invert the marginal: ``(x_t - s*gamma*eps_hat - s*mu) / sqrt(abar_t)``."""
    ab, s = _sigma(schedule, schedule._check(t))
    return (np.asarray(x_t) - s * bgd.gamma * np.asarray(eps_hat) - s * bgd.mu) / math.sqrt(ab)


def adversarial_x0(x_t, t: int, eps_hat, schedule: VarianceSchedule, bgd: BgdParams) -> np.ndarray:
    """Sign-flipped estimate: ``(x_t + s*gamma*eps_hat + s*mu) / sqrt(abar_t)``."""
    ab, s = _sigma(schedule, schedule._check(t))
    return (np.asarray(x_t) + s * bgd.gamma * np.asarray(eps_hat) + s * bgd.mu) / math.sqrt(ab)


def posterior_coefficients(schedule: VarianceSchedule, t: int, reading: str = "sqrt_alpha"):
    """Weights ``(c_xt, c_x0, c_mu, v)`` of the posterior ``q(x_{t-1} | x_t, x_0)``.

    The posterior mean is ``c_xt*x_t + c_x0*x_0 + c_mu*mu`` and its variance
    is ``v * gamma**2``.

    ``reading`` selects how the radical in the ``x_t`` weight is parsed:
    ``"sqrt_alpha"`` gives ``sqrt(a_t) * (1 - abar_{t-1})`` (exact Gaussian
    conditioning agrees with this one); ``"sqrt_product"`` gives
    ``sqrt(a_t * (1 - abar_{t-1}))`` and is kept only so tests can show it
    is wrong.
    """
    t = schedule._check(t)
    if t < 2:
        raise TimestepError("posterior is defined for t >= 2; the t = 1 step returns the x0 estimate")
    a, b, k = schedule.alpha(t), schedule.beta(t), schedule.k_at(t)
    ab, ab_prev = schedule.alpha_bar(t), schedule.alpha_bar(t - 1)
    denom = 1.0 - ab
    if reading == "sqrt_alpha":
        c_xt = math.sqrt(a) * (1.0 - ab_prev) / denom
    elif reading == "sqrt_product":
        c_xt = math.sqrt(a * (1.0 - ab_prev)) / denom
    else:
        raise ValueError(f"unknown reading {reading!r}")
    c_x0 = math.sqrt(ab_prev) * b / denom
    c_mu = (math.sqrt(1.0 - ab_prev) * b - math.sqrt(a) * (1.0 - ab_prev) * k) / denom
    v = (1.0 - ab_prev) * b / denom
    return c_xt, c_x0, c_mu, v


def posterior(x_t, t: int, x0_hat, schedule: VarianceSchedule, bgd: BgdParams) -> PosteriorParams:
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    if x_t.shape != x0_hat.shape:
        raise ShapeError(f"x_t shape {x_t.shape} != x0 shape {x0_hat.shape}")
    c_xt, c_x0, c_mu, v = posterior_coefficients(schedule, t)
    mean = c_xt * x_t + c_x0 * x0_hat + c_mu * bgd.mu
    return PosteriorParams(mean=mean, variance_scale=v * bgd.gamma ** 2)


def reverse_step(x_t, t: int, predictor: NoisePredictor, schedule: VarianceSchedule, bgd: BgdParams,
                 rng: np.random.Generator | None = None, mode: Mode = "standard", z=None) -> np.ndarray:
    """One ancestral step ``x_t -> x_{t-1}``.

    ``mode="adversarial"`` swaps the x0 estimate for its sign-flipped
    counterpart. No noise is added on the final step ``t = 1``, which
    returns the x0 estimate itself. ``z`` overrides the draw from ``rng``.
    """
    t = schedule._check(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = predictor.predict(x_t, t)
    if mode == "standard":
        x0_hat = estimate_x0(x_t, t, eps_hat, schedule, bgd)
    elif mode == "adversarial":
        x0_hat = adversarial_x0(x_t, t, eps_hat, schedule, bgd)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if not np.all(np.isfinite(x0_hat)):
        raise NumericalError(f"non-finite x0 estimate at t={t} ({mode})")
    if t == 1:
        return x0_hat
    post = posterior(x_t, t, x0_hat, schedule, bgd)
    if z is None:
        if rng is None:
            raise ValueError("reverse_step needs rng or an explicit z for t > 1")
        z = rng.standard_normal(x_t.shape)
    return post.mean + math.sqrt(post.variance_scale) * np.asarray(z, dtype=np.float64)


def run_chain(x_start, t_start: int, predictor: NoisePredictor, schedule: VarianceSchedule, bgd: BgdParams,
              rng: np.random.Generator, mode: Mode = "standard") -> np.ndarray:
    """Apply reverse steps ``t = t_start, ..., 1``; ``t_start = 0`` is the identity."""
    if t_start > schedule.T:
        raise TimestepError(f"chain start {t_start} exceeds T={schedule.T}")
    x = np.asarray(x_start, dtype=np.float64)
    for t in range(t_start, 0, -1):
        x = reverse_step(x, t, predictor, schedule, bgd, rng, mode)
    return x


def generate_protected(x0, level: int, predictor: NoisePredictor, schedule: VarianceSchedule, bgd: BgdParams,
                       config: SamplerConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Slight-noise image for ``level`` (1-based) and its adversarial counterpart.

    The slight-noise noise is the first draw from ``rng``; the adversarial
    chain then runs ``t_r`` steps starting directly from that image.
    """
    if not 1 <= level <= len(config.t_sn_levels):
        raise ValueError(f"level {level} outside 1..{len(config.t_sn_levels)}")
    x0 = np.asarray(x0, dtype=np.float64)
    t_sn = config.t_sn_levels[level - 1]
    x_sn = forward_diffuse(x0, t_sn, rng.standard_normal(x0.shape), schedule, bgd)
    x_p = run_chain(x_sn, config.t_r, predictor, schedule, bgd, rng, "adversarial")
    return x_sn, x_p


def restore(x_p, predictor: NoisePredictor, schedule: VarianceSchedule, bgd: BgdParams, config: SamplerConfig,
            rng: np.random.Generator) -> np.ndarray:
    """Standard reverse chain over ``round(eta * t_r)`` steps from a protected image."""
    return run_chain(x_p, config.restore_steps, predictor, schedule, bgd, rng, "standard")


def sample_from_noise(predictor: NoisePredictor, schedule: VarianceSchedule, bgd: BgdParams,
                      rng: np.random.Generator, shape=None) -> np.ndarray:
    """Generate an image from ``gamma * eps + mu`` with the full standard chain."""
    x_T = sample_terminal(bgd.shape if shape is None else shape, rng, bgd)
    return run_chain(x_T, schedule.T, predictor, schedule, bgd, rng, "standard")
