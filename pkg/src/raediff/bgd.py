"""Trigger handling and the trigger-biased forward diffusion process.

Images are float64 arrays of shape ``(C, H, W)`` with values in [-1, 1];
functions here also accept a leading batch axis ``(N, C, H, W)``.
Diffused tensors are never clamped; only image export clamps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, TimestepError
from .schedule import VarianceSchedule


def scale_trigger(raw: np.ndarray) -> np.ndarray:
    """Map a raw trigger onto [-1, 1] with one global min-max affine map.

    A constant input maps to all zeros.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("trigger tensor is empty")
    lo, hi = float(raw.min()), float(raw.max())
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) * (2.0 / (hi - lo)) - 1.0


@dataclass(frozen=True, eq=False)
class BgdParams:
    """Trigger ``delta``, scale factor ``gamma`` and bias mean ``mu = (1 - gamma) * delta``."""

    trigger: np.ndarray
    gamma: float
    mu: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.trigger.shape


def make_bgd(trigger: np.ndarray, gamma: float = 0.6) -> BgdParams:
    """Bias the terminal distribution from N(0, I) to N(mu, gamma^2 I)."""
    gamma = float(gamma)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    trigger = np.array(trigger, dtype=np.float64)
    if trigger.size == 0:
        raise ValueError("trigger tensor is empty")
    if np.any(np.abs(trigger) > 1.0):
        raise ValueError("trigger values must lie in [-1, 1]; use scale_trigger first")
    mu = (1.0 - gamma) * trigger
    trigger.setflags(write=False)
    mu.setflags(write=False)
    return BgdParams(trigger=trigger, gamma=gamma, mu=mu)


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{what}: shape {np.shape(a)} does not match {np.shape(b)}")


def _check_image(x: np.ndarray, bgd: BgdParams) -> None:
    # a leading batch axis is allowed; trailing axes must match the trigger
    tail = np.shape(x)[np.ndim(x) - bgd.mu.ndim:]
    if np.ndim(x) < bgd.mu.ndim or tail != bgd.mu.shape:
        raise ShapeError(f"image shape {np.shape(x)} incompatible with trigger shape {bgd.mu.shape}")


def alpha_bar_for(schedule: VarianceSchedule, t, batch_dims: int, image_ndim: int = 3):
    """``abar_t`` as a scalar, or broadcastable over image axes when ``t`` is a vector."""
    if np.ndim(t) == 0:
        return schedule.alpha_bar(schedule._check(t))
    t = np.asarray(t)
    if batch_dims != 1 or t.ndim != 1:
        raise ShapeError("vector timesteps need exactly one leading batch axis")
    if t.dtype.kind not in "iu" or t.min() < 1 or t.max() > schedule.T:
        raise TimestepError(f"timesteps must be integers in [1, {schedule.T}]")
    return schedule.alpha_bars[t - 1].reshape((-1,) + (1,) * image_ndim)


def forward_diffuse(x0, t: int, eps, schedule: VarianceSchedule, bgd: BgdParams) -> np.ndarray:
    """Closed-form marginal sample at timestep ``t``.

    ``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) * (gamma * eps + mu)``

    ``t`` may be an integer array with one timestep per batch element.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _same_shape(x0, eps, "eps")
    _check_image(x0, bgd)
    ab = alpha_bar_for(schedule, t, x0.ndim - bgd.mu.ndim, bgd.mu.ndim)
    s = np.sqrt(1.0 - ab)
    return np.sqrt(ab) * x0 + s * bgd.gamma * eps + s * bgd.mu


def forward_step(x_prev, t: int, z, schedule: VarianceSchedule, bgd: BgdParams) -> np.ndarray:
    """One transition ``x_{t-1} -> x_t`` of the biased chain."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _same_shape(x_prev, z, "z")
    _check_image(x_prev, bgd)
    a = schedule.alpha(t)
    return np.sqrt(a) * x_prev + schedule.k_at(t) * bgd.mu + np.sqrt(1.0 - a) * bgd.gamma * z


def sample_terminal(shape, rng: np.random.Generator, bgd: BgdParams) -> np.ndarray:
    """Draw ``x_T = gamma * eps + mu`` with ``eps ~ N(0, I)``."""
    shape = tuple(shape)
    _check_image(np.empty(shape), bgd)
    eps = rng.standard_normal(shape)
    return bgd.gamma * eps + bgd.mu
