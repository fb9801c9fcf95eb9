"""Noise predictor and its training loop.

The reference model is a fully-connected network, written directly in
numpy with hand-derived backpropagation::

    h1 = silu(W1 @ [x_t, emb(t)] + b1)
    h2 = silu(W2 @ h1 + b2)
    eps_hat = W3 @ h2 + b3

where ``emb(t)`` is a sinusoidal timestep embedding. Any object with a
``predict(x_t, t)`` method can stand in for it in the samplers.
"""

from __future__ import annotations

import logging
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import rng as rngmod
from .bgd import BgdParams, forward_diffuse
from .errors import (
    BadMagicError,
    DimensionMismatchError,
    FormatError,
    NumericalError,
    ShapeError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .schedule import VarianceSchedule

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RAEDIFF1"
CHECKPOINT_VERSION = 1

_STREAM_INIT = 11
_STREAM_TRAIN = 12


class NoisePredictor(Protocol):
    def predict(self, x_t: np.ndarray, t) -> np.ndarray: ...


def timestep_embedding(t, dim: int = 16) -> np.ndarray:
    """Sinusoidal embedding, shape ``(N, dim)`` for ``N`` timesteps."""
    if dim % 2:
        raise ValueError("embedding dimension must be even")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _silu(x):
    return x * _sigmoid(x)


def _silu_grad(x):
    sig = _sigmoid(x)
    return sig * (1.0 + x * (1.0 - sig))


class TinyDenoiser:
    """Two-hidden-layer SiLU network predicting the noise in ``x_t``.

    Attributes:
        weights: List of weight matrices, each of shape ``(out, in)``.
        biases: List of bias vectors, each of shape ``(out,)``.
        emb_dim: Width of the timestep embedding.
        loss_history: Per-iteration training loss, filled in by :func:`train`.
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], emb_dim: int = 16):
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.emb_dim = int(emb_dim)
        self.loss_history: list[float] = []
        _validate_layers([w.shape for w in self.weights], [b.shape for b in self.biases], self.emb_dim)

    @classmethod
    def initialize(cls, image_size: int, hidden: int = 128, emb_dim: int = 16, seed: int = 0) -> "TinyDenoiser":
        """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from ``seed``."""
        gen = rngmod.generator(seed, _STREAM_INIT)
        dims = [image_size + emb_dim, hidden, hidden, image_size]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            s = 1.0 / np.sqrt(fan_in)
            weights.append(gen.uniform(-s, s, size=(fan_out, fan_in)))
            biases.append(gen.uniform(-s, s, size=fan_out))
        return cls(weights, biases, emb_dim)

    @property
    def image_size(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "TinyDenoiser":
        return TinyDenoiser(self.weights, self.biases, self.emb_dim)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for w, b in zip(self.weights, self.biases) for p in (w, b)])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_parameters:
            raise ShapeError(f"expected {self.num_parameters} parameters, got {flat.size}")
        pos = 0
        for i in range(len(self.weights)):
            for arr in (self.weights[i], self.biases[i]):
                arr[...] = flat[pos:pos + arr.size].reshape(arr.shape)
                pos += arr.size

    def _inputs(self, x_t: np.ndarray, t) -> tuple[np.ndarray, tuple[int, ...]]:
        x_t = np.asarray(x_t, dtype=np.float64)
        batched = x_t.ndim == 4
        flat = x_t.reshape(x_t.shape[0] if batched else 1, -1)
        if flat.shape[1] != self.image_size:
            raise ShapeError(f"model expects {self.image_size} pixels, got {flat.shape[1]}")
        t = np.broadcast_to(np.asarray(t), (flat.shape[0],))
        return np.concatenate([flat, timestep_embedding(t, self.emb_dim)], axis=1), x_t.shape

    def _forward(self, inp: np.ndarray):
        cache = []
        a = inp
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            cache.append((a, z))
            a = z if i == n - 1 else _silu(z)
        return a, cache

    def predict(self, x_t: np.ndarray, t) -> np.ndarray:
        inp, shape = self._inputs(x_t, t)
        out, _ = self._forward(inp)
        return out.reshape(shape)

    def loss_and_grad(self, x_t: np.ndarray, t, eps: np.ndarray):
        """Mean squared error against ``eps`` and its gradient per layer.

        Returns:
            ``(loss, grad_weights, grad_biases)``.
        """
        inp, shape = self._inputs(x_t, t)
        target = np.asarray(eps, dtype=np.float64).reshape(inp.shape[0], -1)
        out, cache = self._forward(inp)
        diff = out - target
        loss = float(np.mean(diff * diff))

        grad = 2.0 * diff / diff.size
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in reversed(range(len(self.weights))):
            a_in, z = cache[i]
            if i != len(self.weights) - 1:
                grad = grad * _silu_grad(z)
            gw[i] = grad.T @ a_in
            gb[i] = grad.sum(axis=0)
            grad = grad @ self.weights[i]
        return loss, gw, gb


def _validate_layers(wshapes, bshapes, emb_dim: int) -> None:
    if not wshapes:
        raise DimensionMismatchError("network has no layers")
    for i, (ws, bs) in enumerate(zip(wshapes, bshapes)):
        if len(ws) != 2 or bs != (ws[0],):
            raise DimensionMismatchError(f"layer {i}: weight {ws} and bias {bs} disagree")
        if i and ws[1] != wshapes[i - 1][0]:
            raise DimensionMismatchError(f"layer {i} expects {ws[1]} inputs, previous layer gives {wshapes[i - 1][0]}")
    if wshapes[0][1] != wshapes[-1][0] + emb_dim:
        raise DimensionMismatchError(
            f"input width {wshapes[0][1]} != image size {wshapes[-1][0]} + embedding {emb_dim}"
        )


def bgd_loss(predictor: NoisePredictor, x0, t, eps, schedule: VarianceSchedule, bgd: BgdParams) -> float:
    """MSE between ``eps`` and the prediction on ``forward_diffuse(x0, t, eps)``."""
    x_t = forward_diffuse(x0, t, eps, schedule, bgd)
    pred = np.asarray(predictor.predict(x_t, t), dtype=np.float64)
    if pred.shape != x_t.shape:
        raise ShapeError(f"predictor returned shape {pred.shape}, expected {x_t.shape}")
    diff = np.asarray(eps, dtype=np.float64) - pred
    return float(np.mean(diff * diff))


def batch_gradient(predictor: TinyDenoiser, x0, t, eps, schedule: VarianceSchedule, bgd: BgdParams):
    """Loss and flat parameter gradient for explicit ``(x0, t, eps)`` triples.

    ``x0`` and ``eps`` have shape ``(N, C, H, W)``; ``t`` has shape ``(N,)``.
    """
    x_t = forward_diffuse(x0, np.asarray(t), eps, schedule, bgd)
    loss, gw, gb = predictor.loss_and_grad(x_t, t, eps)
    flat = np.concatenate([p.ravel() for w, b in zip(gw, gb) for p in (w, b)])
    return loss, flat


def gradient(predictor: TinyDenoiser, batch, schedule: VarianceSchedule, bgd: BgdParams,
             rng: np.random.Generator) -> np.ndarray:
    """Gradient of the training loss on ``batch`` with fresh ``t`` and ``eps`` from ``rng``."""
    batch = np.asarray(batch, dtype=np.float64)
    t = rng.integers(1, schedule.T + 1, size=batch.shape[0])
    eps = rng.standard_normal(batch.shape)
    return batch_gradient(predictor, batch, t, eps, schedule, bgd)[1]


@dataclass
class TrainConfig:
    iterations: int = 20000
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    clip_norm: float | None = 1.0
    log_every: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.batch_size < 1 or self.lr <= 0:
            raise ValueError("batch size and learning rate must be positive")


def train(predictor: TinyDenoiser, dataset, config: TrainConfig, schedule: VarianceSchedule,
          bgd: BgdParams) -> TinyDenoiser:
    """Fit ``predictor`` to the biased noise-prediction objective with plain SGD.

    Each iteration draws a batch of images with replacement, one timestep
    per image uniformly from 1..T and fresh Gaussian noise. The input model
    is left untouched; a trained copy is returned with ``loss_history`` set.

    Raises:
        NumericalError: if a loss or gradient becomes non-finite.
    """
    data = np.stack([np.asarray(x, dtype=np.float64) for x in dataset]) if len(dataset) else None
    if data is None:
        raise ValueError("dataset is empty")
    model = predictor.copy()
    gen = rngmod.generator(config.seed, _STREAM_TRAIN)
    flat = model.get_flat()
    history = []
    for it in range(config.iterations):
        idx = gen.integers(0, data.shape[0], size=config.batch_size)
        t = gen.integers(1, schedule.T + 1, size=config.batch_size)
        eps = gen.standard_normal((config.batch_size,) + data.shape[1:])
        loss, grad = batch_gradient(model, data[idx], t, eps, schedule, bgd)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericalError(f"non-finite loss/gradient at iteration {it} (loss={loss})")
        if config.clip_norm is not None:
            norm = float(np.linalg.norm(grad))
            if norm > config.clip_norm:
                grad *= config.clip_norm / norm
        flat -= config.lr * grad
        model.set_flat(flat)
        history.append(loss)
        if config.log_every and (it + 1) % config.log_every == 0:
            log.info("iter %d loss %.5f", it + 1, np.mean(history[-config.log_every:]))
    model.loss_history = history
    return model


def save_checkpoint(predictor: TinyDenoiser, path) -> None:
    """Write the binary checkpoint (see README for the byte layout)."""
    parts = [CHECKPOINT_MAGIC, struct.pack("<III", CHECKPOINT_VERSION, len(predictor.weights), predictor.emb_dim)]
    for w, b in zip(predictor.weights, predictor.biases):
        parts.append(struct.pack("<II", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    _atomic_write(Path(path), b"".join(parts))


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> TinyDenoiser:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:8]!r}")
    pos = 8

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedFileError(f"{path}: truncated at byte {len(data)}, needed {pos + n}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    version, n_layers, emb_dim = struct.unpack("<III", take(12))
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{path}: checkpoint version {version} not supported")
    weights, biases = [], []
    for _ in range(n_layers):
        rows, cols = struct.unpack("<II", take(8))
        weights.append(np.frombuffer(take(8 * rows * cols), dtype="<f8").reshape(rows, cols).astype(np.float64))
        biases.append(np.frombuffer(take(8 * rows), dtype="<f8").astype(np.float64))
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return TinyDenoiser(weights, biases, emb_dim)
