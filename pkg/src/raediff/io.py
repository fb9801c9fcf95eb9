"""Netpbm image files, dataset directories and dataset manifests."""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagicError, DigestMismatchError, FormatError, ManifestError, TruncatedFileError, \
    UnsupportedVersionError

IMAGE_SUFFIXES = (".pgm", ".ppm")
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def _parse_header(data: bytes, path) -> tuple[int, int, int, int]:
    """Return ``(channels, width, height, data_offset)``."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise BadMagicError(f"{path}: expected binary PGM/PPM (P5/P6), got {magic!r}")
    pos = 2
    values = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise TruncatedFileError(f"{path}: header ends early")
        try:
            values.append(int(m.group(1)))
        except ValueError:
            raise FormatError(f"{path}: bad header field {m.group(1)!r}") from None
        pos = m.end()
    width, height, maxval = values
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}, only 255 is handled")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise TruncatedFileError(f"{path}: missing pixel data")
    return (1 if magic == b"P5" else 3), width, height, pos + 1


def read_pixels(path) -> np.ndarray:
    """Raw 8-bit pixels as a ``(C, H, W)`` uint8 array."""
    data = Path(path).read_bytes()
    channels, width, height, offset = _parse_header(data, path)
    n = channels * width * height
    if len(data) - offset < n:
        raise TruncatedFileError(f"{path}: expected {n} pixel bytes, found {len(data) - offset}")
    pix = np.frombuffer(data, dtype=np.uint8, count=n, offset=offset)
    return pix.reshape(height, width, channels).transpose(2, 0, 1).copy()


def read_image(path) -> np.ndarray:
    """Image as float64 ``(C, H, W)`` in [-1, 1]: pixel ``p`` maps to ``p / 127.5 - 1``."""
    return read_pixels(path).astype(np.float64) / 127.5 - 1.0


def quantize(x) -> np.ndarray:
    """Clamp to [-1, 1] and round half up to 8-bit pixels."""
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    return np.floor((x + 1.0) * 127.5 + 0.5).astype(np.uint8)


def encode_image(x) -> bytes:
    pix = quantize(x)
    if pix.ndim == 2:
        pix = pix[None]
    if pix.ndim != 3 or pix.shape[0] not in (1, 3):
        raise FormatError(f"cannot encode tensor of shape {pix.shape}; need 1 or 3 channels")
    c, h, w = pix.shape
    header = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n255\n".encode("ascii")
    return header + pix.transpose(1, 2, 0).tobytes()


def write_image(x, path) -> None:
    Path(path).write_bytes(encode_image(x))


def list_images(directory) -> list[str]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    return sorted(p.name for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def load_dataset(directory) -> tuple[list[str], list[np.ndarray]]:
    """Sorted filenames and their images; all images must share one shape."""
    names = list_images(directory)
    images = [read_image(Path(directory) / n) for n in names]
    if images and any(im.shape != images[0].shape for im in images):
        raise FormatError(f"{directory}: images have differing dimensions")
    return names, images


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def protected_path(root, level: int, name: str, kind: str = "protected") -> Path:
    """Layout of a protected dataset: ``<root>/level_<m>/<kind>/<name>``, kind in {slight_noise, protected}."""
    return Path(root) / f"level_{level}" / kind / name


@dataclass
class DatasetManifest:
    """Everything needed to replay protection or run restoration."""

    timesteps: int
    beta_min: float
    beta_max: float
    gamma: float
    trigger_sha256: str
    t_sn_levels: list[int]
    t_r: int
    eta: float
    seed: int
    images: list[tuple[str, int]] = field(default_factory=list)
    format_version: int = MANIFEST_VERSION

    def to_json(self) -> str:
        doc = {
            "format_version": self.format_version,
            "schedule": {"timesteps": self.timesteps, "beta_min": self.beta_min, "beta_max": self.beta_max},
            "gamma": self.gamma,
            "trigger_sha256": self.trigger_sha256,
            "levels": [{"level": m, "t_sn": t} for m, t in enumerate(self.t_sn_levels, start=1)],
            "t_r": self.t_r,
            "eta": self.eta,
            "seed": self.seed,
            "images": [{"file": name, "seed": seed} for name, seed in self.images],
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ManifestError("manifest must be a JSON object")
        version = doc.get("format_version")
        if version != MANIFEST_VERSION:
            raise UnsupportedVersionError(f"unsupported manifest version {version!r}")
        try:
            sched = doc["schedule"]
            levels = doc["levels"]
            m = cls(
                timesteps=_typed(sched["timesteps"], int, "schedule.timesteps"),
                beta_min=_typed(sched["beta_min"], float, "schedule.beta_min"),
                beta_max=_typed(sched["beta_max"], float, "schedule.beta_max"),
                gamma=_typed(doc["gamma"], float, "gamma"),
                trigger_sha256=_typed(doc["trigger_sha256"], str, "trigger_sha256"),
                t_sn_levels=[_typed(lv["t_sn"], int, "levels.t_sn") for lv in levels],
                t_r=_typed(doc["t_r"], int, "t_r"),
                eta=_typed(doc["eta"], float, "eta"),
                seed=_typed(doc["seed"], int, "seed"),
                images=[(_typed(im["file"], str, "images.file"), _typed(im["seed"], int, "images.seed"))
                        for im in doc["images"]],
            )
            if [lv["level"] for lv in levels] != list(range(1, len(levels) + 1)):
                raise ManifestError("levels must be numbered 1..m in order")
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"manifest schema violation: missing or malformed {exc}") from None
        m.validate()
        return m

    def validate(self) -> None:
        if not self.t_sn_levels or self.t_sn_levels[0] < 1 or any(
                b <= a for a, b in zip(self.t_sn_levels, self.t_sn_levels[1:])):
            raise ManifestError(f"levels must be >= 1 and strictly increasing, got {self.t_sn_levels}")
        if not re.fullmatch(r"[0-9a-f]{64}", self.trigger_sha256):
            raise ManifestError("trigger_sha256 must be 64 lowercase hex digits")
        if self.timesteps < 1 or not 0 < self.beta_min <= self.beta_max < 1:
            raise ManifestError("invalid schedule parameters")
        if not 0 <= self.gamma <= 1 or self.t_r < 0 or self.eta < 1:
            raise ManifestError("invalid gamma, t_r or eta")
        names = [n for n, _ in self.images]
        if len(set(names)) != len(names) or any("/" in n or "\\" in n or n.startswith(".") for n in names):
            raise ManifestError("image names must be unique plain filenames")


def _typed(value, kind, name):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ManifestError(f"field {name} must be {kind.__name__}, got {value!r}")
    return value


def write_manifest(manifest: DatasetManifest, path) -> None:
    manifest.validate()
    atomic_write_text(path, manifest.to_json())


def read_manifest(path, trigger_path=None, check_files: bool = True) -> DatasetManifest:
    """Load and validate a manifest.

    With ``trigger_path`` the trigger file digest must match; with
    ``check_files`` every protected image referenced must exist next to the
    manifest.
    """
    path = Path(path)
    manifest = DatasetManifest.from_json(path.read_text(encoding="utf-8"))
    if trigger_path is not None:
        digest = sha256_file(trigger_path)
        if digest != manifest.trigger_sha256:
            raise DigestMismatchError(
                f"trigger {trigger_path} has digest {digest[:12]}..., manifest expects {manifest.trigger_sha256[:12]}...")
    if check_files:
        missing = [str(protected_path(path.parent, m, name))
                   for m in range(1, len(manifest.t_sn_levels) + 1)
                   for name, _ in manifest.images
                   if not protected_path(path.parent, m, name).is_file()]
        if missing:
            raise ManifestError(f"{len(missing)} referenced files missing, e.g. {missing[0]}")
    return manifest
