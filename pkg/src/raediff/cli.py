"""Command-line interface: ``raediff {train,grade,protect,restore,sample,evaluate}``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .bgd import make_bgd, scale_trigger
from .denoiser import TinyDenoiser, TrainConfig, load_checkpoint, save_checkpoint, train
from .dtppm import grade, level_generator, make_levels, verify_ordering
from .errors import NumericalError, RaeDiffError
from .io import (MANIFEST_NAME, DatasetManifest, encode_image, list_images, load_dataset, protected_path,
                 read_image, read_manifest, read_pixels, sha256_file, write_manifest)
from .metrics import compare
from .sampler import SamplerConfig, generate_protected, restore, sample_from_noise
from .schedule import linear_beta_schedule

log = logging.getLogger("raediff")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "gamma": 0.6,
    "t_r": 20,
    "eta": 1.4,
    "levels": (1, 2, 3),
    "timesteps": 1000,
    "beta_min": 1e-4,
    "beta_max": 0.02,
    "seed": 0,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _levels(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("RAEDIFF_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    n = min(_workers(), max(1, len(items)))
    if n == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _write(path: Path, x) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_image(x))


def _resolve(args, name, manifest_value=None):
    """Explicit flag, then manifest value, then default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if manifest_value is not None:
        return manifest_value
    return DEFAULTS[name]


def _load_trigger(path, shape=None):
    raw = read_pixels(path).astype(np.float64)
    if shape is not None and raw.shape != tuple(shape):
        raise RaeDiffError(f"trigger shape {raw.shape} does not match dataset shape {tuple(shape)}")
    return scale_trigger(raw)


def _schedule(args, manifest=None):
    return linear_beta_schedule(
        _resolve(args, "timesteps", manifest and manifest.timesteps),
        _resolve(args, "beta_min", manifest and manifest.beta_min),
        _resolve(args, "beta_max", manifest and manifest.beta_max),
    )


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


def cmd_train(args) -> int:
    _require(args, "input", "trigger", "checkpoint")
    names, images = load_dataset(args.input)
    if not images:
        raise RaeDiffError(f"no PGM/PPM images in {args.input}")
    trigger = _load_trigger(args.trigger, images[0].shape)
    schedule = _schedule(args)
    bgd = make_bgd(trigger, _resolve(args, "gamma"))
    seed = _resolve(args, "seed")
    model = TinyDenoiser.initialize(images[0].size, hidden=args.hidden, emb_dim=16, seed=seed)
    config = TrainConfig(iterations=args.iterations, batch_size=args.batch, lr=args.lr, seed=seed,
                         clip_norm=None if args.clip <= 0 else args.clip, log_every=args.log_every)
    log.info("training %d parameters on %d images for %d iterations", model.num_parameters, len(images),
             config.iterations)
    model = train(model, images, config, schedule, bgd)
    save_checkpoint(model, args.checkpoint)
    loss_log = Path(args.loss_log or f"{args.checkpoint}.loss.csv")
    with open(loss_log, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        w.writerows((i + 1, repr(v)) for i, v in enumerate(model.loss_history))
    if model.loss_history:
        log.info("final loss (last 500 mean) %.5f", float(np.mean(model.loss_history[-500:])))
    print(f"wrote {args.checkpoint} and {loss_log}")
    return EXIT_OK


def cmd_grade(args) -> int:
    _require(args, "input", "trigger", "out")
    names, images = load_dataset(args.input)
    if not images:
        raise RaeDiffError(f"no PGM/PPM images in {args.input}")
    trigger = _load_trigger(args.trigger, images[0].shape)
    schedule = _schedule(args)
    bgd = make_bgd(trigger, _resolve(args, "gamma"))
    levels = make_levels(_resolve(args, "levels"))
    graded = grade(images, levels, schedule, bgd, seed=_resolve(args, "seed"))
    for g in graded:
        for name, x in zip(names, g.images):
            _write(protected_path(args.out, g.level.m, name, "slight_noise"), x)
    report = verify_ordering(images, graded)
    for lv, d in zip(levels, report.mean_distances):
        print(f"level {lv.m} (t_sn={lv.t_sn}): mean L2 distance {d:.6f}")
    print(f"ordering {report.status}; per-image violations {report.per_image_violations}/{len(images)}")
    return EXIT_OK


def cmd_protect(args) -> int:
    _require(args, "input", "trigger", "checkpoint", "out")
    manifest_in = read_manifest(args.manifest, check_files=False) if args.manifest else None
    names, images = load_dataset(args.input)
    if not images:
        raise RaeDiffError(f"no PGM/PPM images in {args.input}")
    if manifest_in is not None:
        by_name = dict(zip(names, images))
        missing = [n for n, _ in manifest_in.images if n not in by_name]
        if missing:
            raise RaeDiffError(f"{len(missing)} manifest images missing from {args.input}, e.g. {missing[0]}")
        names = [n for n, _ in manifest_in.images]
        images = [by_name[n] for n in names]
        seeds = [s for _, s in manifest_in.images]
    trigger = _load_trigger(args.trigger, images[0].shape)
    schedule = _schedule(args, manifest_in)
    gamma = _resolve(args, "gamma", manifest_in and manifest_in.gamma)
    bgd = make_bgd(trigger, gamma)
    config = SamplerConfig(
        t_r=_resolve(args, "t_r", manifest_in and manifest_in.t_r),
        eta=_resolve(args, "eta", manifest_in and manifest_in.eta),
        t_sn_levels=_resolve(args, "levels", manifest_in and tuple(manifest_in.t_sn_levels)),
    )
    seed = _resolve(args, "seed", manifest_in and manifest_in.seed)
    if manifest_in is None or args.seed is not None:
        seeds = [rngmod.image_seed(seed, i) for i in range(len(images))]
    model = load_checkpoint(args.checkpoint)

    def work(job):
        (name, x0, s), level = job
        x_sn, x_p = generate_protected(x0, level, model, schedule, bgd, config, level_generator(s, level))
        _write(protected_path(args.out, level, name, "slight_noise"), x_sn)
        _write(protected_path(args.out, level, name, "protected"), x_p)

    jobs = [(item, m) for m in range(1, len(config.t_sn_levels) + 1) for item in zip(names, images, seeds)]
    log.info("protecting %d images at %d levels (t_r=%d, gamma=%g)", len(images), len(config.t_sn_levels),
             config.t_r, gamma)
    _map(work, jobs)
    manifest = DatasetManifest(
        timesteps=schedule.T, beta_min=float(schedule.betas[0]), beta_max=float(schedule.betas[-1]),
        gamma=gamma, trigger_sha256=sha256_file(args.trigger), t_sn_levels=list(config.t_sn_levels),
        t_r=config.t_r, eta=config.eta, seed=seed, images=list(zip(names, seeds)),
    )
    write_manifest(manifest, Path(args.out) / MANIFEST_NAME)
    print(f"wrote {len(jobs)} protected images and {Path(args.out) / MANIFEST_NAME}")
    return EXIT_OK


def cmd_restore(args) -> int:
    _require(args, "input", "trigger", "checkpoint", "out")
    # digest check happens before any model work
    manifest = read_manifest(Path(args.input) / MANIFEST_NAME, trigger_path=args.trigger)
    names = [n for n, _ in manifest.images]
    first = read_image(protected_path(args.input, 1, names[0]))
    trigger = _load_trigger(args.trigger, first.shape)
    schedule = _schedule(args, manifest)
    bgd = make_bgd(trigger, _resolve(args, "gamma", manifest.gamma))
    config = SamplerConfig(t_r=_resolve(args, "t_r", manifest.t_r), eta=_resolve(args, "eta", manifest.eta),
                           t_sn_levels=tuple(manifest.t_sn_levels))
    model = load_checkpoint(args.checkpoint)
    log.info("restoring with %d reverse steps (eta=%g, t_r=%d)", config.restore_steps, config.eta, config.t_r)

    def work(job):
        (name, s), level = job
        x_p = read_image(protected_path(args.input, level, name))
        x = restore(x_p, model, schedule, bgd, config, rngmod.generator(s, rngmod.STREAM_RESTORE, level))
        _write(Path(args.out) / f"level_{level}" / name, x)

    jobs = [(item, m) for m in range(1, len(config.t_sn_levels) + 1) for item in manifest.images]
    _map(work, jobs)
    print(f"restored {len(jobs)} images with {config.restore_steps} steps each into {args.out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    _require(args, "trigger", "checkpoint", "out")
    trigger = _load_trigger(args.trigger)
    schedule = _schedule(args)
    bgd = make_bgd(trigger, _resolve(args, "gamma"))
    model = load_checkpoint(args.checkpoint)
    if model.image_size != trigger.size:
        raise RaeDiffError(f"checkpoint expects {model.image_size} pixels, trigger has {trigger.size}")
    seed = _resolve(args, "seed")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".pgm" if trigger.shape[0] == 1 else ".ppm"

    def work(i):
        s = rngmod.derive_seed(seed, rngmod.STREAM_SAMPLE, i)
        x = sample_from_noise(model, schedule, bgd, np.random.Generator(np.random.PCG64(s)))
        _write(out / f"sample_{i:05d}{suffix}", x)
        return s

    seeds = _map(work, range(args.n))
    with open(out / "seeds.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "seed"])
        w.writerows((f"sample_{i:05d}{suffix}", s) for i, s in enumerate(seeds))
    print(f"wrote {args.n} samples to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    names_a, names_b = list_images(args.dir_a), list_images(args.dir_b)
    if names_a != names_b:
        raise RaeDiffError(f"{args.dir_a} and {args.dir_b} do not hold the same image files")
    a = [read_image(Path(args.dir_a) / n) for n in names_a]
    b = [read_image(Path(args.dir_b) / n) for n in names_b]
    report = compare(a, b, names_a)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["file", "mse", "psnr_db", "ssim"])
            for name, e, p, s in report.rows():
                w.writerow([name, f"{e:.10g}", "inf" if p == float("inf") else f"{p:.6f}", f"{s:.8f}"])
    print(f"images {len(names_a)}")
    print(f"mean MSE  {report.mean_mse:.6g}")
    print(f"mean PSNR {report.mean_psnr:.4f} dB")
    print(f"mean SSIM {report.mean_ssim:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="raediff", description="Protect image datasets with trigger-biased diffusion.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, *, data=True, out=True):
        if data:
            p.add_argument("--in", dest="input", help="input image directory")
        if out:
            p.add_argument("--out", help="output directory")
        p.add_argument("--trigger", help="trigger image (PGM/PPM, same size as the dataset)")
        p.add_argument("--gamma", type=float, help="scale factor (default 0.6)")
        p.add_argument("--timesteps", type=int, help="diffusion steps T (default 1000)")
        p.add_argument("--beta-min", type=float, help="first beta (default 1e-4)")
        p.add_argument("--beta-max", type=float, help="last beta (default 0.02)")
        p.add_argument("--seed", type=int, help="master seed (default 0)")

    p = sub.add_parser("train", help="fit the noise predictor")
    common(p, out=False)
    p.add_argument("--checkpoint", help="checkpoint file to write")
    p.add_argument("--loss-log", help="CSV loss log (default <checkpoint>.loss.csv)")
    p.add_argument("--iterations", type=int, default=20000)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--clip", type=float, default=1.0, help="gradient-norm clip, <= 0 disables")
    p.add_argument("--hidden", type=int, default=128, help="hidden layer width")
    p.add_argument("--log-every", type=int, default=1000)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grade", help="write slight-noise datasets per permission level")
    common(p)
    p.add_argument("--levels", type=_levels, help="slight-noise timesteps, e.g. 1,2,3")
    p.set_defaults(func=cmd_grade)

    p = sub.add_parser("protect", help="generate protected (adversarial) datasets")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--t-r", type=int, help="adverse time step (default 20)")
    p.add_argument("--eta", type=float, help="reverse factor recorded for restoration (default 1.4)")
    p.add_argument("--levels", type=_levels)
    p.add_argument("--manifest", help="replay parameters and seeds from an existing manifest")
    p.set_defaults(func=cmd_protect)

    p = sub.add_parser("restore", help="restore a protected dataset (needs the matching trigger)")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--t-r", type=int)
    p.add_argument("--eta", type=float)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("sample", help="generate images from biased noise")
    common(p, data=False)
    p.add_argument("--checkpoint")
    p.add_argument("-n", type=int, default=4, help="number of samples")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="MSE/PSNR/SSIM between two aligned image directories")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.add_argument("--csv", help="per-image CSV report")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"raediff: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"raediff: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RaeDiffError, OSError) as exc:
        print(f"raediff: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"raediff: invalid setting: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
