"""Trigger-biased diffusion for self-generating, self-recovering protected image datasets."""

from .bgd import BgdParams, forward_diffuse, forward_step, make_bgd, sample_terminal, scale_trigger
from .denoiser import TinyDenoiser, TrainConfig, bgd_loss, gradient, load_checkpoint, save_checkpoint, train
from .dtppm import GradedDataset, PermissionLevel, grade, make_levels, verify_ordering
from .metrics import MetricReport, compare, mse, psnr, ssim, to_display
from .sampler import (PosteriorParams, SamplerConfig, adversarial_x0, estimate_x0, generate_protected, posterior,
                      restore, reverse_step, sample_from_noise)
from .schedule import VarianceSchedule, compute_kt, linear_beta_schedule

__version__ = "0.1.0"
