"""Coarse-to-fine snippet refinement of a merged depth video through a pluggable denoiser."""

from __future__ import annotations

import logging
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .core import DepthVideo
from .errors import HookFailure
from .scheduler import build_schedule

logger = logging.getLogger(__name__)

DEFAULT_DILATIONS = (6, 5, 5, 4, 4, 3, 3, 2, 2, 1)

# (noisy snippet frames (n, H, W), step index, noise level) -> denoised frames
DenoiserHook = Callable[[np.ndarray, int, float], np.ndarray]


@dataclass
class RefineConfig:
    start_fraction: float = 0.5
    num_steps: int = 10
    dilation_schedule: list[int] = field(default_factory=lambda: list(DEFAULT_DILATIONS))
    noise_seed: int = 0
    # None -> linear decay from start_fraction towards 0, one entry per step
    noise_scale_schedule: list[float] | None = None
    snippet_len: int = 3
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.start_fraction < 1.0:
            raise ValueError("start_fraction must lie in (0, 1)")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        self.dilation_schedule = [int(g) for g in self.dilation_schedule]
        if len(self.dilation_schedule) != self.num_steps:
            raise ValueError(
                f"dilation_schedule has {len(self.dilation_schedule)} entries for {self.num_steps} steps"
            )
        if any(g < 1 for g in self.dilation_schedule):
            raise ValueError("dilations must be >= 1")
        if any(b > a for a, b in zip(self.dilation_schedule, self.dilation_schedule[1:])):
            raise ValueError("dilation_schedule must be non-increasing")
        if self.noise_scale_schedule is None:
            grid = np.linspace(self.start_fraction, 0.0, self.num_steps + 1)[:-1]
            self.noise_scale_schedule = [float(x) for x in grid]
        self.noise_scale_schedule = [float(x) for x in self.noise_scale_schedule]
        levels = self.noise_scale_schedule
        if len(levels) != self.num_steps:
            raise ValueError(f"noise_scale_schedule has {len(levels)} entries for {self.num_steps} steps")
        if any(not 0.0 <= x <= 1.0 for x in levels):
            raise ValueError("noise scales must lie in [0, 1]")
        if any(b > a for a, b in zip(levels, levels[1:])):
            raise ValueError("noise_scale_schedule must be non-increasing")
        if self.snippet_len < 1:
            raise ValueError("snippet_len must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "RefineConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown RefineConfig keys: {sorted(unknown)}")
        return cls(**dict(data))


class IdentityHook:
    thread_safe = True

    def __call__(self, frames, step, level):
        return np.array(frames, copy=True)


class GaussianSmoothHook:
    """Spatial Gaussian blur of every frame; a stand-in for a real denoiser."""

    thread_safe = True

    def __init__(self, sigma: float = 1.0):
        self.sigma = float(sigma)

    def __call__(self, frames, step, level):
        return ndimage.gaussian_filter(np.asarray(frames, dtype=np.float64),
                                       sigma=(0.0, self.sigma, self.sigma), mode="nearest")


class SnippetMeanHook:
    """Replace every frame of a snippet by the snippet's temporal mean."""

    thread_safe = True

    def __call__(self, frames, step, level):
        frames = np.asarray(frames, dtype=np.float64)
        return np.broadcast_to(frames.mean(axis=0), frames.shape).copy()


class ExternalProcessHook:
    """Run a command per snippet, exchanging NPY files through a scratch directory.

    The command is invoked as ``cmd... IN_NPY OUT_NPY STEP LEVEL``; it must
    write a float32 array of the input's shape to ``OUT_NPY``.
    """

    thread_safe = True

    def __init__(self, command: Sequence[str], timeout: float | None = None):
        self.command = list(command)
        self.timeout = timeout

    def __call__(self, frames, step, level):
        from .npyio import load_array, save_array

        with tempfile.TemporaryDirectory(prefix="rolling_align_hook_") as tmp:
            src = Path(tmp) / "in.npy"
            dst = Path(tmp) / "out.npy"
            save_array(src, frames)
            proc = subprocess.run(
                self.command + [str(src), str(dst), str(step), repr(float(level))],
                capture_output=True, text=True, timeout=self.timeout,
            )
            if proc.returncode != 0:
                raise HookFailure(f"hook command exited {proc.returncode}: {proc.stderr.strip()}")
            if not dst.exists():
                raise HookFailure("hook command wrote no output file")
            return load_array(dst)


HOOKS = {
    "identity": IdentityHook,
    "gaussian_smooth": GaussianSmoothHook,
    "snippet_mean": SnippetMeanHook,
}


def get_hook(name: str, **kwargs) -> DenoiserHook:
    try:
        return HOOKS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown hook {name!r}; choose from {sorted(HOOKS)}") from None


def robust_spread(frames: np.ndarray) -> float:
    """2nd-98th percentile span of the whole video (1 if the video is flat)."""
    lo, hi = np.percentile(np.asarray(frames, dtype=np.float64), [2.0, 98.0])
    span = float(hi - lo)
    return span if span > 0 else 1.0


def noise_field(shape: tuple[int, int], cfg: RefineConfig, spread: float) -> np.ndarray:
    """The single H x W perturbation shared by every frame."""
    rng = np.random.default_rng(cfg.noise_seed)
    return cfg.noise_scale_schedule[0] * spread * rng.standard_normal(shape)


def _fit_dilation(g: int, n: int, n_frames: int) -> int:
    # with stride 1 every frame is covered iff g <= n_frames // n
    if n <= 1:
        return g
    return max(1, min(g, n_frames // n))


def _checked(out, shape, snippet_id: int, step: int) -> np.ndarray:
    out = np.asarray(out)
    if out.shape != shape:
        raise HookFailure(f"hook returned shape {out.shape} for snippet {snippet_id} "
                          f"at step {step}, expected {shape}")
    if not np.all(np.isfinite(out)):
        raise HookFailure(f"hook returned non-finite values for snippet {snippet_id} at step {step}")
    return out.astype(np.float64, copy=False)


def refine_step(x: np.ndarray, step: int, dilation: int, level: float,
                denoiser: DenoiserHook, cfg: RefineConfig) -> np.ndarray:
    """One denoising pass at one dilation followed by per-frame averaging."""
    n_frames = x.shape[0]
    n = min(cfg.snippet_len, n_frames)
    g = _fit_dilation(dilation, n, n_frames)
    if g != dilation:
        logger.info("step %d: dilation %d does not fit %d frames, using %d", step, dilation, n_frames, g)
    sched = build_schedule(n_frames, n, [g], 1)

    def run(spec):
        inp = x[list(spec.frame_indices)].copy()
        return _checked(denoiser(inp, step, level), inp.shape, spec.snippet_id, step)

    threads = cfg.threads if getattr(denoiser, "thread_safe", False) else 1
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outputs = list(pool.map(run, sched.snippets))
    else:
        outputs = [run(s) for s in sched.snippets]

    out = np.empty_like(x)
    for i, cov in enumerate(sched.coverage):
        first = outputs[cov[0][0]][cov[0][1]]
        if len(cov) == 1:
            out[i] = first
            continue
        # mean written as first + mean deviation: exact when all copies agree
        dev = np.zeros_like(first)
        for k, j in cov[1:]:
            dev += outputs[k][j] - first
        out[i] = first + dev / len(cov)
    return out


def refine(video: DepthVideo, cfg: RefineConfig | None = None,
           denoiser: DenoiserHook | None = None) -> DepthVideo:
    """Perturb the video once, then denoise snippet-wise from coarse to fine dilation.

    The perturbation is one seeded Gaussian H x W field added to every frame,
    scaled by the first noise level times the video's robust spread. Every
    step averages the overlapping snippet outputs frame by frame.
    """
    cfg = cfg or RefineConfig()
    denoiser = denoiser or IdentityHook()
    src = video.frames
    x = src.astype(np.float64)
    if cfg.noise_scale_schedule[0] > 0:
        x = x + noise_field(src.shape[1:], cfg, robust_spread(src))[None]
    for step, (g, level) in enumerate(zip(cfg.dilation_schedule, cfg.noise_scale_schedule)):
        x = refine_step(x, step, g, level, denoiser, cfg)
    return DepthVideo(x.astype(src.dtype), video.space_tag)
