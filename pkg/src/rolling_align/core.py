"""Domain types shared by every stage of the pipeline.

Videos and snippets carry float arrays of shape ``(frames, H, W)``. Pixel
storage defaults to float32; anything that reduces over many pixels works in
float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateValue

EPS_INV = 1e-6
EPS_NORM = 1e-6


class SpaceTag(str, Enum):
    INVERSE_DEPTH = "inverse_depth"
    DEPTH = "depth"

    def toggled(self) -> "SpaceTag":
        return SpaceTag.DEPTH if self is SpaceTag.INVERSE_DEPTH else SpaceTag.INVERSE_DEPTH


def _as_frames(frames, name: str) -> np.ndarray:
    arr = np.asarray(frames)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (frames, H, W), got {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr = np.ascontiguousarray(arr)
    if arr.flags.writeable:
        # freeze a private copy, never the caller's buffer
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DepthVideo:
    """Dense per-frame depth or inverse depth, ``frames`` of shape (N_F, H, W)."""

    frames: np.ndarray
    space_tag: SpaceTag = SpaceTag.INVERSE_DEPTH

    def __post_init__(self):
        object.__setattr__(self, "frames", _as_frames(self.frames, "DepthVideo.frames"))
        object.__setattr__(self, "space_tag", SpaceTag(self.space_tag))
        if self.space_tag is SpaceTag.DEPTH and np.any(self.frames <= 0):
            raise ValueError("depth-tagged video must be strictly positive")

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames.shape


@dataclass(frozen=True)
class DepthSnippet:
    frames: np.ndarray
    frame_indices: tuple[int, ...]
    dilation: int
    snippet_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "frames", _as_frames(self.frames, "DepthSnippet.frames"))
        idx = tuple(int(i) for i in self.frame_indices)
        object.__setattr__(self, "frame_indices", idx)
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")
        if len(idx) != self.frames.shape[0]:
            raise ValueError(
                f"{len(idx)} frame indices for {self.frames.shape[0]} snippet frames"
            )
        if idx[0] < 0:
            raise ValueError("frame indices must be non-negative")
        if any(b - a != self.dilation for a, b in zip(idx, idx[1:])):
            raise ValueError(f"frame indices {idx} are not spaced by dilation {self.dilation}")

    @property
    def n(self) -> int:
        return self.frames.shape[0]

    def with_frames(self, frames) -> "DepthSnippet":
        return DepthSnippet(frames, self.frame_indices, self.dilation, self.snippet_id)


@dataclass(frozen=True)
class AffineParams:
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(x, dtype=np.float64) + self.shift

    def inverse(self) -> "AffineParams":
        return AffineParams(1.0 / self.scale, -self.shift / self.scale)

    def compose(self, inner: "AffineParams") -> "AffineParams":
        """Return the map ``x -> self(inner(x))``."""
        return AffineParams(self.scale * inner.scale, self.scale * inner.shift + self.shift)


def invert(video: DepthVideo, eps: float = EPS_INV) -> DepthVideo:
    """Per-pixel reciprocal, switching between depth and inverse depth."""
    frames = video.frames
    if np.any(frames <= eps):
        bad = int(np.count_nonzero(frames <= eps))
        raise DegenerateValue(f"{bad} pixel(s) <= {eps}; reciprocal undefined")
    out = (1.0 / frames.astype(np.float64)).astype(frames.dtype)
    return DepthVideo(out, video.space_tag.toggled())


def normalize_snippet(
    snippet: DepthSnippet,
    lo_pct: float = 2.0,
    hi_pct: float = 98.0,
    eps: float = EPS_NORM,
) -> tuple[DepthSnippet, AffineParams]:
    """Jointly normalize all frames of a snippet to the [-1, 1] percentile range.

    Percentiles are taken over every pixel of every frame together, so the
    relative depth layout across the snippet survives. Values outside the
    percentile band are mapped by the same affine function and not clipped.

    Returns:
        The normalized snippet (float64 frames) and the affine map taking
        normalized values back to the input values.
    """
    x = snippet.frames.astype(np.float64)
    p_lo, p_hi = np.percentile(x, [lo_pct, hi_pct], method="linear")
    spread = p_hi - p_lo
    if not spread > eps:
        raise DegenerateValue(
            f"percentile spread {spread:.3g} below {eps}; snippet is near-constant"
        )
    half = spread / 2.0
    center = (p_hi + p_lo) / 2.0
    normalized = (x - center) / half
    return snippet.with_frames(normalized), AffineParams(float(half), float(center))

