"""Analytic depth videos with exact flow, and known per-snippet corruption.

Every scene is a stack of surfaces (planes, sphere caps, discs) whose
inverse depth is closed-form per pixel. Surfaces move parallel to the image
plane and keep their depth along the motion, so the flow maps each visible
surface point to a pixel carrying the same value in the next frame. Moving
surfaces with curved profiles use integer displacements, so warping them
needs no interpolation; sub-pixel motion is reserved for planar surfaces,
where bilinear sampling is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import EPS_INV, AffineParams, DepthSnippet, DepthVideo, SpaceTag
from .errors import InvalidSpec
from .evalkit import FlowField
from .scheduler import SnippetSchedule


class SceneKind(str, Enum):
    TRANSLATING_PLANE = "translating_plane"
    ORBITING_SPHERE_FIELD = "orbiting_sphere_field"
    NEAR_OBJECT_INTRUSION = "near_object_intrusion"
    DEPTH_RANGE_JUMP = "depth_range_jump"


@dataclass
class SceneSpec:
    kind: SceneKind | str
    n_frames: int
    height: int = 64
    width: int = 96
    # px/frame; used by translating_plane and by background drift elsewhere
    velocity: tuple[float, float] = (0.5, 0.25)
    n_objects: int = 3
    # orbit period in frames; None means n_frames - 1 (last frame closes the loop)
    period: int | None = None
    # frame at which the intruding object / the jump appears; None means n_frames // 2
    event_frame: int | None = None
    object_speed: int = 2
    seed: int = 0

    def __post_init__(self):
        try:
            self.kind = SceneKind(self.kind)
        except ValueError as exc:
            raise InvalidSpec(f"unknown scene kind {self.kind!r}") from exc
        if self.n_frames < 1 or self.height < 2 or self.width < 2:
            raise InvalidSpec("scene needs n_frames >= 1 and at least 2x2 pixels")
        self.velocity = tuple(float(v) for v in self.velocity)
        if len(self.velocity) != 2:
            raise InvalidSpec("velocity must be (vx, vy)")
        if self.period is not None and self.period < 1:
            raise InvalidSpec("period must be >= 1")
        if self.event_frame is not None and not 0 <= self.event_frame < self.n_frames:
            raise InvalidSpec("event_frame outside the video")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n_frames": self.n_frames,
            "height": self.height,
            "width": self.width,
            "velocity": list(self.velocity),
            "n_objects": self.n_objects,
            "period": self.period,
            "event_frame": self.event_frame,
            "object_speed": self.object_speed,
            "seed": self.seed,
        }


@dataclass
class CorruptionSpec:
    scale_range: tuple[float, float] = (0.5, 2.0)
    shift_range: tuple[float, float] = (-0.2, 0.2)
    sigma: float = 0.0
    # slow drift: snippet k anchored at frame a gets log-scale error
    # drift * r(a) * j on its slot j, where r is a unit-variance random rate
    # smoothed over drift_length frames and shared by every dilation
    drift: float = 0.0
    drift_length: float = 20.0
    # std of an independent log-scale error on every (snippet, frame) slot
    jitter: float = 0.0
    seed: int = 0
    eps_inv: float = EPS_INV

    def __post_init__(self):
        self.scale_range = tuple(float(v) for v in self.scale_range)
        self.shift_range = tuple(float(v) for v in self.shift_range)
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise InvalidSpec(f"scale range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if not self.shift_range[0] <= self.shift_range[1]:
            raise InvalidSpec(f"empty shift range {self.shift_range}")
        if self.sigma < 0 or self.drift < 0 or self.jitter < 0:
            raise InvalidSpec("sigma, drift and jitter must be non-negative")
        if self.drift_length < 0:
            raise InvalidSpec("drift_length must be non-negative")

    def to_dict(self) -> dict:
        return {
            "scale_range": list(self.scale_range),
            "shift_range": list(self.shift_range),
            "sigma": self.sigma,
            "drift": self.drift,
            "drift_length": self.drift_length,
            "jitter": self.jitter,
            "seed": self.seed,
            "eps_inv": self.eps_inv,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CorruptionSpec":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidSpec(f"unknown corruption keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class _Layer:
    """One surface: per-frame inverse depth (NaN where absent) and 2-D flow."""

    inv: np.ndarray          # (N_F, H, W)
    flow: np.ndarray         # (N_F - 1, 2) constant displacement per step


def _grid(h: int, w: int):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return xs, ys


def _plane_layer(spec: SceneSpec, c0: float, cx: float, cy: float, velocity) -> _Layer:
    xs, ys = _grid(spec.height, spec.width)
    vx, vy = velocity
    t = np.arange(spec.n_frames, dtype=np.float64)[:, None, None]
    inv = c0 + cx * (xs - vx * t) + cy * (ys - vy * t)
    flow = np.tile([vx, vy], (max(spec.n_frames - 1, 0), 1))
    return _Layer(inv, flow)


def _cap_profile(dx, dy, radius, inv_center, inv_rim):
    """Inverse depth of a sphere cap seen head-on; NaN outside the disc."""
    rho2 = (dx * dx + dy * dy) / (radius * radius)
    inside = rho2 <= 1.0
    bulge = np.sqrt(np.clip(1.0 - rho2, 0.0, 1.0))
    depth = 1.0 / inv_rim - (1.0 / inv_rim - 1.0 / inv_center) * bulge
    return np.where(inside, 1.0 / depth, np.nan)


def _sprite_layer(spec: SceneSpec, centers: np.ndarray, radius: float,
                  inv_center: float, inv_rim: float) -> _Layer:
    """A sphere cap whose integer-valued centre follows ``centers`` (N_F, 2)."""
    xs, ys = _grid(spec.height, spec.width)
    inv = np.stack([
        _cap_profile(xs - cx, ys - cy, radius, inv_center, inv_rim) for cx, cy in centers
    ])
    flow = np.diff(centers, axis=0)
    return _Layer(inv, flow)


def _composite(layers: Sequence[_Layer], n_frames: int, h: int, w: int):
    """Z-buffer the layers (largest inverse depth wins) and derive flow + mask."""
    stack = np.stack([np.where(np.isnan(l.inv), -np.inf, l.inv) for l in layers])
    label = np.argmax(stack, axis=0)                       # (N_F, H, W)
    inv = np.take_along_axis(stack, label[None], axis=0)[0]
    if not np.all(np.isfinite(inv)):
        raise InvalidSpec("scene leaves pixels without any surface")

    steps = max(n_frames - 1, 0)
    flow = np.zeros((steps, 2, h, w), dtype=np.float64)
    mask = np.zeros((steps, h, w), dtype=bool)
    xs, ys = _grid(h, w)
    for t in range(steps):
        per_layer = np.stack([l.flow[t] for l in layers])  # (L, 2)
        f = per_layer[label[t]]                             # (H, W, 2)
        flow[t, 0] = f[..., 0]
        flow[t, 1] = f[..., 1]
        qx = xs + f[..., 0]
        qy = ys + f[..., 1]
        ok = (qx >= 0) & (qx <= w - 1) & (qy >= 0) & (qy <= h - 1)
        x0 = np.clip(np.floor(qx), 0, w - 1).astype(int)
        y0 = np.clip(np.floor(qy), 0, h - 1).astype(int)
        x1 = np.clip(np.ceil(qx), 0, w - 1).astype(int)
        y1 = np.clip(np.ceil(qy), 0, h - 1).astype(int)
        nxt = label[t + 1]
        # co-visible: every bilinear tap lands on the same surface
        for yy, xx in ((y0, x0), (y0, x1), (y1, x0), (y1, x1)):
            ok &= nxt[yy, xx] == label[t]
        mask[t] = ok
    return inv, flow, mask, label


def _orbit_centers(spec: SceneSpec, rng: np.random.Generator, n_obj: int):
    period = spec.period or max(spec.n_frames - 1, 1)
    h, w = spec.height, spec.width
    t = np.arange(spec.n_frames)
    out = []
    for _ in range(n_obj):
        cx = rng.uniform(0.35, 0.65) * w
        cy = rng.uniform(0.35, 0.65) * h
        amp = rng.uniform(0.15, 0.3) * min(h, w)
        phase = rng.uniform(0, 2 * np.pi)
        direction = rng.choice([-1.0, 1.0])
        ang = phase + direction * 2 * np.pi * t / period
        centers = np.stack([np.round(cx + amp * np.cos(ang)), np.round(cy + amp * np.sin(ang))], axis=1)
        out.append(centers)
    return out


def generate(spec: SceneSpec) -> tuple[DepthVideo, FlowField]:
    """Render the analytic scene; returns float32 inverse depth and exact flow."""
    rng = np.random.default_rng(spec.seed)
    n, h, w = spec.n_frames, spec.height, spec.width
    kind = spec.kind
    event = spec.event_frame if spec.event_frame is not None else n // 2

    if kind is SceneKind.TRANSLATING_PLANE:
        layers = [_plane_layer(spec, 0.9, -0.4 / w, 0.3 / h, spec.velocity)]

    elif kind is SceneKind.ORBITING_SPHERE_FIELD:
        layers = [_plane_layer(spec, 0.6, 0.0, 0.2 / h, (0.0, 0.0))]
        for k, centers in enumerate(_orbit_centers(spec, rng, spec.n_objects)):
            radius = rng.uniform(0.12, 0.2) * min(h, w)
            inv_rim = 0.9 + 0.35 * k + rng.uniform(0.0, 0.1)
            layers.append(_sprite_layer(spec, centers, radius, inv_rim * 1.3, inv_rim))

    elif kind is SceneKind.NEAR_OBJECT_INTRUSION:
        # far background: depth in [5.5, 10]
        layers = [_plane_layer(spec, 0.1, 0.08 / w, 0.0, (0.0, 0.0))]
        radius = 0.3 * min(h, w)
        t = np.arange(n)
        cx = np.where(
            t >= event,
            np.minimum(w // 2, np.round(radius / 2) + spec.object_speed * (t - event)),
            -10.0 * (radius + w),
        )
        centers = np.stack([cx, np.full(n, float(h // 2))], axis=1)
        layers.append(_sprite_layer(spec, centers, radius, 2.6, 2.2))

    elif kind is SceneKind.DEPTH_RANGE_JUMP:
        vx = spec.velocity[0]
        layers = [_plane_layer(spec, 0.75, -0.15 / w, 0.0, (vx, 0.0))]
        xs, ys = _grid(h, w)
        near = 1.2 + 1.2 * (1.0 - xs / (w - 1)) + 0.1 * ys / (h - 1)
        edge = 0.6 * w
        inv = np.where((xs < edge)[None] & (np.arange(n) >= event)[:, None, None], near[None], np.nan)
        layers.append(_Layer(inv, np.zeros((max(n - 1, 0), 2))))

    else:  # pragma: no cover - SceneKind is exhaustive
        raise InvalidSpec(f"unhandled scene kind {kind}")

    inv, flow, mask, _ = _composite(layers, n, h, w)
    if np.any(inv <= 0):
        raise InvalidSpec("scene produced non-positive inverse depth")
    video = DepthVideo(inv.astype(np.float32), SpaceTag.INVERSE_DEPTH)
    return video, FlowField(flow.astype(np.float32), mask)


def drift_rate(n_frames: int, length: float, seed: int) -> np.ndarray:
    """Random rate per frame with unit marginal variance, Gaussian-smoothed over ``length`` frames."""
    rng = np.random.default_rng([seed, 0xD81F7])
    z = rng.standard_normal(n_frames)
    if length > 0 and n_frames > 1:
        z = ndimage.gaussian_filter1d(z, length, mode="wrap")
        # analytic std of the wrapped filter; the sample std collapses on short videos
        impulse = np.zeros(n_frames)
        impulse[0] = 1.0
        z = z / np.linalg.norm(ndimage.gaussian_filter1d(impulse, length, mode="wrap"))
    return z


def corrupt(gt: DepthVideo, schedule: SnippetSchedule, spec: CorruptionSpec,
            dtype=np.float32) -> tuple[list[DepthSnippet], list[AffineParams]]:
    """Slice ground truth into snippets and apply a hidden affine map to each.

    Snippet ``k`` anchored at frame ``a`` becomes
    ``s_k * gt_slice * exp(drift * r(a) * j + jitter * z) + t_k + noise``
    for slot ``j``, with ``z`` one standard normal per (snippet, frame).
    Returns the snippets and the hidden ``(s_k, t_k)``.
    """
    if schedule.n_frames != gt.frame_count:
        raise InvalidSpec(f"schedule is for {schedule.n_frames} frames, video has {gt.frame_count}")
    rng = np.random.default_rng(spec.seed)
    rate = drift_rate(gt.frame_count, spec.drift_length, spec.seed) if spec.drift > 0 else None
    frames = gt.frames.astype(np.float64)
    snippets: list[DepthSnippet] = []
    hidden: list[AffineParams] = []
    for s in schedule.snippets:
        scale = float(rng.uniform(*spec.scale_range))
        shift = float(rng.uniform(*spec.shift_range))
        x = frames[list(s.frame_indices)]
        log_err = np.zeros(s.n)
        if rate is not None:
            log_err += spec.drift * rate[s.frame_indices[0]] * np.arange(s.n)
        if spec.jitter > 0:
            log_err += spec.jitter * rng.standard_normal(s.n)
        if rate is not None or spec.jitter > 0:
            x = x * np.exp(log_err)[:, None, None]
        y = scale * x + shift
        if spec.sigma > 0:
            y = y + spec.sigma * rng.standard_normal(y.shape)
        if np.any(y <= spec.eps_inv):
            raise InvalidSpec(
                f"corruption of snippet {s.snippet_id} makes inverse depth non-positive "
                f"(min {y.min():.3g}); narrow the shift/scale ranges"
            )
        snippets.append(DepthSnippet(y.astype(dtype), s.frame_indices, s.dilation, s.snippet_id))
        hidden.append(AffineParams(scale, shift))
    return snippets, hidden


def slice_snippets(video: DepthVideo, schedule: SnippetSchedule) -> list[DepthSnippet]:
    """Uncorrupted snippets cut straight from a video."""
    return [
        DepthSnippet(video.frames[list(s.frame_indices)], s.frame_indices, s.dilation, s.snippet_id)
        for s in schedule.snippets
    ]


def percentile_span(frame: np.ndarray, lo: float = 2.0, hi: float = 98.0) -> float:
    p_lo, p_hi = np.percentile(np.asarray(frame, dtype=np.float64), [lo, hi])
    return float(p_hi - p_lo)
