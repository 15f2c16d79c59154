"""Affine-invariant video depth evaluation: one LS fit per video, AbsRel, delta1, OPW."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import EPS_INV, DepthVideo, SpaceTag
from .errors import EmptyMask, SingularFit

DELTA1_THRESHOLD = 1.25


@dataclass(frozen=True)
class FlowField:
    """Forward flow between consecutive frames.

    ``flow[t, 0]`` is the horizontal (column) and ``flow[t, 1]`` the vertical
    (row) displacement taking a pixel of frame ``t`` to frame ``t + 1``.
    """

    flow: np.ndarray      # (N_F - 1, 2, H, W)
    mask: np.ndarray | None = None  # (N_F - 1, H, W) bool

    def __post_init__(self):
        flow = np.asarray(self.flow)
        if flow.ndim != 4 or flow.shape[1] != 2:
            raise ValueError(f"flow must have shape (N_F-1, 2, H, W), got {flow.shape}")
        if not np.all(np.isfinite(flow)):
            raise ValueError("flow contains non-finite displacements")
        mask = self.mask
        if mask is None:
            mask = np.ones((flow.shape[0],) + flow.shape[2:], dtype=bool)
        mask = np.asarray(mask).astype(bool)
        if mask.shape != (flow.shape[0],) + flow.shape[2:]:
            raise ValueError(f"flow mask shape {mask.shape} does not match flow {flow.shape}")
        object.__setattr__(self, "flow", flow)
        object.__setattr__(self, "mask", mask)


@dataclass
class MetricsReport:
    abs_rel: float
    delta1: float
    scale: float
    shift: float
    n_valid: int
    opw: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["opw_x1e3"] = None if self.opw is None else self.opw * 1e3
        return d


def _inverse_frames(video: DepthVideo) -> np.ndarray:
    x = video.frames.astype(np.float64)
    if video.space_tag is SpaceTag.DEPTH:
        return 1.0 / x
    return x


def valid_mask(gt: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Pixels with finite, strictly positive ground truth that the user kept."""
    gt = np.asarray(gt)
    valid = np.isfinite(gt) & (gt > 0)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    return valid


def ls_align(pred, gt, mask=None) -> tuple[float, float]:
    """Least-squares ``(scale, shift)`` with ``scale * pred + shift ~ gt``.

    A single pair is fitted over the valid pixels of every frame jointly.
    """
    pred = np.asarray(getattr(pred, "frames", pred), dtype=np.float64)
    gt = np.asarray(getattr(gt, "frames", gt), dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    sel = np.isfinite(pred) & np.isfinite(gt)
    if mask is not None:
        sel &= np.asarray(mask, dtype=bool)
    x = pred[sel]
    y = gt[sel]
    if x.size < 2:
        raise SingularFit("need at least two valid pixels for a scale/shift fit")
    # centred normal equations; identical solution, better conditioned
    xm = x.mean()
    ym = y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx <= (np.finfo(np.float64).eps * x.size) * max(xm * xm, 1e-300) or sxx == 0.0:
        raise SingularFit("prediction is constant over the valid pixels")
    scale = float(dx @ (y - ym)) / sxx
    shift = float(ym - scale * xm)
    return scale, shift


def abs_rel(pred_depth, gt_depth, mask=None) -> float:
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    valid = valid_mask(gt, mask)
    if not valid.any():
        raise EmptyMask("no valid pixels for AbsRel")
    return float(np.mean(np.abs(pred[valid] - gt[valid]) / gt[valid]))


def delta1(pred_depth, gt_depth, mask=None, threshold: float = DELTA1_THRESHOLD) -> float:
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    valid = valid_mask(gt, mask)
    if not valid.any():
        raise EmptyMask("no valid pixels for delta1")
    p = pred[valid]
    g = gt[valid]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(p / g, g / p)
    return float(np.mean(ratio < threshold))


def _sample(frame: np.ndarray, qx: np.ndarray, qy: np.ndarray, mode: str) -> np.ndarray:
    h, w = frame.shape
    if mode == "nearest":
        return frame[np.clip(np.rint(qy), 0, h - 1).astype(int), np.clip(np.rint(qx), 0, w - 1).astype(int)]
    x0 = np.clip(np.floor(qx), 0, w - 1).astype(int)
    y0 = np.clip(np.floor(qy), 0, h - 1).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = qx - x0
    fy = qy - y0
    top = frame[y0, x0] * (1 - fx) + frame[y0, x1] * fx
    bot = frame[y1, x0] * (1 - fx) + frame[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def warp_next(next_frame: np.ndarray, flow_t: np.ndarray, mode: str = "bilinear"):
    """Sample ``next_frame`` at ``p + flow(p)`` for every pixel ``p``.

    Returns the sampled values and a mask of in-bounds target positions.
    """
    h, w = next_frame.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    qx = xs + flow_t[0]
    qy = ys + flow_t[1]
    inside = (qx >= 0) & (qx <= w - 1) & (qy >= 0) & (qy <= h - 1)
    return _sample(np.asarray(next_frame, dtype=np.float64), qx, qy, mode), inside


def opw(pred, flow: FlowField, mode: str = "bilinear") -> float:
    """Flow-warping temporal error (raw; multiply by 1e3 for the usual scale).

    Each frame is divided by its mean absolute value, frame ``t+1`` is
    sampled at ``p + flow_t(p)``, and the absolute difference to frame ``t``
    is averaged over all valid in-bounds pixels of all consecutive pairs.
    """
    frames = np.asarray(getattr(pred, "frames", pred), dtype=np.float64)
    if frames.shape[0] - 1 != flow.flow.shape[0] or frames.shape[1:] != flow.flow.shape[2:]:
        raise ValueError(f"video {frames.shape} incompatible with flow {flow.flow.shape}")
    total = 0.0
    count = 0
    for t in range(frames.shape[0] - 1):
        a = frames[t] / np.abs(frames[t]).mean()
        b = frames[t + 1] / np.abs(frames[t + 1]).mean()
        warped, inside = warp_next(b, flow.flow[t], mode)
        sel = inside & flow.mask[t]
        total += float(np.abs(a[sel] - warped[sel]).sum())
        count += int(sel.sum())
    if count == 0:
        raise EmptyMask("no pixel survives flow masking in any frame pair")
    return total / count


def evaluate(pred: DepthVideo, gt: DepthVideo, flow: FlowField | None = None,
             mask=None, eps: float = EPS_INV, flow_mode: str = "bilinear") -> MetricsReport:
    """Fit one scale/shift in inverse depth, then score in depth space.

    Aligned inverse depths at or below ``eps`` are clamped to ``eps`` before
    taking the reciprocal.
    """
    pred_inv = _inverse_frames(pred)
    gt_inv = _inverse_frames(gt)
    if pred_inv.shape != gt_inv.shape:
        raise ValueError(f"shape mismatch: pred {pred_inv.shape} vs gt {gt_inv.shape}")
    valid = valid_mask(gt_inv, mask)
    if not valid.any():
        raise EmptyMask("no valid ground-truth pixels")
    scale, shift = ls_align(pred_inv, gt_inv, valid)
    aligned_inv = np.maximum(scale * pred_inv + shift, eps)
    pred_depth = 1.0 / aligned_inv
    with np.errstate(divide="ignore"):
        gt_depth = np.where(valid, 1.0 / np.where(valid, gt_inv, 1.0), 0.0)
    report = MetricsReport(
        abs_rel=abs_rel(pred_depth, gt_depth, valid),
        delta1=delta1(pred_depth, gt_depth, valid),
        scale=scale,
        shift=shift,
        n_valid=int(valid.sum()),
    )
    if flow is not None:
        report.opw = opw(pred_depth, flow, flow_mode)
    return report
