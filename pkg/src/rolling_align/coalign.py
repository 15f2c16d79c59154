"""Joint per-snippet scale/shift estimation and merging of aligned snippets."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .core import EPS_INV, AffineParams, DepthSnippet, DepthVideo, SpaceTag
from .errors import DegenerateValue, InvalidSchedule, NonFinite
from .scheduler import SnippetSchedule

logger = logging.getLogger(__name__)

SHIFT_PENALTY_FORMS = ("quadratic", "linear_as_printed")


@dataclass
class CoalignConfig:
    lambda1: float = 0.1
    lambda2: float = 10.0
    steps: int = 2000
    learning_rate: float = 1e-2
    final_learning_rate: float = 1e-4
    # dilation -> weight; dilations not listed get weight equal to the dilation
    dilation_weights: dict[int, float] = field(default_factory=dict)
    shift_penalty_form: str = "quadratic"
    seed: int = 0
    use_depth_space_term: bool = True
    eps_inv: float = EPS_INV
    pixel_stride: int = 1
    threads: int = 1
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    center_shift: bool = True
    global_gauge: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not (self.learning_rate > 0 and self.final_learning_rate > 0):
            raise ValueError("learning rates must be positive")
        if self.shift_penalty_form not in SHIFT_PENALTY_FORMS:
            raise ValueError(f"shift_penalty_form must be one of {SHIFT_PENALTY_FORMS}")
        self.dilation_weights = {int(k): float(v) for k, v in self.dilation_weights.items()}
        if any(v <= 0 for v in self.dilation_weights.values()):
            raise ValueError("dilation weights must be positive")
        if self.pixel_stride < 1:
            raise ValueError("pixel_stride must be >= 1")
        self.adam_betas = tuple(float(b) for b in self.adam_betas)

    def weight(self, dilation: int) -> float:
        return self.dilation_weights.get(int(dilation), float(dilation))

    def learning_rate_at(self, step: int) -> float:
        if self.steps == 1:
            return self.learning_rate
        frac = step / (self.steps - 1)
        return self.learning_rate * (self.final_learning_rate / self.learning_rate) ** frac

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilation_weights"] = {str(k): v for k, v in self.dilation_weights.items()}
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "CoalignConfig":
        data = dict(data)
        if "dilation_weights" in data:
            data["dilation_weights"] = {int(k): float(v) for k, v in data["dilation_weights"].items()}
        if "adam_betas" in data:
            data["adam_betas"] = tuple(data["adam_betas"])
        known = cls.__dataclass_fields__
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown coalign config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class AlignmentSolution:
    """Per-snippet affine parameters returned by :func:`solve`.

    ``objective_trace`` holds the objective at every optimizer iterate; its
    final entry repeats the objective of the returned (best-seen) parameters.
    """

    params: list[AffineParams]
    final_objective: float
    objective_trace: list[float]
    metadata: dict = field(default_factory=dict)

    @property
    def scales(self) -> np.ndarray:
        return np.array([p.scale for p in self.params])

    @property
    def shifts(self) -> np.ndarray:
        return np.array([p.shift for p in self.params])

    def to_dict(self, config: CoalignConfig | None = None, include_trace: bool = True) -> dict:
        out = {
            "params": [
                {"snippet_id": k, "scale": p.scale, "shift": p.shift}
                for k, p in enumerate(self.params)
            ],
            "final_objective": self.final_objective,
            "metadata": self.metadata,
        }
        if config is not None:
            out["config"] = config.to_dict()
        if include_trace:
            out["objective_trace"] = list(self.objective_trace)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "AlignmentSolution":
        params = sorted(data["params"], key=lambda p: p["snippet_id"])
        return cls(
            params=[AffineParams(float(p["scale"]), float(p["shift"])) for p in params],
            final_objective=float(data["final_objective"]),
            objective_trace=[float(v) for v in data.get("objective_trace", [data["final_objective"]])],
            metadata=dict(data.get("metadata", {})),
        )


def _check_consistent(schedule: SnippetSchedule, snippets: Sequence[DepthSnippet]) -> tuple[int, int]:
    if len(snippets) != schedule.n_snippets:
        raise InvalidSchedule(
            f"{len(snippets)} snippets for a schedule with {schedule.n_snippets} entries"
        )
    shapes = {s.frames.shape[1:] for s in snippets}
    if len(shapes) != 1:
        raise ValueError(f"snippets disagree on frame size: {sorted(shapes)}")
    for spec, snip in zip(schedule.snippets, snippets):
        if snip.frame_indices != spec.frame_indices:
            raise InvalidSchedule(
                f"snippet {spec.snippet_id} covers {snip.frame_indices}, schedule says {spec.frame_indices}"
            )
    schedule.require_full_coverage()
    return shapes.pop()


class SlotLayout:
    """Frame-major, slot-major packing of every (frame, snippet-slot) prediction.

    Built once per solve; the optimizer loop only touches ``flat`` through the
    kernel.
    """

    def __init__(self, schedule: SnippetSchedule, snippets: Sequence[DepthSnippet],
                 cfg: CoalignConfig):
        _check_consistent(schedule, snippets)
        ps = cfg.pixel_stride
        self.n_frames = schedule.n_frames
        self.n_snippets = schedule.n_snippets
        counts = np.array(schedule.frame_coverage_counts(), dtype=np.int64)
        self.starts = np.zeros(self.n_frames + 1, dtype=np.int64)
        np.cumsum(counts, out=self.starts[1:])
        n_slots = int(self.starts[-1])

        sample = snippets[0].frames[0, ::ps, ::ps]
        self.n_pix = sample.size
        self.slot_snip = np.empty(n_slots, dtype=np.int64)
        self.slot_w = np.empty(n_slots, dtype=np.float64)
        dtype = np.result_type(np.float32, *(s.frames.dtype for s in snippets))
        self.flat = np.empty(n_slots * self.n_pix, dtype=dtype)
        for i, cov in enumerate(schedule.coverage):
            a0 = int(self.starts[i])
            block = np.stack([snippets[k].frames[j, ::ps, ::ps].ravel() for k, j in cov])
            self.flat[a0 * self.n_pix:(a0 + len(cov)) * self.n_pix] = block.ravel()
            for off, (k, _) in enumerate(cov):
                self.slot_snip[a0 + off] = k
                self.slot_w[a0 + off] = cfg.weight(schedule.snippets[k].dilation)
        self.slots_per_snippet = np.bincount(self.slot_snip, minlength=self.n_snippets).astype(np.float64)


def _frame_chunks(n_frames: int, threads: int) -> list[tuple[int, int]]:
    threads = max(1, min(threads, n_frames))
    bounds = np.linspace(0, n_frames, threads + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


class _Evaluator:
    """Objective and analytic gradient w.r.t. (scale, shift) on a SlotLayout."""

    def __init__(self, layout: SlotLayout, cfg: CoalignConfig):
        self.layout = layout
        self.cfg = cfg
        n_slots = layout.slot_snip.size
        self.frame_obj = np.zeros(layout.n_frames)
        self.g_scale_slot = np.zeros(n_slots)
        self.g_shift_slot = np.zeros(n_slots)
        self.clamped = np.zeros(layout.n_frames, dtype=np.int64)
        self.chunks = _frame_chunks(layout.n_frames, cfg.threads)
        self._pool = ThreadPoolExecutor(len(self.chunks)) if len(self.chunks) > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def _run(self, scale, shift, f0, f1):
        lay = self.layout
        _kernels.frames_objective_grad(
            lay.flat, lay.starts, lay.slot_snip, lay.slot_w, scale, shift,
            self.cfg.eps_inv, self.cfg.use_depth_space_term, lay.n_pix,
            f0, f1, self.frame_obj, self.g_scale_slot, self.g_shift_slot, self.clamped,
        )

    def __call__(self, scale: np.ndarray, shift: np.ndarray):
        if self._pool is None:
            self._run(scale, shift, 0, self.layout.n_frames)
        else:
            # chunks write disjoint frame ranges; results are thread-count independent
            list(self._pool.map(lambda c: self._run(scale, shift, *c), self.chunks))
        lay = self.layout
        data = math.fsum(self.frame_obj)
        g_s = np.bincount(lay.slot_snip, weights=self.g_scale_slot, minlength=lay.n_snippets)
        g_t = np.bincount(lay.slot_snip, weights=self.g_shift_slot, minlength=lay.n_snippets)
        reg, r_s, r_t = _regularizer(scale, shift, lay.slots_per_snippet, self.cfg)
        return data + reg, g_s + r_s, g_t + r_t


def _regularizer(scale, shift, slot_counts, cfg: CoalignConfig):
    # soft constraints count once per (frame, slot) entry, like the data terms
    under = np.maximum(0.0, 1.0 - scale)
    val = cfg.lambda1 * under**2
    g_s = -2.0 * cfg.lambda1 * under * slot_counts
    if cfg.shift_penalty_form == "quadratic":
        val = val + cfg.lambda2 * shift**2
        g_t = 2.0 * cfg.lambda2 * shift * slot_counts
    else:
        val = val + cfg.lambda2 * shift
        g_t = cfg.lambda2 * slot_counts
    return math.fsum(val * slot_counts), g_s, g_t


def objective_terms(schedule: SnippetSchedule, snippets: Sequence[DepthSnippet],
                    params: Sequence[AffineParams], cfg: CoalignConfig | None = None) -> dict:
    """Reference (pure numpy) evaluation of each part of the co-alignment loss.

    Returns a dict with ``inverse_depth``, ``depth``, ``regularizer`` and
    ``total``. Raises DegenerateValue if an aligned inverse depth needed by the
    depth-space term is not above ``eps_inv``.
    """
    cfg = cfg or CoalignConfig()
    _check_consistent(schedule, snippets)
    if len(params) != schedule.n_snippets:
        raise ValueError(f"{len(params)} params for {schedule.n_snippets} snippets")
    ps = cfg.pixel_stride
    inv_total = 0.0
    depth_total = 0.0
    for cov in schedule.coverage:
        if len(cov) < 2:
            continue
        w = np.array([cfg.weight(schedule.snippets[k].dilation) for k, _ in cov])
        aligned = np.stack([
            params[k].scale * snippets[k].frames[j, ::ps, ::ps].astype(np.float64) + params[k].shift
            for k, j in cov
        ]).reshape(len(cov), -1)
        mean = aligned.mean(axis=0)
        mu = np.abs(mean).mean()
        inv_total += float(w @ np.abs((aligned - mean) / mu).mean(axis=1))
        if cfg.use_depth_space_term:
            if np.any(aligned <= cfg.eps_inv):
                raise DegenerateValue(
                    f"aligned inverse depth <= {cfg.eps_inv} in the depth-space term"
                )
            recip = 1.0 / aligned
            rmean = recip.mean(axis=0)
            rmu = np.abs(rmean).mean()
            depth_total += float(w @ np.abs((recip - rmean) / rmu).mean(axis=1))
    scale = np.array([p.scale for p in params])
    shift = np.array([p.shift for p in params])
    counts = np.array([s.n for s in schedule.snippets], dtype=np.float64)
    reg, _, _ = _regularizer(scale, shift, counts, cfg)
    return {
        "inverse_depth": inv_total,
        "depth": depth_total,
        "regularizer": reg,
        "total": inv_total + depth_total + reg,
    }


def objective(schedule: SnippetSchedule, snippets: Sequence[DepthSnippet],
              params: Sequence[AffineParams], cfg: CoalignConfig | None = None) -> float:
    return objective_terms(schedule, snippets, params, cfg)["total"]


def objective_and_grad(schedule: SnippetSchedule, snippets: Sequence[DepthSnippet],
                       scale: np.ndarray, shift: np.ndarray,
                       cfg: CoalignConfig | None = None) -> tuple[float, np.ndarray, np.ndarray]:
    """Fast-path objective with analytic gradients w.r.t. scale and shift.

    Reciprocals in the depth-space term use ``1/max(a, eps_inv)`` here rather
    than raising, matching what the optimizer sees.
    """
    cfg = cfg or CoalignConfig()
    ev = _Evaluator(SlotLayout(schedule, snippets, cfg), cfg)
    try:
        return ev(np.asarray(scale, dtype=np.float64), np.asarray(shift, dtype=np.float64))
    finally:
        ev.close()


def resolve_threads(threads: int | None) -> int:
    if threads is None or threads <= 0:
        env = os.environ.get("ROLLING_ALIGN_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def solve(schedule: SnippetSchedule, snippets: Sequence[DepthSnippet],
          cfg: CoalignConfig | None = None) -> AlignmentSolution:
    """Estimate one (scale, shift) per snippet with Adam from the identity.

    Scales are optimized in log space so they stay positive. The parameters
    with the lowest objective seen along the run are returned.
    """
    cfg = cfg or CoalignConfig()
    layout = SlotLayout(schedule, snippets, cfg)
    ev = _Evaluator(layout, cfg)
    n_k = layout.n_snippets
    # Adam runs on theta = [gamma, beta, sigma_1..K, tau_1..K] with
    #   s_k = exp(gamma + sigma_k),  t_k = exp(gamma) (tau_k - exp(sigma_k) c_k) + beta
    # i.e. aligned_k = exp(gamma) (exp(sigma_k) (d - c_k) + tau_k) + beta, where
    # c_k is snippet k's mean value. (gamma, beta) move the whole video along
    # the affine gauge the data terms cannot see; centring on c_k decouples
    # scale from offset. theta starts at s_k = 1, t_k = 0.
    if cfg.center_shift:
        center = np.array([float(np.mean(s.frames, dtype=np.float64)) for s in snippets])
    else:
        center = np.zeros(n_k)
    n_g = 2 if cfg.global_gauge else 0
    theta = np.concatenate([np.zeros(n_g), np.zeros(n_k), center])
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    beta1, beta2 = cfg.adam_betas
    trace: list[float] = []
    best_val = math.inf
    best_theta = theta.copy()
    best_step = 0

    def unpack(th):
        gamma, beta = (th[0], th[1]) if n_g else (0.0, 0.0)
        g = math.exp(gamma)
        rel = np.exp(th[n_g:n_g + n_k])
        scale = g * rel
        shift = g * (th[n_g + n_k:] - rel * center) + beta
        return scale, shift, g, beta

    def chain(g_s, g_t, scale, shift, g, beta):
        parts = []
        if n_g:
            parts.append([float(scale @ g_s + (shift - beta) @ g_t), float(g_t.sum())])
        parts.append(scale * (g_s - center * g_t))
        parts.append(g * g_t)
        return np.concatenate(parts)

    try:
        for step in range(cfg.steps + 1):
            scale, shift, g, beta = unpack(theta)
            val, g_s, g_t = ev(scale, shift)
            grad = chain(g_s, g_t, scale, shift, g, beta)
            if not (math.isfinite(val) and np.all(np.isfinite(grad))):
                raise NonFinite(f"non-finite objective or gradient at step {step}", step=step)
            trace.append(val)
            if val < best_val:
                best_val, best_theta, best_step = val, theta.copy(), step
            if step == cfg.steps:
                break
            m1 = beta1 * m1 + (1.0 - beta1) * grad
            m2 = beta2 * m2 + (1.0 - beta2) * grad * grad
            m_hat = m1 / (1.0 - beta1 ** (step + 1))
            v_hat = m2 / (1.0 - beta2 ** (step + 1))
            theta = theta - cfg.learning_rate_at(step) * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        scale, shift, _, _ = unpack(best_theta)
        ev(scale, shift)
        clamped = int(ev.clamped.sum())
    finally:
        ev.close()

    if clamped:
        logger.warning("%d pixel reciprocals clamped at eps_inv=%g", clamped, cfg.eps_inv)
    trace.append(best_val)
    params = [AffineParams(float(s), float(t)) for s, t in zip(scale, shift)]
    meta = {
        "best_step": best_step,
        "steps": cfg.steps,
        "learning_rate": cfg.learning_rate,
        "final_learning_rate": cfg.final_learning_rate,
        "lr_schedule": "exponential",
        "clamped_pixels": clamped,
        "pixel_stride": cfg.pixel_stride,
    }
    return AlignmentSolution(params, float(best_val), trace, meta)


def merge(schedule: SnippetSchedule, snippets: Sequence[DepthSnippet],
          solution: AlignmentSolution | Sequence[AffineParams]) -> DepthVideo:
    """Average the aligned predictions covering each frame."""
    _check_consistent(schedule, snippets)
    params = solution.params if isinstance(solution, AlignmentSolution) else list(solution)
    if len(params) != schedule.n_snippets:
        raise ValueError(f"{len(params)} params for {schedule.n_snippets} snippets")
    h, w = snippets[0].frames.shape[1:]
    out = np.empty((schedule.n_frames, h, w), dtype=np.float32)
    for i, cov in enumerate(schedule.coverage):
        acc = np.zeros((h, w), dtype=np.float64)
        for k, j in cov:
            acc += params[k].scale * snippets[k].frames[j].astype(np.float64) + params[k].shift
        out[i] = acc / len(cov)
    return DepthVideo(out, SpaceTag.INVERSE_DEPTH)


def identity_params(schedule: SnippetSchedule) -> list[AffineParams]:
    return [AffineParams() for _ in range(schedule.n_snippets)]
