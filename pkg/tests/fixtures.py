"""Seeded fixtures shared by the unit and acceptance suites."""
import numpy as np
from scipy import ndimage

from rolling_align.core import DepthVideo
from rolling_align.synth import SceneSpec, generate


def speckled_video(seed: int = 0, fraction: float = 0.05) -> DepthVideo:
    """Orbiting sphere field with a fraction of pixels in every frame set to outliers."""
    video, _ = generate(SceneSpec("orbiting_sphere_field", 24, 32, 40, seed=seed))
    frames = video.frames.astype(np.float64)
    rng = np.random.default_rng(seed)
    hit = rng.random(frames.shape) < fraction
    frames[hit] = rng.choice([0.05, 3.0], size=int(hit.sum()))
    return DepthVideo(frames.astype(np.float32))


def mean_abs_laplacian(frames) -> float:
    frames = np.asarray(frames, dtype=np.float64)
    return float(np.mean([np.abs(ndimage.laplace(f)).mean() for f in frames]))
