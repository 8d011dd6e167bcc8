"""The sanitizing mechanism: per-example gradient bounding plus Gaussian noise.

Each example's output-gradient is bounded in L2 (by normalization, or by
clipping for the ablation), the bounded vectors are summed, one Gaussian
draw N(0, sigma^2 C^2 I) is added to the sum, and the result is divided
by the number of contributions.
"""

from dataclasses import dataclass

import numpy as np

from .backend import clip_rows, normalize_rows
from .errors import DegenerateInputError, DimensionError, ValidationError

MODES = ("normalize", "clip")


@dataclass(frozen=True)
class MechanismConfig:
    """Bounding and noise parameters.

    norm_bound   -- C, the per-example L2 bound (> 0)
    noise_scale  -- sigma; noise std is sigma * C (>= 0)
    stability    -- e, added to the norm before dividing (>= 0)
    mode         -- "normalize" or "clip"
    """

    norm_bound: float
    noise_scale: float = 100.0
    stability: float = 1e-4
    mode: str = "normalize"

    def __post_init__(self):
        if not self.norm_bound > 0:
            raise ValidationError(f"norm_bound must be positive, got {self.norm_bound}")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be nonnegative")
        if self.stability < 0:
            raise ValidationError("stability must be nonnegative")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")


class NoiseSource:
    """Seeded Gaussian stream.

    Uses numpy's Philox counter-based generator with ziggurat sampling;
    the same (seed, stream) pair always yields the same values in the
    same call order. Do not share one source across concurrent
    sanitizations.
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(self.stream,)))
        )

    def normal(self, shape):
        """Draw standard-normal values with the given shape."""
        return self._gen.standard_normal(shape)

    def uniform(self, shape):
        return self._gen.random(shape)

    def integers(self, low, high, shape=None):
        return self._gen.integers(low, high, size=shape)

    def spawn(self, stream):
        """Independent stream derived from the same seed."""
        return NoiseSource(self.seed, stream)

    def __repr__(self):
        return f"NoiseSource(seed={self.seed}, stream={self.stream})"


def _as_vector(g):
    arr = np.ascontiguousarray(g, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"expected a 1-d gradient vector, got shape {arr.shape}")
    return arr


def normalize_example(g, cfg):
    """c * g / (|g| + e). Output norm is strictly below C whenever e > 0."""
    if cfg.mode != "normalize":
        raise ValidationError("normalize_example requires mode == 'normalize'")
    vec = _as_vector(g)
    if cfg.stability == 0.0 and not np.any(vec):
        raise DegenerateInputError("zero gradient with stability constant 0")
    return normalize_rows(vec[None, :], cfg.norm_bound, cfg.stability)[0]


def clip_example(g, cfg):
    """g * min(1, C/|g|): unchanged inside the ball, scaled onto it outside."""
    if cfg.mode != "clip":
        raise ValidationError("clip_example requires mode == 'clip'")
    vec = _as_vector(g)
    return clip_rows(vec[None, :], cfg.norm_bound)[0]


def bound_rows(grads, cfg):
    """Apply the configured per-example bound to a (B, n) stack of gradients."""
    if cfg.mode == "normalize":
        if cfg.stability == 0.0:
            norms = np.sqrt(np.einsum("ij,ij->i", grads, grads))
            if np.any(norms == 0.0):
                raise DegenerateInputError("zero gradient with stability constant 0")
        return normalize_rows(grads, cfg.norm_bound, cfg.stability)
    return clip_rows(grads, cfg.norm_bound)


def sanitize_batch(per_example_grads, cfg, rng):
    """(sum of bounded gradients + N(0, sigma^2 C^2 I)) / count.

    The divisor is the number of gradients supplied: the batch size in
    the single-teacher loop, the teacher count in the multi-teacher one.
    One n-component noise vector is drawn per call even when sigma is 0,
    so the stream position advances uniformly.
    """
    try:
        grads = np.ascontiguousarray(per_example_grads, dtype=np.float64)
    except ValueError:
        raise DimensionError("per-example gradients must all have the same length") from None
    if grads.size == 0:
        raise ValidationError("sanitize_batch needs a nonempty list of gradient vectors")
    if grads.ndim != 2:
        raise DimensionError(f"expected a stack of 1-d gradients, got shape {grads.shape}")
    count = grads.shape[0]
    bounded = bound_rows(grads, cfg)
    noise = cfg.noise_scale * cfg.norm_bound * rng.normal(grads.shape[1])
    return (bounded.sum(axis=0) + noise) / count
