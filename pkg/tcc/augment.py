# tcc/augment.py
"""
Weak and strong time-series augmentations.

Every transform takes an explicit ``numpy.random.Generator`` and never touches
global random state, so the same (input, config, seed) always yields the same
view. Arrays are (B, C, T) float32.
"""
from typing import List, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from tcc.data import Batch
from tcc.errors import ShapeError
from tcc.utils import split_rng

TransformName = Literal["scale", "jitter", "shift", "permute"]
ViewMode = Literal["weak+strong", "weak-only", "strong-only"]


class AugmentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    weak_jitter_sigma: float = Field(0.05, ge=0.0, le=0.1)
    weak_scale_sigma: float = Field(2.0, gt=0.0)
    strong_jitter_sigma: float = Field(0.3, ge=0.1, le=1.0)
    max_segments: int = Field(10, ge=1)
    time_shift_max: int = Field(8, ge=0)
    weak_recipe: List[TransformName] = ["scale", "jitter"]
    strong_recipe: List[TransformName] = ["permute", "jitter"]

    @field_validator("weak_recipe", "strong_recipe")
    @classmethod
    def _no_repeats(cls, recipe: List[str]) -> List[str]:
        if len(set(recipe)) != len(recipe):
            raise ValueError(f"recipe repeats a transform: {recipe}")
        return recipe


class ViewPair:
    """Two augmented views of one source batch (weak = x^w, strong = x^s)."""

    __slots__ = ("weak", "strong", "source")

    def __init__(self, weak: Batch, strong: Batch, source: Batch):
        if not (weak.x.shape == strong.x.shape == source.x.shape):
            raise ShapeError("views must share the source shape")
        self.weak = weak
        self.strong = strong
        self.source = source


# --------------------------------------------------------------------
# 1) Elementary transforms
# --------------------------------------------------------------------
def jitter(x: np.ndarray, sigma: float, rng) -> np.ndarray:
    """x + iid Normal(0, sigma^2) noise per timestep."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    noise = rng.normal(0.0, sigma, size=x.shape)
    return (x + noise).astype(x.dtype, copy=False)


def scale(x: np.ndarray, scale_sigma: float, rng) -> np.ndarray:
    """Multiply each (sample, channel) by a factor ~ Normal(1, 0.1*scale_sigma), clamped to >= 0.01."""
    if scale_sigma <= 0:
        raise ValueError("scale_sigma must be > 0")
    factors = rng.normal(1.0, 0.1 * scale_sigma, size=(x.shape[0], x.shape[1], 1))
    factors = np.maximum(np.asarray(factors, dtype=np.float64), 0.01)
    return (x * factors).astype(x.dtype, copy=False)


def permute_segments(x: np.ndarray, max_segments: int, rng) -> np.ndarray:
    """Cut the time axis into m ~ U{1..M} segments and reorder them.

    Cut positions are distinct interior indices, so segments can differ in
    length. All channels of a sample share one permutation.
    """
    length = x.shape[2]
    if not 1 <= max_segments <= length:
        raise ShapeError(f"max_segments must be in [1, {length}], got {max_segments}")
    out = x.copy()
    counts = np.asarray(rng.integers(1, max_segments + 1, size=x.shape[0]))
    steps = np.arange(length)
    for i, m in enumerate(counts):
        m = int(m)
        if m <= 1:
            continue
        cuts = np.sort(np.asarray(rng.choice(np.arange(1, length), size=m - 1, replace=False)))
        segments = np.split(steps, cuts)
        order = np.asarray(rng.permutation(m))
        out[i] = x[i][:, np.concatenate([segments[j] for j in order])]
    return out


def time_shift(x: np.ndarray, max_shift: int, rng) -> np.ndarray:
    """Circular shift of each sample by s ~ U{-max_shift..max_shift}."""
    length = x.shape[2]
    if not 0 <= max_shift < length:
        raise ShapeError(f"max_shift must be in [0, {length}), got {max_shift}")
    shifts = np.asarray(rng.integers(-max_shift, max_shift + 1, size=x.shape[0]))
    out = x.copy()
    for i, s in enumerate(shifts):
        if s:
            out[i] = np.roll(x[i], int(s), axis=-1)
    return out


# --------------------------------------------------------------------
# 2) Recipes and view pairs
# --------------------------------------------------------------------
def check_window(cfg: AugmentConfig, length: int) -> None:
    """Raise ShapeError when a recipe transform cannot act on windows of ``length`` steps."""
    recipes = set(cfg.weak_recipe) | set(cfg.strong_recipe)
    if "permute" in recipes and cfg.max_segments > length:
        raise ShapeError(f"augment.max_segments={cfg.max_segments} exceeds the window length {length}")
    if "shift" in recipes and cfg.time_shift_max >= length:
        raise ShapeError(f"augment.time_shift_max={cfg.time_shift_max} must be below the window length {length}")


def _apply_recipe(x: np.ndarray, recipe: List[str], jitter_sigma: float, cfg: AugmentConfig, rng) -> np.ndarray:
    for name in recipe:
        if name == "scale":
            x = scale(x, cfg.weak_scale_sigma, rng)
        elif name == "jitter":
            x = jitter(x, jitter_sigma, rng)
        elif name == "shift":
            x = time_shift(x, cfg.time_shift_max, rng)
        elif name == "permute":
            x = permute_segments(x, cfg.max_segments, rng)
    return x


def weak_augment(b: Batch, cfg: AugmentConfig, rng) -> Batch:
    x = _apply_recipe(b.x, cfg.weak_recipe, cfg.weak_jitter_sigma, cfg, rng)
    return Batch(x=x, y=b.y, indices=b.indices)


def strong_augment(b: Batch, cfg: AugmentConfig, rng) -> Batch:
    x = _apply_recipe(b.x, cfg.strong_recipe, cfg.strong_jitter_sigma, cfg, rng)
    return Batch(x=x, y=b.y, indices=b.indices)


def make_view_pair(b: Batch, cfg: AugmentConfig, rng, views: ViewMode = "weak+strong") -> ViewPair:
    first_rng, second_rng = split_rng(rng, 2)
    if views == "weak-only":
        first, second = weak_augment(b, cfg, first_rng), weak_augment(b, cfg, second_rng)
    elif views == "strong-only":
        first, second = strong_augment(b, cfg, first_rng), strong_augment(b, cfg, second_rng)
    else:
        first, second = weak_augment(b, cfg, first_rng), strong_augment(b, cfg, second_rng)
    return ViewPair(weak=first, strong=second, source=b)
