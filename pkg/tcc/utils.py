# tcc/utils.py
import hashlib
import os
from decimal import Decimal, ROUND_HALF_EVEN
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch

from tcc.errors import ConfigError

THREADS_ENV = "TSTCC_THREADS"


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; substreams come from ``rng.spawn``."""
    return np.random.Generator(np.random.Philox(int(seed)))


def split_rng(rng: np.random.Generator, n: int = 2) -> Tuple[np.random.Generator, ...]:
    return tuple(rng.spawn(n))


def draw_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2 ** 32))


def seed_everything(seed: int) -> None:
    torch.manual_seed(int(seed))
    torch.use_deterministic_algorithms(True, warn_only=True)


def resolve_threads(configured: Optional[int] = None) -> int:
    """Prefetch worker count: the config value, capped by TSTCC_THREADS when set."""
    threads = max(1, int(configured or 1))
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return threads
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return min(threads, cap)


def file_fingerprint(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def as_percent(value: float) -> Decimal:
    """Fraction to percent, rounded half-to-even to one decimal."""
    return Decimal(repr(float(value) * 100)).quantize(Decimal("0.1"), rounding=ROUND_HALF_EVEN)
