"""Named oblivious noise-pattern generators used by the experiment harness."""
from __future__ import annotations

import logging
from typing import Mapping, Optional

import numpy as np

from .channels import CHOICES, ERASE, FLIP, NoisePattern
from .errors import ConfigError

logger = logging.getLogger(__name__)


def _check_budget(T: int, horizon: Optional[int]) -> None:
    if T < 0:
        raise ConfigError("T", f"must be non-negative, got {T}")
    if horizon is not None and T > horizon:
        raise ConfigError("horizon", f"{horizon} positions cannot hold {T} corruptions")


def _draw_choices(rounds, rng, mix: Optional[Mapping[str, float]]) -> dict:
    if not mix:
        return {}
    names = list(mix)
    for name in names:
        if name not in CHOICES:
            raise ConfigError("mix", f"unknown choice '{name}'")
    weights = np.asarray([float(mix[n]) for n in names])
    if (weights < 0).any() or weights.sum() <= 0:
        raise ConfigError("mix", "weights must be non-negative with a positive sum")
    picks = rng.choice(len(names), size=len(rounds), p=weights / weights.sum())
    return {int(r): names[int(j)] for r, j in zip(rounds, picks)}


def uniform(T: int, horizon: int, rng, mix: Optional[Mapping[str, float]] = None) -> NoisePattern:
    """T distinct positions drawn uniformly from [1, horizon]."""
    if horizon is None:
        raise ConfigError("horizon", "uniform placement needs a horizon")
    _check_budget(T, horizon)
    rounds = np.sort(rng.choice(horizon, size=T, replace=False) + 1) if T else np.empty(0, dtype=np.int64)
    return NoisePattern(tuple(int(r) for r in rounds), _draw_choices(rounds, rng, mix), horizon)


def prefix_burst(T: int, horizon: Optional[int] = None, rng=None, start: int = 1) -> NoisePattern:
    if start < 1:
        raise ConfigError("start", f"must be at least 1, got {start}")
    _check_budget(T, None)
    rounds = tuple(range(start, start + T))
    return NoisePattern(rounds, {}, horizon)


def per_iteration(T: int, horizon: Optional[int], rng, block: int, budget: int = 1,
                  mix: Optional[Mapping[str, float]] = None) -> NoisePattern:
    """`budget` corruptions in each consecutive `block`-bit window until T are placed."""
    _check_budget(T, None)
    if block < 1 or not 1 <= budget <= block:
        raise ConfigError("budget", f"need 1 <= budget <= block, got {budget} in {block}")
    rounds = []
    window = 0
    while len(rounds) < T:
        take = min(budget, T - len(rounds))
        offsets = np.sort(rng.choice(block, size=take, replace=False))
        rounds.extend(int(window * block + o + 1) for o in offsets)
        window += 1
    return NoisePattern(tuple(rounds), _draw_choices(rounds, rng, mix), horizon)


def parity_targeting(T: int, horizon: Optional[int] = None, rng=None, k: int = 2,
                     side: str = "bob", first_iteration: int = 1) -> NoisePattern:
    """Hit the parity bit of consecutive challenge-response iterations."""
    _check_budget(T, None)
    if k < 2:
        raise ConfigError("k", f"challenge-response messages carry at least 2 bits, got {k}")
    if side not in ("alice", "bob", "both"):
        raise ConfigError("side", f"unknown side '{side}'")

    rounds = []
    i = first_iteration
    while len(rounds) < T:
        base = 2 * k * (i - 1)
        if side in ("alice", "both"):
            rounds.append(base + k)
        if side in ("bob", "both") and len(rounds) < T:
            rounds.append(base + 2 * k)
        i += 1
    return NoisePattern(tuple(rounds), {}, horizon)


def erasure_only(T: int, horizon: int, rng) -> NoisePattern:
    base = uniform(T, horizon, rng)
    return NoisePattern(base.corrupted_rounds, {r: ERASE for r in base.corrupted_rounds}, horizon, ERASE)


GENERATORS = {
    "uniform": uniform,
    "prefix_burst": prefix_burst,
    "per_iteration": per_iteration,
    "parity_targeting": parity_targeting,
    "erasure_only": erasure_only,
}


def make_pattern(name: str, T: int, horizon: Optional[int], rng, **params) -> NoisePattern:
    try:
        generator = GENERATORS[name]
    except KeyError:
        raise ConfigError("adversary", f"unknown generator '{name}' (expected one of {sorted(GENERATORS)})")
    try:
        pattern = generator(T, horizon, rng, **params)
    except TypeError as e:
        raise ConfigError("adversary", f"bad parameters for '{name}': {e}") from e
    logger.debug(f"{name}: {pattern.budget_T} corruptions, horizon={horizon}")
    return pattern


def flip_free(pattern: NoisePattern) -> bool:
    return all(pattern.choice_at(r) != FLIP for r in pattern.corrupted_rounds)
