"""Shared domain types, the seeded random-source contract, and episode bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

# Navigation states/actions are float pairs; finite-MDP states/actions are indices.
EnvState = Union[np.ndarray, int]
EnvAction = Union[np.ndarray, int]

_U64 = 2**64


@dataclass(frozen=True)
class RandomSource:
    """Seeded, stream-addressable randomness.

    Identical (seed, stream) pairs yield bit-identical draw sequences across
    runs and platforms. Trainers dedicate one stream per episode index so that
    batching or parallel evaluation cannot change any episode's draws.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            value = getattr(self, name)
            if not (0 <= int(value) < _U64):
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value!r}")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(seq))

    def for_stream(self, stream: int) -> "RandomSource":
        return RandomSource(self.seed, stream)


def as_generator(rng) -> np.random.Generator:
    """Accept a RandomSource or an already-built Generator."""
    if isinstance(rng, RandomSource):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomSource or numpy Generator, got {type(rng).__name__}")


def draw_categorical(gen: np.random.Generator, probs: np.ndarray) -> int:
    """Draw one index from a probability vector using a single uniform."""
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, gen.random(), side="right"))
    return min(idx, len(probs) - 1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One episode: T+1 states, T actions, and per-state rewards / safety flags.

    rewards[t] is the reward evaluated at states[t] (T+1 entries), and
    safe_flags[t] is the safe-set predicate applied to states[t].
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    safe_flags: np.ndarray

    def __post_init__(self):
        n = len(self.states)
        if len(self.actions) != n - 1 or len(self.rewards) != n or len(self.safe_flags) != n:
            raise ValueError(
                "inconsistent trajectory lengths: "
                f"{n} states, {len(self.actions)} actions, "
                f"{len(self.rewards)} rewards, {len(self.safe_flags)} safe flags"
            )

    @property
    def horizon(self) -> int:
        """Number of actions T; the trajectory visits T+1 states."""
        return len(self.actions)


def episode_return(traj: Trajectory) -> float:
    """Total reward over the episode (sum of all T+1 per-state rewards)."""
    return float(np.sum(traj.rewards))


def is_safe_episode(traj: Trajectory) -> bool:
    """True iff every visited state was in the safe set."""
    return bool(np.all(traj.safe_flags))


def update_running_average(prev_avg: float, k: int, new_value: float) -> float:
    """Arithmetic mean over episodes 0..k given the mean over episodes 0..k-1."""
    if k < 0:
        raise ValueError(f"episode count must be nonnegative, got {k}")
    return (prev_avg * k + new_value) / (k + 1)


@dataclass(frozen=True)
class Metrics:
    """Per-episode training record; averages are arithmetic means over episodes 0..k."""

    episode: int
    ret: float
    safe: bool
    avg_return: float
    avg_safety: float
    lam: float
