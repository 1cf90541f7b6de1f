"""2D cluttered-navigation simulator and enumerable finite MDPs.

Navigation dynamics: s_{t+1} = s_t + a_t * step_size, clamped to the map.
The safe set is the map minus a list of obstacles; obstacle boundaries count
as unsafe, so the safe set is open and signed distances are positive exactly
on safe interior points.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .core import Trajectory, as_generator, draw_categorical


class EnumerationCapError(ValueError):
    """Raised when an instance is too large to enumerate exhaustively."""


DEFAULT_ENUMERATION_CAP = 10_000_000


@dataclass(frozen=True)
class CircleObstacle:
    center: Tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"circle radius must be positive, got {self.radius}")

    def signed_distance(self, s: np.ndarray) -> float:
        """Distance to the boundary, negative inside."""
        return float(np.hypot(s[0] - self.center[0], s[1] - self.center[1]) - self.radius)


@dataclass(frozen=True)
class RectObstacle:
    lo: Tuple[float, float]
    hi: Tuple[float, float]

    def __post_init__(self):
        if not (self.lo[0] < self.hi[0] and self.lo[1] < self.hi[1]):
            raise ValueError(f"rectangle min corner must be below max corner: {self.lo}, {self.hi}")

    def signed_distance(self, s: np.ndarray) -> float:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        center = (lo + hi) / 2.0
        q = np.abs(np.asarray(s, dtype=float) - center) - (hi - lo) / 2.0
        outside = float(np.hypot(max(q[0], 0.0), max(q[1], 0.0)))
        inside = float(min(max(q[0], q[1]), 0.0))
        return outside + inside


Obstacle = Union[CircleObstacle, RectObstacle]


@dataclass(frozen=True, eq=False)
class NavEnvSpec:
    """Navigation environment: map bounds, obstacles, goal, dynamics, horizon.

    starts=None means initial states are drawn uniformly from the safe set by
    rejection sampling; otherwise one of the listed start points is picked
    uniformly at random per episode.
    """

    goal: Tuple[float, float]
    obstacles: Tuple[Obstacle, ...] = ()
    step_size: float = 0.05
    horizon: int = 20
    starts: Optional[Tuple[Tuple[float, float], ...]] = None
    bounds: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.0, 0.0), (10.0, 10.0))
    name: str = ""

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.horizon < 0:
            raise ValueError(f"horizon must be nonnegative, got {self.horizon}")
        if not is_safe_state(self, np.asarray(self.goal, dtype=float)):
            raise ValueError(f"goal {self.goal} is not inside the safe set")


def nav_step(spec: NavEnvSpec, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Advance one step, then clamp componentwise to the map bounds."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"action must be finite, got {a}")
    lo, hi = spec.bounds
    nxt = np.asarray(s, dtype=float) + a * spec.step_size
    return np.clip(nxt, lo, hi)


def nav_reward(spec: NavEnvSpec, s: np.ndarray) -> float:
    """Negative squared distance to the goal."""
    d = np.asarray(s, dtype=float) - np.asarray(spec.goal, dtype=float)
    return -float(np.sum(d * d))


def min_obstacle_distance(spec: NavEnvSpec, s: np.ndarray) -> float:
    """Minimum signed distance to any obstacle boundary; +inf with no obstacles."""
    s = np.asarray(s, dtype=float)
    if not spec.obstacles:
        return float("inf")
    return min(ob.signed_distance(s) for ob in spec.obstacles)


def is_safe_state(spec: NavEnvSpec, s: np.ndarray) -> bool:
    """Inside the map and strictly outside every obstacle (boundaries unsafe)."""
    s = np.asarray(s, dtype=float)
    lo, hi = spec.bounds
    if not (lo[0] <= s[0] <= hi[0] and lo[1] <= s[1] <= hi[1]):
        return False
    return all(ob.signed_distance(s) > 0.0 for ob in spec.obstacles)


def sample_start(spec: NavEnvSpec, gen: np.random.Generator, max_tries: int = 100_000) -> np.ndarray:
    """Pick a configured start point, or rejection-sample uniformly from the safe set."""
    if spec.starts:
        idx = int(gen.integers(0, len(spec.starts)))
        return np.asarray(spec.starts[idx], dtype=float)
    lo, hi = np.asarray(spec.bounds[0]), np.asarray(spec.bounds[1])
    for _ in range(max_tries):
        s = lo + gen.random(2) * (hi - lo)
        if is_safe_state(spec, s):
            return s
    raise RuntimeError(f"no safe start found in {max_tries} uniform draws; safe set may be empty")


@dataclass(frozen=True, eq=False)
class FiniteMDP:
    """Enumerable MDP tables with state-based rewards and a safe-state mask."""

    transition: np.ndarray  # (S, A, S'), rows sum to 1
    reward: np.ndarray  # (S,)
    safe_states: np.ndarray  # (S,) bool
    horizon: int
    initial: np.ndarray  # (S,), sums to 1
    name: str = ""

    def __post_init__(self):
        p = np.asarray(self.transition, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition table must have shape (S, A, S), got {p.shape}")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("transition probabilities must lie in [0, 1]")
        row_sums = p.sum(axis=2)
        if not np.allclose(row_sums, 1.0, atol=1e-12, rtol=0.0):
            raise ValueError(f"transition rows must sum to 1 within 1e-12, got sums {row_sums}")
        mu = np.asarray(self.initial, dtype=float)
        if mu.shape != (p.shape[0],) or np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
            raise ValueError("initial distribution must be a probability vector over states")
        if self.horizon < 0:
            raise ValueError(f"horizon must be nonnegative, got {self.horizon}")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


def _nav_rollout(spec: NavEnvSpec, policy, gen: np.random.Generator) -> Trajectory:
    T = spec.horizon
    states = np.empty((T + 1, 2))
    actions = np.empty((T, 2))
    s = sample_start(spec, gen)
    states[0] = s
    for t in range(T):
        a = policy.sample_action(s, gen)
        actions[t] = a
        s = nav_step(spec, s, a)
        states[t + 1] = s
    goal = np.asarray(spec.goal, dtype=float)
    rewards = -np.sum((states - goal) ** 2, axis=1)
    flags = np.fromiter((is_safe_state(spec, states[t]) for t in range(T + 1)), dtype=bool, count=T + 1)
    return Trajectory(states=states, actions=actions, rewards=rewards, safe_flags=flags)


def _finite_rollout(mdp: FiniteMDP, policy, gen: np.random.Generator) -> Trajectory:
    T = mdp.horizon
    states = np.empty(T + 1, dtype=np.int64)
    actions = np.empty(T, dtype=np.int64)
    s = draw_categorical(gen, mdp.initial)
    states[0] = s
    for t in range(T):
        a = policy.sample_action(s, gen)
        actions[t] = a
        s = draw_categorical(gen, mdp.transition[s, a])
        states[t + 1] = s
    rewards = mdp.reward[states].astype(float)
    flags = mdp.safe_states[states].astype(bool)
    return Trajectory(states=states, actions=actions, rewards=rewards, safe_flags=flags)


def rollout(env, policy, rng) -> Trajectory:
    """Simulate one full-horizon episode.

    Navigation episodes never terminate early; safety violations are recorded
    in safe_flags, not treated as terminal.
    """
    gen = as_generator(rng)
    if isinstance(env, NavEnvSpec):
        return _nav_rollout(env, policy, gen)
    if isinstance(env, FiniteMDP):
        return _finite_rollout(env, policy, gen)
    raise TypeError(f"unsupported environment type {type(env).__name__}")


def enumerate_trajectories(
    mdp: FiniteMDP, policy, cap: int = DEFAULT_ENUMERATION_CAP
) -> List[Tuple[Trajectory, float]]:
    """All nonzero-probability trajectories with their exact probabilities.

    The policy must expose action_probs(state). Probabilities multiply the
    initial mass, per-step action probabilities, and transition entries;
    zero-probability branches are pruned so every listed trajectory has
    positive probability and the probabilities sum to 1.
    """
    size = (mdp.n_states * mdp.n_actions) ** mdp.horizon
    if size > cap:
        raise EnumerationCapError(
            f"(S*A)^T = {size} exceeds the enumeration cap {cap} "
            f"(S={mdp.n_states}, A={mdp.n_actions}, T={mdp.horizon})"
        )
    T = mdp.horizon
    probs_by_state = [np.asarray(policy.action_probs(s), dtype=float) for s in range(mdp.n_states)]
    out: List[Tuple[Trajectory, float]] = []

    def build(states, actions, prob):
        st = np.asarray(states, dtype=np.int64)
        return Trajectory(
            states=st,
            actions=np.asarray(actions, dtype=np.int64),
            rewards=mdp.reward[st].astype(float),
            safe_flags=mdp.safe_states[st].astype(bool),
        )

    def rec(states, actions, prob):
        if len(actions) == T:
            out.append((build(states, actions, prob), prob))
            return
        s = states[-1]
        for a in range(mdp.n_actions):
            pa = probs_by_state[s][a]
            if pa == 0.0:
                continue
            for s2 in range(mdp.n_states):
                pt = mdp.transition[s, a, s2]
                if pt == 0.0:
                    continue
                rec(states + [s2], actions + [a], prob * pa * pt)

    for s0 in range(mdp.n_states):
        if mdp.initial[s0] > 0.0:
            rec([s0], [], float(mdp.initial[s0]))
    return out


# --- layout files -----------------------------------------------------------
#
# Plain-text key/value format, one entry per line, '#' starts a comment:
#
#   name = nav-default
#   bounds = 0 0 10 10
#   step_size = 0.05
#   horizon = 20
#   goal = 8.5 1.5
#   start = 1 1            # repeatable; omit all starts for uniform-safe
#   obstacle = circle 5 5 2        # circle CX CY RADIUS
#   obstacle = rect 1 2 3 4        # rect XMIN YMIN XMAX YMAX

def parse_layout(text: str) -> NavEnvSpec:
    """Parse the layout format documented in this module."""
    fields = {}
    starts: List[Tuple[float, float]] = []
    obstacles: List[Obstacle] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"layout line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "start":
            x, y = (float(v) for v in value.split())
            starts.append((x, y))
        elif key == "obstacle":
            parts = value.split()
            kind = parts[0]
            nums = [float(v) for v in parts[1:]]
            if kind == "circle" and len(nums) == 3:
                obstacles.append(CircleObstacle(center=(nums[0], nums[1]), radius=nums[2]))
            elif kind == "rect" and len(nums) == 4:
                obstacles.append(RectObstacle(lo=(nums[0], nums[1]), hi=(nums[2], nums[3])))
            else:
                raise ValueError(f"layout line {lineno}: bad obstacle spec {value!r}")
        elif key in ("name", "goal", "step_size", "horizon", "bounds"):
            if key in fields:
                raise ValueError(f"layout line {lineno}: duplicate key {key!r}")
            fields[key] = value
        else:
            raise ValueError(f"layout line {lineno}: unknown key {key!r}")
    if "goal" not in fields:
        raise ValueError("layout must define a goal")
    gx, gy = (float(v) for v in fields["goal"].split())
    kwargs = dict(goal=(gx, gy), obstacles=tuple(obstacles), starts=tuple(starts) or None)
    if "name" in fields:
        kwargs["name"] = fields["name"]
    if "step_size" in fields:
        kwargs["step_size"] = float(fields["step_size"])
    if "horizon" in fields:
        kwargs["horizon"] = int(fields["horizon"])
    if "bounds" in fields:
        x0, y0, x1, y1 = (float(v) for v in fields["bounds"].split())
        kwargs["bounds"] = ((x0, y0), (x1, y1))
    return NavEnvSpec(**kwargs)


def load_layout(path) -> NavEnvSpec:
    return parse_layout(Path(path).read_text())


def dump_layout(spec: NavEnvSpec) -> str:
    """Canonical text form of a layout; parse_layout(dump_layout(s)) == s."""
    lines = []
    if spec.name:
        lines.append(f"name = {spec.name}")
    (x0, y0), (x1, y1) = spec.bounds
    lines.append(f"bounds = {x0!r} {y0!r} {x1!r} {y1!r}")
    lines.append(f"step_size = {spec.step_size!r}")
    lines.append(f"horizon = {spec.horizon}")
    lines.append(f"goal = {spec.goal[0]!r} {spec.goal[1]!r}")
    for sx, sy in spec.starts or ():
        lines.append(f"start = {sx!r} {sy!r}")
    for ob in spec.obstacles:
        if isinstance(ob, CircleObstacle):
            lines.append(f"obstacle = circle {ob.center[0]!r} {ob.center[1]!r} {ob.radius!r}")
        else:
            lines.append(f"obstacle = rect {ob.lo[0]!r} {ob.lo[1]!r} {ob.hi[0]!r} {ob.hi[1]!r}")
    return "\n".join(lines) + "\n"


def env_hash(env) -> str:
    """Stable content hash used to pair checkpoints with environments."""
    if isinstance(env, NavEnvSpec):
        payload = dump_layout(env).encode()
    elif isinstance(env, FiniteMDP):
        payload = b"finite-mdp\n" + np.ascontiguousarray(env.transition).tobytes()
        payload += np.ascontiguousarray(env.reward).tobytes()
        payload += np.ascontiguousarray(env.safe_states.astype(np.uint8)).tobytes()
        payload += np.ascontiguousarray(env.initial).tobytes()
        payload += str(env.horizon).encode()
    else:
        raise TypeError(f"unsupported environment type {type(env).__name__}")
    return hashlib.sha256(payload).hexdigest()


_PAPER_STARTS = ((1.0, 1.0), (1.0, 9.0), (2.0, 5.0), (8.0, 9.0))

_BUILTIN_LAYOUTS = {
    # Five-obstacle map: coordinates are an artifact default. Each obstacle is
    # centered on one straight start-to-goal segment, so undetoured dashes
    # violate safety while detours of roughly one obstacle radius restore it.
    "nav-default": NavEnvSpec(
        name="nav-default",
        goal=(8.5, 1.5),
        horizon=20,
        step_size=0.05,
        starts=_PAPER_STARTS,
        obstacles=(
            CircleObstacle(center=(4.3, 5.7), radius=0.5),
            CircleObstacle(center=(6.2, 2.74), radius=0.45),
            CircleObstacle(center=(8.23, 5.5), radius=0.4),
            RectObstacle(lo=(4.1, 0.9), hi=(4.9, 1.6)),
            RectObstacle(lo=(2.4, 6.6), hi=(3.2, 7.5)),
        ),
    ),
    "nav-single": NavEnvSpec(
        name="nav-single",
        goal=(8.5, 1.5),
        horizon=100,
        step_size=0.05,
        starts=_PAPER_STARTS,
        obstacles=(CircleObstacle(center=(5.0, 5.0), radius=2.0),),
    ),
    "nav-open": NavEnvSpec(
        name="nav-open",
        goal=(8.5, 1.5),
        horizon=20,
        step_size=0.05,
        starts=_PAPER_STARTS,
        obstacles=(),
    ),
}


def builtin_layout(name: str) -> NavEnvSpec:
    try:
        return _BUILTIN_LAYOUTS[name]
    except KeyError:
        known = ", ".join(sorted(_BUILTIN_LAYOUTS))
        raise KeyError(f"unknown builtin layout {name!r}; known layouts: {known}") from None
