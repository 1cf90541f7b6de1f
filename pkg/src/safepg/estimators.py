"""Stochastic policy gradients for return and trajectory-level safety.

Three single-trajectory estimators share one batch of per-step score
gradients:

  * classic_pg: reward-to-go weighted scores (the plain policy gradient).
  * spg_reinforce: every score weighted by the indicator that the whole
    post-initial trajectory stayed safe.
  * spg_actor_critic: each score weighted by prefix safety times a critic's
    estimate of the probability of staying safe for the rest of the episode.

The indicator products are the suffix products g_forward[t] (safety from t
through T) and prefix products g_backward[t] (safety from 0 through t).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .core import Trajectory
from .env import NavEnvSpec, min_obstacle_distance, nav_step
from .policy import BasePolicy, _sigmoid

METHOD_SPG_REINFORCE = "spg-reinforce"
METHOD_SPG_ACTOR_CRITIC = "spg-actor-critic"

# evaluated at (state, action, t); navigation critics ignore t
CriticEval = Callable[[object, object, int], float]


@dataclass(frozen=True, eq=False)
class IndicatorProducts:
    """Suffix and prefix products of per-state safety indicators."""

    g_forward: np.ndarray  # g_forward[t] = prod_{u=t..T} safe_flags[u]
    g_backward: np.ndarray  # g_backward[t] = prod_{u=0..t} safe_flags[u]

    @property
    def g1(self) -> float:
        """Safety of the entire post-initial trajectory (1.0 when T == 0)."""
        return float(self.g_forward[1]) if len(self.g_forward) > 1 else 1.0


def indicator_products(traj: Trajectory) -> IndicatorProducts:
    """Single backward and forward passes over the safety flags."""
    flags = traj.safe_flags.astype(float)
    g_forward = np.empty_like(flags)
    g_backward = np.empty_like(flags)
    running = 1.0
    for t in range(len(flags) - 1, -1, -1):
        running *= flags[t]
        g_forward[t] = running
    running = 1.0
    for t in range(len(flags)):
        running *= flags[t]
        g_backward[t] = running
    return IndicatorProducts(g_forward=g_forward, g_backward=g_backward)


def _reward_to_go(rewards: np.ndarray) -> np.ndarray:
    """Suffix sums: out[t] = sum of rewards[t:]."""
    return np.cumsum(rewards[::-1])[::-1]


def classic_pg(traj: Trajectory, policy: BasePolicy) -> np.ndarray:
    """Sum over t < T of (reward-to-go from t) * score gradient at step t."""
    if traj.horizon == 0:
        return np.zeros(policy.n_params)
    grads = policy.log_prob_grad_batch(traj.states[:-1], traj.actions)
    coeffs = _reward_to_go(traj.rewards)[: traj.horizon]
    return coeffs @ grads


def spg_reinforce(traj: Trajectory, policy: BasePolicy) -> np.ndarray:
    """All scores weighted by the safety of the whole post-initial trajectory."""
    if traj.horizon == 0:
        return np.zeros(policy.n_params)
    g1 = indicator_products(traj).g1
    if g1 == 0.0:
        return np.zeros(policy.n_params)
    grads = policy.log_prob_grad_batch(traj.states[:-1], traj.actions)
    return g1 * grads.sum(axis=0)


def spg_actor_critic(traj: Trajectory, policy: BasePolicy, critic_eval: CriticEval) -> np.ndarray:
    """Scores weighted by prefix safety times the critic's future-safety estimate."""
    if traj.horizon == 0:
        return np.zeros(policy.n_params)
    prods = indicator_products(traj)
    coeffs = np.zeros(traj.horizon)
    for t in range(traj.horizon):
        gb = prods.g_backward[t]
        if gb == 0.0:
            break  # prefix products only ever shrink to zero
        coeffs[t] = gb * float(critic_eval(traj.states[t], traj.actions[t], t))
    grads = policy.log_prob_grad_batch(traj.states[:-1], traj.actions)
    return coeffs @ grads


@dataclass(frozen=True)
class SafetyCritic:
    """Sigmoid-of-distance estimate of the probability of staying safe.

    estimate = sigmoid(h1 * (min obstacle distance - h2)), evaluated at the
    deterministic next state of the queried (state, action) pair, or at the
    state itself in state_only mode.
    """

    h1: float = 5.0
    h2: float = 0.3
    lr: float = 1e-3
    state_only: bool = False


def critic_estimate(critic: SafetyCritic, spec: NavEnvSpec, s, a=None) -> float:
    """Future-safety probability estimate in (0, 1); a=None evaluates at s."""
    if critic.state_only or a is None:
        point = np.asarray(s, dtype=float)
    else:
        point = nav_step(spec, s, a)
    dist = min_obstacle_distance(spec, point)
    return _sigmoid(critic.h1 * (dist - critic.h2))


def _critic_terms(critic: SafetyCritic, traj: Trajectory, spec: NavEnvSpec):
    """Per-step (estimate, target, distance) for the squared regression loss.

    Targets are the realized indicator products over the remaining horizon.
    The terminal term (t = T, where no action exists) evaluates the critic
    under a zero action, i.e. at the final state itself.
    """
    T = traj.horizon
    prods = indicator_products(traj)
    rows = []
    for t in range(T + 1):
        action = traj.actions[t] if t < T else np.zeros(2)
        point = np.asarray(traj.states[t], dtype=float) if critic.state_only else nav_step(spec, traj.states[t], action)
        dist = min_obstacle_distance(spec, point)
        est = _sigmoid(critic.h1 * (dist - critic.h2))
        target = float(prods.g_forward[t + 1]) if t + 1 <= T else 1.0
        rows.append((est, target, dist))
    return rows


def critic_loss(critic: SafetyCritic, traj: Trajectory, spec: NavEnvSpec) -> float:
    return sum((est - target) ** 2 for est, target, _ in _critic_terms(critic, traj, spec))


def critic_loss_grad(critic: SafetyCritic, traj: Trajectory, spec: NavEnvSpec) -> np.ndarray:
    """Analytic d(loss)/d(h1, h2)."""
    dh1 = 0.0
    dh2 = 0.0
    for est, target, dist in _critic_terms(critic, traj, spec):
        dsig = 2.0 * (est - target) * est * (1.0 - est)
        dh1 += dsig * (dist - critic.h2)
        dh2 += dsig * (-critic.h1)
    return np.array([dh1, dh2])


def critic_update(critic: SafetyCritic, traj: Trajectory, spec: NavEnvSpec) -> SafetyCritic:
    """One gradient-descent step on the squared regression loss."""
    grad = critic_loss_grad(critic, traj, spec)
    return replace(critic, h1=critic.h1 - critic.lr * grad[0], h2=critic.h2 - critic.lr * grad[1])


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    """Reward and safety gradients plus their lambda-weighted combination."""

    reward_grad: np.ndarray
    safety_grad: np.ndarray
    combined: np.ndarray


def combined_gradient(
    traj: Trajectory,
    policy: BasePolicy,
    lam: float,
    method: str,
    critic_eval: Optional[CriticEval] = None,
) -> GradientEstimate:
    """classic_pg plus lambda times the selected safety estimator.

    The per-step score batch is computed once and shared by both components.
    """
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    T = traj.horizon
    if T == 0:
        zero = np.zeros(policy.n_params)
        return GradientEstimate(zero, zero.copy(), zero.copy())
    grads = policy.log_prob_grad_batch(traj.states[:-1], traj.actions)
    reward_grad = _reward_to_go(traj.rewards)[:T] @ grads
    prods = indicator_products(traj)
    if method == METHOD_SPG_REINFORCE:
        safety_grad = prods.g1 * grads.sum(axis=0)
    elif method == METHOD_SPG_ACTOR_CRITIC:
        if critic_eval is None:
            raise ValueError("spg-actor-critic requires a critic")
        coeffs = np.zeros(T)
        for t in range(T):
            gb = prods.g_backward[t]
            if gb == 0.0:
                break
            coeffs[t] = gb * float(critic_eval(traj.states[t], traj.actions[t], t))
        safety_grad = coeffs @ grads
    else:
        raise ValueError(f"unknown safety gradient method {method!r}")
    return GradientEstimate(
        reward_grad=reward_grad,
        safety_grad=safety_grad,
        combined=reward_grad + lam * safety_grad,
    )
