"""Fixed-penalty and primal-dual training loops, evaluation, and penalty sweeps.

The episode loop is: rollout, gradient estimate, primal ascent step, then
(when the dual step size is positive) a projected dual descent step driven by
the realized all-safe indicator. Fixed-penalty training is the same code path
with the dual step size at zero and the multiplier pinned at the penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import oracle
from .core import (
    Metrics,
    RandomSource,
    Trajectory,
    episode_return,
    is_safe_episode,
    update_running_average,
)
from .env import NavEnvSpec, rollout
from .estimators import (
    METHOD_SPG_ACTOR_CRITIC,
    METHOD_SPG_REINFORCE,
    SafetyCritic,
    classic_pg,
    combined_gradient,
    critic_estimate,
    critic_update,
)
from .policy import BasePolicy

METHOD_PROB_REINFORCE = "prob-spg-reinforce"
METHOD_PROB_ACTOR_CRITIC = "prob-spg-actor-critic"
METHOD_CUMULATIVE = "cumulative-shaped"
METHODS = (METHOD_PROB_REINFORCE, METHOD_PROB_ACTOR_CRITIC, METHOD_CUMULATIVE)

# Streams 0..episodes-1 drive the per-episode rollouts; fresh dual rollouts
# live in a disjoint namespace so toggling them never perturbs the main draws.
_DUAL_STREAM_OFFSET = 2**32


class TrainingDiverged(RuntimeError):
    """Non-finite gradient; carries a diagnostic state dump."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TrainerConfig:
    """Training hyperparameters.

    eta_lambda == 0 means fixed-penalty training with the multiplier pinned at
    `penalty`; eta_lambda > 0 runs the primal-dual loop starting from a zero
    multiplier (and then `penalty` must stay 0).
    """

    method: str
    episodes: int
    eta_theta: float
    eta_lambda: float = 0.0
    penalty: float = 0.0
    delta: float = 0.05
    seed: int = 0
    clip_norm: Optional[float] = None
    critic_lr: float = 1e-3
    critic_init: Tuple[float, float] = (5.0, 0.3)
    critic_state_only: bool = False
    fresh_dual_rollout: bool = False
    shaping_horizon_scaled: bool = True
    # Optimize the per-step-normalized value V/(T+1) instead of the raw sum:
    # the reward component of the gradient is divided by T+1, putting the
    # multiplier on the same scale as returns reported per unit of horizon.
    return_normalized: bool = False
    # Divide the gradient by the fixed-penalty objective's scale (1 + lambda,
    # or 1 + mu/(T+1) for shaped runs). Direction is unchanged; the effective
    # step stays weight-independent so large-penalty sweep points train as
    # reliably as small ones.
    scale_step_by_penalty: bool = False

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; known: {', '.join(METHODS)}")
        if self.episodes < 0:
            raise ValueError(f"episodes must be nonnegative, got {self.episodes}")
        if self.eta_theta < 0:
            raise ValueError(f"eta_theta must be nonnegative, got {self.eta_theta}")
        if self.eta_lambda < 0:
            raise ValueError(f"eta_lambda must be nonnegative, got {self.eta_lambda}")
        if self.penalty < 0:
            raise ValueError(f"penalty must be nonnegative, got {self.penalty}")
        if not (0.0 < self.delta < 0.5):
            raise ValueError(f"delta must lie in (0, 1/2), got {self.delta}")
        if self.eta_lambda > 0 and self.penalty != 0:
            raise ValueError("primal-dual training starts from a zero multiplier; "
                             "set penalty=0 when eta_lambda > 0")
        if self.eta_lambda > 0 and self.method == METHOD_CUMULATIVE:
            raise ValueError("the dual update drives the all-safe constraint; "
                             "cumulative-shaped training is fixed-penalty only")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if len(self.critic_init) != 2:
            raise ValueError(f"critic_init must be a (h1, h2) pair, got {self.critic_init}")


@dataclass(frozen=True)
class DualState:
    """Nonnegative multiplier and its step size."""

    lam: float = 0.0
    eta: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"multiplier must be nonnegative, got {self.lam}")


def shaped_reward(r: float, safe: bool, mu: float) -> float:
    """Reward plus a safety bonus: r + mu * 1(safe)."""
    if mu < 0:
        raise ValueError(f"shaping weight must be nonnegative, got {mu}")
    return r + mu if safe else r


def g_hat(traj: Trajectory, delta: float) -> float:
    """Unbiased constraint-slack sample: 1(all states safe) - (1 - delta).

    Exactly delta for safe episodes and delta - 1 otherwise.
    """
    return delta if is_safe_episode(traj) else delta - 1.0


def dual_update(dual: DualState, ghat: float) -> DualState:
    """Projected dual descent: lam <- max(0, lam - eta * ghat)."""
    return replace(dual, lam=max(0.0, dual.lam - dual.eta * ghat))


def primal_update(theta: np.ndarray, grad: np.ndarray, eta_theta: float) -> np.ndarray:
    """Stochastic gradient ascent step on the policy parameters."""
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient in primal update")
    return theta + eta_theta * grad


def clip_gradient(grad: np.ndarray, max_norm: Optional[float]) -> np.ndarray:
    if max_norm is None:
        return grad
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def _shaped_trajectory(traj: Trajectory, weight: float) -> Trajectory:
    rewards = traj.rewards + weight * traj.safe_flags.astype(float)
    return replace(traj, rewards=rewards)


@dataclass(eq=False)
class TrainResult:
    policy: BasePolicy
    metrics: List[Metrics]
    dual: DualState
    critic: Optional[SafetyCritic] = None


def _make_critic_eval(env, policy, critic):
    """Per-episode critic callable for the actor-critic safety gradient."""
    if isinstance(env, NavEnvSpec):
        return lambda s, a, t: critic_estimate(critic, env, s, a)
    return oracle.exact_critic(env, policy)


def train(
    config: TrainerConfig,
    env,
    policy: BasePolicy,
    critic: Optional[SafetyCritic] = None,
    episode_hook: Optional[Callable[[int, BasePolicy], None]] = None,
) -> TrainResult:
    """Run the episode loop and return the final policy, metrics, and dual state.

    Navigation actor-critic runs learn the sigmoid critic alongside the policy
    (one regression step per episode); finite-MDP actor-critic runs use the
    exact backward-induction conditional probabilities instead. episode_hook,
    when given, is called after every episode (checkpoint cadence lives there).
    """
    config.validate()
    is_nav = isinstance(env, NavEnvSpec)
    if config.method == METHOD_PROB_ACTOR_CRITIC and is_nav and critic is None:
        critic = SafetyCritic(
            h1=config.critic_init[0],
            h2=config.critic_init[1],
            lr=config.critic_lr,
            state_only=config.critic_state_only,
        )
    dual = DualState(lam=config.penalty if config.eta_lambda == 0 else 0.0, eta=config.eta_lambda)
    shaping = config.penalty / (env.horizon + 1) if config.shaping_horizon_scaled else config.penalty
    reward_scale = 1.0 / (env.horizon + 1) if config.return_normalized else 1.0
    metrics: List[Metrics] = []
    avg_return = 0.0
    avg_safety = 0.0
    for k in range(config.episodes):
        traj = rollout(env, policy, RandomSource(config.seed, k))
        if config.method == METHOD_CUMULATIVE:
            grad = reward_scale * classic_pg(_shaped_trajectory(traj, shaping), policy)
            if config.scale_step_by_penalty:
                grad /= 1.0 + shaping
        else:
            tag = (
                METHOD_SPG_REINFORCE
                if config.method == METHOD_PROB_REINFORCE
                else METHOD_SPG_ACTOR_CRITIC
            )
            critic_eval = (
                _make_critic_eval(env, policy, critic) if tag == METHOD_SPG_ACTOR_CRITIC else None
            )
            estimate = combined_gradient(traj, policy, dual.lam, tag, critic_eval)
            grad = reward_scale * estimate.reward_grad + dual.lam * estimate.safety_grad
            if config.scale_step_by_penalty:
                grad /= 1.0 + dual.lam
        grad = clip_gradient(grad, config.clip_norm)
        if not np.all(np.isfinite(grad)):
            raise TrainingDiverged(
                f"non-finite gradient at episode {k}",
                diagnostics={
                    "episode": k,
                    "lambda": dual.lam,
                    "grad_norm": float(np.linalg.norm(np.nan_to_num(grad))),
                    "theta_norm": float(np.linalg.norm(policy.params)),
                    "method": config.method,
                },
            )
        policy = policy.with_params(primal_update(policy.params, grad, config.eta_theta))
        if config.method == METHOD_PROB_ACTOR_CRITIC and is_nav:
            critic = critic_update(critic, traj, env)
        if config.eta_lambda > 0:
            dual_traj = (
                rollout(env, policy, RandomSource(config.seed, _DUAL_STREAM_OFFSET + k))
                if config.fresh_dual_rollout
                else traj
            )
            dual = dual_update(dual, g_hat(dual_traj, config.delta))
        ret = episode_return(traj)
        safe = is_safe_episode(traj)
        avg_return = update_running_average(avg_return, k, ret)
        avg_safety = update_running_average(avg_safety, k, 1.0 if safe else 0.0)
        metrics.append(
            Metrics(
                episode=k,
                ret=ret,
                safe=safe,
                avg_return=avg_return,
                avg_safety=avg_safety,
                lam=dual.lam,
            )
        )
        if episode_hook is not None:
            episode_hook(k, policy)
    return TrainResult(policy=policy, metrics=metrics, dual=dual, critic=critic)


def evaluate_detailed(
    policy: BasePolicy,
    env,
    n_episodes: int,
    rng: RandomSource,
    start_mode: str = "uniform-safe",
) -> List[Tuple[float, bool]]:
    """Per-episode (return, safe) pairs over fresh no-learning rollouts.

    start_mode "uniform-safe" draws navigation initial states uniformly from
    the safe set; "env" keeps the layout's configured start list.
    """
    if n_episodes <= 0:
        raise ValueError(f"n_episodes must be positive, got {n_episodes}")
    if start_mode not in ("uniform-safe", "env"):
        raise ValueError(f"unknown start mode {start_mode!r}")
    eval_env = env
    if isinstance(env, NavEnvSpec) and start_mode == "uniform-safe":
        eval_env = replace(env, starts=None)
    rows = []
    for j in range(n_episodes):
        traj = rollout(eval_env, policy, rng.for_stream(rng.stream + j))
        rows.append((episode_return(traj), is_safe_episode(traj)))
    return rows


def evaluate(
    policy: BasePolicy,
    env,
    n_episodes: int,
    rng: RandomSource,
    start_mode: str = "uniform-safe",
) -> Tuple[float, float]:
    """Mean return and fraction of safe episodes over fresh no-learning rollouts."""
    rows = evaluate_detailed(policy, env, n_episodes, rng, start_mode)
    returns = [r for r, _ in rows]
    return sum(returns) / n_episodes, sum(1 for _, s in rows if s) / n_episodes


@dataclass(frozen=True)
class SweepRow:
    """One penalty-sweep grid point: training weight, evaluation, multiplier, bound."""

    method: str
    weight: float
    run: int
    eval_return: float
    eval_safety: float
    lambda_final: float
    bound_upper: Optional[float]


def sweep(
    env,
    make_policy: Callable[[], BasePolicy],
    base_config: TrainerConfig,
    points: Sequence[Tuple[str, float]],
    runs: int = 1,
    eval_episodes: int = 500,
    eval_seed: int = 7_000_000,
) -> List[SweepRow]:
    """Fixed-penalty training plus evaluation for each (method, weight) grid point.

    Cumulative rows carry the value upper bound implied by their converged
    multiplier: eval_return + weight * delta * T / (T + 1).
    """
    if len(points) == 0:
        raise ValueError("sweep grid must be nonempty")
    if runs <= 0:
        raise ValueError(f"runs must be positive, got {runs}")
    rows: List[SweepRow] = []
    for idx, (method, weight) in enumerate(points):
        for run in range(runs):
            config = replace(
                base_config,
                method=method,
                penalty=float(weight),
                eta_lambda=0.0,
                seed=base_config.seed + 1000 * idx + run,
            )
            result = train(config, env, make_policy())
            mean_ret, safety = evaluate(
                result.policy,
                env,
                eval_episodes,
                RandomSource(eval_seed + idx, 1_000_000 * run),
            )
            lam_final = result.dual.lam
            bound = None
            if method == METHOD_CUMULATIVE:
                T = env.horizon
                bound = mean_ret + lam_final * config.delta * T / (T + 1)
            rows.append(
                SweepRow(
                    method=method,
                    weight=float(weight),
                    run=run,
                    eval_return=mean_ret,
                    eval_safety=safety,
                    lambda_final=lam_final,
                    bound_upper=bound,
                )
            )
    return rows
