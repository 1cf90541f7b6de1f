"""Exact brute-force ground truth on enumerable finite MDPs.

Everything here is computed either by exhaustive trajectory enumeration or by
exact dynamic programming, so the results serve as oracles for the stochastic
estimators: values, safety probabilities, their gradients, estimator moments,
dual functions by grid search, and optimality/safety bound certificates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import episode_return, is_safe_episode
from .env import DEFAULT_ENUMERATION_CAP, FiniteMDP, enumerate_trajectories
from .estimators import indicator_products, spg_actor_critic, spg_reinforce
from .policy import TabularSoftmaxPolicy


class InfeasibleGridError(RuntimeError):
    """No policy on the search grid satisfies the requested constraint."""


@dataclass(frozen=True, eq=False)
class EnumerationResult:
    """Exact value, safety probability, cumulative safety, and their gradients."""

    value: float
    p_safe: float
    v_c: float
    value_grad: np.ndarray
    p_safe_grad: np.ndarray
    v_c_grad: np.ndarray


def exact_eval(
    mdp: FiniteMDP, policy: TabularSoftmaxPolicy, cap: int = DEFAULT_ENUMERATION_CAP
) -> EnumerationResult:
    """Sums over all trajectories; gradients via the score-function identity."""
    n = policy.n_params
    value = p_safe = v_c = 0.0
    value_grad = np.zeros(n)
    p_safe_grad = np.zeros(n)
    v_c_grad = np.zeros(n)
    for traj, prob in enumerate_trajectories(mdp, policy, cap=cap):
        score = (
            policy.log_prob_grad_batch(traj.states[:-1], traj.actions).sum(axis=0)
            if traj.horizon
            else np.zeros(n)
        )
        ret = episode_return(traj)
        safe = 1.0 if is_safe_episode(traj) else 0.0
        frac = float(np.mean(traj.safe_flags))
        value += prob * ret
        p_safe += prob * safe
        v_c += prob * frac
        value_grad += prob * ret * score
        p_safe_grad += prob * safe * score
        v_c_grad += prob * frac * score
    return EnumerationResult(value, p_safe, v_c, value_grad, p_safe_grad, v_c_grad)


def backward_safety(mdp: FiniteMDP, policy: TabularSoftmaxPolicy) -> np.ndarray:
    """q[t, s, a] = P(states t+1..T all safe | S_t = s, A_t = a), with q[T] = 1.

    Backward recursion: q[t, s, a] = sum_{s'} P[s, a, s'] 1(s' safe)
    sum_{a'} pi(a'|s') q[t+1, s', a'].
    """
    T = mdp.horizon
    S, A = mdp.n_states, mdp.n_actions
    pi = np.stack([policy.action_probs(s) for s in range(S)])  # (S, A)
    safe = mdp.safe_states.astype(float)
    q = np.ones((T + 1, S, A))
    for t in range(T - 1, -1, -1):
        v_next = (pi * q[t + 1]).sum(axis=1)  # (S',)
        q[t] = mdp.transition @ (safe * v_next)
    return q


def exact_critic(mdp: FiniteMDP, policy: TabularSoftmaxPolicy) -> Callable:
    """Exact conditional future-safety probability as a (state, action, t) callable."""
    q = backward_safety(mdp, policy)
    return lambda s, a, t: float(q[t, int(s), int(a)])


@dataclass(frozen=True, eq=False)
class EstimatorMoments:
    """Exact moments of the scalar estimator coefficients and gradient means.

    x = T * (post-initial safety indicator); y = sum over t of prefix safety
    times the exact conditional future-safety probability.
    """

    e_x: float
    var_x: float
    e_y: float
    var_y: float
    e_spg_reinforce: np.ndarray
    e_spg_actor_critic: np.ndarray


def estimator_moments(
    mdp: FiniteMDP, policy: TabularSoftmaxPolicy, cap: int = DEFAULT_ENUMERATION_CAP
) -> EstimatorMoments:
    q = backward_safety(mdp, policy)
    critic = lambda s, a, t: float(q[t, int(s), int(a)])
    e_x = e_x2 = e_y = e_y2 = 0.0
    n = policy.n_params
    e_sr = np.zeros(n)
    e_ac = np.zeros(n)
    T = mdp.horizon
    for traj, prob in enumerate_trajectories(mdp, policy, cap=cap):
        prods = indicator_products(traj)
        x = T * prods.g1
        y = sum(
            prods.g_backward[t] * q[t, traj.states[t], traj.actions[t]] for t in range(T)
        )
        e_x += prob * x
        e_x2 += prob * x * x
        e_y += prob * y
        e_y2 += prob * y * y
        e_sr += prob * spg_reinforce(traj, policy)
        e_ac += prob * spg_actor_critic(traj, policy, critic)
    return EstimatorMoments(
        e_x=e_x,
        var_x=e_x2 - e_x**2,
        e_y=e_y,
        var_y=e_y2 - e_y**2,
        e_spg_reinforce=e_sr,
        e_spg_actor_critic=e_ac,
    )


# --- direct policy grids ------------------------------------------------------
#
# Bound certificates search over per-state categorical distributions directly
# (a simplex grid per state) rather than through softmax parameters, so
# deterministic corner policies are reachable.

def simplex_grid(n_actions: int, resolution: float) -> np.ndarray:
    """All probability vectors with entries k * resolution summing to 1."""
    m = round(1.0 / resolution)
    if abs(m * resolution - 1.0) > 1e-9 or m < 1:
        raise ValueError(f"resolution {resolution} must divide 1 evenly")
    points = []
    for combo in itertools.combinations(range(m + n_actions - 1), n_actions - 1):
        prev = -1
        counts = []
        for c in combo:
            counts.append(c - prev - 1)
            prev = c
        counts.append(m + n_actions - 2 - prev)
        points.append([c / m for c in counts])
    return np.asarray(points, dtype=float)


def policy_grid(n_states: int, n_actions: int, resolution: float) -> np.ndarray:
    """Cartesian product of per-state simplex grids, shape (N, S, A)."""
    per_state = simplex_grid(n_actions, resolution)
    idx = np.stack(
        np.meshgrid(*([np.arange(len(per_state))] * n_states), indexing="ij"), axis=-1
    ).reshape(-1, n_states)
    return per_state[idx]  # (N, S, A)


@dataclass(frozen=True, eq=False)
class GridEval:
    v: np.ndarray  # (N,)
    p_safe: np.ndarray  # (N,)
    v_c: np.ndarray  # (N,)


def grid_eval(mdp: FiniteMDP, policies: np.ndarray) -> GridEval:
    """Exact V, P(all safe), and time-average safety for a batch of policies.

    Forward DP on the state distribution (for V and the cumulative safety) and
    on the surviving-mass vector (for the all-safe probability).
    """
    policies = np.asarray(policies, dtype=float)
    safe = mdp.safe_states.astype(float)
    r = mdp.reward.astype(float)
    T = mdp.horizon
    p_pi = np.einsum("nsa,sat->nst", policies, mdp.transition)  # (N, S, S')
    dist = np.broadcast_to(mdp.initial, (policies.shape[0], mdp.n_states)).copy()
    survive = dist * safe
    v = dist @ r
    vc_sum = dist @ safe
    for _ in range(T):
        dist = np.einsum("ns,nst->nt", dist, p_pi)
        survive = np.einsum("ns,nst->nt", survive, p_pi) * safe
        v += dist @ r
        vc_sum += dist @ safe
    return GridEval(v=v, p_safe=survive.sum(axis=1), v_c=vc_sum / (T + 1))


def default_lambda_grid(n_points: int = 200) -> np.ndarray:
    """{0} plus a geometric sweep of multipliers from 1e-3 to 1e3."""
    return np.concatenate([[0.0], np.geomspace(1e-3, 1e3, n_points)])


@dataclass(frozen=True, eq=False)
class DualGridResult:
    lam_star: float
    d_star: float
    on_boundary: bool
    lam_grid: np.ndarray


def dual_grid(
    mdp: FiniteMDP,
    problem: str,
    delta: float,
    lam_grid: Optional[np.ndarray] = None,
    policies: Optional[np.ndarray] = None,
    resolution: float = 0.01,
) -> DualGridResult:
    """min over the multiplier grid of max over the policy grid of the Lagrangian.

    problem="mirror" uses the time-average safety constraint at level
    1 - delta/(T+1); problem="probabilistic" uses the all-safe probability at
    level 1 - delta.
    """
    if lam_grid is None:
        lam_grid = default_lambda_grid()
    lam_grid = np.asarray(lam_grid, dtype=float)
    if lam_grid.size == 0:
        raise ValueError("lambda grid must be nonempty")
    if policies is None:
        policies = policy_grid(mdp.n_states, mdp.n_actions, resolution)
    ge = grid_eval(mdp, policies)
    if problem == "mirror":
        slack = ge.v_c - (1.0 - delta / (mdp.horizon + 1))
    elif problem == "probabilistic":
        slack = ge.p_safe - (1.0 - delta)
    else:
        raise ValueError(f"unknown problem tag {problem!r}")
    d_vals = np.array([(ge.v + lam * slack).max() for lam in lam_grid])
    i = int(np.argmin(d_vals))
    return DualGridResult(
        lam_star=float(lam_grid[i]),
        d_star=float(d_vals[i]),
        on_boundary=(i == len(lam_grid) - 1),
        lam_grid=lam_grid,
    )


@dataclass(frozen=True, eq=False)
class BoundCertificate:
    """Grid-search certificate for the optimality/safety sandwich bounds.

    p_star: best value among grid policies meeting the all-safe constraint.
    p_hat_star: best value under the tightened time-average constraint.
    lam_hat_star: dual minimizer of the tightened time-average problem.
    d_star: dual optimum of the probabilistic problem.
    Sandwiches are asserted within eps_grid, the observed sensitivity of all
    reported quantities to halving the policy grid and doubling the lambda grid.
    """

    p_star: float
    p_hat_star: float
    lam_hat_star: float
    d_star: float
    delta: float
    horizon: int
    resolution: float
    n_policies: int
    n_lambdas: int
    eps_grid: float
    sandwich_theorem_value: bool
    sandwich_dual_gap: bool
    lam_on_boundary: bool
    instance: str = ""

    @property
    def bound_gap(self) -> float:
        return self.lam_hat_star * self.delta * self.horizon / (self.horizon + 1)


def _bound_quantities(mdp: FiniteMDP, delta: float, resolution: float, lam_grid: np.ndarray):
    policies = policy_grid(mdp.n_states, mdp.n_actions, resolution)
    ge = grid_eval(mdp, policies)
    feas_prob = ge.p_safe >= (1.0 - delta) - 1e-12
    feas_mirror = ge.v_c >= (1.0 - delta / (mdp.horizon + 1)) - 1e-12
    if not feas_prob.any():
        raise InfeasibleGridError(
            f"no grid policy satisfies the all-safe constraint at delta={delta}"
        )
    if not feas_mirror.any():
        raise InfeasibleGridError(
            f"no grid policy satisfies the time-average constraint at delta={delta}"
        )
    p_star = float(ge.v[feas_prob].max())
    p_hat_star = float(ge.v[feas_mirror].max())
    mirror = dual_grid(mdp, "mirror", delta, lam_grid=lam_grid, policies=policies)
    prob = dual_grid(mdp, "probabilistic", delta, lam_grid=lam_grid, policies=policies)
    return p_star, p_hat_star, mirror, prob, len(policies)


def certify_bounds(
    mdp: FiniteMDP,
    delta: float,
    resolution: float = 0.01,
    lam_grid: Optional[np.ndarray] = None,
) -> BoundCertificate:
    """Compute the sandwich quantities at two grid scales and certify both bounds."""
    if not (0.0 <= delta <= 1.0):
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    if lam_grid is None:
        lam_grid = default_lambda_grid()
    coarse = _bound_quantities(mdp, delta, resolution, lam_grid)
    fine_lams = default_lambda_grid(2 * (len(lam_grid) - 1)) if lam_grid[0] == 0.0 else np.sort(
        np.concatenate([lam_grid, (lam_grid[:-1] + lam_grid[1:]) / 2.0])
    )
    fine = _bound_quantities(mdp, delta, resolution / 2.0, fine_lams)
    p_star, p_hat_star, mirror, prob, n_pol = fine
    gap = mirror.lam_star * delta * mdp.horizon / (mdp.horizon + 1)
    coarse_gap = coarse[2].lam_star * delta * mdp.horizon / (mdp.horizon + 1)
    eps_grid = 4.0 * max(
        abs(p_star - coarse[0]),
        abs(p_hat_star - coarse[1]),
        abs(prob.d_star - coarse[3].d_star),
        abs(gap - coarse_gap),
    ) + 1e-9
    sandwich_value = (p_hat_star + gap >= p_star - eps_grid) and (p_star >= p_hat_star - eps_grid)
    sandwich_dual = (p_star + gap >= prob.d_star - eps_grid) and (prob.d_star >= p_star - eps_grid)
    return BoundCertificate(
        p_star=p_star,
        p_hat_star=p_hat_star,
        lam_hat_star=mirror.lam_star,
        d_star=prob.d_star,
        delta=delta,
        horizon=mdp.horizon,
        resolution=resolution / 2.0,
        n_policies=n_pol,
        n_lambdas=len(fine_lams),
        eps_grid=eps_grid,
        sandwich_theorem_value=bool(sandwich_value),
        sandwich_dual_gap=bool(sandwich_dual),
        lam_on_boundary=bool(mirror.on_boundary or prob.on_boundary),
        instance=mdp.name,
    )


def format_certificate(cert: BoundCertificate) -> str:
    lines = [
        "safepg bound certificate v1",
        f"instance: {cert.instance or 'unnamed'}",
        f"delta: {cert.delta:.12g}",
        f"horizon: {cert.horizon}",
        f"policy grid resolution: {cert.resolution:.12g} ({cert.n_policies} policies)",
        f"lambda grid points: {cert.n_lambdas}",
        f"P* (probabilistic optimum):        {cert.p_star:.12g}",
        f"P^ (time-average mirror optimum):  {cert.p_hat_star:.12g}",
        f"lambda^ (mirror dual minimizer):   {cert.lam_hat_star:.12g}",
        f"D* (probabilistic dual optimum):   {cert.d_star:.12g}",
        f"bound gap lambda^*delta*T/(T+1):   {cert.bound_gap:.12g}",
        f"eps_grid: {cert.eps_grid:.12g}",
        f"sandwich P^ <= P* <= P^ + gap:     {'PASS' if cert.sandwich_theorem_value else 'FAIL'}",
        f"sandwich P* <= D* <= P* + gap:     {'PASS' if cert.sandwich_dual_gap else 'FAIL'}",
        f"lambda argmin on grid boundary:    {'yes' if cert.lam_on_boundary else 'no'}",
    ]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class InclusionReport:
    """Feasible-set inclusion counts over a policy grid.

    Regions: tightened time-average constraint (mirror), all-safe probability
    constraint, and the loose time-average constraint at level 1 - delta.
    """

    n_policies: int
    n_mirror: int
    n_prob: int
    n_loose: int
    violations_mirror_in_prob: int
    violations_prob_in_loose: int

    @property
    def ok(self) -> bool:
        return self.violations_mirror_in_prob == 0 and self.violations_prob_in_loose == 0


def feasibility_inclusions(
    mdp: FiniteMDP, delta: float, resolution: float = 0.01
) -> InclusionReport:
    """Check mirror-feasible => all-safe-feasible => loose-feasible on every grid policy."""
    policies = policy_grid(mdp.n_states, mdp.n_actions, resolution)
    ge = grid_eval(mdp, policies)
    tol = 1e-12
    in_mirror = ge.v_c >= (1.0 - delta / (mdp.horizon + 1)) - tol
    in_prob = ge.p_safe >= (1.0 - delta) - tol
    in_loose = ge.v_c >= (1.0 - delta) - tol
    return InclusionReport(
        n_policies=len(policies),
        n_mirror=int(in_mirror.sum()),
        n_prob=int(in_prob.sum()),
        n_loose=int(in_loose.sum()),
        violations_mirror_in_prob=int(np.sum(in_mirror & ~in_prob)),
        violations_prob_in_loose=int(np.sum(in_prob & ~in_loose)),
    )


# --- builtin desk-scale instances ---------------------------------------------

def always_safe_mdp() -> FiniteMDP:
    """Two safe states; every trajectory is safe (degenerate equality case)."""
    transition = np.array(
        [
            [[1.0, 0.0], [0.3, 0.7]],
            [[0.6, 0.4], [0.0, 1.0]],
        ]
    )
    return FiniteMDP(
        transition=transition,
        reward=np.array([0.0, 1.0]),
        safe_states=np.array([True, True]),
        horizon=3,
        initial=np.array([0.5, 0.5]),
        name="always-safe",
    )


def risky_mdp() -> FiniteMDP:
    """Safe state 0 with a rewarding unsafe absorbing state 1.

    Action 0 stays put; action 1 is a coin flip into the unsafe state. The
    certified non-degenerate instance for the strict variance gap, and a
    constrained instance for the bound certificates.
    """
    transition = np.array(
        [
            [[1.0, 0.0], [0.5, 0.5]],
            [[0.0, 1.0], [0.0, 1.0]],
        ]
    )
    return FiniteMDP(
        transition=transition,
        reward=np.array([0.0, 1.0]),
        safe_states=np.array([True, False]),
        horizon=2,
        initial=np.array([1.0, 0.0]),
        name="risky",
    )


def three_state_mdp() -> FiniteMDP:
    """Three states (one unsafe but rewarding), stochastic mixing transitions."""
    transition = np.array(
        [
            [[0.9, 0.1, 0.0], [0.2, 0.5, 0.3]],
            [[0.3, 0.7, 0.0], [0.1, 0.4, 0.5]],
            [[0.0, 0.0, 1.0], [0.5, 0.3, 0.2]],
        ]
    )
    return FiniteMDP(
        transition=transition,
        reward=np.array([0.0, 0.4, 1.0]),
        safe_states=np.array([True, True, False]),
        horizon=3,
        initial=np.array([0.6, 0.4, 0.0]),
        name="three-state",
    )


BUILTIN_INSTANCES = ("always-safe", "risky", "three-state")


def builtin_mdp(name: str) -> FiniteMDP:
    makers = {
        "always-safe": always_safe_mdp,
        "risky": risky_mdp,
        "three-state": three_state_mdp,
    }
    try:
        return makers[name]()
    except KeyError:
        raise KeyError(
            f"unknown builtin instance {name!r}; known: {', '.join(BUILTIN_INSTANCES)}"
        ) from None


def grid_resolution_for(mdp: FiniteMDP) -> float:
    """Default per-state grid resolution keeping at least 1e4 grid policies."""
    return 0.01 if mdp.n_states <= 2 else 0.04
