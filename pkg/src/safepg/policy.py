"""Policy parametrizations: sampling, log-density, and analytic log-density gradients.

Three families:
  * GaussianRbfPolicy: Gaussian action noise around a mean that is a linear
    combination of radial basis features on the map.
  * GatedLinearPolicy: Gaussian noise around a sigmoid-gated blend of two
    linear maps of goal- and obstacle-relative coordinates.
  * TabularSoftmaxPolicy: per-state softmax over finitely many actions.

All gradients are closed form; parameters are exposed as one flat float64
vector so trainers and checkpoints stay parametrization-agnostic.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .core import as_generator, draw_categorical


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def _gaussian_log_prob(a: np.ndarray, mean: np.ndarray, var: np.ndarray) -> float:
    resid = np.asarray(a, dtype=float) - mean
    return float(-0.5 * np.sum(resid * resid / var) - np.log(2 * np.pi) - 0.5 * np.sum(np.log(var)))


class BasePolicy:
    """Common surface shared by all parametrizations."""

    kind: str

    @property
    def params(self) -> np.ndarray:
        raise NotImplementedError

    def with_params(self, params: np.ndarray) -> "BasePolicy":
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return self.params.size

    def sample_action(self, s, rng):
        raise NotImplementedError

    def log_prob(self, s, a) -> float:
        raise NotImplementedError

    def log_prob_grad(self, s, a) -> np.ndarray:
        raise NotImplementedError

    def log_prob_grad_batch(self, states, actions) -> np.ndarray:
        """Per-step score gradients, shape (T, n_params)."""
        return np.stack([self.log_prob_grad(states[t], actions[t]) for t in range(len(actions))])


@dataclass(frozen=True, eq=False)
class GaussianRbfPolicy(BasePolicy):
    """Gaussian policy whose mean is theta' * RBF features of the state."""

    theta: np.ndarray  # (d, 2)
    centers: np.ndarray  # (d, 2)
    sigma: float = 0.5
    cov: Tuple[float, float] = (0.5, 0.5)
    deterministic: bool = False

    kind = "gaussian-rbf"

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.sigma}")
        if any(v <= 0 for v in self.cov):
            raise ValueError(f"covariance diagonal must be positive, got {self.cov}")
        if self.theta.shape != (self.centers.shape[0], 2):
            raise ValueError(
                f"theta shape {self.theta.shape} does not match {self.centers.shape[0]} centers"
            )

    @classmethod
    def lattice(
        cls,
        bounds=((0.0, 0.0), (10.0, 10.0)),
        separation: float = 0.5,
        sigma: float = 0.5,
        cov: Tuple[float, float] = (0.5, 0.5),
        deterministic: bool = False,
    ) -> "GaussianRbfPolicy":
        """Zero-initialized policy on a uniform lattice of centers.

        The default map and separation give a 21x21 lattice (441 centers).
        """
        (x0, y0), (x1, y1) = bounds
        xs = np.arange(x0, x1 + separation / 2, separation)
        ys = np.arange(y0, y1 + separation / 2, separation)
        centers = np.array([(x, y) for x in xs for y in ys], dtype=float)
        theta = np.zeros((len(centers), 2))
        return cls(theta=theta, centers=centers, sigma=sigma, cov=cov, deterministic=deterministic)

    @property
    def params(self) -> np.ndarray:
        return self.theta.ravel()

    def with_params(self, params: np.ndarray) -> "GaussianRbfPolicy":
        theta = np.asarray(params, dtype=float).reshape(self.theta.shape)
        return replace(self, theta=theta)

    def features(self, s) -> np.ndarray:
        """RBF features: exp(-|s - center_k|^2 / (2 sigma^2)) per center."""
        diff = self.centers - np.asarray(s, dtype=float)
        return np.exp(-np.sum(diff * diff, axis=1) / (2.0 * self.sigma**2))

    def _features_batch(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        diff = states[:, None, :] - self.centers[None, :, :]
        return np.exp(-np.sum(diff * diff, axis=2) / (2.0 * self.sigma**2))

    def mean(self, s) -> np.ndarray:
        return self.features(s) @ self.theta

    def sample_action(self, s, rng) -> np.ndarray:
        m = self.mean(s)
        if self.deterministic:
            return m
        gen = as_generator(rng)
        return m + np.sqrt(np.asarray(self.cov)) * gen.standard_normal(2)

    def log_prob(self, s, a) -> float:
        return _gaussian_log_prob(a, self.mean(s), np.asarray(self.cov))

    def log_prob_grad(self, s, a) -> np.ndarray:
        f = self.features(s)
        resid = (np.asarray(a, dtype=float) - f @ self.theta) / np.asarray(self.cov)
        return np.outer(f, resid).ravel()

    def log_prob_grad_batch(self, states, actions) -> np.ndarray:
        feats = self._features_batch(states)  # (T, d)
        resid = (np.asarray(actions, dtype=float) - feats @ self.theta) / np.asarray(self.cov)
        return (feats[:, :, None] * resid[:, None, :]).reshape(len(actions), -1)


@dataclass(frozen=True, eq=False)
class GatedLinearPolicy(BasePolicy):
    """Gaussian policy gated between a goal-seeking and an obstacle-avoiding linear map.

    The mean is alpha(s) * theta1' M(s) + (1 - alpha(s)) * theta2' M(s) with
    M(s) the goal- and obstacle-relative coordinates and alpha a sigmoid of
    the scaled distance to the obstacle center. Gate parameters are frozen
    unless learn_gate is set.
    """

    theta1: np.ndarray  # (4, 2)
    theta2: np.ndarray  # (4, 2)
    goal: Tuple[float, float]
    obstacle_center: Tuple[float, float]
    obstacle_radius: float
    gate: Tuple[float, float] = (5.0, 1.0)
    learn_gate: bool = False
    cov: Tuple[float, float] = (0.5, 0.5)
    deterministic: bool = False

    kind = "gated-linear"

    def __post_init__(self):
        if self.theta1.shape != (4, 2) or self.theta2.shape != (4, 2):
            raise ValueError("theta1 and theta2 must have shape (4, 2)")
        if self.obstacle_radius <= 0:
            raise ValueError(f"obstacle radius must be positive, got {self.obstacle_radius}")
        if any(v <= 0 for v in self.cov):
            raise ValueError(f"covariance diagonal must be positive, got {self.cov}")

    @classmethod
    def zeros(cls, goal, obstacle_center, obstacle_radius, **kwargs) -> "GatedLinearPolicy":
        return cls(
            theta1=np.zeros((4, 2)),
            theta2=np.zeros((4, 2)),
            goal=tuple(goal),
            obstacle_center=tuple(obstacle_center),
            obstacle_radius=float(obstacle_radius),
            **kwargs,
        )

    @property
    def params(self) -> np.ndarray:
        flat = [self.theta1.ravel(), self.theta2.ravel()]
        if self.learn_gate:
            flat.append(np.asarray(self.gate, dtype=float))
        return np.concatenate(flat)

    def with_params(self, params: np.ndarray) -> "GatedLinearPolicy":
        params = np.asarray(params, dtype=float)
        theta1 = params[:8].reshape(4, 2)
        theta2 = params[8:16].reshape(4, 2)
        if self.learn_gate:
            return replace(self, theta1=theta1, theta2=theta2, gate=(params[16], params[17]))
        return replace(self, theta1=theta1, theta2=theta2)

    def relative_coords(self, s) -> np.ndarray:
        x, y = float(s[0]), float(s[1])
        xg, yg = self.goal
        xo, yo = self.obstacle_center
        return np.array([x - xg, y - yg, x - xo, y - yo])

    def gate_value(self, s) -> float:
        x, y = float(s[0]), float(s[1])
        xo, yo = self.obstacle_center
        dist = np.hypot(x - xo, y - yo)
        h1, h2 = self.gate
        return _sigmoid(h1 * (dist / self.obstacle_radius - h2))

    def mean(self, s) -> np.ndarray:
        m = self.relative_coords(s)
        alpha = self.gate_value(s)
        return alpha * (self.theta1.T @ m) + (1.0 - alpha) * (self.theta2.T @ m)

    def sample_action(self, s, rng) -> np.ndarray:
        mu = self.mean(s)
        if self.deterministic:
            return mu
        gen = as_generator(rng)
        return mu + np.sqrt(np.asarray(self.cov)) * gen.standard_normal(2)

    def log_prob(self, s, a) -> float:
        return _gaussian_log_prob(a, self.mean(s), np.asarray(self.cov))

    def log_prob_grad(self, s, a) -> np.ndarray:
        m = self.relative_coords(s)
        alpha = self.gate_value(s)
        resid = (np.asarray(a, dtype=float) - self.mean(s)) / np.asarray(self.cov)
        g1 = alpha * np.outer(m, resid)
        g2 = (1.0 - alpha) * np.outer(m, resid)
        parts = [g1.ravel(), g2.ravel()]
        if self.learn_gate:
            x, y = float(s[0]), float(s[1])
            xo, yo = self.obstacle_center
            dist = np.hypot(x - xo, y - yo)
            h1, h2 = self.gate
            dalpha = alpha * (1.0 - alpha)
            dmean_dalpha = (self.theta1 - self.theta2).T @ m
            common = float(dmean_dalpha @ resid) * dalpha
            parts.append(np.array([common * (dist / self.obstacle_radius - h2), common * (-h1)]))
        return np.concatenate(parts)


@dataclass(frozen=True, eq=False)
class TabularSoftmaxPolicy(BasePolicy):
    """Per-state softmax policy over a finite action set."""

    theta: np.ndarray  # (S, A)

    kind = "tabular-softmax"

    def __post_init__(self):
        if self.theta.ndim != 2:
            raise ValueError(f"theta must be a (states, actions) table, got shape {self.theta.shape}")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "TabularSoftmaxPolicy":
        return cls(theta=np.zeros((n_states, n_actions)))

    @property
    def params(self) -> np.ndarray:
        return self.theta.ravel()

    def with_params(self, params: np.ndarray) -> "TabularSoftmaxPolicy":
        return replace(self, theta=np.asarray(params, dtype=float).reshape(self.theta.shape))

    def action_probs(self, s: int) -> np.ndarray:
        row = self.theta[s]
        z = np.exp(row - row.max())
        return z / z.sum()

    def sample_action(self, s: int, rng) -> int:
        return draw_categorical(as_generator(rng), self.action_probs(s))

    def log_prob(self, s: int, a: int) -> float:
        row = self.theta[s]
        m = row.max()
        return float(row[a] - m - np.log(np.sum(np.exp(row - m))))

    def log_prob_grad(self, s: int, a: int) -> np.ndarray:
        grad = np.zeros_like(self.theta)
        grad[s] = -self.action_probs(s)
        grad[s, a] += 1.0
        return grad.ravel()


# --- checkpoints -------------------------------------------------------------
#
# JSON container with raw little-endian float64 parameter bytes (base64), the
# parametrization tag, constructor metadata, and the environment hash. The
# byte round trip keeps load/save bit-exact.

CHECKPOINT_FORMAT = "safepg-checkpoint-v1"


def _encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype=float).tobytes()).decode("ascii")


def _decode_array(text: str, shape) -> np.ndarray:
    arr = np.frombuffer(base64.b64decode(text), dtype=float).copy()
    return arr.reshape(shape)


def save_checkpoint(policy: BasePolicy, path, env_hash: str) -> None:
    if isinstance(policy, GaussianRbfPolicy):
        meta = {
            "centers": _encode_array(policy.centers),
            "n_centers": policy.centers.shape[0],
            "sigma": policy.sigma,
            "cov": list(policy.cov),
            "deterministic": policy.deterministic,
        }
    elif isinstance(policy, GatedLinearPolicy):
        meta = {
            "goal": list(policy.goal),
            "obstacle_center": list(policy.obstacle_center),
            "obstacle_radius": policy.obstacle_radius,
            "gate": list(policy.gate),
            "learn_gate": policy.learn_gate,
            "cov": list(policy.cov),
            "deterministic": policy.deterministic,
        }
    elif isinstance(policy, TabularSoftmaxPolicy):
        meta = {"n_states": policy.theta.shape[0], "n_actions": policy.theta.shape[1]}
    else:
        raise TypeError(f"cannot checkpoint policy of type {type(policy).__name__}")
    doc = {
        "format": CHECKPOINT_FORMAT,
        "kind": policy.kind,
        "env_hash": env_hash,
        "n_params": int(policy.n_params),
        "params": _encode_array(policy.params),
        "meta": meta,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path, expected_env_hash: Optional[str] = None) -> BasePolicy:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    if expected_env_hash is not None and doc["env_hash"] != expected_env_hash:
        raise ValueError(
            f"checkpoint env hash {doc['env_hash'][:12]}... does not match "
            f"the current environment ({expected_env_hash[:12]}...)"
        )
    kind, meta = doc["kind"], doc["meta"]
    if kind == "gaussian-rbf":
        centers = _decode_array(meta["centers"], (meta["n_centers"], 2))
        policy = GaussianRbfPolicy(
            theta=np.zeros((meta["n_centers"], 2)),
            centers=centers,
            sigma=meta["sigma"],
            cov=tuple(meta["cov"]),
            deterministic=meta["deterministic"],
        )
    elif kind == "gated-linear":
        policy = GatedLinearPolicy.zeros(
            goal=meta["goal"],
            obstacle_center=meta["obstacle_center"],
            obstacle_radius=meta["obstacle_radius"],
            gate=tuple(meta["gate"]),
            learn_gate=meta["learn_gate"],
            cov=tuple(meta["cov"]),
            deterministic=meta["deterministic"],
        )
    elif kind == "tabular-softmax":
        policy = TabularSoftmaxPolicy.zeros(meta["n_states"], meta["n_actions"])
    else:
        raise ValueError(f"unknown parametrization tag {kind!r}")
    params = _decode_array(doc["params"], (doc["n_params"],))
    return policy.with_params(params)
