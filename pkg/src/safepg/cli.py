"""Command-line interface: train, evaluate, sweep, and the verification checks.

Subcommands write schema-stable CSVs plus a manifest.json into the run
directory. Relative output directories are rooted at $SAFEPG_OUT_ROOT when it
is set. Exit status is 0 iff the command (and every invoked check) succeeded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, oracle
from .config import ConfigError, load_experiment_config
from .core import RandomSource
from .env import FiniteMDP, enumerate_trajectories, env_hash
from .oracle import BUILTIN_INSTANCES, builtin_mdp, grid_resolution_for
from .policy import TabularSoftmaxPolicy, load_checkpoint, save_checkpoint
from .trainers import METHOD_CUMULATIVE, evaluate_detailed, sweep, train

METRICS_COLUMNS = ("episode", "return", "safe", "avg_return", "avg_safety", "lambda")
EVAL_COLUMNS = ("episode", "return", "safe")
SWEEP_COLUMNS = (
    "method",
    "weight",
    "run",
    "eval_return",
    "eval_safety",
    "lambda_final",
    "bound_upper",
)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def _write_csv(path: Path, columns, rows) -> None:
    lines = [",".join(columns)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_bytes(("\n".join(lines) + "\n").encode())


def _resolve_out(dir_str: str) -> Path:
    path = Path(dir_str)
    root = os.environ.get("SAFEPG_OUT_ROOT")
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out_dir: Path, command: str, config_hash: str, seeds, outputs, timings) -> None:
    doc = {
        "artifact_version": __version__,
        "command": command,
        "config_hash": config_hash,
        "seeds": list(seeds),
        "outputs": [str(p) for p in outputs],
        "timings_s": timings,
    }
    (out_dir / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_config(args) -> object:
    config = load_experiment_config(args.config)
    trainer = config.trainer
    if getattr(args, "seed", None) is not None:
        trainer = replace(trainer, seed=args.seed)
    if getattr(args, "episodes", None) is not None:
        trainer = replace(trainer, episodes=args.episodes)
    config = replace(config, trainer=trainer)
    if getattr(args, "out", None) is not None:
        config = replace(config, output=replace(config.output, dir=args.out))
    return config


def cmd_train(args) -> int:
    config = _load_config(args)
    out_dir = _resolve_out(config.output.dir)
    policy = config.make_policy()
    ehash = env_hash(config.env)
    outputs = []
    cadence = config.output.checkpoint_every

    def hook(k, pol):
        if cadence > 0 and (k + 1) % cadence == 0:
            path = out_dir / f"checkpoint_ep{k + 1}.json"
            save_checkpoint(pol, path, ehash)
            outputs.append(path)

    start = time.perf_counter()
    result = train(config.trainer, config.env, policy, episode_hook=hook)
    elapsed = time.perf_counter() - start
    metrics_path = out_dir / "metrics.csv"
    _write_csv(
        metrics_path,
        METRICS_COLUMNS,
        [(m.episode, m.ret, m.safe, m.avg_return, m.avg_safety, m.lam) for m in result.metrics],
    )
    final_ckpt = out_dir / "checkpoint_final.json"
    save_checkpoint(result.policy, final_ckpt, ehash)
    outputs += [metrics_path, final_ckpt]
    _write_manifest(out_dir, "train", config.config_hash(), [config.trainer.seed], outputs,
                    {"train": elapsed})
    if result.metrics:
        last = result.metrics[-1]
        print(
            f"trained {config.name}: {len(result.metrics)} episodes, "
            f"avg_return={last.avg_return:.4f}, avg_safety={last.avg_safety:.4f}, "
            f"lambda={last.lam:.4f}"
        )
    else:
        print(f"trained {config.name}: 0 episodes (policy unchanged)")
    print(f"wrote {metrics_path}")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    out_dir = _resolve_out(config.output.dir)
    ehash = env_hash(config.env)
    policy = load_checkpoint(args.checkpoint, expected_env_hash=None if args.force else ehash)
    n = args.episodes if args.episodes is not None else config.evaluation.episodes
    seed = args.seed if args.seed is not None else config.evaluation.seed
    start_mode = args.start_mode or config.evaluation.start_mode
    start = time.perf_counter()
    rows = evaluate_detailed(policy, config.env, n, RandomSource(seed, 0), start_mode=start_mode)
    elapsed = time.perf_counter() - start
    eval_path = out_dir / "evaluate.csv"
    _write_csv(eval_path, EVAL_COLUMNS, [(j, r, s) for j, (r, s) in enumerate(rows)])
    outputs = [eval_path]
    if args.dump_trajectories:
        outputs.append(_dump_trajectories(config, policy, out_dir, seed, args.dump_trajectories))
    mean_return = sum(r for r, _ in rows) / n
    safety = sum(1 for _, s in rows if s) / n
    _write_manifest(out_dir, "evaluate", config.config_hash(), [seed], outputs,
                    {"evaluate": elapsed})
    print(f"evaluated {args.checkpoint} over {n} episodes: "
          f"mean_return={mean_return:.4f}, safety_fraction={safety:.4f}")
    print(f"wrote {eval_path}")
    return 0


def _dump_trajectories(config, policy, out_dir: Path, seed: int, count: int) -> Path:
    """Replay the first evaluation episodes and write their states step by step."""
    from .env import NavEnvSpec, rollout

    env = config.env
    rows = []
    for j in range(count):
        traj = rollout(env, policy, RandomSource(seed, j))
        for t in range(traj.horizon + 1):
            state = traj.states[t]
            if isinstance(env, NavEnvSpec):
                x, y = float(state[0]), float(state[1])
            else:
                x, y = int(state), 0
            rows.append((j, t, x, y, float(traj.rewards[t]), bool(traj.safe_flags[t])))
    path = out_dir / "trajectories.csv"
    _write_csv(path, ("episode", "t", "x", "y", "reward", "safe"), rows)
    return path


def cmd_sweep(args) -> int:
    config = _load_config(args)
    if config.sweep is None:
        raise ConfigError("config has no [sweep] section")
    sw = config.sweep
    points = [(sw.prob_method, w) for w in sw.prob_weights]
    points += [(METHOD_CUMULATIVE, w) for w in sw.cum_weights]
    if not points:
        raise ConfigError("sweep grid is empty: set prob_weights and/or cum_weights")
    base = config.trainer
    if sw.episodes is not None:
        base = replace(base, episodes=sw.episodes)
    out_dir = _resolve_out(config.output.dir)
    start = time.perf_counter()
    rows = sweep(
        config.env,
        config.make_policy,
        base,
        points,
        runs=sw.runs,
        eval_episodes=config.evaluation.episodes,
        eval_seed=config.evaluation.seed,
    )
    elapsed = time.perf_counter() - start
    sweep_path = out_dir / "sweep.csv"
    _write_csv(
        sweep_path,
        SWEEP_COLUMNS,
        [
            (r.method, r.weight, r.run, r.eval_return, r.eval_safety, r.lambda_final, r.bound_upper)
            for r in rows
        ],
    )
    _write_manifest(out_dir, "sweep", config.config_hash(), [base.seed], [sweep_path],
                    {"sweep": elapsed})
    print(f"swept {len(points)} grid points x {sw.runs} runs; wrote {sweep_path}")
    return 0


class _CheckReport:
    def __init__(self):
        self.lines: List[str] = []
        self.failures = 0

    def record(self, name: str, ok: bool, detail: str) -> None:
        status = "PASS" if ok else "FAIL"
        line = f"{status} {name}: {detail}"
        self.lines.append(line)
        print(line)
        if not ok:
            self.failures += 1

    def write(self, path: Path) -> None:
        path.write_text("\n".join(self.lines) + "\n")


def _probe_policy(mdp: FiniteMDP, seed: int = 12345) -> TabularSoftmaxPolicy:
    gen = np.random.Generator(np.random.PCG64(seed))
    theta = gen.uniform(-1.0, 1.0, size=(mdp.n_states, mdp.n_actions))
    return TabularSoftmaxPolicy(theta=theta)


def _fd_grad(f, x0: np.ndarray, h: float) -> np.ndarray:
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2 * h)
    return grad


def cmd_oracle_check(args) -> int:
    out_dir = _resolve_out(args.out or "runs/checks")
    report = _CheckReport()
    delta = 0.1
    for name in BUILTIN_INSTANCES:
        mdp = builtin_mdp(name)
        policy = _probe_policy(mdp)
        res = oracle.exact_eval(mdp, policy)
        moments = oracle.estimator_moments(mdp, policy)
        err = float(np.max(np.abs(moments.e_spg_reinforce - res.p_safe_grad)))
        report.record(f"gradient-identity[{name}]", err <= 1e-10, f"max_err={err:.3e}")
        err = float(np.max(np.abs(moments.e_spg_reinforce - moments.e_spg_actor_critic)))
        report.record(f"equal-expectation[{name}]", err <= 1e-10, f"max_err={err:.3e}")
        ghat_mean = sum(
            p * ((1.0 if np.all(t.safe_flags) else 0.0) - (1.0 - delta))
            for t, p in enumerate_trajectories(mdp, policy)
        )
        err = abs(ghat_mean - (res.p_safe - (1.0 - delta)))
        report.record(f"ghat-unbiased[{name}]", err <= 1e-12, f"err={err:.3e}")
        for label, grad, scalar in (
            ("value", res.value_grad, lambda r: r.value),
            ("p-safe", res.p_safe_grad, lambda r: r.p_safe),
            ("time-avg-safety", res.v_c_grad, lambda r: r.v_c),
        ):
            fd = _fd_grad(
                lambda x: scalar(oracle.exact_eval(mdp, policy.with_params(x))),
                policy.params.copy(),
                1e-6,
            )
            rel = float(np.max(np.abs(grad - fd)) / (1.0 + np.max(np.abs(fd))))
            report.record(f"fd-gradient-{label}[{name}]", rel <= 1e-6, f"rel_err={rel:.3e}")
        q = oracle.backward_safety(mdp, policy)
        err = _backward_vs_enumeration(mdp, policy, q)
        report.record(f"backward-safety[{name}]", err <= 1e-12, f"max_err={err:.3e}")
    report.write(out_dir / "oracle_check.txt")
    return 1 if report.failures else 0


def _backward_vs_enumeration(mdp, policy, q) -> float:
    from .env import enumerate_trajectories

    T = mdp.horizon
    num = np.zeros((T, mdp.n_states, mdp.n_actions))
    den = np.zeros_like(num)
    for traj, p in enumerate_trajectories(mdp, policy):
        flags = traj.safe_flags
        for t in range(T):
            s, a = traj.states[t], traj.actions[t]
            den[t, s, a] += p
            if np.all(flags[t + 1 :]):
                num[t, s, a] += p
    mask = den > 0
    emp = np.where(mask, num / np.where(mask, den, 1.0), 0.0)
    return float(np.max(np.abs(np.where(mask, q[:T] - emp, 0.0))))


def cmd_variance_check(args) -> int:
    out_dir = _resolve_out(args.out or "runs/checks")
    report = _CheckReport()
    for name in BUILTIN_INSTANCES:
        mdp = builtin_mdp(name)
        policy = _probe_policy(mdp)
        m = oracle.estimator_moments(mdp, policy)
        err = abs(m.e_x - m.e_y)
        report.record(f"towering-identity[{name}]", err <= 1e-12, f"|E[X]-E[Y]|={err:.3e}")
        gap = m.var_x - m.var_y
        report.record(
            f"variance-ordering[{name}]", gap >= -1e-12, f"Var(X)-Var(Y)={gap:.6e}"
        )
        if name == "risky":
            report.record(
                "strict-variance-gap[risky]", gap > 1e-6, f"Var(X)-Var(Y)={gap:.6e}"
            )
    report.write(out_dir / "variance_check.txt")
    return 1 if report.failures else 0


def cmd_bound_check(args) -> int:
    out_dir = _resolve_out(args.out or "runs/checks")
    report = _CheckReport()
    delta = 0.1
    for name in ("risky", "three-state"):
        mdp = builtin_mdp(name)
        cert = oracle.certify_bounds(mdp, delta, resolution=grid_resolution_for(mdp))
        cert_path = out_dir / f"bound_{name}.txt"
        cert_path.write_text(oracle.format_certificate(cert))
        report.record(
            f"sandwich-value[{name}]",
            cert.sandwich_theorem_value,
            f"P^={cert.p_hat_star:.6f} P*={cert.p_star:.6f} gap={cert.bound_gap:.6f} "
            f"eps={cert.eps_grid:.2e}",
        )
        report.record(
            f"sandwich-dual[{name}]",
            cert.sandwich_dual_gap,
            f"P*={cert.p_star:.6f} D*={cert.d_star:.6f} gap={cert.bound_gap:.6f}",
        )
        if cert.lam_on_boundary:
            print(f"WARN bound-check[{name}]: lambda argmin on grid boundary")
    for name in BUILTIN_INSTANCES:
        mdp = builtin_mdp(name)
        rep = oracle.feasibility_inclusions(mdp, delta, resolution=grid_resolution_for(mdp))
        report.record(
            f"feasible-set-inclusions[{name}]",
            rep.ok,
            f"policies={rep.n_policies} mirror={rep.n_mirror} prob={rep.n_prob} "
            f"loose={rep.n_loose} violations={rep.violations_mirror_in_prob}+"
            f"{rep.violations_prob_in_loose}",
        )
        ge = oracle.grid_eval(mdp, oracle.policy_grid(mdp.n_states, mdp.n_actions,
                                                      grid_resolution_for(mdp)))
        worst = float(np.max(ge.p_safe - ge.v_c))
        report.record(
            f"p-safe-below-time-average[{name}]", worst <= 1e-12, f"max(P-Vc)={worst:.3e}"
        )
    report.write(out_dir / "bound_check.txt")
    return 1 if report.failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safepg",
        description="Safe policy-gradient training, evaluation, and verification checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training config; writes metrics.csv")
    p_train.add_argument("--config", required=True, help="builtin config name or file path")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--episodes", type=int, default=None)
    p_train.add_argument("--out", default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint; writes evaluate.csv")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--episodes", type=int, default=None)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--out", default=None)
    p_eval.add_argument("--start-mode", choices=["uniform-safe", "env"], default=None)
    p_eval.add_argument("--force", action="store_true",
                        help="skip the checkpoint/environment hash match")
    p_eval.add_argument("--dump-trajectories", type=int, default=0, metavar="N",
                        help="also write the first N episodes' states to trajectories.csv")
    p_eval.set_defaults(func=cmd_evaluate)

    p_sweep = sub.add_parser("sweep", help="penalty-weight sweep; writes sweep.csv")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--episodes", type=int, default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    for name, func, help_text in (
        ("oracle-check", cmd_oracle_check, "gradient identities and enumeration cross-checks"),
        ("variance-check", cmd_variance_check, "estimator-coefficient variance ordering"),
        ("bound-check", cmd_bound_check, "duality sandwich certificates and set inclusions"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", default=None)
        p.set_defaults(func=func)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
