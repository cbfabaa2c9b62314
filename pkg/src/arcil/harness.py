"""Experiment orchestration: config -> seeded runs -> CSV/JSON artifacts.

Artifacts land under ``out_dir/<config_hash>/``. All CSV files are
byte-reproducible from (config, seed); wall times appear only in
``summary.json``.
"""

import json
import time
from pathlib import Path

import numpy as np

from arcil import analysis, envs, tabular
from arcil.agents import (Hyperparams, TrainSettings, default_hyperparams,
                          evaluate_policy, train_ail)
from arcil.config import ConfigError, ExperimentConfig
from arcil.policy import SquashedGaussianPolicy, bc_fit
from arcil.records import EvalRow, RunRecord

TRAIN_TASKS = {"car1d": "car1d", "planar_reach": "reach", "planar_push": "push"}

# ten second-moment configurations spanning positive correlation (case 1),
# mild anti-correlation (case 2, incl. the boundary s_rc = -s_r/2 where the
# net SNR equals snr_c) and strong anti-correlation (case 3)
SNR_SUITE = (
    {"s_r": 1.0, "s_c": 1.0, "s_rc": 0.0, "snr_c": 1.0},
    {"s_r": 1.0, "s_c": 1.0, "s_rc": 0.5, "snr_c": 2.0},
    {"s_r": 0.5, "s_c": 2.0, "s_rc": 0.9, "snr_c": 1.5},
    {"s_r": 2.0, "s_c": 1.0, "s_rc": 1.2, "snr_c": 3.0},
    {"s_r": 1.0, "s_c": 1.0, "s_rc": -0.2, "snr_c": 2.0},
    {"s_r": 1.0, "s_c": 2.0, "s_rc": -0.4, "snr_c": 1.3},
    {"s_r": 1.0, "s_c": 1.0, "s_rc": -0.5, "snr_c": 2.0},   # case-2 boundary
    {"s_r": 2.0, "s_c": 2.0, "s_rc": -1.0, "snr_c": 1.8},   # case-2 boundary
    {"s_r": 1.0, "s_c": 1.0, "s_rc": -0.75, "snr_c": 2.2},
    {"s_r": 0.5, "s_c": 1.5, "s_rc": -0.6, "snr_c": 1.1},
)


def resolve_hyperparams(config):
    """Materialize agent-aware hyperparameter defaults from a config."""
    base = default_hyperparams(config.agent) if config.agent != "bc" else Hyperparams()
    h = config.hyper
    return Hyperparams(
        hidden=tuple(h("hidden")),
        lr_policy=h("lr_policy") if h("lr_policy") is not None else base.lr_policy,
        lr_critic=h("lr_critic") if h("lr_critic") is not None else base.lr_critic,
        lr_disc=h("lr_disc"),
        alpha=h("alpha") if h("alpha") is not None else base.alpha,
        gamma=h("gamma"),
        polyak=h("polyak"),
        batch_size=h("batch_size"),
        disc_batch_size=h("disc_batch_size"),
        buffer_capacity=h("buffer_capacity"),
        update_every=h("update_every"),
        iterations_per_round=h("iterations_per_round"),
        critic_updates_per_policy=(
            h("critic_updates_per_policy")
            if h("critic_updates_per_policy") is not None
            else base.critic_updates_per_policy),
        grad_penalty=h("grad_penalty"),
        reward_scale=h("reward_scale"),
        normalize_obs=h("normalize_obs"),
    )


def _env_kwargs(config, env_kind):
    if env_kind in ("reach", "push"):
        return {"noise_std": config.hyper("env_noise_std")}
    return {}


def expert_dataset_arrays(config, env_kind):
    trajs = envs.generate_expert_dataset(
        env_kind, config.hyper("n_expert_trajectories"),
        seed=config.hyper("expert_seed"), **_env_kwargs(config, env_kind))
    states = np.concatenate([t.states() for t in trajs])
    actions = np.concatenate([t.actions() for t in trajs])
    return states, actions, trajs


def _out_path(config, out_dir):
    if out_dir is None:
        return None
    path = Path(out_dir) / config.config_hash()
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.json").write_text(config.to_json())
    return path


def _write_summary(path, records):
    if path is None:
        return
    payload = [{
        "seed": r.seed, "config_hash": r.config_hash,
        "wall_time_s": r.wall_time_s, "extra": r.extra,
        "final_mean_return": r.rows[-1].mean_return if r.rows else None,
    } for r in records]
    with open(path / "summary.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def run_gridworld_pi(config, out_path=None):
    width, height = config.hyper("grid_width"), config.hyper("grid_height")
    goal_x = config.hyper("goal_x")
    goal_y = config.hyper("goal_y")
    goal = (width - 1 if goal_x is None else goal_x,
            height - 1 if goal_y is None else goal_y)
    mdp = envs.make_gridworld(width, height, goal, gamma=config.hyper("grid_gamma"))
    tol = config.hyper("pi_tol")
    started = time.monotonic()
    result_c = tabular.policy_iteration(mdp, "c", tol=tol)
    result_q = tabular.policy_iteration(mdp, "q", tol=tol)
    residual = float(np.max(np.abs(
        result_q.table.values - (mdp.reward + result_c.table.values))))
    record = RunRecord(config_hash=config.config_hash(), seed=config.seeds[0],
                       wall_time_s=time.monotonic() - started)
    record.extra = {
        "improvement_steps_c": result_c.improvement_steps,
        "improvement_steps_q": result_q.improvement_steps,
        "policies_identical": result_c.policy == result_q.policy,
        "q_minus_r_plus_c_residual": residual,
    }
    if out_path is not None:
        payload = {
            "policy": result_c.policy.probs.tolist(),
            "C_table": result_c.table.values.tolist(),
            "Q_table": result_q.table.values.tolist(),
            "improvement_steps": result_c.improvement_steps,
            "residual_history": result_c.residual_history,
        }
        with open(out_path / "gridworld.json", "w") as f:
            json.dump(payload, f, sort_keys=True)
            f.write("\n")
    return [record]


def _run_bc(config, env_kind, out_path):
    states, actions, _ = expert_dataset_arrays(config, env_kind)
    hyper = resolve_hyperparams(config)
    records = []
    for seed in config.seeds:
        started = time.monotonic()
        env = envs.make_env(env_kind, **_env_kwargs(config, env_kind))
        policy = SquashedGaussianPolicy(
            env.state_dim, env.action_dim, env.action_bound, hidden=hyper.hidden,
            rng=np.random.default_rng(np.random.SeedSequence([seed, 1])))
        if hyper.normalize_obs:
            policy.set_normalizer(states.mean(axis=0), states.std(axis=0))
        mse = bc_fit(states, actions, policy, config.hyper("bc_epochs"),
                     config.hyper("bc_lr"), batch_size=hyper.batch_size,
                     rng=np.random.default_rng(np.random.SeedSequence([seed, 2])))
        mean, std = evaluate_policy(policy, env, config.eval_episodes,
                                    np.random.SeedSequence([seed, 3]))
        record = RunRecord(config_hash=config.config_hash(), seed=seed,
                           wall_time_s=time.monotonic() - started)
        record.rows.append(EvalRow(0, mean, std, 0.0, mse, 0.0))
        record.extra = {"bc_final_mse": mse}
        records.append(record)
        if out_path is not None:
            record.write_csv(out_path / f"run_seed{seed}.csv")
            policy.save(out_path / f"policy_seed{seed}.bin")
    return records


def _run_training(config, out_path):
    env_kind = TRAIN_TASKS[config.task]
    if config.agent == "bc":
        return _run_bc(config, env_kind, out_path)
    hyper = resolve_hyperparams(config)
    needs_experts = config.reward_kind != "env"
    states = actions = None
    if needs_experts:
        states, actions, _ = expert_dataset_arrays(config, env_kind)
    records = []
    for seed in config.seeds:
        settings = TrainSettings(
            agent=config.agent, reward_kind=config.reward_kind,
            env_kind=env_kind, seed=seed,
            max_env_steps=config.max_env_steps, eval_every=config.eval_every,
            eval_episodes=config.eval_episodes, expert_states=states,
            expert_actions=actions, hyper=hyper,
            env_kwargs=_env_kwargs(config, env_kind))
        result = train_ail(settings)
        result.record.config_hash = config.config_hash()
        records.append(result.record)
        if out_path is not None:
            result.record.write_csv(out_path / f"run_seed{seed}.csv")
            result.policy.save(out_path / f"policy_seed{seed}.bin")
            if result.discriminator is not None:
                result.discriminator.save(out_path / f"disc_seed{seed}.bin")
    return records


def _run_grad_accuracy(config, out_path):
    started = time.monotonic()
    rows, summary = analysis.gradient_accuracy_experiment(
        config.seeds, epoch_grid=config.hyper("epoch_grid"),
        n_train=config.hyper("n_train"), eval_grid=config.hyper("eval_grid"))
    record = RunRecord(config_hash=config.config_hash(), seed=config.seeds[0],
                       wall_time_s=time.monotonic() - started, extra=summary)
    if out_path is not None:
        analysis.write_experiment_csv(out_path / "grad_accuracy.csv", rows)
        analysis.write_experiment_summary(out_path / "grad_accuracy_summary.json",
                                          summary)
    return [record]


def _run_snr(config, out_path):
    n = config.hyper("n_snr_samples")
    started = time.monotonic()
    lines = ["config_id,s_r,s_c,s_rc,snr_c,expected_net_snr,measured_net_snr,rel_err"]
    worst = 0.0
    for i, case in enumerate(SNR_SUITE):
        inputs = analysis.SnrInputs(**case)
        expected = analysis.net_snr(inputs)
        measured = analysis.monte_carlo_snr(
            inputs, n, seed=np.random.SeedSequence([config.seeds[0], i]))
        rel = abs(measured - expected) / expected
        worst = max(worst, rel)
        lines.append(",".join(
            [str(i)] + [format(v, ".17g") for v in
                        (case["s_r"], case["s_c"], case["s_rc"], case["snr_c"],
                         expected, measured, rel)]))
    record = RunRecord(config_hash=config.config_hash(), seed=config.seeds[0],
                       wall_time_s=time.monotonic() - started,
                       extra={"worst_rel_err": worst, "n_samples": n})
    if out_path is not None:
        (out_path / "snr.csv").write_bytes(("\n".join(lines) + "\n").encode())
    return [record]


def _run_theorem2(config, out_path):
    n_cfg = config.hyper("n_theorem2_configs")
    rng = np.random.default_rng(np.random.SeedSequence([config.seeds[0], 0x7E2]))
    started = time.monotonic()
    lines = ["config_id,epsilon,big_d,x0,sup_error,grad_gap,expected_gap"]
    worst_sup, worst_gap = 0.0, 0.0
    for i in range(n_cfg):
        eps = float(rng.uniform(1e-3, 1.0))
        big_d = float(rng.uniform(0.5, 50.0))
        x0 = float(rng.uniform(-2.0, 2.0))
        approx = analysis.build_adversarial_approx(np.cos, eps, big_d, x0)
        sup = approx.sup_error_on_grid(x0 - 2.0, x0 + 2.0, 10_000)
        gap = approx.grad_error_at_anchor()
        worst_sup = max(worst_sup, sup - eps)
        worst_gap = max(worst_gap, abs(gap - 2.0 * big_d))
        lines.append(",".join(
            [str(i)] + [format(v, ".17g") for v in
                        (eps, big_d, x0, sup, gap, 2.0 * big_d)]))
    record = RunRecord(config_hash=config.config_hash(), seed=config.seeds[0],
                       wall_time_s=time.monotonic() - started,
                       extra={"worst_sup_excess": worst_sup,
                              "worst_gap_error": worst_gap})
    if out_path is not None:
        (out_path / "theorem2.csv").write_bytes(("\n".join(lines) + "\n").encode())
    return [record]


def run_experiment(config, out_dir=None):
    """Execute a validated config across its seeds; one RunRecord per seed
    for training tasks, a single record for analysis tasks."""
    if not isinstance(config, ExperimentConfig):
        raise ConfigError("run_experiment expects an ExperimentConfig")
    config.validate_compatibility()
    out_path = _out_path(config, out_dir)
    if config.task == "gridworld_pi":
        records = run_gridworld_pi(config, out_path)
    elif config.task in TRAIN_TASKS:
        records = _run_training(config, out_path)
    elif config.task == "grad_accuracy":
        records = _run_grad_accuracy(config, out_path)
    elif config.task == "snr":
        records = _run_snr(config, out_path)
    elif config.task == "theorem2":
        records = _run_theorem2(config, out_path)
    else:  # unreachable after validation
        raise ConfigError(f"field 'task': unknown value {config.task!r}")
    _write_summary(out_path, records)
    return records
