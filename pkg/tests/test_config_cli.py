import json

import numpy as np
import pytest

from arcil.cli import main
from arcil.config import (ConfigError, ExperimentConfig, parse_config,
                          parse_config_dict)
from arcil.harness import run_experiment


class TestParseConfig:
    def test_minimal_config_fills_defaults(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"task": "gridworld_pi"}))
        config = parse_config(p)
        assert config.task == "gridworld_pi"
        assert config.agent == "sarc"
        assert config.reward_kind == "fmax_rkl"
        assert config.seeds == [0, 1, 2, 3, 4]
        assert config.eval_episodes == 20
        assert config.max_env_steps == 25_000

    def test_misspelled_hyper_key_named(self):
        with pytest.raises(ConfigError, match="gamm"):
            parse_config_dict({"task": "car1d", "hyperparameters": {"gamm": 0.9}})

    def test_unknown_top_level_key_named(self):
        with pytest.raises(ConfigError, match="stepz"):
            parse_config_dict({"task": "car1d", "stepz": 5})

    def test_missing_task(self):
        with pytest.raises(ConfigError, match="task"):
            parse_config_dict({"agent": "sac"})

    def test_type_mismatch_named(self):
        with pytest.raises(ConfigError, match="seeds"):
            parse_config_dict({"task": "car1d", "seeds": "zero"})

    def test_round_trip(self, tmp_path):
        config = parse_config_dict({
            "task": "planar_reach", "agent": "sac", "reward_kind": "fmax_rkl",
            "seeds": [3, 4], "max_env_steps": 500,
            "hyperparameters": {"gamma": 0.95}})
        p = tmp_path / "round.json"
        p.write_text(config.to_json())
        again = parse_config(p)
        assert again == config

    def test_invalid_json_is_config_error(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{nope")
        with pytest.raises(ConfigError):
            parse_config(p)


class TestConfigHash:
    def test_stable_under_field_reordering(self):
        a = parse_config_dict({"task": "car1d", "agent": "sac",
                               "reward_kind": "env", "seeds": [1]})
        b = parse_config_dict({"seeds": [1], "reward_kind": "env",
                               "agent": "sac", "task": "car1d"})
        assert a.config_hash() == b.config_hash()

    def test_default_materialization_equivalence(self):
        a = parse_config_dict({"task": "car1d", "eval_episodes": 20})
        b = parse_config_dict({"task": "car1d"})
        assert a.config_hash() == b.config_hash()

    def test_changes_with_semantic_field(self):
        a = parse_config_dict({"task": "car1d"})
        b = parse_config_dict({"task": "car1d", "seeds": [7]})
        c = parse_config_dict({"task": "car1d",
                               "hyperparameters": {"gamma": 0.5}})
        assert a.config_hash() != b.config_hash()
        assert a.config_hash() != c.config_hash()


class TestCompatibility:
    def test_bc_with_adversarial_reward_rejected(self):
        config = parse_config_dict({"task": "planar_reach", "agent": "bc",
                                    "reward_kind": "gail"})
        with pytest.raises(ConfigError):
            run_experiment(config)

    def test_sarc_with_env_reward_rejected(self):
        config = parse_config_dict({"task": "car1d", "agent": "sarc",
                                    "reward_kind": "env"})
        with pytest.raises(ConfigError):
            run_experiment(config)


def small_train_config(**over):
    raw = {"task": "planar_reach", "agent": "sarc", "reward_kind": "fmax_rkl",
           "seeds": [0], "max_env_steps": 60, "eval_every": 30,
           "eval_episodes": 2,
           "hyperparameters": {"hidden": [8, 8], "batch_size": 16,
                               "disc_batch_size": 8, "iterations_per_round": 1,
                               "critic_updates_per_policy": 1,
                               "n_expert_trajectories": 2, "grad_penalty": 0.0}}
    raw.update(over)
    return parse_config_dict(raw)


class TestRunExperiment:
    def test_gridworld_single_record(self, tmp_path):
        config = parse_config_dict({"task": "gridworld_pi"})
        records = run_experiment(config, out_dir=tmp_path)
        assert len(records) == 1
        extra = records[0].extra
        assert extra["policies_identical"]
        assert extra["q_minus_r_plus_c_residual"] < 1e-9
        assert extra["improvement_steps_c"] == extra["improvement_steps_q"]
        payload = json.loads(
            (tmp_path / config.config_hash() / "gridworld.json").read_text())
        assert set(payload) == {"policy", "C_table", "Q_table",
                                "improvement_steps", "residual_history"}
        assert np.array(payload["C_table"]).shape == (25, 4)

    def test_training_csv_bytes_reproducible(self, tmp_path):
        config = small_train_config()
        run_experiment(config, out_dir=tmp_path / "a")
        run_experiment(config, out_dir=tmp_path / "b")
        h = config.config_hash()
        csv_a = (tmp_path / "a" / h / "run_seed0.csv").read_bytes()
        csv_b = (tmp_path / "b" / h / "run_seed0.csv").read_bytes()
        assert csv_a == csv_b
        assert csv_a.startswith(b"eval_step,mean_return,std_return,")

    def test_bc_task(self, tmp_path):
        config = parse_config_dict({
            "task": "planar_reach", "agent": "bc", "reward_kind": "env",
            "seeds": [0], "eval_episodes": 2,
            "hyperparameters": {"bc_epochs": 5, "n_expert_trajectories": 2,
                                "hidden": [8, 8]}})
        records = run_experiment(config, out_dir=tmp_path)
        assert len(records) == 1
        assert "bc_final_mse" in records[0].extra

    def test_theorem2_task(self, tmp_path):
        config = parse_config_dict({"task": "theorem2", "seeds": [0]})
        records = run_experiment(config, out_dir=tmp_path)
        assert records[0].extra["worst_sup_excess"] <= 0.0
        assert records[0].extra["worst_gap_error"] < 1e-9

    def test_snr_task_small(self):
        config = parse_config_dict({
            "task": "snr", "seeds": [0],
            "hyperparameters": {"n_snr_samples": 20_000}})
        records = run_experiment(config)
        assert records[0].extra["worst_rel_err"] < 0.25


class TestCli:
    def test_tabular_subcommand(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"task": "gridworld_pi"}))
        code = main(["tabular", "--config", str(p), "--out", str(tmp_path / "out")])
        assert code == 0
        out = capsys.readouterr().out
        assert "improvement_steps" in out

    def test_config_error_exit_code(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"task": "gridworld_pi",
                                 "hyperparameters": {"gamm": 0.9}}))
        assert main(["tabular", "--config", str(p)]) == 2
        assert "gamm" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["tabular", "--config", str(tmp_path / "nope.json")]) == 2

    def test_task_command_mismatch(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"task": "snr"}))
        assert main(["tabular", "--config", str(p)]) == 2

    def test_seed_override_changes_output(self, tmp_path):
        p = tmp_path / "c.json"
        cfg = {"task": "planar_reach", "agent": "sarc", "seeds": [0],
               "max_env_steps": 40, "eval_every": 20, "eval_episodes": 1,
               "hyperparameters": {"hidden": [8, 8], "batch_size": 8,
                                   "disc_batch_size": 4,
                                   "iterations_per_round": 1,
                                   "critic_updates_per_policy": 1,
                                   "n_expert_trajectories": 2,
                                   "grad_penalty": 0.0}}
        p.write_text(json.dumps(cfg))
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["train", "--config", str(p), "--out", str(out1)]) == 0
        assert main(["train", "--config", str(p), "--out", str(out2),
                     "--seed", "9"]) == 0
        base = parse_config(p)
        override = parse_config(p)
        override.seeds = [9]
        assert base.config_hash() != override.config_hash()
        a = (out1 / base.config_hash() / "run_seed0.csv").read_bytes()
        b = (out2 / override.config_hash() / "run_seed9.csv").read_bytes()
        assert a != b

    def test_expert_gen_and_eval_round_trip(self, tmp_path, capsys):
        csv_path = tmp_path / "experts.csv"
        assert main(["expert-gen", "--env", "reach", "--n", "3",
                     "--out", str(csv_path)]) == 0
        assert csv_path.exists()
        # train briefly, then eval the checkpoint
        p = tmp_path / "c.json"
        p.write_text(json.dumps({
            "task": "planar_reach", "agent": "sarc", "seeds": [0],
            "max_env_steps": 40, "eval_every": 20, "eval_episodes": 1,
            "hyperparameters": {"hidden": [8, 8], "batch_size": 8,
                                "disc_batch_size": 4,
                                "iterations_per_round": 1,
                                "critic_updates_per_policy": 1,
                                "n_expert_trajectories": 2,
                                "grad_penalty": 0.0}}))
        out = tmp_path / "out"
        assert main(["train", "--config", str(p), "--out", str(out)]) == 0
        config = parse_config(p)
        ckpt = out / config.config_hash() / "policy_seed0.bin"
        assert main(["eval", "--checkpoint", str(ckpt), "--env", "reach",
                     "--episodes", "2", "--seed", "1"]) == 0
        assert "mean_return" in capsys.readouterr().out
