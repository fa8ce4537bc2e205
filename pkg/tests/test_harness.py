import json
import os

import numpy as np
import pytest

from pinnopt import harness, network, pde
from pinnopt.harness import (
    CSV_COLUMNS,
    RunConfig,
    eval_l2,
    load_checkpoint,
    main,
    run_training,
    save_checkpoint,
)
from pinnopt.network import Architecture, Parameters, init_params


def tiny_config(tmp_path, **overrides):
    base = dict(
        problem="poisson2d_sin",
        widths=[2, 8, 1],
        optimizer="adam",
        lr=1e-3,
        n_interior=20,
        n_boundary=8,
        max_steps=5,
        eval_every=2,
        n_eval_points=50,
        seed=3,
        output_dir=str(tmp_path / "run"),
    )
    base.update(overrides)
    return RunConfig.from_dict(base)


def _params():
    return Parameters([np.array([[0.4, -0.2]])], [np.array([0.3])])


def _rigged_problem():
    """poisson2d_sin with the true solution replaced by a known linear net."""
    problem = pde.make_problem("poisson2d_sin")
    return pde.PdeProblem(
        name=problem.name,
        dim=problem.dim,
        coeffs=problem.coeffs,
        lower=problem.lower,
        upper=problem.upper,
        boundary_kind=problem.boundary_kind,
        residual=problem.residual,
        residual_grads=problem.residual_grads,
        boundary_target=problem.boundary_target,
        true_solution=lambda x: network.forward_batch(_params(), x)[0],
    )


class TestEvalL2:
    def test_exact_model_gives_zero(self):
        assert eval_l2(_params(), _rigged_problem(), 100, seed=0) == 0.0

    def test_zero_model_gives_one(self):
        problem = pde.make_problem("poisson2d_sin")
        p = Parameters([np.zeros((1, 2))], [np.zeros(1)])
        assert eval_l2(p, problem, 200, seed=1) == 1.0

    def test_scaled_model(self):
        # model = 1.1 * u* exactly, via scaling every parameter of the
        # linear net that defines the rigged truth
        scaled = Parameters([1.1 * _params().weights[0]], [1.1 * _params().biases[0]])
        assert eval_l2(scaled, _rigged_problem(), 100, seed=2) == pytest.approx(0.1, abs=1e-12)


class TestRunConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            RunConfig.from_dict({"problem": "poisson2d_sin", "widths": [2, 1], "optimizer": "adam", "typo": 1})

    def test_resample_defaults_per_optimizer(self):
        a = RunConfig(problem="poisson2d_sin", widths=[2, 1], optimizer="adam")
        k = RunConfig(problem="poisson2d_sin", widths=[2, 1], optimizer="kfac")
        assert a.resample_every == 1
        assert k.resample_every == 100

    def test_json_round_trip(self, tmp_path):
        cfg = RunConfig(problem="heat", problem_params={"spatial_dim": 1}, widths=[2, 8, 1], optimizer="kfac")
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        again = RunConfig.from_json(str(path))
        assert again.to_dict() == cfg.to_dict()


class TestRunTraining:
    def test_zero_steps_logs_initial_row_only(self, tmp_path):
        log = run_training(tiny_config(tmp_path, max_steps=0))
        assert len(log.rows) == 1
        assert log.rows[0][0] == 0
        assert not log.diverged

    def test_csv_schema_and_rows(self, tmp_path):
        cfg = tiny_config(tmp_path, max_steps=4, eval_every=2)
        log = run_training(cfg)
        lines = (tmp_path / "run" / "log.csv").read_text().splitlines()
        assert lines[0].startswith("# ")
        assert lines[1] == ",".join(CSV_COLUMNS)
        data = [l for l in lines[2:] if not l.startswith("#")]
        assert len(data) == len(log.rows) == 3  # steps 0, 2, 4
        for line in data:
            assert len(line.split(",")) == len(CSV_COLUMNS)

    def test_deterministic_excluding_wall_time(self, tmp_path):
        cfg_a = tiny_config(tmp_path, output_dir=str(tmp_path / "a"))
        cfg_b = tiny_config(tmp_path, output_dir=str(tmp_path / "b"))
        run_training(cfg_a)
        run_training(cfg_b)

        def strip(path):
            rows = []
            for line in (path / "log.csv").read_text().splitlines():
                if line.startswith("#") or line.startswith("step"):
                    rows.append(line)
                    continue
                cells = line.split(",")
                del cells[1]  # wall_time_s
                rows.append(",".join(cells))
            return rows

        a, b = strip(tmp_path / "a"), strip(tmp_path / "b")
        # config payloads differ in output_dir only; drop the meta line
        assert a[1:] == b[1:]

    def test_checkpoint_round_trip(self, tmp_path):
        cfg = tiny_config(tmp_path, max_steps=3, eval_every=1)
        log = run_training(cfg)
        params, stored = load_checkpoint(str(tmp_path / "run" / "checkpoint.json"))
        problem = pde.make_problem(stored["problem"], **stored["problem_params"])
        err = eval_l2(
            params,
            problem,
            stored["n_eval_points"],
            harness._stream_seed(stored["seed"], harness.STREAM_EVAL),
        )
        assert err == pytest.approx(log.final[5], abs=1e-12)

    def test_training_and_eval_streams_disjoint(self, tmp_path):
        cfg = tiny_config(tmp_path, max_steps=0)
        problem = pde.make_problem(cfg.problem)
        batch = pde.sample_batch(
            problem,
            cfg.n_interior,
            cfg.n_boundary,
            harness._stream_seed(cfg.seed, harness.STREAM_BATCH, 0),
        )
        rng = np.random.default_rng(harness._stream_seed(cfg.seed, harness.STREAM_EVAL))
        eval_pts = rng.uniform(problem.lower, problem.upper, size=(cfg.n_eval_points, problem.dim))
        joint = np.concatenate([batch.interior, eval_pts])
        assert np.unique(joint, axis=0).shape[0] == joint.shape[0]

    def test_wall_time_budget_stops_early(self, tmp_path):
        cfg = tiny_config(tmp_path, max_steps=100_000, max_wall_seconds=0.3, eval_every=100_000)
        log = run_training(cfg)
        assert log.rows[-1][0] < 100_000

    def test_output_dir_env_override(self, tmp_path, monkeypatch):
        override = tmp_path / "elsewhere"
        monkeypatch.setenv(harness.OUTPUT_DIR_ENV, str(override))
        run_training(tiny_config(tmp_path, max_steps=0))
        assert (override / "log.csv").exists()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_marks_and_stops(self, tmp_path):
        # an absurd sgd learning rate blows the parameters up quickly
        cfg = tiny_config(tmp_path, optimizer="sgd", lr=1e12, max_steps=50, eval_every=50)
        log = run_training(cfg)
        assert log.diverged
        text = (tmp_path / "run" / "log.csv").read_text()
        assert "diverged" in text


class TestCli:
    def test_train_eval_round_trip(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path, max_steps=2, eval_every=1)
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg.to_dict()))
        assert main(["train", "--config", str(cfg_path)]) == 0
        out_train = capsys.readouterr().out
        assert "finished" in out_train
        assert main(["eval", "--checkpoint", str(tmp_path / "run" / "checkpoint.json")]) == 0
        printed = float(capsys.readouterr().out.strip())
        lines = (tmp_path / "run" / "log.csv").read_text().splitlines()
        final_err = float(lines[-1].split(",")[5])
        assert printed == pytest.approx(final_err, abs=1e-12)

    def test_missing_config_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["train"])
        assert exc.value.code == 2

    def test_bad_config_path_returns_2(self, capsys):
        assert main(["train", "--config", "/nonexistent/cfg.json"]) == 2

    def test_check_fast_passes(self, capsys):
        assert main(["check", "--fast"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
