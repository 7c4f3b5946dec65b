import json

import numpy as np
import pytest
import yaml

from amodfleet.cli import main
from amodfleet.features import load_model
from amodfleet.simulate import run_simulation


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """Generated instance + configs shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    gen_cfg = root / "generate.yaml"
    gen_cfg.write_text(yaml.safe_dump({
        "synthetic": {
            "width_m": 2500.0, "height_m": 2500.0, "cell_m": 500.0,
            "duration_s": 1500.0, "requests_per_hour": 280.0,
            "base_fare": 5.0, "speed_kmh": 36.0,
        },
        "seed": 12,
    }))
    data = root / "data"
    assert main(["generate", "--config", str(gen_cfg), "--out", str(data)]) == 0

    cal_cfg = root / "calibrate.yaml"
    cal_cfg.write_text(yaml.safe_dump({
        "traveltime_file": "data/traveltime.npz",
        "requests_files": ["data/requests.csv"],
        "day_length_s": 1500.0,
        "grid": {"cell_m": 500.0},
        "bin_width_s": 300.0,
    }))
    assert main(["calibrate", "--config", str(cal_cfg), "--out", str(data)]) == 0

    scenario = {
        "requests_file": "data/requests.csv",
        "traveltime_file": "data/traveltime.npz",
        "distribution_file": "data/distribution.npz",
        "fleet_size": 10,
        "horizon_epochs": 25,
        "period_s": 60.0,
        "objective": "profit",
        "policy": {"kind": "sampling", "horizon_s": 300.0},
        "grid": {"cell_m": 500.0},
        "seed": 4,
    }
    sim_cfg = root / "scenario.yaml"
    sim_cfg.write_text(yaml.safe_dump(scenario))
    return {"root": root, "scenario": scenario, "sim_cfg": sim_cfg}


def test_generate_outputs(cli_workspace):
    data = cli_workspace["root"] / "data"
    assert (data / "requests.csv").exists()
    assert (data / "traveltime.npz").exists()
    assert (data / "distribution.npz").exists()
    assert json.loads((data / "manifest.json").read_text())["command"] == "calibrate"


def test_simulate_and_determinism(cli_workspace):
    root = cli_workspace["root"]
    out1, out2 = root / "run1", root / "run2"
    assert main(["simulate", "--config", str(cli_workspace["sim_cfg"]),
                 "--out", str(out1)]) == 0
    assert main(["simulate", "--config", str(cli_workspace["sim_cfg"]),
                 "--out", str(out2)]) == 0
    for name in ("metrics.csv", "snapshots.csv", "manifest.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name
    header = (out1 / "metrics.csv").read_text().splitlines()[0]
    assert "total_reward" in header and "km_per_vehicle" in header
    assert "decide" not in header  # wall times live in timings.csv
    assert (out1 / "timings.csv").exists()


def test_policy_override(cli_workspace):
    root = cli_workspace["root"]
    out = root / "greedy_run"
    assert main(["simulate", "--config", str(cli_workspace["sim_cfg"]),
                 "--out", str(out), "--policy", "greedy"]) == 0
    row = (out / "metrics.csv").read_text().splitlines()[1]
    assert "greedy" in row


def test_full_info(cli_workspace, capsys):
    root = cli_workspace["root"]
    out = root / "fi"
    assert main(["full-info", "--config", str(cli_workspace["sim_cfg"]),
                 "--out", str(out)]) == 0
    assert "full-information bound" in capsys.readouterr().out
    assert (out / "fullinfo.csv").exists()


def test_evaluate_grid(cli_workspace):
    root = cli_workspace["root"]
    cfg = dict(cli_workspace["scenario"])
    cfg["evaluate"] = {
        "fleets": [8, 12],
        "policies": [{"kind": "greedy"},
                     {"kind": "sampling", "horizon_s": 300.0},
                     {"kind": "full_information"}],
    }
    eval_cfg = root / "evaluate.yaml"
    eval_cfg.write_text(yaml.safe_dump(cfg))
    out = root / "eval"
    assert main(["evaluate", "--config", str(eval_cfg), "--out", str(out)]) == 0
    lines = (out / "comparison.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 3  # two fleets x three policies
    assert "total_reward_vs_greedy" in lines[0]


def test_train_then_simulate_round_trip(cli_workspace):
    root = cli_workspace["root"]
    train_cfg = root / "train.yaml"
    train_cfg.write_text(yaml.safe_dump({
        "traveltime_file": "data/traveltime.npz",
        "requests_files": ["data/requests.csv"],
        "day_length_s": 1500.0,
        "fleet_size": 10,
        "warmup_s": 240.0,
        "cooldown_s": 240.0,
        "extraction_period_s": 300.0,
        "grid": {"cell_m": 500.0},
        "variant": {"kind": "sample_based", "horizon_s": 300.0},
        "m_samples": 4,
        "sigma": 0.5,
        "max_iter": 15,
        "seed": 4,
    }))
    out = root / "trained"
    assert main(["train", "--config", str(train_cfg), "--out", str(out)]) == 0
    model_file = out / "model.json"
    assert model_file.exists()
    assert (out / "trace.csv").exists()

    # simulating through the CLI with the saved model matches an in-process run
    cfg = dict(cli_workspace["scenario"])
    cfg["policy"] = {"kind": "sample_based", "horizon_s": 300.0,
                     "model_file": str(model_file)}
    cfg["distribution_file"] = str(out / "distribution.npz")
    sb_cfg = root / "sb_scenario.yaml"
    sb_cfg.write_text(yaml.safe_dump(cfg))
    sim_out = root / "sb_run"
    assert main(["simulate", "--config", str(sb_cfg), "--out", str(sim_out)]) == 0

    from amodfleet.dataio import build_scenario, load_scenario_config
    scenario, tt, dist, grid = build_scenario(load_scenario_config(sb_cfg), root)
    metrics = run_simulation(scenario, tt, dist, grid)
    row = (sim_out / "metrics.csv").read_text().splitlines()[1].split(",")
    header = (sim_out / "metrics.csv").read_text().splitlines()[0].split(",")
    assert float(row[header.index("total_reward")]) == metrics.total_reward
    assert int(row[header.index("served")]) == metrics.served


def test_error_exit_code(tmp_path):
    cfg = tmp_path / "broken.yaml"
    cfg.write_text(yaml.safe_dump({"requests_file": "missing.csv"}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
