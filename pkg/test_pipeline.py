"""
端到端测试：有限链精确性、轨迹文件格式与 specdyn 命令行
"""
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from embedding import embed, fit, pairwise_distances, density_matrix
from errors import InvalidInput
from estimator import reshape
from features import OrthoFeatureMap
from main import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, main
from oracle import (chain_diffusion_distances, chain_estimate, chain_feature_maps,
                    chain_projection, random_lowrank_chain)
from schemas import Embedder, Trajectory
import storage


def _quick_config(**overrides):
    config = {
        "simulation": {
            "potential": {"name": "double_well_1d"},
            "inner_dt": 0.001,
            "stride": 10,
            "n_samples": 300,
            "burn_in": 1000,
            "seed": 0,
            "format": "csv",
        },
        "features": {"bandwidth": 0.3, "n_features": 100, "seed": 1,
                     "left_quadrature_seed": 2, "right_quadrature_seed": 3},
        "estimation": {"rank": 2},
        "clustering": {"m": [1, 2], "n_restarts": 3, "seed": 0},
        "paths": {"trajectory": "trajectory.csv", "model_dir": "model"},
    }
    for section, values in overrides.items():
        config[section].update(values)
    return config


def _write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def _run(command, config_path, out_dir):
    return main([command, "--config", config_path, "--out-dir", str(out_dir)])


def _log_lines(out_dir):
    with open(out_dir / "whitebox.log", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


@pytest.mark.parametrize("seed", range(50))
def test_finite_chain_pipeline_is_exact(seed):
    n_states = 2 + seed % 9
    rank = 1 + seed % n_states
    chain = random_lowrank_chain(n_states, rank, seed)
    left, right = chain_feature_maps(chain)
    est = chain_estimate(chain, left, right)
    assert_allclose(reshape(est, rank).matrix, chain_projection(chain), atol=1e-12)
    e = fit(est, left, right, rank)
    states = np.arange(n_states, dtype=float).reshape(-1, 1)
    assert_allclose(pairwise_distances(e, left, states), chain_diffusion_distances(chain), atol=1e-9)
    assert_allclose(density_matrix(e, left, right, states, states), chain.transition, atol=1e-10)


def test_trajectory_binary_and_csv_round_trip(tmp_path):
    states = np.random.default_rng(0).standard_normal((17, 2))
    traj = Trajectory(states=states, sample_interval=0.5, inner_dt=0.005)
    for name, fmt in [("t.bin", "binary"), ("t.csv", "csv")]:
        path = str(tmp_path / name)
        storage.write_trajectory(traj, path, fmt)
        assert storage.trajectory_format(path) == fmt
        loaded = storage.read_trajectory(path, 0.5, 0.005)
        assert np.array_equal(loaded.states, states)


def test_trajectory_csv_header_and_times(tmp_path):
    traj = Trajectory(states=[[1.0], [2.0], [3.0]], sample_interval=0.5, inner_dt=0.005)
    path = tmp_path / "t.csv"
    storage.write_trajectory(traj, str(path), "csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,x1"
    assert [float(line.split(",")[0]) for line in lines[1:]] == [0.5, 1.0, 1.5]


def test_trajectory_binary_rejects_corruption(tmp_path):
    traj = Trajectory(states=np.ones((4, 1)), sample_interval=1.0, inner_dt=1.0)
    path = tmp_path / "t.bin"
    storage.write_trajectory(traj, str(path), "binary")
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(InvalidInput):
        storage.read_trajectory_binary(str(path))
    path.write_bytes(b"BADMAGIC" + data[8:])
    with pytest.raises(InvalidInput):
        storage.read_trajectory_binary(str(path))


def test_cli_simulate_fit_cluster(tmp_path):
    out = tmp_path / "out"
    config_path = _write_config(tmp_path, _quick_config())
    assert _run("simulate", config_path, out) == EXIT_OK
    assert _run("fit", config_path, out) == EXIT_OK
    assert _run("cluster", config_path, out) == EXIT_OK

    for name in ["trajectory.csv", "embedding.csv", "resolved_config.json", "labels_m1.csv",
                 "labels_m2.csv", "clusters_m1.json", "clusters_m2.json"]:
        assert (out / name).exists(), name
    for name in ["left_features.json", "right_features.json", "projection.json", "reshaped.json",
                 "embedder.json"]:
        assert (out / "model" / name).exists(), name

    # 从磁盘重建模型后的嵌入与 fit 时写出的嵌入一致
    left = OrthoFeatureMap.from_dict(storage.read_json(str(out / "model" / "left_features.json")))
    embedder = Embedder.from_dict(storage.read_json(str(out / "model" / "embedder.json")))
    traj = storage.read_trajectory(str(out / "trajectory.csv"), 0.01, 0.001)
    written = np.loadtxt(out / "embedding.csv", delimiter=",", skiprows=1, ndmin=2)
    assert_allclose(embed(embedder, left, traj.states), written[:, 1:], rtol=1e-15, atol=1e-15)

    labels = np.loadtxt(out / "labels_m2.csv", delimiter=",", skiprows=1, ndmin=2)[:, -1]
    assert labels.shape == (300,)
    assert set(np.unique(labels)) <= {0.0, 1.0}
    single = storage.read_json(str(out / "clusters_m1.json"))
    assert single["metastability"]["score"] == 1.0

    for line in _log_lines(out):
        for key in ["run_id", "timestamp", "node", "action", "decision", "reason_code",
                    "internal_variables", "reasoning"]:
            assert key in line


def test_cli_simulate_is_deterministic(tmp_path):
    data = _quick_config(simulation={"format": "binary"}, paths={"trajectory": "trajectory.bin"})
    config_path = _write_config(tmp_path, data)
    assert _run("simulate", config_path, tmp_path / "a") == EXIT_OK
    assert _run("simulate", config_path, tmp_path / "b") == EXIT_OK
    first = (tmp_path / "a" / "trajectory.bin").read_bytes()
    assert first == (tmp_path / "b" / "trajectory.bin").read_bytes()
    assert first[:8] == storage.TRAJ_MAGIC


def test_cli_simulate_replicas(tmp_path):
    data = _quick_config(simulation={"n_replicas": 2, "format": "binary"},
                         paths={"trajectory": "trajectory.bin"})
    out = tmp_path / "out"
    assert _run("simulate", _write_config(tmp_path, data), out) == EXIT_OK
    primary = storage.read_trajectory(str(out / "trajectory.bin"), 0.01, 0.001)
    replica = storage.read_trajectory(str(out / "trajectory_r1.bin"), 0.01, 0.001)
    assert primary.length == replica.length == 300
    assert not np.array_equal(primary.states, replica.states)


def test_cli_rejects_invalid_rank(tmp_path):
    out = tmp_path / "out"
    config_path = _write_config(tmp_path, _quick_config(estimation={"rank": 0}))
    assert _run("simulate", config_path, out) == EXIT_CONFIG
    assert not out.exists()


def test_cli_invalid_config_keeps_earlier_outputs(tmp_path):
    out = tmp_path / "out"
    assert _run("simulate", _write_config(tmp_path, _quick_config()), out) == EXIT_OK
    earlier = _log_lines(out)
    trajectory = (out / "trajectory.csv").read_bytes()

    bad_path = _write_config(tmp_path, _quick_config(estimation={"rank": 0}), name="bad.json")
    assert _run("simulate", bad_path, out) == EXIT_CONFIG
    lines = _log_lines(out)
    assert lines[:len(earlier)] == earlier
    assert lines[-1]["decision"] == "REJECT"
    assert lines[-1]["reason_code"] == "CONFIGERROR"
    assert (out / "trajectory.csv").read_bytes() == trajectory


def test_cli_missing_config_is_io_error(tmp_path):
    assert _run("simulate", str(tmp_path / "missing.json"), tmp_path / "out") == EXIT_IO


def test_cli_missing_trajectory_is_io_error(tmp_path):
    config_path = _write_config(tmp_path, _quick_config())
    assert _run("fit", config_path, tmp_path / "out") == EXIT_IO


def test_cli_rank_above_basis_is_config_error(tmp_path):
    out = tmp_path / "out"
    config_path = _write_config(tmp_path, _quick_config(features={"n_features": 3},
                                                        estimation={"rank": 10}))
    assert _run("simulate", config_path, out) == EXIT_OK
    assert _run("fit", config_path, out) == EXIT_CONFIG
    assert any(line["reason_code"] == "RANK_EXCEEDS_BASIS" for line in _log_lines(out))


def test_cli_too_many_clusters_is_config_error(tmp_path):
    out = tmp_path / "out"
    config_path = _write_config(tmp_path, _quick_config(clustering={"m": [1000]}))
    assert _run("simulate", config_path, out) == EXIT_OK
    assert _run("fit", config_path, out) == EXIT_OK
    assert _run("cluster", config_path, out) == EXIT_CONFIG


def test_cli_numerical_blowup(tmp_path):
    data = _quick_config(simulation={"potential": {"name": "quadratic", "stiffness": 1e6},
                                     "inner_dt": 1.0, "burn_in": 0})
    out = tmp_path / "out"
    assert _run("simulate", _write_config(tmp_path, data), out) == EXIT_NUMERICAL
    assert any(line["reason_code"] == "NUMERICALBLOWUP" for line in _log_lines(out))


def test_cli_small_benchmark(tmp_path):
    data = _quick_config(simulation={"inner_dt": 0.01, "burn_in": 100},
                         features={"n_features": 60})
    data["benchmark"] = {"n_values": [50, 100], "seeds": [0, 1, 2],
                         "reference": {"method": "quadrature", "grid_points": 101,
                                       "lower": -2.5, "upper": 2.5, "seed": 9999}}
    out = tmp_path / "out"
    assert _run("benchmark", _write_config(tmp_path, data), out) == EXIT_OK

    lines = (out / "benchmark.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "n,error_plain,error_reshaped,seed"
    table = np.loadtxt(out / "benchmark.csv", delimiter=",", skiprows=1, ndmin=2)
    assert table.shape == (6, 4)
    assert sorted(set(table[:, 0])) == [50.0, 100.0]
    assert sorted(set(table[:, 3])) == [0.0, 1.0, 2.0]
    assert np.all(table[:, 1:3] >= 0)
    summary = storage.read_json(str(out / "benchmark_summary.json"))
    assert summary["slope"] is not None
    assert summary["reference"]["refinement_error"] is not None


def test_cli_tau_overrides_stride(tmp_path):
    out = tmp_path / "out"
    config_path = _write_config(tmp_path, _quick_config())
    assert main(["simulate", "--config", config_path, "--out-dir", str(out), "--tau", "0.05"]) == EXIT_OK
    resolved = storage.read_json(str(out / "resolved_config.json"))
    assert resolved["simulation"]["stride"] == 50
    times = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1, ndmin=2)[:, 0]
    assert_allclose(times[:3], [0.05, 0.1, 0.15])


def test_cli_tau_off_grid_is_config_error(tmp_path):
    out = tmp_path / "out"
    config_path = _write_config(tmp_path, _quick_config())
    assert main(["simulate", "--config", config_path, "--out-dir", str(out), "--tau", "0.0125"]) == EXIT_CONFIG
    assert not out.exists()


def test_cli_cluster_writes_centroid_distances(tmp_path):
    out = tmp_path / "out"
    config_path = _write_config(tmp_path, _quick_config())
    for command in ["simulate", "fit", "cluster"]:
        assert _run(command, config_path, out) == EXIT_OK
    lines = (out / "centroid_distances_m2.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "x1,dist1,dist2"
    table = np.loadtxt(out / "centroid_distances_m2.csv", delimiter=",", skiprows=1, ndmin=2)
    assert table.shape == (101, 3)
    assert np.all(np.diff(table[:, 0]) > 0)
    assert np.all(table[:, 1:] >= 0)
    single = np.loadtxt(out / "centroid_distances_m1.csv", delimiter=",", skiprows=1, ndmin=2)
    assert single.shape == (101, 2)


def test_cli_fit_and_cluster_are_byte_identical(tmp_path):
    config_path = _write_config(tmp_path, _quick_config())
    for name in ["a", "b"]:
        for command in ["simulate", "fit", "cluster"]:
            assert _run(command, config_path, tmp_path / name) == EXIT_OK
    outputs = ["trajectory.csv", "embedding.csv", "resolved_config.json",
               "labels_m1.csv", "labels_m2.csv", "clusters_m1.json", "clusters_m2.json",
               "centroid_distances_m1.csv", "centroid_distances_m2.csv",
               "model/left_features.json", "model/right_features.json", "model/projection.json",
               "model/reshaped.json", "model/embedder.json"]
    for name in outputs:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_cli_benchmark_is_byte_identical(tmp_path):
    data = _quick_config(simulation={"inner_dt": 0.01, "burn_in": 100},
                         features={"n_features": 60})
    data["benchmark"] = {"n_values": [50, 100], "seeds": [0, 1],
                         "reference": {"method": "quadrature", "grid_points": 101,
                                       "lower": -2.5, "upper": 2.5, "seed": 9999}}
    config_path = _write_config(tmp_path, data)
    assert _run("benchmark", config_path, tmp_path / "a") == EXIT_OK
    assert _run("benchmark", config_path, tmp_path / "b") == EXIT_OK
    for name in ["benchmark.csv", "benchmark_summary.json", "resolved_config.json"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
