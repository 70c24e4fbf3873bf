import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from catrnet.cli import main
from catrnet.simulation import DgpConfig, draw_dgp, true_catr


def write_draw_csv(path, draw):
    ds = draw.dataset
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "t", "x1", "z1"])
        for i in range(ds.n):
            writer.writerow(
                [
                    format(float(v), ".17g")
                    for v in (ds.y[i], ds.t[i], ds.x[i, 1], ds.z[i, 0])
                ]
            )


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("simdata")
    draw = draw_dgp(DgpConfig(n=2000, k=2, rho=1.0, seed=31))
    path = tmp / "draw.csv"
    write_draw_csv(path, draw)
    return str(path), draw


def estimate_config(data_path, out_dir, **extra):
    cfg = {
        "data": {
            "path": data_path,
            "schema": {"y": "y", "t": "t", "x": ["x1"], "z": ["z1"]},
        },
        "network": {"kind": "ring", "k": 2},
        "group_size": 2,
        "tau": "5/n",
        "eval": {
            "t": {"quantiles": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]},
            "s": {"quantiles": [0.2]},
            "x": {"median": True},
        },
        "out": str(out_dir),
    }
    cfg.update(extra)
    return cfg


def run_cli(tmp_path, command, cfg, *flags):
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    return main([command, "--config", str(cfg_path), *flags])


def read_report(path):
    with open(path) as fh:
        provenance = fh.readline()
        assert provenance.startswith("# catrnet")
        return list(csv.DictReader(fh))


class TestEstimate:
    def test_estimates_correlate_with_truth(self, sim_csv, tmp_path):
        data_path, draw = sim_csv
        cfg = estimate_config(data_path, tmp_path / "out")
        assert run_cli(tmp_path, "estimate", cfg) == 0
        rows = read_report(tmp_path / "out" / "catr.csv")
        assert len(rows) == 9
        med_x1 = float(np.median(draw.dataset.x[:, 1]))
        vals = [float(r["estimate"]) for r in rows]
        truth = [true_catr(float(r["t"]), float(r["s"]), med_x1) for r in rows]
        assert np.corrcoef(vals, truth)[0, 1] > 0.95
        for r in rows:
            assert float(r["ci_lo"]) <= float(r["estimate"]) <= float(r["ci_hi"])

    def test_missing_data_path_is_config_error(self, tmp_path):
        cfg = {"network": {"kind": "ring", "k": 2}, "group_size": 2}
        assert run_cli(tmp_path, "estimate", cfg) == 2

    def test_missing_data_file_is_data_error(self, tmp_path):
        cfg = estimate_config(str(tmp_path / "absent.csv"), tmp_path / "out")
        assert run_cli(tmp_path, "estimate", cfg) == 3

    def test_dump_intermediate_round_trips(self, sim_csv, tmp_path):
        data_path, _ = sim_csv
        out = tmp_path / "dump"
        cfg = estimate_config(data_path, out, dump_intermediate=True)
        cfg["eval"]["t"] = {"quantiles": [0.4, 0.6]}
        assert run_cli(tmp_path, "estimate", cfg) == 0
        blob = json.loads((out / "intermediate.json").read_text())
        assert "series" in blob and "glambda" in blob
        theta = np.asarray(blob["series"]["theta_glambda"])
        assert theta.shape == (1296,) and np.isfinite(theta).all()
        assert blob["glambda"]["norm_lambda_sq"] > 0
        knots = blob["series"]["knots"]
        assert set(knots) == {"t", "s", "u", "v"}


class TestSimulate:
    def simulate_config(self, out_dir, seed=3):
        return {
            "simulate": {
                "scenarios": [{"k": 2, "n": 400, "rho": 0.3}],
                "estimators": ["tau5", "exogenous"],
                "eval": {"t_count": 4, "s_levels": [1.7]},
            },
            "reps": 2,
            "seed": seed,
            "out": str(out_dir),
        }

    def test_smoke_and_cells_finite(self, tmp_path):
        cfg = self.simulate_config(tmp_path / "mc")
        assert run_cli(tmp_path, "simulate", cfg) == 0
        rows = read_report(tmp_path / "mc" / "mc_report.csv")
        assert {r["metric"] for r in rows} == {"AABIAS", "ARMSE"}
        for r in rows:
            assert np.isfinite(float(r["tau5"])) and np.isfinite(float(r["exogenous"]))

    def test_byte_identical_reruns(self, tmp_path):
        cfg = self.simulate_config(tmp_path / "a")
        run_cli(tmp_path, "simulate", cfg)
        first = (tmp_path / "a" / "mc_report.csv").read_bytes()
        cfg["out"] = str(tmp_path / "b")
        run_cli(tmp_path, "simulate", cfg)
        second = (tmp_path / "b" / "mc_report.csv").read_bytes()
        # provenance hashes differ only through the out path; compare bodies
        assert first.split(b"\n", 1)[1] == second.split(b"\n", 1)[1]

    def test_same_out_dir_byte_identical(self, tmp_path):
        cfg = self.simulate_config(tmp_path / "c")
        run_cli(tmp_path, "simulate", cfg)
        first = (tmp_path / "c" / "mc_report.csv").read_bytes()
        run_cli(tmp_path, "simulate", cfg)
        assert (tmp_path / "c" / "mc_report.csv").read_bytes() == first


class TestNetworkSources:
    def test_knn_from_coordinate_columns(self, sim_csv, tmp_path):
        data_path, _ = sim_csv
        cfg = estimate_config(data_path, tmp_path / "knn")
        cfg["network"] = {"kind": "knn", "k": 2, "coords": ["x1", "z1"]}
        cfg["eval"]["t"] = {"quantiles": [0.5]}
        assert run_cli(tmp_path, "estimate", cfg) == 0
        rows = read_report(tmp_path / "knn" / "catr.csv")
        assert len(rows) == 1 and np.isfinite(float(rows[0]["estimate"]))

    def test_edgelist_network(self, sim_csv, tmp_path):
        data_path, draw = sim_csv
        n = draw.dataset.n
        edges = tmp_path / "edges.csv"
        with open(edges, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["src", "dst"])
            for i in range(n):  # same ring as the generating process
                w.writerow([i, (i - 1) % n])
                w.writerow([i, (i + 1) % n])
        cfg = estimate_config(data_path, tmp_path / "el")
        cfg["network"] = {"kind": "edgelist", "path": str(edges)}
        cfg["eval"]["t"] = {"quantiles": [0.5]}
        assert run_cli(tmp_path, "estimate", cfg) == 0
        rows = read_report(tmp_path / "el" / "catr.csv")
        assert len(rows) == 1


class TestErrorCodes:
    def test_numerical_failure_exits_4(self, tmp_path):
        # constant instrument: the quantile regression design is rank deficient
        n = 300
        rng = np.random.default_rng(0)
        path = tmp_path / "bad.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "t", "x1", "z1"])
            for i in range(n):
                w.writerow([rng.normal(), rng.normal(), rng.normal(), 1.0])
        cfg = estimate_config(str(path), tmp_path / "out4")
        assert run_cli(tmp_path, "estimate", cfg) == 4


class TestProvenance:
    def test_hash_changes_with_config_content(self):
        from catrnet.cli import config_hash

        a = {"seed": 1, "x": [1, 2]}
        b = {"seed": 2, "x": [1, 2]}
        assert config_hash(a) != config_hash(b)
        assert config_hash(a) == config_hash({"x": [1, 2], "seed": 1})


class TestBandwidth:
    def test_rows_respect_clamps(self, sim_csv, tmp_path):
        data_path, _ = sim_csv
        cfg = estimate_config(data_path, tmp_path / "bw")
        assert run_cli(tmp_path, "bandwidth", cfg) == 0
        rows = read_report(tmp_path / "bw" / "bandwidths.csv")
        for r in rows:
            c = float(r["C"])
            assert 0.2 <= c <= 5.0
            assert r["clamped"] in ("True", "False")
            assert float(r["h_t"]) > 0 and float(r["h_s"]) > 0


class TestEntryPoint:
    def test_console_script_help(self):
        out = subprocess.run(
            [sys.executable, "-m", "catrnet.cli", "--help"], capture_output=True, text=True
        )
        assert out.returncode == 0
        assert "estimate" in out.stdout and "simulate" in out.stdout

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = TestSimulate().simulate_config(tmp_path / "s1", seed=3)
        run_cli(tmp_path, "simulate", cfg, "--seed", "4")
        blob = json.loads((tmp_path / "s1" / "mc_report.json").read_text())
        assert blob["master_seed"] == 4
