import csv
import json
import math

import numpy as np
import pytest

from conftest import square_config
from wsn_deploy.cli import main, parse_seed_range
from wsn_deploy.field import build_grid
from wsn_deploy.model import config_hash, derive_coefficients, dump_config, reference_scenario
from wsn_deploy.oracle import random_small_config


@pytest.fixture
def small_config_path(tmp_path):
    path = tmp_path / "small.json"
    dump_config(reference_scenario(grid=30, seed=2), path)
    return path


def read_json(path):
    return json.loads(path.read_text())


class TestOptimize:
    def test_reference_scenario(self, tmp_path):
        cfg_path = tmp_path / "ref.json"
        assert main(["example-config", "--out", str(cfg_path)]) == 0
        out = tmp_path / "res.json"
        code = main(["optimize", "--config", str(cfg_path), "--algorithm", "pool", "--seed", "7",
                     "--out", str(out)])
        doc = read_json(out)
        assert code == 0
        assert doc["status"] == "converged"
        assert 0 < doc["power"]["weighted_total_w"] < 1.27
        assert doc["config_hash"] == config_hash(reference_scenario())

    def test_malformed_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"grid": 1, "n_aps": 2}))
        code = main(["optimize", "--config", str(bad), "--algorithm", "pool"])
        assert code == 1
        assert "config error" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["optimize", "--config", str(tmp_path / "nope.json"),
                     "--algorithm", "peel"]) == 1

    def test_deterministic_documents(self, tmp_path):
        cfg_path = tmp_path / "rand.json"
        dump_config(random_small_config(np.random.default_rng(10)), cfg_path)
        docs = []
        for k in range(2):
            out = tmp_path / f"r{k}.json"
            assert main(["optimize", "--config", str(cfg_path), "--algorithm", "peel",
                         "--out", str(out)]) == 0
            doc = read_json(out)
            doc.pop("wall_time_s")
            docs.append(doc)
        assert docs[0] == docs[1]

    def test_artifacts(self, small_config_path, tmp_path):
        paths = {k: tmp_path / name for k, name in
                 (("out", "r.json"), ("trace", "t.csv"), ("geometry", "g.csv"),
                  ("figure", "f.png"))}
        code = main(["optimize", "--config", str(small_config_path), "--algorithm", "pool",
                     *sum(([f"--{k}", str(v)] for k, v in paths.items()), [])])
        assert code == 0
        doc = read_json(paths["out"])
        with open(paths["trace"], newline="") as fh:
            trace = list(csv.DictReader(fh))
        assert float(trace[-1]["d_total_w"]) == doc["power"]["weighted_total_w"]
        with open(paths["geometry"], newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["kind", "x_m", "y_m", "owner_or_index"]
        assert len(rows) - 1 == 30 * 30 + 15 + 3
        assert paths["figure"].read_bytes()[:4] == b"\x89PNG"
        p = doc["power"]
        assert p["weighted_total_mw"] == pytest.approx(p["weighted_total_w"] * 1e3)
        assert p["sensor_dbm"] == pytest.approx(10 * math.log10(p["sensor_w"] * 1e3))

    def test_seed_sweep_picks_best(self, small_config_path, tmp_path):
        out = tmp_path / "sweep.json"
        assert main(["optimize", "--config", str(small_config_path), "--algorithm", "pool",
                     "--seed-sweep", "0..2", "--jobs", "2", "--out", str(out)]) == 0
        doc = read_json(out)
        totals = [s["weighted_total_w"] for s in doc["seed_sweep"]]
        assert [s["seed"] for s in doc["seed_sweep"]] == [0, 1, 2]
        assert doc["power"]["weighted_total_w"] == min(totals)

    def test_iteration_cap_exit_code(self, tmp_path):
        path = tmp_path / "capped.json"
        dump_config(reference_scenario(grid=20, max_iters=1, tau=1e-15), path)
        assert main(["optimize", "--config", str(path), "--algorithm", "pool",
                     "--out", str(tmp_path / "r.json")]) == 2

    def test_seed_range_parser(self):
        assert parse_seed_range("3..5") == [3, 4, 5]
        assert parse_seed_range("4") == [4]
        with pytest.raises(Exception):
            parse_seed_range("5..3")


class TestEval:
    def _optimize(self, cfg_path, tmp_path):
        out = tmp_path / "res.json"
        main(["optimize", "--config", str(cfg_path), "--algorithm", "pool", "--out", str(out)])
        return out

    def test_matches_run(self, small_config_path, tmp_path):
        res = self._optimize(small_config_path, tmp_path)
        ev = tmp_path / "ev.json"
        assert main(["eval", "--config", str(small_config_path), "--deployment", str(res),
                     "--objective", "d1", "--out", str(ev)]) == 0
        got = read_json(ev)["power"]["weighted_total_w"]
        want = read_json(res)["power"]["weighted_total_w"]
        assert got == pytest.approx(want, rel=1e-12)

        ev2 = tmp_path / "ev2.json"
        assert main(["eval", "--config", str(small_config_path), "--deployment", str(res),
                     "--objective", "d2", "--out", str(ev2)]) == 0
        d2 = read_json(ev2)["power"]["weighted_total_w"]
        assert 0 < d2 != got

    def test_hand_built_single_ap(self, tmp_path):
        cfg = square_config(grid=10)
        cfg_path = tmp_path / "one.json"
        dump_config(cfg, cfg_path)
        p, q, flow = np.array([300.0, 600.0]), np.array([900.0, 100.0]), cfg.rb * 1000.0
        doc = {"ap_positions_m": [p.tolist()], "bs_positions_m": [q.tolist()],
               "flows_bps": [[flow]]}
        dep = tmp_path / "dep.json"
        dep.write_text(json.dumps(doc))
        out = tmp_path / "ev.json"
        assert main(["eval", "--config", str(cfg_path), "--deployment", str(dep),
                     "--objective", "d1", "--out", str(out)]) == 0
        grid = build_grid(cfg)
        c = derive_coefficients(cfg)
        ln_factor = math.log(1 / (1 - cfg.outage_eps))
        sensor = (c.a[0] * (2 ** (cfg.rb / cfg.bandwidth) - 1) / ln_factor
                  * np.sum(grid.mass * ((grid.centers - p) ** 2).sum(1)))
        ap = c.b[0, 0] * ((p - q) ** 2).sum() * (2 ** (flow / cfg.bandwidth) - 1) / ln_factor
        got = read_json(out)["power"]
        assert got["sensor_w"] == pytest.approx(sensor, rel=1e-12)
        assert got["ap_w"] == pytest.approx(ap, rel=1e-12)
        assert got["weighted_total_w"] == pytest.approx(sensor + cfg.tradeoff * ap, rel=1e-12)

    def test_shape_mismatch(self, small_config_path, tmp_path, capsys):
        dep = tmp_path / "dep.json"
        dep.write_text(json.dumps({"ap_positions_m": [[0, 0]], "bs_positions_m": [[1, 1]],
                                   "flows_bps": [[1.0]]}))
        code = main(["eval", "--config", str(small_config_path), "--deployment", str(dep),
                     "--objective", "d1"])
        assert code == 1
        assert "shape" in capsys.readouterr().err


class TestVerify:
    @pytest.mark.parametrize("suite", ["numerics", "outage-mc"])
    def test_suites_pass(self, suite, capsys):
        assert main(["verify", "--suite", suite]) == 0
        assert "passed" in capsys.readouterr().out

    def test_routing_suite_report_file(self, tmp_path):
        out = tmp_path / "routing.json"
        assert main(["verify", "--suite", "routing", "--out", str(out)]) == 0
        reports = read_json(out)["reports"]
        assert len(reports) == 400 and all(r["passed"] for r in reports)


class TestTradeoff:
    def test_csv_and_figure(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        dump_config(random_small_config(np.random.default_rng(6)), cfg_path)
        out, fig = tmp_path / "trade.csv", tmp_path / "trade.png"
        assert main(["tradeoff", "--config", str(cfg_path), "--algorithm", "pool",
                     "--lambdas", "0,0.5,1", "--out", str(out), "--figure", str(fig)]) == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [float(r["lambda"]) for r in rows] == [0.0, 0.5, 1.0]
        assert fig.stat().st_size > 0
