import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mortss.cli import main

SIM_PARAMS = {
    "alpha": list(np.linspace(-7, -2, 4)),
    "beta": [0.2, 0.25, 0.3, 0.25],
    "theta": -0.1,
    "sigma2_eps": 0.02,
    "sigma2_omega": 0.1,
}


def run_simulate(out, seed=11, T=25):
    config = {"model": "lc", "params": SIM_PARAMS, "p": 4, "T": T,
              "seed": seed, "out": str(out), "start_year": 1990}
    cfg = out.parent / f"{out.name}_cfg.json"
    cfg.write_text(json.dumps(config))
    assert main(["simulate", "--config", str(cfg)]) == 0
    return out


def read_tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestSimulate:
    def test_outputs_and_manifest(self, tmp_path):
        out = run_simulate(tmp_path / "sim")
        manifest = json.loads((out / "manifest.json").read_text())
        assert "panel.csv" in manifest["files"]
        assert "config.json" in manifest["files"]
        for name in manifest["files"]:
            assert (out / name).exists()

    def test_byte_identical_reruns(self, tmp_path):
        a = run_simulate(tmp_path / "a", seed=5)
        b = run_simulate(tmp_path / "b", seed=5)
        ta, tb = read_tree(a), read_tree(b)
        assert set(ta) == set(tb)
        for name in ta:
            if name != "config.json":  # config echoes the out path
                assert ta[name] == tb[name], name

    def test_missing_seed_is_config_error(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"model": "lc", "params": SIM_PARAMS, "p": 4,
                                   "T": 5, "out": str(tmp_path / "x")}))
        assert main(["simulate", "--config", str(cfg)]) == 2


class TestPipeline:
    @pytest.fixture()
    def sim_dir(self, tmp_path):
        return run_simulate(tmp_path / "sim", seed=3, T=30)

    def test_fit_gibbs_then_forecast_then_dic(self, sim_dir, tmp_path):
        fit_dir = tmp_path / "fit"
        rc = main(["fit-gibbs", "--model", "lc", "--data", str(sim_dir / "panel.csv"),
                   "--iters", "60", "--burnin", "20", "--seed", "1",
                   "--out", str(fit_dir)])
        assert rc == 0
        assert (fit_dir / "params.csv").exists()
        assert (fit_dir / "summary.csv").exists()
        meta = json.loads((fit_dir / "meta.json").read_text())
        assert meta["M"] == 60 and meta["burnin"] == 20

        fc_dir = tmp_path / "fc"
        rc = main(["forecast", "--chain", str(fit_dir), "--horizon", "5",
                   "--seed", "2", "--out", str(fc_dir)])
        assert rc == 0
        header = (fc_dir / "forecast.csv").read_text().splitlines()[0]
        assert header == "horizon,age_group,mean,q025,q500,q975"

        dic_dir = tmp_path / "dic"
        rc = main(["dic", "--chain", str(fit_dir), "--data",
                   str(sim_dir / "panel.csv"), "--out", str(dic_dir)])
        assert rc == 0
        record = json.loads((dic_dir / "dic.json").read_text())
        assert record["model"] == "LC"
        assert np.isfinite(record["dic"])

    def test_fit_pmcmc_small(self, sim_dir, tmp_path):
        fit_dir = tmp_path / "sv"
        rc = main(["fit-pmcmc", "--model", "lcsv", "--data",
                   str(sim_dir / "panel.csv"), "--iters", "20", "--burnin", "5",
                   "--particles", "16", "--seed", "4", "--out", str(fit_dir)])
        assert rc == 0
        assert (fit_dir / "gamma.csv").exists()

    def test_gibbs_rejects_sv_model(self, sim_dir, tmp_path):
        rc = main(["fit-gibbs", "--model", "lcsv", "--data",
                   str(sim_dir / "panel.csv"), "--iters", "5", "--seed", "1",
                   "--out", str(tmp_path / "bad")])
        assert rc == 2

    def test_determinism_of_fit(self, sim_dir, tmp_path):
        args = ["fit-gibbs", "--model", "lc", "--data", str(sim_dir / "panel.csv"),
                "--iters", "25", "--burnin", "5", "--seed", "9"]
        assert main(args + ["--out", str(tmp_path / "f1")]) == 0
        assert main(args + ["--out", str(tmp_path / "f2")]) == 0
        assert ((tmp_path / "f1" / "params.csv").read_bytes()
                == (tmp_path / "f2" / "params.csv").read_bytes())
        assert ((tmp_path / "f1" / "kappa.csv").read_bytes()
                == (tmp_path / "f2" / "kappa.csv").read_bytes())

    def test_resume_is_noop(self, sim_dir, tmp_path, capsys):
        out = tmp_path / "fit"
        args = ["fit-gibbs", "--model", "lc", "--data", str(sim_dir / "panel.csv"),
                "--iters", "10", "--burnin", "2", "--seed", "1", "--out", str(out)]
        assert main(args) == 0
        stamp = (out / "params.csv").stat().st_mtime_ns
        assert main(args + ["--resume"]) == 0
        assert (out / "params.csv").stat().st_mtime_ns == stamp

    def test_svd_fit(self, sim_dir, tmp_path):
        out = tmp_path / "svd"
        rc = main(["svd-fit", "--data", str(sim_dir / "panel.csv"), "--k", "1",
                   "--seed", "0", "--out", str(out)])
        assert rc == 0
        payload = json.loads((out / "svd.json").read_text())
        assert len(payload["alpha"]) == 4
        assert abs(sum(payload["beta"][0]) - 1.0) < 1e-10

    def test_fit_mle(self, sim_dir, tmp_path):
        out = tmp_path / "mle"
        rc = main(["fit-mle", "--model", "lc-h", "--data",
                   str(sim_dir / "panel.csv"), "--seed", "0",
                   "--grad-tol", "0.01", "--out", str(out)])
        assert rc == 0
        trace = (out / "trace.csv").read_text().splitlines()
        assert trace[0] == "iter,loglik,grad_norm"
        params = json.loads((out / "params.json").read_text())
        assert params["beta"][0] == 0.2

    def test_lifetable_from_data(self, sim_dir, tmp_path):
        # synthetic single-year groups: table still builds
        out = tmp_path / "lt"
        rc = main(["lifetable", "--data", str(sim_dir / "panel.csv"),
                   "--year", "1990", "--seed", "0", "--out", str(out)])
        assert rc == 0
        lines = (out / "lifetable.csv").read_text().splitlines()
        assert lines[0] == "age_start,n,q,l,d,L,T,e"

    def test_lifetable_from_forecast_fan(self, sim_dir, tmp_path):
        fit_dir = tmp_path / "fit"
        main(["fit-gibbs", "--model", "lc", "--data", str(sim_dir / "panel.csv"),
              "--iters", "30", "--burnin", "10", "--seed", "1",
              "--out", str(fit_dir)])
        fc_dir = tmp_path / "fc"
        main(["forecast", "--chain", str(fit_dir), "--horizon", "3",
              "--seed", "2", "--out", str(fc_dir)])
        lt_dir = tmp_path / "lt"
        rc = main(["lifetable", "--fan", str(fc_dir), "--ages", "0,2",
                   "--seed", "0", "--out", str(lt_dir)])
        assert rc == 0
        lines = (lt_dir / "life_expectancy.csv").read_text().splitlines()
        assert lines[0] == "horizon,age,mean,q025,q500,q975"

    def test_data_error_exit_code(self, tmp_path):
        rc = main(["fit-gibbs", "--model", "lc", "--data",
                   str(tmp_path / "missing.csv"), "--iters", "5", "--seed", "1",
                   "--out", str(tmp_path / "x")])
        assert rc == 3


class TestParallelChains:
    def test_per_chain_directories(self, tmp_path, monkeypatch):
        sim = run_simulate(tmp_path / "sim", seed=3, T=20)
        monkeypatch.setenv("MORTSS_THREADS", "2")
        out = tmp_path / "multi"
        rc = main(["fit-gibbs", "--model", "lc", "--data", str(sim / "panel.csv"),
                   "--iters", "10", "--burnin", "2", "--seed", "7",
                   "--chains", "2", "--out", str(out)])
        assert rc == 0
        assert (out / "chain_00" / "params.csv").exists()
        assert (out / "chain_01" / "params.csv").exists()
        # chains differ: independent seeds
        assert ((out / "chain_00" / "params.csv").read_bytes()
                != (out / "chain_01" / "params.csv").read_bytes())


def test_console_entry_point(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "lc", "params": SIM_PARAMS, "p": 4,
                               "T": 6, "seed": 1, "out": str(tmp_path / "o")}))
    proc = subprocess.run([sys.executable, "-m", "mortss.cli", "simulate",
                           "--config", str(cfg)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
