import hashlib
from importlib import resources

import numpy as np
import pytest

from netswitch.cli import main, write_atomic
from netswitch.mdp import FiniteMdp, TabularPolicy, evaluate_exact, format_mdp, format_policy
from netswitch.nac import NacReport
from netswitch.offline import LossTrace, TransitionDataset
from netswitch.verify import check_names

DATA = resources.files("netswitch").joinpath("data")
TWO_STATE_CFG = str(DATA / "two_state.cfg")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def parse_kv(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


def quick_chain_cfg(tmp_path, old="uniform"):
    text = (DATA / "chain_suboptimal.cfg").read_text()
    text = text.replace("path = chain.mdp", f"path = {DATA / 'chain.mdp'}")
    text = text.replace("old = uniform", f"old = {old}")
    text = text.replace("episodes = 500", "episodes = 60").replace("epochs = 200", "epochs = 40")
    text = text.replace("steps_per_epoch = 200", "steps_per_epoch = 50").replace("max_epochs = 10", "max_epochs = 6")
    path = tmp_path / "quick.cfg"
    path.write_text(text)
    return str(path)


class TestEvaluate:
    def test_incumbent_value(self, capsys):
        code, out, _ = run(capsys, "evaluate", "--config", TWO_STATE_CFG)
        kv = parse_kv(out)
        assert code == 0
        assert kv["V(0)"] == "50" and kv["V(1)"] == "50" and kv["cost"] == "0"

    def test_net_values(self, capsys):
        code, out, _ = run(capsys, "evaluate", "--config", TWO_STATE_CFG, "--policy", "det:0,0")
        kv = parse_kv(out)
        assert (kv["cost"], kv["V_N(0)"], kv["V_N(1)"], kv["Q_N(0,1)"]) == ("25", "75", "-25", "-25")

    def test_zero_reward(self, capsys, tmp_path):
        mdp = FiniteMdp(np.full((2, 2, 2), 0.5), np.zeros((2, 2)), 5, 0.9)
        (tmp_path / "z.mdp").write_text(format_mdp(mdp))
        code, out, _ = run(capsys, "evaluate", "--mdp", str(tmp_path / "z.mdp"))
        assert code == 0
        assert all(v == "0" for v in parse_kv(out).values())

    def test_output_parses_back(self, capsys, tmp_path):
        rng = np.random.default_rng(0)
        mdp = FiniteMdp(rng.dirichlet(np.ones(3), size=(3, 2)), rng.normal(0, 1, (3, 2)), 7, 0.85)
        pi = TabularPolicy(rng.dirichlet(np.ones(2), size=3))
        (tmp_path / "r.mdp").write_text(format_mdp(mdp))
        (tmp_path / "p.txt").write_text(format_policy(pi))
        code, out, _ = run(capsys, "evaluate", "--mdp", str(tmp_path / "r.mdp"), "--policy",
                           str(tmp_path / "p.txt"))
        kv = parse_kv(out)
        V, Q = evaluate_exact(mdp, pi)
        for s in range(3):
            assert float(kv[f"V({s})"]) == float(f"{V[s]:.12g}")
            for a in range(2):
                assert float(kv[f"Q({s},{a})"]) == float(f"{Q[s, a]:.12g}")


class TestCommands:
    def test_cost_identical_local(self, capsys):
        code, out, _ = run(capsys, "cost", "--mdp", str(DATA / "chain.mdp"), "--old", "det:1,0,1,0,1,0",
                           "--new", "det:1,0,1,0,1,0")
        assert code == 0
        assert out == "cost=0\n"

    def test_cost_local_spec(self, capsys, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(f"[mdp]\npath = {DATA / 'chain.mdp'}\n[cost]\nkind = local\n")
        code, out, _ = run(capsys, "cost", "--config", str(cfg), "--old", "det:1,0,1,0,1,0",
                           "--new", "det:0,0,1,0,1,1")
        assert out == "cost=2\n"

    def test_search(self, capsys, tmp_path):
        code, out, _ = run(capsys, "search", "--config", TWO_STATE_CFG, "--out", str(tmp_path))
        assert code == 0
        assert out == "best=det:0,0\nnet=75\n"
        assert (tmp_path / "ranking.csv").read_text().splitlines()[1].startswith("1, det:0,0, 100, 25, 75")

    def test_search_at_beta(self, capsys):
        code, out, _ = run(capsys, "search", "--config", TWO_STATE_CFG, "--s0", "1", "--candidates", "det")
        assert parse_kv(out)["net"] == "50"

    def test_gen_data_and_ope(self, capsys, tmp_path):
        cfg = quick_chain_cfg(tmp_path)
        code, out, _ = run(capsys, "gen-data", "--config", cfg, "--episodes", "5", "--out", str(tmp_path))
        assert code == 0 and parse_kv(out)["records"] == "1000"
        data = TransitionDataset.load(tmp_path / "dataset.txt")
        assert len(data) == 1000 and data.behavior_id == "uniform"
        code, out, _ = run(capsys, "ope", "--config", cfg, "--data", str(tmp_path / "dataset.txt"),
                           "--out", str(tmp_path / "o"))
        kv = parse_kv(out)
        assert code == 0 and kv["semantics"] == "infinite_horizon_net"
        trace = LossTrace.parse((tmp_path / "o" / "loss_trace.txt").read_text())
        assert len(trace) == int(kv["epochs"])

    def test_nac_suboptimal_switches(self, capsys, tmp_path):
        code, out, _ = run(capsys, "nac", "--config", quick_chain_cfg(tmp_path), "--out", str(tmp_path))
        assert code == 0
        report = NacReport.parse((tmp_path / "nac_report.txt").read_text())
        assert report.switch_flag and report.chosen == "new"
        assert parse_kv(out)["responsible"] == "true"

    def test_nac_sweep(self, capsys, tmp_path):
        cfg = quick_chain_cfg(tmp_path, old="det:1,1,1,1,1,1")
        code, out, _ = run(capsys, "nac", "--config", cfg, "--seeds", "1,2", "--out", str(tmp_path),
                           "--quiet")
        assert code == 0 and out == ""
        sweep = (tmp_path / "sweep.csv").read_text()
        assert sweep.startswith("seed, switch, v_old, v_new_net, epochs_run, agrees\n")
        assert "switch_rate=0\n" in sweep
        assert (tmp_path / "nac_report_seed2.txt").exists()

    def test_seed_flag_changes_data(self, capsys, tmp_path):
        cfg = quick_chain_cfg(tmp_path)
        run(capsys, "gen-data", "--config", cfg, "--episodes", "3", "--out", str(tmp_path / "a"))
        run(capsys, "gen-data", "--config", cfg, "--episodes", "3", "--seed", "5", "--out", str(tmp_path / "b"))
        assert (tmp_path / "a" / "dataset.txt").read_text() != (tmp_path / "b" / "dataset.txt").read_text()

    def test_global_flags_before_subcommand(self, capsys, tmp_path):
        code, out, _ = run(capsys, "--quiet", "--out", str(tmp_path), "search", "--config", TWO_STATE_CFG)
        assert code == 0 and out == ""
        assert (tmp_path / "search.txt").read_text() == "best=det:0,0\nnet=75\n"


class TestErrors:
    def test_missing_file(self, capsys):
        code, _, err = run(capsys, "evaluate", "--mdp", "/nonexistent/x.mdp")
        assert code == 2 and err.startswith("netswitch:")

    def test_malformed_mdp(self, capsys, tmp_path):
        (tmp_path / "bad.mdp").write_text("mdp 2 2\n")
        assert run(capsys, "evaluate", "--mdp", str(tmp_path / "bad.mdp"))[0] == 2

    def test_bad_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(f"[mdp]\npath = {DATA / 'chain.mdp'}\n[ope]\nlearning_rate = 3\n")
        assert run(capsys, "ope", "--config", str(cfg), "--episodes", "2")[0] == 2

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_unsupported_discount(self, capsys):
        code, _, err = run(capsys, "ope", "--config", TWO_STATE_CFG, "--episodes", "1")
        assert code == 2 and "gamma" in err


class TestVerify:
    def test_fresh_checkout_passes(self, capsys):
        code, out, _ = run(capsys, "verify-paper")
        assert code == 0
        assert out.splitlines()[-1] == f"{len(check_names())}/{len(check_names())} checks passed"

    def test_list(self, capsys):
        code, out, _ = run(capsys, "verify-paper", "--list")
        assert code == 0 and out.splitlines() == check_names()
        assert "PASS" not in out

    def test_corrupted_fixture(self, capsys, tmp_path):
        text = (DATA / "two_state.mdp").read_text().replace("0 0 1.0 0.0 1.0 0.0", "0 0 2.0 0.0 1.0 0.0")
        (tmp_path / "two_state.mdp").write_text(text)
        code, out, _ = run(capsys, "verify-paper", "--fixture-dir", str(tmp_path))
        assert code == 1
        first = [line for line in out.splitlines() if line.startswith("first failure:")]
        assert first and "two_state.value.n1.s0" in first[0]

    def test_deterministic_outputs(self, capsys, tmp_path):
        digests = []
        for k in range(2):
            d = tmp_path / str(k)
            run(capsys, "search", "--config", TWO_STATE_CFG, "--out", str(d))
            run(capsys, "verify-paper", "--out", str(d))
            digests.append({p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in d.iterdir()})
        assert digests[0] == digests[1]


def test_write_atomic_leaves_no_temp(tmp_path):
    write_atomic(tmp_path / "x" / "f.txt", "hello\n")
    write_atomic(tmp_path / "x" / "f.txt", "again\n")
    assert [p.name for p in (tmp_path / "x").iterdir()] == ["f.txt"]
    assert (tmp_path / "x" / "f.txt").read_text() == "again\n"
