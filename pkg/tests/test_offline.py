import math

import numpy as np
import pytest

from netswitch.cost import CostSpec
from netswitch.errors import ConvergenceError, FormatError, UnsupportedDiscountError
from netswitch.mdp import FiniteMdp, TabularPolicy, evaluate_infinite, occupancy
from netswitch.net_value import SwitchProblem
from netswitch.offline import (LossTrace, OpeConfig, TransitionDataset, TwinNetQ, coverage,
                               evaluate_offline, generate_dataset, ope_target, readout)


def small_mdp(seed=0, S=3, A=2, H=10, gamma=0.8):
    rng = np.random.default_rng(seed)
    return FiniteMdp(rng.dirichlet(np.ones(S), size=(S, A)), rng.uniform(0, 1, (S, A)), H, gamma, 0)


def det_mdp():
    # action 0 stays, action 1 moves; reward 1 in state 1
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[1, 0, 1] = P[0, 1, 1] = P[1, 1, 0] = 1
    return FiniteMdp(P, np.array([[0.0, 0.0], [1.0, 1.0]]), 4, 0.5, 0)


FAST = OpeConfig(epochs=30, steps_per_epoch=50, batch_size=64)


class TestDataset:
    def test_size_and_layout(self):
        mdp = small_mdp()
        data = generate_dataset(mdp, TabularPolicy.uniform(3, 2), 7, seed=1)
        assert len(data) == 7 * mdp.horizon
        np.testing.assert_array_equal(data.episode, np.repeat(np.arange(7), 10))
        assert data.done.sum() == 7 and data.done[-1]
        assert (data.s[::10] == mdp.initial_state).all()
        # consecutive steps chain within an episode
        same_ep = data.episode[1:] == data.episode[:-1]
        np.testing.assert_array_equal(data.s[1:][same_ep], data.s_next[:-1][same_ep])

    def test_deterministic(self):
        mdp = small_mdp()
        pi = TabularPolicy.uniform(3, 2)
        assert generate_dataset(mdp, pi, 20, seed=5) == generate_dataset(mdp, pi, 20, seed=5)
        assert generate_dataset(mdp, pi, 20, seed=5) != generate_dataset(mdp, pi, 20, seed=6)

    def test_counts_match_occupancy(self):
        mdp = small_mdp(2, H=6)
        pi = TabularPolicy(np.random.default_rng(3).dirichlet(np.ones(2), size=3))
        n = 4000
        counts = generate_dataset(mdp, pi, n, seed=4).counts()
        occ = occupancy(mdp, pi)
        p = occ / mdp.horizon
        N = n * mdp.horizon
        # visits within an episode are correlated; per-episode bound is loose but safe
        sd = np.sqrt(n * mdp.horizon ** 2 * p * (1 - p)) + 1
        assert np.all(np.abs(counts - n * occ) <= 3 * sd)
        assert counts.sum() == N

    def test_text_round_trip(self, tmp_path):
        mdp = FiniteMdp(small_mdp().transition, small_mdp().reward_mean, 5, 0.8, 0, 0.3)
        data = generate_dataset(mdp, TabularPolicy.uniform(3, 2), 4, seed=2, behavior_id="unif")
        path = tmp_path / "d.txt"
        data.save(path)
        back = TransitionDataset.load(path)
        assert back == data
        assert back.r.tobytes() == data.r.tobytes()

    def test_malformed(self):
        good = generate_dataset(small_mdp(H=2), TabularPolicy.uniform(3, 2), 1, seed=0).format()
        with pytest.raises(FormatError):
            TransitionDataset.parse(good.replace("dataset 2", "dataset 3"))
        with pytest.raises(FormatError):
            TransitionDataset.parse("hello\n")
        lines = good.splitlines()
        lines[1] = " ".join(lines[1].split()[:-1] + ["1"])
        with pytest.raises(FormatError):
            TransitionDataset.parse("\n".join(lines))

    def test_coverage_report(self):
        mdp = det_mdp()
        data = generate_dataset(mdp, TabularPolicy.deterministic([0, 0], 2), 3, seed=0)
        cov = coverage(data, TabularPolicy.uniform(2, 2))
        assert (cov.n_present, cov.n_pairs) == (1, 4)
        assert cov.fraction == 0.25
        assert (0, 1) in cov.required_missing
        assert "0.25" in cov.format()


class TestTargets:
    def test_zero_discount_is_net_reward(self):
        twin = TwinNetQ.zeros(2, 2)
        twin.target[:] = 123.0
        y = ope_target(2.0, 1, TabularPolicy.uniform(2, 2), twin, 3.0, 0.0, np.random.default_rng(0))
        assert y == 2.0 - 3.0

    def test_zero_targets(self):
        y = ope_target(1.5, 0, TabularPolicy.uniform(2, 2), TwinNetQ.zeros(2, 2), 4.0, 0.75,
                       np.random.default_rng(0))
        assert y == 1.5 - 0.25 * 4.0

    def test_hand_formula_uses_min_over_critics(self):
        twin = TwinNetQ.zeros(2, 2)
        twin.target[0, 1] = [5.0, 7.0]
        twin.target[1, 1] = [6.0, 2.0]
        pi = TabularPolicy.deterministic([0, 1], 2)
        y = ope_target(1.0, 1, pi, twin, 2.0, 0.9, np.random.default_rng(0))
        assert y == pytest.approx(1.0 - 0.1 * 2.0 + 0.9 * 2.0, abs=1e-15)

    def test_readout(self):
        twin = TwinNetQ.zeros(1, 3)
        twin.q[0, 0] = [1.0, 5.0, 3.0]
        twin.q[1, 0] = [2.0, 4.0, 0.0]
        pi = TabularPolicy([[0.5, 0.25, 0.25]])
        assert readout(twin, pi, 0) == 0.5 + 1.0 + 0.0
        mc = readout(twin, pi, 0, 20000, np.random.default_rng(1))
        assert mc == pytest.approx(1.5, abs=0.05)
        with pytest.raises(ValueError):
            readout(twin, pi, 0, 10)

    def test_soft_update(self):
        twin = TwinNetQ.zeros(2, 2)
        twin.q[:] = 1.0
        twin.soft_update(1.0)
        assert not twin.target.any()
        twin.soft_update(0.75)
        assert np.all(twin.target == 0.25)
        gap = np.abs(twin.q - twin.target).max()
        twin.soft_update(0.5)
        assert np.abs(twin.q - twin.target).max() == 0.5 * gap


class TestEvaluation:
    def test_accuracy_small(self):
        mdp = small_mdp(4, S=3, A=2, gamma=0.8)
        pi = TabularPolicy(np.random.default_rng(5).dirichlet(np.ones(2), size=3))
        data = generate_dataset(mdp, TabularPolicy.uniform(3, 2), 1000, seed=6)
        pr = SwitchProblem(mdp, pi, CostSpec.zero())
        res = evaluate_offline(pr, pi, data, OpeConfig(epochs=60))
        v_true = float(pi.probs[0] @ evaluate_infinite(mdp, pi)[0])
        assert abs(res.v_net_hat - v_true) <= max(0.05 * abs(v_true), 0.5)
        assert res.coverage.fraction == 1.0

    def test_cost_shifts_estimate(self):
        mdp = small_mdp(4)
        pi = TabularPolicy.uniform(3, 2)
        data = generate_dataset(mdp, pi, 100, seed=6)
        pr = SwitchProblem(mdp, pi, CostSpec.zero())
        a = evaluate_offline(pr, pi, data, FAST)
        b = evaluate_offline(pr, pi, data, FAST, switch_cost=2.0)
        # same draws: the cost term only lowers every target by (1 - gamma) * C
        assert b.v_net_hat < a.v_net_hat

    def test_deterministic(self):
        mdp = small_mdp(7)
        pi = TabularPolicy.uniform(3, 2)
        data = generate_dataset(mdp, pi, 50, seed=8)
        pr = SwitchProblem(mdp, pi, CostSpec.zero())
        a = evaluate_offline(pr, pi, data, FAST)
        b = evaluate_offline(pr, pi, data, FAST)
        assert a.v_net_hat == b.v_net_hat
        assert a.loss_trace.format() == b.loss_trace.format()
        np.testing.assert_array_equal(a.twin.q, b.twin.q)

    def test_pessimism(self):
        mdp = small_mdp(9)
        pi = TabularPolicy.uniform(3, 2)
        data = generate_dataset(mdp, pi, 50, seed=1)
        res = evaluate_offline(SwitchProblem(mdp, pi, CostSpec.zero()), pi, data, FAST)
        assert np.all(res.twin.min_q() <= res.twin.q[0])
        assert np.all(res.twin.min_q() <= res.twin.q[1])
        assert res.v_net_hat == math.fsum(pi.probs[0] * res.twin.min_q()[0])

    def test_empty_dataset(self):
        mdp = small_mdp()
        empty = TransitionDataset(*(np.zeros(0),) * 7, n_states=3, n_actions=2, horizon=10)
        with pytest.raises(ValueError):
            evaluate_offline(SwitchProblem(mdp, TabularPolicy.uniform(3, 2), CostSpec.zero()),
                             TabularPolicy.uniform(3, 2), empty, FAST)

    def test_needs_discount(self):
        mdp = small_mdp(gamma=1.0)
        pi = TabularPolicy.uniform(3, 2)
        data = generate_dataset(mdp, pi, 2, seed=0)
        with pytest.raises(UnsupportedDiscountError):
            evaluate_offline(SwitchProblem(mdp, pi, CostSpec.zero()), pi, data, FAST)

    def test_divergence_is_reported(self):
        mdp = FiniteMdp(small_mdp().transition, np.ones((3, 2)), 10, 0.99, 0)
        pi = TabularPolicy.uniform(3, 2)
        data = generate_dataset(mdp, pi, 20, seed=0)
        cfg = OpeConfig(epochs=50, steps_per_epoch=20, batch_size=16, lr_q=50.0, grad_clip_q=0.0)
        with pytest.raises(ConvergenceError, match="lower lr_q"):
            evaluate_offline(SwitchProblem(mdp, pi, CostSpec.zero()), pi, data, cfg)

    def test_loss_trace_round_trip(self):
        tr = LossTrace([(1, 0.5, 2.0), (2, 0.25, 2.5)])
        assert LossTrace.parse(tr.format()).rows == tr.rows

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OpeConfig(soft=1.5)
        with pytest.raises(ValueError):
            OpeConfig(batch_size=0)
