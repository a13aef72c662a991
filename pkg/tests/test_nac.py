import numpy as np
import pytest

import oracles
from netswitch import fixtures as F
from netswitch.cost import CostSpec
from netswitch.errors import FormatError, UnsupportedDiscountError
from netswitch.mdp import TabularPolicy
from netswitch.nac import (ActorParams, NacConfig, NacReport, StoppingConfig, actor_gradient,
                           actor_objective, actor_step, decide, responsibility_check, run_nac,
                           stopping_check, with_seed)
from netswitch.net_value import SwitchProblem
from netswitch.offline import OpeConfig, TwinNetQ, generate_dataset


def twin_with(q_rows):
    q = np.array(q_rows, dtype=float)
    return TwinNetQ(q, q.copy())


def quick_cfg(seed=0, **kw):
    ope = OpeConfig(epochs=15, steps_per_epoch=40, batch_size=64, seed=seed)
    return NacConfig(ope=ope, stopping=StoppingConfig(epochs_stop=3), **kw)


@pytest.fixture(scope="module")
def chain_data():
    mdp = F.chain_mdp()
    return mdp, generate_dataset(mdp, TabularPolicy.uniform(6, 2), 60, seed=123)


class TestActor:
    def test_objective_of_constant_q(self):
        twin = twin_with(np.full((2, 3, 4), 2.5))
        assert actor_objective(twin, ActorParams(np.zeros((3, 4))), 1) == 2.5

    def test_objective_uses_min_over_critics(self):
        twin = twin_with([[[1.0, 4.0]], [[3.0, 2.0]]])
        theta = ActorParams([[0.0, 40.0]])
        assert actor_objective(twin, theta, 0) == pytest.approx(2.0)
        assert actor_objective(twin, ActorParams([[0.0, 0.0]]), 0) == pytest.approx(1.5)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            S, A = int(rng.integers(1, 5)), int(rng.integers(2, 6))
            twin = twin_with(rng.normal(0, 3, (2, S, A)))
            theta = rng.normal(0, 1, (S, A))
            s0 = int(rng.integers(S))
            g = actor_gradient(twin, ActorParams(theta), s0)
            fd = oracles.central_difference(lambda th: actor_objective(twin, ActorParams(th), s0), theta)
            np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)

    def test_gradient_is_local_to_start_state(self):
        rng = np.random.default_rng(1)
        twin = twin_with(rng.normal(0, 1, (2, 4, 3)))
        g = actor_gradient(twin, ActorParams(rng.normal(0, 1, (4, 3))), 2)
        assert not np.delete(g, 2, axis=0).any()

    def test_constant_row_leaves_logits(self):
        twin = twin_with(np.ones((2, 2, 3)))
        theta = ActorParams(np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal(actor_step(theta, twin, 0, 0.5, 1.0).logits, theta.logits)

    def test_step_is_clipped(self):
        twin = twin_with([[[0.0, 1000.0]], [[0.0, 1000.0]]])
        theta = ActorParams(np.zeros((1, 2)))
        new = actor_step(theta, twin, 0, 1.0, 1.0)
        assert np.linalg.norm(new.logits - theta.logits) == pytest.approx(1.0)

    def test_concentrates_on_best_action(self):
        twin = twin_with([[[1.0, 3.0, 2.0]], [[1.5, 2.5, 4.0]]])
        theta = ActorParams(np.zeros((1, 3)))
        for _ in range(500):
            theta = actor_step(theta, twin, 0, 0.5, 1.0)
        assert theta.probs()[0, 1] > 0.99

    def test_warm_start(self):
        pi = TabularPolicy([[0.25, 0.75], [1.0, 0.0]])
        probs = ActorParams.warm_start(pi).probs()
        np.testing.assert_allclose(probs[0], [0.25, 0.75], rtol=1e-12)
        assert probs[1, 0] > 0.999998

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ActorParams([[np.inf, 0.0]])


class TestStopping:
    def test_rate_branch(self):
        assert stopping_check(10, 25, 30, StoppingConfig(alpha=1.0, b_u=100, b_d=100), 5)

    def test_sign_branch(self):
        assert stopping_check(-5, 1, 2, StoppingConfig(b_u=100, b_d=100), 5)

    def test_epoch_gate(self):
        cfg = StoppingConfig(epochs_stop=5)
        assert not stopping_check(-5, 1, 2, cfg, 4)
        assert stopping_check(-5, 1, 2, cfg, 5)

    def test_additive_branches(self):
        cfg = StoppingConfig(alpha=10.0, b_u=1.0, b_d=1.0)
        assert stopping_check(10, 11, 11.5, cfg, 9)
        assert not stopping_check(10, 11, 10.5, cfg, 9)
        # both of the last two epochs must sit below the lower bound
        assert stopping_check(10, 8, 9, cfg, 9)
        assert not stopping_check(10, 8, 9.5, cfg, 9)

    def test_pure(self):
        cfg = StoppingConfig()
        assert stopping_check(1, 3, 4, cfg, 6) == stopping_check(1, 3, 4, cfg, 6)

    def test_validation(self):
        with pytest.raises(ValueError):
            StoppingConfig(alpha=0.0)
        with pytest.raises(ValueError):
            StoppingConfig(window=3)


class TestReport:
    def test_round_trip(self):
        rep = NacReport("new", 1.25, 2.5, True, 3, [1.0, 2.0, 2.25], TabularPolicy.uniform(2, 3), 0.5)
        back = NacReport.parse(rep.format())
        assert back.format() == rep.format()
        assert back.new_policy == rep.new_policy

    def test_inconsistent_rejected(self):
        with pytest.raises(ValueError):
            NacReport("new", 1.0, 2.0, False, 1, [], TabularPolicy.uniform(1, 2))
        with pytest.raises(FormatError):
            NacReport.parse("chosen=old\n")

    def test_decision_is_strict(self):
        assert decide(1.0, 1.0) == "old"
        assert decide(1.0, 1.0 + 1e-12) == "new"


class TestRun:
    def test_zero_length_training_keeps_incumbent(self, chain_data):
        mdp, data = chain_data
        pr = SwitchProblem(mdp, F.chain_policies()["suboptimal"], F.chain_cost())
        cfg = NacConfig(ope=OpeConfig(epochs=5, steps_per_epoch=20, batch_size=32),
                        stopping=StoppingConfig(epochs_stop=0), max_epochs=0)
        rep = run_nac(pr, data, cfg)
        assert rep.epochs_run == 0 and rep.value_trace == []
        assert rep.v_new_net == rep.v_old
        assert not rep.switch_flag and rep.chosen == "old"

    def test_deterministic(self, chain_data):
        mdp, data = chain_data
        pr = SwitchProblem(mdp, F.chain_policies()["suboptimal"], F.chain_cost())
        a = run_nac(pr, data, quick_cfg(max_epochs=3))
        b = run_nac(pr, data, quick_cfg(max_epochs=3))
        assert a.format() == b.format()
        assert a.consistent()

    def test_seed_changes_run(self, chain_data):
        mdp, data = chain_data
        pr = SwitchProblem(mdp, F.chain_policies()["suboptimal"], F.chain_cost())
        cfg = quick_cfg(max_epochs=2)
        assert run_nac(pr, data, cfg).format() != run_nac(pr, data, with_seed(cfg, 9)).format()

    def test_needs_discount(self):
        pr = F.two_state_problem()
        data = generate_dataset(pr.mdp, TabularPolicy.uniform(2, 2), 1, seed=0)
        with pytest.raises(UnsupportedDiscountError):
            run_nac(pr, data, quick_cfg())


class TestResponsibility:
    def test_two_state_known_best(self):
        pr = F.two_state_problem(F.ALPHA)
        pols = F.two_state_policies()
        good = NacReport("new", 50.0, 75.0, True, 1, [75.0], pols["n1"])
        bad = NacReport("new", 50.0, 75.0, True, 1, [75.0], pols["n4"])
        assert responsibility_check(pr, good)
        assert not responsibility_check(pr, bad)

    def test_staying_with_same_policy_agrees(self):
        mdp = F.chain_mdp(horizon=30)
        pi = F.chain_policies()["suboptimal"]
        rep = NacReport("old", 1.0, 1.0, False, 0, [], pi)
        assert responsibility_check(SwitchProblem(mdp, pi, CostSpec.zero()), rep)
        assert responsibility_check(SwitchProblem(mdp, pi, CostSpec.zero()), rep, 200, seed=3)
