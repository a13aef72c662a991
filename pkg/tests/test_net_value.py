import numpy as np
import pytest

import golden
from netswitch import fixtures as F
from netswitch.cost import CostSpec, CustomCostTable, tiered_cost_table, cost
from netswitch.errors import UnsupportedDiscountError
from netswitch.mdp import FiniteMdp, TabularPolicy, evaluate_exact, evaluate_infinite
from netswitch.net_value import (CandidateSet, SwitchProblem, net_bellman_apply,
                                 net_q_fixed_point, net_value_exact, nontriviality_witness,
                                 stay_value, switch_optimal_search, truncation_bound,
                                 value_argmax)


def random_instance(rng, S=None, A=None):
    S = S or int(rng.integers(1, 9))
    A = A or int(rng.integers(1, 5))
    mdp = FiniteMdp(rng.dirichlet(np.ones(S), size=(S, A)), rng.uniform(-1, 1, (S, A)), 20,
                    float(rng.uniform(0.1, 0.99)), 0)
    pi = TabularPolicy(rng.dirichlet(np.ones(A), size=S))
    return mdp, pi


class TestTwoStateGolden:
    @pytest.mark.parametrize("pid,s0", sorted(golden.VALUES))
    def test_values(self, pid, s0):
        V, _ = evaluate_exact(F.two_state_mdp(s0), F.two_state_policies()[pid])
        assert V[s0] == golden.VALUES[(pid, s0)]

    @pytest.mark.parametrize("pid,s0", sorted(golden.NET_VALUES))
    def test_net_values(self, pid, s0):
        v, _, _ = net_value_exact(F.two_state_problem(s0), F.two_state_policies()[pid])
        assert v == golden.NET_VALUES[(pid, s0)]

    @pytest.mark.parametrize("pid,a", sorted(golden.NET_Q_AT_ALPHA))
    def test_net_q(self, pid, a):
        _, _, qn = net_value_exact(F.two_state_problem(F.ALPHA), F.two_state_policies()[pid])
        assert qn[F.ALPHA, a] == golden.NET_Q_AT_ALPHA[(pid, a)]

    def test_costs(self):
        pols = F.two_state_policies()
        for pid, c in golden.SWITCH_COSTS.items():
            assert cost(tiered_cost_table(), pols["old"], pols[pid]) == c

    def test_stay_value(self):
        assert stay_value(F.two_state_problem(F.ALPHA)) == golden.VALUES[("old", 0)]

    def test_switch_optimal_depends_on_start_state(self):
        a = switch_optimal_search(F.two_state_problem(F.ALPHA), CandidateSet.parse("det"))
        b = switch_optimal_search(F.two_state_problem(F.BETA), CandidateSet.parse("det"))
        assert a.best_id == "det:0,0" and a.v_net == 75
        assert b.v_net == 50
        assert not a.best.row_equal(b.best).all()

    def test_grid_search_agrees(self):
        res = switch_optimal_search(F.two_state_problem(F.ALPHA), CandidateSet.parse("grid:2"))
        assert res.best_id == "det:0,0" and res.v_net == 75


class TestNetBellman:
    def test_contraction(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            mdp, pi = random_instance(rng)
            pr = SwitchProblem(mdp, TabularPolicy.uniform(mdp.n_states, mdp.n_actions),
                               CostSpec.local(mdp.n_states))
            q1, q2 = rng.normal(0, 10, (2,) + pi.probs.shape)
            lhs = np.max(np.abs(net_bellman_apply(pr, pi, q1) - net_bellman_apply(pr, pi, q2)))
            assert lhs <= mdp.discount * np.max(np.abs(q1 - q2)) + 1e-12

    def test_fixed_point(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            mdp, pi = random_instance(rng)
            pr = SwitchProblem(mdp, TabularPolicy.uniform(mdp.n_states, mdp.n_actions),
                               CostSpec.transport([a % 2 for a in range(mdp.n_actions)], 2.0, 0.5)
                               if mdp.n_actions > 1 else CostSpec.local(mdp.n_states))
            q = net_q_fixed_point(pr, pi)
            want = evaluate_infinite(mdp, pi) - pr.switch_cost(pi)
            np.testing.assert_allclose(q, want, atol=1e-8)
            np.testing.assert_allclose(net_bellman_apply(pr, pi, q), q, atol=1e-9)

    def test_needs_discount(self):
        with pytest.raises(UnsupportedDiscountError):
            net_bellman_apply(F.two_state_problem(), F.two_state_policies()["n1"], np.zeros((2, 2)))


class TestSearch:
    def test_ties_go_to_incumbent(self):
        mdp = FiniteMdp(np.ones((1, 2, 1)), np.zeros((1, 2)), 3, 0.9)
        pr = SwitchProblem(mdp, TabularPolicy.deterministic([0], 2), CostSpec.zero())
        res = switch_optimal_search(pr, CandidateSet.parse("det"))
        assert res.best_id == "old"
        assert [e.policy_id for e in res.ranking] == ["old", "det:0", "det:1"]

    def test_ties_between_candidates_go_to_first(self):
        mdp = FiniteMdp(np.ones((1, 3, 1)), np.array([[0.0, 1.0, 1.0]]), 2, 0.9)
        pr = SwitchProblem(mdp, TabularPolicy.deterministic([0], 3), CostSpec.zero())
        assert switch_optimal_search(pr, CandidateSet.parse("det")).best_id == "det:1"

    def test_brute_force_matches_explicit(self):
        rng = np.random.default_rng(2)
        mdp, pi_o = random_instance(rng, S=3, A=2)
        pr = SwitchProblem(mdp, pi_o, CostSpec.transport((0, 1), 1.0, 0.2))
        res = switch_optimal_search(pr, CandidateSet.parse("det"))
        pols = [TabularPolicy.deterministic([a, b, c], 2)
                for a in range(2) for b in range(2) for c in range(2)]
        nets = [net_value_exact(pr, p)[0] for p in pols]
        want = max(max(nets), stay_value(pr))
        assert res.v_net == pytest.approx(want, abs=1e-12)
        assert len(res.ranking) == 9
        assert res.format_ranking().splitlines()[0] == "rank, policy_id, value, cost, net_value"

    def test_candidate_ids(self):
        ids = [pid for pid, _ in CandidateSet.parse("grid:2").enumerate(1, 2)]
        assert ids == ["det:1", "grid2:1", "det:0"]
        assert CandidateSet.parse("det").size(3, 4) == 64
        with pytest.raises(ValueError):
            CandidateSet.parse("all")

    def test_candidate_cap(self):
        with pytest.raises(ValueError):
            list(CandidateSet.parse("det").enumerate(30, 4))

    def test_explicit_set(self):
        pols = F.two_state_policies()
        cs = CandidateSet.explicit([pols["n1"], pols["n3"]], ["stay", "go"])
        res = switch_optimal_search(F.two_state_problem(F.ALPHA), cs)
        assert res.best_id == "stay"


class TestWitness:
    def test_value_optimal_is_not_switch_optimal(self):
        mdp = F.chain_mdp(horizon=50)
        cands = CandidateSet.parse("det")
        pi_o = F.chain_policies()["suboptimal"]
        table = nontriviality_witness(mdp, pi_o, cands)
        assert isinstance(table, CustomCostTable)
        _, star, _ = value_argmax(mdp, cands)
        res = switch_optimal_search(SwitchProblem(mdp, pi_o, table), cands)
        assert not res.best.row_equal(star).all()

    def test_no_witness_when_values_flat(self):
        mdp = FiniteMdp(np.ones((1, 2, 1)), np.ones((1, 2)), 4, 0.5)
        assert nontriviality_witness(mdp, TabularPolicy.uniform(1, 2), CandidateSet.parse("det")) is None


def test_truncation_bound():
    rng = np.random.default_rng(3)
    for _ in range(20):
        mdp, pi = random_instance(rng)
        V, _ = evaluate_exact(mdp, pi)
        v_inf = np.sum(pi.probs * evaluate_infinite(mdp, pi), axis=1)
        assert np.max(np.abs(V - v_inf)) <= truncation_bound(mdp) + 1e-12
