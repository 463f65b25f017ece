import numpy as np
import pytest

from ehdfl.channel import RadioParams
from ehdfl.energy import EnergyParams, HarvestModel
from ehdfl.errors import BudgetExceeded
from ehdfl.harness import exhaustive_minimum
from ehdfl.instances import capacity_family, oracle_instance, tiny_instances
from ehdfl.mdp import (FixedLevelsPolicy, GlobalState, backward_induction,
                       build_mdp, evaluate_policy, expected_cost_rows,
                       load_solution, propagate, simulate_costs)
from ehdfl.topology import build_topology


@pytest.fixture(scope="module")
def pair():
    return oracle_instance()


@pytest.fixture(scope="module")
def tiny_a():
    inst = tiny_instances()["tiny-a"]
    return inst.mdp, inst.s1


def test_state_round_trip(pair):
    mdp, _ = pair
    for s in range(mdp.n_states):
        assert mdp.state_index(mdp.state_decode(s)) == s


def test_action_round_trip(pair):
    mdp, _ = pair
    for a in range(mdp.n_actions):
        assert mdp.action_index(mdp.action_decode(a)) == a


def test_feasibility_blocks_empty_battery(pair):
    mdp, _ = pair
    feas = mdp.action_feasibility
    for b_idx in range(mdp.n_battery_cfgs):
        bats = np.unravel_index(b_idx, mdp.bat_dims)
        for a in range(mdp.n_actions):
            levels = mdp.action_decode(a)
            if feas[a, b_idx]:
                continue
            # Some device must be asking for more quanta than it holds.
            assert any(mdp.power_levels[d][l] > 0 and bats[d] == 0
                       for d, l in enumerate(levels))
    # The all-silent action is feasible everywhere.
    assert feas[0].all()


def test_transition_rows_are_distributions(pair):
    mdp, _ = pair
    feas = mdp.action_feasibility
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            if not feas[a, s % mdp.n_battery_cfgs]:
                continue
            dist = mdp.transition(s, a)
            probs = np.array(list(dist.values()))
            assert (probs > 0).all()
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)
            assert all(0 <= s2 < mdp.n_states for s2 in dist)


def test_transition_raises_on_infeasible_action(pair):
    from ehdfl.errors import CausalityViolation
    mdp, _ = pair
    # Both devices empty, both asked to transmit: energy causality fails.
    s = mdp.state_index(GlobalState(gains=(0,), batteries=(0, 0)))
    with pytest.raises(CausalityViolation):
        mdp.transition(s, mdp.n_actions - 1)


def test_frozen_instance_transitions_are_deterministic(tiny_a):
    mdp, s1 = tiny_a
    s = mdp.state_index(s1)
    for a in range(mdp.n_actions):
        dist = mdp.transition(s, a)
        assert len(dist) == 1
        assert dist[s] == pytest.approx(1.0)


def test_cost_table_matches_pointwise(pair):
    mdp, _ = pair
    tbl = mdp.cost_table()
    rng = np.random.default_rng(2)
    for _ in range(200):
        s = int(rng.integers(mdp.n_states))
        a = int(rng.integers(mdp.n_actions))
        assert tbl[s // mdp.n_battery_cfgs, a] == pytest.approx(
            mdp.one_step_cost(s, a), abs=1e-14)


@pytest.mark.parametrize("which", ["pair", "tiny"])
def test_device_cost_decomposition(which, pair, tiny_a):
    mdp, _ = pair if which == "pair" else tiny_a
    rng = np.random.default_rng(0)
    for _ in range(1000):
        s = int(rng.integers(mdp.n_states))
        a = int(rng.integers(mdp.n_actions))
        total = mdp.one_step_cost(s, a)
        parts = sum(mdp.device_cost(s, a, i) for i in range(mdp.m))
        assert abs(total - parts) <= 1e-12


def dict_backward_induction(mdp):
    """Naive reference DP built from the scalar model calls only."""
    feas = mdp.action_feasibility
    nbc = mdp.n_battery_cfgs
    v_next = {s: 0.0 for s in range(mdp.n_states)}
    values = []
    for _ in range(mdp.horizon, 0, -1):
        v = {}
        for s in range(mdp.n_states):
            best = np.inf
            for a in range(mdp.n_actions):
                if not feas[a, s % nbc]:
                    continue
                q = mdp.one_step_cost(s, a)
                for s2, p in mdp.transition(s, a).items():
                    q += p * v_next[s2]
                if q < best:
                    best = q
            v[s] = best
        values.insert(0, v)
        v_next = v
    return values


def test_vectorized_dp_matches_dict_dp(pair):
    mdp, _ = pair
    sol = backward_induction(mdp)
    ref = dict_backward_induction(mdp)
    for t in range(mdp.horizon):
        for s in range(mdp.n_states):
            assert sol.values[t][s] == pytest.approx(ref[t][s], abs=1e-12)


def test_dp_matches_exhaustive_enumeration(pair):
    mdp, s1 = pair
    sol = backward_induction(mdp)
    assert abs(sol.expected_cost(s1) - exhaustive_minimum(mdp, s1)) <= 1e-9


def test_q_row_consistent_with_values(pair):
    mdp, _ = pair
    sol = backward_induction(mdp)
    for t in (1, mdp.horizon):
        for s in range(mdp.n_states):
            row = sol.q_row(t, s)
            assert np.nanmin(row[np.isfinite(row)]) == pytest.approx(
                sol.value(t, s), abs=1e-12)
            assert row[sol.tables[t - 1][s]] == pytest.approx(
                sol.value(t, s), abs=1e-12)


def test_ties_resolve_to_lowest_action_index():
    # Two devices with identical ladders on a symmetric pair: the argmin scan
    # requires strict improvement, so equal-Q actions keep the smaller index.
    topo = build_topology("line", 2)
    energy = EnergyParams(k_steps=1, cpu_freq=1.0, cycles_per_sample=0.0,
                          batch_size=1, tau=1.0, b_max=1.0, n_levels=2)
    from ehdfl.channel import ChannelChain
    chain = ChannelChain(levels=np.array([1.0]), steady=np.array([1.0]),
                         psi=np.array([[1.0]]))
    mdp = build_mdp(topo, RadioParams(1.0, (0.4, 0.4), 1.0), energy, [chain],
                    HarvestModel(support=np.array([1.0]), probs=np.array([1.0])),
                    power_levels=[0.0, 1.0], horizon=1)
    sol = backward_induction(mdp)
    s = mdp.state_index(GlobalState(gains=(0,), batteries=(1, 1)))
    best = sol.tables[0][s]
    row = sol.q_row(1, s)
    ties = np.flatnonzero(np.isclose(row, row[best], atol=1e-15))
    assert best == ties.min()


def test_capacity_growth_never_hurts():
    js = []
    for n_levels in (2, 3, 4):
        mdp, s1 = capacity_family(n_levels)
        js.append(backward_induction(mdp).expected_cost(s1))
    assert js[0] >= js[1] >= js[2]


def test_exact_evaluator_matches_deterministic_cost(pair):
    mdp, _ = pair
    pol = FixedLevelsPolicy((1, 0))
    conds = pol.conditionals(mdp, 1)
    rows = expected_cost_rows(mdp, conds)
    a = mdp.action_index((1, 0))
    for s in range(mdp.n_states):
        assert rows[s] == pytest.approx(mdp.one_step_cost(s, a), abs=1e-12)


class UniformPolicy:
    """Uniform over all level combinations, for evaluator cross-checks."""

    def act(self, mdp, s_idx, t, rng):
        return tuple(int(rng.integers(n)) for n in mdp.act_dims)

    def conditionals(self, mdp, t):
        return [np.full((mdp.n_states, n), 1.0 / n) for n in mdp.act_dims]


def test_exact_evaluator_matches_joint_enumeration(pair):
    mdp, _ = pair
    rows = expected_cost_rows(mdp, UniformPolicy().conditionals(mdp, 1))
    n_a = mdp.n_actions
    for s in range(mdp.n_states):
        brute = sum(mdp.one_step_cost(s, a) for a in range(n_a)) / n_a
        assert rows[s] == pytest.approx(brute, abs=1e-12)


def test_propagate_matches_transition_pushforward(pair):
    mdp, s1 = pair
    pol = FixedLevelsPolicy((0, 1))
    conds = pol.conditionals(mdp, 1)
    rho = np.zeros(mdp.n_states)
    rho[mdp.state_index(s1)] = 1.0
    pushed = propagate(mdp, rho, conds)
    a = mdp.action_index((0, 1))
    ref = np.zeros(mdp.n_states)
    for s2, p in mdp.transition(mdp.state_index(s1), a).items():
        ref[s2] += p
    assert np.allclose(pushed, ref, atol=1e-12)


def test_exact_vs_monte_carlo_evaluation(pair):
    mdp, s1 = pair
    from ehdfl.baselines import GreedyPolicy
    pol = GreedyPolicy(mdp)
    exact = evaluate_policy(mdp, pol, s1)
    mean, se = evaluate_policy(mdp, pol, s1, mode="mc", n_samples=4000, seed=9)
    assert abs(exact - mean) < 4 * se + 1e-6


def test_simulate_costs_deterministic_given_seed(pair):
    mdp, s1 = pair
    from ehdfl.baselines import GreedyPolicy
    a = simulate_costs(mdp, GreedyPolicy(mdp), s1, n_samples=50, seed=4)
    b = simulate_costs(mdp, GreedyPolicy(mdp), s1, n_samples=50, seed=4)
    assert (a == b).all()


def test_solution_round_trip(tmp_path, pair):
    mdp, s1 = pair
    sol = backward_induction(mdp)
    sol.save(tmp_path / "sol.npz")
    back = load_solution(tmp_path / "sol.npz", mdp)
    assert back.expected_cost(s1) == sol.expected_cost(s1)
    assert all((a == b).all() for a, b in zip(back.tables, sol.tables))
    assert (tmp_path / "sol.manifest.txt").exists()


def test_solution_rejects_wrong_model(tmp_path, pair, tiny_a):
    mdp, _ = pair
    other, _ = tiny_a
    sol = backward_induction(mdp)
    sol.save(tmp_path / "sol.npz")
    with pytest.raises(ValueError, match="different model"):
        load_solution(tmp_path / "sol.npz", other)


def test_budget_guard_names_the_product(pair):
    mdp, _ = pair
    with pytest.raises(BudgetExceeded, match=str(mdp.n_states * mdp.n_actions)):
        backward_induction(mdp, budget=4)
