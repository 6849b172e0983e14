"""Exact dynamic programming tests: the global product recursion against an
independent history-tree oracle, the local adversarial recursion, and the
multiplicative lower-bound certificate."""

import numpy as np
import pytest

from contractrl import (Dfa, InstanceSpec, MarkovGame, MdpNetwork,
                        certified_policy_value, compile_contract,
                        discounted_game_values, finite_horizon_game_values,
                        generate_random_instance, global_value_iteration,
                        local_value_iteration, verify_lower_bound)
from contractrl.dp import OracleUnavailableError
from contractrl.contracts import adversary_moves
from contractrl.games import NONE

from oracles import chain_discounted_value, global_value_history_tree


def reach_dfa(labels=("n", "y")):
    return Dfa(2, 0, [1], labels, [[0, 1], [1, 1]])


def accepting_dfa(labels):
    return Dfa(1, 0, [0], labels, [[0] * len(labels)])


class TestGlobalRecursion:
    def test_initially_accepting_state_pins_value_one(self):
        net, dfas = generate_random_instance(InstanceSpec(), 0)
        dfas = [accepting_dfa(net.components[0].alphabet),
                accepting_dfa(net.components[1].alphabet)]
        result = global_value_iteration(net, dfas, 4)
        for n in range(5):
            assert result.values[n][result.initial_key] == 1.0

    def test_horizon_zero_is_acceptance_indicator(self):
        net, dfas = generate_random_instance(InstanceSpec(), 1)
        result = global_value_iteration(net, dfas, 0)
        for key, v in result.values[0].items():
            expect = 1.0 if (key[2] in dfas[0].accepting
                             and key[3] in dfas[1].accepting) else 0.0
            assert v == expect

    def test_matches_history_tree_oracle(self):
        """State-space recursion against exhaustive expectimax over raw
        histories; agreement shows the memoized recursion is faithful."""
        for seed in range(30):
            net, dfas = generate_random_instance(
                InstanceSpec(states=2, actions=2, labels=2, dfa_states=2), seed)
            result = global_value_iteration(net, dfas, 3)
            want = global_value_history_tree(net, dfas, 3)
            assert result.value_at_initial() == pytest.approx(want, abs=1e-12), seed

    def test_horizon_monotone(self):
        for seed in range(10):
            net, dfas = generate_random_instance(InstanceSpec(), 100 + seed)
            result = global_value_iteration(net, dfas, 5)
            for n in range(5):
                for key in result.values[n]:
                    assert result.values[n + 1][key] >= result.values[n][key] - 1e-12

    def test_values_within_unit_interval(self):
        net, dfas = generate_random_instance(InstanceSpec(), 42)
        result = global_value_iteration(net, dfas, 5)
        for table in result.values:
            for v in table.values():
                assert -1e-12 <= v <= 1.0 + 1e-12

    def test_fixed_policies_never_beat_optimum(self):
        for seed in range(10):
            net, dfas = generate_random_instance(InstanceSpec(), 200 + seed)
            horizon = 4
            opt = global_value_iteration(net, dfas, horizon)
            loc = [local_value_iteration(net, i, dfas, horizon) for i in range(2)]
            fixed = global_value_iteration(net, dfas, horizon,
                                           policies=(loc[0].policy, loc[1].policy))
            assert fixed.value_at_initial() <= opt.value_at_initial() + 1e-9

    def test_extraction_produces_full_policies(self):
        net, dfas = generate_random_instance(InstanceSpec(), 77)
        result = global_value_iteration(net, dfas, 3, extract=True)
        evaluated = global_value_iteration(net, dfas, 3, policies=result.policies)
        assert evaluated.value_at_initial() == pytest.approx(
            result.value_at_initial(), abs=1e-12)

    def test_state_cap_enforced(self):
        net, dfas = generate_random_instance(InstanceSpec(states=4), 3)
        with pytest.raises(OracleUnavailableError):
            global_value_iteration(net, dfas, 2, cap=4)

    def test_three_components_unsupported(self):
        comp = MarkovGame(1, 0, 1, ["a"], ("a",),
                          transitions={(0, 0, ()): ((0, 1.0),)})
        net = MdpNetwork([comp, comp, comp], [(), (), ()])
        with pytest.raises(OracleUnavailableError):
            global_value_iteration(net, [accepting_dfa(("a",))] * 3, 2)


class TestLocalRecursion:
    def test_accepting_pair_pins_one(self):
        net, dfas = generate_random_instance(InstanceSpec(), 7)
        res = local_value_iteration(net, 0, dfas, 4)
        own, nbr = dfas
        for n in range(5):
            for (s, q, qj), v in res.values[n].items():
                if q in own.accepting and qj[0] in nbr.accepting:
                    assert v == 1.0

    def test_rejecting_own_state_pins_zero(self):
        net, dfas = generate_random_instance(InstanceSpec(sink_prob=1.0), 8)
        res = local_value_iteration(net, 0, dfas, 4)
        own = dfas[0]
        if own.rejecting:
            for n in range(5):
                for (s, q, qj), v in res.values[n].items():
                    if q in own.rejecting:
                        assert v == 0.0

    def test_horizon_monotone_and_bounded(self):
        for seed in range(10):
            net, dfas = generate_random_instance(InstanceSpec(), 300 + seed)
            res = local_value_iteration(net, 0, dfas, 5)
            for n in range(5):
                for key, v in res.values[n].items():
                    assert -1e-12 <= v <= 1.0 + 1e-12
                    assert res.values[n + 1][key] >= v - 1e-12

    def test_policy_evaluation_reproduces_values_exactly(self):
        """Replacing the max by the stored action must reproduce the value
        table; any loss would mean the extraction key is lossy."""
        for seed in range(20):
            net, dfas = generate_random_instance(
                InstanceSpec(states=3, actions=3, labels=2, dfa_states=3),
                400 + seed)
            horizon = 4
            res = local_value_iteration(net, 0, dfas, horizon)
            game = net.components[0]
            own = dfas[0]
            cache = {}
            vals = {k: v for k, v in res.values[0].items()}
            for n in range(horizon):
                table = res.policy.tables[n + 1]
                nxt = {}
                for key, prev_v in res.values[n + 1].items():
                    s, q, qj = key
                    if q in own.accepting and qj[0] in dfas[1].accepting:
                        nxt[key] = 1.0
                        continue
                    if q in own.rejecting:
                        nxt[key] = 0.0
                        continue
                    moves = adversary_moves(net, 0, dfas, qj, "limited",
                                            _cache=cache)
                    if not moves:
                        nxt[key] = 0.0
                        continue
                    q_next = own.step(q, game.label(s))
                    outer = None
                    for qj_next, refinements in moves:
                        a = table.get((s, q, qj, qj_next))
                        if a is None:
                            group = 0.0
                        else:
                            group = None
                            for env, _ in refinements:
                                ev = sum(p * vals[(s2, q_next, qj_next)]
                                         for (s2, p) in game.distribution(s, a, env))
                                if group is None or ev < group:
                                    group = ev
                        if outer is None or group < outer:
                            outer = group
                    nxt[key] = outer
                for key, v in nxt.items():
                    assert v == pytest.approx(res.values[n + 1][key], abs=1e-12)
                vals = nxt

    def test_none_mode_dominated_pointwise(self):
        for seed in range(25):
            net, dfas = generate_random_instance(InstanceSpec(), 500 + seed)
            lim = local_value_iteration(net, 0, dfas, 5)
            non = local_value_iteration(net, 0, dfas, 5, mode=NONE)
            for n in range(6):
                for key, v in non.values[n].items():
                    assert v <= lim.values[n][key] + 1e-9, (seed, n, key)

    def test_cap_enforced(self):
        net, dfas = generate_random_instance(InstanceSpec(states=4), 9)
        with pytest.raises(OracleUnavailableError):
            local_value_iteration(net, 0, dfas, 2, cap=3)


class TestLowerBound:
    def test_independent_components_give_equality(self):
        for seed in range(10):
            net, dfas = generate_random_instance(
                InstanceSpec(topology="independent"), 600 + seed)
            report = verify_lower_bound(net, dfas, 5)
            assert report.oracle_available
            assert report.bound_ok
            # independence makes the bound tight everywhere
            loc1 = local_value_iteration(net, 0, dfas, 5)
            loc2 = local_value_iteration(net, 1, dfas, 5)
            glob = global_value_iteration(net, dfas, 5)
            for (s1, s2, q1, q2), v in glob.values[5].items():
                prod = loc1.values[5][(s1, q1)] * loc2.values[5][(s2, q2)]
                assert v == pytest.approx(prod, abs=1e-9)

    def test_accepting_initial_pair_gives_one_on_both_sides(self):
        net, _ = generate_random_instance(InstanceSpec(), 12)
        dfas = [accepting_dfa(net.components[0].alphabet),
                accepting_dfa(net.components[1].alphabet)]
        report = verify_lower_bound(net, dfas, 3)
        assert report.global_initial[-1] == 1.0
        assert report.local_product_initial[-1] == 1.0

    def test_random_feedback_instances_certify(self):
        """Smaller sibling of the acceptance sweep: slack never below the
        tolerance and the composed policies generate at least the bound."""
        for seed in range(25):
            net, dfas = generate_random_instance(
                InstanceSpec(states=3, actions=2, labels=2, dfa_states=3),
                700 + seed)
            report = verify_lower_bound(net, dfas, 5)
            assert report.oracle_available
            assert report.min_slack >= -1e-9, seed
            assert report.composed_ok, seed

    def test_cap_exceeded_reports_local_side(self):
        net, dfas = generate_random_instance(InstanceSpec(states=4), 13)
        report = verify_lower_bound(net, dfas, 3, state_cap=2)
        assert not report.oracle_available
        assert report.min_slack is None
        assert len(report.local_product_initial) == 4
        assert report.to_json()["oracle_available"] is False


class TestGameDp:
    def test_chain_matches_closed_form(self):
        """Deterministic chain ending in a unit reward: discounted value is a
        pure power of the discount."""
        length = 5
        transitions = {}
        for s in range(length):
            transitions[(s, 0, ())] = ((s + 1, 1.0),)
        comp = MarkovGame(length + 1, 0, 1,
                          ["go"] * length + ["goal"], ("go", "goal"),
                          transitions={**transitions,
                                       (length, 0, ()): ((length, 1.0),)})
        net = MdpNetwork([comp], [()])
        dfa = Dfa(2, 0, [1], ("go", "goal"), [[0, 1], [1, 1]])
        game = compile_contract(net, 0, [dfa], discount=0.9)
        V, Q = discounted_game_values(game, 0.9)
        want = chain_discounted_value(length + 1, 0.9)
        assert V[game.initial] == pytest.approx(want, abs=1e-10)

    def test_finite_horizon_saturates(self):
        net, dfas = generate_random_instance(InstanceSpec(), 21)
        game = compile_contract(net, 0, dfas)
        v_small = finite_horizon_game_values(game, 3)
        v_large = finite_horizon_game_values(game, 9)
        assert np.all(v_large >= v_small - 1e-12)

    def test_certified_policy_value_never_beats_optimum(self):
        for seed in range(15):
            net, dfas = generate_random_instance(InstanceSpec(), 800 + seed)
            game = compile_contract(net, 0, dfas)
            res = local_value_iteration(net, 0, dfas, 6)
            plies = 6 * game.plies_per_round
            opt = finite_horizon_game_values(game, plies)[game.initial]
            cert = certified_policy_value(game, res.policy, plies)
            assert cert <= opt + 1e-9
