import numpy as np
import pytest
from conftest import line_table, order, shipper, tiny_config
from hypothesis import given
from hypothesis import strategies as st
from oracles import brute_force_ilp

from crowdship.config import POLICIES, POLICY_LABELS
from crowdship.economics import FeeSchedule
from crowdship.environment import CrowdShippingEnv
from crowdship.matching import build_instance, solve
from crowdship.nn import Mlp, TargetPair
from crowdship.policies import (DdqnPricing, EpochContext, FixedPricing, GreedyMatching, NeurAdpMatching,
                                compose, greedy_decide, post_decision_features, pricing_state_features)
from crowdship.routing import feasible_pair_arrays
from crowdship.simulation import build_policy, build_table, run_episode

FEES = FeeSchedule()
MULTS = FEES.multipliers
CTX = EpochContext(10, 5, 780, 18)


def zero_pair(num_features):
    return TargetPair.from_online(Mlp(8, num_features, 3, (4, 4, 4), init=False), 0.01)


def random_scene(seed, n_orders=5, n_shippers=3, kappa=2):
    rng = np.random.default_rng(seed)
    table = line_table(rng.uniform(-6, 6, size=(8, 2)))
    orders = [order(i, int(rng.integers(1, 8)), epochs=int(rng.integers(0, 6)),
                    mult=float(rng.choice(MULTS))) for i in range(n_orders)]
    shippers = [shipper(10 + j, int(rng.integers(1, 8))) for j in range(n_shippers)]
    return orders, shippers, feasible_pair_arrays(orders, shippers, kappa, 0.0, table)


def test_fixed_pricing():
    orders = [order(i, 1) for i in range(4)]
    assert np.all(FixedPricing(1.0).price(orders, CTX) == 1.0)


def test_zero_network_picks_smallest_multiplier():
    pol = DdqnPricing(zero_pair(3 + len(MULTS)), MULTS)
    assert np.all(pol.price([order(i, i % 8) for i in range(6)], CTX) == 0.8)


def test_stub_q_values_pick_argmin():
    pol = DdqnPricing(zero_pair(3 + len(MULTS)), MULTS)
    pol.q_fn = lambda orders, ctx: np.abs(np.tile(MULTS, (len(orders), 1)) - 1.1)
    assert np.all(pol.price([order(i, 1) for i in range(3)], CTX) == 1.1)


@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_prices_always_from_menu(seed, eps):
    rng = np.random.default_rng(seed)
    pol = DdqnPricing(TargetPair.from_online(Mlp(8, 3 + len(MULTS), 3, (4, 4, 4), seed=seed), 0.01), MULTS,
                      epsilon=eps, temperature=0.5)
    prices = pol.price([order(i, int(rng.integers(0, 8)), epochs=int(rng.integers(0, 18))) for i in range(7)],
                       CTX, explore=True, rng=rng)
    assert set(prices.tolist()) <= set(MULTS)


def test_exploration_draws_every_multiplier():
    pol = DdqnPricing(zero_pair(3 + len(MULTS)), MULTS, epsilon=1.0)
    prices = pol.price([order(i, 1) for i in range(500)], CTX, explore=True, rng=np.random.default_rng(0))
    assert set(prices.tolist()) == set(MULTS)


def test_features_are_normalised():
    orders = [order(i, 1, epochs=e) for i, e in enumerate((0, 5, 18))]
    s = pricing_state_features(orders, CTX)
    assert np.allclose(s[:, 0], [0, 5 / 18, 1]) and np.allclose(s[:, 1], 50 / 780) and np.allclose(s[:, 2], 3 / 50)
    v = post_decision_features(orders, CTX)
    assert np.allclose(v[:, 0], [0, 4 / 18, 17 / 18]) and np.allclose(v[:, 1], 55 / 780)


def test_zero_values_equal_myopic_ilp():
    for seed in range(20):
        orders, shippers, pa = random_scene(seed)
        pol = NeurAdpMatching(zero_pair(2), 0.0)
        out = pol.decide(orders, shippers, pa, CTX, FEES)
        inst, _ = build_instance(pa.batches, pa.shipper, pa.detour_minutes, orders, len(shippers),
                                 np.zeros(len(orders)), FEES)
        assert out.solution.chosen_pairs == solve(inst).chosen_pairs
        assert np.all(out.v_hat == 0.0)


def test_huge_value_forces_match():
    hits = 0
    for seed in range(40):
        orders, shippers, pa = random_scene(seed)
        orders[0].remaining_epochs = 3
        pol = NeurAdpMatching(zero_pair(2), 0.0)
        pol.v_fn = lambda os_, ctx: np.array([1e6 if o.id == 0 else 0.0 for o in os_])
        out = pol.decide(orders, shippers, pa, CTX, FEES)
        covers = [p for p in range(len(pa)) if 0 in pa.batches[p, :pa.sizes[p]].tolist()]
        inst = out.instance
        obj, vec = brute_force_ilp(inst.pair_orders, inst.pair_shipper, inst.match_coef, inst.delay_coef,
                                   inst.num_shippers)
        assert out.solution.objective == pytest.approx(obj, abs=1e-6)
        if covers:
            hits += 1
            assert 0 not in out.solution.delayed
    assert hits > 10


def test_no_shippers_delays_everything():
    orders, _, _ = random_scene(0)
    pa = feasible_pair_arrays(orders, [], 2, 0.0, line_table([[0, 0]] + [[1, 1]] * 7))
    out = NeurAdpMatching(zero_pair(2), 0.0).decide(orders, [], pa, CTX, FEES)
    assert out.solution.chosen_pairs == () and out.solution.delayed == tuple(range(len(orders)))
    g = greedy_decide(orders, [], pa)
    assert g.chosen_pairs == () and g.delayed == tuple(range(len(orders)))


def test_greedy_serves_most_urgent_first():
    table = line_table([[0, 0], [5, 0], [6, 0], [7, 0]])
    orders = [order(0, 1, epochs=5), order(1, 2, epochs=1)]
    pa = feasible_pair_arrays(orders, [shipper(3, 3)], 1, 0.0, table)
    assert len(pa) == 2
    sol = greedy_decide(orders, [shipper(3, 3)], pa)
    assert [int(pa.batches[p, 0]) for p in sol.chosen_pairs] == [1] and sol.delayed == (0,)


def test_greedy_picks_smallest_detour():
    # homes placed so the detours are exactly 3 and 7 minutes
    table = line_table([[0, 0], [10, 0], [10, 51 / 14], [10, 91 / 6]])
    orders = [order(0, 1)]
    shippers = [shipper(1, 3), shipper(2, 2)]
    pa = feasible_pair_arrays(orders, shippers, 1, 0.0, table)
    assert sorted(np.round(pa.detour_minutes, 9).tolist()) == [3.0, 7.0]
    sol = greedy_decide(orders, shippers, pa)
    (p,) = sol.chosen_pairs
    assert shippers[int(pa.shipper[p])].id == 2 and pa.detour_minutes[p] == pytest.approx(3.0)


def test_greedy_delays_unreachable_order():
    table = line_table([[0, 0], [50, 0], [1, 0]])
    orders = [order(0, 1, deadline=30.0)]
    pa = feasible_pair_arrays(orders, [shipper(0, 2)], 1, 0.0, table)
    assert len(pa) == 0 and greedy_decide(orders, [shipper(0, 2)], pa).delayed == (0,)


def _greedy_assignment(orders, shippers, pa):
    sol = greedy_decide(orders, shippers, pa)
    return sorted((tuple(sorted(orders[int(i)].id for i in pa.batches[p, :pa.sizes[p]])),
                   shippers[int(pa.shipper[p])].id) for p in sol.chosen_pairs)


@given(st.integers(0, 10_000), st.randoms(use_true_random=False))
def test_greedy_is_feasible_and_order_invariant(seed, rnd):
    orders, shippers, pa = random_scene(seed, n_orders=6, n_shippers=4)
    base = _greedy_assignment(orders, shippers, pa)
    used_o = [i for b, _ in base for i in b]
    used_s = [s for _, s in base]
    assert len(used_o) == len(set(used_o)) and len(used_s) == len(set(used_s))
    orders2, shippers2 = orders[:], shippers[:]
    rnd.shuffle(orders2)
    rnd.shuffle(shippers2)
    table = line_table(np.random.default_rng(seed).uniform(-6, 6, size=(8, 2)))
    pa2 = feasible_pair_arrays(orders2, shippers2, 2, 0.0, table)
    assert _greedy_assignment(orders2, shippers2, pa2) == base


def test_single_pair_agrees_with_ilp_when_matching_is_optimal():
    table = line_table([[0, 0], [4, 0], [5, 0]])
    for mult in MULTS:
        orders = [order(0, 1, epochs=0, mult=mult)]
        shippers = [shipper(0, 2)]
        pa = feasible_pair_arrays(orders, shippers, 1, 0.0, table)
        ilp = NeurAdpMatching(zero_pair(2), 0.0).decide(orders, shippers, pa, CTX, FEES).solution
        greedy = GreedyMatching().decide(orders, shippers, pa, CTX, FEES).solution
        assert ilp.chosen_pairs == greedy.chosen_pairs == (0,)


def test_compose_labels_and_names():
    names = set()
    for pol in POLICIES:
        cfg = tiny_config(policy=pol)
        p = build_policy(cfg, build_table(cfg).num_locations)
        assert p.name == pol
        names.add(POLICY_LABELS[p.name])
    assert names == {"N+D", "N+F", "G+D", "G+F"}
    assert compose(FixedPricing(), GreedyMatching()).name == "greedy+fixed"


def test_composed_policy_sets_prices_before_matching():
    orders, shippers, pa = random_scene(3)
    pol = compose(FixedPricing(1.2), GreedyMatching())
    pol.price(orders, CTX)
    assert all(o.current_multiplier == 1.2 for o in orders)


@pytest.mark.parametrize("name", POLICIES)
def test_evaluation_mode_is_deterministic(name):
    cfg = tiny_config(policy=name)
    table = build_table(cfg)
    env = CrowdShippingEnv(cfg.env, cfg.fees, table)
    runs = []
    for _ in range(2):
        pol = build_policy(cfg, table.num_locations)
        runs.append(run_episode(cfg, env, pol, 5, 0).to_dict())
    assert runs[0] == runs[1]
