import numpy as np
import pytest
from hypothesis import given, strategies as st

from routepl.data import Route
from routepl.datagen import GeneratorConfig, generate_offer_set
from routepl.decision import (CandidateUser, Detour, IncentiveProblem, RideOffer, ServedUser, cancel_ride,
                              cluster_routes, expected_utility, incentive_odds, min_incentive,
                              optimize_incentive, rank_carpool, raw_unit_weights, select_routes)
from routepl.exceptions import NumericError, ValidationError
from routepl.model import TABLE1_MEANS, compute_weights
from routepl.scaling import RouteScaler

from conftest import random_features

SCALER = RouteScaler.from_moments([25.0, 10.0, 5.0], [10.0, 4.0, 3.0])
A = TABLE1_MEANS.reshape(-1)


def value_oracle(a, scaler, z, r):
    """Per-route value recomputed from scratch with explicit loops."""
    a = np.asarray(a).reshape(2, 7)
    logits = [0.0, float(a[0] @ z), float(a[1] @ z)]
    m = max(logits)
    e = [np.exp(x - m) for x in logits]
    w = [x / sum(e) for x in e]
    return -sum(w[j] * (r[j] - scaler.mean_[j]) / scaler.std_[j] for j in range(3))


# --- clustering -------------------------------------------------------------------

def test_cluster_n_equals_k_is_permutation():
    r = np.random.default_rng(0).uniform(0, 30, (6, 3))
    assert sorted(cluster_routes(r, 6).tolist()) == list(range(6))
    assert cluster_routes(r[:3], 5).tolist() == [0, 1, 2]


def test_cluster_k_one():
    r = np.random.default_rng(1).uniform(0, 30, (9, 3))
    assert np.all(cluster_routes(r, 1) == 0)


def test_cluster_errors():
    with pytest.raises(ValidationError):
        cluster_routes(np.ones((3, 3)), 0)
    with pytest.raises(ValidationError):
        cluster_routes(np.zeros((0, 3)), 2)


def best_two_partition(x):
    """Exhaustive minimum within-cluster sum of squares over all 2-partitions."""
    n = len(x)
    best, labels = np.inf, None
    for mask in range(1, 2 ** (n - 1)):
        lab = np.array([(mask >> i) & 1 for i in range(n)])
        cost = sum(np.sum((x[lab == g] - x[lab == g].mean(axis=0)) ** 2) for g in (0, 1))
        if cost < best:
            best, labels = cost, lab
    return labels


@pytest.mark.parametrize("seed", range(10))
def test_cluster_matches_brute_force_partition(seed):
    rng = np.random.default_rng(seed)
    n1 = int(rng.integers(2, 7))
    n2 = int(rng.integers(2, 7))
    x = np.vstack([rng.normal([10, 5, 2], 0.3, (n1, 3)), rng.normal([40, 20, 10], 0.3, (n2, 3))])
    x = x[rng.permutation(len(x))]
    xs = (x - x.mean(axis=0)) / x.std(axis=0)
    oracle = best_two_partition(xs)
    got = cluster_routes(x, 2, seed=seed)
    same = [{i for i in range(len(x)) if got[i] == g} for g in (0, 1)]
    want = [{i for i in range(len(x)) if oracle[i] == g} for g in (0, 1)]
    assert sorted(map(sorted, same)) == sorted(map(sorted, want))
    assert got[0] == 0  # first-appearance numbering


def test_cluster_coincident_points_still_fill_clusters():
    r = np.vstack([np.ones((5, 3)), 2 * np.ones((5, 3))])
    labels = cluster_routes(r, 4)
    assert len(np.unique(labels)) == 4


# --- route selection ---------------------------------------------------------------

def check_selection(a, z, cands, k, seed):
    idx = select_routes(a, SCALER, z, cands, k, seed)
    labels = cluster_routes(cands, k, seed)
    assert len(idx) == min(k, len(cands)) == len(set(idx.tolist()))
    assert sorted(labels[idx].tolist()) == sorted(np.unique(labels).tolist())
    v = np.array([value_oracle(a, SCALER, z, r) for r in cands])
    for i in idx:
        members = np.flatnonzero(labels == labels[i])
        best = v[members].max()
        assert v[i] >= best - 1e-12
        assert i == members[np.flatnonzero(v[members] >= best - 1e-12)[0]]
    return idx


def test_select_routes_within_cluster_argmax_500_instances():
    rng = np.random.default_rng(2)
    for trial in range(500):
        n = int(rng.integers(1, 25))
        k = int(rng.integers(1, 9))
        cands = rng.uniform(0, 60, (n, 3))
        check_selection(rng.normal(0, 2, 14), random_features(rng, 1)[0], cands, k, trial)


def test_select_routes_synthetic_twenty():
    cfg = GeneratorConfig(params=A, k=20, seed=4)
    cands = generate_offer_set(cfg, np.random.default_rng(4))
    z = random_features(np.random.default_rng(5), 1)[0]
    assert len(check_selection(A, z, cands, 4, 0)) == 4


def test_select_routes_time_only_weights_pick_fastest():
    # a = 0 with huge negative logits for the other classes: w -> (1, 0, 0)
    a = np.zeros(14)
    z = random_features(np.random.default_rng(6), 1)[0]
    a[:7] = -200.0 * np.sign(z + 1e-3)
    a[7:] = a[:7]
    assert np.allclose(compute_weights(a, z), [1, 0, 0])
    cands = np.random.default_rng(7).uniform(0, 60, (30, 3))
    idx = select_routes(a, SCALER, z, cands, 5, 1)
    labels = cluster_routes(cands, 5, 1)
    for i in idx:
        assert cands[i, 0] == cands[labels == labels[i], 0].min()


def test_select_routes_identical_candidates_deterministic():
    cands = np.tile([[20.0, 5.0, 3.0]], (10, 1))
    a = select_routes(A, SCALER, random_features(np.random.default_rng(0), 1)[0], cands, 3, 9)
    b = select_routes(A, SCALER, random_features(np.random.default_rng(0), 1)[0], cands, 3, 9)
    assert np.array_equal(a, b) and len(set(a.tolist())) == 3


def test_select_routes_scale_invariance():
    rng = np.random.default_rng(8)
    cands = rng.uniform(0, 60, (15, 3))
    z = random_features(rng, 1)[0]
    s = np.array([60.0, 0.01, 3.0])
    scaled = RouteScaler.from_moments(SCALER.mean_ * s, SCALER.std_ * s)
    assert np.array_equal(select_routes(A, SCALER, z, cands, 4, 3), select_routes(A, scaled, z, cands * s, 4, 3))


def test_select_routes_empty():
    with pytest.raises(ValidationError):
        select_routes(A, SCALER, random_features(np.random.default_rng(0), 1)[0], np.zeros((0, 3)), 2)


# --- car-pool ranking ---------------------------------------------------------------

RIDE = RideOffer(Route(30.0, 4.0, 2.0), capacity=3, driver_id="d")


def users(rng, n, **kw):
    z = random_features(rng, n)
    return [CandidateUser(f"u{i}", z[i], **{k: v[i] for k, v in kw.items()}) for i in range(n)]


def test_reduced_mobility_user_first():
    rng = np.random.default_rng(0)
    us = users(rng, 10, reduced_mobility=[i == 6 for i in range(10)])
    assert rank_carpool(RIDE, us, A, SCALER).order[0] == "u6"


def test_tier_one_by_walking_time():
    us = users(np.random.default_rng(1), 3, reduced_mobility=[True] * 3, walking_time_to_pickup=[5, 2, 9])
    res = rank_carpool(RIDE, us, A, SCALER)
    assert res.order == ["u1", "u0", "u2"]


def test_tier_three_descending_value():
    rng = np.random.default_rng(2)
    us = users(rng, 12)
    res = rank_carpool(RIDE, us, A, SCALER)
    v = {u.id: value_oracle(A, SCALER, u.features, RIDE.route.as_array()) for u in us}
    assert res.order == sorted(v, key=lambda i: -v[i])
    assert res.assigned == res.order[:3] and res.waiting == res.order[3:]
    for i in v:
        assert res.values[i] == pytest.approx(v[i], abs=1e-12)


def test_vetoes_removed():
    rng = np.random.default_rng(3)
    z = random_features(rng, 3)
    us = [CandidateUser("a", z[0], vetoes={"d"}), CandidateUser("b", z[1]), CandidateUser("c", z[2])]
    offer = RideOffer(RIDE.route, 2, "d", driver_vetoes={"c"})
    res = rank_carpool(offer, us, A, SCALER)
    assert res.order == ["b"] and sorted(res.excluded) == ["a", "c"]


def test_candidate_validation():
    with pytest.raises(ValidationError):
        CandidateUser("x", random_features(np.random.default_rng(0), 1)[0], walking_time_to_pickup=-1.0)
    with pytest.raises(ValidationError):
        RideOffer(RIDE.route, -1)


def test_tier_order_500_instances():
    rng = np.random.default_rng(4)
    for _ in range(500):
        n = int(rng.integers(1, 15))
        z = random_features(rng, n)
        us = []
        for i in range(n):
            savings = rng.choice([None, 0.0, float(rng.uniform(0.1, 3))])
            vet = {"d"} if rng.uniform() < 0.1 else set()
            us.append(CandidateUser(f"u{i}", z[i], bool(rng.uniform() < 0.3), float(rng.uniform(0, 15)),
                                    savings, vet))
        offer = RideOffer(Route(*rng.uniform(5, 50, 3)), int(rng.integers(0, 5)), "d",
                          {f"u{j}" for j in range(n) if rng.uniform() < 0.1})
        res = rank_carpool(offer, us, A, SCALER)
        by_id = {u.id: u for u in us}
        for uid in res.order:
            assert "d" not in by_id[uid].vetoes and uid not in offer.driver_vetoes
        tiers = [res.tiers[u] for u in res.order]
        assert tiers == sorted(tiers)
        for x, y in zip(res.order, res.order[1:]):
            ux, uy = by_id[x], by_id[y]
            if res.tiers[x] == res.tiers[y] == 1:
                assert ux.walking_time_to_pickup <= uy.walking_time_to_pickup
            elif res.tiers[x] == res.tiers[y] == 2:
                assert ux.emission_savings >= uy.emission_savings
            elif res.tiers[x] == res.tiers[y] == 3:
                assert res.values[x] >= res.values[y]
        assert len(res.order) + len(res.excluded) == n
        assert len(res.assigned) == min(offer.capacity, len(res.order))


def test_assignment_loop_with_cancellation():
    """Several rides offered in turn: seat the top of each list, let one rider
    cancel, and check the penalty pushes them down in the next ranking."""
    rng = np.random.default_rng(5)
    pool = users(rng, 8)
    rides = [RideOffer(Route(30.0, 4.0, 2.0), 2, "d1"), RideOffer(Route(30.0, 4.0, 2.0), 2, "d2")]
    penalties = {}
    seated = {}
    first = rank_carpool(rides[0], pool, A, SCALER, penalties=penalties)
    top = first.assigned[0]
    seated["d1"] = first.assigned
    penalties = cancel_ride(penalties, top)
    assert penalties == {top: -0.5}
    remaining = [u for u in pool if u.id not in seated["d1"] or u.id == top]
    second = rank_carpool(rides[1], remaining, A, SCALER, penalties=penalties)
    assert second.values[top] == pytest.approx(first.values[top] - 0.5)
    assert cancel_ride(penalties, top)[top] == -1.0
    ordered = sorted(second.values, key=lambda i: -second.values[i])
    assert second.order == ordered


def test_per_candidate_route():
    rng = np.random.default_rng(6)
    us = users(rng, 2)
    routes = {"u0": Route(60.0, 30.0, 20.0)}
    res = rank_carpool(RIDE, us, A, SCALER, route_per_candidate=routes)
    assert res.values["u0"] == pytest.approx(value_oracle(A, SCALER, us[0].features, np.array([60.0, 30.0, 20.0])))


# --- incentives ---------------------------------------------------------------------

def test_min_incentive_examples():
    assert min_incentive([1.0, 1.0, 0.0], Route(10, 5, 0), Route(20, 5, 0)).value == pytest.approx(10.0)
    assert min_incentive([0.6, 0.3, 0.0], Route(10, 5, 0), Route(20, 5, 0)).value == pytest.approx(20.0)
    neg = min_incentive([1.0, 1.0, 0.0], Route(20, 5, 0), Route(10, 5, 0))
    assert neg.is_negative and neg.floored == 0.0 and neg.value == pytest.approx(-10.0)
    with pytest.raises(NumericError):
        min_incentive([1.0, 0.0, 0.0], Route(10, 5, 0), Route(20, 5, 0))


def test_min_incentive_odds_one_1000_instances():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        w = np.array([rng.uniform(0.01, 1), rng.uniform(0.01, 1), rng.uniform(0, 1)])
        l1, l2 = rng.uniform(0, 60, 3), rng.uniform(0, 60, 3)
        i = min_incentive(w, l1, l2).value
        assert abs(incentive_odds(w, l1, l2, i) - 1.0) < 1e-10


def test_raw_unit_weights():
    assert np.allclose(raw_unit_weights([0.5, 0.4, 0.1], SCALER), [0.05, 0.1, 0.1 / 3])


def incentive_instance(rng, n_detours=1, n_pass=2, i_max=1.0, step=0.1, kappa=None):
    dets = []
    for _ in range(n_detours):
        served = tuple(ServedUser(random_features(rng, 1)[0], Route(*rng.uniform(5, 50, 3)),
                                  None if rng.uniform() < 0.5 else Route(*rng.uniform(5, 50, 3)))
                       for _ in range(n_pass))
        dets.append(Detour(Route(*rng.uniform(5, 50, 3)), served))
    return IncentiveProblem(random_features(rng, 1)[0], Route(*rng.uniform(5, 50, 3)), tuple(dets), i_max, step,
                            float(rng.uniform(0, 2)) if kappa is None else kappa)


def eu_oracle(problem, a, scaler, incentive):
    z_d = problem.driver_features
    v_base = value_oracle(a, scaler, z_d, problem.baseline.as_array())
    total = 0.0
    for det in problem.detours:
        r = det.route.as_array().copy()
        r[1] -= incentive
        v_d = value_oracle(a, scaler, z_d, r)
        p = 1.0 / (1.0 + np.exp(v_base - v_d))
        vs = 0.0
        for u in det.served:
            ride = (u.ride or det.route).as_array()
            v_r = value_oracle(a, scaler, u.features, ride)
            v_a = value_oracle(a, scaler, u.features, u.alternative.as_array())
            p *= 1.0 / (1.0 + np.exp(v_a - v_r))
            vs += v_r
        total += p * (vs + v_d)
    return total


def test_optimize_matches_enumeration_100_instances():
    rng = np.random.default_rng(8)
    for _ in range(100):
        prob = incentive_instance(rng, n_detours=int(rng.integers(1, 3)), n_pass=int(rng.integers(0, 3)),
                                  i_max=float(rng.uniform(0.5, 5)), step=float(rng.choice([0.1, 0.25, 0.5])))
        a = rng.normal(0, 1, 14)
        res = optimize_incentive(prob, a, SCALER)
        grid = [j * prob.step for j in range(int(round(prob.i_max / prob.step + 1e-9 - 0.5)) + 2)
                if j * prob.step <= prob.i_max + 1e-9]
        objs = [eu_oracle(prob, a, SCALER, g) - prob.kappa * g for g in grid]
        best = int(np.argmax(objs))
        assert len(res.grid) == len(grid)
        assert res.incentive == pytest.approx(grid[best], abs=1e-12)
        assert res.objective == pytest.approx(objs[best], rel=1e-10, abs=1e-12)


def test_small_instance_eleven_points():
    prob = incentive_instance(np.random.default_rng(9), n_detours=2, n_pass=2, i_max=1.0, step=0.1)
    assert len(prob.grid) == 11 and prob.grid[-1] == pytest.approx(1.0)
    eu = expected_utility(prob, A, SCALER, prob.grid)
    assert np.allclose(eu, [eu_oracle(prob, A, SCALER, g) for g in prob.grid], rtol=1e-12)


def test_preferred_detour_with_cost_gives_zero():
    z = random_features(np.random.default_rng(10), 1)[0]
    # detour dominates the baseline on every attribute; no passengers, negative value
    prob = IncentiveProblem(z, Route(60, 30, 20), (Detour(Route(50, 25, 15)),), 5.0, 0.1, kappa=5.0)
    res = optimize_incentive(prob, A, SCALER)
    assert res.incentive == 0.0


def test_kappa_zero_positive_utility_gives_i_max():
    z = random_features(np.random.default_rng(11), 1)[0]
    prob = IncentiveProblem(z, Route(10, 2, 1), (Detour(Route(12, 3, 1)),), 3.0, 0.1, kappa=0.0)
    assert np.all(np.diff(expected_utility(prob, A, SCALER, prob.grid)) > 0)
    assert optimize_incentive(prob, A, SCALER).incentive == pytest.approx(3.0)


def test_incentive_problem_validation():
    z = random_features(np.random.default_rng(12), 1)[0]
    for kw in ({"i_max": 0.0}, {"step": 0.0}, {"kappa": -1.0}):
        args = {"i_max": 1.0, "step": 0.1, "kappa": 0.0, **kw}
        with pytest.raises(ValidationError):
            IncentiveProblem(z, Route(1, 1, 1), (Detour(Route(2, 2, 2)),), **args)
    with pytest.raises(ValidationError):
        IncentiveProblem(z, Route(1, 1, 1), (), 1.0)


@given(st.floats(0.05, 10), st.sampled_from([0.1, 0.2, 0.5, 1.0]))
def test_grid_endpoints(i_max, step):
    z = np.array([1.0, 0, 0, 0.5, 0, 0.5, 0])
    g = IncentiveProblem(z, Route(1, 1, 1), (Detour(Route(2, 2, 2)),), i_max, step).grid
    assert g[0] == 0.0 and g[-1] <= i_max + 1e-9 and g[-1] + step > i_max - 1e-9
