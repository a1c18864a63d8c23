import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capdual import (CostSpec, FeedbackChannel, GaussianOnOff, blahut_penalized, bsc, capacity_C3,
                     constrained_capacity, dual_L3, f3, f4, gaussian_onoff_curves, mutual_information,
                     primal_R3, unconstrained_capacity)
from capdual.feedback_solver import (DEFAULT_NOISE_VARS, DEFAULT_STATE_PROBS, onoff_curve, onoff_envelope,
                                     onoff_gap_interval, stationary_power)

THREE = FeedbackChannel([0.3, 0.4, 0.3], np.stack([np.eye(2), bsc(0.2).probs, bsc(0.5).probs]), 2)
COST = [0.0, 1.0]


def random_feedback_channel(rng, n_states=2, x=2, y=2, size=2):
    pv = rng.dirichlet(np.ones(n_states))
    W = rng.dirichlet(np.ones(y) * 0.6, size=(n_states, x))
    return FeedbackChannel(pv, W, size)


def test_f3_single_letter_is_receiver_csi_rate():
    ch = FeedbackChannel([0.3, 0.4, 0.3], THREE.transition.probs, 1)
    p = np.array([[0.4, 0.6]])
    ref = sum(pv * mutual_information(p[0], W) for pv, W in zip([0.3, 0.4, 0.3], THREE.transition.probs))
    assert f3(ch, np.ones((3, 1)), p) == pytest.approx(ref, abs=1e-12)


def test_f3_identity_feedback_sums_state_capacities():
    ch = FeedbackChannel([0.3, 0.4, 0.3], THREE.transition.probs, 3)
    caps, laws = zip(*(unconstrained_capacity(W) for W in THREE.transition.probs))
    f2 = np.stack([p.probs for p in laws])
    assert f3(ch, np.eye(3), f2) == pytest.approx(float(np.dot([0.3, 0.4, 0.3], caps)), abs=1e-9)


def test_f3_ignores_feedback_when_laws_agree():
    rng = np.random.default_rng(1)
    f2 = np.tile([0.3, 0.7], (2, 1))
    vals = [f3(THREE, rng.dirichlet(np.ones(2), size=3), f2) for _ in range(5)]
    assert np.ptp(vals) < 1e-12


def test_f4_identities():
    rng = np.random.default_rng(2)
    f1 = rng.dirichlet(np.ones(2), size=3)
    f2 = rng.dirichlet(np.ones(2), size=2)
    cost = CostSpec(COST, 0.3)
    assert f4(THREE, f1, f2, cost, 0.0) == pytest.approx(f3(THREE, f1, f2))
    zero = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert f4(THREE, f1, zero, cost, 2.0) == pytest.approx(f3(THREE, f1, zero) + 2.0 * 0.3)


def test_perfect_feedback_at_lambda_zero():
    ch = FeedbackChannel([0.3, 0.4, 0.3], THREE.transition.probs, 3)
    best = max(a.rate for a in dual_L3(ch, COST, 0.0))
    caps = [unconstrained_capacity(W)[0] for W in THREE.transition.probs]
    assert best == pytest.approx(float(np.dot([0.3, 0.4, 0.3], caps)), abs=1e-9)


def test_no_feedback_matches_averaged_dmc():
    ch = FeedbackChannel([0.3, 0.4, 0.3], THREE.transition.probs, 1)
    # one feedback letter: a single DMC with output (v, y)
    Wavg = np.concatenate([p * W for p, W in zip([0.3, 0.4, 0.3], THREE.transition.probs)], axis=1)
    for lam in (0.0, 0.4, 1.5):
        a = dual_L3(ch, COST, lam)[0]
        ref = blahut_penalized(Wavg, COST, lam)
        assert a.rate - lam * a.cost == pytest.approx(ref.value, abs=1e-9)
    assert capacity_C3(ch, CostSpec(COST, 0.2)).value == pytest.approx(
        constrained_capacity(Wavg, CostSpec(COST, 0.2)).value, abs=1e-8)


def test_identical_states_tie():
    ch = FeedbackChannel([0.5, 0.5], np.stack([bsc(0.1).probs] * 2), 2)
    assert len(dual_L3(ch, COST, 0.3)) >= 2


def test_single_state_reduces_to_dmc():
    W = np.array([[0.7, 0.3, 0.0], [0.1, 0.2, 0.7]])
    ch = FeedbackChannel([1.0], W[None], 2)
    res = capacity_C3(ch, CostSpec(COST, 0.35))
    assert res.value == pytest.approx(constrained_capacity(W, CostSpec(COST, 0.35)).value, abs=2e-3)


def test_per_letter_decomposition():
    lam = 0.7
    for phi in ((0, 0, 1), (0, 1, 1), (1, 0, 1)):
        total = 0.0
        for u in range(2):
            states = [v for v in range(3) if phi[v] == u]
            if not states:
                continue
            pv = np.array([0.3, 0.4, 0.3])[states]
            W = THREE.transition.probs[states]
            merged = ((pv / pv.sum())[:, None, None] * W).transpose(1, 0, 2).reshape(2, -1)
            total += pv.sum() * blahut_penalized(merged, COST, lam).value
        # f4 at the per-letter optimal laws, evaluated without the level shift
        laws = np.zeros((2, 2))
        for u in range(2):
            states = [v for v in range(3) if phi[v] == u]
            pv = np.array([0.3, 0.4, 0.3])[states]
            W = THREE.transition.probs[states]
            merged = ((pv / pv.sum())[:, None, None] * W).transpose(1, 0, 2).reshape(2, -1)
            laws[u] = blahut_penalized(merged, COST, lam).p_star.probs
        f1 = np.eye(2)[list(phi)]
        assert f4(THREE, f1, laws, CostSpec(COST, 0.0), lam) == pytest.approx(total, abs=1e-9)
    best = max(a.rate - lam * a.cost for a in dual_L3(THREE, COST, lam))
    assert best >= total - 1e-9


def test_three_state_gap():
    cost = CostSpec(COST, 0.15)
    res = capacity_C3(THREE, cost, audit=True)
    assert res.gap > 1e-3
    assert res.is_time_shared
    phis = {c.strategy.phi for c in res.solution.components}
    assert len(phis) == 2
    assert res.solution.total_cost == pytest.approx(0.15, abs=1e-9)
    assert res.solution.total_rate == pytest.approx(res.value, abs=1e-9)
    assert primal_R3(THREE, cost) < res.value


def test_three_state_curve_concave_and_above_primal():
    levels = np.linspace(0.0, 0.6, 13)
    C = np.array([capacity_C3(THREE, CostSpec(COST, r)).value for r in levels])
    R = np.array([primal_R3(THREE, CostSpec(COST, r)) for r in levels])
    assert np.all(C >= R - 1e-9)
    assert np.all(np.diff(C) >= -1e-9)
    assert np.all(C[1:-1] - 0.5 * (C[:-2] + C[2:]) >= -1e-6)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 3))
def test_extreme_point_optimality(seed, lam):
    rng = np.random.default_rng(seed)
    ch = random_feedback_channel(rng)
    cost = CostSpec(rng.uniform(0, 1, 2), 0.0 + 1.0)
    acts = dual_L3(ch, cost.cost, lam)
    best = max(a.rate - lam * a.cost for a in acts) + lam * cost.level
    f2 = acts[0].strategy.inputs
    for _ in range(50):
        f1 = rng.dirichlet(np.ones(2), size=2)
        assert f4(ch, f1, f2, cost, lam) <= best + 1e-9


# --- Gaussian on/off --------------------------------------------------------

@pytest.fixture(scope="module")
def curves():
    return gaussian_onoff_curves()


def test_default_parameters():
    g = GaussianOnOff()
    assert g.state_probs == DEFAULT_STATE_PROBS and g.noise_vars == DEFAULT_NOISE_VARS


def test_small_budget_uses_good_state_only(curves):
    r0 = curves.results[0]
    assert [c.strategy.label for c in r0.solution.components] == ["good"]


def test_large_budget_uses_good_and_moderate(curves):
    r = curves.results[-1]
    assert {c.strategy.label for c in r.solution.components} == {"good+moderate"}


def test_segment_between_on_off_strategies(curves):
    assert curves.segment_labels == ("good", "good+moderate")
    assert curves.segment_slope == pytest.approx(curves.segment_lambda, abs=1e-6)
    lo, hi = onoff_gap_interval(curves)
    assert hi > lo
    inside = (curves.levels > lo) & (curves.levels < hi)
    assert inside.any()
    assert np.all(curves.capacity[inside] > curves.primal[inside])
    outside = ~inside & ((curves.levels < lo - 1e-6) | (curves.levels > hi + 1e-6))
    assert np.allclose(curves.capacity[outside], curves.primal[outside], atol=1e-8)


def test_slope_is_tangent_multiplier(curves):
    (c0, r0), (c1, r1) = curves.segment
    lam = curves.segment_lambda
    sp, nv = DEFAULT_STATE_PROBS, DEFAULT_NOISE_VARS
    # both touch points are the stationary powers of their active sets at lam
    assert stationary_power(sp, nv, (0,), lam) * 0.3 == pytest.approx(c0, abs=1e-9)
    assert stationary_power(sp, nv, (0, 1), lam) * 0.7 == pytest.approx(c1, abs=1e-9)
    # and the two penalized values agree there
    assert r0 - lam * c0 == pytest.approx(r1 - lam * c1, abs=1e-12)


def test_dense_grid_oracle(curves):
    # independent check: best pure on/off strategy over a dense power grid at the crossing multiplier
    lam = curves.segment_lambda
    sp, nv = DEFAULT_STATE_PROBS, DEFAULT_NOISE_VARS
    best = -np.inf
    for T in ((0,), (0, 1), (0, 1, 2)):
        mass = sum(sp[v] for v in T)
        P = np.linspace(0, 10, 200_001)
        rate = onoff_curve(sp, nv, T, P * mass)
        best = max(best, float(np.max(rate - lam * P * mass)))
    (c0, r0), _ = curves.segment
    assert best == pytest.approx(r0 - lam * c0, abs=1e-8)


def test_envelope_contains_segment(curves):
    (c0, r0), (c1, r1) = curves.segment
    grid = np.union1d(np.geomspace(1e-3, 50, 400), [curves.segment_lambda])
    pts = onoff_envelope(lambda_grid=grid)
    i = int(np.argmin(np.abs(pts[:, 0] - c0)))
    assert pts[i] == pytest.approx([c0, r0], abs=1e-9)
    assert pts[i + 1] == pytest.approx([c1, r1], abs=1e-9)
    slope = (pts[i + 1, 1] - pts[i, 1]) / (pts[i + 1, 0] - pts[i, 0])
    assert slope == pytest.approx(curves.segment_lambda, abs=1e-6)


def test_onoff_validation():
    with pytest.raises(ValueError):
        GaussianOnOff(noise_vars=(1.0, 0.5, 2.0))
    with pytest.raises(ValueError):
        gaussian_onoff_curves(levels=[0.0, 1.0])
