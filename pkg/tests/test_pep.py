import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from dpsynth import DataError, Domain, Histogram, PepSynthesizer, build_workloads
from dpsynth.pep import pep_dual_loss, pep_lambda, pep_project_once
from dpsynth.privacy import MeasurementLedger

from oracles import maxent_dual_descent


def test_lambda_frozen_value():
    # uniform 2-cell, target 0.8: -lambda = ln 4
    lam = pep_lambda(0.8, 0.5)
    assert abs(-lam - math.log(4.0)) < 1e-12
    assert abs(pep_lambda(0.5, 0.5)) < 1e-15  # matched answer: identity
    with pytest.raises(DataError):
        pep_lambda(1.0, 0.5)
    with pytest.raises(DataError):
        pep_lambda(0.5, 0.0)


def test_project_once_two_cells():
    dom = Domain(("a",), (2,))
    qs = build_workloads(dom, 1)
    h = Histogram(dom, np.array([0.5, 0.5]))
    out = pep_project_once(h, qs.query(1), 0.8)
    assert np.allclose(out.mass, [0.2, 0.8], atol=1e-15)


def test_project_once_shared_mass():
    # 4 cells, 2 matching, target 0.25: matching split it equally, the rest
    # scale up to 0.375 each
    dom = Domain(("a", "b"), (2, 2))
    qs = build_workloads(dom, 1)
    h = Histogram(dom, np.full(4, 0.25))
    out = pep_project_once(h, qs.query(0), 0.25)  # a == 0 matches cells {0, 1}
    assert np.allclose(out.mass, [0.125, 0.125, 0.375, 0.375], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(
    size=st.integers(2, 10),
    cell=st.integers(0, 9),
    target=st.floats(1e-3, 1.0 - 1e-3),
    seed=st.integers(0, 99_999),
)
def test_projection_exactness(size, cell, target, seed):
    cell = cell % size
    dom = Domain(("a",), (size,))
    qs = build_workloads(dom, 1)
    rng = np.random.default_rng(seed)
    h = Histogram(dom, rng.dirichlet(np.ones(size) * 0.7) + 1e-9)
    h = Histogram(dom, h.mass / h.mass.sum())
    out = pep_project_once(h, qs.query(cell), target)
    assert abs(out.mass[cell] - target) <= 1e-12


def test_dual_loss_values():
    dom = Domain(("a", "b"), (2, 3))
    qs = build_workloads(dom, 1)
    val = pep_dual_loss(np.zeros(2), qs, np.array([0, 3]), np.array([0.5, 0.3]))
    assert abs(val - math.log(6.0)) < 1e-12
    with pytest.raises(DataError):
        pep_dual_loss(np.zeros(2), qs, np.array([0]), np.array([0.5]))
    # gamma adds an l1 penalty
    base = pep_dual_loss(np.array([1.0]), qs, np.array([0]), np.array([0.5]))
    pen = pep_dual_loss(np.array([1.0]), qs, np.array([0]), np.array([0.5]), gamma=0.2)
    assert abs(pen - base - 0.2) < 1e-12


def test_dual_loss_stationary_at_zero_when_target_matches_uniform():
    dom = Domain(("a",), (4,))
    qs = build_workloads(dom, 1)
    idx, tgt = np.array([2]), np.array([0.25])
    f0 = pep_dual_loss(np.array([0.0]), qs, idx, tgt)
    for eps in (1e-3, -1e-3, 0.1, -0.1):
        assert pep_dual_loss(np.array([eps]), qs, idx, tgt) >= f0 - 1e-12


def test_dual_minimum_reproduces_projection():
    # 2-cell, one constraint at 0.8: the dual minimizer's primal distribution
    # equals the closed-form projection
    dom = Domain(("a",), (2,))
    qs = build_workloads(dom, 1)
    idx, tgt = np.array([1]), np.array([0.8])
    res = minimize_scalar(
        lambda l: pep_dual_loss(np.array([l]), qs, idx, tgt), bounds=(-20, 20), method="bounded"
    )
    lam = res.x
    w = np.array([1.0, math.exp(lam)])  # exp(lam * q(x)) over the two cells
    w /= w.sum()
    proj = pep_project_once(Histogram(dom, np.array([0.5, 0.5])), qs.query(1), 0.8)
    assert np.allclose(w, proj.mass, atol=1e-6)
    assert abs(lam - math.log(4.0)) < 1e-5


def test_update_single_constraint_one_projection():
    dom = Domain(("a",), (3,))
    qs = build_workloads(dom, 1)
    synth = PepSynthesizer(dom, qs)
    led = MeasurementLedger()
    led.record(0, 0.6, 1)
    synth.update(led)
    assert abs(synth.answers(qs)[0] - 0.6) <= 1e-12


def test_update_disjoint_marginals_converge():
    # constraints on the two 1-way marginals of a 2x2 domain are mutually
    # consistent; alternating projections settle both
    dom = Domain(("a", "b"), (2, 2))
    qs = build_workloads(dom, 1)
    synth = PepSynthesizer(dom, qs, t_max=50)
    led = MeasurementLedger()
    led.record(0, 0.7, 1)  # P(a=0) = 0.7
    led.record(2, 0.4, 2)  # P(b=0) = 0.4
    synth.update(led)
    ans = synth.answers(qs)
    assert abs(ans[0] - 0.7) < 1e-8
    assert abs(ans[2] - 0.4) < 1e-8


def test_update_inconsistent_pair_terminates_at_cap():
    # P(a=0)=0.2 and P(a=1)=0.3 cannot both hold; the iteration cap is the
    # termination guarantee and the state stays a valid distribution
    dom = Domain(("a",), (2,))
    qs = build_workloads(dom, 1)
    synth = PepSynthesizer(dom, qs, t_max=25)
    led = MeasurementLedger()
    led.record(0, 0.2, 1)
    led.record(1, 0.3, 2)
    synth.update(led)
    assert abs(synth.probs.sum() - 1.0) < 1e-9
    res = np.abs(np.array([0.2, 0.3]) - synth.answers(qs))
    assert 0.0 < res.max() <= 0.5 + 1e-9  # oscillates, never resolves


def test_gamma_tolerance_skips_small_residuals():
    dom = Domain(("a",), (2,))
    qs = build_workloads(dom, 1)
    synth = PepSynthesizer(dom, qs, gamma=0.5)
    led = MeasurementLedger()
    led.record(0, 0.7, 1)  # residual 0.2 < gamma
    synth.update(led)
    assert np.allclose(synth.probs, [0.5, 0.5])


def test_degenerate_support_entry_is_skipped():
    # support misses every cell of the measured query: no finite reweighting
    # can move it, so the entry is retired without touching the state
    dom = Domain(("a", "b"), (2, 2))
    qs = build_workloads(dom, 1)
    synth = PepSynthesizer(dom, qs, support_cells=np.array([2, 3]))  # a == 1 only
    led = MeasurementLedger()
    led.record(0, 0.6, 1)  # P(a=0), identically 0 on this support
    synth.update(led)
    assert np.allclose(synth.probs, [0.5, 0.5])


def test_support_restricted_projection():
    dom = Domain(("a", "b"), (2, 2))
    qs = build_workloads(dom, 1)
    synth = PepSynthesizer(dom, qs, support_cells=np.array([0, 3]))
    led = MeasurementLedger()
    led.record(0, 0.7, 1)  # P(a=0); only cell 0 matches within the support
    synth.update(led)
    assert np.allclose(synth.probs, [0.7, 0.3], atol=1e-12)
    out = synth.finalize()
    assert np.array_equal(out.cells, [0, 3])


def test_selected_constraint_residual_zeroed():
    # one projection drives the worst residual to (clipped-target) zero
    rng = np.random.default_rng(7)
    for _ in range(20):
        dom = Domain(("a", "b"), (4, 4))
        qs = build_workloads(dom, 1)
        truth = rng.dirichlet(np.ones(16) * 0.4)
        ans = qs.answers_mass(truth)
        picks = rng.choice(8, size=4, replace=False)
        synth = PepSynthesizer(dom, qs, t_max=1)
        led = MeasurementLedger()
        for r, qi in enumerate(picks, start=1):
            led.record(int(qi), float(np.clip(ans[qi], 1e-4, 1 - 1e-4)), r)
        res0 = np.abs(led.answers() - synth.answers(qs)[led.indices()])
        j = int(np.argmax(res0))
        synth.update(led)
        res1 = np.abs(led.answers() - synth.answers(qs)[led.indices()])
        assert res1[j] <= 1e-12


def test_consistent_sweeps_residual_trend():
    # max residual trends down across sweeps (transient overshoot from
    # overlapping constraints stays tiny) and converges
    rng = np.random.default_rng(5)
    for _ in range(10):
        dom = Domain(("a", "b"), (4, 4))
        qs = build_workloads(dom, 1)
        truth = rng.dirichlet(np.ones(16) * 0.4)
        ans = qs.answers_mass(truth)
        picks = rng.choice(8, size=4, replace=False)
        synth = PepSynthesizer(dom, qs, t_max=len(picks))
        led = MeasurementLedger()
        for r, qi in enumerate(picks, start=1):
            led.record(int(qi), float(np.clip(ans[qi], 1e-4, 1 - 1e-4)), r)
        prev = np.inf
        for _ in range(40):
            synth.update(led)
            cur = np.abs(led.answers() - synth.answers(qs)[led.indices()]).max()
            assert cur <= prev + 1e-3
            prev = min(prev, cur)
        assert prev < 1e-6


def test_converged_matches_dual_descent_maxent():
    # against an independently coded dual-descent max-entropy solve
    rng = np.random.default_rng(11)
    for trial in range(5):
        dom = Domain(("a", "b"), (4, 4))
        qs = build_workloads(dom, 1)
        truth = rng.dirichlet(np.ones(16) * 0.6)
        ans = qs.answers_mass(truth)
        picks = rng.choice(qs.total_queries, size=5, replace=False)
        synth = PepSynthesizer(dom, qs, t_max=4000)
        led = MeasurementLedger()
        targets = []
        for r, qi in enumerate(picks, start=1):
            t = float(np.clip(ans[qi], 1e-4, 1 - 1e-4))
            led.record(int(qi), t, r)
            targets.append(t)
        synth.update(led)
        cells = np.arange(16)
        masks = np.stack(
            [qs.query(int(qi)).matches(dom, cells).astype(float) for qi in picks]
        )
        ref = maxent_dual_descent(masks, np.array(targets))
        tv = 0.5 * np.abs(ref - synth.probs).sum()
        assert tv <= 1e-3


def test_projection_is_i_projection():
    # KL(D' || D) is minimal among all distributions meeting the constraint,
    # checked by grid search on a 3-cell domain
    dom = Domain(("a",), (3,))
    qs = build_workloads(dom, 1)
    rng = np.random.default_rng(3)
    D = rng.dirichlet(np.ones(3))
    target = 0.55
    Dp = pep_project_once(Histogram(dom, D), qs.query(0), target).mass

    def kl(p, q):
        return float(np.sum(p * np.log(p / q)))

    best = kl(Dp, D)
    for x in np.linspace(1e-6, 1 - target - 1e-6, 2001):
        cand = np.array([target, x, 1.0 - target - x])
        assert kl(cand, D) >= best - 1e-10
