import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpsynth import (
    Accountant,
    BudgetError,
    Domain,
    Dataset,
    MeasurementLedger,
    build_workloads,
    dp_to_zcdp,
    exp_mechanism_select,
    gaussian_measure,
    select_and_measure_round,
    zcdp_to_dp,
)
from dpsynth.privacy import exp_mechanism_probs


def test_zcdp_to_dp_frozen():
    # rho + 2*sqrt(rho*ln(1/delta)): rho=1, delta=e^-9 -> 1 + 2*3 = 7
    assert abs(zcdp_to_dp(1.0, math.exp(-9)) - 7.0) < 1e-12
    # rho=0.25, delta=e^-4 -> 0.25 + 2*sqrt(0.25*4) = 2.25
    assert abs(zcdp_to_dp(0.25, math.exp(-4)) - 2.25) < 1e-12


def test_dp_to_zcdp_inverts():
    rng = np.random.default_rng(0)
    for _ in range(100):
        eps = float(rng.uniform(0.05, 8.0))
        delta = float(10 ** rng.uniform(-12, -2))
        rho = dp_to_zcdp(eps, delta)
        assert abs(zcdp_to_dp(rho, delta) - eps) < 1e-9


def test_budget_validation():
    with pytest.raises(BudgetError):
        zcdp_to_dp(-1.0, 1e-6)
    with pytest.raises(BudgetError):
        zcdp_to_dp(1.0, 1.5)
    with pytest.raises(BudgetError):
        dp_to_zcdp(-0.5, 1e-6)
    with pytest.raises(BudgetError):
        Accountant(rho=0.0, T=10, k=1, alpha=0.5, n=100)
    with pytest.raises(BudgetError):
        Accountant(rho=1.0, T=0, k=1, alpha=0.5, n=100)
    with pytest.raises(BudgetError):
        Accountant(rho=1.0, T=1, k=1, alpha=1.5, n=100)


def test_eps0_frozen():
    # eps0 = sqrt(2*rho / (k*T*(alpha^2 + (1-alpha)^2)))
    a = Accountant(rho=0.5, T=10, k=1, alpha=0.5, n=100)
    assert abs(a.eps0 - 0.4472135954999579) < 1e-6
    # doubling k at fixed everything else scales eps0 by 1/sqrt(2)
    a2 = Accountant(rho=0.5, T=10, k=2, alpha=0.5, n=100)
    assert abs(a2.eps0 - 0.31622776601683794) < 1e-6


def test_budget_identity():
    # spent zCDP: k*T*((alpha*eps0)^2 + ((1-alpha)*eps0)^2)/2 == rho
    rng = np.random.default_rng(1)
    for _ in range(50):
        acct = Accountant(
            rho=float(rng.uniform(0.01, 4)),
            T=int(rng.integers(1, 50)),
            k=int(rng.integers(1, 5)),
            alpha=float(rng.uniform(0.05, 0.95)),
            n=int(rng.integers(10, 10000)),
        )
        e0 = acct.eps0
        spent = acct.k * acct.T * ((acct.alpha * e0) ** 2 + ((1 - acct.alpha) * e0) ** 2) / 2
        assert abs(spent - acct.rho) < 1e-12
        assert abs(acct.spent_rho() - acct.rho) < 1e-12


def test_from_dp_and_epsilon_roundtrip():
    acct = Accountant.from_dp(1.0, 1e-6, T=10, k=1, alpha=0.67, n=1000)
    assert abs(acct.epsilon(1e-6) - 1.0) < 1e-9


def test_selection_only_alpha_one():
    acct = Accountant.selection_only(rho=0.5, T=10, k=2, n=100)
    assert acct.alpha == 1.0
    # all budget goes to selection: k*T*eps0^2/2 == rho
    assert abs(acct.k * acct.T * acct.eps0**2 / 2 - acct.rho) < 1e-12
    with pytest.raises(BudgetError):
        acct.gaussian_sigma()  # no measurement budget at alpha=1


def test_gaussian_sigma_frozen():
    # sigma = scale / (n * (1-alpha) * eps0)
    acct = Accountant(rho=0.5, T=10, k=1, alpha=0.5, n=1000)
    assert abs(acct.gaussian_sigma() - 1.0 / (1000 * 0.5 * acct.eps0)) < 1e-15
    assert abs(acct.gaussian_sigma() - 0.004472135954999579) < 1e-9
    assert abs(acct.gaussian_sigma(math.sqrt(2)) - 0.006324555320336759) < 1e-9


def test_em_probs_frozen():
    # alpha*eps0*n*score = ln 3 gap -> probabilities (0.25, 0.75)
    acct = Accountant(rho=0.5, T=10, k=1, alpha=0.5, n=100)
    gap = math.log(3) / (acct.alpha * acct.eps0 * acct.n)
    p = exp_mechanism_probs(np.array([0.0, gap]), acct)
    assert np.allclose(p, [0.25, 0.75], atol=1e-12)
    # halved exponent: exp(ln3/2) ratio
    ph = exp_mechanism_probs(np.array([0.0, gap]), acct, halved=True)
    r = math.exp(math.log(3) / 2)
    assert np.allclose(ph, [1 / (1 + r), r / (1 + r)], atol=1e-12)


def test_em_select_frequencies():
    acct = Accountant(rho=0.5, T=10, k=1, alpha=0.5, n=100)
    scores = np.array([0.0, 0.01, 0.03, 0.05])
    want = exp_mechanism_probs(scores, acct)
    rng = np.random.default_rng(123)
    draws = np.array([exp_mechanism_select(scores, acct, rng) for _ in range(20000)])
    freq = np.bincount(draws, minlength=4) / draws.size
    se = np.sqrt(want * (1 - want) / draws.size)
    assert np.all(np.abs(freq - want) < 4 * se + 1e-12)


def test_gaussian_measure_stats():
    acct = Accountant(rho=0.5, T=10, k=1, alpha=0.5, n=1000)
    rng = np.random.default_rng(77)
    xs = np.array([gaussian_measure(0.3, acct, rng) for _ in range(30000)])
    assert abs(xs.mean() - 0.3) < 4 * acct.gaussian_sigma() / math.sqrt(xs.size)
    assert abs(xs.std() / acct.gaussian_sigma() - 1.0) < 0.02
    # answers are stored unclipped: a huge true answer stays put
    val = gaussian_measure(3.7, acct, np.random.default_rng(0))
    assert 3.6 < val < 3.8


def test_ledger_remeasure_moves_to_end():
    led = MeasurementLedger()
    led.record(4, 0.5, 1)
    led.record(9, 0.25, 1)
    led.record(4, 0.6, 2)  # re-measured: replaces and moves to the end
    assert len(led) == 2
    assert led.indices().tolist() == [9, 4]
    assert led.answers().tolist() == [0.25, 0.6]
    assert led.rounds().tolist() == [1, 2]


def _toy_instance(seed=0, n=50):
    rng = np.random.default_rng(seed)
    dom = Domain(("a", "b"), (3, 3))
    rec = np.column_stack([rng.integers(0, 3, size=n) for _ in range(2)])
    return dom, Dataset(dom, rec), build_workloads(dom, 2)


def test_select_and_measure_no_noise_picks_argmax():
    dom, data, qs = _toy_instance()
    true = qs.answers_records(data)
    synth = np.full_like(true, 1.0 / dom.total_cells)
    acct = Accountant(rho=0.5, T=5, k=1, alpha=0.5, n=data.n)
    led = MeasurementLedger()
    sel = select_and_measure_round(
        led, qs, synth, true, acct, np.random.default_rng(0), 1, no_noise=True
    )
    want = int(np.argmax(np.abs(true - synth)))
    assert sel == [want]
    assert led.answers()[0] == true[want]


def test_select_and_measure_k_entries_per_round():
    dom, data, qs = _toy_instance()
    true = qs.answers_records(data)
    synth = np.full_like(true, 1.0 / dom.total_cells)
    acct = Accountant(rho=0.5, T=5, k=3, alpha=0.5, n=data.n)
    led = MeasurementLedger()
    sel = select_and_measure_round(led, qs, synth, true, acct, np.random.default_rng(5), 1)
    assert len(sel) == 3
    assert len(led) == len(set(sel))  # duplicate draws collapse in the ledger


def test_select_and_measure_per_workload():
    dom, data, qs = _toy_instance()
    true = qs.answers_records(data)
    synth = np.full_like(true, 1.0 / dom.total_cells)
    acct = Accountant(rho=0.5, T=5, k=1, alpha=0.5, n=data.n)
    led = MeasurementLedger()
    sel = select_and_measure_round(
        led, qs, synth, true, acct, np.random.default_rng(2), 1, per_workload=True
    )
    # one workload chosen, every query in it measured
    assert len(sel) == 1
    w = qs.workloads[sel[0]]
    assert len(led) == w.n_queries
    assert sorted(led.indices().tolist()) == list(range(w.offset, w.offset + w.n_queries))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 4.0), st.floats(-12, -2))
def test_dp_zcdp_roundtrip_property(eps, log_delta):
    delta = 10.0**log_delta
    assert abs(zcdp_to_dp(dp_to_zcdp(eps, delta), delta) - eps) < 1e-9
