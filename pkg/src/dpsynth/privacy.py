"""Budget accounting and the two private primitives.

The engine spends a total zero-concentrated budget rho across T rounds of
k selections (exponential mechanism) plus k measurements (Gaussian), with a
fraction alpha of each round's per-query budget on selection. The base
per-query parameter is

    eps0 = sqrt(2 * rho / (k * T * (alpha^2 + (1 - alpha)^2)))

so that T rounds of k exponential draws at parameter 2*alpha*eps0 and k
Gaussian draws at noise 1/(n*(1-alpha)*eps0) compose to exactly rho.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .queries import QuerySet


class BudgetError(ValueError):
    """Inconsistent or degenerate privacy parameters."""


def zcdp_to_dp(rho: float, delta: float) -> float:
    """Best (eps, delta) guarantee implied by rho-zCDP: rho + 2*sqrt(rho*ln(1/delta))."""
    if rho < 0:
        raise BudgetError("rho must be nonnegative")
    if not (0 < delta < 1):
        raise BudgetError("delta must lie in (0, 1)")
    return rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))

def dp_to_zcdp(eps: float, delta: float) -> float:
    """Inverse of :func:`zcdp_to_dp`: the rho whose (eps, delta) curve passes through eps."""
    if eps < 0:
        raise BudgetError("eps must be nonnegative")
    if not (0 < delta < 1):
        raise BudgetError("delta must lie in (0, 1)")
    a = math.log(1.0 / delta)
    t = math.sqrt(a + eps) - math.sqrt(a)
    return t * t


@dataclass(frozen=True)
class Accountant:
    """Per-run budget split. alpha is the selection share of each round."""

    rho: float
    T: int
    k: int
    alpha: float
    n: int

    def __post_init__(self):
        if self.rho <= 0 or not math.isfinite(self.rho):
            raise BudgetError("rho must be positive and finite")
        if self.T < 1 or self.k < 1:
            raise BudgetError("T and k must be >= 1")
        if self.n < 1:
            raise BudgetError("n must be >= 1")
        # alpha == 1.0 is reserved for selection-only methods (no Gaussian
        # step); the standard loop needs both shares strictly positive.
        if not (0.0 < self.alpha <= 1.0):
            raise BudgetError("alpha must lie in (0, 1]")

    @classmethod
    def from_dp(cls, eps: float, delta: float, T: int, k: int, alpha: float, n: int) -> "Accountant":
        return cls(dp_to_zcdp(eps, delta), T, k, alpha, n)

    @classmethod
    def selection_only(cls, rho: float, T: int, k: int, n: int) -> "Accountant":
        """Budget for methods that only ever sample queries (no measurement)."""
        return cls(rho, T, k, 1.0, n)

    @property
    def eps0(self) -> float:
        denom = self.k * self.T * (self.alpha**2 + (1.0 - self.alpha) ** 2)
        return math.sqrt(2.0 * self.rho / denom)

    def gaussian_sigma(self, sensitivity_scale: float = 1.0) -> float:
        """Std dev of measurement noise on an answer in [0, 1].

        sensitivity_scale is 1 for a single counting query and sqrt(2) when a
        whole workload is measured at once (one record moves two cells of the
        marginal, an L2 change of sqrt(2)/n).
        """
        if self.alpha >= 1.0:
            raise BudgetError("selection-only budget has no measurement share")
        return sensitivity_scale / (self.n * (1.0 - self.alpha) * self.eps0)

    def spent_rho(self) -> float:
        """Recompose the budget actually consumed by T rounds (sanity check)."""
        e = self.eps0
        per_round = self.k * 0.5 * (self.alpha * e) ** 2
        if self.alpha < 1.0:
            per_round += self.k * 0.5 * ((1.0 - self.alpha) * e) ** 2
        return per_round * self.T

    def epsilon(self, delta: float) -> float:
        return zcdp_to_dp(self.rho, delta)


def exp_mechanism_select(
    scores: np.ndarray,
    acct: Accountant,
    rng: np.random.Generator,
    *,
    halved: bool = False,
) -> int:
    """Draw one index with probability proportional to exp(alpha*eps0*n*score).

    Scores are absolute errors of normalized counts, so one record changes
    each score by at most 1/n. `halved` divides the exponent by 2 (the more
    conservative convention); the default matches selection probabilities
    proportional to exp(alpha * eps0 * n * score).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise BudgetError("need a nonempty score vector")
    coef = acct.alpha * acct.eps0 * acct.n
    if halved:
        coef *= 0.5
    logits = coef * scores
    logits = logits - logits.max()
    probs = np.exp(logits)
    probs /= probs.sum()
    cum = np.cumsum(probs)
    return int(min(np.searchsorted(cum, rng.random(), side="right"), scores.size - 1))


def exp_mechanism_probs(scores: np.ndarray, acct: Accountant, *, halved: bool = False) -> np.ndarray:
    """Selection distribution of :func:`exp_mechanism_select` (for tests/diagnostics)."""
    scores = np.asarray(scores, dtype=np.float64)
    coef = acct.alpha * acct.eps0 * acct.n
    if halved:
        coef *= 0.5
    logits = coef * scores
    logits = logits - logits.max()
    p = np.exp(logits)
    return p / p.sum()


def gaussian_measure(
    true_answer: float,
    acct: Accountant,
    rng: np.random.Generator,
    *,
    sensitivity_scale: float = 1.0,
) -> float:
    """Measure one answer with Gaussian noise at the accountant's sigma.

    The noisy value is stored as-is (no clipping); consumers clip when their
    update rule requires a value in [0, 1].
    """
    sigma = acct.gaussian_sigma(sensitivity_scale)
    return float(true_answer + sigma * rng.standard_normal())


class LedgerEntry(NamedTuple):
    index: int  # global query index
    answer: float  # measured (noisy) answer, unclipped
    round: int  # 1-based round of the most recent measurement


class MeasurementLedger:
    """Ordered record of measured queries.

    At most one live entry per query: re-measuring replaces the old value and
    moves the entry to the end, so rounds are nondecreasing in entry order.
    """

    def __init__(self):
        self._entries: dict[int, tuple[float, int]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, qidx: int, answer: float, rnd: int) -> None:
        self._entries.pop(qidx, None)
        self._entries[qidx] = (float(answer), int(rnd))

    def entries(self) -> list[LedgerEntry]:
        return [LedgerEntry(i, a, r) for i, (a, r) in self._entries.items()]

    def indices(self) -> np.ndarray:
        return np.fromiter(self._entries.keys(), dtype=np.int64, count=len(self._entries))

    def answers(self) -> np.ndarray:
        return np.array([a for a, _ in self._entries.values()], dtype=np.float64)

    def rounds(self) -> np.ndarray:
        return np.array([r for _, r in self._entries.values()], dtype=np.int64)


def select_and_measure_round(
    ledger: MeasurementLedger,
    queries: QuerySet,
    current_answers: np.ndarray,
    private_answers: np.ndarray,
    acct: Accountant,
    rng: np.random.Generator,
    rnd: int,
    *,
    per_workload: bool = False,
    no_noise: bool = False,
    em_halved: bool = False,
) -> list[int]:
    """One Sample-then-Measure round; mutates the ledger, returns selections.

    Per-query mode: k exponential draws over per-query errors, then one
    Gaussian measurement per draw (sensitivity scale 1). Per-workload mode:
    k draws over per-workload max errors, then every query of each chosen
    workload is measured at sensitivity scale sqrt(2).

    All selection draws happen before any measurement draw, so a fixed seed
    fixes the whole round. With no_noise=True selection degenerates to the
    exact argmax (lowest index wins ties) and measurements are exact.
    """
    scores = np.abs(private_answers - current_answers)
    selected: list[int] = []
    if per_workload:
        wl_scores = np.array([scores[sl].max() for sl in queries.slices()])
        for _ in range(acct.k):
            if no_noise:
                w = int(np.argmax(wl_scores))
            else:
                w = exp_mechanism_select(wl_scores, acct, rng, halved=em_halved)
            selected.append(w)
        for w in selected:
            sl = queries.slices()[w]
            for q in range(sl.start, sl.stop):
                if no_noise:
                    a = float(private_answers[q])
                else:
                    a = gaussian_measure(
                        private_answers[q], acct, rng, sensitivity_scale=math.sqrt(2.0)
                    )
                ledger.record(q, a, rnd)
    else:
        for _ in range(acct.k):
            if no_noise:
                q = int(np.argmax(scores))
            else:
                q = exp_mechanism_select(scores, acct, rng, halved=em_halved)
            selected.append(q)
        for q in selected:
            if no_noise:
                a = float(private_answers[q])
            else:
                a = gaussian_measure(private_answers[q], acct, rng, sensitivity_scale=1.0)
            ledger.record(q, a, rnd)
    return selected
