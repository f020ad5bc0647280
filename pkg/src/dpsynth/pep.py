"""Iterative-projection synthesizer (maximum-entropy style reweighting).

Each projection step picks the measured query with the worst residual and
reweights the distribution so that query's answer becomes exactly the
(clipped) measured value:

    D'(x) proportional to D(x) * exp(-lambda * q(x)),
    -lambda = ln( a~ (1 - q(D)) / ((1 - a~) q(D)) )

which multiplies matching cells by a~/q(D) and the rest by (1-a~)/(1-q(D)).
The state persists across rounds, so each round's solve starts warm from the
previous distribution.
"""
from __future__ import annotations

import math

import numpy as np

from .domain import (
    DEFAULT_CELL_CAP,
    CapacityError,
    DataError,
    Domain,
    Histogram,
    SupportDistribution,
    normalize_mass,
)
from .loop import Synthesizer
from .privacy import MeasurementLedger
from .queries import MarginalQuery, QuerySet

TARGET_CLIP = 1e-4


def pep_lambda(a_target: float, a_current: float) -> float:
    """Closed-form multiplier exponent; see module docstring."""
    if not (0.0 < a_target < 1.0) or not (0.0 < a_current < 1.0):
        raise DataError("projection needs both answers strictly inside (0, 1)")
    return -math.log(a_target * (1.0 - a_current) / ((1.0 - a_target) * a_current))


def _project(probs: np.ndarray, mask: np.ndarray, a_target: float) -> np.ndarray:
    a_cur = float(probs[mask].sum())
    if not (0.0 < a_cur < 1.0):
        raise DataError("current answer is degenerate; cannot reweight")
    if not (0.0 < a_target < 1.0):
        raise DataError("target answer must lie strictly inside (0, 1)")
    out = np.where(mask, probs * (a_target / a_cur), probs * ((1.0 - a_target) / (1.0 - a_cur)))
    return normalize_mass(out)


def pep_project_once(hist: Histogram, q: MarginalQuery, a_target: float) -> Histogram:
    """Reweight a histogram so q's answer equals a_target exactly."""
    cells = np.arange(hist.domain.total_cells, dtype=np.int64)
    mask = q.matches(hist.domain, cells)
    return Histogram(hist.domain, _project(hist.mass, mask, a_target))


def pep_dual_loss(
    lambdas: np.ndarray,
    queries: QuerySet,
    indices: np.ndarray,
    targets: np.ndarray,
    gamma: float = 0.0,
) -> float:
    """Dual objective of the projection problem (diagnostic / test surface).

    L(lambda) = log sum_x exp( sum_i lambda_i (q_i(x) - a_i) ) + gamma * ||lambda||_1

    evaluated over the full domain with a max-shift for stability. At
    lambda = 0 this is log(total_cells).
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    indices = np.asarray(indices, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    if lambdas.shape != indices.shape or lambdas.shape != targets.shape:
        raise DataError("lambdas, indices, targets must align")
    dom = queries.domain
    cells = np.arange(dom.total_cells, dtype=np.int64)
    expo = np.zeros(dom.total_cells)
    for lam, qidx in zip(lambdas, indices):
        q = queries.query(int(qidx))
        expo[q.matches(dom, cells)] += lam
    expo -= lambdas @ targets
    shift = expo.max()
    return float(shift + math.log(np.exp(expo - shift).sum()) + gamma * np.abs(lambdas).sum())


class PepSynthesizer(Synthesizer):
    def __init__(
        self,
        domain: Domain,
        queries: QuerySet,
        support_cells: np.ndarray | None = None,
        init_probs: np.ndarray | None = None,
        gamma: float = 0.0,
        t_max: int = 25,
        target_clip: float = TARGET_CLIP,
        cell_cap: int = DEFAULT_CELL_CAP,
    ):
        self.domain = domain
        self.queries = queries
        if support_cells is None:
            if domain.total_cells > cell_cap:
                raise CapacityError(
                    f"domain has {domain.total_cells} cells, over the cap {cell_cap}"
                )
            support_cells = np.arange(domain.total_cells, dtype=np.int64)
        self.cells = np.asarray(support_cells, dtype=np.int64)
        if init_probs is None:
            init_probs = np.full(self.cells.shape[0], 1.0 / self.cells.shape[0])
        self.probs = normalize_mass(np.asarray(init_probs, dtype=np.float64))
        if self.probs.shape != self.cells.shape:
            raise DataError("support and init probabilities must align")
        if gamma < 0 or t_max < 1:
            raise DataError("gamma must be >= 0 and t_max >= 1")
        self.gamma = float(gamma)
        self.t_max = int(t_max)
        self.target_clip = float(target_clip)
        self._locals = [w.locals_of_cells(domain, self.cells) for w in queries.workloads]

    def _answers_all(self) -> np.ndarray:
        out = np.empty(self.queries.total_queries)
        for w, loc in zip(self.queries.workloads, self._locals):
            out[w.offset : w.offset + w.n_queries] = np.bincount(
                loc, weights=self.probs, minlength=w.n_queries
            )
        return out

    def answers(self, queries: QuerySet) -> np.ndarray:
        if queries is self.queries:
            return self._answers_all()
        return queries.answers_support(self.cells, self.probs)

    def _mask(self, qidx: int) -> np.ndarray:
        wi = self.queries.workload_of(qidx)
        return self._locals[wi] == (qidx - self.queries.workloads[wi].offset)

    def update(self, ledger: MeasurementLedger) -> None:
        if len(ledger) == 0:
            return
        idx = ledger.indices()
        clip = self.target_clip
        targets = np.clip(ledger.answers(), clip, 1.0 - clip)
        dead = np.zeros(idx.shape[0], dtype=bool)  # entries no reweighting can move
        for _ in range(self.t_max):
            res = np.abs(targets - self._answers_all()[idx])
            res[dead] = -np.inf
            j = int(np.argmax(res))
            if res[j] <= self.gamma:
                break
            mask = self._mask(int(idx[j]))
            a_cur = float(self.probs[mask].sum())
            if not (0.0 < a_cur < 1.0):
                dead[j] = True
                continue
            self.probs = _project(self.probs, mask, float(targets[j]))

    def snapshot(self) -> Histogram | None:
        if self.domain.total_cells > DEFAULT_CELL_CAP:
            return None
        mass = np.zeros(self.domain.total_cells)
        np.add.at(mass, self.cells, self.probs)
        return Histogram(self.domain, mass)

    def finalize(self) -> SupportDistribution:
        return SupportDistribution(self.domain, self.cells.copy(), self.probs.copy())
