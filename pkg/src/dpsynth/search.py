"""Record-search baselines: build the synthetic dataset one best-response
record at a time by exhaustive scan over domain cells.

Both methods spend their whole budget on query selection (no Gaussian
measurements), so they plug into the loop as self-selecting synthesizers and
the accountant runs with alpha = 1. Output is the empirical distribution of
every record accumulated across rounds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import (
    DEFAULT_CELL_CAP,
    CapacityError,
    DataError,
    Domain,
    SupportDistribution,
)
from .loop import Synthesizer
from .privacy import Accountant, MeasurementLedger, exp_mechanism_select
from .queries import QuerySet


@dataclass
class DualQueryConfig:
    eta: float = 2.0  # multiplicative-weights rate over queries
    samples: int = 100  # queries drawn per round

    def __post_init__(self):
        if self.eta <= 0 or self.samples < 1:
            raise DataError("eta must be > 0 and samples >= 1")


@dataclass
class FemConfig:
    sigma: float = 0.1  # scale of the exponential perturbation
    samples: int = 100  # records generated per round

    def __post_init__(self):
        if self.sigma <= 0 or self.samples < 1:
            raise DataError("sigma must be > 0 and samples >= 1")


class _SearchBase(Synthesizer):
    self_selecting = True

    def __init__(self, domain: Domain, queries: QuerySet, cell_cap: int = DEFAULT_CELL_CAP):
        if domain.total_cells > cell_cap:
            raise CapacityError(
                f"domain has {domain.total_cells} cells, over the cap {cell_cap}"
            )
        self.domain = domain
        self.queries = queries
        self.records: list[int] = []  # accumulated cell indices
        self._uniform = np.full(domain.total_cells, 1.0 / domain.total_cells)

    def _empirical(self) -> np.ndarray:
        mass = np.zeros(self.domain.total_cells)
        np.add.at(mass, np.array(self.records, dtype=np.int64), 1.0)
        return mass / len(self.records)

    def answers(self, queries: QuerySet) -> np.ndarray:
        if not self.records:
            return queries.answers_mass(self._uniform)
        return queries.answers_mass(self._empirical())

    def update(self, ledger: MeasurementLedger) -> None:
        pass  # no measured answers to fit against

    def finalize(self) -> SupportDistribution:
        if not self.records:
            raise DataError("no records accumulated")
        cells, counts = np.unique(np.array(self.records, dtype=np.int64), return_counts=True)
        return SupportDistribution(self.domain, cells, counts / counts.sum())

    def _query_indicator(self, qidx: int) -> np.ndarray:
        """0/1 vector over all cells for one query."""
        wi = self.queries.workload_of(qidx)
        w = self.queries.workloads[wi]
        loc = self.queries._cell_locals()[wi]
        return (loc == (qidx - w.offset)).astype(np.float64)


class DualQuerySynthesizer(_SearchBase):
    """Query player runs multiplicative weights; data player best-responds.

    Per round: draw `samples` queries from the current query distribution,
    add the one record minimizing their total indicator count (exhaustive
    scan, lowest cell index on ties), then upweight every query by
    exp(eta * its error against the running synthetic average).
    """

    def __init__(self, domain, queries, cfg: DualQueryConfig, cell_cap: int = DEFAULT_CELL_CAP):
        super().__init__(domain, queries, cell_cap)
        self.cfg = cfg
        self.qweights = np.full(queries.total_queries, 1.0 / queries.total_queries)

    def private_round(self, rnd, queries, private_answers, acct, rng, no_noise):
        cum = np.cumsum(self.qweights)
        u = rng.random(self.cfg.samples)
        drawn = np.minimum(np.searchsorted(cum / cum[-1], u, side="right"), cum.size - 1)
        objective = np.zeros(self.domain.total_cells)
        for q in drawn:
            objective += self._query_indicator(int(q))
        x = int(np.argmin(objective))
        self.records.append(x)
        payoff = np.abs(private_answers - self.answers(queries))
        w = self.qweights * np.exp(self.cfg.eta * payoff)
        self.qweights = w / w.sum()
        return [int(q) for q in drawn], None


class FemSynthesizer(_SearchBase):
    """Exponential-mechanism selection plus perturbed best responses.

    Per round: select k queries by the exponential mechanism over current
    errors (all budget on selection), then generate `samples` records, each
    minimizing (count of selected queries hit) + <one-hot(x), noise> with
    noise drawn coordinatewise from Exp(sigma).
    """

    def __init__(self, domain, queries, cfg: FemConfig, cell_cap: int = DEFAULT_CELL_CAP):
        super().__init__(domain, queries, cell_cap)
        self.cfg = cfg
        self.base = np.zeros(domain.total_cells)  # sum of selected-query indicators
        self.selected: list[int] = []
        # value of each attribute per cell, for the noise inner product
        self._vals = [
            domain.attr_values(np.arange(domain.total_cells, dtype=np.int64), a)
            for a in range(domain.num_attrs)
        ]

    def private_round(self, rnd, queries, private_answers, acct: Accountant, rng, no_noise):
        scores = np.abs(private_answers - self.answers(queries))
        picked = []
        for _ in range(acct.k):
            if no_noise:
                q = int(np.argmax(scores))
            else:
                q = exp_mechanism_select(scores, acct, rng)
            picked.append(q)
        for q in picked:
            self.selected.append(q)
            self.base += self._query_indicator(q)
        for _ in range(self.cfg.samples):
            noise = rng.exponential(self.cfg.sigma, size=self.domain.onehot_width)
            perturb = np.zeros(self.domain.total_cells)
            for a in range(self.domain.num_attrs):
                block = noise[self.domain.offset(a) : self.domain.offset(a) + self.domain.sizes[a]]
                perturb += block[self._vals[a]]
            self.records.append(int(np.argmin(self.base + perturb)))
        return picked, None
