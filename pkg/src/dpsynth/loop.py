"""The adaptive measure-and-update driver shared by every synthesizer.

Each round: score all candidate queries by current absolute error, privately
select k of them, measure the selected answers with Gaussian noise, append to
the ledger, and let the synthesizer re-fit against the ledger. The private
dataset is touched only through the initial answer vector, the selection
scores, and the measurements.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np

from .domain import DataError, Dataset, Domain, Histogram, normalize_mass
from .privacy import Accountant, BudgetError, MeasurementLedger, select_and_measure_round
from .queries import QuerySet


@dataclass
class RunConfig:
    """Loop-level knobs (method-specific knobs live on the synthesizers)."""

    T: int = 10
    k: int = 1
    alpha: float = 0.67
    seed: int = 0
    per_workload: bool = False  # measure whole marginals instead of single queries
    no_noise: bool = False  # debugging hook: exact selection + exact measurement
    audit_errors: bool = False  # record full-workload max error per round
    output: str = "last"  # "last" or "average" (histogram methods only)
    em_score_halved: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise BudgetError("T must be >= 1")
        if self.k < 1:
            raise BudgetError("k must be >= 1")
        if self.output not in ("last", "average"):
            raise DataError("output must be 'last' or 'average'")


class Synthesizer(abc.ABC):
    """One synthesizer = a state plus an update rule against the ledger."""

    domain: Domain
    # methods that run their own private round (no Gaussian measurements)
    self_selecting: bool = False

    @abc.abstractmethod
    def answers(self, queries: QuerySet) -> np.ndarray:
        """Current answers of the synthetic distribution to every query."""

    @abc.abstractmethod
    def update(self, ledger: MeasurementLedger) -> None:
        """Re-fit the state against all measurements so far."""

    @abc.abstractmethod
    def finalize(self):
        """Output distribution handle (answers / sample_dataset / save)."""

    def snapshot(self) -> Histogram | None:
        """Dense copy of the current distribution, when cheap; None otherwise."""
        return None

    def private_round(self, rnd, queries, private_answers, acct, rng, no_noise):
        raise NotImplementedError


def average_output(snapshots: list[Histogram]) -> Histogram:
    """Pointwise average of per-round histograms, renormalized."""
    if not snapshots:
        raise DataError("no snapshots to average")
    dom = snapshots[0].domain
    if any(h.domain != dom for h in snapshots):
        raise DataError("snapshots over different domains")
    mass = np.mean([h.mass for h in snapshots], axis=0)
    return Histogram(dom, normalize_mass(mass))


def run(
    data: Dataset,
    queries: QuerySet,
    synth: Synthesizer,
    acct: Accountant,
    cfg: RunConfig,
    rng: np.random.Generator,
):
    """Run T rounds and return (output distribution, trace).

    The trace is one dict per round: selected query indices, their measured
    answers, and the post-update max error over the measured set. Full
    workload error is recorded only when auditing is allowed to read the
    private answers again (no_noise or audit_errors).
    """
    if data.n < 1:
        raise DataError("empty private dataset")
    if acct.T != cfg.T or acct.k != cfg.k:
        raise BudgetError("accountant and run config disagree on T or k")
    want_avg = cfg.output == "average"
    private = queries.answers_records(data)
    ledger = MeasurementLedger()
    trace: list[dict] = []
    snapshots: list[Histogram] = []
    for t in range(1, cfg.T + 1):
        if synth.self_selecting:
            selected, noisy = synth.private_round(
                t, queries, private, acct, rng, cfg.no_noise
            )
            post = synth.answers(queries)
            rec: dict = {
                "round": t,
                "selected": [int(s) for s in selected],
                "noisy_answers": noisy,
                "max_err_measured": None,
            }
        else:
            current = synth.answers(queries)
            selected = select_and_measure_round(
                ledger,
                queries,
                current,
                private,
                acct,
                rng,
                t,
                per_workload=cfg.per_workload,
                no_noise=cfg.no_noise,
                em_halved=cfg.em_score_halved,
            )
            synth.update(ledger)
            post = synth.answers(queries)
            new = [e for e in ledger.entries() if e.round == t]
            idx = ledger.indices()
            rec = {
                "round": t,
                "selected": [int(s) for s in selected],
                "measured": [e.index for e in new],
                "noisy_answers": [e.answer for e in new],
                "max_err_measured": float(np.abs(ledger.answers() - post[idx]).max()),
            }
        if cfg.no_noise or cfg.audit_errors:
            rec["max_err_all"] = float(np.abs(private - post).max())
        trace.append(rec)
        if want_avg:
            snap = synth.snapshot()
            if snap is None:
                raise DataError("averaged output is only available for histogram methods")
            snapshots.append(snap)
    if want_avg:
        from .domain import SupportDistribution

        avg = average_output(snapshots)
        out = SupportDistribution(
            avg.domain,
            np.arange(avg.domain.total_cells, dtype=np.int64),
            avg.mass,
        )
    else:
        out = synth.finalize()
    return out, trace
