"""k-way marginal workloads as flat query collections.

A workload is one feature subset S (|S| = k); its queries are the indicator
counts for every value combination of S, in lexicographic order. A QuerySet
concatenates workloads into one global query index space and evaluates the
whole collection against datasets, dense histograms, cell-support
distributions, and batches of relaxed one-hot probability rows.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .domain import DataError, Dataset, Domain, DomainError, Histogram

# block size (query-index direction) for batched product-query evaluation
_CHUNK_TARGET = 4_000_000


@dataclass(frozen=True)
class MarginalQuery:
    """Single counting query: fraction of records with records[S] == targets."""

    features: tuple[int, ...]
    targets: tuple[int, ...]

    def __post_init__(self):
        if len(self.features) != len(self.targets) or not self.features:
            raise DataError("need one target per feature")
        if list(self.features) != sorted(set(self.features)):
            raise DataError("features must be strictly increasing")

    def onehot_indices(self, domain: Domain) -> np.ndarray:
        """Positions of this query's ones in the concatenated one-hot layout."""
        return np.array(
            [domain.offset(f) + t for f, t in zip(self.features, self.targets)],
            dtype=np.int64,
        )

    def matches(self, domain: Domain, cells: np.ndarray) -> np.ndarray:
        """Boolean mask over an array of cell indices."""
        mask = np.ones(np.asarray(cells).shape[0], dtype=bool)
        for f, t in zip(self.features, self.targets):
            mask &= domain.attr_values(cells, f) == t
        return mask


@dataclass(frozen=True)
class Workload:
    """All value combinations of one feature subset, lexicographic order."""

    features: tuple[int, ...]
    sizes: tuple[int, ...]
    offset: int  # global index of this workload's first query

    @property
    def n_queries(self) -> int:
        return math.prod(self.sizes)

    def local_strides(self) -> tuple[int, ...]:
        st = [1] * len(self.sizes)
        for i in range(len(self.sizes) - 2, -1, -1):
            st[i] = st[i + 1] * self.sizes[i + 1]
        return tuple(st)

    def query(self, local: int) -> MarginalQuery:
        targets = []
        for sz, st in zip(self.sizes, self.local_strides()):
            targets.append((local // st) % sz)
        return MarginalQuery(self.features, tuple(targets))

    def locals_of_cells(self, domain: Domain, cells: np.ndarray) -> np.ndarray:
        """Which of this workload's queries each cell satisfies (exactly one)."""
        loc = np.zeros(np.asarray(cells).shape[0], dtype=np.int64)
        for f, st in zip(self.features, self.local_strides()):
            loc += domain.attr_values(cells, f) * st
        return loc

    def locals_of_records(self, records: np.ndarray) -> np.ndarray:
        loc = np.zeros(records.shape[0], dtype=np.int64)
        for f, st in zip(self.features, self.local_strides()):
            loc += records[:, f] * st
        return loc


class QuerySet:
    """Concatenation of marginal workloads with a global query index."""

    def __init__(self, domain: Domain, workloads: list[Workload], k: int):
        if not workloads:
            raise DataError("empty query collection")
        self.domain = domain
        self.k = k
        self.workloads = workloads
        self.total_queries = sum(w.n_queries for w in workloads)
        self.threads = 1
        # one-hot index matrix, row per query (every query has exactly k ones)
        idx = np.empty((self.total_queries, k), dtype=np.int64)
        for w in workloads:
            combos = np.indices(w.sizes).reshape(len(w.sizes), -1).T  # lexicographic
            for j, f in enumerate(w.features):
                idx[w.offset : w.offset + w.n_queries, j] = domain.offset(f) + combos[:, j]
        self.idx = idx
        self._full_locals: list[np.ndarray] | None = None

    # -- indexing helpers -------------------------------------------------

    def slices(self) -> list[slice]:
        return [slice(w.offset, w.offset + w.n_queries) for w in self.workloads]

    def workload_of(self, qidx: int) -> int:
        for wi, w in enumerate(self.workloads):
            if w.offset <= qidx < w.offset + w.n_queries:
                return wi
        raise IndexError(qidx)

    def query(self, qidx: int) -> MarginalQuery:
        w = self.workloads[self.workload_of(qidx)]
        return w.query(qidx - w.offset)

    # -- evaluation -------------------------------------------------------

    def _map_reduce(self, fn) -> np.ndarray:
        out = np.empty(self.total_queries)
        if self.threads > 1 and len(self.workloads) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as ex:
                parts = list(ex.map(fn, self.workloads))
        else:
            parts = [fn(w) for w in self.workloads]
        for w, part in zip(self.workloads, parts):
            out[w.offset : w.offset + w.n_queries] = part
        return out

    def answers_records(self, data: Dataset) -> np.ndarray:
        """Exact answers on a dataset (integer counting, then one division)."""
        if data.n == 0:
            raise DataError("empty dataset")
        rec = data.records

        def one(w: Workload):
            counts = np.bincount(w.locals_of_records(rec), minlength=w.n_queries)
            return counts / data.n

        return self._map_reduce(one)

    def _cell_locals(self) -> list[np.ndarray]:
        if self._full_locals is None:
            cells = np.arange(self.domain.total_cells, dtype=np.int64)
            self._full_locals = [w.locals_of_cells(self.domain, cells) for w in self.workloads]
        return self._full_locals

    def answers_histogram(self, hist: Histogram) -> np.ndarray:
        """Answers on a dense histogram.

        Uses the integer-count path when the histogram carries exact counts,
        which reproduces record counting bit for bit.
        """
        locals_ = self._cell_locals()

        def one_idx(args):
            w, loc = args
            if hist.counts is not None:
                c = np.bincount(loc, weights=hist.counts.astype(np.float64), minlength=w.n_queries)
                return c / hist.n
            return np.bincount(loc, weights=hist.mass, minlength=w.n_queries)

        out = np.empty(self.total_queries)
        pairs = list(zip(self.workloads, locals_))
        if self.threads > 1 and len(pairs) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as ex:
                parts = list(ex.map(one_idx, pairs))
        else:
            parts = [one_idx(p) for p in pairs]
        for w, part in zip(self.workloads, parts):
            out[w.offset : w.offset + w.n_queries] = part
        return out

    def answers_mass(self, mass: np.ndarray) -> np.ndarray:
        """Answers of a dense mass vector over all cells (cached cell maps)."""
        locals_ = self._cell_locals()
        out = np.empty(self.total_queries)
        for w, loc in zip(self.workloads, locals_):
            out[w.offset : w.offset + w.n_queries] = np.bincount(
                loc, weights=mass, minlength=w.n_queries
            )
        return out

    def answers_support(self, cells: np.ndarray, probs: np.ndarray) -> np.ndarray:
        """Answers of a distribution given as (cells, probabilities)."""

        def one(w: Workload):
            loc = w.locals_of_cells(self.domain, cells)
            return np.bincount(loc, weights=probs, minlength=w.n_queries)

        return self._map_reduce(one)

    def answers_probs(self, P: np.ndarray) -> np.ndarray:
        """Mean product-query answers over a batch of probability rows.

        P has shape (B, onehot_width); every attribute block of every row is
        assumed normalized. Answer of query q = mean_b prod_{i in q} P[b, i].
        """
        P = np.asarray(P, dtype=np.float64)
        return product_answers(P, self.idx)


def build_workloads(
    domain: Domain, k: int, count: int | None = None, rng: np.random.Generator | None = None
) -> QuerySet:
    """All (or a uniform sample of) k-way marginal workloads.

    count=None takes every feature subset in lexicographic order; otherwise
    `count` distinct subsets are drawn uniformly without replacement (the
    chosen subsets are then ordered lexicographically for stable indexing).
    """
    d = domain.num_attrs
    if not (1 <= k <= d):
        raise DataError(f"marginal order k={k} out of range for {d} attributes")
    total = math.comb(d, k)
    if count is None or count >= total:
        if count is not None and count > total:
            raise DataError(f"asked for {count} workloads, only {total} exist")
        subsets = list(itertools.combinations(range(d), k))
    else:
        if count < 1:
            raise DataError("count must be >= 1")
        if rng is None:
            raise DataError("sampling workloads needs an rng")
        picks = rng.choice(total, size=count, replace=False)
        all_subsets = list(itertools.combinations(range(d), k))
        subsets = sorted(all_subsets[int(i)] for i in picks)
    workloads = []
    off = 0
    for feats in subsets:
        sizes = tuple(domain.sizes[f] for f in feats)
        workloads.append(Workload(tuple(feats), sizes, off))
        off += math.prod(sizes)
    return QuerySet(domain, workloads, k)


# -- single-query answers (reference path) --------------------------------


def answer_histogram(q: MarginalQuery, hist: Histogram) -> float:
    """Answer of one query on a histogram.

    Count-backed histograms use exact integer counting; otherwise the
    matching mass is accumulated left to right in cell order.
    """
    cells = np.arange(hist.domain.total_cells, dtype=np.int64)
    mask = q.matches(hist.domain, cells)
    if hist.counts is not None:
        return float(int(hist.counts[mask].sum()) / hist.n)
    m = hist.mass[mask]
    if m.size == 0:
        return 0.0
    return float(np.cumsum(m)[-1])


def answer_records(q: MarginalQuery, data: Dataset) -> float:
    """Answer of one query on records: matching count / n."""
    if data.n == 0:
        raise DataError("empty dataset")
    mask = np.ones(data.n, dtype=bool)
    for f, t in zip(q.features, q.targets):
        mask &= data.records[:, f] == t
    return float(int(mask.sum()) / data.n)


# -- product-query relaxation (differentiable path) -----------------------


def product_query(q: MarginalQuery, p: np.ndarray, domain: Domain) -> float:
    """Multilinear relaxation of a query on one probability row.

    f(p) = prod of p at the query's one-hot positions. Every attribute block
    of p must sum to 1 (within 1e-6).
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.shape[0] != domain.onehot_width:
        raise DataError("row width does not match one-hot layout")
    for a in range(domain.num_attrs):
        block = p[domain.offset(a) : domain.offset(a) + domain.sizes[a]]
        if abs(block.sum() - 1.0) > 1e-6 or block.min() < -1e-9:
            raise DataError(f"attribute block {domain.names[a]!r} is not a distribution")
    return float(np.prod(p[q.onehot_indices(domain)]))


def answer_batch(q: MarginalQuery, P: np.ndarray, domain: Domain) -> float:
    """Mean of `product_query` over the rows of P."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] == 0:
        raise DataError("need a nonempty batch of rows")
    idx = q.onehot_indices(domain)
    return float(P[:, idx].prod(axis=1).mean())


def product_answers(P: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Batch-mean product answers for many queries at once.

    idx is (m, k): one-hot positions per query. Evaluation is chunked over
    queries to bound the intermediate (B, chunk, k) tensor.
    """
    B = P.shape[0]
    m, k = idx.shape
    out = np.empty(m)
    chunk = max(1, _CHUNK_TARGET // max(1, B * k))
    for s in range(0, m, chunk):
        e = min(m, s + chunk)
        vals = P[:, idx[s:e]]  # (B, e-s, k)
        out[s:e] = vals.prod(axis=2).mean(axis=0)
    return out


def product_answers_grad(P: np.ndarray, idx: np.ndarray, coeff: np.ndarray) -> np.ndarray:
    """Gradient of sum_j coeff[j] * batch-mean product answer j w.r.t. P.

    Leave-one-out products are formed explicitly (no division) so zero
    entries stay differentiable.
    """
    B = P.shape[0]
    m, k = idx.shape
    dP = np.zeros_like(P)
    chunk = max(1, _CHUNK_TARGET // max(1, B * k))
    rows = np.arange(B)[:, None]
    for s in range(0, m, chunk):
        e = min(m, s + chunk)
        vals = P[:, idx[s:e]]  # (B, c, k)
        w = coeff[s:e][None, :] / B
        for t in range(k):
            others = [u for u in range(k) if u != t]
            loo = vals[:, :, others].prod(axis=2) if others else np.ones_like(vals[:, :, 0])
            np.add.at(dP, (rows, idx[s:e, t][None, :]), loo * w)
    return dP
