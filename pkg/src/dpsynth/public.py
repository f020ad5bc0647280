"""Warm starts from auxiliary (public) data, and the induced error floor.

Three tools: restrict the projection synthesizer's support to records that
exist in a public dataset; pretrain the generator on exact public answers;
and compute how well any reweighting of a fixed support could possibly match
a target answer vector (the floor that support restriction imposes).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import DataError, Dataset, Domain, DomainError, SupportDistribution
from .gem import Adam, GemConfig, Params, forward, gem_gradient, gem_loss, init_params
from .pep import PepSynthesizer
from .queries import QuerySet, Workload, product_answers


def pep_pub_init(
    public: Dataset,
    domain: Domain,
    queries: QuerySet,
    **pep_kwargs,
) -> PepSynthesizer:
    """Projection synthesizer restricted to the public record support.

    The state starts at the public empirical distribution and every later
    projection only reweights those cells; records absent from the public
    data can never gain mass.
    """
    if public.domain.names != domain.names or public.domain.sizes != domain.sizes:
        raise DomainError("public data must share the private schema")
    if public.n == 0:
        raise DataError("empty public dataset")
    emp = SupportDistribution.from_dataset(public)
    return PepSynthesizer(
        domain, queries, support_cells=emp.cells, init_probs=emp.probs, **pep_kwargs
    )


def restrict_to_public(queries: QuerySet, public_domain: Domain) -> QuerySet:
    """Sub-collection of workloads whose attributes all exist in the public data.

    Attributes are matched by name and must have equal sizes. Raises when no
    workload survives.
    """
    dom = queries.domain
    keep: list[tuple[int, ...]] = []
    for w in queries.workloads:
        names = [dom.names[f] for f in w.features]
        ok = all(
            nm in public_domain.names
            and public_domain.sizes[public_domain.names.index(nm)] == dom.sizes[f]
            for nm, f in zip(names, w.features)
        )
        if ok:
            keep.append(w.features)
    if not keep:
        raise DataError("no workload fits inside the public schema")
    workloads = []
    off = 0
    for feats in keep:
        sizes = tuple(dom.sizes[f] for f in feats)
        workloads.append(Workload(feats, sizes, off))
        off += math.prod(sizes)
    return QuerySet(dom, workloads, queries.k)


def public_answers(restricted: QuerySet, public: Dataset) -> np.ndarray:
    """Exact answers of the public records to a restricted query collection."""
    dom = restricted.domain
    col_of = {nm: j for j, nm in enumerate(public.domain.names)}
    out = np.empty(restricted.total_queries)
    for w in restricted.workloads:
        loc = np.zeros(public.n, dtype=np.int64)
        for f, st in zip(w.features, w.local_strides()):
            loc += public.records[:, col_of[dom.names[f]]] * st
        out[w.offset : w.offset + w.n_queries] = (
            np.bincount(loc, minlength=w.n_queries) / public.n
        )
    return out


def gem_pub_pretrain(
    domain: Domain,
    public: Dataset,
    queries: QuerySet,
    cfg: GemConfig,
    rng: np.random.Generator,
    steps: int = 3000,
    lr: float = 1e-3,
    tol: float = 0.0,
) -> tuple[Params, dict]:
    """Fit a fresh generator to exact public answers (no privacy involved).

    Only workloads that fit inside the public schema contribute. Returns the
    trained parameters plus a small info dict (steps used, final max error).
    """
    if public.n == 0:
        raise DataError("empty public dataset")
    restricted = restrict_to_public(queries, public.domain)
    targets = public_answers(restricted, public)
    params = init_params(rng, cfg.z_dim, cfg.hidden, domain.onehot_width)
    Z = rng.standard_normal((cfg.batch, cfg.z_dim))
    opt = Adam(params, lr)
    idx = restricted.idx
    max_err = float("inf")
    used = 0
    for used in range(1, max(1, steps) + 1):
        _, grads, c = gem_gradient(params, Z, domain, idx, targets, 0.0, cfg.loss)
        params = opt.step(params, grads)
        max_err = float(np.abs(c).max())
        if max_err < tol:
            break
    return params, {"steps": used, "max_err": max_err, "queries": restricted.total_queries}


def best_mixture_error(
    support_cells: np.ndarray,
    queries: QuerySet,
    target_answers: np.ndarray,
    iterations: int = 2000,
) -> float:
    """min over support reweightings of the max query residual.

    Solved as a zero-sum game by multiplicative weights on the mixture
    against best-response signed queries, rate 0.5/sqrt(iterations); returns
    the smallest max-residual seen across iterates and the running average.
    """
    cells = np.asarray(support_cells, dtype=np.int64)
    if cells.size == 0:
        raise DataError("empty support")
    targets = np.asarray(target_answers, dtype=np.float64)
    if targets.shape[0] != queries.total_queries:
        raise DataError("target vector does not match the query collection")
    if iterations < 1:
        raise DataError("iterations must be >= 1")
    dom = queries.domain
    locals_ = [w.locals_of_cells(dom, cells) for w in queries.workloads]

    def mix_answers(mu: np.ndarray) -> np.ndarray:
        out = np.empty(queries.total_queries)
        for w, loc in zip(queries.workloads, locals_):
            out[w.offset : w.offset + w.n_queries] = np.bincount(
                loc, weights=mu, minlength=w.n_queries
            )
        return out

    def indicator(qidx: int) -> np.ndarray:
        wi = queries.workload_of(qidx)
        return (locals_[wi] == (qidx - queries.workloads[wi].offset)).astype(np.float64)

    lr = 0.5 / math.sqrt(iterations)
    mu = np.full(cells.size, 1.0 / cells.size)
    avg = np.zeros_like(mu)
    best = float("inf")
    for it in range(1, iterations + 1):
        r = targets - mix_answers(mu)
        worst = int(np.argmax(np.abs(r)))
        best = min(best, float(np.abs(r).max()))
        # mixture player response: downweight cells that worsen the residual
        sign = 1.0 if r[worst] >= 0 else -1.0
        mu = mu * np.exp(lr * sign * indicator(worst))
        mu /= mu.sum()
        avg += mu
        if it % 50 == 0 or it == iterations:
            r_avg = targets - mix_answers(avg / it)
            best = min(best, float(np.abs(r_avg).max()))
    return best
