"""Command-line front end.

Subcommands: synth, evaluate, accountant, pretrain, best-mixture-error,
gen-toy. Exit codes: 0 success, 2 usage or config conflict, 3 domain over
the histogram cell cap, 4 file or data errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from .domain import (
    DEFAULT_CELL_CAP,
    CapacityError,
    DataError,
    Dataset,
    Domain,
    DomainError,
    SupportDistribution,
)
from .gem import GemConfig, GemOutput, GemSynthesizer, forward, load_checkpoint, save_checkpoint
from .loop import RunConfig, run
from .mwem import MwemSynthesizer
from .pep import PepSynthesizer
from .privacy import Accountant, BudgetError, dp_to_zcdp
from .public import best_mixture_error, gem_pub_pretrain, pep_pub_init
from .queries import QuerySet, build_workloads
from .rap import RapConfig, RapSynthesizer
from .report import (
    build_report,
    write_errors_csv,
    write_report,
    write_trace,
)
from .search import DualQueryConfig, DualQuerySynthesizer, FemConfig, FemSynthesizer
from .toy import gen_toy

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CAPACITY = 3
EXIT_FILE = 4

METHODS = ("mwem", "pep", "gem", "rap-softmax", "dualquery", "fem")
HISTOGRAM_METHODS = ("mwem", "pep")


class UsageError(ValueError):
    pass


def _budget_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rho", type=float, default=None, help="zCDP budget")
    p.add_argument("--epsilon", type=float, default=None, help="DP epsilon (needs --delta)")
    p.add_argument("--delta", type=float, default=None, help="DP delta")


def _resolve_budget(args) -> tuple[float, float | None, float | None]:
    """Returns (rho, epsilon, delta). Exactly one of --rho / --epsilon."""
    if args.rho is not None and args.epsilon is not None:
        raise UsageError("give either --rho or --epsilon/--delta, not both")
    if args.rho is not None:
        eps = None
        if args.delta is not None:
            from .privacy import zcdp_to_dp

            eps = zcdp_to_dp(args.rho, args.delta)
        return args.rho, eps, args.delta
    if args.epsilon is not None:
        if args.delta is None:
            raise UsageError("--epsilon needs --delta")
        return dp_to_zcdp(args.epsilon, args.delta), args.epsilon, args.delta
    raise UsageError("a privacy budget is required: --rho or --epsilon/--delta")


def _workload_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--marginal-k", type=int, default=3, help="marginal order")
    p.add_argument(
        "--workloads",
        default="all",
        help="number of feature subsets to use, or 'all'",
    )
    p.add_argument("--workload-seed", type=int, default=None, help="seed for workload sampling")


def _build_queries(args, domain: Domain) -> QuerySet:
    count = None if str(args.workloads) == "all" else int(args.workloads)
    wl_seed = args.workload_seed if args.workload_seed is not None else getattr(args, "seed", 0)
    qs = build_workloads(domain, args.marginal_k, count, np.random.default_rng(wl_seed))
    qs.threads = _threads(args)
    return qs


def _threads(args) -> int:
    t = getattr(args, "threads", None)
    if t is None:
        env = os.environ.get("DPSYNTH_THREADS")
        if env:
            try:
                t = int(env)
            except ValueError:
                raise UsageError(f"DPSYNTH_THREADS must be an integer, got {env!r}") from None
        else:
            t = os.cpu_count() or 1
    if t < 1:
        raise UsageError("--threads must be >= 1")
    return t


def _load_public(path, domain: Domain) -> Dataset:
    """Public CSV over a subset of the private attributes (matched by name)."""
    import csv as _csv

    with open(path, newline="") as f:
        try:
            header = [h.strip() for h in next(_csv.reader(f))]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
    unknown = [h for h in header if h not in domain.names]
    if unknown:
        raise DataError(f"{path}: attributes {unknown} not in the private domain")
    names = tuple(n for n in domain.names if n in header)
    sizes = tuple(domain.sizes[domain.names.index(n)] for n in names)
    return Dataset.from_csv(path, Domain(names, sizes))


def _parse_hidden(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise UsageError(f"bad hidden layer list: {text!r}") from None


def _gem_config(args) -> GemConfig:
    return GemConfig(
        hidden=_parse_hidden(args.gem_hidden),
        z_dim=args.gem_zdim,
        batch=args.gem_batch,
        lr=args.gem_lr,
        t_max=args.gem_tmax,
        loss=args.gem_loss,
        resample_z=args.gem_resample_z,
        ema_beta=args.gem_ema_beta,
    )


def _gem_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gem-hidden", default="64,128")
    p.add_argument("--gem-zdim", type=int, default=16)
    p.add_argument("--gem-batch", type=int, default=100)
    p.add_argument("--gem-lr", type=float, default=1e-4)
    p.add_argument("--gem-tmax", type=int, default=100)
    p.add_argument("--gem-loss", choices=("l1", "l2"), default="l1")
    p.add_argument("--gem-resample-z", action="store_true")
    p.add_argument("--gem-ema-beta", type=float, default=0.9)


# ---------------------------------------------------------------- synth ---


def cmd_synth(args) -> int:
    # pure argument validation comes before any file is touched
    rho, epsilon, delta = _resolve_budget(args)
    if args.public and args.method not in ("pep", "gem"):
        raise UsageError("--public applies only to methods pep and gem")
    if args.gem_init and args.method != "gem":
        raise UsageError("--gem-init applies only to method gem")
    if args.public and args.gem_init:
        raise UsageError("give --public or --gem-init, not both")
    if args.output_average and args.method not in HISTOGRAM_METHODS:
        raise UsageError("--output-average is only available for mwem and pep")

    domain = Domain.load(args.domain)
    data = Dataset.from_csv(args.data, domain)
    if data.n == 0:
        raise DataError(f"{args.data}: no records")
    queries = _build_queries(args, domain)
    rng = np.random.default_rng(args.seed)

    if args.method in ("dualquery", "fem"):
        acct = Accountant.selection_only(rho, args.T, args.k, data.n)
    else:
        acct = Accountant(rho, args.T, args.k, args.alpha, data.n)

    synth = _build_synth(args, domain, data, queries, rng)

    cfg = RunConfig(
        T=args.T,
        k=args.k,
        alpha=acct.alpha,
        seed=args.seed,
        per_workload=args.marginal_trick,
        no_noise=args.no_noise,
        audit_errors=args.audit_errors,
        output="average" if args.output_average else "last",
        em_score_halved=args.em_halved,
    )
    if args.no_noise:
        print("warning: --no-noise disables privacy; output is NOT private", file=sys.stderr)

    t0 = time.perf_counter()
    out, trace = run(data, queries, synth, acct, cfg, rng)
    wall = time.perf_counter() - t0

    true_ans = queries.answers_records(data)
    synth_ans = out.answers(queries)

    if args.out:
        count = args.samples if args.samples else data.n
        out.sample_dataset(count, rng).to_csv(args.out)
    if args.save_dist:
        _save_artifact(out, args.save_dist)
    if args.trace:
        write_trace(trace, args.trace)
    if args.dump_errors:
        write_errors_csv(queries, true_ans, synth_ans, args.dump_errors)

    report = build_report(
        method=args.method,
        queries=queries,
        true_answers=true_ans,
        synth_answers=synth_ans,
        rho=rho,
        epsilon=epsilon,
        delta=delta,
        eps0=acct.eps0,
        T=args.T,
        k=args.k,
        alpha=acct.alpha,
        seed=args.seed,
        n=data.n,
        private=not args.no_noise,
        wall_time_sec=wall,
        config=_config_echo(args),
    )
    if args.report:
        write_report(report, args.report)
    e = report["errors"]
    print(
        f"{args.method}: rho={rho:.6g} max={e['max']:.6g} mean={e['mean']:.6g} rmse={e['rmse']:.6g}"
    )
    return EXIT_OK


def _build_synth(args, domain, data, queries, rng):
    method = args.method
    if method == "mwem":
        return MwemSynthesizer(
            domain, queries, eta=args.mwem_eta, cycles=args.mwem_cycles, cell_cap=args.cell_cap
        )
    if method == "pep":
        if args.public:
            public = _load_public(args.public, domain)
            return pep_pub_init(
                public, domain, queries, gamma=args.pep_gamma, t_max=args.pep_tmax
            )
        return PepSynthesizer(
            domain, queries, gamma=args.pep_gamma, t_max=args.pep_tmax, cell_cap=args.cell_cap
        )
    if method == "gem":
        cfg = _gem_config(args)
        init = None
        if args.gem_init:
            params, ck_domain, z_dim, hidden = load_checkpoint(args.gem_init)
            if ck_domain.names != domain.names or ck_domain.sizes != domain.sizes:
                raise DataError("checkpoint domain does not match --domain")
            # the checkpoint's weights fix the architecture; flags keep the
            # training knobs (batch, lr, t_max, loss, ...)
            cfg = dataclasses.replace(cfg, z_dim=z_dim, hidden=hidden)
            init = params
        elif args.public:
            public = _load_public(args.public, domain)
            init, info = gem_pub_pretrain(
                domain,
                public,
                queries,
                cfg,
                rng,
                steps=args.pretrain_steps,
                lr=args.pretrain_lr,
                tol=args.pretrain_tol,
            )
            print(
                f"pretrained on public data: {info['queries']} queries, "
                f"{info['steps']} steps, max_err={info['max_err']:.4g}",
                file=sys.stderr,
            )
        return GemSynthesizer(
            domain,
            queries,
            cfg,
            rng,
            total_rounds=args.T,
            init=init,
            exact_targets=args.no_noise,
        )
    if method == "rap-softmax":
        cfg = RapConfig(
            rows=args.rap_rows, lr=args.rap_lr, max_steps=args.rap_steps, original=args.rap_original
        )
        return RapSynthesizer(domain, queries, cfg, rng)
    if method == "dualquery":
        return DualQuerySynthesizer(
            domain,
            queries,
            DualQueryConfig(eta=args.dq_eta, samples=args.dq_samples),
            cell_cap=args.cell_cap,
        )
    if method == "fem":
        return FemSynthesizer(
            domain,
            queries,
            FemConfig(sigma=args.fem_sigma, samples=args.fem_samples),
            cell_cap=args.cell_cap,
        )
    raise UsageError(f"unknown method {method!r}")


def _save_artifact(out, path) -> None:
    if isinstance(out, GemOutput):
        out.save_checkpoint(path)
    elif isinstance(out, SupportDistribution):
        out.save_npz(path)
    else:
        out.save_npz(path)  # relaxed rows


def _config_echo(args) -> dict:
    skip = {"func", "domain", "data", "out", "report", "trace", "dump_errors", "save_dist"}
    return {
        k: v for k, v in sorted(vars(args).items()) if k not in skip and not callable(v)
    }


# ------------------------------------------------------------- evaluate ---


def cmd_evaluate(args) -> int:
    if (args.synthetic is None) == (args.dist is None):
        raise UsageError("give exactly one of --synthetic or --dist")
    domain = Domain.load(args.domain)
    data = Dataset.from_csv(args.data, domain)
    queries = _build_queries(args, domain)
    true_ans = queries.answers_records(data)
    if args.synthetic:
        synth_ans = queries.answers_records(Dataset.from_csv(args.synthetic, domain))
    else:
        synth_ans = _load_artifact(args.dist, domain, args).answers(queries)
    from .report import errors as _errors

    mx, mn, rmse = _errors(true_ans, synth_ans)
    print(f"max={mx:.6g} mean={mn:.6g} rmse={rmse:.6g}")
    if args.dump_errors:
        write_errors_csv(queries, true_ans, synth_ans, args.dump_errors)
    if args.report:
        write_report(
            {
                "schema_version": 1,
                "errors": {"max": mx, "mean": mn, "rmse": rmse},
                "marginal_k": queries.k,
                "workload_count": len(queries.workloads),
                "query_count": queries.total_queries,
            },
            args.report,
        )
    return EXIT_OK


def _load_artifact(path, domain: Domain, args):
    """Histogram/support .npz, relaxed-rows .npz, or a generator checkpoint."""
    if str(path).endswith(".npz"):
        with np.load(path, allow_pickle=False) as z:
            keys = set(z.files)
        if {"cells", "probs"} <= keys:
            dist = SupportDistribution.load_npz(path)
        elif "P" in keys:
            from .rap import RapOutput

            with np.load(path, allow_pickle=False) as z:
                dist = RapOutput(Domain.from_json(str(z["domain"])), z["P"])
        else:
            raise DataError(f"{path}: unrecognized artifact layout")
        if dist.domain.names != domain.names or dist.domain.sizes != domain.sizes:
            raise DataError(f"{path}: artifact domain does not match --domain")
        return dist
    params, ck_domain, z_dim, hidden = load_checkpoint(path)
    if ck_domain.names != domain.names or ck_domain.sizes != domain.sizes:
        raise DataError(f"{path}: checkpoint domain does not match --domain")
    batch = getattr(args, "gem_batch", 100)
    rng = np.random.default_rng(getattr(args, "seed", 0))
    Z = rng.standard_normal((batch, z_dim))
    P, _ = forward(params, Z, ck_domain)
    cfg = GemConfig(hidden=hidden, z_dim=z_dim, batch=batch)
    return GemOutput(ck_domain, P, params, cfg)


# ------------------------------------------------------------ accountant --


def cmd_accountant(args) -> int:
    rho, epsilon, delta = _resolve_budget(args)
    acct = Accountant(rho, args.T, args.k, args.alpha, args.n)
    print(f"rho={acct.rho!r}")
    print(f"eps0={acct.eps0!r}")
    if acct.alpha < 1.0:
        print(f"sigma_single={float(acct.gaussian_sigma(1.0))!r}")
        print(f"sigma_workload={float(acct.gaussian_sigma(np.sqrt(2.0)))!r}")
    if delta is not None:
        print(f"epsilon({delta!r})={float(acct.epsilon(delta))!r}")
    return EXIT_OK


# -------------------------------------------------------------- pretrain --


def cmd_pretrain(args) -> int:
    domain = Domain.load(args.domain)
    public = _load_public(args.public, domain)
    queries = _build_queries(args, domain)
    cfg = _gem_config(args)
    rng = np.random.default_rng(args.seed)
    params, info = gem_pub_pretrain(
        domain, public, queries, cfg, rng, steps=args.steps, lr=args.lr, tol=args.tol
    )
    save_checkpoint(params, domain, cfg, args.out)
    print(
        f"pretrained: {info['queries']} public queries, {info['steps']} steps, "
        f"max_err={info['max_err']:.6g} -> {args.out}"
    )
    return EXIT_OK


# ---------------------------------------------------- best-mixture-error --


def cmd_best_mixture_error(args) -> int:
    domain = Domain.load(args.domain)
    data = Dataset.from_csv(args.data, domain)
    public = Dataset.from_csv(args.public, domain)
    queries = _build_queries(args, domain)
    targets = queries.answers_records(data)
    support = np.unique(public.cells())
    val = best_mixture_error(support, queries, targets, iterations=args.iterations)
    print(f"best_mixture_error={val!r}")
    return EXIT_OK


# ---------------------------------------------------------------- gen-toy --


def cmd_gen_toy(args) -> int:
    sizes: int | list[int]
    if "," in str(args.sizes):
        sizes = [int(s) for s in str(args.sizes).split(",") if s.strip()]
    else:
        sizes = int(args.sizes)
    domain, data = gen_toy(
        attrs=args.attrs, sizes=sizes, n=args.n, seed=args.seed, components=args.components
    )
    data.to_csv(args.out)
    if args.domain_out:
        domain.save(args.domain_out)
    print(f"wrote {data.n} records over {domain.total_cells} cells to {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------ main --


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpsynth", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="fit a private synthetic distribution")
    p.add_argument("--domain", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    _budget_args(p)
    _workload_args(p)
    p.add_argument("--T", type=int, default=10, help="rounds")
    p.add_argument("--k", type=int, default=1, help="queries selected per round")
    p.add_argument("--alpha", type=float, default=0.67, help="selection budget share")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--marginal-trick", action="store_true", help="measure whole workloads")
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--audit-errors", action="store_true")
    p.add_argument("--output-average", action="store_true")
    p.add_argument("--em-halved", action="store_true", help="halve the selection exponent")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--cell-cap", type=int, default=DEFAULT_CELL_CAP)
    p.add_argument("--samples", type=int, default=None, help="synthetic records to sample")
    p.add_argument("--out", default=None, help="synthetic CSV path")
    p.add_argument("--save-dist", default=None, help="distribution artifact path")
    p.add_argument("--report", default=None)
    p.add_argument("--trace", default=None)
    p.add_argument("--dump-errors", default=None)
    p.add_argument("--public", default=None, help="public CSV (methods pep, gem)")
    p.add_argument("--gem-init", default=None, help="generator checkpoint to start from")
    p.add_argument("--pretrain-steps", type=int, default=3000)
    p.add_argument("--pretrain-lr", type=float, default=1e-3)
    p.add_argument("--pretrain-tol", type=float, default=0.0)
    p.add_argument("--mwem-eta", type=float, default=2.0)
    p.add_argument("--mwem-cycles", type=int, default=10)
    p.add_argument("--pep-gamma", type=float, default=0.0)
    p.add_argument("--pep-tmax", type=int, default=25)
    _gem_args(p)
    p.add_argument("--rap-rows", type=int, default=1000)
    p.add_argument("--rap-lr", type=float, default=0.1)
    p.add_argument("--rap-steps", type=int, default=1000)
    p.add_argument("--rap-original", action="store_true")
    p.add_argument("--dq-eta", type=float, default=2.0)
    p.add_argument("--dq-samples", type=int, default=100)
    p.add_argument("--fem-sigma", type=float, default=0.1)
    p.add_argument("--fem-samples", type=int, default=100)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", help="score synthetic data against a dataset")
    p.add_argument("--domain", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--synthetic", default=None, help="synthetic CSV")
    p.add_argument("--dist", default=None, help="distribution artifact")
    _workload_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--gem-batch", type=int, default=100)
    p.add_argument("--report", default=None)
    p.add_argument("--dump-errors", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("accountant", help="print budget quantities")
    _budget_args(p)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--alpha", type=float, default=0.67)
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(func=cmd_accountant)

    p = sub.add_parser("pretrain", help="fit a generator to public data")
    p.add_argument("--domain", required=True)
    p.add_argument("--public", required=True)
    p.add_argument("--out", required=True)
    _workload_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=0.0)
    _gem_args(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser(
        "best-mixture-error", help="error floor of reweighting a public support"
    )
    p.add_argument("--domain", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--public", required=True)
    _workload_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--iterations", type=int, default=2000)
    p.set_defaults(func=cmd_best_mixture_error)

    p = sub.add_parser("gen-toy", help="sample a small correlated benchmark")
    p.add_argument("--attrs", type=int, default=4)
    p.add_argument("--sizes", default="8", help="single size or comma list")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--components", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--domain-out", default=None)
    p.set_defaults(func=cmd_gen_toy)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CapacityError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CAPACITY
    except (DataError, DomainError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FILE


if __name__ == "__main__":
    sys.exit(main())
