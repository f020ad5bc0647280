"""Max-error benchmark of every synthesizer on the bundled toy data.

Fits each method over several seeds at a shared zCDP budget derived from
(epsilon, delta=1/n^2), then prints per-seed and mean max errors next to two
reference points: the uniform distribution (no data) and a per-query
Gaussian mechanism spending the same total budget.

    python3 scripts/run_toy_benchmark.py --epsilon 1.0 --seeds 5
"""
import argparse
import math
import time

import numpy as np

from dpsynth.gem import GemConfig, GemSynthesizer
from dpsynth.loop import RunConfig, run
from dpsynth.mwem import MwemSynthesizer
from dpsynth.pep import PepSynthesizer
from dpsynth.privacy import Accountant, dp_to_zcdp
from dpsynth.queries import build_workloads
from dpsynth.rap import RapConfig, RapSynthesizer
from dpsynth.report import errors
from dpsynth.search import DualQueryConfig, DualQuerySynthesizer, FemConfig, FemSynthesizer
from dpsynth.toy import gen_toy

METHODS = ("mwem", "pep", "gem", "rap-softmax", "dualquery", "fem")


def build(method, domain, queries, rng, T, args):
    if method == "mwem":
        return MwemSynthesizer(domain, queries)
    if method == "pep":
        return PepSynthesizer(domain, queries)
    if method == "gem":
        return GemSynthesizer(domain, queries, GemConfig(), rng, total_rounds=T)
    if method == "rap-softmax":
        return RapSynthesizer(domain, queries, RapConfig(max_steps=args.rap_steps), rng)
    if method == "dualquery":
        return DualQuerySynthesizer(domain, queries, DualQueryConfig())
    if method == "fem":
        return FemSynthesizer(domain, queries, FemConfig())
    raise ValueError(method)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epsilon", type=float, default=1.0)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--T", type=int, default=20)
    ap.add_argument("--alpha", type=float, default=0.67)
    ap.add_argument("--attrs", type=int, default=4)
    ap.add_argument("--sizes", type=int, default=8)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--marginal-k", type=int, default=3)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--rap-steps", type=int, default=300)
    ap.add_argument("--methods", nargs="*", default=list(METHODS), choices=METHODS)
    args = ap.parse_args()

    domain, data = gen_toy(args.attrs, args.sizes, args.n, args.data_seed)
    queries = build_workloads(domain, args.marginal_k)
    true_ans = queries.answers_records(data)
    delta = 1.0 / data.n**2
    rho = dp_to_zcdp(args.epsilon, delta)
    print(
        f"domain {domain.sizes} n={data.n} queries={queries.total_queries} "
        f"eps={args.epsilon} delta={delta:g} rho={rho:.6f}"
    )

    uniform_mass = np.full(domain.total_cells, 1.0 / domain.total_cells)
    uniform_err = errors(true_ans, queries.answers_mass(uniform_mass))[0]
    sigma = math.sqrt(queries.total_queries / (2.0 * rho)) / data.n
    gauss = []
    for seed in range(args.seeds):
        g = np.random.default_rng(1000 + seed)
        noisy = np.clip(true_ans + sigma * g.standard_normal(true_ans.size), 0.0, 1.0)
        gauss.append(errors(true_ans, noisy)[0])
    print(f"{'uniform':<12} {uniform_err:.4f}")
    print(f"{'gaussian':<12} {np.mean(gauss):.4f}  " + " ".join(f"{v:.3f}" for v in gauss))

    for method in args.methods:
        vals = []
        t0 = time.time()
        for seed in range(args.seeds):
            rng = np.random.default_rng(seed)
            synth = build(method, domain, queries, rng, args.T, args)
            if method in ("dualquery", "fem"):
                acct = Accountant.selection_only(rho, args.T, 1, data.n)
                cfg = RunConfig(T=args.T, k=1, alpha=1.0, seed=seed)
            else:
                acct = Accountant(rho, args.T, 1, args.alpha, data.n)
                cfg = RunConfig(T=args.T, k=1, alpha=args.alpha, seed=seed)
            out, _ = run(data, queries, synth, acct, cfg, rng)
            vals.append(errors(true_ans, out.answers(queries))[0])
        print(
            f"{method:<12} {np.mean(vals):.4f}  "
            + " ".join(f"{v:.3f}" for v in vals)
            + f"  [{time.time() - t0:.0f}s]"
        )


if __name__ == "__main__":
    main()
