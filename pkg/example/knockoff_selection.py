# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

import argparse
import logging
from kobt.boosted_tree import BoostParams
from kobt.core_data import RngStream
from kobt.knockoff_filter import FilterConfig, run_kobt
from kobt.knockoff_gen import KnockoffConfig
from kobt.sim_harness import SimDesign, evaluate_power_fdr, simulate

knockoffs = {
    "shrunk": KnockoffConfig(kind="shrunk_gaussian"),
    "sparse": KnockoffConfig(kind="sparse_gaussian"),
    "pc10": KnockoffConfig(kind="pc_permute", num_pcs=10),
}


def simulated_selection(design, knockoff, statistic, q, delta, seed, threads):
    truth = simulate(design, RngStream(seed))
    config = FilterConfig(
        q=q,
        delta=delta,
        statistic=statistic,
        knockoff=knockoffs[knockoff],
        boost=BoostParams(eta=0.1, max_trees=300),
        cv_folds=5,
        master_seed=seed,
    )
    result = run_kobt(truth.dataset(), config, n_jobs=threads)
    return result, evaluate_power_fdr(result.selected, truth.signal_indices)


def main(args):
    design = SimDesign(n=args.n, p=args.p, pi=args.pi, strength=args.strength, structure=args.structure)
    result, score = simulated_selection(
        design, args.knockoff, args.statistic, args.q, args.delta, args.seed, args.threads
    )
    print(f"tau = {result.tau:.6g}, {len(result.selected)} selected: {', '.join(result.selected_names)}")
    print(f"power = {score.power:.3f}, FDP = {score.fdp:.3f}")


if __name__ == "__main__":

    parser = argparse.ArgumentParser(description="knockoff selection on a simulated design")
    parser.add_argument("--n", type=int, default=100, help="samples")
    parser.add_argument("--p", type=int, default=200, help="features")
    parser.add_argument("--pi", type=float, default=0.04, help="signal proportion")
    parser.add_argument("--strength", type=float, default=1.5, help="signal coefficient")
    parser.add_argument("--structure", type=str, default="main",
                        choices=["main", "interaction", "exponential", "quadratic"])
    parser.add_argument("--knockoff", type=str, default="shrunk", choices=sorted(knockoffs))
    parser.add_argument("--statistic", type=str, default="shap",
                        choices=["gain", "cover", "frequency", "shap", "saabas"])
    parser.add_argument("--q", type=int, default=20, help="knockoff replicates")
    parser.add_argument("--delta", type=float, default=0.1, help="target FDR")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--threads", type=int, default=1, help="worker processes")

    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    main(args)
