"""Test-MSE of joint training versus main-only training across illustrative-task sample sizes.

Used to pick the default training-set size: the joint method only beats the
baseline when the main task is data-starved relative to the auxiliary set.
"""
import argparse
import itertools

import numpy as np

from auxilearn.experiments import load_config, run_experiment


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-train", type=int, nargs="+", default=[20, 40])
    parser.add_argument("--n-aux", type=int, nargs="+", default=[10, 20])
    parser.add_argument("--seeds", type=int, default=20)
    args = parser.parse_args(argv)

    print("n_train n_aux  auxilearn      stl   win_rate")
    for n_train, n_aux in itertools.product(args.n_train, args.n_aux):
        cfg = load_config("illustrative", {"task": {"n_train": n_train, "n_aux": n_aux}})
        runs = [run_experiment(cfg, seed).summary for seed in range(args.seeds)]
        aux = np.array([r["test_mse"] for r in runs])
        stl = np.array([r["stl_test_mse"] for r in runs])
        print(f"{n_train:7d} {n_aux:5d} {aux.mean():10.4f} {stl.mean():8.4f} {np.mean(aux < stl):10.2f}")


if __name__ == "__main__":
    main()
