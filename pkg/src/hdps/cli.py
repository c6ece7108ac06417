"""Command-line entry point ``hdps``.

Exit status is 0 on success and 2 on configuration or regime errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import CoefficientVector, Dataset, rn_proxy
from .errors import HdpsError
from .harness import ExperimentConfig, run_experiment
from .lasso import default_lambda, fit_lasso
from .lintest import MC_DRAWS, METHODS, Hypothesis, linear_test, mc_quantile, satterthwaite_quantile
from .postsel import default_tau, fit_post_ols, select_support

log = logging.getLogger("hdps")

EXIT_CONFIG = 2


def _load_csv(path: Path) -> Dataset:
    with path.open(newline="") as fh:
        header = next(csv.reader(fh))
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.shape[1] != len(header) or arr.shape[1] < 2:
        raise HdpsError(f"{path}: expected covariate columns followed by y, got {arr.shape[1]} columns")
    Z = np.asfortranarray(arr[:, :-1])
    Y = arr[:, -1].copy()
    p = Z.shape[1]
    # the truth is unknown for supplied data; a zero placeholder keeps the Dataset shape
    truth = CoefficientVector(np.zeros(p), np.zeros(0, np.intp), np.zeros(0, np.intp), 0.0, 0.0)
    return Dataset(Z=Z, Y=Y, noise=np.full_like(Y, np.nan), truth=truth, seed=-1)


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        config = ExperimentConfig.from_dict({**config.to_dict(), "seed": args.seed})
    _, summary = run_experiment(config, out_dir=args.out, workers=args.workers, force=args.force)
    json.dump(summary, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def _cmd_test(args: argparse.Namespace) -> int:
    data = _load_csv(Path(args.data))
    n, p = data.Z.shape
    with Path(args.hypothesis).open() as fh:
        hyp = Hypothesis.from_dict(json.load(fh), p=p)
    if args.lam is not None:
        lam = args.lam
    else:
        # without a known noise level, the sample sd of Y is a conservative stand-in
        sigma = args.sigma if args.sigma is not None else float(np.std(data.Y))
        lam = default_lambda(n, p, sigma, args.lambda_c)
    if args.tau is not None:
        tau = args.tau
    elif args.gamma is not None:
        tau = default_tau(rn_proxy(n, p, args.rn_c), args.eta, args.gamma)
    else:
        raise HdpsError("supply --tau, or --gamma (and optionally --eta) for the automatic threshold")
    est = fit_lasso(data, lam, tol=args.tol)
    if not est.converged:
        log.warning("lasso did not converge: max KKT violation %.3g", est.max_kkt_violation)
    fit = fit_post_ols(data, select_support(est, tau), ridge_guard=args.ridge_guard)
    res = linear_test(fit, hyp, alpha=args.alpha, method=args.method, mc_draws=args.mc_draws, mc_seed=args.seed)
    out = {"test": res.to_dict(), "fit": fit.summary(), "lasso": est.diagnostics()}
    json.dump(out, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def _cmd_quantile(args: argparse.Namespace) -> int:
    if args.method == "monte-carlo":
        c = mc_quantile(args.sigma2, args.lambdas, args.alpha, args.draws, args.seed, args.workers)
    else:
        c = satterthwaite_quantile(args.sigma2, args.lambdas, args.alpha)
    print(repr(c))
    return 0


def _method(s: str) -> str:
    alias = {"mc": "monte-carlo", "mm": "moment-match"}
    s = alias.get(s, s)
    if s not in METHODS:
        raise argparse.ArgumentTypeError(f"method must be mc or mm, got {s!r}")
    return s


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdps", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a seeded replication study")
    sim.add_argument("--config", required=True, type=Path)
    sim.add_argument("--out", required=True, type=Path)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--force", action="store_true", help="run even outside the selection regime")
    sim.add_argument("--seed", type=int, default=None, help="override the config master seed")
    sim.set_defaults(func=_cmd_simulate)

    tst = sub.add_parser("test", help="test A theta = b on a CSV dataset (y in the last column)")
    tst.add_argument("--data", required=True, type=Path)
    tst.add_argument("--hypothesis", required=True, type=Path)
    tst.add_argument("--alpha", type=float, default=0.05)
    tst.add_argument("--method", type=_method, default="monte-carlo")
    tst.add_argument("--lambda", dest="lam", type=float, default=None)
    tst.add_argument("--lambda-c", type=float, default=1.0)
    tst.add_argument("--sigma", type=float, default=None)
    tst.add_argument("--tau", type=float, default=None)
    tst.add_argument("--gamma", type=float, default=None)
    tst.add_argument("--eta", type=float, default=0.0)
    tst.add_argument("--rn-c", type=float, default=1.0)
    tst.add_argument("--tol", type=float, default=1e-8)
    tst.add_argument("--ridge-guard", type=float, default=0.0)
    tst.add_argument("--mc-draws", type=int, default=MC_DRAWS)
    tst.add_argument("--seed", type=int, default=0)
    tst.set_defaults(func=_cmd_test)

    qnt = sub.add_parser("quantile", help="upper quantile of sigma2 * sum lambda_j chi2_1")
    qnt.add_argument("--lambdas", type=float, nargs="+", required=True)
    qnt.add_argument("--sigma2", type=float, default=1.0)
    qnt.add_argument("--alpha", type=float, default=0.05)
    qnt.add_argument("--method", type=_method, default="monte-carlo")
    qnt.add_argument("--draws", type=int, default=MC_DRAWS)
    qnt.add_argument("--seed", type=int, default=0)
    qnt.add_argument("--workers", type=int, default=1)
    qnt.set_defaults(func=_cmd_quantile)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"hdps: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
