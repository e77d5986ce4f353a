"""Command-line entry point.

Subcommands:
  run       execute a configured experiment into a run directory
  report    print summaries and render figures for completed run dirs
  selfcheck run the built-in oracle suites (gradient checks, sort oracle,
            RSA oracle)

Exit codes: 0 success, 1 config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import conflict as cf
from . import nn, search
from .config import ConfigError, default_config, load_config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bindgrow", description="Bind-and-grow task-incremental learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment")
    p_run.add_argument("--config", required=True, help="INI config file")
    p_run.add_argument("--out", required=True, help="run directory")
    p_run.add_argument("--seed", type=int, default=None, help="override [run] seed")

    p_rep = sub.add_parser("report", help="summarize one or more run directories")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.add_argument("--out", default=None, help="directory for rendered figures")
    p_rep.add_argument("--no-figures", action="store_true")

    sub.add_parser("selfcheck", help="run internal oracle suites")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            return _cmd_report(args)
        return _cmd_selfcheck()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def _cmd_run(args) -> int:
    from . import runner

    overrides = {}
    if args.seed is not None:
        overrides[("run", "seed")] = args.seed
    cfg = load_config(args.config, overrides)
    out_dir = runner.execute(cfg, args.out)
    print(f"run complete: {out_dir}")
    return 0


def _cmd_report(args) -> int:
    from . import report

    try:
        report.summarize(args.run_dirs)
        if not args.no_figures:
            for path in report.render_figures(args.run_dirs, args.out):
                print(f"wrote {path}")
    except report.ReportError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


def _cmd_selfcheck() -> int:
    failures = 0

    # gradient checks, every layer kind
    rng = np.random.default_rng(0)
    kinds = [
        nn.Dense(3, 2),
        nn.Conv2D(2, 3, 2),
        nn.ReLU(),
        nn.MaxPool2D(2),
        nn.Flatten(),
        nn.SoftmaxCrossEntropyHead(4, 3),
    ]
    for kind in kinds:
        worst = max(nn.finite_diff_check(kind, rng) for _ in range(5))
        ok = worst < 1e-4
        failures += not ok
        print(f"gradient check {type(kind).__name__}: max rel err {worst:.2e} "
              f"{'PASS' if ok else 'FAIL'}")

    # non-dominated sort vs brute force
    ok = True
    for trial in range(20):
        pts = [tuple(v) for v in rng.random((30, 2))]
        fronts = search.non_dominated_sort(pts)
        brute0 = [i for i in range(len(pts)) if not any(search.dominates(pts[j], pts[i]) for j in range(len(pts)))]
        ok &= sorted(fronts[0]) == sorted(brute0)
    failures += not ok
    print(f"non-dominated sort vs brute force: {'PASS' if ok else 'FAIL'}")

    # RDM / Spearman vs direct definition
    ok = True
    for trial in range(20):
        a = rng.standard_normal((6, 5))
        m = cf.rdm(a)
        for i in range(6):
            for j in range(6):
                direct = 1.0 - np.corrcoef(a[i], a[j])[0, 1] if i != j else 0.0
                ok &= abs(m[i, j] - direct) < 1e-12
        u, v = rng.standard_normal(15), rng.standard_normal(15)
        from scipy.stats import spearmanr

        ok &= abs(cf.spearman(u, v) - spearmanr(u, v).statistic) < 1e-12
    failures += not ok
    print(f"RDM/Spearman vs direct oracle: {'PASS' if ok else 'FAIL'}")

    if failures:
        print(f"selfcheck: {failures} suite(s) FAILED")
        return 2
    print("selfcheck: all suites passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
