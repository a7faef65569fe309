"""Command-line interface.

Subcommands:
    validate <config>    check the config and the drift conditions
    simulate <config>    emit sample paths (deterministic + a few noisy ones)
    estimate <config>    full Monte Carlo experiment with report and figures
    limit-law <config>   limit-law samples and moment goldens only
    report <dir>         recompute aggregates, report files and figures
    properties <config>  run the property suite only

Exit codes: 0 ok, 1 config invalid, 2 property/acceptance failure,
3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .errors import ConfigError, CusplocError
from .harness import ExperimentConfig, compute_limit_samples, recompute_report, run_experiment
from .model import simulate_wiener, simulate_sde, solve_limit_ode, validate_model
from .rng import NoiseStream, PURPOSE_WIENER, pack_stream_index

logger = logging.getLogger("cusploc")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PROPERTY = 2
EXIT_RUNTIME = 3


def _load_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    return ExperimentConfig.from_yaml(path)


def _cmd_validate(args) -> int:
    config = _load_config(args.config)
    report = validate_model(
        config.model,
        b=config.model.h.lower_bound,
        H1=config.model.h.deriv_bound,
        dense_theta_check=config.dense_theta_check,
    )
    if report.ok:
        print("config ok: model satisfies the drift conditions")
        return EXIT_OK
    print("model validation failed:")
    for v in report.violations:
        print(f"  - {v}")
    return EXIT_CONFIG


def _cmd_simulate(args) -> int:
    config = _load_config(args.config)
    out = os.path.join(config.out_dir, "paths")
    os.makedirs(out, exist_ok=True)
    written = []
    for eps_index, eps in enumerate(config.eps_list):
        n = config.n_steps(eps)
        det = solve_limit_ode(config.model, config.theta0, n)
        p = os.path.join(out, f"deterministic_eps{eps_index:02d}_{eps:g}.csv")
        det.to_csv(p)
        written.append(p)
        for r in range(min(args.n_paths, config.n_replicates)):
            idx = pack_stream_index(PURPOSE_WIENER, eps_index, r)
            w = simulate_wiener(NoiseStream(config.master_seed, idx), n, config.model.T)
            x = simulate_sde(config.model, config.theta0, eps, w)
            p = os.path.join(out, f"observation_eps{eps_index:02d}_{eps:g}_rep{r:04d}.csv")
            x.to_csv(p)
            written.append(p)
    print(f"wrote {len(written)} path files to {out}")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    config = _load_config(args.config)
    report = run_experiment(config)
    failed = [p for p in report.properties if not p["skipped"] and not p["passed"]]
    print(f"report written to {config.out_dir}")
    for p in report.properties:
        print(f"  [{p['status']}] {p['name']}")
    return EXIT_PROPERTY if failed else EXIT_OK


def _cmd_limit_law(args) -> int:
    config = _load_config(args.config)
    os.makedirs(config.out_dir, exist_ok=True)
    samples = compute_limit_samples(config, out_dir=config.out_dir)
    meta = samples["meta"]
    print(
        f"limit law H={meta['H']:g}: E u_hat^2 = {meta['u_hat_sq']:.4f}, "
        f"E u_tilde^2 = {meta['u_tilde_sq']:.4f} "
        f"({meta['n_suspect']}/{meta['n_samples']} truncation-suspect)"
    )
    print(f"samples and moment goldens written to {config.out_dir}")
    return EXIT_OK


def _cmd_report(args) -> int:
    report = recompute_report(args.dir)
    failed = [p for p in report.properties if not p["skipped"] and not p["passed"]]
    print(f"report recomputed in {args.dir}")
    return EXIT_PROPERTY if failed else EXIT_OK


def _cmd_properties(args) -> int:
    from .properties import property_suite

    config = _load_config(args.config)
    results = property_suite(config)
    failed = False
    for p in results:
        print(f"[{p.status}] {p.name}: {p.detail}")
        if not p.skipped and not p.passed:
            failed = True
    return EXIT_PROPERTY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cusploc",
        description="cusp-location estimation experiments for small-noise diffusions",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a config and its model")
    p.add_argument("config")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("simulate", help="emit sample paths as CSV")
    p.add_argument("config")
    p.add_argument("--n-paths", type=int, default=3,
                   help="observation paths per eps (default 3)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("estimate", help="full Monte Carlo experiment")
    p.add_argument("config")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("limit-law", help="limit-law samples and moments")
    p.add_argument("config")
    p.set_defaults(func=_cmd_limit_law)

    p = sub.add_parser("report", help="recompute aggregates from a results dir")
    p.add_argument("dir")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("properties", help="run the property suite")
    p.add_argument("config")
    p.set_defaults(func=_cmd_properties)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        datefmt="%H:%M:%S",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CusplocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
