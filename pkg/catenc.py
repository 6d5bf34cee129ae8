"""
catenc command line: encode, simulate, oracle-check and bench.

    python catenc.py simulate --setup latent_linear --n 1000 --latent 4 --groups 40 --p 10 --seed 7 --out d.csv
    python catenc.py encode --method means --input d.csv --schema s.cfg --out e.csv
    python catenc.py oracle-check --k 3 --groups 12 --support 6 --seed 1
    python catenc.py bench --config bench.json --out report.csv

Diagnostics go to stderr. Exit codes: 0 ok, 1 invalid input or flags,
2 unusable data, 3 numerical failure.
"""

import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

import pandas as pd

from errors import CatencError, ConfigurationError, ValidationError
from settings import Settings, configure_logging, load_settings

log = logging.getLogger("catenc")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} must be >= 1")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if value < 0:
        raise argparse.ArgumentTypeError(f"{value} must be >= 0")
    return value


def _non_negative_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number")
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"{value} must be >= 0")
    return value


def _k_or_cv(text: str):
    return "cv" if text == "cv" else _positive_int(text)


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------


def _read_dataset(path, schema_path):
    from dataset import infer_schema, load_csv, load_schema, read_headers

    if schema_path:
        schema = load_schema(schema_path)
    else:
        schema = infer_schema(read_headers(path))
    return load_csv(path, schema)


def cmd_encode(args, settings: Settings) -> int:
    from encoders import encode_dataset, fit_encoder, load_encoder, save_encoder, select_k_by_cv
    from numlin import DEFAULT_MNL_REG

    d = _read_dataset(args.input, args.schema)
    seed = args.seed if args.seed is not None else settings.seed
    if args.model_in:
        enc = load_encoder(args.model_in)
        log.info("applying saved %s encoder from %s", enc.method, args.model_in)
    else:
        if not args.method:
            raise ConfigurationError("encode needs --method or --model-in")
        params = {"unseen_policy": args.unseen_policy}
        if args.method in ("lowrank", "sparselowrank"):
            k = args.k
            if k is None or k == "cv":
                if d.y is None:
                    raise ConfigurationError(f"{args.method} needs --k when the data has no response")
                k = select_k_by_cv(
                    d, args.method, folds=args.folds, seed=seed,
                    lam=args.lam, lam1=args.lam1,
                )
                log.info("cross-validation picked k=%d", k)
            params.update(k=k, lam=args.lam, lam1=args.lam1)
        elif args.method == "mnl":
            reg = args.reg if args.reg is not None else settings.mnl_reg
            params["reg"] = DEFAULT_MNL_REG if reg is None else reg
        elif args.method in ("permutation", "multiperm"):
            params["seed"] = seed
            if args.copies is not None:
                params["copies"] = args.copies
        enc = fit_encoder(args.method, d, **params)

    design, labels = encode_dataset(enc, d)
    frame = pd.DataFrame(design, columns=list(labels))
    if d.y is not None:
        frame[d.response_name] = d.y
    frame.to_csv(args.out, index=False, lineterminator="\n")
    log.info("wrote %d rows x %d encoding columns to %s", d.n, enc.output_dim, args.out)
    if args.model_out:
        save_encoder(enc, args.model_out)
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args, settings: Settings) -> int:
    from dataset import write_csv
    from dgp_sim import SimConfig, simulate, write_params

    cfg = SimConfig(
        n=args.n,
        num_latent=args.latent,
        num_groups=args.groups,
        p=args.p,
        p_assign=args.p_assign,
        setup=args.setup,
        seed=args.seed if args.seed is not None else settings.seed,
        shared_support=args.shared_support,
        noise_scale=args.noise_scale,
    )
    out = simulate(cfg)
    extra = {"latent": out.latent} if args.with_latent else None
    write_csv(out.dataset, args.out, extra=extra)
    if args.params_out:
        write_params(out.params, args.params_out)
    log.info("simulated %d rows (%d regenerations) into %s", cfg.n, out.regenerations, args.out)
    return 0


# ---------------------------------------------------------------------------
# oracle-check
# ---------------------------------------------------------------------------


def cmd_oracle(args, settings: Settings) -> int:
    from oracle import run_oracle_suite

    rows = run_oracle_suite(
        K=args.k,
        M=args.groups,
        support_size=args.support,
        seed=args.seed if args.seed is not None else settings.seed,
        p=args.p,
        worlds=args.worlds,
        mnl_n=args.mnl_n,
    )
    width = max(len(r.name) for r in rows)
    print(f"{'check':<{width}}  {'max_error':>10}  {'tolerance':>9}  result")
    for r in rows:
        print(f"{r.name:<{width}}  {r.max_error:10.3e}  {r.tolerance:9.1e}  {'PASS' if r.passed else 'FAIL'}")
    failed = [r.name for r in rows if not r.passed]
    if failed:
        log.error("%d identity check(s) failed: %s", len(failed), ", ".join(failed))
        return 3
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def bench_config_from_args(args, settings: Settings):
    """defaults < environment < --config JSON < flags"""
    from evalbench import BenchConfig, MethodSpec, load_bench_config

    base = BenchConfig(master_seed=settings.seed, threads=settings.threads)
    if settings.mnl_reg is not None:
        base = replace(base, mnl_reg=settings.mnl_reg)
    config = load_bench_config(args.config, base) if args.config else base

    flags = {
        "folds": args.folds,
        "seeds": args.seeds,
        "master_seed": args.seed,
        "learner_k": args.learner_k,
        "inner_folds": args.inner_folds,
        "threads": args.threads,
        "mnl_reg": args.mnl_reg,
        "input": args.input,
        "schema": args.schema,
        "setup": args.setup,
        "n": args.n,
        "num_latent": args.latent,
        "num_groups": args.groups,
        "p": args.p,
        "p_assign": args.p_assign,
    }
    overrides = {k: v for k, v in flags.items() if v is not None}
    if args.methods:
        overrides["methods"] = tuple(MethodSpec.parse(m.strip()) for m in args.methods.split(",") if m.strip())
    return replace(config, **overrides).validate()


def cmd_bench(args, settings: Settings) -> int:
    from evalbench import report_to_csv, report_to_json, run_benchmark, run_sweep

    config = bench_config_from_args(args, settings)
    reports = run_sweep(config) if args.sweep else [run_benchmark(config)]
    fmt = args.format or settings.report_format
    out = args.out or sys.stdout
    if fmt == "json":
        report_to_json(reports, out)
    else:
        report_to_csv(reports, out, raw_path=args.raw_out)
    for report in reports:
        for r in report.results:
            if r.failures:
                log.warning("%s %s: %d failed cells", report.label, r.name, len(r.failures))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from dgp_sim import SETUPS
    from encoders import METHODS, UNSEEN_POLICIES

    common = _Parser(add_help=False)
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (default: CATENC_LOG_LEVEL)")
    common.add_argument("--threads", type=_positive_int, help="worker threads (default: CATENC_THREADS)")

    parser = _Parser(prog="catenc", description="Sufficient-representation encoders for categorical variables")
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", parents=[common], help="fit an encoder and replace the category column")
    enc.add_argument("--method", choices=METHODS)
    enc.add_argument("--input", required=True)
    enc.add_argument("--schema", help="header=role file; inferred from the headers when omitted")
    enc.add_argument("--out", required=True)
    enc.add_argument("--k", type=_k_or_cv, help="rank for lowrank/sparselowrank, or 'cv'")
    enc.add_argument("--lam", type=_non_negative_float, default=0.0)
    enc.add_argument("--lam1", type=_non_negative_float, default=0.0)
    enc.add_argument("--reg", type=_non_negative_float, help="mnl ridge weight")
    enc.add_argument("--copies", type=_positive_int, help="multiperm mappings")
    enc.add_argument("--folds", type=_positive_int, default=4, help="folds when k is cross-validated")
    enc.add_argument("--seed", type=_non_negative_int)
    enc.add_argument("--unseen-policy", choices=UNSEEN_POLICIES, default="global-mean-fallback")
    enc.add_argument("--model-out", help="save the fitted encoder as JSON")
    enc.add_argument("--model-in", help="apply a saved encoder instead of fitting")
    enc.set_defaults(handler=cmd_encode)

    sim = sub.add_parser("simulate", parents=[common], help="draw a latent-group dataset")
    sim.add_argument("--setup", choices=SETUPS, default="latent_linear")
    sim.add_argument("--n", type=_positive_int, default=2000)
    sim.add_argument("--latent", type=_positive_int, default=2)
    sim.add_argument("--groups", type=_positive_int, default=20)
    sim.add_argument("--p", type=_positive_int, default=10)
    sim.add_argument("--p-assign", type=float, default=0.9)
    sim.add_argument("--noise-scale", type=_non_negative_float, default=1.0)
    sim.add_argument("--shared-support", action="store_true")
    sim.add_argument("--seed", type=_non_negative_int)
    sim.add_argument("--out", required=True)
    sim.add_argument("--with-latent", action="store_true", help="add the latent label as a 'latent' column")
    sim.add_argument("--params-out", help="write the drawn parameters as JSON")
    sim.set_defaults(handler=cmd_simulate)

    orc = sub.add_parser("oracle-check", parents=[common], help="verify the representation identities")
    orc.add_argument("--k", type=_positive_int, default=3, help="latent levels")
    orc.add_argument("--groups", type=_positive_int, default=12)
    orc.add_argument("--support", type=_positive_int, default=6)
    orc.add_argument("--p", type=_positive_int, help="covariate dimension (default: k)")
    orc.add_argument("--worlds", type=_positive_int, default=1)
    orc.add_argument("--mnl-n", type=_non_negative_int, default=100_000, help="0 skips the logit check")
    orc.add_argument("--seed", type=_non_negative_int)
    orc.set_defaults(handler=cmd_oracle)

    bench = sub.add_parser("bench", parents=[common], help="cross-validated comparison against one-hot")
    bench.add_argument("--config", help="JSON file of bench settings")
    bench.add_argument("--methods", help="comma-separated method tags")
    bench.add_argument("--input", help="CSV to benchmark instead of simulated data")
    bench.add_argument("--schema")
    bench.add_argument("--folds", type=_positive_int)
    bench.add_argument("--inner-folds", type=_positive_int)
    bench.add_argument("--seeds", type=_positive_int)
    bench.add_argument("--seed", type=_non_negative_int, help="master seed")
    bench.add_argument("--learner-k", type=_k_or_cv, help="k-NN neighbors, or 'cv' for the inner grid")
    bench.add_argument("--mnl-reg", type=_non_negative_float)
    bench.add_argument("--setup", choices=SETUPS)
    bench.add_argument("--n", type=_positive_int)
    bench.add_argument("--latent", type=_positive_int)
    bench.add_argument("--groups", type=_positive_int)
    bench.add_argument("--p", type=_positive_int)
    bench.add_argument("--p-assign", type=float)
    bench.add_argument("--sweep", action="store_true", help="run every setup x latent count")
    bench.add_argument("--format", choices=("csv", "json"))
    bench.add_argument("--out", help="report path (default: stdout)")
    bench.add_argument("--raw-out", help="per-seed, per-fold MSEs (csv format only)")
    bench.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = load_settings()
        configure_logging(args.log_level or settings.log_level)
        if args.threads is not None:
            settings = replace(settings, threads=args.threads)
        return args.handler(args, settings)
    except SystemExit as e:
        return int(e.code or 0)
    except CatencError as e:
        print(f"catenc: error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
