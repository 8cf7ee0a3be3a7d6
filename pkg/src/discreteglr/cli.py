"""Command-line entry point: ``discreteglr {fit,test,simulate,power,dist,make-config}``.

Exit codes: 0 success, 2 input error, 3 numerical error, 4 simulation
quality gate (more than 10% of replications failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import chisq_mix, simulation
from .backfitting import AdditiveFit, HypothesisSpec, ModelSpec, backfit, partial_effect_table
from .data_model import Dataset, read_dataset
from .exceptions import InputError, NumericalError
from .glr import run_test
from .reporting import dump_json

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_QUALITY = 0, 2, 3, 4
QUALITY_GATE = 0.10

log = logging.getLogger("discreteglr")


def tool_version() -> str:
    from . import __version__

    return __version__


def manifest(command: str, started: float, **fields: Any) -> dict:
    return {
        "command": command,
        "tool_version": tool_version(),
        "started_at": datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        "wall_time_s": time.time() - started,
        **fields,
    }


def read_json(path: str, what: str) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} is not valid JSON ({path}): {exc}") from None


def _load(args) -> Dataset:
    for p, what in ((args.data, "data"), (args.schema, "schema")):
        if not Path(p).is_file():
            raise InputError(f"{what} file not found: {p}")
    return read_dataset(args.data, args.schema, args.level_offset)


def format_polynomial(name: str, const: float, coefs: Sequence[float]) -> str:
    """``m_x(x) =  -0.1330 +   0.0344 x + ...`` (four decimals)."""
    terms = [f"{const:9.4f}"]
    for power, c in enumerate(coefs, start=1):
        sign = "-" if c < 0 else "+"
        var = name if power == 1 else f"{name}^{power}"
        terms.append(f"{sign} {abs(c):8.4f} {var}")
    return f"m_{name}({name}) = " + " ".join(terms)


def fit_report(fit: AdditiveFit, dataset: Dataset) -> dict:
    components = {}
    for c in fit.model.active:
        entry: dict[str, Any] = {"treatment": c.treatment}
        if c.variable in fit.level_tables:
            entry["levels"] = [
                {"level": lab if isinstance(lab, str) else float(lab) if isinstance(lab, float) else int(lab),
                 "code": i, "estimate": float(v)}
                for i, (lab, v) in enumerate(zip(dataset.labels[c.variable], fit.level_tables[c.variable]))
            ]
        if c.variable in fit.theta:
            entry["theta"] = [float(v) for v in fit.theta[c.variable]]
            entry["alpha_p"] = float(fit.alpha_p[c.variable])
            entry["equation"] = format_polynomial(c.variable, fit.alpha_p[c.variable], fit.theta[c.variable])
        if c.treatment == "localpoly":
            entry["degree"] = c.degree or 0
            entry["kernel"] = c.kernel
        components[c.variable] = entry
    return {
        "n": dataset.n,
        "response": dataset.response,
        "alpha_hat": fit.alpha_hat,
        "alpha_star": fit.alpha_star,
        "rss": fit.rss,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "max_delta": fit.max_delta,
        "components": components,
    }


# -- commands ---------------------------------------------------------------


def cmd_fit(args) -> int:
    started = time.time()
    ds = _load(args)
    model = ModelSpec.default(ds, kernel=args.kernel)
    fit = backfit(ds, model, tol=args.tol, max_iter=args.max_iter)
    if not fit.converged:
        raise NumericalError(f"backfitting did not converge in {args.max_iter} sweeps")
    outputs = [args.out] if args.out else []
    if args.effects_dir:
        d = Path(args.effects_dir)
        d.mkdir(parents=True, exist_ok=True)
        for c in model.active:
            path = d / f"effect_{c.variable}.csv"
            partial_effect_table(fit, ds, c.variable).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
            outputs.append(str(path))
    report = {
        "report": "fit",
        "fit": fit_report(fit, ds),
        "manifest": manifest("fit", started, inputs=[args.data], schema=args.schema, hypothesis=None,
                             seed=None, outputs=outputs),
    }
    _emit(report, args.out)
    return EXIT_OK


def cmd_test(args) -> int:
    started = time.time()
    ds = _load(args)
    hyp = HypothesisSpec.from_records(read_json(args.hypothesis, "hypothesis"))
    res = run_test(ds, ModelSpec.default(ds, kernel=args.kernel), hyp, tol=args.tol, max_iter=args.max_iter)
    if not (res.fit0.converged and res.fit1.converged):
        raise NumericalError(f"backfitting did not converge in {args.max_iter} sweeps")
    body = res.to_dict()
    body["mode"] = args.mode
    body["headline_p_value"] = res.headline(args.mode)
    report = {
        "report": "test",
        "test": body,
        "fit_null": fit_report(res.fit0, ds),
        "fit_full": fit_report(res.fit1, ds),
        "manifest": manifest("test", started, inputs=[args.data], schema=args.schema,
                             hypothesis=args.hypothesis, seed=None, outputs=[args.out] if args.out else []),
    }
    _emit(report, args.out)
    if args.out:
        print(f"lambda_n = {res.lambda_n:.6g}  p = {res.headline(args.mode):.6g} ({args.mode})")
    return EXIT_OK


def _study_command(args, kind: str) -> int:
    started = time.time()
    raw = read_json(args.config, "config")
    if isinstance(raw, dict):
        if args.seed is not None:
            raw = {**raw, "seed": args.seed}
        if args.replications is not None:
            raw = {**raw, "replications": args.replications}
    config = simulation.SimulationConfig.from_dict(raw)
    if kind == "simulate":
        result = simulation.null_study(config, threads=args.threads)
    else:
        result = simulation.power_study(config, threads=args.threads)
    out = Path(args.out)
    paths = simulation.write_study(
        result, out,
        manifest(kind, started, inputs=[args.config], schema=None,
                 hypothesis=config.hypothesis.to_records(), seed=config.seed,
                 threads=args.threads,
                 outputs=[str(out / f) for f in ("replications.csv", "power.csv", "summary.json")]),
    )
    frac = result.summary["failed_fraction"]
    for e in result.summary["per_beta"]:
        print(f"beta={e['beta']:g}  power={e['power']}  failed={e['failed']}")
    log.info("wrote %s", ", ".join(paths.values()))
    if frac > QUALITY_GATE:
        print(f"quality gate: {frac:.1%} of replications failed", file=sys.stderr)
        return EXIT_QUALITY
    return EXIT_OK


def cmd_simulate(args) -> int:
    return _study_command(args, "simulate")


def cmd_power(args) -> int:
    return _study_command(args, "power")


def cmd_dist(args) -> int:
    if not args.weights:
        raise InputError("--weights needs at least one positive weight")
    try:
        mix = chisq_mix.ChiSquareMixture(tuple(args.weights), args.shift)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.cdf is not None:
        value = mix.cdf(args.cdf)
    elif args.pvalue is not None:
        value = mix.sf(args.pvalue)
    else:
        if not 0.0 < args.quantile < 1.0:
            raise InputError("--quantile must lie strictly between 0 and 1")
        value = mix.ppf(args.quantile)
    print(f"{value:.10g}")
    return EXIT_OK


def cmd_make_config(args) -> int:
    config = simulation.standard_design(
        args.design, n=args.n, replications=args.replications, seed=args.seed,
        design_seed=args.design_seed, error=args.error, betas=tuple(args.betas),
        linear_covariates=args.linear_covariates,
    )
    _emit(config.to_dict(), args.out)
    return EXIT_OK


def _emit(report: dict, out: str | None) -> None:
    text = dump_json(report)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="discreteglr", description="GLR tests for discrete predictors in additive models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp):
        sp.add_argument("data", help="CSV file with a header row")
        sp.add_argument("schema", help="JSON schema: column name -> {role, kind, ...}")
        sp.add_argument("--level-offset", type=int, default=0, help="offset added to level codes in polynomial terms")
        sp.add_argument("--kernel", choices=("gaussian", "epanechnikov"), default="gaussian")
        sp.add_argument("--tol", type=float, default=1e-8)
        sp.add_argument("--max-iter", type=int, default=200)
        sp.add_argument("--out", help="report path (default: stdout)")

    sp = sub.add_parser("fit", help="fit the additive model by backfitting")
    data_args(sp)
    sp.add_argument("--effects-dir", help="write partial-effect CSVs here")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("test", help="GLR test of a hypothesis on the predictors")
    data_args(sp)
    sp.add_argument("hypothesis", help='JSON list of {"variable", "constraint": "zero" | {"poly": r}}')
    sp.add_argument("--mode", choices=("exact", "indep"), default="exact", help="which p-value is the headline")
    sp.set_defaults(func=cmd_test)

    for name, func, text in (("simulate", cmd_simulate, "null-distribution study"), ("power", cmd_power, "power study over the beta grid")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("config", help="study configuration (JSON)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--replications", type=int, help="override the replication count")
        sp.add_argument("--threads", type=int, default=1, help="worker processes")
        sp.set_defaults(func=func)

    sp = sub.add_parser("dist", help="weighted chi-square mixture utility")
    sp.add_argument("--weights", type=float, nargs="*", default=[], help="mixture weights")
    sp.add_argument("--shift", type=float, default=0.0, help="noncentral shift added to the mixture")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--cdf", type=float, metavar="Q")
    g.add_argument("--quantile", type=float, metavar="P")
    g.add_argument("--pvalue", type=float, metavar="Q")
    sp.set_defaults(func=cmd_dist)

    sp = sub.add_parser("make-config", help="write a standard simulation design")
    sp.add_argument("design", choices=("null", "power", "gof"))
    sp.add_argument("--n", type=int, default=500)
    sp.add_argument("--replications", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=20240501)
    sp.add_argument("--design-seed", type=int, default=7)
    sp.add_argument("--error", choices=simulation.ERROR_LAWS, default="normal")
    sp.add_argument("--betas", type=float, nargs="+", default=[0.0])
    sp.add_argument("--linear-covariates", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_make_config)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
