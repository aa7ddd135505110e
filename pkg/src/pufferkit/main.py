"""Command-line entry point for pufferkit."""

import argparse
import logging
import sys
import time
from collections.abc import Callable, Sequence
from typing import Any, NoReturn

from pydantic import ValidationError as PydanticValidationError

from . import __version__
from .audit import AuditConfig, audit_dp, audit_pp
from .composition import budget_from_config, compose_report, compose_uc
from .config import settings
from .core import named_query
from .database import (
    config_digest,
    dumps_report,
    load_budget,
    load_framework,
    load_samples,
    read_config_file,
    read_kernel_csv,
    read_samples_csv,
    write_text,
)
from .infotheory import AdditiveNoise, MechanismKernel, MonteCarloConfig, mechanism_mi_profile
from .mechanisms import (
    calibrate_gaussian,
    calibrate_gaussian_ap,
    calibrate_gaussian_entropy_law,
    calibrate_gaussian_projection,
    calibrate_gaussian_sensitivity,
    calibrate_laplace,
    calibrate_laplace_sensitivity,
)
from .meanest import MeanEstConfig, private_mean
from .models import (
    CapabilityError,
    DensityBoundSummary,
    NoiseSpec,
    PufferkitError,
    RandomProjectionSpec,
    RunManifest,
    ValidationError,
)
from .relations import convert
from .smi import (
    InnerEstimator,
    NeuralDVConfig,
    SecretSampleSet,
    dv_inner,
    plugin_inner,
    smi_dp_statistic,
    smi_mc,
    smi_secret_statistic,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CAPABILITY = 2
EXIT_VIOLATION = 3

# (report, exit code) or (plain text, exit code)
Outcome = tuple[dict[str, Any] | str, int]


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _margin(text: str) -> float | str:
    if text == "auto":
        return text
    try:
        value = float(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError("margin must be a positive number or 'auto'") from e
    if value <= 0:
        raise argparse.ArgumentTypeError("margin must be positive")
    return value


def _inner_from_args(args: argparse.Namespace) -> InnerEstimator:
    if args.inner == "plugin":
        return plugin_inner(args.bins)
    return dv_inner(_dv_config(args))


def _dv_config(args: argparse.Namespace) -> NeuralDVConfig:
    return NeuralDVConfig(
        neurons=args.neurons or settings.DV_NEURONS,
        steps=args.steps if args.steps is not None else settings.DV_STEPS,
        a=args.box,
        box_rule=args.box_rule,
    )


# Subcommands


def _calibrate(args: argparse.Namespace, seed: int, threads: int) -> Outcome:
    method = args.mechanism
    if method == "laplace-sensitivity":
        delta1 = _need(args.sensitivity, "--sensitivity")
        report = calibrate_laplace_sensitivity(delta1, args.dim, args.eps)
        return report.summary(), EXIT_OK
    if method == "gaussian-sensitivity":
        report = calibrate_gaussian_sensitivity(
            _need(args.sensitivity, "--sensitivity"), args.dim, args.eps, args.compact_scalar
        )
        return report.summary(), EXIT_OK

    fw = load_framework(_need(args.framework, "--framework"))
    f = named_query(args.query, fw.n, fw.k)
    mc = MonteCarloConfig(
        n_outer=args.mc_outer or settings.MC_OUTER,
        n_inner=args.mc_inner or settings.MC_INNER,
        seed=seed,
        workers=threads,
        prefer_exact=not args.monte_carlo,
    )
    match method:
        case "laplace":
            report = calibrate_laplace(fw, f, args.eps, mc)
        case "gaussian":
            report = calibrate_gaussian(fw, f, args.eps, mc)
        case "projection":
            proj = RandomProjectionSpec(
                seed=seed if args.projection_seed is None else args.projection_seed,
                ell=_need(args.ell, "--ell"),
            )
            report = calibrate_gaussian_projection(fw, f, args.eps, proj, mc, args.sweep)
        case "entropy-law":
            report = calibrate_gaussian_entropy_law(fw, f, args.eps, args.cond_entropy_lb, mc)
        case _:
            report = calibrate_gaussian_ap(fw, f, args.eps)
    summary = report.summary()
    summary["dim"] = report.noise.dim
    summary["output_dim"] = report.noise.output_dim
    summary["assumptions"] = list(report.assumptions)
    if report.sweep is not None:
        summary["sweep"] = {str(ell): v for ell, v in report.sweep.items()}
    return summary, EXIT_OK


def _convert(args: argparse.Namespace, seed: int, threads: int) -> Outcome:
    bounds = None
    if args.bounds is not None:
        try:
            bounds = DensityBoundSummary(**read_config_file(args.bounds))
        except ValueError as e:
            raise ValidationError(f"Invalid density bounds: {e}") from e
    result = convert(
        args.source,
        args.target,
        args.eps,
        delta=args.delta,
        eps_prime=args.eps_prime,
        supp_m=args.supp_m,
        max_im_g=args.max_im_g,
        bounds=bounds,
    )
    if not args.json:
        return " ".join(format(v, ".17g") for v in result.params_out), EXIT_OK
    return result.model_dump(), EXIT_OK


def _compose(args: argparse.Namespace, seed: int, threads: int) -> Outcome:
    cfg = load_budget(args.budget)
    budget = budget_from_config(cfg)
    if cfg.mode == "uc":
        fw = load_framework(_need(args.framework, "--framework"))
        result = compose_uc(budget, fw.theta, fw.graph, cfg.standard_pp or args.standard_pp)
    else:
        result = compose_report(budget)
    return result.summary(), EXIT_OK


def _audit(args: argparse.Namespace, seed: int, threads: int) -> Outcome:
    samples = load_samples(args.samples)
    reference = load_samples(args.reference) if args.reference else None
    cfg = AuditConfig(
        eps=args.eps,
        level_alpha=args.alpha,
        margin=args.margin,
        threshold_method="bootstrap-null" if args.mode == "bootstrap" else "fixed-margin",
        inner=args.inner,
        estimator=_dv_config(args),
        plugin_bins=args.bins,
        p=args.projections or settings.SMI_PROJECTIONS,
        replicates=args.replicates or settings.BOOTSTRAP_REPLICATES,
        seed=seed,
        workers=threads,
        target=args.target,
    )
    if isinstance(samples, SecretSampleSet):
        if reference is not None and not isinstance(reference, SecretSampleSet):
            raise ValidationError("Reference samples must use the same layout as the audited ones")
        report = audit_pp(samples, cfg, reference)
    else:
        if isinstance(reference, SecretSampleSet):
            raise ValidationError("Reference samples must use the same layout as the audited ones")
        report = audit_dp(samples, cfg, reference)
    code = EXIT_VIOLATION if report.decision == "violation" else EXIT_OK
    return report.summary(), code


def _mean_estimate(args: argparse.Namespace, seed: int, threads: int) -> Outcome:
    data = read_samples_csv(args.samples)
    cfg = MeanEstConfig(
        eps=args.eps,
        beta=args.beta,
        second_moment_bound=args.c,
        m_multiplier=args.multiplier,
        median=args.median,
        tol=args.tol or settings.MEDIAN_TOL,
        max_iters=args.max_iters or settings.MEDIAN_MAX_ITERS,
        seed=seed,
        workers=threads,
    )
    return private_mean(data, cfg).summary(), EXIT_OK


def _oracle_mi(args: argparse.Namespace, seed: int, threads: int) -> Outcome:
    fw = load_framework(args.framework)
    kernel: MechanismKernel
    if args.kernel is not None:
        kernel = read_kernel_csv(args.kernel, fw.n, fw.k)
    else:
        f = named_query(args.query, fw.n, fw.k)
        noise = NoiseSpec(family=args.noise, scale=_need(args.scale, "--scale"), dim=f.output_dim)
        kernel = AdditiveNoise(f=f, noise=noise)
    profile = mechanism_mi_profile(fw, kernel, args.grid_bins, args.grid_span)
    return {
        "value": profile.value,
        "member": profile.member,
        "edge": profile.edge,
        "tolerance": profile.tolerance,
        "per_edge": [list(row) for row in profile.per_edge],
    }, EXIT_OK


def _smi_estimate(args: argparse.Namespace, seed: int, threads: int) -> Outcome:
    samples = load_samples(args.samples)
    inner = _inner_from_args(args)
    p = args.projections or settings.SMI_PROJECTIONS
    if isinstance(samples, SecretSampleSet):
        value, argmax, per = smi_secret_statistic(samples, p, inner, seed, threads)
    elif args.row is not None:
        est = smi_mc(samples, args.row, p, inner, seed, threads)
        return {
            "value": est.value,
            "row": args.row,
            "stderr": est.stderr,
            "p": est.p,
            "per_projection": list(est.per_projection),
        }, EXIT_OK
    else:
        value, argmax, per = smi_dp_statistic(samples, p, inner, seed, threads)
    return {
        "value": value,
        "argmax": argmax,
        "per_row": [e.value for e in per],
        "stderr": [e.stderr for e in per],
        "p": p,
    }, EXIT_OK


def _need(value: Any, flag: str) -> Any:
    if value is None:
        raise ValidationError(f"{flag} is required for this mode")
    return value


HANDLERS: dict[str, Callable[[argparse.Namespace, int, int], Outcome]] = {
    "calibrate": _calibrate,
    "convert": _convert,
    "compose": _compose,
    "audit": _audit,
    "mean-estimate": _mean_estimate,
    "oracle-mi": _oracle_mi,
    "smi-estimate": _smi_estimate,
}


# Parser


def _add_estimator_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--projections", type=int, help="Projection count p")
    parser.add_argument(
        "--inner", choices=["dv", "plugin"], default="dv", help="Inner MI estimator"
    )
    parser.add_argument("--bins", type=int, default=16, help="Bins of the plug-in estimator")
    parser.add_argument("--neurons", type=int, help="Hidden units of the DV critic")
    parser.add_argument("--steps", type=int, help="Training steps of the DV critic")
    parser.add_argument("--box", type=float, help="Constraint box a of the DV critic")
    parser.add_argument(
        "--box-rule",
        choices=["calibrated", "theory"],
        default="calibrated",
        help="Default box when --box is absent",
    )


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="Seed (falls back to PUFFERKIT_SEED)")
    common.add_argument("--threads", type=int, help="Worker threads (default: logical cores)")
    common.add_argument("--out", help="Write the report here instead of stdout")
    common.add_argument("--manifest", help="Write the run manifest here instead of stderr")

    parser = _Parser(prog="pufferkit", description="Pufferfish privacy calibration and auditing")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", parents=[common], help="Calibrate additive noise")
    cal.add_argument("--framework", help="Framework TOML or JSON file")
    cal.add_argument("--query", default="avg", help="Query shorthand (avg, sum, row:i, ...)")
    cal.add_argument("--eps", type=float, required=True)
    cal.add_argument(
        "--mechanism",
        required=True,
        choices=[
            "gaussian",
            "laplace",
            "gaussian-sensitivity",
            "laplace-sensitivity",
            "projection",
            "entropy-law",
            "ap",
        ],
    )
    cal.add_argument("--sensitivity", type=float, help="Delta_1 or Delta_2 for sensitivity modes")
    cal.add_argument("--dim", type=int, default=1, help="Query dimension for sensitivity modes")
    cal.add_argument(
        "--compact-scalar", action="store_true", help="Scalar Delta^2/(4(e^2eps - 1)) form"
    )
    cal.add_argument("--ell", type=int, help="Projection dimension")
    cal.add_argument("--projection-seed", type=int, help="Projection seed (default: --seed)")
    cal.add_argument("--sweep", type=_int_list, help="Comma-separated ell values to sweep")
    cal.add_argument("--cond-entropy-lb", type=float, help="Lower bound on h(f | g, w)")
    cal.add_argument("--mc-outer", type=int)
    cal.add_argument("--mc-inner", type=int)
    cal.add_argument("--monte-carlo", action="store_true", help="Estimate moments by sampling")

    conv = sub.add_parser("convert", parents=[common], help="Convert between privacy notions")
    conv.add_argument("--from", dest="source", required=True)
    conv.add_argument("--to", dest="target", required=True)
    conv.add_argument("--eps", type=float, required=True)
    conv.add_argument("--delta", type=float, default=0.0)
    conv.add_argument("--eps-prime", type=float, default=0.0)
    conv.add_argument("--supp-m", type=int)
    conv.add_argument("--max-im-g", type=int)
    conv.add_argument("--bounds", help="Density bounds file (triples, pairs)")
    conv.add_argument("--json", action="store_true", help="Print the full conversion record")

    comp = sub.add_parser("compose", parents=[common], help="Compose a privacy budget")
    comp.add_argument("--budget", required=True, help="Budget TOML or JSON file")
    comp.add_argument("--framework", help="Framework file (UC mode)")
    comp.add_argument("--standard-pp", action="store_true", help="Assert standard PP per mechanism")

    aud = sub.add_parser("audit", parents=[common], help="Audit a black-box mechanism")
    aud.add_argument("--samples", required=True, help="Sample directory")
    aud.add_argument("--eps", type=float, required=True)
    aud.add_argument("--alpha", type=float, default=0.05, help="Type-I budget")
    aud.add_argument("--mode", choices=["fixed", "bootstrap"], default="fixed")
    aud.add_argument("--margin", type=_margin, default="auto", help="r > 0 or 'auto'")
    aud.add_argument("--reference", help="Reference sample directory (bootstrap mode)")
    aud.add_argument("--replicates", type=int, help="Bootstrap replicates")
    aud.add_argument(
        "--target", choices=["dp", "mi-dp", "renyi-dp", "smi-dp", "pp"], default="dp"
    )
    _add_estimator_flags(aud)

    mean = sub.add_parser("mean-estimate", parents=[common], help="Private mean estimation")
    mean.add_argument("--samples", required=True, help="CSV of samples, one row each")
    mean.add_argument("--eps", type=float, required=True)
    mean.add_argument("--beta", type=float, default=0.05)
    mean.add_argument("--c", type=float, default=1.0, help="Second-moment bound")
    mean.add_argument("--median", choices=["geometric", "coordinatewise"], default="geometric")
    mean.add_argument("--multiplier", type=float, default=200.0, help="m = multiplier ln(1/beta)")
    mean.add_argument("--tol", type=float)
    mean.add_argument("--max-iters", type=int)

    orc = sub.add_parser("oracle-mi", parents=[common], help="Exact MI PP level of a mechanism")
    orc.add_argument("--framework", required=True)
    orc.add_argument("--kernel", help="Kernel CSV")
    orc.add_argument("--query", default="avg")
    orc.add_argument("--noise", choices=["laplace", "gaussian"], default="gaussian")
    orc.add_argument("--scale", type=float, help="Laplace b or Gaussian sigma^2")
    orc.add_argument("--grid-bins", type=int)
    orc.add_argument("--grid-span", type=float)

    est = sub.add_parser("smi-estimate", parents=[common], help="Sliced MI estimate")
    est.add_argument("--samples", required=True, help="Sample directory")
    est.add_argument("--row", type=int, help="Single row index (default: max over rows)")
    _add_estimator_flags(est)

    return parser


def _configure_logging() -> None:
    logging.basicConfig(
        level=settings.LOG_LEVEL,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _emit(text: str, path: str | None, stream: Any) -> None:
    if path:
        write_text(path, text)
    else:
        print(text, file=stream)


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) if not isinstance(e.code, str) else EXIT_USAGE

    _configure_logging()
    start = time.perf_counter()
    seed = settings.resolve_seed(args.seed)
    threads = args.threads or settings.THREADS
    try:
        payload, code = HANDLERS[args.command](args, seed, threads)
    except CapabilityError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CAPABILITY
    except (PufferkitError, PydanticValidationError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    text = payload if isinstance(payload, str) else dumps_report(payload)
    _emit(text, args.out, sys.stdout)

    params = {
        key: value
        for key, value in vars(args).items()
        if key not in ("out", "manifest", "threads")
    }
    params["seed"] = seed
    manifest = RunManifest(
        command=args.command,
        config_digest=config_digest(params),
        seeds={"seed": seed},
        tool_version=__version__,
        wall_time_seconds=time.perf_counter() - start,
    )
    _emit(dumps_report(manifest), args.manifest, sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
