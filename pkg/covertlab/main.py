import argparse
import asyncio
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from covertlab.core.errors import EXIT_ASSERTION, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, ConfigError, CovertLabError
from covertlab.core.special import nats_to_bits
from covertlab.core.workers import parallel_map
from covertlab.engines import analysis, channel, codebook_io, detect, maskopt, scheme, specmask
from covertlab.engines.pulses import RrcPulse
from covertlab.graph.pipeline_graph import PipelineGraph
from covertlab.reporting import emitters
from covertlab.schemas.covert_schemas import ExperimentConfig, SlacknessSpec, SpectralMask
from covertlab.verification import CHECKS, run_checks

logger = logging.getLogger(__name__)

SWEEP_AXES = ("n", "delta", "nw_over_nb", "W")
SWEEP_STAGES = ("covertness", "reliability", "throughput")
BOUNDS_HEADER = ["delta", "nw_over_nb", "achievable_per_sqrt_n", "converse_per_sqrt_n", "r", "r_k"]


def _experiment_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="ExperimentConfig JSON file; flags below override it")
    parent.add_argument("--mask", dest="mask_file", help="Spectral mask JSON file")
    parent.add_argument("--metric", choices=["tv", "kl"])
    parent.add_argument("--nw", type=float, help="Warden noise intensity N_w")
    parent.add_argument("--nb", type=float, help="Receiver noise intensity N_b")
    parent.add_argument("--delta", type=float, help="Covertness level delta")
    parent.add_argument("--t", type=float, help="Total transmission time T in seconds")
    parent.add_argument("--n", type=int, help="Blocklength (overrides the one derived from T)")
    parent.add_argument("--seed", type=int)
    parent.add_argument("--trials", type=int)
    parent.add_argument("--rate-backoff", type=float)
    parent.add_argument("--key-backoff", type=float)
    parent.add_argument("--sim-m", type=int, help="Simulated message count")
    parent.add_argument("--sim-k", type=int, help="Simulated key count")
    parent.add_argument("--name")
    parent.add_argument("--no-plots", dest="plots", action="store_false", default=None)
    return parent


def _output_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("-o", "--out", help="Output directory (default: a fresh runs/<command>_<timestamp>)")
    parent.add_argument("--nats", action="store_true", help="Report rates and sizes in nats instead of bits")
    return parent


_CONFIG_FIELDS = ("mask_file", "metric", "nw", "nb", "delta", "t", "n", "seed", "trials", "rate_backoff",
                  "key_backoff", "sim_m", "sim_k", "name", "plots")


def load_config(args: argparse.Namespace, defaults: dict | None = None) -> ExperimentConfig:
    overrides = {k: getattr(args, k, None) for k in _CONFIG_FIELDS}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "config", None):
        return ExperimentConfig.from_json_file(args.config, overrides)
    return ExperimentConfig.from_dict({"name": args.command, **(defaults or {}), **overrides}, source="flags")


def _run_dir(args: argparse.Namespace, name: str, resolved) -> Path:
    out = Path(args.out) if args.out else emitters.make_run_dir(name)
    out.mkdir(parents=True, exist_ok=True)
    emitters.write_json(out / "config.resolved.json", resolved)
    return out


def _plain_args(args: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(args).items() if k != "handler"}


def _rate(value: float, nats: bool) -> float:
    return value if nats else nats_to_bits(value)


def _report(path: Path, data) -> None:
    emitters.write_json(path, data)
    print(json.dumps(emitters.to_jsonable(data), indent=4))


def _blocklength(cfg: ExperimentConfig) -> int:
    if cfg.n is None:
        raise ConfigError("this command needs an explicit blocklength (--n)", stage="config")
    return cfg.n


def _load_mask(path: str | None) -> SpectralMask:
    if not path:
        raise ConfigError("--mask is required for this command", stage="config")
    return SpectralMask.from_json_file(path)


def cmd_rrc_plot(args: argparse.Namespace) -> int:
    out = _run_dir(args, "rrc-plot", _plain_args(args))
    t0 = args.t0
    t = np.linspace(-t0 / 2.0, t0 / 2.0, args.points)
    f = np.linspace(0.0, args.f_max / t0, args.points)
    curves = {beta: (RrcPulse(t0=t0, beta=beta).time(t), RrcPulse(t0=t0, beta=beta).freq(f)) for beta in args.betas}
    peaks = {beta: float(RrcPulse(t0=t0, beta=beta).freq(0.0)) for beta in args.betas}
    header = ["t", "f"] + [f"phi_{b:g}" for b in args.betas] + [f"phi_hat_{b:g}" for b in args.betas]
    columns = [t, f] + [curves[b][0] for b in args.betas] + [curves[b][1] for b in args.betas]
    emitters.write_csv(out / "rrc.csv", header, zip(*columns))
    emitters.plot_rrc(t, f, curves, out / "rrc.svg", t0)
    _report(out / "rrc.json", {"t0": t0, "spectrum_at_zero": {f"{b:g}": v for b, v in peaks.items()}})
    return EXIT_OK


def _codebook_for(args: argparse.Namespace, cfg: ExperimentConfig) -> scheme.Codebook:
    if getattr(args, "codebook", None):
        return codebook_io.read_codebook(args.codebook)
    params = scheme.derive_params(_blocklength(cfg), cfg.nw, cfg.nb, cfg.delta, cfg.metric)
    sim = scheme.simulation_params(params, cfg.rate_backoff, cfg.key_backoff, cfg.sim_m, cfg.sim_k)
    return scheme.generate_codebook(sim, cfg.seed)


def cmd_esd(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    out = _run_dir(args, cfg.name, cfg)
    pulse = RrcPulse(t0=args.t0, beta=args.beta)
    cb = _codebook_for(args, cfg)
    f_max = args.f_max if args.f_max else pulse.spectral_extent()
    f, ens = specmask.ensemble_esd(cb.a_n, cb.n, pulse).table(f_max, args.points)
    code_profile = specmask.codebook_esd(cb, pulse)
    _, code = code_profile.table(f_max, args.points)
    emitters.write_csv(out / "esd.csv", ["f", "ensemble", "codebook"], zip(f, ens, code))
    summary = {"n": cb.n, "mk": cb.size, "a_n": cb.a_n, "energy": code_profile.total_energy}
    if cfg.mask_file:
        mask = cfg.resolved_mask()
        summary["fit"] = specmask.check_fit(code_profile, mask)
        thresholds = [(c.alpha * mask.w, c.v * summary["fit"].peak) for c in mask.constraints]
    else:
        thresholds = []
    if cfg.plots:
        emitters.plot_esd(f, {"ensemble": ens, "codebook": code}, out / "esd.svg", thresholds)
    _report(out / "esd.json", summary)
    return EXIT_OK


def cmd_mask_check(args: argparse.Namespace) -> int:
    out = _run_dir(args, "mask-check", _plain_args(args))
    mask = _load_mask(args.mask_file)
    profile = specmask.ensemble_esd(1.0, 1, RrcPulse(t0=args.t0, beta=args.beta))
    report = specmask.check_fit(profile, mask, slack=args.slack)
    _report(out / "fit.json", report)
    return EXIT_OK if report.fits else EXIT_ASSERTION


def cmd_optimize(args: argparse.Namespace) -> int:
    out = _run_dir(args, "optimize", _plain_args(args))
    mask = _load_mask(args.mask_file)
    result = maskopt.solve_p1(mask, args.beta_grid, args.tol)
    if args.oracle:
        result = maskopt.referee(result, mask)
    summary: dict = {"t0_star": result.t0_star, "beta_star": result.beta_star, "c_min": result.c_min,
                     "binding": result.binding, "c_curve": result.c_beta_curve}
    if args.t is not None:
        slack = SlacknessSpec(t=args.t, nw=args.nw, nb=args.nb, delta=args.delta, metric=args.metric)
        summary["t0_p2"] = maskopt.solve_p2(mask, result.beta_star, slack, args.tol)
        length = maskopt.blocklength(mask, args.t, args.xi, result, args.nw, args.nb, args.delta, args.metric)
        summary.update(n=length.n, fit_probability_bound=length.fit_probability_bound)
    emitters.write_csv(out / "c_beta.csv", ["beta", "c"], result.c_beta_curve)
    finite = [(b, c) for b, c in result.c_beta_curve if math.isfinite(c)]
    emitters.plot_xy([b for b, _ in finite], {"c(beta)": [c for _, c in finite]}, out / "c_beta.svg", "beta", "W T0*")
    _report(out / "optimizer.json", summary)
    return EXIT_OK


def cmd_params(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    out = _run_dir(args, cfg.name, cfg)
    params = scheme.derive_params(_blocklength(cfg), cfg.nw, cfg.nb, cfg.delta, cfg.metric)
    data = params.model_dump()
    if not args.nats:
        data.update(log_m=nats_to_bits(params.log_m), log_k=nats_to_bits(params.log_k), units="bits")
    else:
        data["units"] = "nats"
    _report(out / "params.json", data)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    out = _run_dir(args, cfg.name, cfg)
    cb = _codebook_for(args, cfg)
    params = cb.params or scheme.derive_params(cb.n, cfg.nw, cfg.nb, cfg.delta, cfg.metric).model_copy(
        update={"m": cb.m, "k": cb.k})
    rates = scheme.measure_error_rates(cb, channel.AwgnSpec(intensity=cfg.nb, seed=cfg.seed), cfg.trials, cfg.seed,
                                       params)
    emitters.write_csv(out / "subcode_errors.csv", ["s", "error", "stderr"],
                       [(s, e.value, e.stderr) for s, e in enumerate(rates.per_subcode, start=1)])
    if args.save_codebook:
        codebook_io.write_codebook(cb, out / "codebook.bin")
        codebook_io.export_csv(cb, out / "codebook.csv")
    if args.waveform_rate:
        pulse = RrcPulse(t0=args.t0, beta=args.beta)
        t, signal = channel.transmit_waveform(scheme.encode(cb, 1, 1), pulse,
                                              channel.WaveformSim(sample_rate=args.waveform_rate / pulse.t0),
                                              channel.AwgnSpec(intensity=cfg.nb, seed=cfg.seed))
        channel.waveform_dump(out / "waveform.csv", t, signal)
    _report(out / "error_rates.json", {"p_err": rates.p_err, "stderr": rates.stderr,
                                       "false_activity": rates.false_activity,
                                       "ensemble_bound": analysis.reliability_bound(params).total})
    return EXIT_OK if rates.p_err <= cfg.max_error or not args.check else EXIT_ASSERTION


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    n = _blocklength(cfg)
    out = _run_dir(args, cfg.name, cfg)
    a = scheme.amplitude(n, cfg.nw, cfg.delta, cfg.metric)
    cb = _codebook_for(args, cfg) if args.detector == "lrt-codebook" or args.codebook_output else None
    if cb is not None:
        a = cb.a_n
    h0, h1, threshold = detect.detector_statistics(args.detector, n, a, cfg.nw, cfg.trials, cfg.seed, cb,
                                                   detect.SUBSAMPLE_SIZE)
    result = detect.detection_result(args.detector, h0, h1, threshold, cfg.seed)
    emitters.write_csv(out / "roc.csv", ["threshold", "p_fa", "p_md"], detect.roc_sweep(h0, h1))
    summary = {"result": result, "tv_closed_form": detect.tv_closed_form(n, a, cfg.nw),
               "power_bound": analysis.power_detector_bound(n, n * a * a, cfg.nw)}
    _report(out / "detection.json", summary)
    return EXIT_OK


def _bounds_table(cfg: ExperimentConfig, n: int, deltas: list[float], ratios: list[float],
                  mask_opt, nats: bool) -> list[tuple]:
    rows = []
    for delta in deltas:
        for ratio in ratios:
            nw = ratio * cfg.nb
            achievable = analysis.achievable_per_sqrt_n(n, nw, cfg.nb, delta, cfg.metric)
            converse = analysis.converse_bound(nw, cfg.nb, delta, cfg.metric).limit
            r = r_k = math.nan
            if mask_opt is not None:
                pair = analysis.throughput(mask_opt, nw, cfg.nb, delta, cfg.metric)
                r, r_k = _rate(pair.r, nats), _rate(pair.r_k, nats)
            rows.append((delta, ratio, _rate(achievable, nats), _rate(converse, nats), r, r_k))
    return rows


def cmd_bounds(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    out = _run_dir(args, cfg.name, cfg)
    n = _blocklength(cfg)
    params = scheme.derive_params(n, cfg.nw, cfg.nb, cfg.delta, cfg.metric)
    converse = analysis.converse_bound(cfg.nw, cfg.nb, cfg.delta, cfg.metric)
    achievable = analysis.achievable_per_sqrt_n(n, cfg.nw, cfg.nb, cfg.delta, cfg.metric)
    summary: dict = {
        "units": "nats" if args.nats else "bits",
        "achievable_per_sqrt_n": _rate(achievable, args.nats),
        "converse_per_sqrt_n": _rate(converse.limit, args.nats),
        "key_rate": analysis.key_rate_crosscheck(n, cfg.nw, cfg.nb, cfg.delta, cfg.metric),
        "reliability_bound": analysis.reliability_bound(params),
        "power_detector_bound": analysis.power_detector_bound(n, params.energy, cfg.nw),
    }
    if cfg.metric == "tv":
        try:
            summary["low_power_code"] = analysis.low_power_constants(n, cfg.nw, cfg.delta, args.fraction)
        except CovertLabError as e:
            logger.warning("low-power constants unavailable: %s", e.message)
    mask_opt = None
    if cfg.mask_file:
        mask_opt = maskopt.solve_p1(cfg.resolved_mask(), cfg.beta_grid, cfg.tol)
        pair = analysis.throughput(mask_opt, cfg.nw, cfg.nb, cfg.delta, cfg.metric)
        summary["throughput"] = {"r": _rate(pair.r, args.nats), "r_k": _rate(pair.r_k, args.nats),
                                 "c_min": mask_opt.c_min}
    deltas = args.delta_grid or [cfg.delta]
    ratios = args.ratio_grid or [cfg.nw / cfg.nb]
    table = _bounds_table(cfg, n, deltas, ratios, mask_opt, args.nats)
    emitters.write_csv(out / "bounds.csv", BOUNDS_HEADER, table)
    summary["table"] = [dict(zip(BOUNDS_HEADER, row)) for row in table]
    _report(out / "bounds.json", summary)
    return EXIT_OK


def _sweep_cell(cfg: ExperimentConfig, axis: str, value: float, stage: str, nats: bool) -> list[tuple]:
    if axis == "n":
        cfg = cfg.model_copy(update={"n": int(value)})
    elif axis == "delta":
        cfg = cfg.model_copy(update={"delta": float(value)})
    elif axis == "nw_over_nb":
        cfg = cfg.model_copy(update={"nw": float(value) * cfg.nb})
    try:
        if stage == "throughput":
            mask = cfg.resolved_mask()
            if axis == "W":
                mask = mask.with_bandwidth(float(value))
            pair = analysis.throughput(maskopt.solve_p1(mask, cfg.beta_grid, cfg.tol), cfg.nw, cfg.nb, cfg.delta,
                                       cfg.metric)
            return [(axis, value, "r", _rate(pair.r, nats), 0.0, "ok"),
                    (axis, value, "r_k", _rate(pair.r_k, nats), 0.0, "ok")]
        params = scheme.derive_params(cfg.n, cfg.nw, cfg.nb, cfg.delta, cfg.metric)
        if stage == "covertness":
            if cfg.metric == "kl":
                kl = cfg.n * detect.kl_single_letter(params.a_n, cfg.nw).quadrature
                return [(axis, value, "kl_ensemble", kl, 0.0, "ok")]
            report = detect.tv_product(cfg.n, params.a_n, cfg.nw, cfg.trials, cfg.seed)
            return [(axis, value, "tv_closed_form", report.closed_form, 0.0, "ok"),
                    (axis, value, "tv_monte_carlo", report.monte_carlo.value, report.monte_carlo.stderr, "ok")]
        sim = scheme.simulation_params(params, cfg.rate_backoff, cfg.key_backoff, cfg.sim_m, cfg.sim_k)
        cb = scheme.generate_codebook(sim, cfg.seed)
        rates = scheme.measure_error_rates(cb, channel.AwgnSpec(intensity=cfg.nb, seed=cfg.seed), cfg.trials,
                                           cfg.seed, sim)
        return [(axis, value, "p_err", rates.p_err, rates.stderr, "ok")]
    except (CovertLabError, ValueError) as e:
        logger.warning("sweep cell %s=%g failed: %s", axis, value, e)
        return [(axis, value, stage, math.nan, math.nan, f"failed: {type(e).__name__}")]


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args, {"n": int(args.values[0]) if args.axis == "n" else 1024})
    out = _run_dir(args, cfg.name, cfg)
    cells = parallel_map(lambda v: _sweep_cell(cfg, args.axis, v, args.stage, args.nats), args.values)
    rows = [row for cell in cells for row in cell]
    emitters.write_csv(out / "sweep.csv", ["axis", "value", "quantity", "estimate", "stderr", "status"], rows)
    if cfg.plots:
        series: dict[str, list[float]] = {}
        for _, _, quantity, estimate, _, _ in rows:
            series.setdefault(quantity, []).append(estimate)
        if all(len(v) == len(args.values) for v in series.values()):
            emitters.plot_xy(args.values, series, out / "sweep.svg", args.axis, args.stage, logx=args.axis == "n")
    failed = sum(1 for row in rows if row[-1] != "ok")
    print(f"sweep over {args.axis}: {len(args.values)} cells, {failed} failed rows -> {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    run_dir = Path(args.out) if args.out else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    final_state = asyncio.run(PipelineGraph().run(cfg, run_dir))
    if final_state.get("error"):
        print(f"pipeline failed at {final_state.get('failed_stage')}: {final_state['error']}", file=sys.stderr)
    else:
        print(f"pipeline complete: {final_state['run_dir']}")
    return final_state["exit_code"]


def cmd_verify(args: argparse.Namespace) -> int:
    out = _run_dir(args, "verify", _plain_args(args))
    results = run_checks(args.check)
    emitters.write_json(out / "verify.json", results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<24} value={r.value:.6g} limit={r.limit:.6g}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_ASSERTION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covertlab",
                                     description="Covert communication workbench for AWGN channels under spectral masks")
    subparsers = parser.add_subparsers(dest="command", required=True, help="Command to run")
    exp, outp = _experiment_parent(), _output_parent()

    p = subparsers.add_parser("rrc-plot", parents=[outp], help="Plot RRC pulses and spectra")
    p.add_argument("--t0", type=float, default=1.0)
    p.add_argument("--betas", type=float, nargs="+", default=[0.0, 0.5, 1.0])
    p.add_argument("--points", type=int, default=1024)
    p.add_argument("--f-max", type=float, default=3.0, help="Spectrum range in units of 1/T0")
    p.set_defaults(handler=cmd_rrc_plot)

    p = subparsers.add_parser("esd", parents=[exp, outp], help="Ensemble and codebook ESD")
    p.add_argument("--t0", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--codebook", help="Binary codebook file instead of generating one")
    p.add_argument("--points", type=int, default=4096)
    p.add_argument("--f-max", type=float)
    p.set_defaults(handler=cmd_esd)

    p = subparsers.add_parser("mask-check", parents=[outp], help="Check a pulse against a spectral mask")
    p.add_argument("--mask", dest="mask_file", required=True)
    p.add_argument("--t0", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--slack", type=float, default=0.0)
    p.set_defaults(handler=cmd_mask_check)

    p = subparsers.add_parser("optimize", parents=[outp], help="Shortest pulse meeting a mask")
    p.add_argument("--mask", dest="mask_file", required=True)
    p.add_argument("--beta-grid", type=int, default=101)
    p.add_argument("--tol", type=float)
    p.add_argument("--oracle", action="store_true", help="Re-check beta* against the dense-grid referee")
    p.add_argument("--t", type=float, help="Total time T: also solve the slackness-tightened problem")
    p.add_argument("--xi", type=float, default=0.05)
    p.add_argument("--nw", type=float, default=1.0)
    p.add_argument("--nb", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--metric", choices=["tv", "kl"], default="tv")
    p.set_defaults(handler=cmd_optimize)

    p = subparsers.add_parser("params", parents=[exp, outp], help="Scheme parameters at blocklength n")
    p.set_defaults(handler=cmd_params)

    p = subparsers.add_parser("simulate", parents=[exp, outp], help="Monte Carlo reliability of a random codebook")
    p.add_argument("--codebook", help="Binary codebook file instead of generating one")
    p.add_argument("--save-codebook", action="store_true")
    p.add_argument("--waveform-rate", type=float, help="Also dump one noisy waveform at this many samples per T0")
    p.add_argument("--t0", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--check", action="store_true", help="Exit 3 when P_err exceeds max_error")
    p.set_defaults(handler=cmd_simulate)

    p = subparsers.add_parser("detect", parents=[exp, outp], help="Warden detector error rates and ROC")
    p.add_argument("--detector", choices=["lrt-product", "lrt-codebook", "power"], default="lrt-product")
    p.add_argument("--codebook", help="Binary codebook file instead of generating one")
    p.add_argument("--codebook-output", action="store_true", help="Draw H1 from the codebook, not the ensemble")
    p.set_defaults(handler=cmd_detect)

    p = subparsers.add_parser("bounds", parents=[exp, outp], help="Achievability and converse bounds")
    p.add_argument("--fraction", type=float, default=0.1, help="Low-power sub-code fraction gamma")
    p.add_argument("--delta-grid", type=float, nargs="+", help="Tabulate the bounds over these delta values")
    p.add_argument("--ratio-grid", type=float, nargs="+", help="Tabulate the bounds over these N_w/N_b values")
    p.set_defaults(handler=cmd_bounds)

    p = subparsers.add_parser("sweep", parents=[exp, outp], help="Repeat a stage across one axis")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--stage", choices=SWEEP_STAGES, default="covertness")
    p.set_defaults(handler=cmd_sweep)

    p = subparsers.add_parser("pipeline", parents=[exp, outp], help="Run the end-to-end pipeline")
    p.set_defaults(handler=cmd_pipeline)

    p = subparsers.add_parser("verify", parents=[outp], help="Run the property suite")
    p.add_argument("--check", nargs="+", choices=sorted(CHECKS), help="Run only these checks")
    p.set_defaults(handler=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except CovertLabError as e:
        logger.error("%s: %s", type(e).__name__, e.message)
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        logger.error("invalid input: %s", e)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        logger.error("numeric failure: %s", e)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
