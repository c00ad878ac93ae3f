# nv-lambda/src/nv_lambda/main.py
from __future__ import annotations

import argparse
import json
import sys
import uuid
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .engine import readout_levels, run_sequence
from .errors import ConfigError, ConvergenceError, FitError, NvLambdaError
from .fitting import FitData, ReadoutLevels, fit_model, model_curve, read_fit_data, required_readouts, write_fit_data, write_fit_report
from .hashing import config_sha256
from .ledger import ledger, write_manifest
from .lindblad import build_superoperator, ground_process_fidelity
from .logging_cfg import bind_run_context, get_logger, init_logging
from .quantum import BlochVector, DensityMatrix, bloch_vector, dark_state, ground_unitary
from .runconfig import RunConfig, initial_state, load_run_config
from .sequence import OpticalDrive, PulseSequence
from .signals import (
    dip_contrast,
    simulate_cpt_spectrum,
    synthesize_hahn,
    synthesize_ramsey,
    synthesize_ramsey_pair,
    write_table_csv,
    write_trace_csv,
    write_trace_json,
)
from .tomography import (
    read_tomography_data,
    sample_posterior,
    summarize_posterior,
    synthesize_tomography_data,
    write_posterior_samples,
    write_posterior_summary,
    write_tomography_csv,
)

log = get_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

# (outputs, inputs, exit status)
Outcome = Tuple[List[Path], List[Path], int]
Handler = Callable[[RunConfig, int, str, Path], Outcome]

DEFAULT_PRESETS = {"cpt": "cpt_init", "rotation": "sigma_x", "spectrum": "cpt_init", "readout": "cpt_init"}


def _write_json(path: Path, doc: Dict[str, Any]) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    return path


# ---- simulate ----


def _trace_run(cfg: RunConfig, seed: int, digest: str, out: Path, kind: str) -> Outcome:
    preset = cfg.model.load(DEFAULT_PRESETS[kind])
    params, rates = cfg.model.resolve(DEFAULT_PRESETS[kind])
    rho0 = initial_state(cfg.simulate.start, preset)
    if cfg.sequence is not None and cfg.sequence.segments:
        seq = cfg.sequence.build(params, rates)
    else:
        step = cfg.simulate.t / (cfg.simulate.points - 1)
        seq = PulseSequence(
            segments=[OpticalDrive(params=params, rates=rates, duration=cfg.simulate.t)],
            sample_step=step,
        )
    trace = run_sequence(seq, rho0, seed)
    target = dark_state(params.theta, params.phi, "R")
    outputs = [out / "trace.csv", out / "trace.json"]
    write_trace_csv(outputs[0], trace, digest, target)
    write_trace_json(outputs[1], trace, digest, target)

    summary: Dict[str, Any] = {
        "config_sha256": digest,
        "final_bloch": bloch_vector(trace.final_state).as_array().tolist(),
        "final_ground_population": trace.final_state.ground_population,
        "integrated_counts": trace.integrated_counts,
        "sampled_counts": trace.sampled_counts,
    }
    if kind == "rotation":
        dark_axis = bloch_vector(DensityMatrix.from_state(target)).as_array()
        w = build_superoperator(params, rates)
        u = ground_unitary(dark_axis, cfg.simulate.rotation_angle)
        summary["process_fidelity"] = ground_process_fidelity(w, seq.total_duration, u)
        summary["rotation_axis"] = dark_axis.tolist()
    outputs.append(_write_json(out / "summary.json", summary))
    log.info(f"simulate {kind}: {len(trace)} points, final Bloch {summary['final_bloch']}")
    return outputs, [], EXIT_OK


def cmd_simulate_cpt(cfg: RunConfig, seed: int, digest: str, out: Path) -> Outcome:
    return _trace_run(cfg, seed, digest, out, "cpt")


def cmd_simulate_rotation(cfg: RunConfig, seed: int, digest: str, out: Path) -> Outcome:
    return _trace_run(cfg, seed, digest, out, "rotation")


def cmd_simulate_spectrum(cfg: RunConfig, seed: int, digest: str, out: Path) -> Outcome:
    base, rates = cfg.model.resolve(DEFAULT_PRESETS["spectrum"])
    sp = cfg.spectrum
    params = base.model_copy(update={"omega": sp.omega, "theta": sp.theta, "phi": sp.phi, "delta_L": sp.delta_L})
    centered_dl = sp.centered_delta_L if sp.centered_delta_L is not None else -base.delta_e1 / 2.0
    centered = params.model_copy(update={"delta_L": centered_dl})
    det = np.linspace(-sp.span, sp.span, sp.points)
    pl = simulate_cpt_spectrum(params, rates, det)
    pl_c = simulate_cpt_spectrum(centered, rates, det)
    csv_path = out / "spectrum.csv"
    write_table_csv(csv_path, {"detuning_rad_per_us": det, "pl_rate": pl, "pl_rate_centered": pl_c}, digest)
    summary = {
        "config_sha256": digest,
        "dip_contrast": dip_contrast(pl, det),
        "dip_contrast_centered": dip_contrast(pl_c, det),
        "centered_delta_L": centered_dl,
    }
    log.info(f"spectrum: dip contrast {summary['dip_contrast']:.3f}, centered {summary['dip_contrast_centered']:.3f}")
    return [csv_path, _write_json(out / "summary.json", summary)], [], EXIT_OK


def cmd_simulate_ramsey(cfg: RunConfig, seed: int, digest: str, out: Path) -> Outcome:
    rc = cfg.ramsey
    tau = np.linspace(0.0, rc.tau_max, rc.points)
    outputs: List[Path] = []
    if rc.pair:
        pair = synthesize_ramsey_pair(rc.params(), tau, rc.shots, seed, isc_b0=rc.isc_background)
        pair_path = out / "ramsey_pair.csv"
        write_table_csv(
            pair_path,
            {"tau_us": tau, "in_phase": pair.in_phase, "opposite_phase": pair.opposite_phase, "difference": pair.difference},
            digest,
        )
        outputs.append(pair_path)
        total = pair.in_phase.astype(float) + pair.opposite_phase.astype(float)
        data = FitData(tau, pair.difference, 1.0 / np.maximum(total, 1.0))
    else:
        counts = synthesize_ramsey(rc.params(), tau, rc.shots, seed, isc_b0=rc.isc_background)
        data = FitData.from_counts(tau, counts)
    path = out / "ramsey.csv"
    write_fit_data(path, data, digest)
    outputs.append(path)
    return outputs, [], EXIT_OK


def cmd_simulate_hahn(cfg: RunConfig, seed: int, digest: str, out: Path) -> Outcome:
    hc = cfg.hahn
    tau = np.linspace(0.0, hc.tau_max, hc.points)
    counts = synthesize_hahn(hc.T2, hc.A, tau, hc.shots, seed, background=hc.background)
    path = out / "hahn.csv"
    write_fit_data(path, FitData.from_counts(tau, counts), digest)
    return [path], [], EXIT_OK


def cmd_simulate_readout(cfg: RunConfig, seed: int, digest: str, out: Path) -> Outcome:
    params, rates = cfg.model.resolve(DEFAULT_PRESETS["readout"])
    rc = cfg.readout
    levels = readout_levels(params, rates, rc.window, rc.shots, rc.efficiency, rc.branch)
    doc = {"config_sha256": digest, **levels.model_dump(), "required_readouts": required_readouts(levels)}
    log.info(f"readout: bright {levels.I_bright:.6g}, dark {levels.I_dark:.6g}, N = {doc['required_readouts']:.4g}")
    return [_write_json(out / "readout.json", doc)], [], EXIT_OK


def cmd_simulate_tomodata(cfg: RunConfig, seed: int, digest: str, out: Path) -> Outcome:
    sc = cfg.tomography.synth
    data = synthesize_tomography_data(
        BlochVector(*sc.bloch),
        sc.F0,
        sc.C,
        np.random.default_rng(seed),
        angles=sc.angles,
        shots=sc.shots,
        repeats=sc.repeats,
        noise=sc.noise,
        normalization=sc.normalization,
    )
    path = out / "tomodata.csv"
    write_tomography_csv(path, data, digest)
    return [path], [], EXIT_OK


# ---- tomo / fit ----


def _data_path(value: Optional[str], what: str) -> Path:
    if not value:
        raise ConfigError(f"{what} needs a data file (--data or the config's data key)")
    return Path(value).expanduser()


def cmd_tomo(cfg: RunConfig, seed: int, digest: str, out: Path) -> Outcome:
    tc = cfg.tomography
    path = _data_path(tc.data, "tomo")
    data = read_tomography_data(path)
    status = EXIT_OK
    try:
        archive = sample_posterior(data, tc.sampler, seed, use_likelihood=tc.use_likelihood)
    except ConvergenceError as e:
        if e.partial is None:
            raise
        log.error(str(e))
        archive = e.partial
        status = EXIT_NOT_CONVERGED
    summary = summarize_posterior(archive, tc.mass, tc.sampler.rhat_limit)
    samples_path, summary_path = out / "posterior_samples.csv", out / "posterior_summary.json"
    write_posterior_samples(samples_path, archive, digest)
    write_posterior_summary(summary_path, summary, digest)
    return [samples_path, summary_path], [path], status


def cmd_fit(model: str, cfg: RunConfig, digest: str, out: Path) -> Outcome:
    fc = cfg.fit
    path = _data_path(fc.data, f"fit {model}")
    data = read_fit_data(path)
    result = fit_model(
        model,  # type: ignore[arg-type]
        data,
        cfg.fit_init(model),  # type: ignore[arg-type]
        fixed=fc.fixed,
        scale_covariance=fc.scale_covariance,
        multistart=fc.multistart,
        max_nfev=fc.max_nfev,
    )
    report_path, curve_path = out / "fit_report.json", out / "fit_curve.csv"
    write_fit_report(report_path, result, digest)
    tau, y = model_curve(result, float(data.tau.min()), float(data.tau.max()), fc.curve_points)
    write_table_csv(curve_path, {"tau_us": tau, "model": y}, digest)
    return [report_path, curve_path], [path], EXIT_OK


def cmd_fit_ramsey(cfg: RunConfig, seed: int, digest: str, out: Path) -> Outcome:
    return cmd_fit("ramsey", cfg, digest, out)


def cmd_fit_hahn(cfg: RunConfig, seed: int, digest: str, out: Path) -> Outcome:
    return cmd_fit("hahn", cfg, digest, out)


HANDLERS: Dict[str, Handler] = {
    "simulate cpt": cmd_simulate_cpt,
    "simulate rotation": cmd_simulate_rotation,
    "simulate spectrum": cmd_simulate_spectrum,
    "simulate ramsey": cmd_simulate_ramsey,
    "simulate hahn": cmd_simulate_hahn,
    "simulate readout": cmd_simulate_readout,
    "simulate tomodata": cmd_simulate_tomodata,
    "tomo": cmd_tomo,
    "fit ramsey": cmd_fit_ramsey,
    "fit hahn": cmd_fit_hahn,
}


def cmd_simulate(kind: str, cfg: RunConfig, seed: int, digest: str, out: Path) -> Outcome:
    handler = HANDLERS.get(f"simulate {kind}")
    if handler is None:
        raise ConfigError(f"unknown simulation {kind!r}")
    return handler(cfg, seed, digest, out)


# ---- argument handling ----


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nv-lambda", description="NV-center lambda-system toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run config")
    common.add_argument("--seed", type=int, help="RNG seed (default: config seed, then DEFAULT_SEED)")
    common.add_argument("--out", type=Path, help="Output directory")
    common.add_argument("--preset", help="Parameter preset, e.g. cpt_init or sigma_x")
    sub = parser.add_subparsers(dest="command")

    sim = sub.add_parser("simulate", help="Simulate dynamics or synthesize data")
    what = sim.add_subparsers(dest="what", required=True)
    for kind in ("cpt", "rotation"):
        p = what.add_parser(kind, parents=[common], help=f"{kind} drive trace")
        p.add_argument("--t", help="Drive duration, e.g. 0.5us")
        p.add_argument("--points", type=int, help="Trace points")
        p.add_argument("--start", help="Initial state: 0, +1, X, -X, mixed, state_a, state_b")
    p = what.add_parser("spectrum", parents=[common], help="Steady-state PL versus two-photon detuning")
    p.add_argument("--points", type=int)
    p.add_argument("--span", help="Half-width of the detuning grid, e.g. 50rad/us")
    p = what.add_parser("ramsey", parents=[common], help="Synthetic Ramsey counts")
    p.add_argument("--T2", help="T2*, e.g. 1.13us")
    p.add_argument("--A", type=float)
    p.add_argument("--points", type=int)
    p.add_argument("--shots", type=int)
    p.add_argument("--pair", action="store_true", default=None, help="Write in-phase/opposite-phase traces")
    p = what.add_parser("hahn", parents=[common], help="Synthetic Hahn-echo counts")
    p.add_argument("--T2", help="T2, e.g. 893us")
    p.add_argument("--A", type=float)
    p.add_argument("--points", type=int)
    p.add_argument("--shots", type=int)
    p = what.add_parser("readout", parents=[common], help="DBP bright/dark levels and readouts needed")
    p.add_argument("--window", help="Readout window, e.g. 400ns")
    p.add_argument("--shots", type=int)
    p = what.add_parser("tomodata", parents=[common], help="Synthetic tomography records")
    p.add_argument("--bloch", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--F0", type=float)
    p.add_argument("--C", type=float)
    p.add_argument("--shots", type=int)
    p.add_argument("--repeats", type=int)

    p = sub.add_parser("tomo", parents=[common], help="Bayesian state tomography")
    p.add_argument("--data", help="CSV or JSON records")

    fit = sub.add_parser("fit", help="Fit a coherence model")
    models = fit.add_subparsers(dest="model", required=True)
    for model in ("ramsey", "hahn"):
        p = models.add_parser(model, parents=[common])
        p.add_argument("--data", help="CSV with tau_us,counts[,weight]")
        p.add_argument("--fix", action="append", help="Parameter held at its initial value (repeatable)")

    p = sub.add_parser("snr", help="Readouts needed for unit signal-to-noise")
    p.add_argument("I_bright", type=float)
    p.add_argument("I_dark", type=float)
    p.add_argument("n", type=float)
    return parser


def _overrides(args: argparse.Namespace, name: str) -> Dict[str, Any]:
    get = lambda key: getattr(args, key, None)  # noqa: E731
    o: Dict[str, Any] = {"seed": get("seed"), "model.preset": get("preset")}
    if name in ("simulate cpt", "simulate rotation"):
        o.update({"simulate.t": get("t"), "simulate.points": get("points"), "simulate.start": get("start")})
    elif name == "simulate spectrum":
        o.update({"spectrum.points": get("points"), "spectrum.span": get("span")})
    elif name == "simulate ramsey":
        o.update({"ramsey.T2_star": get("T2"), "ramsey.A": get("A"), "ramsey.points": get("points"),
                  "ramsey.shots": get("shots"), "ramsey.pair": get("pair")})
    elif name == "simulate hahn":
        o.update({"hahn.T2": get("T2"), "hahn.A": get("A"), "hahn.points": get("points"), "hahn.shots": get("shots")})
    elif name == "simulate readout":
        o.update({"readout.window": get("window"), "readout.shots": get("shots")})
    elif name == "simulate tomodata":
        bloch = get("bloch")
        o.update({"tomography.synth.bloch": list(bloch) if bloch else None, "tomography.synth.F0": get("F0"),
                  "tomography.synth.C": get("C"), "tomography.synth.shots": get("shots"),
                  "tomography.synth.repeats": get("repeats")})
    elif name == "tomo":
        o["tomography.data"] = get("data")
    elif name.startswith("fit "):
        o.update({"fit.data": get("data"), "fit.fixed": get("fix")})
    return o


def _command_name(args: argparse.Namespace) -> Optional[str]:
    if args.command == "simulate":
        return f"simulate {args.what}"
    if args.command == "fit":
        return f"fit {args.model}"
    return args.command


def cmd_snr(args: argparse.Namespace) -> int:
    try:
        levels = ReadoutLevels(I_bright=args.I_bright, I_dark=args.I_dark, n=args.n)
        n_readouts = required_readouts(levels)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        ledger.append("run_failed", command="snr", error=str(e))
        return EXIT_ERROR
    print(f"{n_readouts:.4g}")
    ledger.append("run_finished", command="snr", required_readouts=n_readouts)
    return EXIT_OK


def run_command(name: str, args: argparse.Namespace) -> int:
    run_id = uuid.uuid4().hex[:12]
    bind_run_context(run_id)
    try:
        cfg = load_run_config(getattr(args, "config", None), _overrides(args, name))
        seed = cfg.seed if cfg.seed is not None else config.settings.DEFAULT_SEED
        digest = config_sha256({"command": name, "seed": seed, "config": cfg.model_dump(mode="json")})
        bind_run_context(run_id, digest)
        out = getattr(args, "out", None) or (Path(cfg.output) if cfg.output else None)
        out = out or Path(config.settings.OUTPUT_DIR) / f"{name.replace(' ', '-')}-{digest[:12]}"
        out.mkdir(parents=True, exist_ok=True)
        ledger.append("run_started", run_id=run_id, command=name, config_sha256=digest, seed=seed, out=str(out))

        if name.startswith("simulate "):
            outputs, inputs, status = cmd_simulate(name.split(" ", 1)[1], cfg, seed, digest, out)
        else:
            outputs, inputs, status = HANDLERS[name](cfg, seed, digest, out)
        write_manifest(out, name, digest, seed, outputs, inputs)
        ledger.append("run_finished", run_id=run_id, command=name, status=status, outputs=[p.name for p in outputs])
        if status == EXIT_OK:
            log.info(f"{name} finished; outputs in {out}")
        return status
    except ConvergenceError as e:
        return _fail(run_id, name, e, EXIT_NOT_CONVERGED)
    except FitError as e:
        return _fail(run_id, name, e, EXIT_ERROR if e.bad_input else EXIT_NOT_CONVERGED)
    except (NvLambdaError, ValueError, OSError) as e:
        return _fail(run_id, name, e, EXIT_ERROR)
    finally:
        bind_run_context(None)


def _fail(run_id: str, name: str, e: Exception, status: int) -> int:
    log.error(f"{name} failed: {e}")
    print(f"error: {e}", file=sys.stderr)
    ledger.append("run_failed", run_id=run_id, command=name, status=status, error=str(e))
    return status


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; 2 is reserved for non-convergence here
        return EXIT_OK if e.code in (0, None) else EXIT_ERROR

    config.ensure_dirs()
    init_logging()
    name = _command_name(args)
    if name is None:
        parser.print_help()
        return EXIT_OK
    if name == "snr":
        return cmd_snr(args)
    return run_command(name, args)


if __name__ == "__main__":
    sys.exit(main())
