"""Command-line front end.

Exit codes: 0 success, 1 reproduce criteria failed, 2 configuration or usage
error, 3 unsupported physics configuration, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .atom import AtomConfigError, fmt_half as _half, sublevel_table
from .config import ConfigError, ExperimentConfig, atomic_write, dumps
from .pumping import (
    DARK_THRESHOLD,
    RESONANT_WINDOW,
    PumpingConfigError,
    UnsupportedConfiguration,
    calibration_timescales,
    find_dark_states,
    optical_pump_prepare,
    rate_matrix,
    simulate_detection_batch,
)
from .stats import (
    CountHistogram,
    FitError,
    HistogramModel,
    ModelError,
    detection_fidelity,
    fit_histograms,
    optimal_threshold,
    pmf_table,
)
from .transfer import (
    RabiCurve,
    TransferError,
    fit_rabi,
    lamb_dicke,
    synthetic_curve,
    thermal_rabi,
    transfer_fidelity,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_UNSUPPORTED, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# ---------------------------------------------------------------------------
# helpers


def _emit(args, name: str, text: str):
    """Write ``text`` to OUT/name when --out is set, else to stdout."""
    out = args.out or None
    if out:
        atomic_write(Path(out) / name, text)
    else:
        sys.stdout.write(text)


def _config(args) -> ExperimentConfig:
    if args.config:
        return ExperimentConfig.load(args.config)
    return ExperimentConfig()


def _seed(args, cfg: ExperimentConfig, default: int | None = None) -> int:
    seed = args.seed if args.seed is not None else cfg.seed
    if seed is None:
        seed = default
    if seed is None:
        raise UsageError("this subcommand is stochastic: pass --seed or set 'seed' in the config")
    return seed


def _csv(header, rows) -> str:
    lines = [",".join(header)] + [",".join(_fmt(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _model(args, cfg: ExperimentConfig) -> HistogramModel:
    if getattr(args, "model", None):
        try:
            return HistogramModel.from_dict(json.loads(_read(args.model)))
        except json.JSONDecodeError as exc:
            raise UsageError(f"model file is not valid JSON: {exc}") from None
    if getattr(args, "params", None):
        nd, nb, td, tb = args.params
        return HistogramModel(nd, nb, td, tb, args.window)
    return cfg.model


# ---------------------------------------------------------------------------
# subcommands


def cmd_atom(args) -> int:
    cfg = _config(args)
    rows = [[r["level"], r["F"], r["mF"], r["energy_GHz"], r["gF"]] for r in sublevel_table(cfg.atom)]
    _emit(args, "atom.csv", _csv(["level", "F", "mF", "energy_GHz", "gF"], rows))
    return EXIT_OK


def _setup(cfg):
    if cfg.setup is None:
        raise UsageError("the atom overrides leave no usable default beam setup; give 'setup' explicitly")
    return cfg.setup


def cmd_pump(args) -> int:
    cfg = _config(args)
    setup = _setup(cfg)
    if args.pump_cmd == "dark-states":
        s = setup
        if args.no_raman:
            s = s.with_beams(s.beams, raman=False)
        if args.with_d6:
            s = s.with_beams(list(s.beams) + [s.beam("D6")], raman=not args.no_raman)
        R = rate_matrix(s, max_detuning=RESONANT_WINDOW if args.resonant_only else None)
        dark = find_dark_states(R, args.threshold)
        rows = [[x.level, _half(x.F), _half(x.mF), float(R.outflow[R.index(x)])] for x in R.states if x in dark]
        _emit(args, "dark_states.csv", _csv(["level", "F", "mF", "outflow_per_s"], rows))
    elif args.pump_cmd == "timescales":
        ts = calibration_timescales(setup, args.extinction_db)
        units = {"raman_max": "Hz", "raman_via_p32": "Hz"}
        rows = [[k, float(v), units.get(k, "s")] for k, v in ts.items()]
        _emit(args, "timescales.csv", _csv(["quantity", "value", "unit"], rows))
    else:  # evolve
        if args.time < 0:
            raise UsageError("--time must be >= 0")
        p = optical_pump_prepare(setup, args.variant, args.time)
        states = setup.atom.ground_sublevels
        rows = [[x.level, _half(x.F), _half(x.mF), float(v)] for x, v in zip(states, p)]
        _emit(args, "populations.csv", _csv(["level", "F", "mF", "population"], rows))
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args)
    setup = _setup(cfg)
    if args.events < 1:
        raise UsageError("--events must be >= 1")
    seed = _seed(args, cfg)
    p0 = optical_pump_prepare(setup, args.variant, args.prep_time)
    counts = simulate_detection_batch(setup, p0, args.events, seed)
    _emit(args, f"{args.variant}_histogram.csv", CountHistogram.from_counts(counts).to_csv())
    return EXIT_OK


def cmd_fit(args) -> int:
    _config(args)
    try:
        hb = CountHistogram.from_csv(_read(args.bright))
        hd = CountHistogram.from_csv(_read(args.dark))
        res = fit_histograms(hb, hd, args.window)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not res.success:
        raise NumericalFailure(res.message, res.to_dict())
    _emit(args, "fit.json", dumps(res.to_dict()))
    return EXIT_OK


def cmd_fidelity(args) -> int:
    cfg = _config(args)
    m = _model(args, cfg)
    nc, eb, ed = optimal_threshold(m)
    doc = {
        "fidelity": detection_fidelity(m),
        "threshold": nc,
        "eps_bright": eb,
        "eps_dark": ed,
        "model": m.to_dict(),
    }
    _emit(args, "fidelity.json", dumps(doc))
    return EXIT_OK


def cmd_pmf(args) -> int:
    cfg = _config(args)
    m = _model(args, cfg)
    if args.max_n is not None and args.max_n < 0:
        raise UsageError("--max-n must be >= 0")
    n, pb, pd = pmf_table(m, args.max_n)
    rows = [[int(k), float(b), float(d)] for k, b, d in zip(n, pb, pd)]
    _emit(args, "pmf.csv", _csv(["n", "p_bright", "p_dark"], rows))
    return EXIT_OK


def cmd_rabi(args) -> int:
    cfg = _config(args)
    tcfg = cfg.transfer
    eta = lamb_dicke(tcfg)
    if args.rabi_cmd == "curve":
        if args.points < 2 or args.t_max <= 0:
            raise UsageError("need --points >= 2 and --t-max > 0")
        times = np.linspace(0, args.t_max, args.points)
        if args.shots:
            curve = synthetic_curve(tcfg, times, args.shots, _seed(args, cfg))
        else:
            curve = RabiCurve(times, thermal_rabi(tcfg, times))
        _emit(args, "rabi_curve.csv", curve.to_csv())
    elif args.rabi_cmd == "fit":
        curve = RabiCurve.from_csv(_read(args.data))
        if args.shots:
            curve.shots = args.shots
        res = fit_rabi(curve, eta, fit_eta=args.float_eta)
        if not res.success:
            raise NumericalFailure(res.message, res.to_dict())
        _emit(args, "rabi_fit.json", dumps(res.to_dict()))
    else:
        est = transfer_fidelity(tcfg, args.shots, _seed(args, cfg), cfg.model)
        _emit(args, "rabi_fidelity.json", dumps(est.to_dict()))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from .pipeline import DEFAULT_SEED, reproduce

    cfg = _config(args)
    _setup(cfg)
    seed = _seed(args, cfg, DEFAULT_SEED)
    out = args.out or cfg.out or "reproduce_out"
    if args.tolerance_scale < 0:
        raise UsageError("--tolerance-scale must be >= 0")
    summary = reproduce(cfg, seed, out, args.tolerance_scale, figures=not args.no_figures)
    for r in summary["rows"]:
        flag = {True: "PASS", False: "FAIL", None: "info"}[r["pass"]]
        sys.stdout.write(f"{flag:4}  {r['name']}: {r['value']}\n")
    return EXIT_OK if summary["all_pass"] else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser


def _globals(p: argparse.ArgumentParser, suppress: bool):
    # on subparsers the defaults are suppressed so flags given before the
    # subcommand are not overwritten
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="FILE.json", default=d, help="experiment configuration")
    p.add_argument("--seed", type=_u64, metavar="U64", default=d, help="global seed for stochastic subcommands")
    p.add_argument("--out", metavar="DIR", default=d, help="write outputs into DIR instead of stdout")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def _model_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model", metavar="FILE", help="HistogramModel or fit JSON")
    g.add_argument("--params", nargs=4, type=float, metavar=("NBAR_D", "NBAR_B", "TAU_D", "TAU_B"),
                   help="model parameters (means per window, pumping times in s)")
    p.add_argument("--window", type=float, default=1e-3, help="detection window, s (default 1e-3)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ramandetect",
        description="Hyperfine-state detection in 137Ba+ by optical pumping with Raman repumping.",
    )
    _globals(ap, suppress=False)
    sub = ap.add_subparsers(dest="cmd", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        _globals(p, suppress=True)
        return p

    p = add("atom", "sublevel table of the atomic model")
    s = p.add_subparsers(dest="atom_cmd", required=True)
    q = s.add_parser("dump", help="CSV level,F,mF,energy_GHz,gF")
    _globals(q, suppress=True)
    p.set_defaults(func=cmd_atom)

    p = add("pump", "optical pumping analysis")
    s = p.add_subparsers(dest="pump_cmd", required=True)
    q = s.add_parser("dark-states", help="states with outflow below the threshold")
    _globals(q, suppress=True)
    q.add_argument("--threshold", type=float, default=DARK_THRESHOLD, help="outflow threshold, 1/s")
    q.add_argument("--no-raman", action="store_true", help="drop the Raman pair")
    q.add_argument("--with-d6", action="store_true", help="add the D6 beam")
    q.add_argument("--resonant-only", action="store_true",
                   help="keep only couplings within 100 MHz of resonance")
    q = s.add_parser("timescales", help="clearing, pumping and depumping times")
    _globals(q, suppress=True)
    q.add_argument("--extinction-db", type=float, default=30.0, help="pi-beam extinction for depumping")
    q = s.add_parser("evolve", help="populations after optical pumping")
    _globals(q, suppress=True)
    q.add_argument("--variant", choices=("dark", "bright"), default="dark")
    q.add_argument("--time", type=float, default=1e-3, help="evolution time, s")
    p.set_defaults(func=cmd_pump)

    p = add("detect", "simulate detection events into a histogram CSV n,count")
    p.add_argument("--events", type=int, default=10_000)
    p.add_argument("--variant", choices=("dark", "bright"), default="bright")
    p.add_argument("--prep-time", type=float, default=1e-3, help="optical pumping time, s")
    p.set_defaults(func=cmd_detect)

    p = add("fit", "fit bright and dark histograms")
    p.add_argument("--bright", required=True, metavar="FILE")
    p.add_argument("--dark", required=True, metavar="FILE")
    p.add_argument("--window", type=float, default=1e-3, help="detection window, s")
    p.set_defaults(func=cmd_fit)

    p = add("fidelity", "optimal threshold and detection fidelity")
    _model_args(p)
    p.set_defaults(func=cmd_fidelity)

    p = add("pmf", "bright and dark count distributions as CSV n,p_bright,p_dark")
    _model_args(p)
    p.add_argument("--max-n", type=int, default=None)
    p.set_defaults(func=cmd_pmf)

    p = add("rabi", "thermal Raman Rabi oscillation")
    s = p.add_subparsers(dest="rabi_cmd", required=True)
    q = s.add_parser("curve", help="CSV t_ns,p_bright")
    _globals(q, suppress=True)
    q.add_argument("--points", type=int, default=25)
    q.add_argument("--t-max", type=float, default=1e-6, help="last pulse time, s")
    q.add_argument("--shots", type=int, default=0, help="binomial samples per point (0: exact curve)")
    q = s.add_parser("fit", help="fit nbar and the Rabi frequency")
    _globals(q, suppress=True)
    q.add_argument("--data", required=True, metavar="FILE")
    q.add_argument("--shots", type=int, default=0, help="shots per point, sets binomial weights")
    q.add_argument("--float-eta", action="store_true", help="fit the Lamb-Dicke parameter too")
    q = s.add_parser("fidelity", help="simulated transfer probability at the first minimum")
    _globals(q, suppress=True)
    q.add_argument("--shots", type=int, default=1000)
    p.set_defaults(func=cmd_rabi)

    p = add("reproduce", "run the full analysis and compare against reference values")
    p.add_argument("--tolerance-scale", type=float, default=1.0,
                   help="multiply every tolerance band (0 demands exact agreement)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UnsupportedConfiguration as exc:
        sys.stderr.write(f"unsupported configuration: {exc}\n")
        return EXIT_UNSUPPORTED
    except (UsageError, ConfigError, AtomConfigError, PumpingConfigError, ModelError, TransferError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except NumericalFailure as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        sys.stdout.write(dumps(exc.diagnostics))
        return EXIT_NUMERIC
    except FitError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        sys.stdout.write(dumps(exc.result.to_dict()))
        return EXIT_NUMERIC
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
