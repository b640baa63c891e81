"""Command-line front end: simulate T_D sweeps, estimate, reproduce figure data.

Configuration is an INI file whose keys are addressed as ``section.key``
(for example ``link.pair_rate``); ``--set section.key=value`` overrides any
of them. Exit codes: 0 success, 1 usage or config error, 2 unreadable input,
3 estimator did not converge.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from pulsedint._rng import derive_seed
from pulsedint.interference import (
    Constant,
    Exponential,
    InterferenceModel,
    Periodic,
    PoissonImpulse,
    PulseTrain,
    RenewalGeneral,
    TraceFormatError,
    TwoStateExp,
    Uniform,
    export_pulse_trace,
    generate_pulse_train,
    import_pulse_trace,
    merge_trains,
    theoretical_loss_curve,
    window_clean_fraction,
)
from pulsedint.linksim import (
    DeterministicOverlap,
    RecordTable,
    SimConfig,
    TwoStateErasure,
    run_link_sim,
)
from pulsedint.nonparam import (
    CcdfEstimate,
    FitError,
    LossCurve,
    RankDeficientError,
    estimate_loss_curve,
    recover_ccdf_bias_corrected,
    recover_ccdf_direct,
)
from pulsedint.param import (
    GEParams,
    convergence_study,
    fit_ml,
    loss_first,
    loss_second,
    write_fit_report,
)

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NONCONVERGED = 0, 1, 2, 3
METHODS = ("direct", "bias-corrected", "param")
FIGURES = ("fig4", "fig5", "fig9", "fig10", "fig11", "fig12")


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "experiment": {
        "seed": "0",
        "t_d_min": "0.001",
        "t_d_max": "0.020",
        "t_d_step": "0.001",
        "packets_per_point": "10000",
        "method": "direct",
        "confidence": "0.95",
        "out": "out",
    },
    "interference": {
        "kind": "poisson",
        "count": "1",
        "rate": "100",
    },
    "link": {
        "pair_rate": "50",
        "sifs": "1e-05",
        "carrier_sense": "false",
        "collision_prob": "0",
        "erasure": "overlap",
        "paired": "true",
    },
    "fit": {},
    "study": {
        "sample_sizes": "1000, 3000, 10000",
        "replicates": "100",
        "per_cell": "false",
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    interference: InterferenceModel
    interferers: int
    link: SimConfig
    grid: tuple[float, ...]
    packets_per_point: int
    method: str
    confidence: float
    out: Path
    seed: int
    fixed: dict
    raw: configparser.ConfigParser


def load_config(path: str | None, overrides: Sequence[str] = ()) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.read_dict(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not (sep and dot and name):
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, name, value.strip())
    return cp


def _get(cp, section, key, kind=float):
    field = f"{section}.{key}"
    if not cp.has_option(section, key):
        raise ConfigError(f"{field} is required")
    raw = cp.get(section, key)
    try:
        if kind is bool:
            return cp.getboolean(section, key)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{field}: cannot parse {raw!r}") from None


def _sampler(spec: str, field: str):
    name, _, args = spec.partition(":")
    try:
        vals = [float(v) for v in args.split(":")] if args else []
        if name == "const":
            return Constant(*vals)
        if name == "exp":
            return Exponential(*vals)
        if name == "uniform":
            return Uniform(*vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{field}: {exc}") from None
    raise ConfigError(f"{field}: unknown distribution {spec!r} (use const:x, exp:rate, uniform:a:b)")


def _interference(cp) -> InterferenceModel:
    kind = cp.get("interference", "kind")
    try:
        if kind == "periodic":
            return Periodic(
                _get(cp, "interference", "period"),
                cp.getfloat("interference", "pulse_duration", fallback=0.0),
            )
        if kind == "poisson":
            return PoissonImpulse(_get(cp, "interference", "rate"))
        if kind == "twostate":
            return TwoStateExp(
                _get(cp, "interference", "rate_enter_bad"), _get(cp, "interference", "rate_leave_bad")
            )
        if kind == "renewal":
            return RenewalGeneral(
                _sampler(cp.get("interference", "gap"), "interference.gap"),
                _sampler(cp.get("interference", "duration", fallback="const:0"), "interference.duration"),
            )
    except configparser.NoOptionError as exc:
        raise ConfigError(f"interference.{exc.option} is required") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"interference: {exc}") from None
    raise ConfigError(f"interference.kind: unknown kind {kind!r}")


def _grid(cp) -> tuple[float, ...]:
    if cp.has_option("experiment", "t_d"):
        raw = cp.get("experiment", "t_d")
        try:
            grid = [float(v) for v in raw.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"experiment.t_d: cannot parse {raw!r}") from None
    else:
        lo, hi, step = (_get(cp, "experiment", k) for k in ("t_d_min", "t_d_max", "t_d_step"))
        if step <= 0 or hi < lo:
            raise ConfigError("experiment.t_d_step must be > 0 and t_d_max >= t_d_min")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        grid = [round(lo + i * step, 12) for i in range(count)]
    if not grid or any(not (g > 0 and math.isfinite(g)) for g in grid):
        raise ConfigError("experiment.t_d grid must be non-empty and positive")
    return tuple(sorted(set(grid)))


def resolve(cp: configparser.ConfigParser, out: str | None = None, seed: int | None = None,
            method: str | None = None, confidence: float | None = None) -> ExperimentConfig:
    if seed is not None:
        cp.set("experiment", "seed", str(seed))
    if method is not None:
        cp.set("experiment", "method", method)
    if confidence is not None:
        cp.set("experiment", "confidence", repr(confidence))
    if out is not None:
        cp.set("experiment", "out", out)
    n = _get(cp, "experiment", "packets_per_point", int)
    if n < 100:
        raise ConfigError(f"experiment.packets_per_point must be >= 100, got {n}")
    conf = _get(cp, "experiment", "confidence")
    if not 0 < conf < 1:
        raise ConfigError(f"experiment.confidence must be in (0, 1), got {conf}")
    meth = cp.get("experiment", "method")
    if meth not in METHODS:
        raise ConfigError(f"experiment.method must be one of {', '.join(METHODS)}, got {meth!r}")
    sd = _get(cp, "experiment", "seed", int)
    if sd < 0:
        raise ConfigError("experiment.seed must be non-negative")
    count = _get(cp, "interference", "count", int)
    if count < 1:
        raise ConfigError("interference.count must be >= 1")
    erasure = cp.get("link", "erasure")
    if erasure == "overlap":
        em = DeterministicOverlap()
    elif erasure == "twostate":
        try:
            em = TwoStateErasure(_get(cp, "link", "p_G"), _get(cp, "link", "p_B"))
        except ValueError as exc:
            raise ConfigError(f"link: {exc}") from None
    else:
        raise ConfigError(f"link.erasure must be overlap or twostate, got {erasure!r}")
    try:
        link = SimConfig(
            pair_rate=_get(cp, "link", "pair_rate"),
            fragment_duration=1.0,
            sifs=_get(cp, "link", "sifs"),
            carrier_sense=_get(cp, "link", "carrier_sense", bool),
            collision_prob=_get(cp, "link", "collision_prob"),
            erasure_model=em,
            seed=sd,
            paired=_get(cp, "link", "paired", bool),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"link: {exc}") from None
    fixed = {}
    for key in ("alpha", "p_G", "lambda_G"):
        if cp.has_option("fit", key):
            fixed[key] = _get(cp, "fit", key)
    return ExperimentConfig(
        interference=_interference(cp),
        interferers=count,
        link=link,
        grid=_grid(cp),
        packets_per_point=n,
        method=meth,
        confidence=conf,
        out=Path(cp.get("experiment", "out")),
        seed=sd,
        fixed=fixed,
        raw=cp,
    )


# -- simulation sweep -------------------------------------------------------------


def build_train(model: InterferenceModel, count: int, horizon: float, seed: int) -> PulseTrain:
    """One interference train per experiment; independent interferers are superposed."""
    base = int(derive_seed(seed, "interference").generate_state(1)[0])
    if count == 1:
        return generate_pulse_train(model, horizon, base)
    trains = []
    for k in range(count):
        s = int(derive_seed(seed, f"interference/{k}").generate_state(1)[0])
        trains.append(generate_pulse_train(model, horizon, s))
    return merge_trains(trains)


def _point_config(cfg: ExperimentConfig, i: int, t_d: float, horizon: float) -> SimConfig:
    frag = t_d / 2 if cfg.link.paired else t_d
    seed = int(derive_seed(cfg.seed, f"linksim/{i}").generate_state(1)[0])
    return replace(cfg.link, fragment_duration=frag, seed=seed, horizon=horizon)


def _run_point(args) -> RecordTable:
    config, train = args
    return run_link_sim(config, train)


def simulate_sweep(cfg: ExperimentConfig, workers: int = 1) -> RecordTable:
    """Records for every grid point, exactly ``packets_per_point`` each."""
    n = cfg.packets_per_point
    m = cfg.interference
    duty = m.mean_duration / (m.mean_duration + m.mean_gap) if hasattr(m, "mean_gap") else 0.0
    duty = min(1.0, duty * cfg.interferers)
    longest = max(cfg.grid)
    per_pkt = 1.0 / cfg.link.pair_rate + longest + 2 * cfg.link.sifs
    if cfg.link.carrier_sense:
        per_pkt += duty * m.mean_duration
    horizon = 1.2 * n * per_pkt + 1.0
    for _ in range(8):
        train = build_train(m, cfg.interferers, horizon, cfg.seed)
        jobs = [(_point_config(cfg, i, td, horizon), train) for i, td in enumerate(cfg.grid)]
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                tables = list(pool.map(_run_point, jobs))
        else:
            tables = [_run_point(j) for j in jobs]
        if min(len(t) for t in tables) >= n:
            return RecordTable.concat([t[:n] for t in tables])
        horizon *= 1.5
    raise RuntimeError("could not collect enough transmissions; check link.pair_rate")


# -- commands -------------------------------------------------------------------------


def _write_config(cfg: ExperimentConfig) -> None:
    with open(cfg.out / "config.resolved.ini", "w") as fh:
        cfg.raw.write(fh)


def _prepare_out(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {path} is not writable: {exc.strerror}") from None


def _summary(curve: LossCurve) -> None:
    for p in curve.points:
        p2 = "nan" if math.isnan(p.p2_hat) else f"{p.p2_hat:.4f}"
        print(f"t_d={p.t_d * 1e3:.3f} ms  n={p.n1}  p1={p.p1_hat:.4f}  p2={p2}  p={p.p_hat:.4f}")


def cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    _prepare_out(cfg.out)
    records = simulate_sweep(cfg, _workers(args))
    curve = estimate_loss_curve(records, cfg.confidence)
    records.to_csv(cfg.out / "records.csv")
    curve.to_csv(cfg.out / "loss_curve.csv")
    _write_config(cfg)
    _summary(curve)
    return EXIT_OK


def _load_curve(path: Path, confidence: float) -> LossCurve:
    try:
        with open(path) as fh:
            header = fh.readline().strip()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    if not header:
        raise TraceFormatError("empty input file", 1)
    if header.startswith("pair_index"):
        return estimate_loss_curve(RecordTable.from_csv(path), confidence)
    curve = LossCurve.from_csv(path, confidence)
    if len(curve) == 0:
        raise TraceFormatError("no data rows", 2)
    return curve


def cmd_estimate(args) -> int:
    cp = load_config(args.config, args.set)
    cfg = resolve(cp, args.out, args.seed, args.method, args.confidence)
    _prepare_out(cfg.out)
    curve = _load_curve(Path(args.input), cfg.confidence)
    _write_config(cfg)
    if cfg.method == "param":
        result = fit_ml(curve, fixed=cfg.fixed or None)
        write_fit_report(result, curve, cfg.out)
        p = result.params
        print(
            f"lambda_B={p.lambda_B:.4f} lambda_G={p.lambda_G:.4f} p_G={p.p_G:.4f} "
            f"p_B={p.p_B:.4f} alpha={p.alpha:.4f} p_cs={p.p_cs:.4f} residual={result.residual:.3g}"
        )
        if not result.converged:
            print("error: fit did not converge", file=sys.stderr)
            return EXIT_NONCONVERGED
        return EXIT_OK
    if cfg.method == "direct":
        est = recover_ccdf_direct(curve)
    else:
        est = recover_ccdf_bias_corrected(curve)
    est.to_csv(cfg.out / "ccdf.csv")
    lines = [
        f"method={est.method}",
        f"mean_pulse_duration={est.mean_pulse_duration!r}",
        f"mean_cycle={est.mean_cycle!r}",
        f"residual_norm={est.residual_norm!r}",
        f"degenerate={str(est.degenerate).lower()}",
    ]
    (cfg.out / "estimate_report.txt").write_text("\n".join(lines) + "\n")
    print(" ".join(lines))
    return EXIT_OK


def cmd_trace_import(args) -> int:
    cp = load_config(args.config, args.set)
    cfg = resolve(cp, args.out, args.seed, args.method, args.confidence)
    _prepare_out(cfg.out)
    train = import_pulse_trace(args.trace, args.horizon)
    export_pulse_trace(train, cfg.out / "trace.csv")
    grid = [t for t in cfg.grid if t < train.horizon]
    with open(cfg.out / "trace_loss.csv", "w") as fh:
        fh.write("t_d_s,loss\n")
        for t in grid:
            fh.write(f"{t!r},{1.0 - window_clean_fraction(train, t)!r}\n")
    print(f"pulses={len(train)} horizon={train.horizon!r} occupancy={np.sum(train.durations) / train.horizon:.4f}")
    if args.simulate:
        records = _sweep_over_train(cfg, train)
        curve = estimate_loss_curve(records, cfg.confidence)
        records.to_csv(cfg.out / "records.csv")
        curve.to_csv(cfg.out / "loss_curve.csv")
        _summary(curve)
    _write_config(cfg)
    return EXIT_OK


def _sweep_over_train(cfg: ExperimentConfig, train: PulseTrain) -> RecordTable:
    tables = []
    for i, td in enumerate(cfg.grid):
        if td >= train.horizon:
            continue
        tables.append(run_link_sim(_point_config(cfg, i, td, train.horizon), train))
    return RecordTable.concat(tables)


# -- canned figure experiments ---------------------------------------------------


def _write_series(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _measured_vs_theory(curve: LossCurve, theory: np.ndarray):
    for p, th in zip(curve.points, theory):
        lo, hi = p.ci1 if not p.paired else (math.nan, math.nan)
        yield (p.t_d, p.p_hat, lo, hi, th)


FIG_CONFIGS = {
    "fig4-periodic": [
        "interference.kind=periodic", "interference.period=0.1",
        "link.paired=false", "link.pair_rate=10",
        "experiment.t_d_min=0.01", "experiment.t_d_max=0.12", "experiment.t_d_step=0.01",
    ],
    "fig4-poisson": [
        "interference.kind=poisson", "interference.rate=100",
        "link.paired=false", "link.pair_rate=100",
        "experiment.t_d_min=0.0025", "experiment.t_d_max=0.04", "experiment.t_d_step=0.0025",
    ],
    "fig5": [
        "interference.kind=periodic", "interference.period=0.02", "interference.pulse_duration=0.009",
        "link.paired=false", "link.pair_rate=10",
        "experiment.t_d_min=0.001", "experiment.t_d_max=0.02", "experiment.t_d_step=0.001",
    ],
    "fig12": [
        "interference.kind=renewal", "interference.count=3",
        "interference.gap=exp:20", "interference.duration=const:0.0045",
        "link.carrier_sense=true", "link.erasure=twostate", "link.p_G=0.0055", "link.p_B=0.4055",
        "link.pair_rate=50", "experiment.packets_per_point=100000", "study.per_cell=true",
        "experiment.t_d=0.0028 0.0058182 0.0088364 0.0118546 0.0148728 0.017891 0.020909 0.0239272 0.0269454 0.0299636 0.0329818 0.036",
        "fit.alpha=0",
    ],
}

# packet durations and parameters for the model-only figures
MODEL_GRID = np.round(np.arange(0.0005, 0.0201, 0.0005), 6)
MODEL_LAMBDA_G = 1 / 0.0045
MODEL_FIGS = {
    "fig9": ("lambda_B", [100.0, 1000.0], dict(p_G=0.0, p_B=1.0, alpha=0.0, lambda_B=100.0)),
    "fig10": ("p_B", [0.7, 0.9], dict(lambda_B=100.0, p_G=0.1, alpha=0.0, p_B=0.7)),
    "fig11": ("alpha", [0.0, 0.2, 0.8, 1.0], dict(lambda_B=100.0, p_G=0.0, p_B=1.0, alpha=0.0)),
}


def canned_config(name: str, extra: Sequence[str] = ()) -> configparser.ConfigParser:
    return load_config(None, [*FIG_CONFIGS[name], *extra])


def _reproduce_model(fig: str, out: Path) -> None:
    key, values, base = MODEL_FIGS[fig]
    rows = []
    for v in values:
        p = GEParams(lambda_G=MODEL_LAMBDA_G, **{**base, key: v})
        g1 = loss_first(MODEL_GRID, p)
        g2 = loss_second(MODEL_GRID, p)
        comb = 1 - (1 - g1) * (1 - g2)
        rows += [(v, d, a, b, c) for d, a, b, c in zip(MODEL_GRID, g1, g2, comb)]
    _write_series(out / f"{fig}.csv", f"{key},t_d_s,p1,p2,p", rows)


def _reproduce_sim(name: str, args, out: Path, workers: int):
    cp = canned_config(name, args.set)
    cfg = resolve(cp, str(out), args.seed, None, args.confidence)
    records = simulate_sweep(cfg, workers)
    curve = estimate_loss_curve(records, cfg.confidence)
    return cfg, records, curve


def cmd_reproduce(args) -> int:
    fig = args.figure
    if fig not in FIGURES:
        print(f"error: unknown figure {fig!r}; valid ids: {', '.join(FIGURES)}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or f"out/{fig}")
    _prepare_out(out)
    workers = _workers(args)
    if fig in MODEL_FIGS:
        _reproduce_model(fig, out)
        return EXIT_OK
    if fig == "fig4":
        for name, model_name in (("fig4-periodic", "periodic"), ("fig4-poisson", "poisson")):
            cfg, _, curve = _reproduce_sim(name, args, out, workers)
            theory = theoretical_loss_curve(cfg.interference, curve.t_d).values
            _write_series(out / f"fig4_{model_name}_loss.csv", "t_d_s,p_hat,ci_lo,ci_hi,theory",
                          _measured_vs_theory(curve, theory))
            est = recover_ccdf_direct(curve)
            est.to_csv(out / f"fig4_{model_name}_ccdf.csv")
            _summary(curve)
        return EXIT_OK
    if fig == "fig5":
        rows = {}
        for cs in (False, True):
            extra = [f"link.carrier_sense={str(cs).lower()}"]
            cp = canned_config("fig5", [*extra, *args.set])
            cfg = resolve(cp, str(out), args.seed, None, args.confidence)
            curve = estimate_loss_curve(simulate_sweep(cfg, workers), cfg.confidence)
            theory = theoretical_loss_curve(cfg.interference, curve.t_d, carrier_sense=cs).values
            tag = "cs" if cs else "nocs"
            _write_series(out / f"fig5_{tag}_loss.csv", "t_d_s,p_hat,ci_lo,ci_hi,theory",
                          _measured_vs_theory(curve, theory))
            rows[tag] = curve
        est = recover_ccdf_bias_corrected(rows["cs"])
        est.to_csv(out / "fig5_ccdf.csv")
        print(f"mean_pulse_duration={est.mean_pulse_duration!r}")
        return EXIT_OK
    # fig12
    cfg, records, curve = _reproduce_sim("fig12", args, out, workers)
    cp = cfg.raw
    sizes = [int(v) for v in cp.get("study", "sample_sizes").replace(",", " ").split()]
    reps = cp.getint("study", "replicates")
    method = "bias-corrected" if cfg.link.carrier_sense else "direct"
    res = convergence_study(records, sizes, reps, cfg.seed, method,
                            {"fixed": cfg.fixed or None}, workers,
                            per_cell=cp.getboolean("study", "per_cell"))
    res.to_csv(out / "fig12.csv")
    curve.to_csv(out / "loss_curve.csv")
    for n, a, b in zip(res.sample_sizes, res.parametric, res.nonparametric):
        print(f"N={n} parametric={a:.4f} nonparametric={b:.4f}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------


def _workers(args) -> int:
    return args.workers if args.workers else (os.cpu_count() or 1)


def _config_from_args(args) -> ExperimentConfig:
    cp = load_config(args.config, args.set)
    return resolve(cp, args.out, args.seed, args.method, args.confidence)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, default=0, help="worker processes (default: all CPUs)")
    p.add_argument("--method", choices=METHODS, help="estimator")
    p.add_argument("--confidence", type=float, help="confidence level for intervals")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config entry (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pulsedint", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="simulate a T_D sweep and write records and loss curve")
    _common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("estimate", help="estimate F or fit the two-state model from a CSV")
    p.add_argument("input", help="loss-curve CSV or records CSV")
    _common(p)
    p.set_defaults(func=cmd_estimate)
    p = sub.add_parser("reproduce", help="write data for a figure analogue")
    p.add_argument("figure", help=f"one of {', '.join(FIGURES)}")
    _common(p)
    p.set_defaults(func=cmd_reproduce)
    p = sub.add_parser("trace-import", help="import a pulse trace, optionally simulate over it")
    p.add_argument("trace", help="CSV with start_s,duration_s")
    p.add_argument("--horizon", type=float, help="trace length in seconds (default: last pulse end)")
    p.add_argument("--simulate", action="store_true", help="run the link sweep over the trace")
    _common(p)
    p.set_defaults(func=cmd_trace_import)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TraceFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (FitError, RankDeficientError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
