"""Two-state (good/bad) interference model with per-state erasure rates.

Interference alternates between a good state G and a bad state B with
exponential dwell times. ``lambda_B`` is the rate of entering B (so gaps have
mean ``1/lambda_B``) and ``lambda_G`` the rate of leaving it (pulses have mean
``1/lambda_G``). A packet of duration ``d`` that starts in G runs into a pulse
with probability ``p_i = 1 - exp(-lambda_B d)``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import optimize

from pulsedint._rng import derive_rng
from pulsedint.linksim import RecordTable
from pulsedint.nonparam import (
    CcdfEstimate,
    FitError,
    LossCurve,
    estimate_loss_curve,
    recover_ccdf_bias_corrected,
    recover_ccdf_direct,
    sup_distance,
)

__all__ = [
    "ConvergenceResult",
    "GEParams",
    "ParamFitResult",
    "PAPER_INIT",
    "convergence_study",
    "fit_ml",
    "loss_first",
    "loss_second",
    "model_curve",
    "model_loss_curve",
    "prob_enter_bad",
    "stationary_distribution",
    "transition_matrix",
    "write_fit_report",
]

_ORDER = ("lambda_B", "lambda_G", "p_G", "p_B", "alpha")


@dataclass(frozen=True)
class GEParams:
    lambda_B: float
    lambda_G: float
    p_G: float
    p_B: float
    alpha: float = 0.0

    def __post_init__(self):
        for name in _ORDER:
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.lambda_B <= 0 or self.lambda_G <= 0:
            raise ValueError("rates must be positive")
        for name in ("p_G", "p_B", "alpha"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.p_G > self.p_B:
            raise ValueError(f"p_G ({self.p_G}) must not exceed p_B ({self.p_B})")

    @property
    def p_cs(self) -> float:
        return self.alpha * self.lambda_G / (self.lambda_G + self.lambda_B)

    @property
    def bad_fraction(self) -> float:
        """Long-run fraction of time in B under the rate convention above."""
        return self.lambda_B / (self.lambda_B + self.lambda_G)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in _ORDER])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> GEParams:
        return cls(*(float(v) for v in values))

    @staticmethod
    def alpha_without_carrier_sense(lambda_B: float, lambda_G: float) -> float:
        """``alpha`` that makes ``p_cs`` equal the time fraction in B.

        Without carrier sense a packet starts in B as often as the channel is
        in B. Values above 1 are not representable and are clipped.
        """
        return min(lambda_B / lambda_G, 1.0)


PAPER_INIT = dict(lambda_B=20.0, p_G=0.0, p_B=0.5, alpha=0.0)


def prob_enter_bad(t_d, lambda_B: float):
    t = np.asarray(t_d, dtype=float)
    if np.any(t < 0):
        raise ValueError("t_d must be non-negative")
    out = -np.expm1(-lambda_B * t)
    return float(out) if out.ndim == 0 else out


def transition_matrix(p_cs: float, p_i: float) -> np.ndarray:
    """Slot chain over (Idle, Transmitting, Loss)."""
    return np.array(
        [
            [0.0, 1.0 - p_cs, p_cs],
            [1.0 - p_i, 0.0, p_i],
            [1.0, 0.0, 0.0],
        ]
    )


def stationary_distribution(p_cs: float, p_i: float) -> tuple[float, float, float]:
    if not (0 <= p_cs <= 1 and 0 <= p_i <= 1):
        raise ValueError("p_cs and p_i must lie in [0, 1]")
    z = 2.0 + p_i * (1.0 - p_cs)
    return (1.0 / z, (1.0 - p_cs) / z, ((1.0 - p_cs) * p_i + p_cs) / z)


def loss_first(t_d, params: GEParams):
    """Loss probability of the first packet of a pair, duration ``t_d``."""
    p_i = np.asarray(prob_enter_bad(t_d, params.lambda_B))
    p_cs = params.p_cs
    out = (1 - p_i) * (1 - p_cs) * params.p_G + (p_i * (1 - p_cs) + p_cs) * params.p_B
    return float(out) if out.ndim == 0 else out


def loss_second(t_d, params: GEParams):
    """Loss probability of the second packet given the first got through."""
    p_i = np.asarray(prob_enter_bad(t_d, params.lambda_B))
    r = params.lambda_B / (params.lambda_B + params.lambda_G)
    out = (1 - p_i) * r * params.p_G + (1 - (1 - p_i) * r) * params.p_B
    return float(out) if out.ndim == 0 else out


def model_curve(grid: Sequence[float], params: GEParams) -> np.ndarray:
    """Stacked ``[G1(d1), G2(d1), G1(d2), G2(d2), ...]`` over packet durations."""
    d = np.asarray(grid, dtype=float)
    if d.size == 0:
        raise ValueError("grid must be non-empty")
    out = np.empty(2 * d.size)
    out[0::2] = loss_first(d, params)
    out[1::2] = loss_second(d, params)
    return out


def model_loss_curve(curve: LossCurve, params: GEParams, n: int = 10**9) -> LossCurve:
    """Loss curve predicted by the model on the T_D values of ``curve``."""
    d = curve.packet_duration
    return LossCurve.from_probabilities(
        curve.t_d, loss_first(d, params), loss_second(d, params), n=n, confidence=curve.confidence
    )


# -- fitting --------------------------------------------------------------------


@dataclass(frozen=True)
class ParamFitResult:
    params: GEParams
    residual: float
    iterations: int
    converged: bool
    ill_conditioned: bool = False
    condition: float = math.nan
    max_abs_residual: float = math.nan

    def __post_init__(self):
        if not self.residual >= 0:
            raise ValueError("residual must be non-negative")


def _stacked_data(curve: LossCurve, weights):
    d = curve.packet_duration
    p1 = curve.p1_hat
    p2 = curve.p2_hat
    obs = np.empty(2 * d.size)
    obs[0::2] = p1
    obs[1::2] = p2
    if weights is None:
        w = np.ones_like(obs)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != obs.shape or np.any(w < 0):
            raise ValueError(f"weights must be {obs.shape[0]} non-negative values (one per stacked equation)")
    keep = np.isfinite(obs)
    return d, obs, w * keep, np.where(keep, obs, 0.0)


def inverse_variance_weights(curve: LossCurve) -> np.ndarray:
    """Stacked weights ``1 / width**2`` from the confidence intervals, normalised to mean 1."""
    widths = []
    for p in curve.points:
        widths.append(p.ci1[1] - p.ci1[0])
        widths.append(p.ci2[1] - p.ci2[0])
    w = np.asarray(widths, dtype=float)
    w = np.where(np.isfinite(w) & (w > 0), 1.0 / np.maximum(w, 1e-12) ** 2, 0.0)
    return w / w[w > 0].mean()


def fit_ml(
    curve: LossCurve,
    init: GEParams | None = None,
    bounds: Mapping[str, tuple[float, float]] | None = None,
    fixed: Mapping[str, float] | None = None,
    weights: Sequence[float] | str | None = None,
    max_iter: int = 10_000,
    xatol: float = 1e-8,
) -> ParamFitResult:
    """Least-squares fit of the stacked first/second packet losses.

    ``init`` defaults to ``lambda_B=20``, ``p_G=0``, ``p_B=0.5``, ``alpha=0``
    with ``lambda_G`` set to one over the median packet duration.
    Parameters named in ``fixed`` are held at the given value. ``weights``
    gives one weight per stacked equation, or ``"ci"`` for inverse squared
    confidence-interval widths. The search
    runs on rates scaled by the median packet duration and restarts from its
    own optimum until that stops improving.
    """
    if len(curve) < 4:
        raise FitError(f"need at least 4 loss points, got {len(curve)}")
    if isinstance(weights, str):
        if weights != "ci":
            raise ValueError(f"unknown weighting {weights!r}")
        weights = inverse_variance_weights(curve)
    d, _, w, obs = _stacked_data(curve, weights)
    scale = float(np.median(d))
    if init is None:
        init = GEParams(lambda_G=1.0 / scale, **PAPER_INIT)
    fixed = dict(fixed or {})
    unknown = set(fixed) - set(_ORDER)
    if unknown:
        raise ValueError(f"unknown parameter(s) {sorted(unknown)}")
    box = {
        "lambda_B": (1e-6 / scale, 1e3 / scale),
        "lambda_G": (1e-6 / scale, 1e3 / scale),
        "p_G": (0.0, 1.0),
        "p_B": (0.0, 1.0),
        "alpha": (0.0, 1.0),
    }
    box.update(bounds or {})
    free = [n for n in _ORDER if n not in fixed]
    unit = np.array([scale if n.startswith("lambda") else 1.0 for n in free])
    lo = np.array([box[n][0] for n in free]) * unit
    hi = np.array([box[n][1] for n in free]) * unit
    base = init.as_array()
    for n, v in fixed.items():
        base[_ORDER.index(n)] = v
    idx = [_ORDER.index(n) for n in free]

    def unpack(z):
        theta = base.copy()
        theta[idx] = np.clip(z, lo, hi) / unit
        return theta

    def predict(theta):
        lam_b, lam_g, p_g, p_b, alpha = theta
        p_i = -np.expm1(-lam_b * d)
        p_cs = alpha * lam_g / (lam_g + lam_b)
        r = lam_b / (lam_b + lam_g)
        g = np.empty(2 * d.size)
        g[0::2] = (1 - p_i) * (1 - p_cs) * p_g + (p_i * (1 - p_cs) + p_cs) * p_b
        g[1::2] = (1 - p_i) * r * p_g + (1 - (1 - p_i) * r) * p_b
        return g

    def objective(z):
        theta = unpack(z)
        err = float(np.sum(w * (obs - predict(theta)) ** 2))
        if theta[2] > theta[3]:
            err += 1e3 * (theta[2] - theta[3]) ** 2 + 1e-6
        return err

    z = np.clip(base[idx] * unit, lo, hi)
    iterations = 0
    converged = False
    best = math.inf
    for _ in range(20):
        simplex = [z]
        for k, n in enumerate(free):
            step = np.zeros_like(z)
            if n.startswith("lambda"):
                step[k] = 0.5 * z[k] if z[k] > 0 else 0.1
            else:
                step[k] = 0.1 if z[k] + 0.1 <= hi[k] else -0.1
            simplex.append(np.clip(z + step, lo, hi))
        res = optimize.minimize(
            objective,
            z,
            method="Nelder-Mead",
            bounds=list(zip(lo, hi)),
            options={
                "xatol": xatol,
                "fatol": 1e-15,
                "maxiter": max(1, max_iter - iterations),
                "maxfev": 4 * max_iter,
                "initial_simplex": np.array(simplex),
            },
        )
        iterations += int(res.nit)
        improved = res.fun < best - 1e-14 * max(1.0, best)
        if res.fun <= best:
            z, best = res.x, float(res.fun)
        if res.success and not improved:
            converged = True
            break
        if iterations >= max_iter:
            break
    theta = unpack(z)
    if theta[2] > theta[3]:
        theta[2] = theta[3]
    params = GEParams.from_array(theta)
    resid = obs - predict(theta)
    sse = float(np.sum(w * resid**2))
    cond = _hessian_condition(objective, z, lo, hi)
    ill = not np.isfinite(cond) or cond > 1e10
    if ill:
        warnings.warn(
            "fit is poorly determined; consider pinning alpha or p_G with fixed=...", stacklevel=2
        )
    return ParamFitResult(
        params,
        sse,
        iterations,
        converged,
        ill,
        cond,
        float(np.max(np.abs(resid[w > 0]))),
    )


def _hessian_condition(f: Callable, z: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Condition number of a central-difference Hessian at ``z``."""
    k = z.size
    h = 1e-4 * np.maximum(np.abs(z), 1e-2)
    # keep the stencil inside the box
    zc = np.clip(z, lo + h, hi - h)
    H = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            ei = np.zeros(k)
            ej = np.zeros(k)
            ei[i] = h[i]
            ej[j] = h[j]
            v = (f(zc + ei + ej) - f(zc + ei - ej) - f(zc - ei + ej) + f(zc - ei - ej)) / (4 * h[i] * h[j])
            H[i, j] = H[j, i] = v
    ev = np.abs(np.linalg.eigvalsh(H))
    if ev.max() == 0:
        return math.inf
    return float(ev.max() / ev.min()) if ev.min() > 0 else math.inf


def write_fit_report(result: ParamFitResult, curve: LossCurve, directory: str | Path) -> tuple[Path, Path]:
    """Write ``fit_report.txt`` (key=value) and ``fit_curve.csv``."""
    directory = Path(directory)
    report = directory / "fit_report.txt"
    table = directory / "fit_curve.csv"
    p = result.params
    lines = [f"{f.name}={getattr(p, f.name)!r}" for f in fields(p)]
    lines += [
        f"p_cs={p.p_cs!r}",
        f"residual={result.residual!r}",
        f"max_abs_residual={result.max_abs_residual!r}",
        f"iterations={result.iterations}",
        f"converged={str(result.converged).lower()}",
        f"ill_conditioned={str(result.ill_conditioned).lower()}",
    ]
    report.write_text("\n".join(lines) + "\n")
    d = curve.packet_duration
    g1 = loss_first(d, p)
    g2 = loss_second(d, p)
    with open(table, "w", newline="") as fh:
        fh.write("t_d,p1_hat,p1_model,p2_hat,p2_model\n")
        for row in zip(curve.t_d.tolist(), curve.p1_hat.tolist(), np.atleast_1d(g1).tolist(),
                       curve.p2_hat.tolist(), np.atleast_1d(g2).tolist()):
            fh.write(",".join(repr(v) for v in row) + "\n")
    return report, table


def read_fit_report(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


# -- parametric vs non-parametric convergence ---------------------------------------


@dataclass(frozen=True)
class ConvergenceResult:
    sample_sizes: tuple[int, ...]
    parametric: np.ndarray
    nonparametric: np.ndarray
    parametric_se: np.ndarray
    nonparametric_se: np.ndarray
    replicates: int

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("n,parametric,parametric_se,nonparametric,nonparametric_se\n")
            for row in zip(self.sample_sizes, self.parametric.tolist(), self.parametric_se.tolist(),
                           self.nonparametric.tolist(), self.nonparametric_se.tolist()):
                fh.write(",".join(repr(v) for v in row) + "\n")


def _recover(curve: LossCurve, method: str) -> CcdfEstimate:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if method == "direct":
            return recover_ccdf_direct(curve)
        if method == "bias-corrected":
            return recover_ccdf_bias_corrected(curve)
    raise ValueError(f"unknown recovery method {method!r}")


def _estimates(curve: LossCurve, method: str, fit_options: Mapping) -> tuple[CcdfEstimate, CcdfEstimate]:
    nonpar = _recover(curve, method)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_ml(curve, **fit_options)
    par = _recover(model_loss_curve(curve, fit.params), method)
    return par, nonpar


_CONTEXT: dict = {}


def _init_context(ctx: dict) -> None:
    _CONTEXT.clear()
    _CONTEXT.update(ctx)


def _subsample(table: RecordTable, groups, n: int, per_cell: bool, rng) -> RecordTable | None:
    if per_cell:
        pick = np.concatenate([rng.choice(g, size=n, replace=False) for g in groups])
    else:
        pick = rng.choice(len(table), size=n, replace=False)
    sub = table[np.sort(pick)]
    if np.unique(sub.t_d).size < len(groups):
        return None
    return sub


def _replicate(job: tuple[int, int]) -> tuple[float, float]:
    n, rep = job
    ctx = _CONTEXT
    rng = derive_rng(ctx["seed"], f"convergence/{n}/{rep}")
    for _ in range(100):
        sub = _subsample(ctx["table"], ctx["groups"], n, ctx["per_cell"], rng)
        if sub is not None:
            break
    else:
        raise RuntimeError(f"could not draw a subsample of {n} records covering every T_D cell")
    curve = estimate_loss_curve(sub)
    par, nonpar = _estimates(curve, ctx["method"], ctx["fit_options"])
    return sup_distance(par, ctx["ref_par"]), sup_distance(nonpar, ctx["ref_nonpar"])


def convergence_study(
    records: RecordTable,
    sample_sizes: Sequence[int],
    replicates: int = 100,
    seed: int = 0,
    method: str = "direct",
    fit_options: Mapping | None = None,
    workers: int = 1,
    per_cell: bool = False,
) -> ConvergenceResult:
    """Mean sup-norm distance of subsample estimates of ``F`` from full-trace ones.

    Each subsample holds ``N`` pairs drawn without replacement, either from
    the whole trace or, with ``per_cell``, from every T_D value separately.
    Both the non-parametric recovery and the parametric route (fit, then
    recover from the model's curve) are compared to the same estimator run
    on all records. A whole-trace subsample that misses a T_D value is
    redrawn.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    fit_options = dict(fit_options or {})
    sizes = tuple(int(n) for n in sample_sizes)
    cells = np.unique(records.t_d)
    groups = [np.nonzero(records.t_d == td)[0] for td in cells]
    if per_cell:
        limit, least = min(g.size for g in groups), 1
    else:
        limit, least = len(records), cells.size
    if any(n > limit or n < least for n in sizes):
        raise ValueError(f"sample sizes must lie in [{least}, {limit}]")
    ref_par, ref_nonpar = _estimates(estimate_loss_curve(records), method, fit_options)
    ctx = dict(
        table=records, groups=groups, seed=seed, method=method, fit_options=fit_options,
        ref_par=ref_par, ref_nonpar=ref_nonpar, per_cell=per_cell,
    )
    jobs = [(n, rep) for n in sizes for rep in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_context, initargs=(ctx,)) as pool:
            out = list(pool.map(_replicate, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        _init_context(ctx)
        out = [_replicate(j) for j in jobs]
    dist = np.array(out).reshape(len(sizes), replicates, 2)
    mean = dist.mean(axis=1)
    se = dist.std(axis=1, ddof=1) / math.sqrt(replicates) if replicates > 1 else np.zeros_like(mean)
    return ConvergenceResult(sizes, mean[:, 0], mean[:, 1], se[:, 0], se[:, 1], replicates)
