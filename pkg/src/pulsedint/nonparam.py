"""Non-parametric recovery of the inter-pulse gap distribution from loss curves.

A packet of duration ``T`` sampled at a random time is clean with probability
``q(T) = E[(Delta - T)^+] / E[S + Delta] = (1/E[S + Delta]) * int_T^inf Fc(x) dx``
where ``Fc`` is the gap ccdf. With carrier sense the sender waits out pulses,
which adds ``E[S] * Fc(T) / E[S + Delta]`` to the clean probability.

The gap distribution is written as point masses on a knot grid (an indicator
basis for ``F``), which makes ``1 - p(T)`` linear in the masses, and the masses
are found by non-negative least squares. A free constant absorbs both the
integral of the tail beyond the last knot and any loss floor, and the mass
scale absorbs collision or erasure factors, so only the shape of the curve is
used.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from pulsedint._nnls import RankDeficientError, nnls
from pulsedint.interference import TraceFormatError
from pulsedint.linksim import Outcome, RecordTable, TransmissionRecord

__all__ = [
    "BasisSpec",
    "CcdfEstimate",
    "FitError",
    "LossCurve",
    "LossPoint",
    "RankDeficientError",
    "clopper_pearson",
    "combine_pair_losses",
    "estimate_loss_curve",
    "fit_periodic_slope",
    "fit_poisson_rate",
    "interference_only_loss",
    "recover_ccdf_bias_corrected",
    "recover_ccdf_direct",
]

DEFAULT_GRID = tuple(round(1e-3 * k, 6) for k in range(1, 21))
RESIDUAL_WARN_RMS = 0.05


class FitError(ValueError):
    pass


def clopper_pearson(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Exact binomial interval from beta quantiles."""
    if not (0 <= k <= n and n >= 1):
        raise ValueError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")
    if not 0 < confidence < 1:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    alpha = 1.0 - confidence
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


def combine_pair_losses(p1, p2):
    """Loss of the whole pair span: ``1 - (1 - p1)(1 - p2)``."""
    out = 1.0 - (1.0 - np.asarray(p1, dtype=float)) * (1.0 - np.asarray(p2, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


_NAN_CI = (math.nan, math.nan)


@dataclass(frozen=True)
class LossPoint:
    t_d: float
    n1: int
    k1: int
    n2: int
    k2: int
    p1_hat: float
    p2_hat: float
    p_hat: float
    ci1: tuple[float, float]
    ci2: tuple[float, float]
    paired: bool = True

    @property
    def packet_duration(self) -> float:
        return self.t_d / 2 if self.paired else self.t_d

    @property
    def censored(self) -> bool:
        """Paired point whose second packets were never sent."""
        return self.paired and self.n2 == 0


def _point(t_d: float, n1: int, k1: int, n2: int, k2: int, paired: bool, confidence: float):
    p1 = k1 / n1
    ci1 = clopper_pearson(k1, n1, confidence)
    if paired and n2 > 0:
        p2 = k2 / n2
        ci2 = clopper_pearson(k2, n2, confidence)
        p = combine_pair_losses(p1, p2)
    else:
        p2, ci2 = math.nan, _NAN_CI
        p = 1.0 if paired else p1
    return LossPoint(float(t_d), n1, k1, n2, k2, p1, p2, p, ci1, ci2, paired)


@dataclass(frozen=True)
class LossCurve:
    points: tuple[LossPoint, ...]
    confidence: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(sorted(self.points, key=lambda p: p.t_d)))

    def __len__(self) -> int:
        return len(self.points)

    def _col(self, name):
        return np.array([getattr(p, name) for p in self.points], dtype=float)

    @property
    def t_d(self) -> np.ndarray:
        return self._col("t_d")

    @property
    def p1_hat(self) -> np.ndarray:
        return self._col("p1_hat")

    @property
    def p2_hat(self) -> np.ndarray:
        return self._col("p2_hat")

    @property
    def p_hat(self) -> np.ndarray:
        return self._col("p_hat")

    @property
    def n1(self) -> np.ndarray:
        return self._col("n1")

    @property
    def n2(self) -> np.ndarray:
        return self._col("n2")

    @property
    def packet_duration(self) -> np.ndarray:
        return self._col("packet_duration")

    @classmethod
    def from_probabilities(
        cls,
        t_d: Sequence[float],
        p1: Sequence[float],
        p2: Sequence[float] | None = None,
        n: int = 10**9,
        confidence: float = 0.95,
    ) -> LossCurve:
        """Curve from known probabilities, using ``n`` nominal trials per point.

        Counts are rounded, so rates carry an error of at most ``1/(2n)``.
        """
        pts = []
        for i, td in enumerate(t_d):
            k1 = int(round(float(p1[i]) * n))
            if p2 is None:
                pts.append(_point(td, n, k1, 0, 0, False, confidence))
            else:
                n2 = n - k1
                k2 = int(round(float(p2[i]) * n2))
                pts.append(_point(td, n, k1, n2, k2, True, confidence))
        return cls(tuple(pts), confidence)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("t_d_s,n1,k1,n2,k2,p1,p2,p,ci1_lo,ci1_hi,ci2_lo,ci2_hi,paired\n")
            for p in self.points:
                fields = [p.t_d, p.n1, p.k1, p.n2, p.k2, p.p1_hat, p.p2_hat, p.p_hat, *p.ci1, *p.ci2]
                fh.write(",".join(repr(v) for v in fields) + f",{int(p.paired)}\n")

    @classmethod
    def from_csv(cls, path: str | Path, confidence: float = 0.95) -> LossCurve:
        """Read a loss-curve CSV written by :meth:`to_csv`."""
        pts = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise TraceFormatError("empty loss-curve file", 1)
            if len(header) != 13 or header[0].strip() != "t_d_s":
                raise TraceFormatError("unexpected loss-curve header", 1)
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 13:
                    raise TraceFormatError(f"expected 13 columns, got {len(row)}", line_no)
                try:
                    td = float(row[0])
                    n1, k1, n2, k2 = (int(v) for v in row[1:5])
                    p1, p2, p, c1l, c1h, c2l, c2h = (float(v) for v in row[5:12])
                    paired = {"0": False, "1": True}[row[12].strip()]
                except (ValueError, KeyError) as exc:
                    raise TraceFormatError(f"bad value: {exc}", line_no) from None
                if not (0 <= k1 <= n1 and 0 <= k2 <= n2):
                    raise TraceFormatError("counts out of range", line_no)
                pts.append(LossPoint(td, n1, k1, n2, k2, p1, p2, p, (c1l, c1h), (c2l, c2h), paired))
        return cls(tuple(pts), confidence)


def estimate_loss_curve(
    records: RecordTable | Sequence[TransmissionRecord] | Mapping[float, object],
    confidence: float = 0.95,
) -> LossCurve:
    """Per-``t_d`` loss counts, rates and Clopper-Pearson intervals.

    ``records`` is a record table (grouped here by ``t_d``), a sequence of
    records, or a mapping from ``t_d`` to either. Censored second packets are
    not counted as attempts. Empty groups are dropped with a warning.
    """
    if isinstance(records, Mapping):
        groups = {float(k): _as_table(v) for k, v in records.items()}
    else:
        table = _as_table(records)
        groups = {float(td): table[table.t_d == td] for td in np.unique(table.t_d)}
    points = []
    empty = []
    for td, g in sorted(groups.items()):
        n1 = len(g)
        if n1 == 0:
            empty.append(td)
            continue
        k1 = int(np.count_nonzero(g.pkt1 == Outcome.LOST))
        sent2 = (g.pkt2 == Outcome.OK) | (g.pkt2 == Outcome.LOST)
        n2 = int(np.count_nonzero(sent2))
        k2 = int(np.count_nonzero(g.pkt2 == Outcome.LOST))
        paired = bool(np.any(g.pkt2 != Outcome.NONE))
        points.append(_point(td, n1, k1, n2, k2, paired, confidence))
    if empty:
        warnings.warn(f"dropping loss-curve points with no transmissions at t_d={empty}", stacklevel=2)
    return LossCurve(tuple(points), confidence)


def _as_table(records) -> RecordTable:
    if isinstance(records, RecordTable):
        return records
    return RecordTable.from_records(records)


def interference_only_loss(curve: LossCurve, collision_prob: float) -> np.ndarray:
    """Combined pair loss with a known collision probability divided out of pkt1.

    pkt2 is collision-free already; pkt1 survives collisions with probability
    ``1 - collision_prob`` independently of the channel.
    """
    if not 0 <= collision_prob < 1:
        raise ValueError("collision_prob must be in [0, 1)")
    p1_int = 1.0 - (1.0 - curve.p1_hat) / (1.0 - collision_prob)
    p2 = np.where(np.isnan(curve.p2_hat), 0.0, curve.p2_hat)
    return combine_pair_losses(np.clip(p1_int, 0.0, 1.0), p2)


# -- slope estimators ----------------------------------------------------------


def fit_periodic_slope(curve: LossCurve) -> float:
    """Period of an impulse train from a line through the origin on unsaturated points."""
    t, p, n = curve.t_d, curve.p_hat, curve.n1
    sel = p < 0.9
    if np.count_nonzero(sel) < 2:
        raise FitError("period below smallest T_D: fewer than two unsaturated points")
    t, p, n = t[sel], p[sel], n[sel]
    var = np.maximum(p * (1 - p), 1.0 / n) / n
    w = 1.0 / var
    slope = np.sum(w * t * p) / np.sum(w * t * t)
    if slope <= 0:
        raise FitError("loss does not grow with T_D; no period can be read off")
    return float(1.0 / slope)


def fit_poisson_rate(curve: LossCurve) -> float:
    """Rate of Poisson interference from the slope of ``-log(1 - p)`` against ``T_D``.

    The intercept is free so that a loss floor does not bias the slope.
    """
    t, p, n = curve.t_d, curve.p_hat, curve.n1
    full = p >= 1.0
    if full.any():
        warnings.warn(f"excluding saturated points at t_d={t[full].tolist()}", stacklevel=2)
    t, p, n = t[~full], p[~full], n[~full]
    if t.size < 2:
        raise FitError("need at least two unsaturated points")
    y = -np.log1p(-p)
    var = np.maximum(p, 1.0 / n) / (np.maximum(1 - p, 1.0 / n) * n)
    w = 1.0 / var
    tm = np.sum(w * t) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    slope = np.sum(w * (t - tm) * (y - ym)) / np.sum(w * (t - tm) ** 2)
    return float(max(slope, 0.0))


# -- distribution recovery -------------------------------------------------------


@dataclass(frozen=True)
class BasisSpec:
    """Indicator basis ``g_i(x) = 1{x >= knot_i}`` for the gap CDF.

    The last knot also carries any mass lying beyond it.
    """

    knots: tuple[float, ...]
    weights: tuple[float, ...] | None = None
    kind: str = "rectangular"

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        if self.kind != "rectangular":
            raise ValueError(f"unsupported basis kind {self.kind!r}")
        if len(knots) < 2 or any(b <= a for a, b in zip(knots, knots[1:])) or knots[0] < 0:
            raise ValueError("knots must be >= 0, strictly increasing, at least two")
        object.__setattr__(self, "knots", knots)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(knots),) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
                raise ValueError("weights must be non-negative, one per knot, summing to 1")
            object.__setattr__(self, "weights", tuple(w.tolist()))

    @classmethod
    def on_grid(cls, grid: Sequence[float]) -> BasisSpec:
        return cls(tuple(sorted(float(g) for g in grid)))


@dataclass(frozen=True)
class CcdfEstimate:
    """Estimated gap ccdf ``1 - F(x)`` on a grid, linear in between.

    Beyond the last grid point the value is held constant; it equals the
    mass that lies beyond the measured range.
    """

    grid: np.ndarray
    ccdf: np.ndarray
    mean_pulse_duration: float
    residual_norm: float
    mean_cycle: float = math.nan
    basis: BasisSpec | None = None
    degenerate: bool = False
    method: str = "direct"
    residual_profile: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        c = np.asarray(self.ccdf, dtype=float)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "ccdf", c)
        if g.shape != c.shape or g.size == 0:
            raise ValueError("grid and ccdf must be non-empty and aligned")
        if np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(c < -1e-12) or np.any(c > 1 + 1e-12) or np.any(np.diff(c) > 1e-12):
            raise ValueError("ccdf must be non-increasing within [0, 1]")

    @property
    def mean_gap(self) -> float:
        return self.mean_cycle - self.mean_pulse_duration

    def evaluate(self, x) -> np.ndarray | float:
        out = np.interp(np.asarray(x, dtype=float), self.grid, self.ccdf)
        return float(out) if np.ndim(out) == 0 else out

    def cdf(self, x) -> np.ndarray | float:
        return 1.0 - self.evaluate(x)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("x_s,ccdf\n")
            for x, c in zip(self.grid.tolist(), self.ccdf.tolist()):
                fh.write(f"{x!r},{c!r}\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> CcdfEstimate:
        xs, cs = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["x_s", "ccdf"]:
                raise TraceFormatError("expected header x_s,ccdf", 1)
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    x, c = (float(v) for v in row)
                except ValueError:
                    raise TraceFormatError(f"cannot parse {row!r}", line_no) from None
                xs.append(x)
                cs.append(c)
        if not xs:
            raise TraceFormatError("no rows", 2)
        return cls(np.array(xs), np.array(cs), math.nan, math.nan)


def sup_distance(a: CcdfEstimate, b: CcdfEstimate) -> float:
    """``max_x |F_a(x) - F_b(x)|`` over the union of both grids."""
    x = np.union1d(a.grid, b.grid)
    return float(np.max(np.abs(a.evaluate(x) - b.evaluate(x))))


def _fit_data(curve: LossCurve) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pts = [p for p in curve.points if not p.censored]
    if len(pts) < 3:
        raise FitError(f"need at least 3 usable loss points, got {len(pts)}")
    t = np.array([p.t_d for p in pts])
    y = 1.0 - np.array([p.p_hat for p in pts])
    n = np.array([p.n1 for p in pts], dtype=float)
    if not np.all(np.isfinite(y)):
        raise FitError("loss rates must be finite")
    var = np.maximum(y * (1 - y), 0.0) / n
    return t, y, var


def _design(t: np.ndarray, knots: np.ndarray, e_s: float) -> np.ndarray:
    """Columns: one per knot mass, then the constant."""
    diff = knots[None, :] - t[:, None]
    beyond = diff >= 0  # a packet exactly as long as the gap still fits
    beyond[:, -1] = True  # last knot also stands for the tail beyond it
    cols = e_s * beyond + np.clip(diff, 0.0, None)
    return np.hstack([cols, np.ones((t.size, 1))])


def _warn_non_monotone(curve: LossCurve) -> None:
    p, n = curve.p_hat, curve.n1
    se = np.sqrt(np.maximum(p * (1 - p), 1.0 / n) / n)
    drop = p[:-1] - p[1:]
    bad = drop > 3 * (se[:-1] + se[1:])
    if np.any(bad):
        warnings.warn(
            f"loss curve decreases beyond noise after t_d={curve.t_d[:-1][bad].tolist()}",
            stacklevel=3,
        )


def _estimate_from_masses(
    masses: np.ndarray, knots: np.ndarray, e_s: float, rnorm: float, method: str, profile=None
) -> CcdfEstimate:
    mids = 0.5 * (knots[:-1] + knots[1:])
    total = masses.sum()
    if total <= 0:
        grid = np.concatenate(([0.0], mids))
        return CcdfEstimate(
            grid, np.ones_like(grid), 0.0, rnorm, math.inf,
            BasisSpec(tuple(knots)), degenerate=True, method=method, residual_profile=profile,
        )
    # Scaled ccdf level on each knot interval; the one below the first knot is an
    # interval average, so the level at zero (1 / mean cycle) is extrapolated linearly.
    levels = total - np.concatenate(([0.0], np.cumsum(masses[:-1])))
    if knots[0] > 0 and knots.size > 1:
        at_zero = total + (total - levels[1]) * knots[0] / knots[1]
        grid = np.concatenate(([0.0, 0.5 * knots[0]], mids))
        ccdf = np.concatenate(([1.0], levels / at_zero))
        w = masses / at_zero
        w[0] = 1.0 - levels[1] / at_zero
    else:
        at_zero = total
        grid = np.concatenate(([0.0], mids))
        ccdf = levels / at_zero
        w = masses / at_zero
    ccdf = np.minimum.accumulate(np.clip(ccdf, 0.0, 1.0))
    return CcdfEstimate(
        grid,
        ccdf,
        float(e_s),
        rnorm,
        float(1.0 / at_zero),
        BasisSpec(tuple(knots), tuple(w.tolist())),
        method=method,
        residual_profile=profile,
    )


def _check_basis(basis: BasisSpec | None, t: np.ndarray) -> np.ndarray:
    if basis is None:
        return np.asarray(t, dtype=float)
    knots = np.asarray(basis.knots)
    if knots[0] > t.min() or knots[-1] < t.max():
        raise ValueError(
            f"basis knots [{knots[0]}, {knots[-1]}] must span the grid [{t.min()}, {t.max()}]"
        )
    return knots


def _solve(t, y, knots, e_s):
    if t.min() > 0:
        # a zero-length packet is never lost; this row pins the mass below the first knot
        t, y = np.concatenate(([0.0], t)), np.concatenate(([1.0], y))
    A = _design(t, knots, e_s)
    x, rnorm, _ = nnls(A, y)
    return x, rnorm


def recover_ccdf_direct(curve: LossCurve, basis: BasisSpec | None = None) -> CcdfEstimate:
    """Gap ccdf from a loss curve measured without carrier sense.

    Equivalent to the bias-corrected fit with the mean pulse duration pinned
    to zero; ``mean_pulse_duration`` of the result is therefore 0.
    """
    t, y, _ = _fit_data(curve)
    _warn_non_monotone(curve)
    knots = _check_basis(basis, t)
    x, rnorm = _solve(t, y, knots, 0.0)
    _warn_residual(rnorm, t.size)
    return _estimate_from_masses(x[:-1], knots, 0.0, rnorm, "direct")


def recover_ccdf_bias_corrected(
    curve: LossCurve,
    basis: BasisSpec | None = None,
    max_pulse_duration: float | None = None,
    n_scan: int = 121,
) -> CcdfEstimate:
    """Gap ccdf and mean pulse duration from a loss curve measured with carrier sense.

    For a trial ``E[S]`` the masses follow from NNLS; ``E[S]`` is scanned on
    ``[0, max_pulse_duration]`` (default twice the longest ``T_D``). Durations
    above the true one can often be traded against spreading gap mass to
    shorter values at no cost in fit, so the estimate is the smallest ``E[S]``
    whose squared residual exceeds the best by no more than the expected
    sampling noise (the sum of per-point binomial variances), refined by
    bisection.
    """
    t, y, var = _fit_data(curve)
    knots = _check_basis(basis, t)
    e_max = 2.0 * float(t.max()) if max_pulse_duration is None else float(max_pulse_duration)
    scan = np.linspace(0.0, e_max, n_scan)
    sq = np.array([_solve(t, y, knots, e)[1] ** 2 for e in scan])
    allowance = float(np.sum(var)) + 1e-12 * max(1.0, float(np.sum(y * y)))
    target = sq.min() + allowance
    i = int(np.argmax(sq <= target))
    if i == 0:
        e_s = 0.0
    else:
        lo, hi = scan[i - 1], scan[i]
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if _solve(t, y, knots, mid)[1] ** 2 <= target:
                hi = mid
            else:
                lo = mid
        e_s = hi
    x, rnorm = _solve(t, y, knots, e_s)
    _warn_residual(rnorm, t.size)
    return _estimate_from_masses(
        x[:-1], knots, e_s, rnorm, "bias-corrected", np.column_stack([scan, np.sqrt(sq)])
    )


def _warn_residual(rnorm: float, n: int) -> None:
    rms = rnorm / math.sqrt(n)
    if rms > RESIDUAL_WARN_RMS:
        warnings.warn(f"ccdf fit residual is large (rms {rms:.3g}); check model assumptions", stacklevel=3)
