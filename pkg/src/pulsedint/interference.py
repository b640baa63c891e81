"""Pulsed-interference processes: generation, window queries and closed-form loss curves.

A pulse train is the realised on/off geometry of an interferer. Pulse ``k``
starts at ``T_k``, lasts ``S_k`` and is followed by an idle gap ``Delta_k``, so
``T_{k+1} = T_k + S_k + Delta_k``. Zero-duration pulses model impulse trains.
Times are float seconds throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence, Union

import numpy as np

from pulsedint._rng import derive_rng, exponential

# seconds; contact shorter than this between a packet and a pulse is rounding, not overlap
TOUCH_TOLERANCE = 1e-12

class DomainError(ValueError):
    """A query falls outside the time span a pulse train covers."""


class GenerationError(RuntimeError):
    """A sampler produced a value that cannot be part of a pulse train."""


class NoClosedFormError(ValueError):
    """The interference model has no closed-form loss curve."""


class TraceFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# -- samplers ----------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    value: float

    @property
    def mean(self) -> float:
        return self.value

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, float(self.value))


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"exponential rate must be > 0, got {self.rate}")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return exponential(rng, self.rate, size)


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not self.high >= self.low:
            raise ValueError(f"uniform needs high >= low, got [{self.low}, {self.high}]")

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.low + (self.high - self.low) * rng.random(size)


@dataclass(frozen=True)
class Empirical:
    """Resample (with replacement) from observed values, e.g. gaps read off a trace."""

    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("empirical sampler needs at least one value")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.asarray(self.values)[rng.integers(0, len(self.values), size)]


Sampler = Union[Constant, Exponential, Uniform, Empirical]


# -- models ------------------------------------------------------------------


@dataclass(frozen=True)
class Periodic:
    period: float
    pulse_duration: float = 0.0

    def __post_init__(self):
        if not (self.period > self.pulse_duration >= 0):
            raise ValueError(
                f"periodic model needs period > pulse_duration >= 0, "
                f"got period={self.period}, pulse_duration={self.pulse_duration}"
            )

    @property
    def mean_gap(self) -> float:
        return self.period - self.pulse_duration

    @property
    def mean_duration(self) -> float:
        return self.pulse_duration


@dataclass(frozen=True)
class PoissonImpulse:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be > 0, got {self.rate}")

    def to_renewal(self) -> RenewalGeneral:
        return RenewalGeneral(Exponential(self.rate), Constant(0.0))

    @property
    def mean_gap(self) -> float:
        return 1.0 / self.rate

    @property
    def mean_duration(self) -> float:
        return 0.0


@dataclass(frozen=True)
class RenewalGeneral:
    gap_sampler: Sampler
    duration_sampler: Sampler

    def __post_init__(self):
        for name in ("gap_sampler", "duration_sampler"):
            m = getattr(self, name).mean
            if not math.isfinite(m) or m < 0:
                raise ValueError(f"{name} must have a finite non-negative mean, got {m}")
        if not self.gap_sampler.mean > 0:
            raise ValueError("gap sampler mean must be > 0")

    def to_renewal(self) -> RenewalGeneral:
        return self

    @property
    def mean_gap(self) -> float:
        return self.gap_sampler.mean

    @property
    def mean_duration(self) -> float:
        return self.duration_sampler.mean


@dataclass(frozen=True)
class TwoStateExp:
    """Exponential good/bad dwell times.

    ``rate_enter_bad`` is the rate at which pulses start (the good-state dwell
    has mean ``1/rate_enter_bad``); ``rate_leave_bad`` ends them (pulse
    duration mean ``1/rate_leave_bad``).
    """

    rate_enter_bad: float
    rate_leave_bad: float

    def __post_init__(self):
        if not (self.rate_enter_bad > 0 and self.rate_leave_bad > 0):
            raise ValueError("two-state rates must be > 0")

    def to_renewal(self) -> RenewalGeneral:
        return RenewalGeneral(Exponential(self.rate_enter_bad), Exponential(self.rate_leave_bad))

    @property
    def mean_gap(self) -> float:
        return 1.0 / self.rate_enter_bad

    @property
    def mean_duration(self) -> float:
        return 1.0 / self.rate_leave_bad

    @property
    def bad_fraction(self) -> float:
        return self.rate_enter_bad / (self.rate_enter_bad + self.rate_leave_bad)


InterferenceModel = Union[Periodic, PoissonImpulse, RenewalGeneral, TwoStateExp]


# -- pulse trains ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PulseTrain:
    """Immutable, validated sequence of non-overlapping pulses on ``[0, horizon]``."""

    starts: np.ndarray
    durations: np.ndarray
    horizon: float
    _ends: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        starts = np.array(self.starts, dtype=float).reshape(-1)
        durations = np.array(self.durations, dtype=float).reshape(-1)
        horizon = float(self.horizon)
        if starts.shape != durations.shape:
            raise ValueError("starts and durations must have the same length")
        if not (math.isfinite(horizon) and horizon >= 0):
            raise ValueError(f"horizon must be finite and >= 0, got {horizon}")
        if not (np.all(np.isfinite(starts)) and np.all(np.isfinite(durations))):
            raise ValueError("pulse times must be finite")
        if np.any(durations < 0):
            raise ValueError(f"negative duration at pulse {int(np.argmax(durations < 0))}")
        ends = starts + durations
        if starts.size:
            if starts[0] < 0 or ends[-1] > horizon:
                raise ValueError("pulses must lie within [0, horizon]")
            bad = np.nonzero(starts[1:] <= ends[:-1])[0]
            if bad.size:
                raise ValueError(
                    f"pulse {int(bad[0]) + 1} starts at {starts[bad[0] + 1]!r}, "
                    f"not after the end of pulse {int(bad[0])} ({ends[bad[0]]!r})"
                )
        for arr in (starts, durations, ends):
            arr.flags.writeable = False
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "durations", durations)
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "_ends", ends)

    @classmethod
    def from_pulses(cls, pulses: Sequence[tuple[float, float]], horizon: float) -> PulseTrain:
        arr = np.asarray(pulses, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1], horizon)

    @property
    def ends(self) -> np.ndarray:
        return self._ends

    @property
    def gaps(self) -> np.ndarray:
        """Idle intervals between consecutive pulses."""
        return self.starts[1:] - self._ends[:-1]

    @property
    def pulses(self) -> list[tuple[float, float]]:
        return list(zip(self.starts.tolist(), self.durations.tolist()))

    def __len__(self) -> int:
        return int(self.starts.size)

    def __iter__(self) -> Iterator[tuple[float, float]]:
        return iter(self.pulses)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PulseTrain):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and np.array_equal(self.starts, other.starts)
            and np.array_equal(self.durations, other.durations)
        )

    __hash__ = None  # type: ignore[assignment]

    def renewal_count(self, t: float) -> int:
        """Number of pulse starts at or before ``t``."""
        return int(np.searchsorted(self.starts, t, side="right"))

    def overlaps(self, a, b) -> np.ndarray:
        """Whether each interval ``[a, b]`` meets a pulse.

        Positive-duration pulses must share more than ``TOUCH_TOLERANCE`` with
        the interval, so a packet starting where a pulse ends, or ending where
        one starts, is clean despite rounding in the endpoints. Impulses count
        when they fall in the closed interval.
        """
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        n = self.starts.size
        if n == 0:
            return np.zeros(np.broadcast(a, b).shape, dtype=bool)
        # last pulse starting before b, ignoring one that only touches it
        jp = np.searchsorted(self.starts, b - TOUCH_TOLERANCE, side="left") - 1
        jpc = np.clip(jp, 0, n - 1)
        hit = (jp >= 0) & (self.durations[jpc] > 0) & (self._ends[jpc] > a + TOUCH_TOLERANCE)
        # impulses: last one at or before b, or one sitting exactly on b
        j = np.searchsorted(self.starts, b, side="left") - 1
        jc = np.clip(j, 0, n - 1)
        hit |= (j >= 0) & (self.durations[jc] == 0) & (self.starts[jc] >= a)
        k = np.clip(j + 1, 0, n - 1)
        hit |= (j + 1 < n) & (self.starts[k] == b) & (self.durations[k] == 0)
        return hit

    def busy_until(self, t):
        """End of the positive-duration pulse covering ``t``, else ``t`` itself."""
        t = np.asarray(t, dtype=float)
        if self.starts.size == 0:
            return t.copy() if t.ndim else float(t)
        j = np.searchsorted(self.starts, t, side="right") - 1
        jc = np.clip(j, 0, self.starts.size - 1)
        inside = (j >= 0) & (self._ends[jc] > t) & (self.durations[jc] > 0)
        out = np.where(inside, self._ends[jc], t)
        return out if out.ndim else float(out)


def _renewal_train(
    model: RenewalGeneral, horizon: float, rng: np.random.Generator
) -> PulseTrain:
    starts: list[np.ndarray] = []
    durs: list[np.ndarray] = []
    mean_cycle = model.mean_gap + model.mean_duration
    t = 0.0
    drawn = 0
    while t < horizon:
        n = int(1.1 * (horizon - t) / mean_cycle) + 32
        d = np.asarray(model.duration_sampler.sample(rng, n), dtype=float)
        g = np.asarray(model.gap_sampler.sample(rng, n), dtype=float)
        for name, arr, ok in (
            ("duration", d, np.isfinite(d) & (d >= 0)),
            ("gap", g, np.isfinite(g) & (g > 0)),
        ):
            if not ok.all():
                i = int(np.argmin(ok))
                raise GenerationError(
                    f"{name} draw {drawn + i} is {arr[i]!r}; "
                    f"{name}s must be finite and {'>= 0' if name == 'duration' else '> 0'}"
                )
        cycle = d + g
        s = t + np.concatenate(([0.0], np.cumsum(cycle[:-1])))
        keep = s < horizon
        starts.append(s[keep])
        durs.append(d[keep])
        t = s[-1] + cycle[-1]
        drawn += n
    s = np.concatenate(starts)
    d = np.concatenate(durs)
    if s.size:
        d[-1] = min(d[-1], horizon - s[-1])
    return PulseTrain(s, d, horizon)


def generate_pulse_train(model: InterferenceModel, horizon: float, seed: int) -> PulseTrain:
    """Draw a pulse train from ``model`` on ``[0, horizon]``; the first pulse starts at 0."""
    if not horizon > 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    if isinstance(model, Periodic):
        starts = np.arange(0.0, horizon, model.period)
        durs = np.minimum(model.pulse_duration, horizon - starts)
        return PulseTrain(starts, durs, horizon)
    rng = derive_rng(seed, "interference")
    return _renewal_train(model.to_renewal(), horizon, rng)


def merge_trains(trains: Sequence[PulseTrain]) -> PulseTrain:
    """Superpose independent interferers; overlapping or touching pulses fuse."""
    if not trains:
        raise ValueError("need at least one train")
    horizon = min(t.horizon for t in trains)
    s = np.concatenate([t.starts for t in trains])
    e = np.concatenate([t.ends for t in trains])
    keep = s < horizon
    s, e = s[keep], np.minimum(e[keep], horizon)
    order = np.lexsort((e, s))
    s, e = s[order], e[order]
    if s.size == 0:
        return PulseTrain([], [], horizon)
    run_end = np.maximum.accumulate(e)
    new = np.concatenate(([True], s[1:] > run_end[:-1]))
    group = np.cumsum(new) - 1
    out_s = s[new]
    out_e = np.zeros(out_s.size)
    np.maximum.at(out_e, group, e)
    return PulseTrain(out_s, out_e - out_s, horizon)


def overlap_indicator(train: PulseTrain, t_end: float, t_d: float) -> bool:
    """True when the window ``[t_end - t_d, t_end]`` is free of interference."""
    if t_end - t_d < 0 or t_end > train.horizon or t_d < 0:
        raise DomainError(
            f"window [{t_end - t_d!r}, {t_end!r}] is outside [0, {train.horizon!r}]"
        )
    return not bool(train.overlaps(t_end - t_d, t_end))


def occupancy_fraction(train: PulseTrain) -> float:
    if train.horizon <= 0 or len(train) == 0:
        return 0.0
    return float(np.sum(train.durations) / train.horizon)


def window_clean_fraction(train: PulseTrain, t_d: float) -> float:
    """Exact time average of the clean-window indicator over end times in ``[t_d, horizon]``."""
    span = train.horizon - t_d
    if span <= 0:
        raise DomainError(f"t_d={t_d!r} leaves no room inside horizon {train.horizon!r}")
    lo = np.concatenate(([0.0], train.ends))
    hi = np.concatenate((train.starts, [train.horizon]))
    clean = np.clip(hi - lo - t_d, 0.0, None).sum()
    return float(clean / span)


# -- closed forms ------------------------------------------------------------


@dataclass(frozen=True)
class TheoreticalCurve:
    grid: np.ndarray
    values: np.ndarray


def theoretical_loss_curve(
    model: InterferenceModel, grid: Sequence[float], carrier_sense: bool = False
) -> TheoreticalCurve:
    """Loss probability of a packet of duration ``T_D`` sampled at a random time.

    Without carrier sense this is ``1 - E[(Delta - T_D)^+] / E[S + Delta]``.
    With carrier sense, packets that would start inside a pulse are pushed to
    its end, adding ``E[S] * P(Delta >= T_D)`` to the clean time.
    """
    t = np.asarray(grid, dtype=float)
    if np.any(t < 0):
        raise ValueError("grid values must be >= 0")
    if isinstance(model, Periodic):
        gap, dur = model.mean_gap, model.pulse_duration
        clean = np.clip(gap - t, 0, None) + (dur * (t <= gap) if carrier_sense else 0.0)
        values = 1.0 - clean / model.period
    elif isinstance(model, PoissonImpulse):
        values = -np.expm1(-model.rate * t)
    elif isinstance(model, TwoStateExp):
        lb, lg = model.rate_enter_bad, model.rate_leave_bad
        ccdf = np.exp(-lb * t)
        clean = ccdf / lb + (ccdf / lg if carrier_sense else 0.0)
        values = 1.0 - clean / (1.0 / lb + 1.0 / lg)
    else:
        raise NoClosedFormError(f"no closed-form loss curve for {type(model).__name__}")
    return TheoreticalCurve(t, np.clip(values, 0.0, 1.0))


# -- trace files -------------------------------------------------------------


def import_pulse_trace(path: str | Path, horizon: float | None = None) -> PulseTrain:
    """Read a ``start_s,duration_s`` CSV (header optional, rows ordered by start).

    The horizon defaults to the end of the last pulse.
    """
    rows: list[tuple[float, float]] = []
    prev_end = -math.inf
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise TraceFormatError(f"expected 2 columns, got {len(row)}", line_no)
            try:
                start, dur = float(row[0]), float(row[1])
            except ValueError:
                if line_no == 1 and not rows:
                    continue  # header
                raise TraceFormatError(f"cannot parse {row!r} as numbers", line_no) from None
            if not (math.isfinite(start) and math.isfinite(dur)) or start < 0 or dur < 0:
                raise TraceFormatError(f"invalid pulse {row!r}", line_no)
            if start <= prev_end:
                raise TraceFormatError(
                    f"row {line_no} (pulse {len(rows)}) starts at {start!r}, "
                    f"before the previous pulse ends at {prev_end!r}",
                    line_no,
                )
            rows.append((start, dur))
            prev_end = start + dur
    if horizon is None:
        horizon = rows[-1][0] + rows[-1][1] if rows else 0.0
    return PulseTrain.from_pulses(rows, horizon)


def export_pulse_trace(train: PulseTrain, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("start_s,duration_s\n")
        for s, d in train:
            fh.write(f"{s!r},{d!r}\n")
