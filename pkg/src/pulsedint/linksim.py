"""Packet-pair measurement transmitter over a pulsed-interference channel.

Pairs are scheduled with exponential pauses measured from the end of the
previous pair cycle. A cycle is ``pkt1 + SIFS + pkt2``; when pkt1 fails the
second slot is still waited out (a virtual transmission), so without carrier
sense the schedule never depends on the channel.
"""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

from pulsedint._rng import derive_rng, exponential
from pulsedint.interference import DomainError, PulseTrain, TraceFormatError

DEFAULT_SIFS = 10e-6


class Outcome(IntEnum):
    OK = 0
    LOST = 1
    CENSORED = 2
    NONE = 3  # single-packet mode: no second packet exists

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> Outcome:
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown outcome {text!r}") from None


@dataclass(frozen=True)
class DeterministicOverlap:
    """A packet is erased exactly when it overlaps a pulse."""


@dataclass(frozen=True)
class TwoStateErasure:
    p_G: float
    p_B: float

    def __post_init__(self):
        if not 0.0 <= self.p_G <= self.p_B <= 1.0:
            raise ValueError(f"need 0 <= p_G <= p_B <= 1, got p_G={self.p_G}, p_B={self.p_B}")


ErasureModel = Union[DeterministicOverlap, TwoStateErasure]


@dataclass(frozen=True)
class SimConfig:
    pair_rate: float
    fragment_duration: float
    sifs: float = DEFAULT_SIFS
    carrier_sense: bool = False
    collision_prob: float = 0.0
    erasure_model: ErasureModel = DeterministicOverlap()
    seed: int = 0
    horizon: float = 100.0
    paired: bool = True

    def __post_init__(self):
        if not self.pair_rate > 0:
            raise ValueError(f"pair_rate must be > 0, got {self.pair_rate}")
        if not self.fragment_duration > 0:
            raise ValueError(f"fragment_duration must be > 0, got {self.fragment_duration}")
        if not self.sifs >= 0:
            raise ValueError(f"sifs must be >= 0, got {self.sifs}")
        if not 0.0 <= self.collision_prob <= 1.0:
            raise ValueError(f"collision_prob must be in [0, 1], got {self.collision_prob}")
        if not self.horizon >= 0:
            raise ValueError(f"horizon must be >= 0, got {self.horizon}")

    @property
    def t_d(self) -> float:
        """Total sampled duration: both fragments for pairs, the packet otherwise."""
        return 2 * self.fragment_duration if self.paired else self.fragment_duration

    @property
    def cycle(self) -> float:
        if self.paired:
            return 2 * self.fragment_duration + self.sifs
        return self.fragment_duration


@dataclass(frozen=True)
class TransmissionRecord:
    pair_index: int
    t_d: float
    pkt1_start: float
    pkt1_end: float
    pkt1_outcome: Outcome
    pkt2_outcome: Outcome
    deferred: bool


class RecordTable:
    """Column store of transmission records; iterates as ``TransmissionRecord``.

    ``collided`` and ``overlap1`` are simulator diagnostics (why pkt1 failed)
    and are ``None`` for records read from CSV.
    """

    def __init__(
        self,
        pair_index,
        t_d,
        pkt1,
        pkt2,
        deferred,
        pkt1_start=None,
        pkt1_end=None,
        collided=None,
        overlap1=None,
    ):
        self.pair_index = np.asarray(pair_index, dtype=np.int64)
        n = self.pair_index.size
        self.t_d = np.broadcast_to(np.asarray(t_d, dtype=float), (n,)).copy()
        self.pkt1 = np.asarray(pkt1, dtype=np.int8)
        self.pkt2 = np.asarray(pkt2, dtype=np.int8)
        self.deferred = np.asarray(deferred, dtype=bool)
        nan = np.full(n, np.nan)
        self.pkt1_start = nan if pkt1_start is None else np.asarray(pkt1_start, dtype=float)
        self.pkt1_end = nan.copy() if pkt1_end is None else np.asarray(pkt1_end, dtype=float)
        self.collided = None if collided is None else np.asarray(collided, dtype=bool)
        self.overlap1 = None if overlap1 is None else np.asarray(overlap1, dtype=bool)
        for arr in (self.t_d, self.pkt1, self.pkt2, self.deferred, self.pkt1_start, self.pkt1_end):
            if arr.shape != (n,):
                raise ValueError("record columns must all have the same length")
        lost1 = self.pkt1 == Outcome.LOST
        if np.any(self.pkt1 > Outcome.LOST):
            raise ValueError("pkt1 outcome must be ok or lost")
        mismatch = (self.pkt2 != Outcome.NONE) & ((self.pkt2 == Outcome.CENSORED) != lost1)
        if np.any(mismatch):
            i = int(np.argmax(mismatch))
            raise ValueError(f"record {i}: pkt2 must be censored exactly when pkt1 is lost")

    def __len__(self) -> int:
        return int(self.pair_index.size)

    def __getitem__(self, key):
        if isinstance(key, (int, np.integer)):
            i = int(key)
            return TransmissionRecord(
                int(self.pair_index[i]),
                float(self.t_d[i]),
                float(self.pkt1_start[i]),
                float(self.pkt1_end[i]),
                Outcome(int(self.pkt1[i])),
                Outcome(int(self.pkt2[i])),
                bool(self.deferred[i]),
            )
        return RecordTable(
            self.pair_index[key],
            self.t_d[key],
            self.pkt1[key],
            self.pkt2[key],
            self.deferred[key],
            self.pkt1_start[key],
            self.pkt1_end[key],
            None if self.collided is None else self.collided[key],
            None if self.overlap1 is None else self.overlap1[key],
        )

    def __iter__(self) -> Iterator[TransmissionRecord]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_records(cls, records: Iterable[TransmissionRecord]) -> RecordTable:
        recs = list(records)
        return cls(
            [r.pair_index for r in recs],
            [r.t_d for r in recs],
            [int(r.pkt1_outcome) for r in recs],
            [int(r.pkt2_outcome) for r in recs],
            [r.deferred for r in recs],
            [r.pkt1_start for r in recs],
            [r.pkt1_end for r in recs],
        )

    @classmethod
    def concat(cls, tables: Sequence[RecordTable]) -> RecordTable:
        if not tables:
            return cls([], [], [], [], [])
        diag = all(t.collided is not None for t in tables)
        return cls(
            np.concatenate([t.pair_index for t in tables]),
            np.concatenate([t.t_d for t in tables]),
            np.concatenate([t.pkt1 for t in tables]),
            np.concatenate([t.pkt2 for t in tables]),
            np.concatenate([t.deferred for t in tables]),
            np.concatenate([t.pkt1_start for t in tables]),
            np.concatenate([t.pkt1_end for t in tables]),
            np.concatenate([t.collided for t in tables]) if diag else None,
            np.concatenate([t.overlap1 for t in tables]) if diag else None,
        )

    def to_csv(self, path: str | Path) -> None:
        labels = {o.value: o.label for o in Outcome}
        with open(path, "w", newline="") as fh:
            fh.write("pair_index,t_d_s,pkt1_outcome,pkt2_outcome,deferred\n")
            for i, td, o1, o2, d in zip(
                self.pair_index.tolist(),
                self.t_d.tolist(),
                self.pkt1.tolist(),
                self.pkt2.tolist(),
                self.deferred.tolist(),
            ):
                fh.write(f"{i},{td!r},{labels[o1]},{labels[o2]},{int(d)}\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> RecordTable:
        cols: list[list] = [[], [], [], [], []]
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise TraceFormatError("empty records file", 1)
            expected = ["pair_index", "t_d_s", "pkt1_outcome", "pkt2_outcome", "deferred"]
            if [h.strip() for h in header] != expected:
                raise TraceFormatError(f"expected header {','.join(expected)}", 1)
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 5:
                    raise TraceFormatError(f"expected 5 columns, got {len(row)}", line_no)
                try:
                    values = (
                        int(row[0]),
                        float(row[1]),
                        int(Outcome.parse(row[2])),
                        int(Outcome.parse(row[3])),
                        bool(int(row[4])),
                    )
                except ValueError as exc:
                    raise TraceFormatError(str(exc), line_no) from None
                for col, v in zip(cols, values):
                    col.append(v)
        try:
            return cls(*cols)
        except ValueError as exc:
            raise TraceFormatError(str(exc)) from None


def _pause_stream(rate: float, seed: int) -> Iterator[np.ndarray]:
    rng = derive_rng(seed, "schedule")
    while True:
        yield exponential(rng, rate, 4096)


def schedule_pairs(rate: float, horizon: float, seed: int, cycle: float = 0.0) -> np.ndarray:
    """Nominal pair start times on ``[0, horizon]`` for channel-independent cycles.

    Each pause before a start is exponential with mean ``1/rate`` and is
    measured from the end of the previous cycle of length ``cycle``; only
    starts whose cycle completes by ``horizon`` are kept.
    """
    if not rate > 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    if horizon <= 0:
        return np.empty(0)
    chunks = []
    t_free = 0.0
    for pauses in _pause_stream(rate, seed):
        starts = t_free + np.cumsum(pauses + cycle) - cycle
        keep = starts + cycle <= horizon
        chunks.append(starts[keep])
        if not keep.all():
            break
        t_free = starts[-1] + cycle
    return np.concatenate(chunks)


def _deferred_starts(config: SimConfig, train: PulseTrain) -> tuple[np.ndarray, np.ndarray]:
    """Sequential schedule when a busy medium can hold back pkt1."""
    starts_l = train.starts.tolist()
    ends_l = train.ends.tolist()
    durs_l = train.durations.tolist()
    cycle = config.cycle
    horizon = config.horizon
    out: list[float] = []
    deferred: list[bool] = []
    t_free = 0.0
    done = horizon <= 0
    for pauses in _pause_stream(config.pair_rate, config.seed):
        if done:
            break
        for pause in pauses.tolist():
            t = t_free + pause
            j = bisect.bisect_right(starts_l, t) - 1
            if j >= 0 and durs_l[j] > 0 and ends_l[j] > t:
                start, held = ends_l[j], True
            else:
                start, held = t, False
            if start + cycle > horizon:
                done = True
                break
            out.append(start)
            deferred.append(held)
            t_free = start + cycle
    return np.asarray(out, dtype=float), np.asarray(deferred, dtype=bool)


def carrier_sense_defer(train: PulseTrain, t: float) -> float:
    """When the sender may start if it wants the medium at ``t``."""
    if not 0 <= t <= train.horizon:
        raise DomainError(f"t={t!r} outside [0, {train.horizon!r}]")
    return float(train.busy_until(t))


def _erased(model: ErasureModel, overlap: np.ndarray, u: np.ndarray) -> np.ndarray:
    if isinstance(model, DeterministicOverlap):
        return overlap.copy()
    return u < np.where(overlap, model.p_B, model.p_G)


def run_link_sim(config: SimConfig, train: PulseTrain) -> RecordTable:
    """Simulate pairs (or single packets) over ``train`` up to ``config.horizon``.

    pkt1 fails on an independent collision (prob ``collision_prob``) or an
    erasure; pkt2 is collision-protected and sent SIFS after a successful pkt1.
    """
    if train.horizon < config.horizon:
        raise DomainError(
            f"train horizon {train.horizon!r} is shorter than the simulation horizon "
            f"{config.horizon!r}"
        )
    if config.carrier_sense:
        start1, deferred = _deferred_starts(config, train)
    else:
        start1 = schedule_pairs(config.pair_rate, config.horizon, config.seed, config.cycle)
        deferred = np.zeros(start1.size, dtype=bool)
    n = start1.size
    f = config.fragment_duration
    end1 = start1 + f

    collided = derive_rng(config.seed, "collision").random(n) < config.collision_prob
    erng = derive_rng(config.seed, "erasure")
    u1 = erng.random(n)
    u2 = erng.random(n)

    overlap1 = train.overlaps(start1, end1)
    lost1 = collided | _erased(config.erasure_model, overlap1, u1)
    pkt1 = np.where(lost1, Outcome.LOST, Outcome.OK).astype(np.int8)
    if config.paired:
        start2 = end1 + config.sifs
        overlap2 = train.overlaps(start2, start2 + f)
        lost2 = _erased(config.erasure_model, overlap2, u2)
        pkt2 = np.where(lost1, Outcome.CENSORED, np.where(lost2, Outcome.LOST, Outcome.OK))
    else:
        pkt2 = np.full(n, Outcome.NONE)
    return RecordTable(
        np.arange(n),
        config.t_d,
        pkt1,
        pkt2.astype(np.int8),
        deferred,
        start1,
        end1,
        collided,
        overlap1,
    )
