"""Multi-state event histories under delayed entry and right-censoring.

A :class:`Dataset` stores one row per sojourn ("record"): the subject holds
``from_state`` on the interval ``(entry, exit]`` and the record ends either in
a transition to ``to_state`` or in censoring. Records are kept as flat numpy
arrays sorted by subject and entry time, which keeps resampling and risk-set
construction vectorized.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "CENSORED",
    "DataError",
    "StateSpace",
    "ObservationRecord",
    "Dataset",
    "EventTable",
    "ingest_long_format",
    "read_long_format",
    "write_long_format",
    "build_event_table",
    "landmark_subset",
    "risk_set_sizes",
    "subject_risk_increments",
]

#: Integer code for a censored record in the ``to`` array.
CENSORED = -1
CENSOR_TOKEN = "cens"
HEADER = ("id", "from", "to", "entry", "exit")


class DataError(ValueError):
    """Raised for malformed or inconsistent event-history data."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class StateSpace:
    """Finite state space ``{0, ..., num_states - 1}`` with allowed transitions."""

    num_states: int
    allowed_transitions: frozenset[tuple[int, int]]
    absorbing: frozenset[int] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        trans = frozenset((int(a), int(b)) for a, b in self.allowed_transitions)
        object.__setattr__(self, "allowed_transitions", trans)
        if self.absorbing is None:
            sources = {a for a, _ in trans}
            absorbing = frozenset(s for s in range(self.num_states) if s not in sources)
        else:
            absorbing = frozenset(int(s) for s in self.absorbing)
        object.__setattr__(self, "absorbing", absorbing)
        if self.num_states < 1:
            raise ValueError("num_states must be positive")
        for a, b in trans:
            if a == b:
                raise ValueError(f"transition {a}->{b} does not change state")
            if not (0 <= a < self.num_states and 0 <= b < self.num_states):
                raise ValueError(f"transition {a}->{b} outside state space")
            if a in absorbing:
                raise ValueError(f"transition {a}->{b} leaves absorbing state {a}")

    @classmethod
    def illness_death(cls) -> "StateSpace":
        """Illness-death model without recovery: 0 -> 1, 0 -> 2, 1 -> 2."""
        return cls(3, frozenset({(0, 1), (0, 2), (1, 2)}))

    @property
    def transient(self) -> tuple[int, ...]:
        return tuple(s for s in range(self.num_states) if s not in self.absorbing)

    def allows(self, from_state: int, to_state: int) -> bool:
        return (from_state, to_state) in self.allowed_transitions


@dataclass(frozen=True)
class ObservationRecord:
    """One sojourn of one subject; ``to_state is None`` means censored."""

    subject_id: str
    entry_time: float
    exit_time: float
    from_state: int
    to_state: int | None

    @property
    def censored(self) -> bool:
        return self.to_state is None


class Dataset:
    """Validated long-format multi-state data.

    Use :meth:`from_records` or :func:`ingest_long_format` to build one; the
    array constructor is meant for code that already guarantees validity.
    """

    __slots__ = ("state_space", "subject_ids", "rec_subject", "rec_from", "rec_to",
                 "rec_entry", "rec_exit", "offsets")

    def __init__(self, state_space: StateSpace, subject_ids: Sequence[str],
                 rec_subject: np.ndarray, rec_from: np.ndarray, rec_to: np.ndarray,
                 rec_entry: np.ndarray, rec_exit: np.ndarray, *, validate: bool = True):
        self.state_space = state_space
        self.subject_ids = tuple(subject_ids)
        self.rec_subject = np.asarray(rec_subject, dtype=np.int64)
        self.rec_from = np.asarray(rec_from, dtype=np.int64)
        self.rec_to = np.asarray(rec_to, dtype=np.int64)
        self.rec_entry = np.asarray(rec_entry, dtype=float)
        self.rec_exit = np.asarray(rec_exit, dtype=float)
        for arr in (self.rec_subject, self.rec_from, self.rec_to, self.rec_entry, self.rec_exit):
            arr.setflags(write=False)
        counts = np.bincount(self.rec_subject, minlength=len(self.subject_ids))
        self.offsets = np.concatenate(([0], np.cumsum(counts)))
        if validate:
            self.validate()

    # construction -----------------------------------------------------------------

    @classmethod
    def empty(cls, state_space: StateSpace) -> "Dataset":
        z = np.zeros(0)
        return cls(state_space, (), z, z, z, z, z, validate=False)

    @classmethod
    def from_records(cls, records: Iterable[ObservationRecord],
                     state_space: StateSpace | None = None) -> "Dataset":
        """Group records by subject, sort by entry time and validate.

        When ``state_space`` is omitted it is inferred: every observed
        transition is allowed and states never held by any record are absorbing.
        """
        records = list(records)
        order: dict[str, int] = {}
        for r in records:
            order.setdefault(str(r.subject_id), len(order))
        if state_space is None:
            state_space = _infer_state_space(records)
        rows = sorted(range(len(records)),
                      key=lambda i: (order[str(records[i].subject_id)], records[i].entry_time))
        subj = np.array([order[str(records[i].subject_id)] for i in rows], dtype=np.int64)
        frm = np.array([records[i].from_state for i in rows], dtype=np.int64)
        to = np.array([CENSORED if records[i].to_state is None else records[i].to_state
                       for i in rows], dtype=np.int64)
        entry = np.array([records[i].entry_time for i in rows], dtype=float)
        exit_ = np.array([records[i].exit_time for i in rows], dtype=float)
        return cls(state_space, list(order), subj, frm, to, entry, exit_)

    def validate(self) -> None:
        ss = self.state_space
        n_rec = len(self.rec_from)
        if n_rec == 0:
            return
        if not (np.all(np.isfinite(self.rec_entry)) and np.all(np.isfinite(self.rec_exit))):
            raise DataError("times must be finite")
        if np.any(self.rec_entry < 0):
            raise DataError("entry times must be nonnegative", int(np.argmax(self.rec_entry < 0)))
        bad = ~(self.rec_entry < self.rec_exit)
        if bad.any():
            raise DataError("entry time must be smaller than exit time", int(np.argmax(bad)))
        if np.any(np.diff(self.rec_subject) < 0):
            raise DataError("records must be grouped by subject")
        for i in range(n_rec):
            a, b = int(self.rec_from[i]), int(self.rec_to[i])
            if not 0 <= a < ss.num_states:
                raise DataError(f"state {a} outside state space", i)
            if a in ss.absorbing:
                raise DataError(f"record held in absorbing state {a}", i)
            if b != CENSORED and not ss.allows(a, b):
                raise DataError(f"transition {a}->{b} not in state space", i)
        same = self.rec_subject[1:] == self.rec_subject[:-1]
        for i in np.flatnonzero(same):
            prev_to = int(self.rec_to[i])
            if prev_to == CENSORED:
                raise DataError("censored record must be the last of its subject", int(i + 1))
            if int(self.rec_from[i + 1]) != prev_to:
                raise DataError(
                    f"chain violation: from_state {int(self.rec_from[i + 1])} "
                    f"differs from previous to_state {prev_to}", int(i + 1))
            if self.rec_entry[i + 1] != self.rec_exit[i]:
                raise DataError("chain violation: entry time differs from previous exit time",
                                int(i + 1))

    # access -----------------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.subject_ids)

    def __len__(self) -> int:
        return self.n

    @property
    def num_records(self) -> int:
        return len(self.rec_from)

    def records(self) -> Iterator[ObservationRecord]:
        for i in range(self.num_records):
            to = int(self.rec_to[i])
            yield ObservationRecord(self.subject_ids[self.rec_subject[i]], float(self.rec_entry[i]),
                                    float(self.rec_exit[i]), int(self.rec_from[i]),
                                    None if to == CENSORED else to)

    def subject_records(self, k: int) -> list[ObservationRecord]:
        lo, hi = self.offsets[k], self.offsets[k + 1]
        return [r for i, r in enumerate(self.records()) if lo <= i < hi]

    def entry_times(self) -> np.ndarray:
        """Study entry time ``L_i`` of each subject."""
        return self.rec_entry[self.offsets[:-1]] if self.n else np.zeros(0)

    def exit_times(self) -> np.ndarray:
        """End of observation ``C_i ^ T_i`` of each subject."""
        return self.rec_exit[self.offsets[1:] - 1] if self.n else np.zeros(0)

    def state_at(self, s: float) -> np.ndarray:
        """State held at ``s`` under (entry, exit] semantics, -1 if unobserved at ``s``."""
        out = np.full(self.n, -1, dtype=np.int64)
        hit = (self.rec_entry < s) & (s <= self.rec_exit)
        out[self.rec_subject[hit]] = self.rec_from[hit]
        return out

    def take(self, subjects: np.ndarray, *, relabel: bool = False) -> "Dataset":
        """Sub-dataset of the given subject indices, in the given order.

        Repeated indices are allowed when ``relabel`` is true; copies then get
        distinct identifiers ``"<id>#<k>"``.
        """
        subjects = np.asarray(subjects, dtype=np.int64)
        counts = self.offsets[subjects + 1] - self.offsets[subjects]
        starts = self.offsets[subjects]
        total = int(counts.sum())
        new_subj = np.repeat(np.arange(len(subjects)), counts)
        within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        idx = np.repeat(starts, counts) + within
        if relabel:
            ids = [f"{self.subject_ids[k]}#{j}" for j, k in enumerate(subjects)]
        else:
            ids = [self.subject_ids[k] for k in subjects]
        return Dataset(self.state_space, ids, new_subj, self.rec_from[idx], self.rec_to[idx],
                       self.rec_entry[idx], self.rec_exit[idx], validate=False)

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, records={self.num_records}, states={self.state_space.num_states})"


def _infer_state_space(records: Sequence[ObservationRecord]) -> StateSpace:
    held = {r.from_state for r in records}
    trans = {(r.from_state, r.to_state) for r in records if r.to_state is not None}
    states = held | {b for _, b in trans}
    num = max(states) + 1 if states else 1
    absorbing = frozenset(s for s in range(num) if s not in held)
    return StateSpace(num, frozenset(trans), absorbing)


# long-format text I/O -----------------------------------------------------------------

def ingest_long_format(source: IO[str] | IO[bytes] | str | bytes,
                       state_space: StateSpace | None = None) -> Dataset:
    """Parse comma-separated ``id,from,to,entry,exit`` text into a Dataset.

    Censoring is encoded as ``to = cens``. Errors carry the 1-based data row
    number (the header is row 0).
    """
    if isinstance(source, bytes):
        source = source.decode()
    if isinstance(source, str):
        source = io.StringIO(source)
    text = source.read()
    if isinstance(text, bytes):
        text = text.decode()
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("missing header") from None
    if tuple(header) != HEADER:
        raise DataError(f"header must be {','.join(HEADER)}, got {','.join(header)}", 0)
    records: list[ObservationRecord] = []
    for rownum, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 5:
            raise DataError(f"expected 5 fields, got {len(row)}", rownum)
        sid, frm, to, entry, exit_ = (c.strip() for c in row)
        try:
            frm_i = int(frm)
            to_i = None if to == CENSOR_TOKEN else int(to)
            entry_f, exit_f = float(entry), float(exit_)
        except ValueError as exc:
            raise DataError(f"malformed field ({exc})", rownum) from None
        if frm_i < 0 or (to_i is not None and to_i < 0):
            raise DataError("states must be nonnegative integers", rownum)
        if not (np.isfinite(entry_f) and np.isfinite(exit_f)) or entry_f < 0:
            raise DataError("times must be finite and nonnegative", rownum)
        if not entry_f < exit_f:
            raise DataError(f"entry time {entry} is not smaller than exit time {exit_}", rownum)
        if state_space is not None and to_i is not None and not state_space.allows(frm_i, to_i):
            raise DataError(f"transition {frm_i}->{to_i} not in state space", rownum)
        records.append(ObservationRecord(sid, entry_f, exit_f, frm_i, to_i))
    # report chain errors against original row numbers
    by_subject: dict[str, list[tuple[int, ObservationRecord]]] = {}
    for rownum, rec in enumerate(records, start=1):
        by_subject.setdefault(rec.subject_id, []).append((rownum, rec))
    for rows in by_subject.values():
        rows.sort(key=lambda x: x[1].entry_time)
        for (_, prev), (rownum, cur) in zip(rows, rows[1:]):
            if prev.to_state is None:
                raise DataError("censored record must be the last of its subject", rownum)
            if cur.from_state != prev.to_state:
                raise DataError(f"chain violation: from_state {cur.from_state} differs from "
                                f"previous to_state {prev.to_state}", rownum)
            if cur.entry_time != prev.exit_time:
                raise DataError("chain violation: entry time differs from previous exit time",
                                rownum)
    return Dataset.from_records(records, state_space)


def read_long_format(path, state_space: StateSpace | None = None) -> Dataset:
    with open(path, newline="") as fh:
        return ingest_long_format(fh, state_space)


def write_long_format(data: Dataset, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(HEADER)
    for r in data.records():
        w.writerow([r.subject_id, r.from_state, CENSOR_TOKEN if r.to_state is None else r.to_state,
                    repr(r.entry_time), repr(r.exit_time)])


# counting processes -------------------------------------------------------------------

@dataclass(frozen=True)
class EventTable:
    """Aggregated counting and at-risk processes on the grid of transition times.

    ``counts[j, l, m]`` is dN_lm(t_j) and ``at_risk[j, l]`` is Y_l(t_j). The
    per-transition attribution arrays (``event_*``) keep which subject made
    each jump; the wild bootstrap needs them.
    """

    state_space: StateSpace
    times: np.ndarray
    counts: np.ndarray
    at_risk: np.ndarray
    n: int
    event_time_index: np.ndarray
    event_subject: np.ndarray
    event_from: np.ndarray
    event_to: np.ndarray

    @property
    def num_states(self) -> int:
        return self.state_space.num_states


def _risk_counts(data: Dataset, times: np.ndarray) -> np.ndarray:
    """Y_l(t) for every t in ``times``, shape (J, S)."""
    S = data.state_space.num_states
    J = len(times)
    lo = np.searchsorted(times, data.rec_entry, side="right")
    hi = np.searchsorted(times, data.rec_exit, side="right")
    diff = np.zeros((S, J + 1))
    np.add.at(diff, (data.rec_from, lo), 1.0)
    np.add.at(diff, (data.rec_from, hi), -1.0)
    return np.cumsum(diff[:, :J], axis=1).T


def subject_risk_increments(data: Dataset, times: np.ndarray) -> np.ndarray:
    """Per-subject difference array of the at-risk indicators, shape (n, S, J + 1).

    ``np.cumsum(w @ M.reshape(n, -1) ...)`` over the last axis gives the
    weighted at-risk process for subject weights ``w``.
    """
    S = data.state_space.num_states
    J = len(times)
    lo = np.searchsorted(times, data.rec_entry, side="right")
    hi = np.searchsorted(times, data.rec_exit, side="right")
    diff = np.zeros((data.n, S, J + 1))
    np.add.at(diff, (data.rec_subject, data.rec_from, lo), 1.0)
    np.add.at(diff, (data.rec_subject, data.rec_from, hi), -1.0)
    return diff


def build_event_table(data: Dataset, after: float | None = None) -> EventTable:
    """Reduce a Dataset to transition counts dN_lm and at-risk counts Y_l.

    The grid is the set of distinct observed transition times; with ``after``
    only times strictly greater than it are kept. Subject i is at risk in
    state l at t when one of its records holds l on (entry, exit] containing t.
    """
    S = data.state_space.num_states
    is_event = data.rec_to != CENSORED
    ev_times = data.rec_exit[is_event]
    if after is not None:
        keep = ev_times > after
        ev_idx = np.flatnonzero(is_event)[keep]
        ev_times = ev_times[keep]
    else:
        ev_idx = np.flatnonzero(is_event)
    times = np.unique(ev_times)
    J = len(times)
    tidx = np.searchsorted(times, ev_times)
    counts = np.zeros((J, S, S), dtype=np.int64)
    np.add.at(counts, (tidx, data.rec_from[ev_idx], data.rec_to[ev_idx]), 1)
    at_risk = np.rint(_risk_counts(data, times)).astype(np.int64) if J else np.zeros((0, S), np.int64)
    order = np.lexsort((data.rec_subject[ev_idx], tidx))
    for arr in (times, counts, at_risk):
        arr.setflags(write=False)
    return EventTable(data.state_space, times, counts, at_risk, data.n,
                      tidx[order], data.rec_subject[ev_idx][order],
                      data.rec_from[ev_idx][order], data.rec_to[ev_idx][order])


def risk_set_sizes(data: Dataset, t: float) -> np.ndarray:
    """Y_l(t) at a single time."""
    hit = (data.rec_entry < t) & (t <= data.rec_exit)
    return np.bincount(data.rec_from[hit], minlength=data.state_space.num_states)


def landmark_subset(data: Dataset, s: float, state: int) -> Dataset:
    """Subjects under observation in ``state`` at landmark time ``s``.

    Selection is ``L_i < s < C_i`` and ``X_i(s) = state`` with ``X_i(s)`` the
    state held on the record interval (entry, exit] containing ``s``; records
    are passed through unmodified.
    """
    if state in data.state_space.absorbing:
        raise ValueError(f"landmark state {state} is absorbing")
    if s < 0:
        raise ValueError("landmark time must be nonnegative")
    L = data.entry_times()
    last = data.offsets[1:] - 1 if data.n else np.zeros(0, dtype=np.int64)
    censored_at = np.where(data.rec_to[last] == CENSORED, data.rec_exit[last], np.inf) \
        if data.n else np.zeros(0)
    keep = (L < s) & (s < censored_at) & (data.state_at(s) == state)
    return data.take(np.flatnonzero(keep))
