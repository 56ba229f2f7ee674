"""Record types for the query / display / click / profile tables.

Four CSV tables describe one dataset:

* ``queries.csv``  -- ``session_id,profile_id,timestamp,o_lng,o_lat,d_lng,d_lat``
* ``plans.csv``    -- ``session_id,display_rank,mode,distance_m,eta_s,price_cent``
* ``clicks.csv``   -- ``session_id,timestamp,click_mode``
* ``profiles.csv`` -- ``profile_id,p0,...,p{P-1}``

:func:`load_dataset` joins them into :class:`TripSession` objects, one per
query row, labelled with the clicked mode or ``0`` when nothing was clicked.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Iterable, Optional, Sequence

from .errors import DataError, SchemaError

logger = logging.getLogger(__name__)

N_MODES = 11
N_CLASSES = N_MODES + 1
NO_CLICK = 0
DEFAULT_UTC_OFFSET_HOURS = 8.0
DEFAULT_PROFILE_DIM = 66

QUERY_COLUMNS = ("session_id", "profile_id", "timestamp", "o_lng", "o_lat", "d_lng", "d_lat")
PLAN_COLUMNS = ("session_id", "display_rank", "mode", "distance_m", "eta_s", "price_cent")
CLICK_COLUMNS = ("session_id", "timestamp", "click_mode")


class ModeCatalog:
    """Bijective mapping between mode ids 1..11 and readable names."""

    DEFAULT_NAMES = {
        1: "bus",
        2: "metro",
        3: "drive",
        4: "taxi",
        5: "walk",
        6: "bike",
        7: "metro+bus",
        8: "bus+taxi",
        9: "metro+bike",
        10: "metro+taxi",
        11: "metro+bus+bike",
    }

    def __init__(self, names: Optional[dict[int, str]] = None):
        names = dict(self.DEFAULT_NAMES if names is None else names)
        if sorted(names) != list(range(1, N_MODES + 1)):
            raise ValueError("mode catalog must cover exactly the ids 1..11")
        if len(set(names.values())) != N_MODES:
            raise ValueError("mode catalog names must be unique")
        self._names = names
        self._ids = {v: k for k, v in names.items()}

    def name(self, mode: int) -> str:
        return self._names[mode]

    def mode_id(self, name: str) -> int:
        return self._ids[name]

    def label_name(self, label: int) -> str:
        """Like :meth:`name` but also accepts the no-click label 0."""
        return "no click" if label == NO_CLICK else self._names[label]

    def items(self):
        return sorted(self._names.items())

    def __len__(self):
        return N_MODES


CATALOG = ModeCatalog()


@dataclass(frozen=True)
class QueryRecord:
    session_id: str
    profile_id: Optional[str]
    timestamp: int
    origin: tuple[float, float]
    destination: tuple[float, float]

    def __post_init__(self):
        if not self.session_id:
            raise ValueError("session_id must be non-empty")
        for name, (lng, lat) in (("origin", self.origin), ("destination", self.destination)):
            if not -180.0 <= lng <= 180.0:
                raise ValueError(f"{name} longitude {lng} outside [-180, 180]")
            if not -90.0 <= lat <= 90.0:
                raise ValueError(f"{name} latitude {lat} outside [-90, 90]")


@dataclass(frozen=True)
class PlanOption:
    mode: int
    distance_m: float
    eta_s: float
    price_cent: float
    display_rank: int

    def __post_init__(self):
        if not 1 <= self.mode <= N_MODES:
            raise ValueError(f"mode out of range 1..{N_MODES}: {self.mode}")
        if self.distance_m < 0 or self.eta_s < 0 or self.price_cent < 0:
            raise ValueError("distance, eta and price must be non-negative")
        if self.display_rank < 1:
            raise ValueError(f"display_rank must be >= 1, got {self.display_rank}")


@dataclass(frozen=True)
class ClickRecord:
    session_id: str
    timestamp: int
    click_mode: int


@dataclass(frozen=True)
class UserProfile:
    profile_id: str
    attributes: tuple[int, ...]

    def __post_init__(self):
        if any(a not in (0, 1) for a in self.attributes):
            raise ValueError("profile attributes must be 0 or 1")


@dataclass(frozen=True)
class TripSession:
    query: QueryRecord
    plans: tuple[PlanOption, ...]
    label: int = NO_CLICK
    profile: Optional[UserProfile] = None
    click_timestamp: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.plans:
            raise ValueError(f"session {self.query.session_id}: empty plan list")
        ranks = [p.display_rank for p in self.plans]
        if len(set(ranks)) != len(ranks):
            raise ValueError(f"session {self.query.session_id}: duplicate display_rank")
        if self.label != NO_CLICK and self.label not in self.modes:
            raise ValueError(
                f"session {self.query.session_id}: label {self.label} not among displayed modes"
            )

    @property
    def session_id(self) -> str:
        return self.query.session_id

    @property
    def timestamp(self) -> int:
        return self.query.timestamp

    @property
    def modes(self) -> tuple[int, ...]:
        return tuple(p.mode for p in self.plans)


# --------------------------------------------------------------------------- parsing


def parse_timestamp(value: str, utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS) -> int:
    """Integer epoch seconds, or a local ``YYYY-MM-DD HH:MM:SS`` string.

    Local strings are shifted to UTC using ``utc_offset_hours``.
    """
    value = value.strip()
    try:
        return int(value)
    except ValueError:
        pass
    try:
        f = float(value)
    except ValueError:
        local = datetime.strptime(value, "%Y-%m-%d %H:%M:%S")
        aware = local.replace(tzinfo=timezone(timedelta(hours=utc_offset_hours)))
        return int(aware.timestamp())
    if not f.is_integer():
        raise ValueError(f"timestamp must be whole seconds: {value}")
    return int(f)


def _read_rows(path, expected: Sequence[str]):
    """Yield ``(line_number, row_dict)``; header must start with ``expected``."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError("file not found", path=path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("missing header row", path=path, line=1) from None
        header = [h.strip() for h in header]
        missing = [c for c in expected if c not in header]
        if missing:
            raise SchemaError(f"missing column {missing[0]!r}", path=path, line=1, column=missing[0])
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"expected {len(header)} fields, found {len(row)}", path=path, line=line
                )
            yield line, dict(zip(header, row)), header


class _Cell:
    """Small helper binding file/line context to field conversions."""

    def __init__(self, path, line, row):
        self.path = path
        self.line = line
        self.row = row

    def fail(self, column, message):
        raise SchemaError(message, path=self.path, line=self.line, column=column)

    def text(self, column, required=True):
        value = self.row[column].strip()
        if required and not value:
            self.fail(column, "missing value")
        return value or None

    def number(self, column, default=None):
        value = self.row[column].strip()
        if not value:
            if default is None:
                self.fail(column, "missing value")
            return default
        try:
            out = float(value)
        except ValueError:
            self.fail(column, f"not a number: {value!r}")
        if not math.isfinite(out):
            self.fail(column, f"not finite: {value!r}")
        return out

    def integer(self, column):
        out = self.number(column)
        if not out.is_integer():
            self.fail(column, f"not an integer: {self.row[column]!r}")
        return int(out)

    def timestamp(self, column, utc_offset_hours):
        value = self.text(column)
        try:
            return parse_timestamp(value, utc_offset_hours)
        except ValueError as exc:
            self.fail(column, str(exc))


def _load_profiles(path) -> dict[str, UserProfile]:
    profiles: dict[str, UserProfile] = {}
    width = None
    for line, row, header in _read_rows(path, ("profile_id",)):
        cols = [h for h in header if h != "profile_id"]
        if width is None:
            expected = [f"p{i}" for i in range(len(cols))]
            if cols != expected:
                raise SchemaError("profile columns must be p0..p{P-1} in order", path=path, line=1)
            width = len(cols)
        cell = _Cell(path, line, row)
        pid = cell.text("profile_id")
        attrs = []
        for c in cols:
            v = cell.integer(c)
            if v not in (0, 1):
                cell.fail(c, f"profile attribute must be 0 or 1, got {v}")
            attrs.append(v)
        if pid in profiles:
            cell.fail("profile_id", f"duplicate profile_id {pid!r}")
        profiles[pid] = UserProfile(pid, tuple(attrs))
    return profiles


def load_dataset(
    queries_path,
    plans_path,
    clicks_path,
    profiles_path=None,
    utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS,
) -> list[TripSession]:
    """Join the four tables into sessions sorted by timestamp.

    Sessions without a click row get label 0. A session clicked more than
    once keeps its earliest click. Missing ``price_cent`` parses as 0.
    """
    queries = []
    seen = set()
    for line, row, _ in _read_rows(queries_path, QUERY_COLUMNS):
        cell = _Cell(queries_path, line, row)
        sid = cell.text("session_id")
        if sid in seen:
            cell.fail("session_id", f"duplicate session_id {sid!r}")
        seen.add(sid)
        origin = (cell.number("o_lng"), cell.number("o_lat"))
        dest = (cell.number("d_lng"), cell.number("d_lat"))
        for col, v, lim in (("o_lng", origin[0], 180), ("o_lat", origin[1], 90),
                            ("d_lng", dest[0], 180), ("d_lat", dest[1], 90)):
            if not -lim <= v <= lim:
                cell.fail(col, f"coordinate {v} outside [-{lim}, {lim}]")
        queries.append(QueryRecord(
            session_id=sid,
            profile_id=cell.text("profile_id", required=False),
            timestamp=cell.timestamp("timestamp", utc_offset_hours),
            origin=origin,
            destination=dest,
        ))

    plans: dict[str, list[PlanOption]] = {}
    for line, row, _ in _read_rows(plans_path, PLAN_COLUMNS):
        cell = _Cell(plans_path, line, row)
        sid = cell.text("session_id")
        if sid not in seen:
            cell.fail("session_id", f"plan references unknown session {sid!r}")
        mode = cell.integer("mode")
        if not 1 <= mode <= N_MODES:
            cell.fail("mode", f"mode out of range 1..{N_MODES}: {mode}")
        rank = cell.integer("display_rank")
        if rank < 1:
            cell.fail("display_rank", f"display_rank must be >= 1, got {rank}")
        values = {}
        for col, default in (("distance_m", None), ("eta_s", None), ("price_cent", 0.0)):
            v = cell.number(col, default=default)
            if v < 0:
                cell.fail(col, f"negative value {v}")
            values[col] = v
        bucket = plans.setdefault(sid, [])
        if any(p.display_rank == rank for p in bucket):
            cell.fail("display_rank", f"duplicate display_rank {rank} in session {sid!r}")
        bucket.append(PlanOption(mode=mode, display_rank=rank, **values))

    clicks: dict[str, ClickRecord] = {}
    for line, row, _ in _read_rows(clicks_path, CLICK_COLUMNS):
        cell = _Cell(clicks_path, line, row)
        sid = cell.text("session_id")
        if sid not in seen:
            cell.fail("session_id", f"click references unknown session {sid!r}")
        mode = cell.integer("click_mode")
        shown = {p.mode for p in plans.get(sid, ())}
        if mode not in shown:
            cell.fail("click_mode", f"click_mode {mode} not in displayed plan list of {sid!r}")
        click = ClickRecord(sid, cell.timestamp("timestamp", utc_offset_hours), mode)
        if sid not in clicks or click.timestamp < clicks[sid].timestamp:
            clicks[sid] = click

    profiles = _load_profiles(profiles_path) if profiles_path is not None else {}
    unknown_profiles = 0
    sessions = []
    for q in queries:
        plist = plans.get(q.session_id)
        if not plist:
            raise DataError(f"session {q.session_id!r} has an empty plan list", path=plans_path)
        plist.sort(key=lambda p: p.display_rank)
        click = clicks.get(q.session_id)
        profile = None
        if q.profile_id is not None:
            profile = profiles.get(q.profile_id)
            if profile is None:
                unknown_profiles += 1
        sessions.append(TripSession(
            query=q,
            plans=tuple(plist),
            label=click.click_mode if click else NO_CLICK,
            profile=profile,
            click_timestamp=click.timestamp if click else None,
        ))
    if unknown_profiles:
        logger.warning("%d sessions reference profiles absent from %s", unknown_profiles, profiles_path)
    sessions.sort(key=lambda s: s.timestamp)
    return sessions


def load_dataset_dir(directory, utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS) -> list[TripSession]:
    d = os.fspath(directory)
    profiles = os.path.join(d, "profiles.csv")
    return load_dataset(
        os.path.join(d, "queries.csv"),
        os.path.join(d, "plans.csv"),
        os.path.join(d, "clicks.csv"),
        profiles if os.path.exists(profiles) else None,
        utc_offset_hours=utc_offset_hours,
    )


# --------------------------------------------------------------------------- writing


def format_number(value) -> str:
    """Canonical text for a number: integral values without a fraction."""
    value = float(value)
    if value.is_integer() and abs(value) < 2**53:
        return str(int(value))
    return repr(value)


def write_dataset(sessions: Iterable[TripSession], directory, profile_dim: Optional[int] = None) -> None:
    """Write sessions back out as the four canonical CSV tables.

    Only profiles referenced by some session are written, sorted by id.
    """
    sessions = list(sessions)
    os.makedirs(directory, exist_ok=True)
    profiles: dict[str, UserProfile] = {}
    for s in sessions:
        if s.profile is not None:
            profiles[s.profile.profile_id] = s.profile
    if profile_dim is None:
        widths = {len(p.attributes) for p in profiles.values()}
        if len(widths) > 1:
            raise DataError("profiles have inconsistent widths")
        profile_dim = widths.pop() if widths else 0

    def _open(name):
        return open(os.path.join(directory, name), "w", newline="", encoding="utf-8")

    with _open("queries.csv") as fq, _open("plans.csv") as fp, _open("clicks.csv") as fc:
        wq, wp, wc = (csv.writer(f, lineterminator="\n") for f in (fq, fp, fc))
        wq.writerow(QUERY_COLUMNS)
        wp.writerow(PLAN_COLUMNS)
        wc.writerow(CLICK_COLUMNS)
        for s in sessions:
            q = s.query
            wq.writerow([
                q.session_id, q.profile_id or "", q.timestamp,
                *(format_number(v) for v in (*q.origin, *q.destination)),
            ])
            for p in s.plans:
                wp.writerow([
                    q.session_id, p.display_rank, p.mode,
                    format_number(p.distance_m), format_number(p.eta_s), format_number(p.price_cent),
                ])
            if s.label != NO_CLICK:
                ts = s.click_timestamp if s.click_timestamp is not None else q.timestamp
                wc.writerow([q.session_id, ts, s.label])
    with _open("profiles.csv") as fpr:
        w = csv.writer(fpr, lineterminator="\n")
        w.writerow(["profile_id", *(f"p{i}" for i in range(profile_dim))])
        for pid in sorted(profiles):
            w.writerow([pid, *profiles[pid].attributes])


# --------------------------------------------------------------------------- utilities


def split_by_time(sessions: Sequence[TripSession], cutoff: int):
    """Partition into sessions strictly before ``cutoff`` and the rest."""
    train = [s for s in sessions if s.timestamp < cutoff]
    valid = [s for s in sessions if s.timestamp >= cutoff]
    if sessions and (not train or not valid):
        logger.warning("cutoff %s lies outside the data range; one side of the split is empty", cutoff)
    return train, valid


def class_distribution(sessions: Sequence[TripSession]) -> dict[int, tuple[int, float]]:
    """Map each observed label to ``(count, ratio)``, sorted by label."""
    if not sessions:
        raise ValueError("class_distribution of an empty session list")
    counts = Counter(s.label for s in sessions)
    n = len(sessions)
    return {label: (counts[label], counts[label] / n) for label in sorted(counts)}
