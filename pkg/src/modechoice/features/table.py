"""Session-level feature engineering.

Column families, in table order:

=========  ====================================================  =================
family     columns                                              count
=========  ====================================================  =================
time       hour, weekday, is_weekend                             3
location   o_lng, o_lat, d_lng, d_lat, od_distance_m             5
mode       distance, price, eta, price_x_eta, speed, present     6 x 11 = 66
plan       max/min/mean/std of distance, price, eta, speed;      16 + 7 = 23
           mode ranked first, longest/shortest distance,
           longest/shortest eta, highest/lowest price
station    5 nearest + count within 1500 m, bus and metro,       2 x 2 x 6 = 24
           for origin and destination
poi        POI counts per category in the O / D geohash cell     2 x 33 = 66
frequency  training visit count of the O / D geohash cell        2
landmark   distance from O / D to each landmark                  2 x L
profile    binary user profile attributes                        P
=========  ====================================================  =================

With the default 4 landmarks and P = 66 the table has 263 columns.
Missing numerics are NaN.
"""
from __future__ import annotations

import csv
import hashlib
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..datamodel import DEFAULT_PROFILE_DIM, DEFAULT_UTC_OFFSET_HOURS, N_MODES, TripSession
from ..errors import SchemaError
from .geo import geohash_encode_many, haversine_m
from .stations import K_NEAREST, NETWORKS, RADIUS_M, StationIndex

N_POI_CATEGORIES = 33
DEFAULT_GEOHASH_PRECISION = 6
MISSING = np.nan

MODE_FIELDS = ("distance", "price", "eta", "price_x_eta", "speed", "present")
AGG_FIELDS = ("distance", "price", "eta", "speed")
AGG_STATS = ("max", "min", "mean", "std")
ARGMODE_FIELDS = (
    "first_rank_mode",
    "max_distance_mode",
    "min_distance_mode",
    "max_eta_mode",
    "min_eta_mode",
    "max_price_mode",
    "min_price_mode",
)

DEFAULT_LANDMARKS = (
    ("airport", 116.6031, 40.0799),
    ("great_wall", 116.0170, 40.3560),
    ("xiangshan", 116.1880, 39.9920),
    ("west_station", 116.3215, 39.8949),
)


@dataclass
class FeatureTable:
    column_names: list[str]
    rows: np.ndarray
    labels: np.ndarray
    session_ids: list[str] = field(default_factory=list)
    families: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.column_names):
            raise SchemaError(
                f"row width {self.rows.shape[-1]} does not match {len(self.column_names)} column names"
            )
        if len(set(self.column_names)) != len(self.column_names):
            raise SchemaError("duplicate feature column names")
        if len(self.labels) != len(self.rows):
            raise SchemaError("label count differs from row count")
        if not self.families:
            self.families = ["unknown"] * len(self.column_names)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def schema_hash(self) -> str:
        return schema_hash(self.column_names)

    def subset(self, index) -> "FeatureTable":
        index = np.asarray(index)
        ids = [self.session_ids[i] for i in index] if self.session_ids else []
        return FeatureTable(list(self.column_names), self.rows[index], self.labels[index], ids,
                            list(self.families))

    def save_csv(self, path) -> None:
        """Write ``path`` plus a ``.schema.csv`` sidecar with column families."""
        path = os.fspath(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["session_id", "label", *self.column_names])
            for i in range(self.n_rows):
                sid = self.session_ids[i] if self.session_ids else str(i)
                w.writerow([sid, int(self.labels[i]), *(_fmt(v) for v in self.rows[i])])
        with open(schema_path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "column", "family"])
            for i, (c, f) in enumerate(zip(self.column_names, self.families)):
                w.writerow([i, c, f])

    @classmethod
    def load_csv(cls, path) -> "FeatureTable":
        path = os.fspath(path)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            ids, labels, rows = [], [], []
            for row in reader:
                ids.append(row[0])
                labels.append(int(row[1]))
                rows.append([float(v) if v else MISSING for v in row[2:]])
        families = []
        sp = schema_path(path)
        if os.path.exists(sp):
            with open(sp, newline="", encoding="utf-8") as fh:
                families = [r["family"] for r in csv.DictReader(fh)]
        rows = np.array(rows, dtype=float).reshape(len(ids), len(header) - 2)
        return cls(header[2:], rows, np.array(labels, dtype=np.int64), ids, families)


def schema_path(path) -> str:
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".schema.csv"


def schema_hash(column_names: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(column_names).encode("utf-8")).hexdigest()[:16]


def _fmt(v) -> str:
    if np.isnan(v):
        return ""
    return repr(float(v))


def check_same_schema(a: FeatureTable, b: FeatureTable) -> None:
    if a.column_names != b.column_names:
        missing = [c for c in a.column_names if c not in b.column_names]
        detail = f"; missing column {missing[0]!r}" if missing else ""
        raise SchemaError(
            f"feature schema mismatch: {a.n_features} vs {b.n_features} columns{detail}"
        )


# --------------------------------------------------------------------------- artifacts


class PoiTable:
    """POI counts per category, keyed by geohash cell."""

    def __init__(self, counts: dict[str, np.ndarray], precision: int):
        self.counts = counts
        self.precision = precision

    @classmethod
    def from_points(cls, lng, lat, category, precision=DEFAULT_GEOHASH_PRECISION):
        category = np.asarray(category, dtype=np.int64)
        if len(category) and (category.min() < 0 or category.max() >= N_POI_CATEGORIES):
            raise ValueError(f"POI category must lie in 0..{N_POI_CATEGORIES - 1}")
        counts: dict[str, np.ndarray] = {}
        cells = geohash_encode_many(lng, lat, precision) if len(category) else []
        for cell, cat in zip(cells, category):
            arr = counts.get(cell)
            if arr is None:
                arr = counts[cell] = np.zeros(N_POI_CATEGORIES, dtype=np.int64)
            arr[cat] += 1
        return cls(counts, precision)

    def lookup(self, cells) -> np.ndarray:
        zero = np.zeros(N_POI_CATEGORIES, dtype=np.int64)
        return np.array([self.counts.get(c, zero) for c in cells], dtype=float).reshape(
            len(cells), N_POI_CATEGORIES
        )


class FrequencyTable:
    """Origin and destination visit counts per geohash cell."""

    def __init__(self, origin: Counter, destination: Counter, precision: int):
        self.origin = origin
        self.destination = destination
        self.precision = precision

    @classmethod
    def from_sessions(cls, sessions: Sequence[TripSession], precision=DEFAULT_GEOHASH_PRECISION):
        o, d = _od_arrays(sessions)
        co = Counter(geohash_encode_many(o[:, 0], o[:, 1], precision)) if len(o) else Counter()
        cd = Counter(geohash_encode_many(d[:, 0], d[:, 1], precision)) if len(d) else Counter()
        return cls(co, cd, precision)


@dataclass
class FeatureArtifacts:
    """Lookups built from the training split, shared by every split."""

    stations: StationIndex
    pois: PoiTable
    frequency: FrequencyTable
    landmarks: tuple = DEFAULT_LANDMARKS
    profile_dim: int = DEFAULT_PROFILE_DIM
    precision: int = DEFAULT_GEOHASH_PRECISION
    utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS


def build_artifacts(train_sessions, stations, pois, landmarks=DEFAULT_LANDMARKS,
                    profile_dim=DEFAULT_PROFILE_DIM, precision=DEFAULT_GEOHASH_PRECISION,
                    utc_offset_hours=DEFAULT_UTC_OFFSET_HOURS) -> FeatureArtifacts:
    """``stations`` maps network name to an ``(n, 2)`` lng/lat array;
    ``pois`` is an ``(n, 3)`` array of lng, lat, category."""
    pois = np.asarray(pois, dtype=float).reshape(-1, 3)
    return FeatureArtifacts(
        stations=StationIndex(stations),
        pois=PoiTable.from_points(pois[:, 0], pois[:, 1], pois[:, 2].astype(np.int64), precision),
        frequency=FrequencyTable.from_sessions(train_sessions, precision),
        landmarks=tuple(tuple(l) for l in landmarks),
        profile_dim=profile_dim,
        precision=precision,
        utc_offset_hours=utc_offset_hours,
    )


# --------------------------------------------------------------------------- per-family features


def time_features(timestamp: int, utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS):
    """``(hour, weekday, is_weekend)`` in local time; Monday is weekday 0."""
    local = int(timestamp) + int(round(utc_offset_hours * 3600))
    hour = (local // 3600) % 24
    weekday = (local // 86400 + 3) % 7  # 1970-01-01 was a Thursday
    return hour, weekday, int(weekday >= 5)


def plan_mode_features(plans) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode block (11 x 6, flattened) and aggregate block (23 values).

    A mode shown more than once contributes its best-ranked plan to the
    per-mode block; aggregates use every plan. Argmode ties resolve to the
    best-ranked plan.
    """
    if not plans:
        raise ValueError("plan_mode_features needs at least one plan")
    plans = sorted(plans, key=lambda p: p.display_rank)
    block = np.full((N_MODES, len(MODE_FIELDS)), MISSING)
    block[:, -1] = 0.0
    dist = np.array([p.distance_m for p in plans], dtype=float)
    price = np.array([p.price_cent for p in plans], dtype=float)
    eta = np.array([p.eta_s for p in plans], dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        speed = np.where(eta > 0, dist / np.where(eta > 0, eta, 1.0), MISSING)
    for i, p in reversed(list(enumerate(plans))):
        block[p.mode - 1] = (dist[i], price[i], eta[i], price[i] * eta[i], speed[i], 1.0)

    agg = []
    for values in (dist, price, eta, speed):
        v = values[~np.isnan(values)]
        if len(v):
            agg.extend([v.max(), v.min(), v.mean(), v.std()])
        else:
            agg.extend([MISSING] * 4)
    modes = np.array([p.mode for p in plans], dtype=float)
    agg.append(modes[0])
    for values in (dist, eta, price):
        agg.append(modes[int(np.argmax(values))])
        agg.append(modes[int(np.argmin(values))])
    return block.ravel(), np.array(agg, dtype=float)


def frequency_and_landmark_features(sessions, frequency: FrequencyTable, landmarks):
    """O/D cell visit counts (from the training table) and landmark distances."""
    o, d = _od_arrays(sessions)
    n = len(o)
    freq = np.zeros((n, 2))
    lm = np.zeros((n, 2 * len(landmarks)))
    if n == 0:
        return freq, lm
    co = geohash_encode_many(o[:, 0], o[:, 1], frequency.precision)
    cd = geohash_encode_many(d[:, 0], d[:, 1], frequency.precision)
    freq[:, 0] = [frequency.origin.get(c, 0) for c in co]
    freq[:, 1] = [frequency.destination.get(c, 0) for c in cd]
    for j, (_, lng, lat) in enumerate(landmarks):
        lm[:, j] = haversine_m(o, np.array([lng, lat]))
        lm[:, len(landmarks) + j] = haversine_m(d, np.array([lng, lat]))
    return freq, lm


def _od_arrays(sessions):
    o = np.array([s.query.origin for s in sessions], dtype=float).reshape(-1, 2)
    d = np.array([s.query.destination for s in sessions], dtype=float).reshape(-1, 2)
    return o, d


# --------------------------------------------------------------------------- table assembly


def feature_schema(landmarks=DEFAULT_LANDMARKS, profile_dim=DEFAULT_PROFILE_DIM):
    """Ordered ``(column_name, family)`` pairs for a configuration."""
    cols = [(c, "time") for c in ("hour", "weekday", "is_weekend")]
    cols += [(c, "location") for c in ("o_lng", "o_lat", "d_lng", "d_lat", "od_distance_m")]
    cols += [(f"mode{m}_{f}", "mode") for m in range(1, N_MODES + 1) for f in MODE_FIELDS]
    cols += [(f"plan_{f}_{s}", "plan") for f in AGG_FIELDS for s in AGG_STATS]
    cols += [(c, "plan") for c in ARGMODE_FIELDS]
    for end in ("o", "d"):
        for net in NETWORKS:
            cols += [(f"{end}_{net}_nn{k + 1}_m", "station") for k in range(K_NEAREST)]
            cols += [(f"{end}_{net}_within_{int(RADIUS_M)}m", "station")]
    cols += [(f"{end}_poi_{c:02d}", "poi") for end in ("o", "d") for c in range(N_POI_CATEGORIES)]
    cols += [("o_cell_freq", "frequency"), ("d_cell_freq", "frequency")]
    cols += [(f"{end}_dist_{name}_m", "landmark") for end in ("o", "d") for name, *_ in landmarks]
    cols += [(f"profile_p{i}", "profile") for i in range(profile_dim)]
    return cols


def build_feature_table(sessions: Sequence[TripSession], artifacts: FeatureArtifacts) -> FeatureTable:
    schema = feature_schema(artifacts.landmarks, artifacts.profile_dim)
    names = [c for c, _ in schema]
    families = [f for _, f in schema]
    n = len(sessions)
    parts = []

    parts.append(np.array(
        [time_features(s.timestamp, artifacts.utc_offset_hours) for s in sessions], dtype=float
    ).reshape(n, 3))
    o, d = _od_arrays(sessions)
    parts.append(np.column_stack([o, d, haversine_m(o, d) if n else np.empty(0)]).reshape(n, 5))

    mode_rows, agg_rows = [], []
    for s in sessions:
        blk, agg = plan_mode_features(s.plans)
        mode_rows.append(blk)
        agg_rows.append(agg)
    parts.append(np.array(mode_rows, dtype=float).reshape(n, N_MODES * len(MODE_FIELDS)))
    parts.append(np.array(agg_rows, dtype=float).reshape(n, len(AGG_FIELDS) * 4 + len(ARGMODE_FIELDS)))

    for pts in (o, d):
        for net in NETWORKS:
            if n:
                parts.append(artifacts.stations.nearest(net, pts))
                parts.append(artifacts.stations.count_within(net, pts).astype(float)[:, None])
            else:
                parts.append(np.empty((0, K_NEAREST + 1)))
    for pts in (o, d):
        cells = geohash_encode_many(pts[:, 0], pts[:, 1], artifacts.pois.precision) if n else []
        parts.append(artifacts.pois.lookup(list(cells)))

    freq, lm = frequency_and_landmark_features(sessions, artifacts.frequency, artifacts.landmarks)
    parts += [freq, lm]

    prof = np.zeros((n, artifacts.profile_dim))
    for i, s in enumerate(sessions):
        if s.profile is not None:
            if len(s.profile.attributes) != artifacts.profile_dim:
                raise SchemaError(
                    f"profile {s.profile.profile_id!r} has {len(s.profile.attributes)} attributes, "
                    f"expected {artifacts.profile_dim}"
                )
            prof[i] = s.profile.attributes
    parts.append(prof)

    rows = np.hstack(parts) if n else np.empty((0, len(names)))
    return FeatureTable(names, rows, np.array([s.label for s in sessions], dtype=np.int64),
                        [s.session_id for s in sessions], families)
