"""Synthetic city generator with a planted multinomial-logit choice model.

Each session samples an OD pair (with landmark hot spots at peak hours),
a display list of 4-8 modes, and per-mode distance/ETA/price from a fare
catalogue. The click is drawn from a softmax over the displayed modes of

    V_m = ASC_m + Distance_m * distance_m + Cost_all_mode * price_m,

with the bus+taxi alternative as baseline (its ASC and distance
coefficient are zero), then replaced by "no click" with probability
``no_click_rate``. The probabilities and coefficients are written to
sidecar files so estimators can be checked against them.
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from typing import Optional

import numpy as np

from .config import apply_mapping, coerce
from .datamodel import (
    CATALOG,
    N_CLASSES,
    N_MODES,
    PlanOption,
    QueryRecord,
    TripSession,
    UserProfile,
    format_number,
    write_dataset,
)
from .errors import ConfigError
from .features.geo import haversine_m
from .features.table import DEFAULT_LANDMARKS, N_POI_CATEGORIES

logger = logging.getLogger(__name__)

BASELINE_MODE = 8

# mode id -> (speed m/s, price per km in cents, flat fare in cents, detour factor)
DEFAULT_MODE_TABLE = {
    1: (4.5, 0.0, 200.0, 1.5),
    2: (8.5, 20.0, 300.0, 1.3),
    3: (11.0, 0.0, 0.0, 1.4),
    4: (10.0, 230.0, 1300.0, 1.4),
    5: (1.3, 0.0, 0.0, 1.2),
    6: (3.8, 0.0, 0.0, 1.25),
    7: (6.5, 20.0, 400.0, 1.4),
    8: (7.0, 120.0, 800.0, 1.45),
    9: (7.0, 20.0, 350.0, 1.35),
    10: (9.0, 120.0, 1000.0, 1.35),
    11: (6.0, 20.0, 450.0, 1.4),
}

# how often each mode makes it into a display list (relative weights)
DEFAULT_DISPLAY_WEIGHTS = {1: 1.0, 2: 1.0, 3: 0.6, 4: 0.6, 5: 0.5, 6: 0.5, 7: 0.8, 8: 0.3,
                           9: 0.5, 10: 0.5, 11: 0.3}

DEFAULT_TRUE_BETA = {
    "ASC_bus": 2.94,
    "ASC_metro": 3.26,
    "ASC_drive": 2.40,
    "ASC_taxi": 2.38,
    "ASC_walk": 5.68,
    "ASC_bike": 1.93,
    "ASC_metro+bus": 3.27,
    "ASC_metro+bike": 1.90,
    "ASC_metro+taxi": 1.82,
    "ASC_metro+bus+bike": 0.29,
    "Distance_bus": -4.0e-05,
    "Distance_metro": 2.0e-05,
    "Distance_drive": -1.0e-04,
    "Distance_taxi": -1.0e-04,
    "Distance_walk": -6.0e-04,
    "Distance_bike": -1.5e-04,
    "Distance_metro+bus": -3.0e-05,
    "Distance_metro+bike": -1.0e-05,
    "Distance_metro+taxi": -2.5e-05,
    "Distance_metro+bus+bike": -1.0e-05,
    "Cost_all_mode": -2.0e-04,
}

HOUR_WEIGHTS = np.array([0.2, 0.1, 0.1, 0.1, 0.1, 0.3, 0.8, 2.5, 3.0, 2.0, 1.2, 1.2,
                         1.3, 1.2, 1.2, 1.3, 1.6, 2.6, 3.0, 2.2, 1.5, 1.0, 0.7, 0.4])
MORNING_HOURS = range(7, 10)
EVENING_HOURS = range(17, 20)


def true_beta_names() -> list[str]:
    names = [f"ASC_{CATALOG.name(m)}" for m in range(1, N_MODES + 1) if m != BASELINE_MODE]
    names += [f"Distance_{CATALOG.name(m)}" for m in range(1, N_MODES + 1) if m != BASELINE_MODE]
    return names + ["Cost_all_mode"]


@dataclass
class SynthConfig:
    seed: int = 0
    n_sessions: int = 20000
    n_profiles: int = 500
    profile_dim: int = 66
    profile_missing_rate: float = 0.1
    city_bbox: tuple[float, ...] = (115.9, 116.8, 39.6, 40.4)
    city_center: tuple[float, ...] = (116.40, 39.91)
    center_spread_deg: float = 0.08
    landmarks: tuple = DEFAULT_LANDMARKS
    landmark_peak_weight: float = 0.15
    landmark_offpeak_weight: float = 0.03
    trip_median_m: float = 5000.0
    trip_sigma: float = 0.8
    bus_stations: int = 400
    metro_stations: int = 120
    n_pois: int = 6000
    mode_table: dict = field(default_factory=lambda: dict(DEFAULT_MODE_TABLE))
    display_weights: dict = field(default_factory=lambda: dict(DEFAULT_DISPLAY_WEIGHTS))
    display_min: int = 4
    display_max: int = 8
    eta_noise_sigma: float = 0.15
    price_noise_sigma: float = 0.2
    true_beta: dict = field(default_factory=lambda: dict(DEFAULT_TRUE_BETA))
    no_click_rate: float = 0.0874
    start_date: str = "2018-10-01"
    end_date: str = "2018-11-30"
    utc_offset_hours: float = 8.0

    def validate(self):
        if self.n_sessions < 0:
            raise ConfigError("n_sessions must be >= 0")
        if not 0.0 <= self.no_click_rate < 1.0:
            raise ConfigError("no_click_rate must lie in [0, 1)")
        if len(self.city_bbox) != 4 or self.city_bbox[0] >= self.city_bbox[1] or self.city_bbox[2] >= self.city_bbox[3]:
            raise ConfigError("city_bbox must be lng_min,lng_max,lat_min,lat_max")
        if sorted(self.mode_table) != list(range(1, N_MODES + 1)):
            raise ConfigError("mode_table must cover modes 1..11")
        for m, (speed, per_km, flat, detour) in self.mode_table.items():
            if speed <= 0:
                raise ConfigError(f"mode {m}: speed must be > 0")
            if per_km < 0 or flat < 0 or detour < 1:
                raise ConfigError(f"mode {m}: fares must be >= 0 and detour >= 1")
        if not 1 <= self.display_min <= self.display_max <= N_MODES:
            raise ConfigError("display size bounds must satisfy 1 <= min <= max <= 11")
        if self.n_profiles < 1 or self.profile_dim < 0:
            raise ConfigError("need n_profiles >= 1 and profile_dim >= 0")
        unknown = set(self.true_beta) - set(true_beta_names())
        if unknown:
            raise ConfigError(f"unknown true_beta entries: {sorted(unknown)}")
        if self.eta_noise_sigma < 0 or self.price_noise_sigma < 0:
            raise ConfigError("noise sigmas must be >= 0")
        return self

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "SynthConfig":
        """Build from flat keys; tables use ``speed.<mode>``, ``price_per_km.<mode>``,
        ``flat_fare.<mode>``, ``detour.<mode>``, ``display.<mode>``, ``beta.<name>``
        and ``landmark.<name> = lng,lat``."""
        cfg = apply_mapping(cls(), mapping)
        table = {m: list(v) for m, v in cfg.mode_table.items()}
        landmarks = {name: (lng, lat) for name, lng, lat in cfg.landmarks}
        custom_landmarks = False
        for key, value in mapping.items():
            if "." not in key:
                continue
            head, tail = key.split(".", 1)
            if head in ("speed", "price_per_km", "flat_fare", "detour", "display"):
                mode = _mode_key(tail)
                if head == "display":
                    cfg.display_weights[mode] = coerce(value, float)
                else:
                    col = ("speed", "price_per_km", "flat_fare", "detour").index(head)
                    table[mode][col] = coerce(value, float)
            elif head == "beta":
                cfg.true_beta[tail] = coerce(value, float)
            elif head == "landmark":
                if not custom_landmarks:
                    landmarks, custom_landmarks = {}, True
                lng, lat = coerce(value, tuple[float, ...])
                landmarks[tail] = (lng, lat)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        cfg.mode_table = {m: tuple(v) for m, v in table.items()}
        cfg.landmarks = tuple((name, lng, lat) for name, (lng, lat) in landmarks.items())
        return cfg.validate()


def _mode_key(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        try:
            return CATALOG.mode_id(text)
        except KeyError:
            raise ConfigError(f"unknown mode {text!r}") from None


@dataclass
class SynthResult:
    sessions: list
    probabilities: np.ndarray  # n x 12, column 0 is no-click
    true_labels: np.ndarray
    stations: dict
    pois: np.ndarray
    true_beta: dict


# --------------------------------------------------------------------------- sampling


def _local_epoch(date: str, utc_offset_hours: float) -> int:
    d = datetime.strptime(date, "%Y-%m-%d").replace(tzinfo=timezone(timedelta(hours=utc_offset_hours)))
    return int(d.timestamp())


def _clip_to_bbox(pts, bbox):
    lng = np.clip(pts[:, 0], bbox[0], bbox[1])
    lat = np.clip(pts[:, 1], bbox[2], bbox[3])
    return np.column_stack([lng, lat])


def _city_points(rng, n, cfg, uniform_share=0.2):
    pts = np.empty((n, 2))
    uniform = rng.random(n) < uniform_share
    bbox = cfg.city_bbox
    pts[:, 0] = np.where(uniform, rng.uniform(bbox[0], bbox[1], n),
                         cfg.city_center[0] + cfg.center_spread_deg * 1.3 * rng.standard_normal(n))
    pts[:, 1] = np.where(uniform, rng.uniform(bbox[2], bbox[3], n),
                         cfg.city_center[1] + cfg.center_spread_deg * rng.standard_normal(n))
    return _clip_to_bbox(pts, bbox)


def _near_landmarks(rng, n, cfg, spread=0.01):
    lm = np.array([(lng, lat) for _, lng, lat in cfg.landmarks], dtype=float).reshape(-1, 2)
    pick = rng.integers(0, len(lm), n)
    return _clip_to_bbox(lm[pick] + spread * rng.standard_normal((n, 2)), cfg.city_bbox)


def _offset_points(rng, origins, cfg):
    n = len(origins)
    dist = cfg.trip_median_m * np.exp(cfg.trip_sigma * rng.standard_normal(n))
    bearing = rng.uniform(0, 2 * np.pi, n)
    dlat = dist * np.cos(bearing) / 111_195.0
    dlng = dist * np.sin(bearing) / (111_195.0 * np.cos(np.radians(origins[:, 1])))
    return _clip_to_bbox(origins + np.column_stack([dlng, dlat]), cfg.city_bbox)


def _sample_pois(rng, cfg):
    n = cfg.n_pois
    near_lm = rng.random(n) < 0.2
    pts = np.where(near_lm[:, None], _near_landmarks(rng, n, cfg, 0.02), _city_points(rng, n, cfg, 0.3))
    # the first four categories play the role of transport hubs / tourist areas
    cat = np.where(near_lm, rng.integers(0, 4, n), rng.integers(0, N_POI_CATEGORIES, n))
    return np.column_stack([pts, cat.astype(float)])


def generate(cfg: SynthConfig) -> SynthResult:
    """Sample a full synthetic dataset; deterministic given ``cfg.seed``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_sessions

    stations = {
        "bus": _city_points(rng, cfg.bus_stations, cfg, 0.3),
        "metro": _city_points(rng, cfg.metro_stations, cfg, 0.15),
    }
    pois = _sample_pois(rng, cfg)
    profiles = [
        UserProfile(f"u{i:05d}", tuple(int(b) for b in (rng.random(cfg.profile_dim) < 0.2)))
        for i in range(cfg.n_profiles)
    ]

    # timestamps: uniform day, peaked hour of day
    t0 = _local_epoch(cfg.start_date, cfg.utc_offset_hours)
    n_days = (_local_epoch(cfg.end_date, cfg.utc_offset_hours) - t0) // 86400 + 1
    day = rng.integers(0, n_days, n)
    hour = rng.choice(24, size=n, p=HOUR_WEIGHTS / HOUR_WEIGHTS.sum())
    ts = t0 + day * 86400 + hour * 3600 + rng.integers(0, 3600, n)

    morning = np.isin(hour, MORNING_HOURS)
    evening = np.isin(hour, EVENING_HOURS)
    base_w = cfg.landmark_offpeak_weight
    peak_w = cfg.landmark_peak_weight
    # landmarks attract destinations in the morning and emit origins in the evening
    o_lm = rng.random(n) < np.where(evening, peak_w, base_w)
    d_lm = rng.random(n) < np.where(morning, peak_w, base_w)
    origins = np.where(o_lm[:, None], _near_landmarks(rng, n, cfg), _city_points(rng, n, cfg))
    dests = np.where(d_lm[:, None], _near_landmarks(rng, n, cfg), _offset_points(rng, origins, cfg))
    # coordinates are stored with 6 decimals; distances derive from the stored values
    origins, dests = np.round(origins, 6), np.round(dests, 6)
    od = haversine_m(origins, dests)

    table = cfg.mode_table
    speed = np.array([table[m][0] for m in range(1, N_MODES + 1)])
    per_km = np.array([table[m][1] for m in range(1, N_MODES + 1)])
    flat = np.array([table[m][2] for m in range(1, N_MODES + 1)])
    detour = np.array([table[m][3] for m in range(1, N_MODES + 1)])
    disp_w = np.array([cfg.display_weights[m] for m in range(1, N_MODES + 1)], dtype=float)
    disp_w /= disp_w.sum()

    # distance per (session, mode); minimum of 50 m keeps ETAs positive
    dist = np.maximum(np.rint(od[:, None] * detour[None, :]), 50.0)
    noise = np.exp(cfg.eta_noise_sigma * rng.standard_normal((n, N_MODES)))
    eta = np.maximum(np.rint(dist / speed[None, :] * noise), 1.0)
    paid = flat > 0
    # fare noise (discounts, surge) keeps price from being a linear function of distance
    fare = (flat[None, :] + per_km[None, :] * dist / 1000.0) * np.exp(
        cfg.price_noise_sigma * rng.standard_normal((n, N_MODES)))
    price = np.where(paid[None, :], np.rint(fare), 0.0)

    beta = {k: 0.0 for k in true_beta_names()}
    beta.update(cfg.true_beta)
    asc = np.zeros(N_MODES)
    b_dist = np.zeros(N_MODES)
    for m in range(1, N_MODES + 1):
        if m == BASELINE_MODE:
            continue
        asc[m - 1] = beta[f"ASC_{CATALOG.name(m)}"]
        b_dist[m - 1] = beta[f"Distance_{CATALOG.name(m)}"]
    util = asc[None, :] + b_dist[None, :] * dist + beta["Cost_all_mode"] * price

    sizes = rng.integers(cfg.display_min, cfg.display_max + 1, n)
    probs = np.zeros((n, N_CLASSES))
    labels = np.zeros(n, dtype=np.int64)
    sessions = []
    prof_missing = rng.random(n) < cfg.profile_missing_rate
    prof_pick = rng.integers(0, cfg.n_profiles, n)
    for i in range(n):
        shown = rng.choice(N_MODES, size=sizes[i], replace=False, p=disp_w)
        order = shown[np.argsort(eta[i, shown], kind="stable")]
        v = util[i, order]
        p = np.exp(v - v.max())
        p /= p.sum()
        choice = order[rng.choice(len(order), p=p)] + 1
        probs[i, order + 1] = (1.0 - cfg.no_click_rate) * p
        probs[i, 0] = cfg.no_click_rate
        label = 0 if rng.random() < cfg.no_click_rate else int(choice)
        labels[i] = label
        plans = tuple(
            PlanOption(mode=int(m + 1), distance_m=float(dist[i, m]), eta_s=float(eta[i, m]),
                       price_cent=float(price[i, m]), display_rank=r + 1)
            for r, m in enumerate(order)
        )
        profile = None if prof_missing[i] else profiles[prof_pick[i]]
        q = QueryRecord(
            session_id=f"s{i:07d}",
            profile_id=profile.profile_id if profile else None,
            timestamp=int(ts[i]),
            origin=(float(origins[i, 0]), float(origins[i, 1])),
            destination=(float(dests[i, 0]), float(dests[i, 1])),
        )
        sessions.append(TripSession(q, plans, label, profile,
                                    click_timestamp=int(ts[i]) + 5 if label else None))

    order = np.argsort(ts, kind="stable")
    sessions = [sessions[j] for j in order]
    return SynthResult(sessions, probs[order], labels[order], stations, pois, beta)


def write_synthetic(result: SynthResult, directory, profile_dim: Optional[int] = None) -> None:
    """Write the four data tables plus truth, beta, station and POI sidecars."""
    os.makedirs(directory, exist_ok=True)
    write_dataset(result.sessions, directory, profile_dim=profile_dim)

    def _writer(name):
        fh = open(os.path.join(directory, name), "w", newline="", encoding="utf-8")
        return fh, csv.writer(fh, lineterminator="\n")

    fh, w = _writer("truth.csv")
    with fh:
        w.writerow(["session_id", "true_label", *(f"p{k}" for k in range(N_CLASSES))])
        for s, p in zip(result.sessions, result.probabilities):
            w.writerow([s.session_id, s.label, *(repr(float(x)) for x in p)])
    fh, w = _writer("true_beta.csv")
    with fh:
        w.writerow(["variable", "value"])
        for name in true_beta_names():
            w.writerow([name, repr(float(result.true_beta[name]))])
    fh, w = _writer("stations.csv")
    with fh:
        w.writerow(["network", "lng", "lat"])
        for net in ("bus", "metro"):
            for lng, lat in result.stations[net]:
                w.writerow([net, repr(float(lng)), repr(float(lat))])
    fh, w = _writer("pois.csv")
    with fh:
        w.writerow(["lng", "lat", "category"])
        for lng, lat, cat in result.pois:
            w.writerow([repr(float(lng)), repr(float(lat)), int(cat)])


def load_city(directory):
    """Read ``stations.csv`` and ``pois.csv`` written by :func:`write_synthetic`."""
    stations = {"bus": [], "metro": []}
    with open(os.path.join(directory, "stations.csv"), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            stations.setdefault(row["network"], []).append((float(row["lng"]), float(row["lat"])))
    stations = {k: np.array(v, dtype=float).reshape(-1, 2) for k, v in stations.items()}
    with open(os.path.join(directory, "pois.csv"), newline="", encoding="utf-8") as fh:
        pois = [(float(r["lng"]), float(r["lat"]), float(r["category"])) for r in csv.DictReader(fh)]
    return stations, np.array(pois, dtype=float).reshape(-1, 3)


def load_truth(directory):
    """``(session_ids, true_labels, probabilities, true_beta)`` from the sidecars."""
    ids, labels, probs = [], [], []
    with open(os.path.join(directory, "truth.csv"), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["session_id"])
            labels.append(int(row["true_label"]))
            probs.append([float(row[f"p{k}"]) for k in range(N_CLASSES)])
    beta = {}
    with open(os.path.join(directory, "true_beta.csv"), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            beta[row["variable"]] = float(row["value"])
    return ids, np.array(labels, dtype=np.int64), np.array(probs).reshape(-1, N_CLASSES), beta


def mode_speed_price_summary(sessions) -> dict[int, tuple[float, float]]:
    """Per mode: ``(mean price in cents, mean speed in m/s)`` over displayed plans.

    Plans with a zero ETA have no defined speed and are skipped.
    """
    prices: dict[int, list] = {}
    speeds: dict[int, list] = {}
    skipped = 0
    for s in sessions:
        for p in s.plans:
            if p.eta_s <= 0:
                skipped += 1
                continue
            prices.setdefault(p.mode, []).append(p.price_cent)
            speeds.setdefault(p.mode, []).append(p.distance_m / p.eta_s)
    if skipped:
        logger.warning("skipped %d plans with zero ETA", skipped)
    return {m: (float(np.mean(prices[m])), float(np.mean(speeds[m]))) for m in sorted(prices)}


def write_summary_csv(summary: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "mode_name", "mean_price_cent", "mean_speed_mps"])
        for m, (price, speed) in summary.items():
            w.writerow([m, CATALOG.name(m), format_number(price), format_number(speed)])


def cheapest_generalised_cost_label(session, time_weight: float = 0.2) -> int:
    """Displayed mode minimising ``price_cent + time_weight * eta_s``;
    ties go to the better-ranked plan."""
    best = min(sorted(session.plans, key=lambda p: p.display_rank),
               key=lambda p: p.price_cent + time_weight * p.eta_s)
    return best.mode


def relabel_by_rule(sessions, time_weight: float = 0.2) -> list:
    """Copies of ``sessions`` labelled by :func:`cheapest_generalised_cost_label`."""
    return [replace(s, label=cheapest_generalised_cost_label(s, time_weight)) for s in sessions]
