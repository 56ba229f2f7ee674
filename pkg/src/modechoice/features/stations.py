"""Nearest-station lookups for bus and metro networks.

Neighbour search runs on a KD-tree over unit-sphere coordinates; chord
length is monotone in great-circle distance so the candidate order is
preserved, and the reported distances are re-measured with haversine.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .geo import EARTH_RADIUS_M, haversine_m

NETWORKS = ("bus", "metro")
K_NEAREST = 5
RADIUS_M = 1500.0
# extra KD-tree candidates re-ranked by haversine to absorb chord round-off
_SLACK = 3


def _unit_xyz(points):
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    lng, lat = np.radians(points[:, 0]), np.radians(points[:, 1])
    c = np.cos(lat)
    return np.column_stack([c * np.cos(lng), c * np.sin(lng), np.sin(lat)])


class StationIndex:
    """Station coordinates per network with k-nearest and radius queries."""

    def __init__(self, stations: dict[str, np.ndarray]):
        self.stations = {}
        self._trees = {}
        for net in NETWORKS:
            pts = np.asarray(stations.get(net, np.empty((0, 2))), dtype=float).reshape(-1, 2)
            if len(pts) == 0:
                raise ValueError(f"station index needs at least one {net} station")
            self.stations[net] = pts
            self._trees[net] = cKDTree(_unit_xyz(pts))

    def nearest(self, network: str, points, k: int = K_NEAREST) -> np.ndarray:
        """Distances (m) to the ``k`` nearest stations, ascending, NaN-padded."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        pts = self.stations[network]
        m = min(k + _SLACK, len(pts))
        _, idx = self._trees[network].query(_unit_xyz(points), k=m)
        idx = np.asarray(idx).reshape(len(points), m)
        d = haversine_m(points[:, None, :], pts[idx])
        d = np.sort(d, axis=1)[:, :k]
        if d.shape[1] < k:
            d = np.hstack([d, np.full((len(points), k - d.shape[1]), np.nan)])
        return d

    def count_within(self, network: str, points, radius_m: float = RADIUS_M) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        pts = self.stations[network]
        chord = 2.0 * np.sin(min(radius_m / (2.0 * EARTH_RADIUS_M), np.pi / 2))
        cand = self._trees[network].query_ball_point(_unit_xyz(points), r=chord * (1 + 1e-9) + 1e-12)
        out = np.zeros(len(points), dtype=np.int64)
        for i, c in enumerate(cand):
            if c:
                out[i] = int(np.count_nonzero(haversine_m(points[i], pts[c]) <= radius_m))
        return out


def station_features(point, idx: StationIndex) -> dict[str, np.ndarray]:
    """Per network: 5 nearest distances and the count within 1500 m."""
    out = {}
    for net in NETWORKS:
        out[f"{net}_nearest"] = idx.nearest(net, point)
        out[f"{net}_within"] = idx.count_within(net, point)
    return out
