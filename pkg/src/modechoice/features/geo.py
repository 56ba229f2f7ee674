"""Great-circle distance and geohash encoding."""
from __future__ import annotations

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"
_BASE32_ARR = np.array(list(BASE32))


def haversine_m(a, b):
    """Great-circle distance in meters between ``(lng, lat)`` points.

    Accepts scalars or broadcastable arrays whose last axis is
    ``(lng, lat)``; returns a float or an array.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lng1, lat1 = np.radians(a[..., 0]), np.radians(a[..., 1])
    lng2, lat2 = np.radians(b[..., 0]), np.radians(b[..., 1])
    s_lat = np.sin((lat2 - lat1) / 2.0)
    s_lng = np.sin((lng2 - lng1) / 2.0)
    h = s_lat * s_lat + np.cos(lat1) * np.cos(lat2) * (s_lng * s_lng)
    d = 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return float(d) if d.ndim == 0 else d


def geohash_encode(lng: float, lat: float, precision: int) -> str:
    """Standard base-32 geohash of a point, ``precision`` characters long."""
    if precision < 1:
        raise ValueError("geohash precision must be >= 1")
    if not (-180.0 <= lng <= 180.0 and -90.0 <= lat <= 90.0):
        raise ValueError(f"coordinates out of range: ({lng}, {lat})")
    return str(geohash_encode_many(np.array([lng]), np.array([lat]), precision)[0])


def geohash_encode_many(lng, lat, precision: int) -> np.ndarray:
    """Vectorised :func:`geohash_encode`; returns an array of strings."""
    if precision < 1:
        raise ValueError("geohash precision must be >= 1")
    lng = np.asarray(lng, dtype=float)
    lat = np.asarray(lat, dtype=float)
    n = lng.shape[0]
    lng_lo, lng_hi = np.full(n, -180.0), np.full(n, 180.0)
    lat_lo, lat_hi = np.full(n, -90.0), np.full(n, 90.0)
    chars = np.zeros((n, precision), dtype=np.int64)
    even = True
    for bit in range(5 * precision):
        if even:
            mid = (lng_lo + lng_hi) / 2.0
            up = lng >= mid
            lng_lo = np.where(up, mid, lng_lo)
            lng_hi = np.where(up, lng_hi, mid)
        else:
            mid = (lat_lo + lat_hi) / 2.0
            up = lat >= mid
            lat_lo = np.where(up, mid, lat_lo)
            lat_hi = np.where(up, lat_hi, mid)
        chars[:, bit // 5] = (chars[:, bit // 5] << 1) | up
        even = not even
    letters = _BASE32_ARR[chars]
    return np.array(["".join(row) for row in letters], dtype=object)
