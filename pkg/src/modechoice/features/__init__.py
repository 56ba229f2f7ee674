from .geo import EARTH_RADIUS_M, geohash_encode, geohash_encode_many, haversine_m
from .stations import StationIndex, station_features
from .table import (
    DEFAULT_LANDMARKS,
    FeatureArtifacts,
    FeatureTable,
    FrequencyTable,
    PoiTable,
    build_artifacts,
    build_feature_table,
    check_same_schema,
    feature_schema,
    frequency_and_landmark_features,
    plan_mode_features,
    time_features,
)

__all__ = [
    "EARTH_RADIUS_M",
    "DEFAULT_LANDMARKS",
    "FeatureArtifacts",
    "FeatureTable",
    "FrequencyTable",
    "PoiTable",
    "StationIndex",
    "build_artifacts",
    "build_feature_table",
    "check_same_schema",
    "feature_schema",
    "frequency_and_landmark_features",
    "geohash_encode",
    "geohash_encode_many",
    "haversine_m",
    "plan_mode_features",
    "station_features",
    "time_features",
]
