"""Command-line pipeline: ``modechoice {generate,train,predict,evaluate,mnl,eda}``.

Each subcommand reads an optional flat ``key = value`` file (``--config``)
and ``--set key=value`` overrides. One global ``seed`` feeds every
stochastic stage through :func:`modechoice.config.derive_seed`.

Exit codes: 0 success, 2 configuration error, 3 data or schema error,
4 numeric failure, 1 anything else.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from collections import Counter
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import gbdt, mnl, synthgen
from .config import apply_mapping, coerce, derive_seed, parse_overrides, read_kv_file
from .datamodel import (CATALOG, DEFAULT_PROFILE_DIM, DEFAULT_UTC_OFFSET_HOURS, N_CLASSES,
                        class_distribution, format_number, load_dataset, parse_timestamp,
                        split_by_time)
from .errors import ConfigError, DataError, ModeChoiceError
from .evaluation import evaluate
from .features import (DEFAULT_LANDMARKS, FeatureArtifacts, FeatureTable, FrequencyTable,
                       build_artifacts, build_feature_table, geohash_encode_many)
from .features.table import DEFAULT_GEOHASH_PRECISION
from .resample import ResampleConfig, resample

logger = logging.getLogger("modechoice")

DEFAULT_CUTOFF = "2018-11-24 00:00:00"
MODEL_FILE = "model.txt"
FREQUENCY_FILE = "frequency.csv"
FEATURE_OPTIONS_FILE = "feature_options.txt"


@dataclass
class PipelineConfig:
    data_dir: str = "data"
    queries: Optional[str] = None
    plans: Optional[str] = None
    clicks: Optional[str] = None
    profiles: Optional[str] = None
    city_dir: Optional[str] = None
    split_cutoff: str = DEFAULT_CUTOFF
    geohash_precision: int = DEFAULT_GEOHASH_PRECISION
    profile_dim: int = DEFAULT_PROFILE_DIM
    landmarks: tuple = DEFAULT_LANDMARKS
    utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS
    mnl_specs: str = "all"
    mnl_final_spec: str = "asc+distance+cost"
    out_dir: str = "out"
    seed: int = 0
    resample: ResampleConfig = field(default_factory=ResampleConfig)
    gbdt: gbdt.GbdtConfig = field(default_factory=lambda: gbdt.GbdtConfig())
    synth: dict = field(default_factory=dict)

    def path(self, table: str) -> str:
        explicit = getattr(self, table)
        return explicit if explicit else os.path.join(self.data_dir, f"{table}.csv")

    @property
    def cutoff_timestamp(self) -> int:
        try:
            return parse_timestamp(self.split_cutoff, self.utc_offset_hours)
        except ValueError as exc:
            raise ConfigError(f"split_cutoff: {exc}") from None

    def stage_seeds(self) -> "PipelineConfig":
        """Copy whose resample and gbdt seeds derive from the global seed."""
        return replace(
            self,
            resample=replace(self.resample, seed=derive_seed(self.seed, "resample")),
            gbdt=replace(self.gbdt, seed=derive_seed(self.seed, "gbdt")),
        )

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "PipelineConfig":
        """Top-level keys set fields; ``resample.*``, ``gbdt.*`` and ``synth.*``
        address the nested stage configs; ``landmark.<name> = lng,lat``
        replaces the landmark list."""
        known = {f.name for f in fields(cls)} - {"resample", "gbdt", "synth", "landmarks"}
        prefixes = ("resample.", "gbdt.", "synth.", "landmark.")
        unknown = [k for k in mapping if k not in known and not k.startswith(prefixes)]
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        try:
            cfg = apply_mapping(cls(), {k: v for k, v in mapping.items() if k in known})
            res = apply_mapping(ResampleConfig(), mapping, prefix="resample.")
            boost = apply_mapping(gbdt.GbdtConfig(), mapping, prefix="gbdt.")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for k in mapping:
            head, _, tail = k.partition(".")
            if head == "resample" and tail not in {f.name for f in fields(ResampleConfig)}:
                raise ConfigError(f"unknown config key {k!r}")
            if head == "gbdt" and tail not in {f.name for f in fields(gbdt.GbdtConfig)}:
                raise ConfigError(f"unknown config key {k!r}")
        marks = [(k.split(".", 1)[1], *coerce(v, tuple[float, ...])) for k, v in mapping.items()
                 if k.startswith("landmark.")]
        if any(len(m) != 3 for m in marks):
            raise ConfigError("landmark values must be lng,lat")
        synth = {k.split(".", 1)[1]: v for k, v in mapping.items() if k.startswith("synth.")}
        return replace(cfg, resample=res, gbdt=boost, synth=synth,
                       landmarks=tuple(marks) if marks else cfg.landmarks)


# --------------------------------------------------------------------------- helpers


def _load_config(args) -> PipelineConfig:
    mapping = read_kv_file(args.config) if getattr(args, "config", None) else {}
    mapping.update(parse_overrides(getattr(args, "set", None)))
    for attr, key in (("data", "data_dir"), ("out", "out_dir"), ("seed", "seed")):
        value = getattr(args, attr, None)
        if value is not None:
            mapping[key] = str(value)
    return PipelineConfig.from_mapping(mapping)


def _load_sessions(cfg: PipelineConfig, data_dir: Optional[str] = None):
    if data_dir is not None:
        cfg = replace(cfg, data_dir=data_dir)
    profiles = cfg.path("profiles")
    return load_dataset(cfg.path("queries"), cfg.path("plans"), cfg.path("clicks"),
                        profiles if os.path.exists(profiles) else None,
                        utc_offset_hours=cfg.utc_offset_hours)


def _load_city(directory):
    for name in ("stations.csv", "pois.csv"):
        if not os.path.exists(os.path.join(directory, name)):
            raise DataError(f"missing city file {name}", path=os.path.join(directory, name))
    try:
        return synthgen.load_city(directory)
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed city file: {exc}", path=directory) from None


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return format_number(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def write_training_log(log, path) -> None:
    keys = ["round", "train_loss", "valid_loss", "valid_weighted_f1"]
    keys = [k for k in keys if any(k in e for e in log)] or keys[:2]
    _write_rows(path, keys, ([_fmt(e[k]) if k in e else "" for k in keys] for e in log))


def write_feature_options(art: FeatureArtifacts, path) -> None:
    lines = [f"geohash_precision = {art.precision}", f"profile_dim = {art.profile_dim}",
             f"utc_offset_hours = {art.utc_offset_hours!r}"]
    lines += [f"landmark.{name} = {lng!r},{lat!r}" for name, lng, lat in art.landmarks]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_frequency(freq: FrequencyTable, path) -> None:
    rows = [("origin", c, n) for c, n in sorted(freq.origin.items())]
    rows += [("destination", c, n) for c, n in sorted(freq.destination.items())]
    _write_rows(path, ["end", "cell", "count"], rows)


def read_frequency(path, precision: int) -> FrequencyTable:
    origin, destination = Counter(), Counter()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            (origin if row["end"] == "origin" else destination)[row["cell"]] = int(row["count"])
    return FrequencyTable(origin, destination, precision)


def load_artifacts(model_dir, city_dir) -> FeatureArtifacts:
    """Rebuild the training-time feature lookups saved next to a model."""
    opts = PipelineConfig.from_mapping(read_kv_file(os.path.join(model_dir, FEATURE_OPTIONS_FILE)))
    stations, pois = _load_city(city_dir)
    art = build_artifacts([], stations, pois, opts.landmarks, opts.profile_dim,
                          opts.geohash_precision, opts.utc_offset_hours)
    freq_path = os.path.join(model_dir, FREQUENCY_FILE)
    if not os.path.exists(freq_path):
        raise DataError("missing frequency table saved at training time", path=freq_path)
    return replace(art, frequency=read_frequency(freq_path, opts.geohash_precision))


# --------------------------------------------------------------------------- commands


def cmd_generate(cfg: PipelineConfig) -> dict:
    synth_map = dict(cfg.synth)
    synth_map["seed"] = str(derive_seed(cfg.seed, "generate"))
    scfg = synthgen.SynthConfig.from_mapping(synth_map)
    result = synthgen.generate(scfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    synthgen.write_synthetic(result, cfg.out_dir)
    logger.info("wrote %d sessions to %s", len(result.sessions), cfg.out_dir)
    return {"sessions": len(result.sessions)}


def cmd_train(cfg: PipelineConfig) -> dict:
    """load, split, build lookups on train, featurize, resample train, boost, persist."""
    cfg = cfg.stage_seeds()
    stage = "load"
    try:
        sessions = _load_sessions(cfg)
        stations, pois = _load_city(cfg.city_dir or cfg.data_dir)
        stage = "split"
        train_s, valid_s = split_by_time(sessions, cfg.cutoff_timestamp)
        if not train_s:
            raise DataError(f"no sessions before split cutoff {cfg.split_cutoff}")
        stage = "features"
        art = build_artifacts(train_s, stations, pois, cfg.landmarks, cfg.profile_dim,
                              cfg.geohash_precision, cfg.utc_offset_hours)
        train_t = build_feature_table(train_s, art)
        valid_t = build_feature_table(valid_s, art) if valid_s else None
        stage = "resample"
        fit_t = resample(train_t, cfg.resample)
        stage = "gbdt"
        ens = gbdt.train(fit_t, valid_t, cfg.gbdt)
        stage = "persist"
        os.makedirs(cfg.out_dir, exist_ok=True)
        gbdt.save_model(ens, os.path.join(cfg.out_dir, MODEL_FILE))
        write_training_log(ens.training_log, os.path.join(cfg.out_dir, "training_log.csv"))
        write_frequency(art.frequency, os.path.join(cfg.out_dir, FREQUENCY_FILE))
        write_feature_options(art, os.path.join(cfg.out_dir, FEATURE_OPTIONS_FILE))
        _write_rows(os.path.join(cfg.out_dir, "feature_importance.csv"),
                    ["feature", "split_count", "total_gain"],
                    ((n, c, repr(g)) for n, c, g in gbdt.feature_importance(ens)))
        summary = {"train_rows": train_t.n_rows, "resampled_rows": fit_t.n_rows,
                   "rounds": ens.n_rounds, "model": os.path.join(cfg.out_dir, MODEL_FILE)}
        if valid_t is not None:
            report = evaluate(valid_t.labels, gbdt.predict_label(ens, valid_t))
            report.write_csv(os.path.join(cfg.out_dir, "validation_report.csv"))
            summary["valid_weighted_f1"] = report.weighted_f1
        return summary
    except ModeChoiceError as exc:
        exc.stage = stage
        raise
    except (ValueError, np.linalg.LinAlgError) as exc:
        err = ModeChoiceError(f"{stage} stage failed: {exc}")
        err.stage = stage
        raise err from exc


def cmd_predict(model_path: str, data_dir: Optional[str], out_path: str,
                features_path: Optional[str] = None, city_dir: Optional[str] = None) -> dict:
    """Write ``session_id, predicted_label, p0..p11`` for every session."""
    ens = gbdt.load_model(model_path)
    if features_path is not None:
        table = FeatureTable.load_csv(features_path)
    else:
        if data_dir is None:
            raise ConfigError("predict needs --data or --features")
        cfg = PipelineConfig(data_dir=data_dir)
        art = load_artifacts(os.path.dirname(os.path.abspath(model_path)), city_dir or data_dir)
        cfg = replace(cfg, utc_offset_hours=art.utc_offset_hours)
        table = build_feature_table(_load_sessions(cfg), art)
    proba = gbdt.predict_proba(ens, table)
    labels = np.argmax(proba, axis=1)
    ids = table.session_ids or [str(i) for i in range(table.n_rows)]
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    _write_rows(out_path, ["session_id", "predicted_label"] + [f"p{k}" for k in range(N_CLASSES)],
                ([sid, int(lab)] + [repr(float(p)) for p in row]
                 for sid, lab, row in zip(ids, labels, proba)))
    return {"rows": table.n_rows, "predictions": out_path}


def read_predictions(path) -> dict[str, int]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"session_id", "predicted_label"} <= set(reader.fieldnames):
            raise DataError("predictions need session_id and predicted_label columns", path=path)
        for line, row in enumerate(reader, start=2):
            try:
                out[row["session_id"]] = int(row["predicted_label"])
            except ValueError:
                raise DataError("not an integer", path=path, line=line, column="predicted_label") from None
    return out


def cmd_evaluate(predictions_path: str, cfg: PipelineConfig, out_path: Optional[str] = None,
                 truth_path: Optional[str] = None, exclude_no_click: bool = False) -> dict:
    """Score predictions against the dataset's click labels (or a truth.csv)."""
    pred = read_predictions(predictions_path)
    if truth_path is not None:
        with open(truth_path, newline="", encoding="utf-8") as fh:
            truth = {r["session_id"]: int(r["true_label"]) for r in csv.DictReader(fh)}
    else:
        truth = {s.session_id: s.label for s in _load_sessions(cfg)}
    missing = [sid for sid in truth if sid not in pred]
    if missing:
        raise DataError(f"no prediction for session {missing[0]!r}", path=predictions_path)
    ids = sorted(truth)
    report = evaluate([truth[i] for i in ids], [pred[i] for i in ids], exclude_no_click)
    if out_path is not None:
        report.write_csv(out_path)
    return {"weighted_f1": report.weighted_f1, "sessions": len(ids)}


def _select_specs(cfg: PipelineConfig):
    if cfg.mnl_specs.strip() == "all":
        return mnl.comparison_specs()
    try:
        return [mnl.get_spec(n.strip()) for n in cfg.mnl_specs.split(",") if n.strip()]
    except KeyError as exc:
        raise ConfigError(f"unknown MNL spec {exc}") from None


def cmd_mnl(cfg: PipelineConfig) -> dict:
    sessions = _load_sessions(cfg)
    rows = mnl.compare_models(_select_specs(cfg), sessions)
    os.makedirs(cfg.out_dir, exist_ok=True)
    mnl.write_comparison_csv(rows, os.path.join(cfg.out_dir, "mnl_comparison.csv"))
    try:
        final = mnl.get_spec(cfg.mnl_final_spec)
    except KeyError:
        raise ConfigError(f"unknown MNL spec {cfg.mnl_final_spec!r}") from None
    fitted = next((r.model for r in rows if r.name == final.name and r.model is not None), None)
    if fitted is None:
        fitted = mnl.fit(final, sessions)
    fitted.write_csv(os.path.join(cfg.out_dir, "mnl_coefficients.csv"))
    return {r.name: r.log_likelihood for r in rows}


OD_WINDOWS = {"all": range(24), "morning": synthgen.MORNING_HOURS, "evening": synthgen.EVENING_HOURS}


def od_cell_frequency(sessions, precision: int, utc_offset_hours: float):
    """``(window, end, cell, count, share)`` rows, cells by descending count."""
    hours = np.array([(s.timestamp + utc_offset_hours * 3600) // 3600 % 24 for s in sessions], dtype=int)
    o = np.array([s.query.origin for s in sessions], dtype=float).reshape(-1, 2)
    d = np.array([s.query.destination for s in sessions], dtype=float).reshape(-1, 2)
    cells = {"origin": geohash_encode_many(o[:, 0], o[:, 1], precision) if len(o) else [],
             "destination": geohash_encode_many(d[:, 0], d[:, 1], precision) if len(d) else []}
    out = []
    for window, span in OD_WINDOWS.items():
        keep = np.isin(hours, list(span))
        total = int(keep.sum())
        for end, codes in cells.items():
            counts = Counter(c for c, k in zip(codes, keep) if k)
            for cell, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
                out.append((window, end, cell, n, n / total))
    return out


def cmd_eda(cfg: PipelineConfig) -> dict:
    sessions = _load_sessions(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    synthgen.write_summary_csv(synthgen.mode_speed_price_summary(sessions),
                               os.path.join(cfg.out_dir, "mode_speed_price.csv"))
    dist = class_distribution(sessions)
    _write_rows(os.path.join(cfg.out_dir, "label_frequency.csv"), ["label", "mode_name", "count", "ratio"],
                ((k, CATALOG.label_name(k), n, repr(r)) for k, (n, r) in sorted(dist.items())))
    _write_rows(os.path.join(cfg.out_dir, "od_cell_frequency.csv"), ["window", "end", "cell", "count", "share"],
                ((w, e, c, n, repr(s)) for w, e, c, n, s in
                 od_cell_frequency(sessions, cfg.geohash_precision, cfg.utc_offset_hours)))
    clicked = {k: v for k, v in dist.items() if k != 0}
    top = max(clicked, key=lambda k: clicked[k][0]) if clicked else None
    return {"sessions": len(sessions), "most_clicked": CATALOG.name(top) if top else None}


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modechoice", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="numba worker threads (default: all cores)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, out=True):
        sp.add_argument("--config", help="flat key = value file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
        sp.add_argument("--seed", type=int)
        if data:
            sp.add_argument("--data", help="directory with queries/plans/clicks/profiles CSVs")
        if out:
            sp.add_argument("--out", help="output directory")

    common(sub.add_parser("generate", help="write a synthetic dataset"), data=False)
    common(sub.add_parser("train", help="fit the boosted model"))
    sp = sub.add_parser("predict", help="score sessions with a saved model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data")
    sp.add_argument("--features", help="prebuilt feature table CSV instead of --data")
    sp.add_argument("--city", help="directory with stations.csv and pois.csv (default: --data)")
    sp.add_argument("--out", required=True, help="predictions CSV path")
    sp = sub.add_parser("evaluate", help="weighted F1 of a predictions file")
    common(sp, out=False)
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--truth", help="truth.csv sidecar instead of the dataset's clicks")
    sp.add_argument("--report", help="per-mode report CSV path")
    sp.add_argument("--exclude-no-click", action="store_true")
    common(sub.add_parser("mnl", help="fit and compare logit specifications"))
    common(sub.add_parser("eda", help="descriptive tables"))
    return p


def run(args) -> dict:
    if args.command == "predict":
        return cmd_predict(args.model, args.data, args.out, args.features, args.city)
    cfg = _load_config(args)
    if args.command == "generate":
        return cmd_generate(cfg)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "evaluate":
        return cmd_evaluate(args.predictions, cfg, args.report, args.truth, args.exclude_no_click)
    if args.command == "mnl":
        return cmd_mnl(cfg)
    return cmd_eda(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        import numba
        numba.set_num_threads(max(1, args.threads))
    try:
        summary = run(args)
    except ModeChoiceError as exc:
        stage = getattr(exc, "stage", None)
        print(f"error{f' in {stage} stage' if stage else ''}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    for key, value in summary.items():
        print(f"{key}: {value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
