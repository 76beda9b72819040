"""File-backed pipeline stages shared by the individual subcommands and ``pipeline``.

Each stage reads its inputs from, and writes its artefacts to, one output
directory, so running the stages one by one and running ``pipeline`` yield the
same files.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, cluster_settings, predict_settings
from .deepcluster import cluster_network
from .ingest import (CalendarFilter, SpeedSeries, apply_calendar_filter, fill_gaps, load_csv,
                     trim_to_days, write_csv)
from .neuralnet import checkpoint
from .predict import (GroupModel, TrainHistory, evaluate_models, group_samples, horizon_label,
                      predict_normalized, reduction_ratio, train_gm, train_im)
from .raster import rasterize, write_pgm, normalize_rows
from .report import dumps, emit_report
from .seeding import named_rng
from .series import (acf, input_length, mean_acf, select_interval, similarity_cdf, split_periodic,
                     traffic_similarity)
from .synth import SynthSpec, default_archetypes, generate

log = logging.getLogger(__name__)

CLEAN_CSV = "clean.csv"


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, command: str, cfg: Config, inputs=()) -> Path:
    import matplotlib
    import scipy
    manifest = {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "seed": cfg["run"]["seed"],
        "inputs": {str(p): file_digest(p) for p in inputs if Path(p).is_file()},
        "versions": {"trafficast": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "matplotlib": matplotlib.__version__},
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(dumps(manifest), encoding="utf-8")
    return path


# -- data ----------------------------------------------------------------------

def run_synth(cfg: Config, out_dir) -> dict[str, Path]:
    s = cfg["synth"]
    archetypes = default_archetypes()
    if s["sigma_obs"] is not None:
        from dataclasses import replace
        archetypes = [replace(a, sigma_obs=s["sigma_obs"]) for a in archetypes]
    spec = SynthSpec(archetypes=tuple(archetypes), segments_per_archetype=s["segments_per_archetype"],
                     days=s["days"], period=cfg["data"]["period"], seed=cfg["run"]["seed"],
                     utc_offset_hours=cfg["data"]["utc_offset_hours"])
    if spec.step != cfg["data"]["step"]:
        raise ValueError(f"data.step must be {spec.step} for period {spec.period}")
    series, labels = generate(spec)
    out = Path(out_dir)
    speeds = write_csv(series, out / "speeds.csv")
    label_path = out / "labels.csv"
    with open(label_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_id", "archetype"])
        w.writerows(labels.items())
    return {"speeds": speeds, "labels": label_path}


def prepare_series(cfg: Config, path) -> list[SpeedSeries]:
    """Load, fill short gaps, trim to whole days and drop excluded calendar days."""
    d = cfg["data"]
    series = load_csv(path, d["step"], d["utc_offset_hours"])
    filt = CalendarFilter(d["exclude_weekends"], tuple(d["exclude_dates"]))
    out = []
    for s in series:
        s = fill_gaps(s, d["max_gap"])
        s = trim_to_days(s, d["period"], d["utc_offset_hours"])
        out.append(apply_calendar_filter(s, filt, d["period"], d["utc_offset_hours"]))
    return out


def run_ingest(cfg: Config, input_path, out_dir) -> Path:
    series = prepare_series(cfg, input_path)
    return write_csv(series, Path(out_dir) / CLEAN_CSV)


def load_clean(cfg: Config, out_dir) -> list[SpeedSeries]:
    """Reload the cleaned CSV; removed days come back as missing periods."""
    path = Path(out_dir) / CLEAN_CSV
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found; run 'ingest' first")
    return load_csv(path, cfg["data"]["step"], cfg["data"]["utc_offset_hours"])


def day_grids(cfg: Config, series) -> list:
    return [split_periodic(s, cfg["data"]["period"]) for s in _pad(cfg, series)]


def _pad(cfg, series):
    """Extend each series with NaN so it covers whole periods (reloaded CSVs may end early)."""
    p = cfg["data"]["period"]
    out = []
    for s in series:
        extra = -len(s) % p
        if extra:
            s = SpeedSeries(s.segment_id, s.t0, s.step, np.concatenate([s.values, np.full(extra, np.nan)]))
        out.append(s)
    return out


# -- analysis ------------------------------------------------------------------

def run_similarity(cfg: Config, out_dir) -> tuple[Path, float]:
    series = load_clean(cfg, out_dir)
    period = cfg["data"]["period"]
    sims = [traffic_similarity(s.values, period).values for s in series]
    cdf = similarity_cdf(np.concatenate(sims))
    path = Path(out_dir) / "similarity.csv"
    np.savetxt(path, cdf, delimiter=",", header="threshold,fraction", comments="", fmt="%.17g")
    below = float(cdf[np.searchsorted(cdf[:, 0], 0.2), 1])
    return path, below


def acf_profiles(cfg: Config, series):
    lag = cfg["interval"]["max_lag"]
    return {g.segment_id: acf(g.flatten(), lag) for g in day_grids(cfg, series)}


def run_acf(cfg: Config, out_dir) -> Path:
    profiles = acf_profiles(cfg, load_clean(cfg, out_dir))
    mean = mean_acf(list(profiles.values()))
    path = Path(out_dir) / "acf.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lag", "mean", *profiles])
        for i in range(mean.max_lag):
            w.writerow([i + 1, repr(float(mean.coefficients[i])),
                        *(repr(float(p.coefficients[i])) for p in profiles.values())])
    return path


def run_select_interval(cfg: Config, out_dir) -> dict:
    profiles = acf_profiles(cfg, load_clean(cfg, out_dir))
    mean = mean_acf(list(profiles.values()))
    threshold = cfg["interval"]["threshold"]
    stride = select_interval(mean, threshold)
    result = {"threshold": threshold, "stride": stride,
              "input_length": input_length(cfg["data"]["period"], stride),
              "confidence_band": mean.confidence_band,
              "acf": [float(c) for c in mean.coefficients]}
    (Path(out_dir) / "interval.json").write_text(dumps(result), encoding="utf-8")
    return result


def run_rasterize(cfg: Config, out_dir, segment: str | None = None, days=None) -> list[Path]:
    grids = day_grids(cfg, load_clean(cfg, out_dir))
    if segment is not None:
        grids = [g for g in grids if g.segment_id == segment]
        if not grids:
            raise KeyError(f"unknown segment {segment}")
    folder = Path(out_dir) / "rasters"
    folder.mkdir(parents=True, exist_ok=True)
    R = cfg["cluster"]["resolution"]
    paths = []
    for g in grids:
        picks = range(g.n_days) if days is None else days
        for j in picks:
            if not 0 <= j < g.n_days:
                raise IndexError(f"{g.segment_id}: day {j} outside 0..{g.n_days - 1}")
            img = rasterize(normalize_rows(g.rows[j])[0], R)
            paths.append(write_pgm(img, folder / f"{g.segment_id}_{int(g.day_index[j]):03d}.pgm"))
    return paths


# -- clustering ----------------------------------------------------------------

def run_cluster(cfg: Config, out_dir) -> dict:
    grids = day_grids(cfg, load_clean(cfg, out_dir))
    seed = cfg["run"]["seed"]
    result = cluster_network(grids, cluster_settings(cfg),
                             {"embedder": named_rng(seed, "embedder"), "kmeans": named_rng(seed, "kmeans")})
    c = result.clustering
    out = Path(out_dir)
    payload = {"k": c.k, "assignments": c.assignments, "centroids": c.centroids,
               "silhouette": c.silhouette, "silhouette_per_k": result.silhouettes,
               "inertia": c.inertia, "initial_loss": result.history.initial_loss,
               "epoch_loss": result.history.epoch_loss}
    (out / "clusters.json").write_text(dumps(payload), encoding="utf-8")
    with open(out / "embeddings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_id", *(f"e{i}" for i in range(result.embeddings.shape[1]))])
        for seg, row in zip(result.segment_ids, result.embeddings):
            w.writerow([seg, *(repr(float(v)) for v in row)])
    checkpoint.save(result.model, out / "embedder.ckpt", {"role": "embedder"})
    return payload


def load_assignments(out_dir) -> dict[str, int]:
    path = Path(out_dir) / "clusters.json"
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found; run 'cluster' first")
    return {k: int(v) for k, v in json.loads(path.read_text())["assignments"].items()}


def resolve_stride(cfg: Config, out_dir) -> int:
    if cfg["interval"]["stride"] is not None:
        return cfg["interval"]["stride"]
    path = Path(out_dir) / "interval.json"
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found; run 'select-interval' or set interval.stride")
    return int(json.loads(path.read_text())["stride"])


# -- prediction ----------------------------------------------------------------

def _model_path(out_dir, horizon, algorithm, key) -> Path:
    return Path(out_dir) / "models" / f"h{horizon}_{algorithm.lower()}_{key}.ckpt"


def run_train(cfg: Config, out_dir) -> list[Path]:
    series = load_clean(cfg, out_dir)
    assignments = load_assignments(out_dir)
    stride = resolve_stride(cfg, out_dir)
    n_in = input_length(cfg["data"]["period"], stride)
    pc = predict_settings(cfg)
    seed = cfg["run"]["seed"]
    by_id = {s.segment_id: s for s in series}
    groups = sorted(set(assignments.values()))
    folder = Path(out_dir) / "models"
    folder.mkdir(parents=True, exist_ok=True)
    for stale in folder.glob("h*_*.ckpt"):  # evaluate globs this folder
        stale.unlink()
    paths = []
    for h in cfg["predict"]["horizons"]:
        jobs = [("GM", f"g{g}", g, [by_id[s] for s in by_id if assignments[s] == g]) for g in groups]
        if cfg["predict"]["include_im"]:
            jobs += [("IM", seg, assignments[seg], [by_id[seg]]) for seg in by_id]
        for algo, key, g, members in jobs:
            rng = named_rng(seed, algo.lower(), h, key)
            gm = (train_gm(members, n_in, stride, h, pc, rng, g) if algo == "GM"
                  else train_im(members[0], n_in, stride, h, pc, rng, g))
            meta = {"algorithm": algo, "group": g, "members": gm.members, "n_in": n_in,
                    "stride": stride, "horizon": h, "convention": gm.convention,
                    "best_epoch": gm.history.best_epoch, "train_loss": gm.history.train_loss,
                    "val_mre": gm.history.val_mre,
                    "scalers": {s: [sc.min, sc.max] for s, sc in gm.scalers.items()}}
            paths.append(checkpoint.save(gm.model, _model_path(out_dir, h, algo, key), meta))
            log.info("trained %s %s horizon %d", algo, key, h)
    return paths


def _load_models(cfg: Config, out_dir, series, horizon, algorithm) -> list[GroupModel]:
    by_id = {s.segment_id: s for s in series}
    pc = predict_settings(cfg)
    models = []
    for path in sorted((Path(out_dir) / "models").glob(f"h{horizon}_{algorithm.lower()}_*.ckpt")):
        model, meta = checkpoint.load(path)
        members = [by_id[s] for s in meta["members"]]
        train, test, mask = group_samples(members, meta["n_in"], meta["stride"], horizon, pc)
        models.append(GroupModel(meta["group"], meta["members"], model, meta["n_in"], meta["stride"],
                                 horizon, meta["convention"], dict(train.scalers),
                                 TrainHistory(meta["train_loss"], meta["val_mre"], meta["best_epoch"]),
                                 train, test, mask))
    return models


def run_evaluate(cfg: Config, out_dir) -> dict:
    series = load_clean(cfg, out_dir)
    assignments = load_assignments(out_dir)
    out = Path(out_dir)
    algorithms = ["GM"] + (["IM"] if cfg["predict"]["include_im"] else [])
    rows, segments, n_models = [], {}, {}
    pred_rows = []
    for h in cfg["predict"]["horizons"]:
        for algo in algorithms:
            models = _load_models(cfg, out_dir, series, h, algo)
            if not models:
                raise FileNotFoundError(f"no {algo} checkpoints for horizon {h}; run 'train' first")
            n_models[f"{h}/{algo}"] = len(models)
            rep = evaluate_models(models, assignments)
            for g, m in sorted(rep.groups.items()):
                rows.append({"horizon": h, "group": g, "algorithm": algo, "train_mre": m.train_mre,
                             "test_mre": m.mre, "gap": m.gap, "mare": m.mare, "mire": m.mire})
            segments[f"{h}/{algo}"] = {s: {"test_mre": rep.segment_mre[s],
                                           "train_mre": rep.train_segment_mre[s],
                                           "excluded": rep.excluded[s]} for s in rep.segment_mre}
            for gm in models:
                test = gm.test_samples
                pred = test.denormalize(predict_normalized(gm.model, test.inputs))
                true = test.true_speeds()
                with np.errstate(divide="ignore", invalid="ignore"):
                    re = np.where(true > 0, np.abs(true - pred) / true, np.nan)
                for seg, t, a, b, e in zip(test.segment_ids, test.target_times, true, pred, re):
                    pred_rows.append((h, algo, seg, int(t), a, b, e))
    pred_rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["horizon", "algorithm", "segment_id", "timestamp", "true", "pred", "re"])
        for h, algo, seg, t, a, b, e in pred_rows:
            w.writerow([h, algo, seg, t, repr(float(a)), repr(float(b)), repr(float(e))])
    payload = {"rows": rows, "segments": segments, "models": n_models,
               "n_segments": len(assignments), "k": len(set(assignments.values()))}
    (out / "evaluation.json").write_text(dumps(payload), encoding="utf-8")
    return payload


def run_report(cfg: Config, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    path = out / "evaluation.json"
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found; run 'evaluate' first")
    ev = json.loads(path.read_text())
    k, n = ev["k"], ev["n_segments"]
    gm_counts = {key: v for key, v in ev["models"].items() if key.endswith("/GM")}
    extra = {"n_segments": n, "k": k, "gm_models_per_horizon": gm_counts,
             "model_reduction": reduction_ratio(n, k),
             "horizon_labels": {str(h): horizon_label(h) for h in cfg["predict"]["horizons"]}}
    predictions = _prediction_excerpt(out / "predictions.csv", cfg)
    return emit_report(ev["rows"], out, extra, predictions)


def _prediction_excerpt(path, cfg):
    if not path.is_file():
        return None
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return None
    first = rows[0]
    pick = [r for r in rows if (r["horizon"], r["algorithm"], r["segment_id"]) ==
            (first["horizon"], first["algorithm"], first["segment_id"])][:2 * cfg["data"]["period"]]
    return {"times": np.array([int(r["timestamp"]) for r in pick]),
            "true": np.array([float(r["true"]) for r in pick]),
            "pred": np.array([float(r["pred"]) for r in pick]),
            "title": f"{first['segment_id']} {first['algorithm']} horizon {first['horizon']}"}


STAGES = ("ingest", "select-interval", "cluster", "train", "evaluate", "report")


def run_pipeline(cfg: Config, input_path, out_dir) -> dict:
    """ingest -> select-interval -> cluster -> train -> evaluate -> report."""
    run_ingest(cfg, input_path, out_dir)
    interval = run_select_interval(cfg, out_dir)
    clusters = run_cluster(cfg, out_dir)
    run_train(cfg, out_dir)
    run_evaluate(cfg, out_dir)
    paths = run_report(cfg, out_dir)
    return {"stride": interval["stride"], "k": clusters["k"], "paths": paths}
