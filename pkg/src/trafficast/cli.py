"""Command-line entry point: ``trafficast <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("trafficast")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--seed", type=int, help="root seed (overrides run.seed)")
    p.add_argument("--threads", type=int, help="BLAS/OpenMP threads (default 1)")
    p.add_argument("--out-dir", default="out", help="artefact directory (default: out)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trafficast", description="Cluster road segments by daily speed shape "
                     "and forecast speeds with one shared LSTM per cluster.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, text):
        p = sub.add_parser(name, help=text, description=text)
        _common(p)
        return p

    add("synth", "write a labelled synthetic network (speeds.csv, labels.csv)")
    p = add("ingest", "clean a speed CSV into OUT/clean.csv")
    p.add_argument("--input", help="CSV with segment_id,timestamp,speed (default: data.input)")
    add("similarity", "day-to-day similarity CDF of the cleaned data")
    add("acf", "per-segment and mean autocorrelation table")
    p = add("rasterize", "write day images as PGM files")
    p.add_argument("--segment", help="only this segment")
    p.add_argument("--day", type=int, action="append", help="day row(s) to write (default: all)")
    add("cluster", "train the embedder and cluster segments (clusters.json, embeddings.csv)")
    p = add("select-interval", "choose the input stride from the mean autocorrelation")
    p.add_argument("--threshold", type=float, help="override interval.threshold")
    add("train", "train group models (and individual baselines) for each horizon")
    add("evaluate", "score the trained models on the held-out windows")
    add("report", "emit report.json, report.csv and SVG charts")
    p = add("pipeline", "ingest, select-interval, cluster, train, evaluate and report")
    p.add_argument("--input", help="CSV with segment_id,timestamp,speed (default: data.input)")
    return parser


def _input_path(args, cfg) -> Path:
    text = getattr(args, "input", None) or cfg["data"]["input"]
    if not text:
        raise UsageError("no input CSV: pass --input or set data.input")
    path = Path(text)
    if not path.is_file():
        raise UsageError(f"input file {path} does not exist")
    return path


def _dispatch(args, cfg, out: Path) -> list[str]:
    from . import pipeline as pl
    cmd = args.command
    inputs = []
    if cmd == "synth":
        paths = pl.run_synth(cfg, out)
        print(f"wrote {paths['speeds']} and {paths['labels']}")
    elif cmd == "ingest":
        src = _input_path(args, cfg)
        inputs.append(src)
        print(f"wrote {pl.run_ingest(cfg, src, out)}")
    elif cmd == "similarity":
        path, below = pl.run_similarity(cfg, out)
        print(f"fraction of similarity values <= 0.2: {below:.3f}\nwrote {path}")
    elif cmd == "acf":
        print(f"wrote {pl.run_acf(cfg, out)}")
    elif cmd == "rasterize":
        paths = pl.run_rasterize(cfg, out, args.segment, args.day)
        print(f"wrote {len(paths)} images to {out / 'rasters'}")
    elif cmd == "cluster":
        res = pl.run_cluster(cfg, out)
        print(f"K = {res['k']} (silhouette {res['silhouette']:.3f})")
    elif cmd == "select-interval":
        res = pl.run_select_interval(cfg, out)
        print(f"lag  acf      (band +/-{res['confidence_band']:.4f})")
        for i, c in enumerate(res["acf"], start=1):
            mark = "*" if c > res["threshold"] else " "
            print(f"{i:3d}  {c:7.4f} {mark}")
        print(f"stride l = {res['stride']}  input length = {res['input_length']}")
    elif cmd == "train":
        print(f"wrote {len(pl.run_train(cfg, out))} checkpoints to {out / 'models'}")
    elif cmd == "evaluate":
        res = pl.run_evaluate(cfg, out)
        for r in res["rows"]:
            print(f"h{r['horizon']} group {r['group']} {r['algorithm']}: train {100 * r['train_mre']:.2f}% "
                  f"test {100 * r['test_mre']:.2f}% gap {100 * r['gap']:.2f}%")
    elif cmd == "report":
        paths = pl.run_report(cfg, out)
        print("wrote " + ", ".join(str(p) for p in paths.values()))
    elif cmd == "pipeline":
        src = _input_path(args, cfg)
        inputs.append(src)
        res = pl.run_pipeline(cfg, src, out)
        print(f"stride l = {res['stride']}, K = {res['k']}; wrote {res['paths']['json']}")
    return inputs


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["run.seed"] = args.seed
        if args.threads is not None:
            overrides["run.threads"] = args.threads
        if getattr(args, "threshold", None) is not None:
            overrides["interval.threshold"] = args.threshold
        if overrides:
            cfg = cfg.with_overrides(**overrides)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    from threadpoolctl import threadpool_limits

    from .pipeline import write_manifest
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(limits=cfg["run"]["threads"]):
            inputs = _dispatch(args, cfg, out)
        write_manifest(out, args.command, cfg, inputs)
    except (UsageError, ConfigError, ValueError, KeyError, IndexError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
