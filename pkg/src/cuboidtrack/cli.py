"""Command-line entry point: ``cuboidtrack simulate|track|eval|ablate``.

Every failure prints one line ``ERROR <code>: <message>`` to stderr and exits
with that code: 2 for configuration problems, 3 for unreadable or malformed
input, 4 when predictions and ground truth cover different frames.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from pydantic import ValidationError

from .experiment import (
    VARIANTS,
    ExperimentConfig,
    FrameMisalignment,
    ablate,
    evaluate,
    simulate,
    track,
)
from .metrics import aggregate, reports_to_csv, reports_to_json
from .records import RecordError, read_predictions, read_sequence, write_jsonl, write_sequence

log = logging.getLogger("cuboidtrack")

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ALIGNMENT = 4
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
SEQUENCE_GLOB = "seq_*.jsonl"
PRED_SUFFIX = ".pred.jsonl"
META_SUFFIX = ".pred.meta.json"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code

    def __reduce__(self):
        # keeps the exit code when raised inside a worker process
        return (CliError, (self.code, str(self)))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"ERROR {EXIT_CONFIG}: {message}\n")


# -- configuration ------------------------------------------------------------


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{path}: {err['msg']}")
    return "; ".join(parts)


def load_config(args) -> ExperimentConfig:
    """Config file (if any) with command-line overrides applied."""
    doc: dict = {}
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read config {args.config}: {exc.strerror}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise CliError(EXIT_CONFIG, "<root>: config must be a JSON object")
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        doc.setdefault("output", {})
        if isinstance(doc["output"], dict):
            doc["output"]["dir"] = args.out
    tracker = doc.get("tracker", {})
    if isinstance(tracker, dict):
        if getattr(args, "no_filtering", False):
            tracker["filtering"] = False
        if getattr(args, "no_heatmap", False):
            tracker["conditioning"] = False
        if getattr(args, "init", None):
            tracker["init_mode"] = args.init
        if tracker:
            doc["tracker"] = tracker
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise CliError(EXIT_CONFIG, _format_validation(exc)) from exc


def _output_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output.dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory {out}: {exc.strerror}") from exc
    if not os.access(out, os.W_OK):
        raise CliError(EXIT_IO, f"output directory {out} is not writable")
    return out


def _write_text(path: Path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror}") from exc


def _jobs(args) -> int:
    n = getattr(args, "jobs", None)
    return max(1, n if n is not None else (os.cpu_count() or 1))


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


# -- input discovery -----------------------------------------------------------


def _sequence_files(path: str) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob(SEQUENCE_GLOB))
        if not files:
            raise CliError(EXIT_IO, f"no {SEQUENCE_GLOB} files in {p}")
        return files
    if not p.is_file():
        raise CliError(EXIT_IO, f"no such file {p}")
    return [p]


def _load_sequence(path: Path):
    try:
        records = read_sequence(path)
    except RecordError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc}") from exc
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror}") from exc
    if not records:
        raise CliError(EXIT_IO, f"{path}: sequence file is empty")
    return records


def _pred_paths(pred_root: Path, seq: Path) -> tuple[Path, Path]:
    base = pred_root if pred_root.is_dir() else pred_root.parent
    pred = pred_root if pred_root.is_file() else base / (seq.stem + PRED_SUFFIX)
    meta = pred.with_name(pred.name[: -len(PRED_SUFFIX)] + META_SUFFIX) if pred.name.endswith(PRED_SUFFIX) else None
    return pred, meta


# -- commands -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(args)
    out = _output_dir(cfg)
    if args.frames is not None:
        cfg = cfg.model_copy(update={"scene": cfg.scene.model_copy(update={"frame_count": args.frames})})
    for i in range(cfg.sequences):
        path = out / f"seq_{i:04d}.jsonl"
        try:
            write_sequence(path, simulate(cfg, i))
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror}") from exc
        log.info("wrote %s", path)
    _write_text(out / "config.json", cfg.model_dump_json(indent=2) + "\n")
    return 0


def _track_one(task):
    cfg_json, seq_path, out_dir = task
    cfg = ExperimentConfig.model_validate_json(cfg_json)
    seq_path = Path(seq_path)
    records = _load_sequence(seq_path)
    preds = track(cfg, records)
    pred_path = Path(out_dir) / (seq_path.stem + PRED_SUFFIX)
    try:
        write_jsonl(pred_path, preds)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {pred_path}: {exc.strerror}") from exc
    meta = {"frames": len(records), "sequence": seq_path.name}
    _write_text(pred_path.with_name(seq_path.stem + META_SUFFIX), json.dumps(meta, sort_keys=True) + "\n")
    return str(pred_path)


def cmd_track(args) -> int:
    cfg = load_config(args)
    out = _output_dir(cfg)
    files = [f for p in args.sequences for f in _sequence_files(p)]
    tasks = [(cfg.model_dump_json(), str(f), str(out)) for f in files]
    for path in _parallel_map(_track_one, tasks, _jobs(args)):
        log.info("wrote %s", path)
    return 0


def _series_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "name", "iou", "pixel_error", "azimuth_err", "elevation_err"])
    for frame, name, m in rows:
        w.writerow([frame, name, repr(m.iou), repr(m.pixel_error), repr(m.azimuth_err), repr(m.elevation_err)])
    return buf.getvalue()


def _eval_one(task):
    cfg_json, seq_path, pred_root = task
    cfg = ExperimentConfig.model_validate_json(cfg_json)
    seq_path = Path(seq_path)
    records = _load_sequence(seq_path)
    pred_path, meta_path = _pred_paths(Path(pred_root), seq_path)
    try:
        preds = read_predictions(pred_path)
    except RecordError as exc:
        raise CliError(EXIT_IO, f"{pred_path}: {exc}") from exc
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {pred_path}: {exc.strerror}") from exc
    frames = None
    if meta_path is not None and meta_path.is_file():
        try:
            frames = int(json.loads(meta_path.read_text(encoding="utf-8"))["frames"])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CliError(EXIT_IO, f"{meta_path}: unreadable metadata ({exc})") from exc
    try:
        return seq_path.stem, evaluate(cfg, records, preds, seq_path.stem, frames)
    except FrameMisalignment as exc:
        raise CliError(EXIT_ALIGNMENT, f"{seq_path.name}: {exc}") from exc


def cmd_eval(args) -> int:
    if args.ablate:
        return cmd_ablate(args)
    if not args.sequences or not args.predictions:
        raise CliError(EXIT_CONFIG, "eval needs --sequences and --predictions (or --ablate)")
    cfg = load_config(args)
    out = _output_dir(cfg)
    files = _sequence_files(args.sequences)
    if Path(args.predictions).is_file() and len(files) != 1:
        raise CliError(EXIT_CONFIG, "a single predictions file needs a single sequence file")
    tasks = [(cfg.model_dump_json(), str(f), args.predictions) for f in files]
    reports, series = [], []
    for stem, results in _parallel_map(_eval_one, tasks, _jobs(args)):
        for report, per_frame in results:
            reports.append(report)
            series.extend((i, report.name, m) for i, m in enumerate(per_frame))
    agg = aggregate(reports)
    _write_text(out / "report.csv", reports_to_csv(reports + [agg]))
    _write_text(out / "report.json", reports_to_json(reports, agg))
    if args.emit_series:
        _write_text(out / "series.csv", _series_csv(series))
    print(_summary_line(agg))
    return 0


def _summary_line(r) -> str:
    return (
        f"frames={r.frames} ap_iou50={r.ap_iou50:.4f} pixel_error={r.mean_pixel_error:.4f} "
        f"ap_az15={r.ap_azimuth15:.4f} ap_el10={r.ap_elevation10:.4f} consistency={r.consistency:.4f}"
    )


def ablation_json(result) -> str:
    doc = {
        "rows": [
            {"method": v.name, "table": v.table, **_report_dict(result.rows[v.name])} for v in VARIANTS
        ],
        "per_sequence": {name: [_report_dict(r) for r in reps] for name, reps in result.per_sequence.items()},
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _report_dict(r) -> dict:
    return {
        "name": r.name,
        "frames": r.frames,
        "ap_iou50": r.ap_iou50,
        "mean_pixel_error": r.mean_pixel_error,
        "ap_azimuth15": r.ap_azimuth15,
        "ap_elevation10": r.ap_elevation10,
        "consistency": r.consistency,
    }


def ablation_csv(result) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["table", "method", "ap_iou50", "mean_pixel_error", "ap_azimuth15", "ap_elevation10", "consistency"])
    for v in VARIANTS:
        r = result.rows[v.name]
        w.writerow([v.table, v.name] + [repr(x) for x in (r.ap_iou50, r.mean_pixel_error, r.ap_azimuth15, r.ap_elevation10, r.consistency)])
    return buf.getvalue()


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    out = _output_dir(cfg)
    result = ablate(cfg, _jobs(args))
    table = result.table()
    _write_text(out / "ablation.txt", table)
    _write_text(out / "ablation.csv", ablation_csv(result))
    _write_text(out / "ablation.json", ablation_json(result))
    sys.stdout.write(table)
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--jobs", type=int, help="worker processes (default: logical cores)")
    tracker = argparse.ArgumentParser(add_help=False)
    tracker.add_argument("--no-filtering", action="store_true", help="raw per-frame keypoints, no Bayes/Kalman")
    tracker.add_argument("--no-heatmap", action="store_true", help="do not condition the detector on rendered priors")
    tracker.add_argument("--init", choices=["ground_truth", "noisy_gt", "detector", "none"], help="track initialization")

    parser = _Parser(prog="cuboidtrack", description=__doc__.splitlines()[0])
    parser.add_argument("--dump-defaults", action="store_true", help="print the default config and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", parents=[common], help="write synthetic sequences")
    p.add_argument("--frames", type=int, help="frames per sequence (overrides scene.frame_count)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", parents=[common, tracker], help="run the tracker over sequence files")
    p.add_argument("sequences", nargs="+", help="sequence files or directories")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", parents=[common, tracker], help="score predictions against ground truth")
    p.add_argument("--sequences", help="sequence file or directory")
    p.add_argument("--predictions", help="prediction file or directory")
    p.add_argument("--emit-series", action="store_true", help="also write per-frame errors to series.csv")
    p.add_argument("--ablate", action="store_true", help="run the full ablation instead")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common, tracker], help="ablation and initialization tables")
    p.set_defaults(func=cmd_ablate)
    return parser


def configure_logging() -> None:
    name = os.environ.get("CUBOIDTRACK_LOG", "warn").strip().lower()
    if name not in LOG_LEVELS:
        raise CliError(EXIT_CONFIG, f"CUBOIDTRACK_LOG: expected one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging()
        if args.dump_defaults:
            sys.stdout.write(ExperimentConfig().model_dump_json(indent=2) + "\n")
            return 0
        if not args.command:
            parser.print_usage(sys.stderr)
            raise CliError(EXIT_CONFIG, "no command given")
        return args.func(args)
    except CliError as exc:
        print(f"ERROR {exc.code}: {_one_line(str(exc))}", file=sys.stderr)
        return exc.code


def _one_line(msg: str) -> str:
    return " ".join(msg.split())


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
