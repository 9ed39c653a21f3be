"""``credkit`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__, cred, detectors, dsp, evaluation, plots, synth, waveio
from .errors import CredkitError, DataError, InvariantError, UsageError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
INDEX_HEADER = ["spectrogram", "label", "split", "kind"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_snr_list(text: str) -> list[float]:
    """``start:end:step`` (inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
                raise ValueError
            return evaluation.snr_levels(*parts)
        values = [float(p) for p in text.split(",") if p.strip()]
        if not values:
            raise ValueError
        return values
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected start:end:step or a comma list, got {text!r}") from None


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _snr_tag(snr: float) -> str:
    return f"{snr:g}".replace("-", "m").replace(".", "p")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42, help="random seed (default 42)")
    common.add_argument("--out-dir", default=".", help="directory for output files")
    common.add_argument("--precision", choices=("f32", "f64"), default="f32",
                        help="floating-point precision for the network")

    parser = _Parser(prog="credkit", description="Earthquake detection toolkit.")
    parser.add_argument("--version", action="version", version=f"credkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate scenes and training windows")
    p.add_argument("--events", type=int, default=50, help="earthquake inserts per scene")
    p.add_argument("--fakes", type=int, default=50, help="Ricker inserts per scene")
    p.add_argument("--duration-s", type=float, default=3024.0, help="scene length in seconds")
    p.add_argument("--snr-list", type=parse_snr_list, default=[10.0],
                   help="scene SNR levels, start:end:step or comma list (default 10)")
    p.add_argument("--min-gap-s", type=float, default=5.0, help="minimum gap between inserts")
    p.add_argument("--families", type=_positive_int, default=5, help="distinct master events")
    p.add_argument("--train-windows", type=int, default=256, help="training windows (half events)")
    p.add_argument("--val-windows", type=int, default=64, help="validation windows (half events)")

    p = sub.add_parser("train", parents=[common], help="train a CRED model")
    p.add_argument("--data-dir", required=True, help="directory written by 'synth'")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=_positive_int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=_positive_int, default=20)
    p.add_argument("--preset", choices=sorted(cred.PRESETS), default="desk")

    p = sub.add_parser("detect", parents=[common], help="detect events in a waveform")
    p.add_argument("--model", required=True)
    p.add_argument("--waveform", required=True)
    p.add_argument("--window-s", type=float, default=30.0)
    p.add_argument("--stride-s", type=float, default=15.0)
    p.add_argument("--threshold", type=float, default=detectors.DEFAULT_TR)

    p = sub.add_parser("bench", parents=[common], help="SNR sensitivity benchmark")
    p.add_argument("--model", required=True)
    p.add_argument("--snr-list", type=parse_snr_list, default=evaluation.snr_levels())
    p.add_argument("--seeds", type=_positive_int, default=3, help="number of scene seeds")
    p.add_argument("--events", type=int, default=50)
    p.add_argument("--fakes", type=int, default=50)
    p.add_argument("--duration-s", type=float, default=3024.0)

    p = sub.add_parser("eval", parents=[common], help="match detections against a catalog")
    p.add_argument("--detections", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--tol-s", type=float, default=evaluation.DEFAULT_TOL_S)
    p.add_argument("--model", help="also sweep window thresholds with this model")
    p.add_argument("--data-dir", help="windows for the threshold sweep (with --model)")

    p = sub.add_parser("plot", parents=[common], help="render a CSV produced by credkit as SVG")
    p.add_argument("--csv", required=True)
    return parser


# ---------------------------------------------------------------------------
# subcommands


def _dtype(args):
    return np.float64 if args.precision == "f64" else np.float32


def cmd_synth(args, out: Path) -> None:
    spec = synth.SceneSpec(args.events, args.fakes, args.duration_s, args.min_gap_s,
                           args.families)
    families = synth.event_families(spec.n_families, spec.rate, args.seed)
    clean = synth.build_scene(spec, args.seed, families)
    for k, snr in enumerate(args.snr_list):
        scene = synth.add_scene_noise(clean, snr, args.seed * 1000 + k)
        tag = _snr_tag(snr)
        waveio.write_waveform(scene.trace, out / f"scene_{tag}.csv")
        synth.write_truth(scene.truth, out / f"truth_{tag}.csv")
    events = [waveio.CatalogEvent(f"ev{i:04d}", r.start_s, r.start_s + (r.end_s - r.start_s) / 3.0)
              for i, r in enumerate(clean.earthquakes())]
    waveio.write_catalog(waveio.Catalog(tuple(events)), out / "catalog.csv")
    for k, fam in enumerate(families):
        waveio.write_waveform(waveio.Waveform3C.from_array(fam.data, spec.rate, f"T{k}"),
                              out / f"template_{k}.csv")

    wdir = waveio.ensure_dir(out / "windows")
    rows = []
    for split, count, seed in (("train", args.train_windows, args.seed),
                               ("val", args.val_windows, args.seed + 1)):
        n_ev = count // 2
        windows = synth.training_windows(n_ev, count - n_ev, seed)
        data = cred.dataset_from_windows(windows) if windows else None
        for i, item in enumerate(windows):
            sname, lname = f"{split}_{i:04d}.spec", f"{split}_{i:04d}.label"
            hop = dsp.STFT_HOP / dsp.TARGET_RATE
            dsp.save_spectrogram(dsp.Spectrogram(data.x[i], hop, dsp.TARGET_RATE / dsp.STFT_NFFT),
                                 wdir / sname)
            dsp.save_label(dsp.LabelVector(data.y[i], hop), wdir / lname)
            rows.append([f"windows/{sname}", f"windows/{lname}", split, item.kind])
    with open(out / "index.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INDEX_HEADER)
        writer.writerows(rows)


def load_window_sets(data_dir) -> dict[str, cred.WindowDataset]:
    data_dir = Path(data_dir)
    index = data_dir / "index.csv"
    if not index.is_file():
        raise waveio.MissingFile(f"no index.csv in {data_dir}")
    xs: dict[str, list] = {}
    ys: dict[str, list] = {}
    with open(index, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        if [h.strip() for h in next(reader, [])] != INDEX_HEADER:
            raise waveio.MalformedRow(f"{index}: expected header {','.join(INDEX_HEADER)}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(INDEX_HEADER):
                raise waveio.MalformedRow(f"{index}: bad row {row}")
            spec_path, label_path, split, _ = row
            xs.setdefault(split, []).append(dsp.load_spectrogram(data_dir / spec_path).values)
            ys.setdefault(split, []).append(dsp.load_label(data_dir / label_path).values)
    return {s: cred.WindowDataset(np.stack(xs[s]), np.stack(ys[s])) for s in xs}


def cmd_train(args, out: Path) -> None:
    sets = load_window_sets(args.data_dir)
    if "train" not in sets or "val" not in sets:
        raise cred.EmptyDataset("data directory needs both train and val windows")
    base = cred.PRESETS[args.preset]
    cfg = cred.CredConfig(**{**{f: getattr(base, f) for f in base.__dataclass_fields__},
                             "seed": args.seed})
    model = cred.build_model(cfg, dtype=_dtype(args))
    hyper = cred.TrainHyper(args.epochs, args.batch, args.lr, args.patience, args.seed)
    model, report = cred.train(model, sets["train"], sets["val"], hyper)
    cred.save_model(model, out / "model.cred")
    rows = report.to_rows()
    with open(out / "train_log.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = list(rows[0]) if rows else ["epoch"]
        writer.writerow(header)
        for r in rows:
            writer.writerow([evaluation.fmt(r[h]) for h in header])
    print(f"epochs run: {report.epochs_run}, best epoch: {report.best_epoch}, "
          f"early stop: {report.early_stop_epoch}")


def _load_model(path, args):
    model = cred.load_model(path)
    return model.astype(np.float64) if args.precision == "f64" else model


def cmd_detect(args, out: Path) -> None:
    model = _load_model(args.model, args)
    trace = dsp.preprocess(waveio.read_waveform(args.waveform))
    dets = detectors.cred_detect(model, trace, args.window_s, args.stride_s, args.threshold)
    detectors.write_detections(dets, out / "detections.csv")
    print(f"{len(dets)} detections")


def cmd_bench(args, out: Path) -> None:
    model = _load_model(args.model, args)
    scene = synth.SceneSpec(args.events, args.fakes, args.duration_s)
    spec = evaluation.BenchSpec(scene=scene, seeds=tuple(args.seed + i for i in range(args.seeds)))
    results, tuned = evaluation.sensitivity_bench(model, args.snr_list, spec)
    evaluation.write_sweep(results, out / "sweep.csv")
    with open(out / "bench_tuning.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["parameter", "value"])
        for key, value in tuned.items():
            writer.writerow([key, repr(value)])


def cmd_eval(args, out: Path) -> None:
    dets = detectors.read_detections(args.detections)
    cat = waveio.read_catalog(args.catalog)
    result = evaluation.match_catalog(dets, cat, args.tol_s)
    cm = evaluation.ConfusionMatrix(len(result.matched), len(result.new), len(result.missed))
    evaluation.write_confusion(cm, out / "confusion.csv")
    mags = [ev.magnitude for _, ev in result.matched if ev.magnitude is not None]
    evaluation.write_magnitude_hist(evaluation.magnitude_histogram(mags), out / "magnitude_hist.csv")
    with open(out / "matches.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["status", "event_id", "start_s", "end_s", "peak_score"])
        for d, ev in result.matched:
            writer.writerow(["matched", ev.event_id, repr(d.start_s), repr(d.end_s), repr(d.peak_score)])
        for d in result.new:
            writer.writerow(["new", "", repr(d.start_s), repr(d.end_s), repr(d.peak_score)])
        for ev in result.missed:
            writer.writerow(["missed", ev.event_id, "", "", ""])
    if args.model:
        if not args.data_dir:
            raise UsageError("--model needs --data-dir")
        model = _load_model(args.model, args)
        sets = load_window_sets(args.data_dir)
        data = sets.get("val") or next(iter(sets.values()))
        steps = model.predict(data.x)
        probs = cred.upsample_steps(steps, data.x.shape[1])
        thresholds = [round(0.01 * k, 2) for k in range(1, 100)]
        curve = evaluation.pr_sweep(list(probs), list(data.window_labels), thresholds)
        evaluation.write_pr_curve(curve, out / "pr_curve.csv")
    m = evaluation.metrics(cm)
    print(f"matched {len(result.matched)}, new {len(result.new)}, missed {len(result.missed)}, "
          f"precision {evaluation.fmt(m.precision)}, recall {evaluation.fmt(m.recall)}")


def _floats(values) -> list[float | None]:
    return [None if v == evaluation.UNDEFINED or v == "" else float(v) for v in values]


def cmd_plot(args, out: Path) -> None:
    path = Path(args.csv)
    if not path.is_file():
        raise waveio.MissingFile(f"no such file: {path}")
    cols = evaluation.read_csv_columns(path)
    keys = set(cols)
    if {"threshold", "precision", "recall", "fscore"} <= keys and "tp" not in keys:
        x = _floats(cols["threshold"])
        svg = plots.line_chart({k: (x, _floats(cols[k])) for k in ("precision", "recall", "fscore")},
                               "Precision / recall / F-score", "threshold", "value", (0.0, 1.0))
    elif {"snr_db", "method", "detection_rate", "fp_rate"} <= keys:
        series = {}
        for snr, method, rate, fp in zip(cols["snr_db"], cols["method"],
                                         cols["detection_rate"], cols["fp_rate"]):
            series.setdefault(f"{method} detection", ([], []))
            series.setdefault(f"{method} false positive", ([], []))
            series[f"{method} detection"][0].append(float(snr))
            series[f"{method} detection"][1].append(float(rate))
            series[f"{method} false positive"][0].append(float(snr))
            series[f"{method} false positive"][1].append(float(fp))
        svg = plots.line_chart(series, "Detection and false-positive rate", "SNR (dB)", "rate",
                               (0.0, 1.0))
    elif {"bin", "count"} <= keys:
        svg = plots.bar_chart(cols["bin"], [float(c) for c in cols["count"]],
                              "Magnitude distribution", "magnitude", "count")
    elif {"epoch", "train_loss", "val_loss"} <= keys:
        x = _floats(cols["epoch"])
        svg = plots.line_chart({k: (x, _floats(cols[k])) for k in ("train_loss", "val_loss")},
                               "Training history", "epoch", "loss")
    else:
        raise waveio.MalformedRow(f"{path}: unrecognised CSV columns {sorted(keys)}")
    plots.write_svg(svg, out / (path.stem + ".svg"))


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "detect": cmd_detect,
    "bench": cmd_bench, "eval": cmd_eval, "plot": cmd_plot,
}


def _join_negative_values(argv: list[str]) -> list[str]:
    # "--snr-list -2:20:1" would otherwise be read as an unknown flag
    out = []
    i = 0
    while i < len(argv):
        if argv[i] == "--snr-list" and i + 1 < len(argv):
            out.append(f"--snr-list={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(_join_negative_values(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        out = waveio.ensure_dir(args.out_dir)
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"credkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"credkit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"credkit: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except CredkitError as exc:
        print(f"credkit: error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
