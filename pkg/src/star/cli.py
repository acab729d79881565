"""Command-line entry point.

One binary, subcommand style: synth | preprocess | filter-design | train
| eval | quantize | replay | bench.  Logs go to standard error, data to
standard output or ``--out`` paths.  Every run is deterministic under a
fixed ``--seed`` and fixed inputs.  Failures print one line of the form
``error: <class>: <message>`` and exit 1; usage errors exit 2.

Options may also come from a JSON config file (``--config``); explicit
flags win over the file, the file wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dsp import DspConfig
from .errors import ConfigError, DataNotFoundError, ModelNotFoundError, StarError
from .filters import design_butterworth, filter_report
from .gru import AdamState, GruConfig, evaluate_network, init_params, train_step
from .ingest import read_capture, write_capture
from .labels import ACTIVITIES, HUMAN_NAMES
from .pipeline import (
    PipelineConfig,
    RESULT_HEADER,
    benchmark,
    format_result,
    run_stream,
    save_windows,
    write_results,
)
from .quant import CalibrationSet, agreement_report, quantize_network
from .synth import (
    LabelSegment,
    SynthConfig,
    generate_labeled_capture,
    read_labels,
    split_train_test,
    windows_from_capture,
    write_labels,
)
from .weights import (
    MAGIC_F32,
    load_network,
    load_quant_network,
    peek_magic,
    save_network,
    save_quant_network,
)

log = logging.getLogger("star")

DEFAULTS = {
    "seed": 0,
    "frames_per_class": 2000,
    "fs": 100.0,
    "window": 200,
    "stride": 200,
    "cutoff": 10.0,
    "order": 8,
    "median_radius": 2,
    "keep_imf_from": 2,
    "hidden": 64,
    "iters": 300,
    "batch": 128,
    "lr": 1e-3,
    "split": 0.8,
    "threshold": 0.5,
    "queue_capacity": 4,
    "calib_windows": 32,
    "min_duration": 1.0,
}


def _resolve(args, key):
    value = getattr(args, key, None)
    if value is not None:
        return value
    file_values = getattr(args, "_config_data", {})
    if key in file_values:
        return file_values[key]
    return DEFAULTS[key]


def _dsp_config(args) -> DspConfig:
    return DspConfig(
        median_radius=int(_resolve(args, "median_radius")),
        cutoff_hz=float(_resolve(args, "cutoff")),
        filter_order=int(_resolve(args, "order")),
        keep_imf_from=int(_resolve(args, "keep_imf_from")),
    )


def _synth_config(args) -> SynthConfig:
    return SynthConfig(
        seed=int(_resolve(args, "seed")),
        frames_per_class=int(_resolve(args, "frames_per_class")),
        train_ratio=float(_resolve(args, "split")),
        window_len=int(_resolve(args, "window")),
        stride=int(_resolve(args, "stride")),
        sample_rate_hz=float(_resolve(args, "fs")),
        dsp=_dsp_config(args),
    )


def _require(path: Path, exc, what: str) -> Path:
    if not path.exists():
        raise exc(f"{what} not found: {path}")
    return path


def _load_data_dir(args):
    data_dir = Path(args.data)
    capture_path = _require(data_dir / "capture.csv", DataNotFoundError, "capture")
    labels_path = _require(data_dir / "labels.csv", DataNotFoundError, "labels")
    capture = read_capture(capture_path)
    segments = read_labels(labels_path)
    return capture, segments


def _load_model(path):
    path = _require(Path(path), ModelNotFoundError, "model")
    if peek_magic(path) == MAGIC_F32:
        return load_network(path)
    return load_quant_network(path)


def cmd_synth(args) -> int:
    cfg = _synth_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    capture, segments = generate_labeled_capture(cfg)
    write_capture(out_dir / "capture.csv", capture)
    write_labels(out_dir / "labels.csv", segments)
    log.info(
        "wrote %d frames (%d classes) to %s", len(capture), len(segments), out_dir
    )
    return 0


def cmd_preprocess(args) -> int:
    capture = read_capture(_require(Path(args.capture), DataNotFoundError, "capture"))
    if args.labels:
        segments = read_labels(_require(Path(args.labels), DataNotFoundError, "labels"))
    else:
        segments = [LabelSegment(0, len(capture), -1, "unlabeled")]
    cfg = _synth_config(args)
    windows, labels, starts = windows_from_capture(capture, segments, cfg)
    save_windows(args.out, windows, labels, starts)
    log.info("wrote %d windows to %s", windows.shape[0], args.out)
    return 0


def cmd_filter_design(args) -> int:
    filt = design_butterworth(
        order=int(_resolve(args, "order")),
        cutoff_hz=float(args.cutoff),
        sample_rate_hz=float(args.fs),
    )
    print(filter_report(filt))
    return 0


def cmd_train(args) -> int:
    seed = int(_resolve(args, "seed"))
    capture, segments = _load_data_dir(args)
    cfg = _synth_config(args)
    log.info("preprocessing %d frames", len(capture))
    windows, labels, _ = windows_from_capture(capture, segments, cfg)
    train_w, train_l, test_w, test_l = split_train_test(
        windows, labels, cfg.train_ratio
    )
    log.info("train %s test %s", train_w.shape, test_w.shape)

    hidden = int(_resolve(args, "hidden"))
    iters = int(_resolve(args, "iters"))
    batch = int(_resolve(args, "batch"))
    net = init_params(GruConfig(hidden=hidden), seed=seed)
    opt = AdamState(lr=float(_resolve(args, "lr")))
    rng = np.random.default_rng(seed)
    n = train_w.shape[0]
    loss = float("nan")
    for it in range(1, iters + 1):
        idx = rng.permutation(n)[:batch]
        net, opt, loss = train_step(net, train_w[idx], train_l[idx], opt)
        if it % 25 == 0 or it == iters:
            log.info("iter %d/%d: loss %.4f", it, iters, loss)
    result = evaluate_network(net, test_w, test_l)
    log.info(
        "test: mean %.4f presence %.4f",
        result["mean"] if result["mean"] is not None else float("nan"),
        result["presence"],
    )
    save_network(args.out, net)
    log.info("saved model to %s", args.out)
    return 0


def _print_eval_table(result) -> None:
    print(f"{'class':<20}{'accuracy':>10}")
    for name in ACTIVITIES:
        acc = result["per_class"][name]
        shown = f"{100.0 * acc:.2f}%" if acc is not None else "-"
        print(f"{HUMAN_NAMES[name]:<20}{shown:>10}")
    print(f"{'presence':<20}{100.0 * result['presence']:>9.2f}%")
    mean = result["mean"]
    shown = f"{100.0 * mean:.2f}%" if mean is not None else "-"
    print(f"{'mean (activities)':<20}{shown:>10}")


def cmd_eval(args) -> int:
    net = _load_model(args.model)
    capture, segments = _load_data_dir(args)
    cfg = _synth_config(args)
    windows, labels, _ = windows_from_capture(capture, segments, cfg)
    _, _, test_w, test_l = split_train_test(windows, labels, cfg.train_ratio)
    from .gru import GruNetwork

    if not isinstance(net, GruNetwork):
        raise ConfigError("eval expects a float model; quantized given")
    result = evaluate_network(net, test_w, test_l)
    _print_eval_table(result)
    return 0


def cmd_quantize(args) -> int:
    net = _load_model(args.model)
    capture, segments = _load_data_dir(args)
    cfg = _synth_config(args)
    windows, labels, _ = windows_from_capture(capture, segments, cfg)
    train_w, _, test_w, _ = split_train_test(windows, labels, cfg.train_ratio)
    n_calib = min(int(_resolve(args, "calib_windows")), train_w.shape[0])
    qnet = quantize_network(net, CalibrationSet(train_w[:n_calib]))
    save_quant_network(args.out, qnet)
    log.info("saved quantized model to %s", args.out)
    report = agreement_report(net, qnet, test_w)
    print(report.format_text())
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_records(), indent=2))
        log.info("wrote agreement records to %s", args.json)
    return 0


def cmd_replay(args) -> int:
    model = _load_model(args.model)
    capture = read_capture(_require(Path(args.capture), DataNotFoundError, "capture"))
    cfg = PipelineConfig(
        window_len=int(_resolve(args, "window")),
        stride=int(_resolve(args, "stride")),
        queue_capacity=int(_resolve(args, "queue_capacity")),
        presence_threshold=float(_resolve(args, "threshold")),
        dsp=_dsp_config(args),
    )
    deterministic = bool(args.deterministic)
    results = run_stream(
        capture,
        model,
        cfg,
        threaded=not deterministic,
        collect_timing=not deterministic,
    )
    if args.out:
        write_results(args.out, results)
        log.info("wrote %d results to %s", len(results), args.out)
    else:
        print(RESULT_HEADER)
        for result in results:
            print(format_result(result))
    return 0


def cmd_bench(args) -> int:
    model = _load_model(args.model)
    capture = read_capture(_require(Path(args.capture), DataNotFoundError, "capture"))
    cfg = PipelineConfig(
        window_len=int(_resolve(args, "window")),
        stride=int(_resolve(args, "stride")),
        queue_capacity=int(_resolve(args, "queue_capacity")),
        presence_threshold=float(_resolve(args, "threshold")),
        dsp=_dsp_config(args),
    )
    from .gru import GruNetwork

    if args.qmodel:
        qnet = _load_model(args.qmodel)
    elif isinstance(model, GruNetwork):
        log.info("no --qmodel given; calibrating an int8 model from the capture")
        segments = [LabelSegment(0, len(capture), -1, "calib")]
        windows, _, _ = windows_from_capture(capture, segments, _synth_config(args))
        n_calib = min(int(_resolve(args, "calib_windows")), windows.shape[0])
        qnet = quantize_network(model, CalibrationSet(windows[:n_calib]))
    else:
        qnet = None
    report = benchmark(
        capture,
        model,
        cfg,
        int8_model=qnet,
        min_duration_s=float(_resolve(args, "min_duration")),
    )
    print(report.format_text())
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2))
    return 0


def _add_common(parser: argparse.ArgumentParser, *keys: str) -> None:
    spec = {
        "seed": ("--seed", int, "rng seed (default 0)"),
        "fs": ("--fs", float, "sample rate in Hz (default 100)"),
        "window": ("--window", int, "window length in frames (default 200)"),
        "stride": ("--stride", int, "window stride in frames (default 200)"),
        "cutoff": ("--cutoff", float, "low-pass cutoff in Hz (default 10)"),
        "order": ("--order", int, "Butterworth order (default 8)"),
        "median_radius": ("--median-radius", int, "median window radius (default 2)"),
        "keep_imf_from": (
            "--keep-imf-from",
            int,
            "first retained EMD mode, 1-based (default 2)",
        ),
        "split": ("--split", float, "train fraction (default 0.8)"),
        "threshold": ("--threshold", float, "presence threshold (default 0.5)"),
        "queue_capacity": ("--queue-capacity", int, "stage queue capacity (default 4)"),
        "calib_windows": (
            "--calib-windows",
            int,
            "windows used for calibration (default 32)",
        ),
    }
    for key in keys:
        flag, typ, help_text = spec[key]
        parser.add_argument(flag, type=typ, default=None, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="star",
        description="Wi-Fi CSI activity sensing toolkit",
    )
    parser.add_argument(
        "--config", default=None, help="JSON config file; flags override its values"
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="generate a labelled synthetic capture")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--frames-per-class",
        dest="frames_per_class",
        type=int,
        default=None,
        help="frames per class segment (default 2000)",
    )
    _add_common(p, "seed", "fs", "window", "stride", "split",
                "cutoff", "order", "median_radius", "keep_imf_from")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("preprocess", help="window and preprocess a capture")
    p.add_argument("--capture", required=True, help="capture file")
    p.add_argument("--labels", default=None, help="label sidecar (optional)")
    p.add_argument("--out", required=True, help="output .npz of windows")
    _add_common(p, "seed", "fs", "window", "stride", "split",
                "cutoff", "order", "median_radius", "keep_imf_from")
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("filter-design", help="print filter coefficients and poles")
    p.add_argument("--cutoff", type=float, required=True, help="cutoff in Hz")
    p.add_argument("--fs", type=float, required=True, help="sample rate in Hz")
    _add_common(p, "order")
    p.set_defaults(handler=cmd_filter_design)

    p = sub.add_parser("train", help="train a model on a labelled capture")
    p.add_argument("--data", required=True, help="directory with capture.csv + labels.csv")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--hidden", type=int, default=None, help="hidden units (default 64)")
    p.add_argument("--iters", type=int, default=None, help="optimizer steps (default 300)")
    p.add_argument("--batch", type=int, default=None, help="windows per step (default 128)")
    p.add_argument("--lr", type=float, default=None, help="Adam learning rate (default 1e-3)")
    _add_common(p, "seed", "fs", "window", "stride", "split",
                "cutoff", "order", "median_radius", "keep_imf_from")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="per-class accuracy table on the test split")
    p.add_argument("--data", required=True, help="directory with capture.csv + labels.csv")
    p.add_argument("--model", required=True, help="model file")
    _add_common(p, "seed", "fs", "window", "stride", "split",
                "cutoff", "order", "median_radius", "keep_imf_from")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("quantize", help="int8-quantize a model and report agreement")
    p.add_argument("--model", required=True, help="float model file")
    p.add_argument("--data", required=True, help="calibration data directory")
    p.add_argument("--out", required=True, help="output quantized model file")
    p.add_argument("--json", default=None, help="write agreement records as JSON")
    _add_common(p, "seed", "fs", "window", "stride", "split",
                "cutoff", "order", "median_radius", "keep_imf_from", "calib_windows")
    p.set_defaults(handler=cmd_quantize)

    p = sub.add_parser("replay", help="stream a capture through the pipeline")
    p.add_argument("--capture", required=True, help="capture file")
    p.add_argument("--model", required=True, help="model file (float or quantized)")
    p.add_argument("--out", default=None, help="result stream file (default stdout)")
    p.add_argument(
        "--deterministic",
        action="store_true",
        help="single-threaded replay with zeroed latency fields",
    )
    _add_common(p, "fs", "window", "stride", "threshold", "queue_capacity",
                "cutoff", "order", "median_radius", "keep_imf_from")
    p.set_defaults(handler=cmd_replay)

    p = sub.add_parser("bench", help="throughput and latency benchmark")
    p.add_argument("--capture", required=True, help="capture file")
    p.add_argument("--model", required=True, help="float model file")
    p.add_argument("--qmodel", default=None, help="quantized model file")
    p.add_argument("--json", default=None, help="write the report as JSON")
    p.add_argument(
        "--min-duration",
        dest="min_duration",
        type=float,
        default=None,
        help="minimum measuring time in seconds (default 1.0)",
    )
    _add_common(p, "seed", "fs", "window", "stride", "threshold", "queue_capacity",
                "cutoff", "order", "median_radius", "keep_imf_from", "calib_windows")
    p.set_defaults(handler=cmd_bench)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "handler"):
        parser.print_help(sys.stderr)
        return 2
    if args.config:
        try:
            args._config_data = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            print(f"error: config-error: config file not found: {args.config}",
                  file=sys.stderr)
            return 1
    else:
        args._config_data = {}
    try:
        return args.handler(args)
    except StarError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
