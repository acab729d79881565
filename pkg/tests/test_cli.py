import json

import numpy as np
import pytest

from star.cli import build_parser, main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = run_cli("synth", "--seed", "7", "--frames-per-class", "600", "--out", str(out))
    assert code == 0
    return out


@pytest.fixture(scope="module")
def model_path(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("model") / "model.w"
    code = run_cli(
        "train", "--data", str(data_dir), "--out", str(out),
        "--seed", "0", "--hidden", "8", "--iters", "4", "--batch", "8",
    )
    assert code == 0
    assert out.exists()
    return out


def test_filter_design_report(capsys):
    assert run_cli("filter-design", "--cutoff", "10", "--fs", "100") == 0
    out = capsys.readouterr().out
    assert "b[0]" in out and "a[8]" in out and "pole magnitudes" in out


def test_synth_writes_capture_and_labels(data_dir):
    assert (data_dir / "capture.csv").exists()
    assert (data_dir / "labels.csv").exists()
    text = (data_dir / "labels.csv").read_text()
    assert "no_person" in text


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli("synth", "--seed", "3", "--frames-per-class", "400", "--out", str(a))
    run_cli("synth", "--seed", "3", "--frames-per-class", "400", "--out", str(b))
    assert (a / "capture.csv").read_bytes() == (b / "capture.csv").read_bytes()
    assert (a / "labels.csv").read_bytes() == (b / "labels.csv").read_bytes()


def test_eval_prints_table(capsys, data_dir, model_path):
    assert run_cli("eval", "--data", str(data_dir), "--model", str(model_path)) == 0
    out = capsys.readouterr().out
    lines = out.strip().splitlines()
    order = ["lie down", "fall", "walk", "pickup", "run", "sit down", "stand up",
             "presence", "mean (activities)"]
    for expected, line in zip(order, lines[1:]):
        assert line.startswith(expected)
    assert "%" in lines[1]


def test_train_deterministic(tmp_path, data_dir):
    p1, p2 = tmp_path / "m1.w", tmp_path / "m2.w"
    for p in (p1, p2):
        code = run_cli(
            "train", "--data", str(data_dir), "--out", str(p),
            "--seed", "5", "--hidden", "8", "--iters", "3", "--batch", "8",
        )
        assert code == 0
    assert p1.read_bytes() == p2.read_bytes()


def test_preprocess_windows(tmp_path, data_dir):
    out = tmp_path / "windows.npz"
    code = run_cli(
        "preprocess", "--capture", str(data_dir / "capture.csv"),
        "--labels", str(data_dir / "labels.csv"), "--out", str(out),
    )
    assert code == 0
    data = np.load(out)
    assert data["features"].shape == (24, 49, 200)  # 8 classes x 3 windows
    assert data["features"].min() >= 0.0 and data["features"].max() <= 1.0
    assert set(np.unique(data["labels"])) == set(range(8))


def test_quantize_writes_model_and_report(tmp_path, capsys, data_dir, model_path):
    qpath = tmp_path / "model.q"
    jpath = tmp_path / "agreement.json"
    code = run_cli(
        "quantize", "--model", str(model_path), "--data", str(data_dir),
        "--out", str(qpath), "--json", str(jpath),
    )
    assert code == 0
    assert qpath.exists()
    out = capsys.readouterr().out
    assert "weight payload" in out
    records = json.loads(jpath.read_text())
    assert len(records) == 8
    assert records[-1]["class"] == "summary"


def test_replay_deterministic_stream(tmp_path, data_dir, model_path):
    out1, out2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
    for out in (out1, out2):
        code = run_cli(
            "replay", "--capture", str(data_dir / "capture.csv"),
            "--model", str(model_path), "--out", str(out), "--deterministic",
        )
        assert code == 0
    assert out1.read_bytes() == out2.read_bytes()
    lines = out1.read_text().strip().splitlines()
    assert lines[0].startswith("start_ts_us,")
    assert len(lines) == 1 + 24
    assert all(line.endswith(",0") for line in lines[1:])  # zeroed latency


def test_replay_missing_model_error(capsys, data_dir):
    code = run_cli(
        "replay", "--capture", str(data_dir / "capture.csv"),
        "--model", str(data_dir / "missing.w"),
    )
    assert code == 1
    err = capsys.readouterr().err
    assert "error: model-not-found:" in err


def test_usage_error_exits_2(data_dir):
    with pytest.raises(SystemExit) as exc:
        run_cli("replay", "--capture", "x", "--model", "y", "--no-such-flag")
    assert exc.value.code == 2


def test_help_lists_every_flag():
    parser = build_parser()
    sub_actions = [
        a for a in parser._actions if isinstance(a, type(parser._subparsers._group_actions[0]))
    ]
    subparsers = sub_actions[0].choices
    assert set(subparsers) == {
        "synth", "preprocess", "filter-design", "train", "eval",
        "quantize", "replay", "bench",
    }
    for name, sp in subparsers.items():
        help_text = sp.format_help()
        for action in sp._actions:
            for option in action.option_strings:
                assert option in help_text, f"{name}: {option} missing from --help"


def test_config_file_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"order": 4}))
    # file value applies when the flag is absent
    assert run_cli("--config", str(cfg), "filter-design", "--cutoff", "10", "--fs", "100") == 0
    out = capsys.readouterr().out
    assert "order 4" in out
    # explicit flag wins over the file
    assert run_cli(
        "--config", str(cfg), "filter-design",
        "--cutoff", "10", "--fs", "100", "--order", "8",
    ) == 0
    out = capsys.readouterr().out
    assert "order 8" in out


def test_bench_runs_and_reports(tmp_path, capsys, data_dir, model_path):
    jpath = tmp_path / "bench.json"
    code = run_cli(
        "bench", "--capture", str(data_dir / "capture.csv"),
        "--model", str(model_path), "--json", str(jpath),
        "--min-duration", "1.0",
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "throughput" in out and "int8 inference cpu" in out
    report = json.loads(jpath.read_text())
    assert report["frames_per_s"] > 0
    assert report["int8_cpu_us_per_window"] is not None
