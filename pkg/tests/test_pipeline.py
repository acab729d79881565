import threading
import time

import numpy as np
import pytest

from star.errors import ConfigError, MeasurementError, TimestampOrderError
from star.gru import GruConfig, init_params
from star.ingest import CaptureSet
from star.pipeline import (
    BACKPRESSURE,
    DROP_OLDEST,
    BoundedQueue,
    PipelineConfig,
    Windower,
    benchmark,
    format_result,
    load_windows,
    run_stream,
    save_windows,
    window_count,
    write_results,
)
from star.quant import CalibrationSet, quantize_network
from star.synth import DEFAULT_PROFILES, generate_capture


def frames_of(capture):
    return list(capture)


@pytest.fixture(scope="module")
def capture():
    return generate_capture(DEFAULT_PROFILES[2], 640, seed=2)


@pytest.fixture(scope="module")
def net():
    return init_params(GruConfig(), seed=1)


def test_windower_counts(capture):
    w = Windower(window_len=200, stride=200)
    emitted = []
    for i, frame in enumerate(frames_of(capture)[:400]):
        out = w.push(frame)
        if i < 199:
            assert out is None
        if out is not None:
            emitted.append((i, out))
    assert [i for i, _ in emitted] == [199, 399]
    first = emitted[0][1]
    assert first.amplitudes.shape == (200, 52)
    assert first.start_timestamp_us == int(capture.timestamps_us[0])


def test_windower_overlapping_strides(capture):
    w = Windower(window_len=200, stride=100)
    hits = []
    for i, frame in enumerate(frames_of(capture)[:300]):
        if w.push(frame) is not None:
            hits.append(i)
    assert hits == [199, 299]  # windows starting at frames 0 and 100


def test_windower_rejects_out_of_order(capture):
    w = Windower()
    frames = frames_of(capture)
    w.push(frames[1])
    with pytest.raises(TimestampOrderError):
        w.push(frames[0])


def test_window_count_formula():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(0, 1000))
        wl = int(rng.integers(1, 300))
        st = int(rng.integers(1, 300))
        # enumeration oracle
        count = len([s for s in range(0, max(n - wl + 1, 0), st)]) if n >= wl else 0
        assert window_count(n, wl, st) == count


def test_run_stream_result_count_and_order(capture, net):
    results = run_stream(capture, net, PipelineConfig(), threaded=False)
    assert len(results) == 3  # 640 frames, window 200, stride 200
    starts = [r.start_timestamp_us for r in results]
    assert starts == sorted(starts) and len(set(starts)) == 3
    for r in results:
        assert abs(r.activity_probs.sum() - 1.0) < 1e-6
        assert 0.0 <= r.presence_prob <= 1.0


def test_run_stream_threaded_matches_single(capture, net):
    single = run_stream(capture, net, threaded=False, collect_timing=False)
    threaded = run_stream(capture, net, threaded=True, collect_timing=False)
    assert len(single) == len(threaded)
    for a, b in zip(single, threaded):
        assert a.start_timestamp_us == b.start_timestamp_us
        np.testing.assert_array_equal(a.activity_probs, b.activity_probs)
        assert a.presence_prob == b.presence_prob
        assert a.label_id == b.label_id


def test_run_stream_deterministic_replay(capture, net):
    a = run_stream(capture, net, threaded=False, collect_timing=False)
    b = run_stream(capture, net, threaded=False, collect_timing=False)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.activity_probs, rb.activity_probs)
        assert ra.presence_prob == rb.presence_prob
        assert ra.latency_us == rb.latency_us == 0


def test_run_stream_config_mismatch(capture):
    small = init_params(GruConfig(feature_count=10, hidden=4), seed=0)
    with pytest.raises(ConfigError):
        run_stream(capture, small)


def test_presence_gating_forces_no_person_label(capture, net):
    cfg = PipelineConfig(presence_threshold=1.1)  # gate always closed
    results = run_stream(capture, net, cfg, threaded=False)
    assert all(r.label_id == 7 and r.label_name == "no_person" for r in results)
    open_cfg = PipelineConfig(presence_threshold=-0.1)  # gate always open
    results = run_stream(capture, net, open_cfg, threaded=False)
    assert all(r.label_id == int(np.argmax(r.activity_probs)) for r in results)


def test_bounded_queue_backpressure_no_loss():
    q = BoundedQueue(capacity=2, drop_policy=BACKPRESSURE)
    seen = []
    observed_sizes = []

    def consumer():
        time.sleep(0.05)
        for _ in range(6):
            observed_sizes.append(q.qsize())
            seen.append(q.get())

    t = threading.Thread(target=consumer)
    t.start()
    for i in range(6):
        q.put(i)
        assert q.qsize() <= 2
    t.join()
    assert seen == list(range(6))
    assert q.dropped == 0
    assert max(observed_sizes) <= 2


def test_bounded_queue_drop_oldest():
    q = BoundedQueue(capacity=2, drop_policy=DROP_OLDEST)
    for i in range(5):
        q.put(i)
    assert q.dropped == 3
    assert q.get() == 3
    assert q.get() == 4


def test_queue_capacity_validated():
    with pytest.raises(ConfigError):
        PipelineConfig(queue_capacity=1)
    with pytest.raises(ConfigError):
        PipelineConfig(stride=0)
    with pytest.raises(ConfigError):
        PipelineConfig(drop_policy="noisy")


def test_result_stream_format(capture, net):
    results = run_stream(capture, net, threaded=False, collect_timing=False)
    line = format_result(results[0])
    fields = line.split(",")
    assert len(fields) == 11
    assert fields[-2] in {
        "lie_down", "fall", "walk", "pickup", "run", "sit_down", "stand_up", "no_person",
    }
    assert fields[-1] == "0"


def test_write_results_roundtrip(tmp_path, capture, net):
    results = run_stream(capture, net, threaded=False, collect_timing=False)
    path = tmp_path / "results.csv"
    write_results(path, results)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("start_ts_us,")
    assert len(lines) == 1 + len(results)


def test_save_load_windows_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    windows = rng.uniform(size=(5, 49, 200)).astype(np.float32)
    labels = rng.integers(0, 8, size=5)
    path = tmp_path / "win.npz"
    save_windows(path, windows, labels, np.arange(5) * 2_000_000)
    w, l, s = load_windows(path)
    np.testing.assert_array_equal(w, windows)
    np.testing.assert_array_equal(l, labels)
    np.testing.assert_array_equal(s, np.arange(5) * 2_000_000)


def test_benchmark_report_fields(capture, net):
    calib = CalibrationSet(np.random.default_rng(0).uniform(size=(2, 49, 200)).astype(np.float32))
    qnet = quantize_network(net, calib)
    report = benchmark(capture, net, int8_model=qnet, min_duration_s=1.0)
    data = report.to_dict()
    for key in (
        "duration_s", "frames", "windows", "frames_per_s", "windows_per_s",
        "ingest_p50_us", "ingest_p99_us", "dsp_p50_us", "dsp_p99_us",
        "infer_p50_us", "infer_p99_us", "latency_p50_us", "latency_p99_us",
        "fp32_cpu_us_per_window", "int8_cpu_us_per_window",
    ):
        assert key in data
    assert report.duration_s >= 1.0
    assert report.frames_per_s > 0
    assert "throughput" in report.format_text()


def test_benchmark_guards(capture, net):
    with pytest.raises(MeasurementError):
        benchmark(capture, net, min_duration_s=0.2)
    tiny = CaptureSet(
        capture.timestamps_us[:50], capture.iq[:50], capture.sample_rate_hz
    )
    with pytest.raises(MeasurementError):
        benchmark(tiny, net)
