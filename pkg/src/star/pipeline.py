"""Streaming orchestration: windowing, staged execution, benchmarking.

Replay runs three stages (ingest -> dsp -> inference) either inline in
one thread (deterministic mode) or as three threads linked by bounded
single-producer/single-consumer queues.  A full queue blocks the
producer by default (backpressure, nothing dropped); live deployments
can opt into dropping the oldest buffered window instead.
"""

from __future__ import annotations

import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dsp import DspConfig, preprocess
from .errors import ConfigError, MeasurementError, TimestampOrderError
from .gru import softmax
from .labels import NO_PERSON_ID, class_name
from .quant import QuantGruNetwork, predict_logits

BACKPRESSURE = "backpressure"
DROP_OLDEST = "drop-oldest"


@dataclass(frozen=True)
class PipelineConfig:
    window_len: int = 200
    stride: int = 200
    queue_capacity: int = 4
    presence_threshold: float = 0.5
    drop_policy: str = BACKPRESSURE
    dsp: DspConfig = field(default_factory=DspConfig)

    def __post_init__(self):
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.queue_capacity < 2:
            raise ConfigError(
                f"queue_capacity must be >= 2, got {self.queue_capacity}"
            )
        if self.drop_policy not in (BACKPRESSURE, DROP_OLDEST):
            raise ConfigError(f"unknown drop policy {self.drop_policy!r}")


@dataclass(frozen=True)
class RawWindow:
    start_timestamp_us: int
    amplitudes: np.ndarray  # (window_len, 52)
    emitted_ns: int  # perf_counter_ns at emission; 0 in deterministic mode


@dataclass(frozen=True)
class Window:
    """One inference unit: preprocessed features in [0, 1]."""

    features: np.ndarray  # (feature_count, window_len)
    start_timestamp_us: int
    label: int | None = None


@dataclass(frozen=True)
class InferenceResult:
    start_timestamp_us: int
    presence_prob: float
    activity_probs: np.ndarray  # (7,)
    label_id: int
    label_name: str
    latency_us: int
    ingest_us: int
    dsp_us: int
    infer_us: int


class Windower:
    """Accumulates frames; emits one raw window per completed stride."""

    def __init__(self, window_len: int = 200, stride: int = 200):
        self.window_len = window_len
        self.stride = stride
        self._buffer: deque = deque(maxlen=window_len)
        self._count = 0
        self._last_ts = None

    def push(self, frame) -> RawWindow | None:
        if self._last_ts is not None and frame.timestamp_us < self._last_ts:
            raise TimestampOrderError(
                f"frame timestamp {frame.timestamp_us} precedes {self._last_ts}"
            )
        self._last_ts = frame.timestamp_us
        iq = frame.iq.astype(np.float64)
        self._buffer.append(
            (frame.timestamp_us, np.hypot(iq[:, 0], iq[:, 1]))
        )
        self._count += 1
        if (
            self._count >= self.window_len
            and (self._count - self.window_len) % self.stride == 0
        ):
            start_ts, _ = self._buffer[0]
            amps = np.stack([row for _, row in self._buffer])
            return RawWindow(int(start_ts), amps, time.perf_counter_ns())
        return None


def window_count(n_frames: int, window_len: int, stride: int) -> int:
    if n_frames < window_len:
        return 0
    return (n_frames - window_len) // stride + 1


class BoundedQueue:
    """Bounded SPSC channel; blocks when full, or drops the oldest item."""

    def __init__(self, capacity: int, drop_policy: str = BACKPRESSURE):
        self._q: queue.Queue = queue.Queue(maxsize=capacity)
        self._drop = drop_policy == DROP_OLDEST
        self.dropped = 0

    def put(self, item) -> None:
        if not self._drop:
            self._q.put(item)
            return
        while True:
            try:
                self._q.put_nowait(item)
                return
            except queue.Full:
                try:
                    self._q.get_nowait()
                    self.dropped += 1
                except queue.Empty:
                    pass

    def get(self):
        return self._q.get()

    def qsize(self) -> int:
        return self._q.qsize()


_SENTINEL = object()


def _model_feature_count(model) -> int:
    return model.feature_count


def _decide(model, window: Window, cfg: PipelineConfig):
    """Presence-gated classification of one window."""
    act_logits, pres_logits = predict_logits(model, window.features)
    act_probs = softmax(act_logits)
    pres_probs = softmax(pres_logits)
    presence_prob = float(pres_probs[0])
    if presence_prob < cfg.presence_threshold:
        label_id = NO_PERSON_ID
    else:
        label_id = int(np.argmax(act_probs))
    return presence_prob, act_probs, label_id


def run_stream(
    capture,
    model,
    cfg: PipelineConfig | None = None,
    threaded: bool = True,
    collect_timing: bool = True,
) -> list:
    """Replay a capture through the pipeline; one result per full window.

    With ``collect_timing`` off, every latency field is zero and the
    output depends only on the capture and the model (deterministic
    replay mode).
    """
    cfg = cfg if cfg is not None else PipelineConfig()
    if _model_feature_count(model) != cfg.dsp.feature_count:
        raise ConfigError(
            f"model expects {_model_feature_count(model)} features, "
            f"dsp config produces {cfg.dsp.feature_count}"
        )
    sample_rate = getattr(capture, "sample_rate_hz", 100.0)
    if threaded:
        return _run_threaded(capture, model, cfg, sample_rate, collect_timing)
    return _run_single(capture, model, cfg, sample_rate, collect_timing)


def _preprocess_window(raw: RawWindow, cfg: PipelineConfig, sample_rate) -> Window:
    feats = preprocess(raw.amplitudes, cfg.dsp, sample_rate)
    return Window(
        features=np.ascontiguousarray(feats.T, dtype=np.float32),
        start_timestamp_us=raw.start_timestamp_us,
    )


def _run_single(capture, model, cfg, sample_rate, collect_timing):
    windower = Windower(cfg.window_len, cfg.stride)
    results = []
    clock = time.perf_counter_ns if collect_timing else (lambda: 0)
    for frame in capture:
        t0 = clock()
        raw = windower.push(frame)
        t1 = clock()
        if raw is None:
            continue
        window = _preprocess_window(raw, cfg, sample_rate)
        t2 = clock()
        presence_prob, act_probs, label_id = _decide(model, window, cfg)
        t3 = clock()
        results.append(
            InferenceResult(
                start_timestamp_us=window.start_timestamp_us,
                presence_prob=presence_prob,
                activity_probs=act_probs,
                label_id=label_id,
                label_name=class_name(label_id),
                latency_us=(t3 - t1) // 1000,
                ingest_us=(t1 - t0) // 1000,
                dsp_us=(t2 - t1) // 1000,
                infer_us=(t3 - t2) // 1000,
            )
        )
    return results


def _run_threaded(capture, model, cfg, sample_rate, collect_timing):
    raw_q = BoundedQueue(cfg.queue_capacity, cfg.drop_policy)
    win_q = BoundedQueue(cfg.queue_capacity, cfg.drop_policy)
    results: list = []
    errors: list = []
    clock = time.perf_counter_ns if collect_timing else (lambda: 0)

    def ingest():
        windower = Windower(cfg.window_len, cfg.stride)
        try:
            for frame in capture:
                t0 = clock()
                raw = windower.push(frame)
                if raw is not None:
                    raw_q.put((raw, clock() - t0))
        except Exception as exc:  # propagated to the caller
            errors.append(exc)
        finally:
            raw_q.put(_SENTINEL)

    def dsp_stage():
        try:
            while True:
                item = raw_q.get()
                if item is _SENTINEL:
                    break
                raw, ingest_ns = item
                t0 = clock()
                window = _preprocess_window(raw, cfg, sample_rate)
                win_q.put((raw, window, ingest_ns, clock() - t0))
        except Exception as exc:
            errors.append(exc)
        finally:
            win_q.put(_SENTINEL)

    def inference():
        try:
            while True:
                item = win_q.get()
                if item is _SENTINEL:
                    break
                raw, window, ingest_ns, dsp_ns = item
                t0 = clock()
                presence_prob, act_probs, label_id = _decide(model, window, cfg)
                t1 = clock()
                latency_us = (t1 - raw.emitted_ns) // 1000 if collect_timing else 0
                results.append(
                    InferenceResult(
                        start_timestamp_us=window.start_timestamp_us,
                        presence_prob=presence_prob,
                        activity_probs=act_probs,
                        label_id=label_id,
                        label_name=class_name(label_id),
                        latency_us=latency_us,
                        ingest_us=ingest_ns // 1000,
                        dsp_us=dsp_ns // 1000,
                        infer_us=(t1 - t0) // 1000,
                    )
                )
        except Exception as exc:
            errors.append(exc)

    threads = [
        threading.Thread(target=ingest, name="star-ingest"),
        threading.Thread(target=dsp_stage, name="star-dsp"),
        threading.Thread(target=inference, name="star-infer"),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return results


RESULT_HEADER = (
    "start_ts_us,presence_prob,p_lie,p_fall,p_walk,p_pickup,p_run,p_sit,p_stand,"
    "label,latency_us"
)


def format_result(result: InferenceResult) -> str:
    probs = ",".join(f"{p:.9f}" for p in result.activity_probs)
    return (
        f"{result.start_timestamp_us},{result.presence_prob:.9f},{probs},"
        f"{result.label_name},{result.latency_us}"
    )


def write_results(path, results) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(RESULT_HEADER + "\n")
        for result in results:
            fh.write(format_result(result) + "\n")


def save_windows(path, windows, labels=None, start_ts=None) -> None:
    """Persist preprocessed windows as an npz archive."""
    windows = np.asarray(windows, dtype=np.float32)
    n = windows.shape[0]
    np.savez_compressed(
        path,
        features=windows,
        labels=np.full(n, -1, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64),
        start_ts=np.zeros(n, dtype=np.int64) if start_ts is None else np.asarray(start_ts, dtype=np.int64),
    )


def load_windows(path):
    data = np.load(path)
    return data["features"], data["labels"], data["start_ts"]


@dataclass(frozen=True)
class BenchReport:
    duration_s: float
    frames: int
    windows: int
    frames_per_s: float
    windows_per_s: float
    ingest_p50_us: float
    ingest_p99_us: float
    dsp_p50_us: float
    dsp_p99_us: float
    infer_p50_us: float
    infer_p99_us: float
    latency_p50_us: float
    latency_p99_us: float
    fp32_cpu_us_per_window: float
    int8_cpu_us_per_window: float | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def format_text(self) -> str:
        lines = [
            f"duration: {self.duration_s:.2f} s  "
            f"({self.frames} frames, {self.windows} windows)",
            f"throughput: {self.frames_per_s:.0f} frames/s, "
            f"{self.windows_per_s:.2f} windows/s",
            f"stage p50/p99 us: ingest {self.ingest_p50_us:.0f}/{self.ingest_p99_us:.0f}, "
            f"dsp {self.dsp_p50_us:.0f}/{self.dsp_p99_us:.0f}, "
            f"inference {self.infer_p50_us:.0f}/{self.infer_p99_us:.0f}",
            f"window latency p50/p99 us: {self.latency_p50_us:.0f}/{self.latency_p99_us:.0f}",
            f"fp32 inference cpu: {self.fp32_cpu_us_per_window:.0f} us/window",
        ]
        if self.int8_cpu_us_per_window is not None:
            lines.append(
                f"int8 inference cpu: {self.int8_cpu_us_per_window:.0f} us/window"
            )
        return "\n".join(lines)


def _percentiles(values):
    if not values:
        return 0.0, 0.0
    arr = np.asarray(values, dtype=np.float64)
    return float(np.percentile(arr, 50)), float(np.percentile(arr, 99))


def _cpu_time_per_window(model, windows) -> float:
    t0 = time.thread_time_ns()
    for window in windows:
        predict_logits(model, window.features)
    dt = time.thread_time_ns() - t0
    return dt / max(len(windows), 1) / 1000.0


def benchmark(
    capture,
    model,
    cfg: PipelineConfig | None = None,
    int8_model: QuantGruNetwork | None = None,
    min_duration_s: float = 1.0,
) -> BenchReport:
    """Replay the capture (looping as needed) for at least min_duration_s.

    The main pass drives the single-thread pipeline end to end with the
    fp32-or-given model; inference CPU cost per window is then measured
    for both models on the same preprocessed windows.
    """
    cfg = cfg if cfg is not None else PipelineConfig()
    if min_duration_s < 1.0:
        raise MeasurementError(
            f"min_duration_s must be >= 1 s, got {min_duration_s}"
        )
    if len(capture) < cfg.window_len:
        raise MeasurementError(
            f"capture has {len(capture)} frames; needs >= {cfg.window_len}"
        )
    sample_rate = getattr(capture, "sample_rate_hz", 100.0)

    # warm-up: one window through every path (also triggers jit compiles)
    warm = Windower(cfg.window_len, cfg.stride)
    for frame in capture:
        raw = warm.push(frame)
        if raw is not None:
            window = _preprocess_window(raw, cfg, sample_rate)
            predict_logits(model, window.features)
            if int8_model is not None:
                predict_logits(int8_model, window.features)
            break

    frames = 0
    kept_windows: list = []
    ingest_us, dsp_us, infer_us, latency_us = [], [], [], []
    t_start = time.perf_counter()
    while time.perf_counter() - t_start < min_duration_s:
        windower = Windower(cfg.window_len, cfg.stride)
        for frame in capture:
            t0 = time.perf_counter_ns()
            raw = windower.push(frame)
            t1 = time.perf_counter_ns()
            frames += 1
            if raw is None:
                continue
            window = _preprocess_window(raw, cfg, sample_rate)
            t2 = time.perf_counter_ns()
            _decide(model, window, cfg)
            t3 = time.perf_counter_ns()
            ingest_us.append((t1 - t0) / 1000.0)
            dsp_us.append((t2 - t1) / 1000.0)
            infer_us.append((t3 - t2) / 1000.0)
            latency_us.append((t3 - t1) / 1000.0)
            if len(kept_windows) < 64:
                kept_windows.append(window)
    duration = time.perf_counter() - t_start

    fp32_cpu = _cpu_time_per_window(model, kept_windows)
    int8_cpu = (
        _cpu_time_per_window(int8_model, kept_windows)
        if int8_model is not None
        else None
    )
    ingest_p = _percentiles(ingest_us)
    dsp_p = _percentiles(dsp_us)
    infer_p = _percentiles(infer_us)
    latency_p = _percentiles(latency_us)
    return BenchReport(
        duration_s=duration,
        frames=frames,
        windows=len(latency_us),
        frames_per_s=frames / duration,
        windows_per_s=len(latency_us) / duration,
        ingest_p50_us=ingest_p[0],
        ingest_p99_us=ingest_p[1],
        dsp_p50_us=dsp_p[0],
        dsp_p99_us=dsp_p[1],
        infer_p50_us=infer_p[0],
        infer_p99_us=infer_p[1],
        latency_p50_us=latency_p[0],
        latency_p99_us=latency_p[1],
        fp32_cpu_us_per_window=fp32_cpu,
        int8_cpu_us_per_window=int8_cpu,
    )
