"""Synthetic labelled CSI captures for desk-scale verification.

Each activity class imprints a characteristic frequency and envelope on
the per-subcarrier amplitude (run beats walk in band and burst rate, a
fall is a single high-energy transient, an empty room is noise floor
only).  Amplitudes are re-encoded as integer iq pairs under a random
phase, so a generated capture round-trips through the normal ingest
path.  No claim of physical channel realism; the point is a separable,
labelled corpus with the right shape and rates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dsp import DspConfig, preprocess
from .errors import ConfigError
from .ingest import SUBCARRIER_COUNT, CaptureSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ActivityProfile:
    class_id: int
    name: str
    dominant_freq_hz: float
    modulation_amplitude: float
    envelope: str  # steady | bursts | transient | none
    burst_rate_hz: float = 0.6
    phase_gradient: float = 0.0  # tone phase advance per subcarrier, radians
    base_amplitude: float = 180.0
    noise_sigma: float = 3.0


# Class tones sit below ~2 Hz so they survive the preprocessing chain
# (the low-pass plus dropping the fastest EMD mode removes faster
# content); classes are separated by tone frequency, envelope shape, and
# the phase gradient across subcarriers.
DEFAULT_PROFILES = (
    ActivityProfile(0, "lie_down", 0.50, 16.0, "steady", phase_gradient=0.00),
    ActivityProfile(1, "fall", 1.90, 34.0, "transient", phase_gradient=0.30),
    ActivityProfile(2, "walk", 1.25, 22.0, "bursts", burst_rate_hz=0.45, phase_gradient=0.10),
    ActivityProfile(3, "pickup", 0.95, 18.0, "steady", phase_gradient=-0.15),
    ActivityProfile(4, "run", 1.70, 30.0, "bursts", burst_rate_hz=0.90, phase_gradient=0.20),
    ActivityProfile(5, "sit_down", 0.70, 14.0, "steady", phase_gradient=0.15),
    ActivityProfile(6, "stand_up", 1.45, 20.0, "steady", phase_gradient=-0.30),
    ActivityProfile(7, "no_person", 0.0, 0.0, "none", noise_sigma=1.5),
)


def _envelope(profile: ActivityProfile, t: np.ndarray, rng) -> np.ndarray:
    if profile.envelope == "steady":
        return np.ones_like(t)
    if profile.envelope == "bursts":
        gate = np.cos(2 * np.pi * profile.burst_rate_hz * t)
        return 0.35 + 0.65 * np.clip(gate, 0.0, None) ** 2
    if profile.envelope == "transient":
        # one high-energy bump per 2 s block, jittered around the centre
        env = np.zeros_like(t)
        block = 200
        for start in range(0, t.size, block):
            n = min(block, t.size - start)
            centre = start + n / 2 + rng.uniform(-0.15, 0.15) * n
            idx = np.arange(start, start + n)
            env[start : start + n] = np.exp(-0.5 * ((idx - centre) / 12.0) ** 2)
        return env
    if profile.envelope == "none":
        return np.zeros_like(t)
    raise ConfigError(f"unknown envelope kind {profile.envelope!r}")


def generate_capture(
    profile: ActivityProfile,
    n_frames: int,
    seed: int,
    sample_rate_hz: float = 100.0,
    start_timestamp_us: int = 0,
) -> CaptureSet:
    """Deterministic capture for one class: base + modulation + noise,
    re-encoded as integer iq pairs with amplitude-faithful rounding."""
    if profile.dominant_freq_hz >= sample_rate_hz / 2.0:
        raise ConfigError(
            f"profile {profile.name}: dominant frequency "
            f"{profile.dominant_freq_hz} Hz >= Nyquist ({sample_rate_hz / 2.0} Hz)"
        )
    rng = np.random.default_rng(seed)
    t = np.arange(n_frames) / sample_rate_hz
    env = _envelope(profile, t, rng)
    subcarriers = np.arange(SUBCARRIER_COUNT)
    gain = 0.75 + 0.5 * subcarriers / (SUBCARRIER_COUNT - 1)
    tone_phase = profile.phase_gradient * subcarriers + rng.uniform(0.0, 2 * np.pi)
    tone = np.sin(
        2 * np.pi * profile.dominant_freq_hz * t[:, None] + tone_phase[None, :]
    )
    amps = (
        profile.base_amplitude * gain[None, :]
        + profile.modulation_amplitude * gain[None, :] * env[:, None] * tone
        + rng.normal(scale=profile.noise_sigma, size=(n_frames, SUBCARRIER_COUNT))
    )
    amps = np.clip(amps, 1.0, None)
    phase = rng.uniform(0.0, 2 * np.pi, size=(n_frames, SUBCARRIER_COUNT))
    iq = np.empty((n_frames, SUBCARRIER_COUNT, 2), dtype=np.int32)
    iq[:, :, 0] = np.rint(amps * np.cos(phase))
    iq[:, :, 1] = np.rint(amps * np.sin(phase))
    period_us = round(1e6 / sample_rate_hz)
    timestamps = start_timestamp_us + np.arange(n_frames, dtype=np.int64) * period_us
    return CaptureSet(timestamps, iq, sample_rate_hz)


@dataclass(frozen=True)
class LabelSegment:
    start_frame: int
    end_frame: int  # exclusive
    class_id: int
    class_name: str


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    frames_per_class: int = 2000
    profiles: tuple = DEFAULT_PROFILES
    train_ratio: float = 0.8
    window_len: int = 200
    stride: int = 200
    sample_rate_hz: float = 100.0
    dsp: DspConfig = field(default_factory=DspConfig)

    def __post_init__(self):
        if not 0.0 < self.train_ratio < 1.0:
            raise ConfigError(f"train_ratio must be in (0, 1), got {self.train_ratio}")
        if self.frames_per_class < self.window_len:
            raise ConfigError(
                f"frames_per_class={self.frames_per_class} cannot fill one "
                f"window of {self.window_len} frames"
            )


def generate_labeled_capture(cfg: SynthConfig):
    """One capture with per-class segments plus the label segments."""
    ts_parts, iq_parts, segments = [], [], []
    frame_cursor = 0
    for profile in cfg.profiles:
        cap = generate_capture(
            profile,
            cfg.frames_per_class,
            seed=cfg.seed + profile.class_id,
            sample_rate_hz=cfg.sample_rate_hz,
            start_timestamp_us=round(frame_cursor * 1e6 / cfg.sample_rate_hz),
        )
        ts_parts.append(cap.timestamps_us)
        iq_parts.append(cap.iq)
        segments.append(
            LabelSegment(
                frame_cursor,
                frame_cursor + cfg.frames_per_class,
                profile.class_id,
                profile.name,
            )
        )
        frame_cursor += cfg.frames_per_class
    capture = CaptureSet(
        np.concatenate(ts_parts), np.concatenate(iq_parts), cfg.sample_rate_hz
    )
    return capture, segments


def write_labels(path, segments) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# start_frame,end_frame,class_id,class_name\n")
        for seg in segments:
            fh.write(f"{seg.start_frame},{seg.end_frame},{seg.class_id},{seg.class_name}\n")


def read_labels(path):
    segments = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            start, end, class_id, name = line.split(",")
            segments.append(LabelSegment(int(start), int(end), int(class_id), name))
    return segments


def windows_from_capture(capture: CaptureSet, segments, cfg: SynthConfig):
    """Cut label-pure windows and preprocess each one.

    Returns (windows (N, features, window_len) float32, labels (N,),
    start timestamps (N,)).  Windows never span a segment boundary.
    """
    amps = capture.amplitudes()
    windows, labels, starts = [], [], []
    for seg in segments:
        seg_len = seg.end_frame - seg.start_frame
        n_windows = (
            (seg_len - cfg.window_len) // cfg.stride + 1
            if seg_len >= cfg.window_len
            else 0
        )
        for w in range(n_windows):
            begin = seg.start_frame + w * cfg.stride
            block = amps[begin : begin + cfg.window_len]
            feats = preprocess(block, cfg.dsp, capture.sample_rate_hz)
            windows.append(feats.T.astype(np.float32))
            labels.append(seg.class_id)
            starts.append(int(capture.timestamps_us[begin]))
        log.debug("segment %s: %d windows", seg.class_name, n_windows)
    if not windows:
        raise ConfigError("no segment holds even one full window")
    return (
        np.stack(windows),
        np.asarray(labels, dtype=np.int64),
        np.asarray(starts, dtype=np.int64),
    )


def split_train_test(windows, labels, train_ratio: float):
    """Per-class prefix split; deterministic and exactly stratified."""
    labels = np.asarray(labels)
    train_idx, test_idx = [], []
    for class_id in np.unique(labels):
        idx = np.flatnonzero(labels == class_id)
        n_train = int(len(idx) * train_ratio)
        if n_train == 0 or n_train == len(idx):
            raise ConfigError(
                f"class {class_id}: {len(idx)} windows cannot honour "
                f"a {train_ratio} split"
            )
        train_idx.extend(idx[:n_train])
        test_idx.extend(idx[n_train:])
    train_idx = np.asarray(train_idx)
    test_idx = np.asarray(test_idx)
    return (
        windows[train_idx],
        labels[train_idx],
        windows[test_idx],
        labels[test_idx],
    )


@dataclass(frozen=True)
class DatasetSplit:
    train_windows: np.ndarray
    train_labels: np.ndarray
    test_windows: np.ndarray
    test_labels: np.ndarray


def build_dataset(cfg: SynthConfig) -> DatasetSplit:
    """Generate, window, preprocess, and split in one go."""
    capture, segments = generate_labeled_capture(cfg)
    windows, labels, _ = windows_from_capture(capture, segments, cfg)
    train_w, train_l, test_w, test_l = split_train_test(windows, labels, cfg.train_ratio)
    return DatasetSplit(train_w, train_l, test_w, test_l)


def spectral_centroid_hz(series, sample_rate_hz: float = 100.0) -> float:
    """Energy-weighted mean frequency of a 1-d series (DC excluded)."""
    series = np.asarray(series, dtype=np.float64)
    spec = np.abs(np.fft.rfft(series - series.mean())) ** 2
    freqs = np.fft.rfftfreq(series.size, d=1.0 / sample_rate_hz)
    power = spec[1:]
    if power.sum() == 0.0:
        return 0.0
    return float((freqs[1:] * power).sum() / power.sum())
