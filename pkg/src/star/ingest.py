"""CSI capture frames, amplitude features, and the text capture format.

A capture file is UTF-8 text, one frame per line::

    timestamp_us,re0,im0,re1,im1,...,re51,im51[,extra...]

``#``-prefixed lines are comments.  The 104 iq coefficients must be decimal
integers; trailing extra fields (receiver metadata such as RSSI or MAC)
are parsed and ignored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    MalformedRecordError,
    RecordParseError,
    TimestampOrderError,
)

log = logging.getLogger(__name__)

SUBCARRIER_COUNT = 52
IQ_COEFFICIENTS = 2 * SUBCARRIER_COUNT
DEFAULT_SAMPLE_RATE_HZ = 100.0
DEFAULT_FEATURE_COUNT = 49

# gaps longer than this many nominal sample periods are logged, not rejected
GAP_WARN_PERIODS = 3


@dataclass(frozen=True)
class CsiFrame:
    """One capture sample: a timestamp plus 52 (real, imag) subcarrier pairs."""

    timestamp_us: int
    iq: np.ndarray  # (52, 2) int32, subcarrier order as received

    def __post_init__(self):
        iq = np.asarray(self.iq, dtype=np.int32)
        if iq.shape != (SUBCARRIER_COUNT, 2):
            raise MalformedRecordError(
                f"frame needs {SUBCARRIER_COUNT} iq pairs, got shape {iq.shape}"
            )
        iq.setflags(write=False)
        object.__setattr__(self, "iq", iq)

    def __eq__(self, other):
        if not isinstance(other, CsiFrame):
            return NotImplemented
        return self.timestamp_us == other.timestamp_us and np.array_equal(self.iq, other.iq)


def parse_frame(record: str, index: int = 0) -> CsiFrame:
    """Parse one capture-file record.

    ``index`` is only used in error messages (the 1-based line number when
    called from :func:`read_capture`).
    """
    fields = record.strip().split(",")
    if len(fields) < 1 + IQ_COEFFICIENTS:
        raise MalformedRecordError(
            f"record {index}: expected {IQ_COEFFICIENTS} iq coefficients, "
            f"got {len(fields) - 1}"
        )
    try:
        timestamp_us = int(fields[0])
    except ValueError:
        raise RecordParseError(
            f"record {index}: non-integer timestamp {fields[0]!r}"
        ) from None
    coeffs = np.empty(IQ_COEFFICIENTS, dtype=np.int32)
    for i, tok in enumerate(fields[1 : 1 + IQ_COEFFICIENTS]):
        try:
            coeffs[i] = int(tok)
        except ValueError:
            raise RecordParseError(
                f"record {index}: non-integer coefficient {tok!r} at position {i}"
            ) from None
    return CsiFrame(timestamp_us, coeffs.reshape(SUBCARRIER_COUNT, 2))


def amplitude(frame: CsiFrame) -> np.ndarray:
    """Per-subcarrier modulus sqrt(re^2 + im^2); always finite and >= 0."""
    iq = frame.iq.astype(np.float64)
    return np.hypot(iq[:, 0], iq[:, 1])


@dataclass(frozen=True)
class CaptureSet:
    """An ordered frame sequence with a nominal sample rate.

    Stored column-wise (timestamp and iq arrays) so large captures stay
    compact; :meth:`frame` and iteration materialise :class:`CsiFrame`
    views on demand.
    """

    timestamps_us: np.ndarray  # (N,) int64
    iq: np.ndarray  # (N, 52, 2) int32
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self):
        ts = np.asarray(self.timestamps_us, dtype=np.int64)
        iq = np.asarray(self.iq, dtype=np.int32)
        if iq.shape != (ts.size, SUBCARRIER_COUNT, 2):
            raise DimensionError(
                f"iq shape {iq.shape} does not match {ts.size} timestamps"
            )
        if ts.size and np.any(np.diff(ts) < 0):
            bad = int(np.argmax(np.diff(ts) < 0)) + 1
            raise TimestampOrderError(
                f"timestamps decrease at frame {bad}: "
                f"{ts[bad - 1]} -> {ts[bad]}"
            )
        ts.setflags(write=False)
        iq.setflags(write=False)
        object.__setattr__(self, "timestamps_us", ts)
        object.__setattr__(self, "iq", iq)
        period_us = 1e6 / self.sample_rate_hz
        if ts.size > 1:
            gaps = int(np.sum(np.diff(ts) > GAP_WARN_PERIODS * period_us))
            if gaps:
                log.warning(
                    "capture has %d gap(s) longer than %d sample periods",
                    gaps,
                    GAP_WARN_PERIODS,
                )

    @classmethod
    def from_frames(cls, frames, sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ):
        frames = list(frames)
        ts = np.array([f.timestamp_us for f in frames], dtype=np.int64)
        if frames:
            iq = np.stack([f.iq for f in frames]).astype(np.int32)
        else:
            iq = np.empty((0, SUBCARRIER_COUNT, 2), dtype=np.int32)
        return cls(ts, iq, sample_rate_hz)

    def __len__(self) -> int:
        return self.timestamps_us.size

    def frame(self, i: int) -> CsiFrame:
        return CsiFrame(int(self.timestamps_us[i]), self.iq[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self.frame(i)

    def amplitudes(self) -> np.ndarray:
        """(N, 52) float64 per-subcarrier amplitude matrix."""
        iq = self.iq.astype(np.float64)
        return np.hypot(iq[:, :, 0], iq[:, :, 1])


def select_subcarriers(series: np.ndarray, count: int = DEFAULT_FEATURE_COUNT) -> np.ndarray:
    """Retain the first ``count`` subcarrier columns of a (T, S) matrix."""
    series = np.asarray(series)
    if series.ndim != 2:
        raise DimensionError(f"expected a 2-d series matrix, got ndim={series.ndim}")
    if count > series.shape[1]:
        raise DimensionError(
            f"cannot select {count} subcarriers from {series.shape[1]} columns"
        )
    return series[:, :count]


def read_capture(path) -> CaptureSet:
    """Read a capture file; raises naming the offending line on bad records."""
    sample_rate = DEFAULT_SAMPLE_RATE_HZ
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                if stripped.startswith("# sample_rate_hz="):
                    sample_rate = float(stripped.split("=", 1)[1])
                continue
            frames.append(parse_frame(stripped, index=lineno))
    return CaptureSet.from_frames(frames, sample_rate_hz=sample_rate)


def write_capture(path, capture: CaptureSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# csi capture v1\n")
        fh.write(f"# sample_rate_hz={capture.sample_rate_hz!r}\n")
        for i in range(len(capture)):
            row = capture.iq[i].reshape(-1)
            fh.write(str(int(capture.timestamps_us[i])))
            fh.write(",")
            fh.write(",".join(str(int(v)) for v in row))
            fh.write("\n")
