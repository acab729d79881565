"""Median despiking and 8th-order Butterworth low-pass filtering.

The Butterworth design starts from the analog prototype (poles uniformly
spaced on a circle of radius equal to the pre-warped cutoff), maps it to
the digital domain with the bilinear transform, and realises it both as a
full-order coefficient pair (b, a) and as cascaded second-order sections.
The cascade is the default numeric path; the full-order difference
equation is kept as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import (
    ConfigError,
    DomainError,
    EmptyInputError,
    FilterDesignError,
    NumericInputError,
)


@dataclass(frozen=True)
class MedianConfig:
    """Sliding-median window radius; window length is 2*radius_k + 1."""

    radius_k: int = 2

    def __post_init__(self):
        if self.radius_k < 1:
            raise ConfigError(f"median radius_k must be >= 1, got {self.radius_k}")


def median_filter(x, cfg: MedianConfig) -> np.ndarray:
    """Sliding-window median with shrinking windows at the series ends.

    y[n] is the median of x over [max(0, n-k), min(L-1, n+k)]; windows with
    an even number of samples (possible only at the boundaries) use the
    mean of the two middle order statistics.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise EmptyInputError(f"median_filter expects a 1-d series, got ndim={x.ndim}")
    n = x.size
    if n == 0:
        raise EmptyInputError("median_filter: empty series")
    k = cfg.radius_k
    y = np.empty(n, dtype=np.float64)
    if n >= 2 * k + 1:
        windows = np.lib.stride_tricks.sliding_window_view(x, 2 * k + 1)
        y[k : n - k] = np.median(windows, axis=-1)
        truncated = list(range(k)) + list(range(n - k, n))
    else:
        truncated = range(n)  # every window is truncated
    for i in truncated:
        y[i] = np.median(x[max(0, i - k) : i + k + 1])
    return y


@dataclass(frozen=True)
class IirFilter:
    """Digital Butterworth low-pass.

    ``b`` holds the order+1 numerator coefficients, ``a`` the order
    denominator coefficients a1..aN (a0 = 1 implicit).  ``sos`` is the
    equivalent cascade of (b0, b1, b2, 1, a1, a2) sections used by
    :func:`apply_iir`.
    """

    b: np.ndarray
    a: np.ndarray
    order: int
    sample_rate_hz: float
    cutoff_hz: float
    sos: np.ndarray

    def __post_init__(self):
        for name in ("b", "a", "sos"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def poles(self) -> np.ndarray:
        """Poles of the realised transfer function (roots of the denominator)."""
        return np.roots(np.concatenate(([1.0], self.a)))


def design_butterworth(
    order: int = 8,
    cutoff_hz: float = 10.0,
    sample_rate_hz: float = 100.0,
) -> IirFilter:
    """Design a digital Butterworth low-pass via the bilinear transform.

    The analog cutoff is pre-warped so the digital magnitude response
    crosses 1/sqrt(2) exactly at ``cutoff_hz``.  Unity gain at DC.
    """
    if order < 2 or order % 2:
        raise FilterDesignError(f"order must be a positive even integer, got {order}")
    if not 0.0 < cutoff_hz < sample_rate_hz / 2.0:
        raise FilterDesignError(
            f"cutoff {cutoff_hz} Hz must lie in (0, {sample_rate_hz / 2.0}) Hz"
        )
    fs2 = 2.0 * sample_rate_hz  # 2/T with T = 1/fs
    warped = fs2 * np.tan(np.pi * cutoff_hz / sample_rate_hz)

    k = np.arange(order)
    analog_poles = warped * np.exp(1j * (np.pi / 2.0 + (2.0 * k + 1.0) * np.pi / (2.0 * order)))
    digital_poles = (fs2 + analog_poles) / (fs2 - analog_poles)

    # pair each pole with its conjugate; one section per positive-imag pole,
    # ordered by increasing magnitude for a well-scaled cascade
    upper = sorted(
        (p for p in digital_poles if p.imag > 0), key=lambda p: abs(p)
    )
    if len(upper) != order // 2:
        raise FilterDesignError("pole pairing failed; non-conjugate pole set")
    sos = np.empty((order // 2, 6), dtype=np.float64)
    for i, p in enumerate(upper):
        a1 = -2.0 * p.real
        a2 = abs(p) ** 2
        gain = (1.0 + a1 + a2) / 4.0  # unity DC gain per section
        sos[i] = (gain, 2.0 * gain, gain, 1.0, a1, a2)

    a_full = np.real(np.poly(digital_poles))
    b_full = np.real(np.poly(-np.ones(order)))
    b_full = b_full * np.prod([s[0] for s in sos])
    return IirFilter(
        b=b_full,
        a=a_full[1:],
        order=order,
        sample_rate_hz=sample_rate_hz,
        cutoff_hz=cutoff_hz,
        sos=sos,
    )


@njit(cache=True)
def _sosfilt(sos, x):
    # direct form II transposed, zero initial conditions
    y = x.copy()
    for s in range(sos.shape[0]):
        b0 = sos[s, 0]
        b1 = sos[s, 1]
        b2 = sos[s, 2]
        a1 = sos[s, 4]
        a2 = sos[s, 5]
        w1 = 0.0
        w2 = 0.0
        for n in range(y.size):
            xn = y[n]
            yn = b0 * xn + w1
            w1 = b1 * xn - a1 * yn + w2
            w2 = b2 * xn - a2 * yn
            y[n] = yn
    return y


@njit(cache=True)
def _direct_form(b, a, x):
    # y[n] = sum_k b[k] x[n-k] - sum_k a[k] y[n-k], zero initial conditions
    n = x.size
    nb = b.size
    na = a.size
    y = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for k in range(nb):
            if i - k >= 0:
                acc += b[k] * x[i - k]
        for k in range(na):
            if i - k - 1 >= 0:
                acc -= a[k] * y[i - k - 1]
        y[i] = acc
    return y


def _check_input(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise NumericInputError(f"expected a 1-d series, got ndim={x.ndim}")
    if not np.all(np.isfinite(x)):
        bad = int(np.argmin(np.isfinite(x)))
        raise NumericInputError(f"non-finite input sample at index {bad}")
    return x


def apply_iir(filt: IirFilter, x) -> np.ndarray:
    """Run the filter over a series (second-order-section cascade)."""
    x = _check_input(x)
    return _sosfilt(filt.sos, x)


def apply_iir_direct(filt: IirFilter, x) -> np.ndarray:
    """Full-order difference-equation path; cross-check for apply_iir."""
    x = _check_input(x)
    return _direct_form(filt.b, filt.a, x)


def frequency_response(filt: IirFilter, omega):
    """Evaluate H(e^jw) from the stored coefficients; omega in [0, pi).

    Numerator and denominator are polynomials in z^-1 evaluated by Horner's
    scheme at z^-1 = e^-jw.
    """
    om = np.asarray(omega, dtype=np.float64)
    if np.any(om < 0.0) or np.any(om >= np.pi):
        raise DomainError("omega must lie in [0, pi)")
    zinv = np.exp(-1j * om)
    num = np.zeros_like(zinv)
    for coeff in filt.b[::-1]:
        num = num * zinv + coeff
    den = np.zeros_like(zinv)
    for coeff in filt.a[::-1]:
        den = (den + coeff) * zinv
    h = num / (1.0 + den)
    if om.ndim == 0:
        return complex(h)
    return h


def analog_prototype_gain_sq(order: int, freq_ratio: float) -> float:
    """Squared magnitude of the analog prototype at omega/omega_c = freq_ratio."""
    return 1.0 / (1.0 + freq_ratio ** (2 * order))


def filter_report(filt: IirFilter) -> str:
    """Text table of coefficients (12 significant digits) and pole magnitudes."""
    lines = [
        f"butterworth low-pass: order {filt.order}, "
        f"cutoff {filt.cutoff_hz:g} Hz, fs {filt.sample_rate_hz:g} Hz",
        "coefficients:",
    ]
    for i, v in enumerate(filt.b):
        lines.append(f"  b[{i}] = {v:.12g}")
    lines.append("  a[0] = 1")
    for i, v in enumerate(filt.a, start=1):
        lines.append(f"  a[{i}] = {v:.12g}")
    mags = np.sort(np.abs(filt.poles()))[::-1]
    lines.append("pole magnitudes:")
    for v in mags:
        lines.append(f"  {v:.12g}")
    return "\n".join(lines)
