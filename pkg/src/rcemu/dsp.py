"""Core baseband DSP primitives.

Complex sample sequences, FFT helpers, linear convolution, maximal-length
PN sequences, root-raised-cosine pulse shaping and the sliding correlator
that every higher-level stage is built on.

Conventions used throughout the package:

* FFTs use the unnormalized forward / 1/N inverse convention (numpy's
  default), so ``ifft(fft(x)) == x`` and Parseval reads
  ``sum|x|^2 == sum|X|^2 / N``.
* Pulse shaping and sliding correlation are circular over one PN period.
  A periodically transmitted sounding waveform has no edge transients, so
  the shaped reference is exactly ``len(chips) * sps`` samples long.
* The sliding correlator is normalized by the reference energy: a
  noise-free loopback yields a peak of exactly 1.0 at lag zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError, NumericalError

__all__ = [
    "ComplexSignal",
    "PnSequence",
    "RrcFilter",
    "generate_pn",
    "rrc_taps",
    "fft",
    "ifft",
    "convolve",
    "slide_correlate",
    "upsample_and_shape",
    "DEFAULT_PN_POLYNOMIALS",
]


@dataclass
class ComplexSignal:
    """A uniformly sampled complex baseband sequence.

    Attributes:
        samples: complex sample array (copied on construction, 1-D).
        sample_rate: samples per second, > 0.
    """

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 1:
            raise ConfigError("samples must be one-dimensional")
        if self.samples.size == 0:
            raise ConfigError("samples must be non-empty")
        if not (self.sample_rate > 0):
            raise ConfigError("sample_rate must be positive")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


# Primitive polynomials (bitmask includes x^m and x^0) for the orders the
# sounder realistically uses. Order 12 is the default sounding length.
DEFAULT_PN_POLYNOMIALS = {
    2: 0b111,                       # x^2+x+1
    3: 0b1011,                      # x^3+x+1
    4: 0b10011,                     # x^4+x+1
    5: 0b100101,                    # x^5+x^2+1
    6: 0b1000011,                   # x^6+x+1
    7: 0b10001001,                  # x^7+x^3+1
    8: 0b100011101,                 # x^8+x^4+x^3+x^2+1
    9: 0b1000010001,                # x^9+x^4+1
    10: 0b10000001001,              # x^10+x^3+1
    11: 0b100000000101,             # x^11+x^2+1
    12: (1 << 12) | (1 << 6) | (1 << 4) | (1 << 1) | 1,   # x^12+x^6+x^4+x+1
    13: (1 << 13) | (1 << 4) | (1 << 3) | (1 << 1) | 1,
    14: (1 << 14) | (1 << 10) | (1 << 6) | (1 << 1) | 1,
    15: (1 << 15) | (1 << 1) | 1,
    16: (1 << 16) | (1 << 12) | (1 << 3) | (1 << 1) | 1,
    17: (1 << 17) | (1 << 3) | 1,
    18: (1 << 18) | (1 << 7) | 1,
    19: (1 << 19) | (1 << 5) | (1 << 2) | (1 << 1) | 1,
    20: (1 << 20) | (1 << 3) | 1,
}


@dataclass
class PnSequence:
    """Maximal-length (+1 / -1) pseudo-noise sequence."""

    chips: np.ndarray
    order: int
    polynomial: int

    def __post_init__(self):
        self.chips = np.asarray(self.chips, dtype=np.float64)
        n = (1 << self.order) - 1
        if len(self.chips) != n:
            raise ConfigError(f"m-sequence of order {self.order} must have {n} chips")

    @property
    def length(self) -> int:
        return len(self.chips)


@dataclass
class RrcFilter:
    """Root-raised-cosine pulse shaping filter (unit energy, linear phase)."""

    rolloff: float
    span_symbols: int
    samples_per_symbol: int
    taps: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float64)


def generate_pn(order: int, polynomial: int | None = None) -> PnSequence:
    """Generate a maximal-length sequence from a Fibonacci LFSR.

    Parameters:
        order: register length m, 2 <= m <= 20. The sequence has 2^m - 1
            chips mapped to +1/-1 (bit 0 -> +1, bit 1 -> -1).
        polynomial: feedback polynomial bitmask including the x^m and x^0
            terms. Defaults to a known primitive polynomial for the order.

    Raises:
        ConfigError: order out of range or polynomial malformed.
        NumericalError: the polynomial is not primitive (the register
            state returns to its seed before 2^m - 1 steps, or never).
    """
    if not (2 <= order <= 20):
        raise ConfigError("order must be in [2, 20]")
    if polynomial is None:
        polynomial = DEFAULT_PN_POLYNOMIALS[order]
    if not (polynomial >> order) & 1 or not polynomial & 1:
        raise ConfigError("polynomial bitmask must include the x^m and x^0 terms")

    n = (1 << order) - 1
    taps = [i for i in range(order) if (polynomial >> i) & 1]
    state = 1
    seed = state
    bits = np.empty(n, dtype=np.int8)
    for i in range(n):
        bits[i] = state & 1
        fb = 0
        for t in taps:
            fb ^= (state >> t) & 1
        state = (state >> 1) | (fb << (order - 1))
        if state == seed and i < n - 1:
            raise NumericalError(
                f"polynomial {polynomial:#x} is not primitive for order {order}: "
                f"period {i + 1} < {n}"
            )
    if state != seed:
        raise NumericalError(
            f"polynomial {polynomial:#x} is not primitive for order {order}"
        )
    return PnSequence(chips=1.0 - 2.0 * bits, order=order, polynomial=polynomial)


def rrc_taps(rolloff: float, span_symbols: int, sps: int) -> RrcFilter:
    """Closed-form root-raised-cosine taps.

    The filter spans ``span_symbols`` symbol durations, giving
    ``span_symbols * sps + 1`` symmetric taps, normalized to unit energy.
    The removable singularities at t=0 and t = +-Ts/(4*rolloff) are
    evaluated by their analytic limits.
    """
    if not (0.0 < rolloff <= 1.0):
        raise ConfigError("rolloff must be in (0, 1]")
    if span_symbols < 2:
        raise ConfigError("span_symbols must be >= 2")
    if sps < 1:
        raise ConfigError("sps must be >= 1")

    n = span_symbols * sps + 1
    t = (np.arange(n) - (n - 1) / 2) / sps  # in symbol durations
    h = np.empty(n)
    b = rolloff
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1.0 - b + 4.0 * b / np.pi
        elif abs(abs(ti) - 1.0 / (4.0 * b)) < 1e-12:
            h[i] = (b / np.sqrt(2.0)) * (
                (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * b))
                + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * b))
            )
        else:
            num = np.sin(np.pi * ti * (1.0 - b)) + 4.0 * b * ti * np.cos(np.pi * ti * (1.0 + b))
            den = np.pi * ti * (1.0 - (4.0 * b * ti) ** 2)
            h[i] = num / den
    h /= np.sqrt(np.sum(h * h))
    return RrcFilter(rolloff=rolloff, span_symbols=span_symbols, samples_per_symbol=sps, taps=h)


def fft(x: ComplexSignal) -> ComplexSignal:
    """Forward DFT (unnormalized), length preserved."""
    return ComplexSignal(np.fft.fft(x.samples), x.sample_rate)


def ifft(x: ComplexSignal) -> ComplexSignal:
    """Inverse DFT (1/N normalization), length preserved."""
    return ComplexSignal(np.fft.ifft(x.samples), x.sample_rate)


def convolve(a: ComplexSignal, b: ComplexSignal, mode: str = "full") -> ComplexSignal:
    """Linear convolution of two signals at the same sample rate.

    ``mode='full'`` returns len(a)+len(b)-1 samples; ``mode='same'``
    returns the central len(a) samples.
    """
    if a.sample_rate != b.sample_rate:
        raise ConfigError(
            f"sample-rate mismatch: {a.sample_rate} vs {b.sample_rate}"
        )
    if mode not in ("full", "same"):
        raise ConfigError("mode must be 'full' or 'same'")
    y = fftconvolve(a.samples, b.samples, mode=mode)
    return ComplexSignal(y, a.sample_rate)


def upsample_and_shape(pn: PnSequence, filt: RrcFilter) -> ComplexSignal:
    """Zero-stuff the chip train and pulse-shape it, circularly.

    The chips are upsampled by the filter's samples-per-symbol factor and
    filtered by the RRC taps wrapped around one PN period, producing the
    periodic sounding waveform (8190 samples for a PN-4095 at 2 samples
    per chip). The returned sample rate is in units of samples per chip
    duration; multiply by the chip rate externally when a physical rate
    is needed (see :func:`reference_waveform` in the sounder module).
    """
    sps = filt.samples_per_symbol
    period = pn.length * sps
    if len(filt.taps) > period:
        raise ConfigError("filter longer than one PN period")
    up = np.zeros(period)
    up[::sps] = pn.chips
    # zero-phase circular shaping: center tap at lag 0
    kernel = np.zeros(period)
    center = len(filt.taps) // 2
    for k, tap in enumerate(filt.taps):
        kernel[(k - center) % period] = tap
    shaped = np.fft.ifft(np.fft.fft(up) * np.fft.fft(kernel))
    return ComplexSignal(shaped, float(sps))


def slide_correlate(rx: ComplexSignal, ref: ComplexSignal) -> ComplexSignal:
    """Sliding (circular) correlation of a received stream against one
    reference period.

    All complete reference periods contained in ``rx`` are coherently
    folded before correlating, so a multi-period capture is averaged for
    free. The output is one period long and normalized by the reference
    energy: a noise-free loopback peaks at exactly 1.0 at the true delay.
    """
    if rx.sample_rate != ref.sample_rate:
        raise ConfigError("rx and ref sample rates differ")
    period = len(ref)
    if len(rx) < period:
        raise ConfigError(
            f"rx ({len(rx)} samples) shorter than one reference period ({period})"
        )
    n_per = len(rx) // period
    folded = rx.samples[: n_per * period].reshape(n_per, period).mean(axis=0)
    spec = np.fft.fft(folded) * np.conj(np.fft.fft(ref.samples))
    corr = np.fft.ifft(spec) / ref.energy
    return ComplexSignal(corr, rx.sample_rate)
