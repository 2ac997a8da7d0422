"""Sliding-correlation channel sounder.

Transmits the pulse-shaped PN waveform through a channel (synthetic
chamber snapshot or imported response) plus receiver noise, estimates
the impulse response by sliding correlation over one PN period, and
provides calibration compensation and noise windowing.

The sounding is modelled in periodic steady state: the waveform repeats
every PN period, the channel is applied circularly over that period
(valid while the channel is shorter than the period), and coherent
averaging of n periods is realized by folding, which scales the noise
variance by 1/n. Receiver SNR is referenced to the chip-rate bandwidth:
white noise at the (oversampled) receiver gets variance
``sps * mean_rx_power / snr``, so the post-correlation processing gain
over one period is 10*log10(pn_length) dB.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .chamber import Cir
from .dsp import ComplexSignal, PnSequence, generate_pn, rrc_taps, upsample_and_shape
from .equalizer import regularized_inverse_spectrum
from .errors import ConfigError, NumericalError

__all__ = [
    "WindowSpec",
    "SounderConfig",
    "SystemResponse",
    "reference_waveform",
    "sound_channel",
    "calibrate",
    "compensate_system",
    "apply_window",
    "chip_spaced",
]

# The auto window segments in two passes. Correlation noise is itself
# correlated across neighbouring lags (adjacent bins share receiver noise
# through the pulse autocorrelation), so excursions span a few bins: a
# wide coarse pass at a raised threshold finds the signal region without
# being fooled by them, then a narrow pass refines the edges to ~2 bins.
AUTO_WINDOW_SMOOTH = 5
AUTO_WINDOW_COARSE = 25
AUTO_WINDOW_COARSE_EXTRA_DB = 3.0


@dataclass
class WindowSpec:
    """Square window applied to an estimated impulse response.

    ``fixed`` keeps [start_delay, start_delay + length); ``auto`` spans
    the first through last bin whose (smoothed) power exceeds the
    estimated noise floor by ``noise_margin_db``.
    """

    mode: str = "auto"
    start_delay: float = 0.0
    length: float = 0.0
    noise_margin_db: float = 6.0

    def __post_init__(self):
        if self.mode not in ("auto", "fixed"):
            raise ConfigError("window mode must be 'auto' or 'fixed'")
        if self.mode == "fixed":
            if self.start_delay < 0 or self.length <= 0:
                raise ConfigError("fixed window needs start_delay >= 0 and length > 0")
        elif self.noise_margin_db <= 0:
            raise ConfigError("auto window needs noise_margin_db > 0")


@dataclass
class SounderConfig:
    """Channel sounder settings (defaults follow the bench configuration:
    PN-4095 at 100 MS/s, two-fold oversampling, 13-symbol RRC with 0.25
    rolloff, 10 coherently averaged periods)."""

    pn_order: int = 12
    pn_polynomial: int | None = None
    sps: int = 2
    symbol_rate: float = 100e6
    rrc_rolloff: float = 0.25
    rrc_span_symbols: int = 13
    snr_db: float = 30.0
    n_periods: int = 10
    window: WindowSpec = field(default_factory=WindowSpec)

    def __post_init__(self):
        if self.sps < 1 or self.symbol_rate <= 0:
            raise ConfigError("need sps >= 1 and symbol_rate > 0")
        if self.n_periods < 1:
            raise ConfigError("n_periods must be >= 1")

    @property
    def sample_rate(self) -> float:
        """Chip-level (oversampled) rate all CIRs must live on."""
        return self.sps * self.symbol_rate

    @property
    def pn_length(self) -> int:
        return (1 << self.pn_order) - 1

    @property
    def period_samples(self) -> int:
        return self.pn_length * self.sps


@dataclass
class SystemResponse:
    """Combined Tx+Rx chain response (impulse response on the chip-level grid)."""

    taps: ComplexSignal

    def __post_init__(self):
        if self.taps.energy == 0:
            raise ConfigError("system response must have nonzero energy")


@lru_cache(maxsize=8)
def _cached_reference(pn_order: int, polynomial: int | None, sps: int,
                      rolloff: float, span: int, sample_rate: float) -> ComplexSignal:
    pn = generate_pn(pn_order, polynomial)
    filt = rrc_taps(rolloff, span, sps)
    wave = upsample_and_shape(pn, filt)
    return ComplexSignal(wave.samples, sample_rate)


def reference_waveform(cfg: SounderConfig) -> ComplexSignal:
    """One period of the shaped PN sounding waveform at the physical rate."""
    return _cached_reference(cfg.pn_order, cfg.pn_polynomial, cfg.sps,
                             cfg.rrc_rolloff, cfg.rrc_span_symbols, cfg.sample_rate)


def _periodic_spectrum(taps: np.ndarray, period: int) -> np.ndarray:
    if len(taps) > period:
        raise ConfigError(
            f"channel ({len(taps)} taps) longer than one PN period ({period} samples): "
            "circular correlation would alias"
        )
    return np.fft.fft(taps, period)


def sound_channel(cfg: SounderConfig, channel: Cir,
                  sys: SystemResponse | None = None, seed: int = 0,
                  snr_db: float | None = None) -> Cir:
    """Estimate a channel impulse response by sliding correlation.

    The raw estimate is the shaped PN waveform convolved with the system
    response and the channel, noise added at the receiver, ``n_periods``
    coherently averaged and correlated against the reference. One PN
    period long, on the chip-level grid. Deterministic for a given seed.
    """
    if channel.sample_rate != cfg.sample_rate:
        raise ConfigError(
            f"channel rate {channel.sample_rate} != sounder chip-level rate {cfg.sample_rate}"
        )
    ref = reference_waveform(cfg)
    period = len(ref)
    spec = np.fft.fft(ref.samples) * _periodic_spectrum(channel.taps.samples, period)
    if sys is not None:
        spec = spec * _periodic_spectrum(sys.taps.samples, period)
    rx = np.fft.ifft(spec)

    level = snr_db if snr_db is not None else cfg.snr_db
    if level is not None and np.isfinite(level):
        rng = np.random.default_rng(np.random.SeedSequence((seed, channel.snapshot_id)))
        mean_power = np.mean(np.abs(rx) ** 2)
        sigma2 = cfg.sps * mean_power / (10.0 ** (level / 10.0))
        scale = np.sqrt(sigma2 / 2.0 / cfg.n_periods)
        rx = rx + scale * (rng.standard_normal(period) + 1j * rng.standard_normal(period))

    est = np.fft.ifft(np.fft.fft(rx) * np.conj(np.fft.fft(ref.samples))) / ref.energy
    return Cir(taps=ComplexSignal(est, cfg.sample_rate), snapshot_id=channel.snapshot_id)


def calibrate(cfg: SounderConfig, sys: SystemResponse, seed: int = 0,
              snr_db: float = 50.0) -> SystemResponse:
    """Back-to-back (cable) calibration of the Tx+Rx chain.

    Sounds the system response through an identity channel at high SNR
    and keeps the chip-spaced estimate. On the chip grid the correlation
    pulse is Nyquist, so a chain response living on that grid is
    recovered exactly (an identity chain calibrates to a clean unit
    impulse). Fails if nothing usable rises above the noise floor.
    """
    delta = Cir(ComplexSignal(np.r_[1.0 + 0j, np.zeros(9)], cfg.sample_rate))
    raw = sound_channel(cfg, delta, sys=sys, seed=seed, snr_db=snr_db)
    chips = raw.taps.samples[:: cfg.sps]
    power = np.abs(chips) ** 2
    floor = np.median(power[-len(power) // 4:])
    if power.max() < 100.0 * floor:
        raise NumericalError("calibration response not above the noise floor")
    return SystemResponse(taps=ComplexSignal(chips, cfg.symbol_rate))


def compensate_system(est: Cir, sys: SystemResponse,
                      epsilon_rel: float = 1e-6) -> Cir:
    """Divide an estimate by a calibrated system response.

    The division happens on the calibration's (chip-spaced) grid with the
    same regularized inversion the equalizer derivation uses; an
    oversampled estimate is decimated onto that grid first. Returns the
    compensated chip-spaced estimate.
    """
    ratio = est.sample_rate / sys.taps.sample_rate
    if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
        raise ConfigError("estimate rate must be an integer multiple of the "
                          "calibration rate")
    samples = est.taps.samples[:: int(round(ratio))]
    n = len(samples)
    S = np.fft.fft(sys.taps.samples, n) if len(sys.taps) != n \
        else np.fft.fft(sys.taps.samples)
    out = np.fft.ifft(np.fft.fft(samples) * regularized_inverse_spectrum(S, epsilon_rel))
    return Cir(taps=ComplexSignal(out, sys.taps.sample_rate),
               snapshot_id=est.snapshot_id)


def apply_window(cir: Cir, w: WindowSpec) -> Cir:
    """Zero everything outside the window; samples inside are untouched.

    Auto mode estimates the noise floor from the trailing quarter of the
    (smoothed) power profile and keeps the first through last bin
    exceeding floor + margin. Raises if nothing exceeds the threshold.
    """
    n = len(cir)
    rate = cir.sample_rate
    if w.mode == "fixed":
        start = int(round(w.start_delay * rate))
        stop = start + int(round(w.length * rate))
        if start >= n:
            raise ConfigError("window start beyond the CIR support")
        stop = min(stop, n)
    else:
        p = np.abs(cir.taps.samples) ** 2
        fine = np.convolve(p, np.ones(AUTO_WINDOW_SMOOTH) / AUTO_WINDOW_SMOOTH,
                           mode="same")
        floor = np.median(fine[-max(n // 4, 1):])
        thr = floor * 10.0 ** (w.noise_margin_db / 10.0)
        coarse = np.convolve(p, np.ones(AUTO_WINDOW_COARSE) / AUTO_WINDOW_COARSE,
                             mode="same")
        cthr = thr * 10.0 ** (AUTO_WINDOW_COARSE_EXTRA_DB / 10.0)
        region = np.nonzero(coarse > cthr)[0]
        cand = np.nonzero(fine > thr)[0]
        if len(cand) == 0:
            raise NumericalError("auto window found no bins above the noise threshold")
        if len(region) == 0:
            region = cand
        pad = AUTO_WINDOW_COARSE // 2 + 1
        lo, hi = region.min() - pad, region.max() + pad
        cand = cand[(cand >= lo) & (cand <= hi)]
        if len(cand) == 0:
            cand = region
        start, stop = int(cand.min()), int(cand.max()) + 1
    out = np.zeros(n, dtype=complex)
    out[start:stop] = cir.taps.samples[start:stop]
    return Cir(taps=ComplexSignal(out, rate), snapshot_id=cir.snapshot_id)


def chip_spaced(cir: Cir, sps: int) -> Cir:
    """Decimate an oversampled estimate to the chip-spaced grid (phase 0).

    The raised-cosine correlation pulse is Nyquist for the chip rate, so
    chip-spaced samples of the estimate see a flat effective sounding
    spectrum; this is the domain the equalizer and the channel emulator
    share (10 ns for the default configuration).
    """
    if sps < 1:
        raise ConfigError("sps must be >= 1")
    return Cir(taps=ComplexSignal(cir.taps.samples[::sps], cir.sample_rate / sps),
               snapshot_id=cir.snapshot_id)
