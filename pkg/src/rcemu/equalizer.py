"""Deconvolution equalizer derivation and cancellation bookkeeping.

The equalizer is the regularized spectral inverse of a (windowed) channel
impulse response estimate: with H(f) the zero-padded FFT of the estimate,

    EQ(f) = conj(H(f)) / (|H(f)|^2 + eps),   eps = epsilon_rel * max|H|^2.

For eps = 0 this is the exact inverse 1/H(f) and the cascade EQ*H equals
one at every bin; the Tikhonov term keeps the deep spectral fades of a
Rayleigh channel from exploding measurement noise. Cascading the derived
filter with the response it was derived from concentrates the energy at
delay zero; everything left over is the cancellation residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chamber import Cir
from .dsp import ComplexSignal
from .errors import ConfigError, NumericalError
from . import metrics as _metrics

__all__ = [
    "EqualizerFilter",
    "derive_equalizer",
    "cancellation_report",
    "epsilon_sweep",
    "regularized_inverse_spectrum",
    "export_equalizer_csv",
    "import_equalizer_csv",
]

# refuse a bare inversion when the spectrum dips this far below its peak
ILL_CONDITIONED_REL = 1e-12


@dataclass
class EqualizerFilter:
    """Time-domain equalizer taps plus the derivation bookkeeping."""

    taps: ComplexSignal
    epsilon_rel: float
    fft_len: int
    source_snapshot: int = -1

    def __len__(self) -> int:
        return len(self.taps)


def regularized_inverse_spectrum(H: np.ndarray, epsilon_rel: float) -> np.ndarray:
    """conj(H) / (|H|^2 + epsilon_rel * max|H|^2), the shared inversion path.

    With ``epsilon_rel == 0`` the division is exact and refused when any
    bin lies more than 120 dB below the spectral peak.
    """
    if epsilon_rel < 0:
        raise ConfigError("epsilon_rel must be >= 0")
    p2 = np.abs(H) ** 2
    peak = p2.max()
    if peak == 0:
        raise NumericalError("cannot invert an all-zero spectrum")
    if epsilon_rel == 0:
        if p2.min() < ILL_CONDITIONED_REL * peak:
            raise NumericalError(
                "ill-conditioned inversion refused: spectrum has bins more than "
                "120 dB below its peak and epsilon_rel is 0"
            )
        return np.conj(H) / p2
    return np.conj(H) / (p2 + epsilon_rel * peak)


def derive_equalizer(h: Cir, epsilon_rel: float, fft_len: int | None = None) -> EqualizerFilter:
    """Derive the equalizer filter from a (windowed) impulse response.

    Parameters:
        h: the response to invert; window it first so the inversion does
            not chase noise.
        epsilon_rel: Tikhonov regularization relative to the spectral
            peak power (0 requests the bare inverse).
        fft_len: transform length, at least twice len(h) so the circular
            cascade approximates linear convolution. Defaults to the next
            power of two >= 2*len(h).

    Returns:
        EqualizerFilter whose taps are fft_len long at h's sample rate.
    """
    n = len(h)
    if fft_len is None:
        fft_len = 1 << int(np.ceil(np.log2(2 * n)))
    if fft_len < 2 * n:
        raise ConfigError(f"fft_len must be >= 2*len(h) = {2 * n}")
    H = np.fft.fft(h.taps.samples, fft_len)
    eq = np.fft.ifft(regularized_inverse_spectrum(H, epsilon_rel))
    return EqualizerFilter(
        taps=ComplexSignal(eq, h.sample_rate),
        epsilon_rel=epsilon_rel,
        fft_len=fft_len,
        source_snapshot=h.snapshot_id,
    )


def cancellation_report(h_rc: Cir, eq: EqualizerFilter,
                        guard_bins: int = 0) -> "_metrics.ResidualMetrics":
    """Quantify how well ``eq`` cancels ``h_rc``.

    The cascade is evaluated circularly over the equalizer's FFT length
    (the domain the filter was derived in). The peak-to-residual ratio
    compares the strongest cascade bin against the total energy of all
    bins further than ``guard_bins`` from it (circular distance); a pure
    single-bin cascade reports infinity.
    """
    if h_rc.sample_rate != eq.taps.sample_rate:
        raise ConfigError("h_rc and equalizer sample rates differ")
    n = eq.fft_len
    if len(h_rc) > n:
        raise ConfigError("h_rc longer than the equalizer FFT length")
    cascade = np.fft.ifft(np.fft.fft(eq.taps.samples, n) * np.fft.fft(h_rc.taps.samples, n))
    return _metrics.residual_metrics_from_cascade(
        ComplexSignal(cascade, h_rc.sample_rate), guard_bins=guard_bins
    )


def epsilon_sweep(h: Cir, epsilons: list[float], guard_bins: int = 0,
                  evaluate_against: Cir | None = None) -> dict:
    """Derive and score the equalizer over a regularization sweep.

    Each equalizer is derived from ``h`` and cascaded with
    ``evaluate_against`` (default: ``h`` itself). Returns a dict with the
    sweep values, the peak-to-residual ratio for each, and the epsilon
    achieving the best (largest) ratio. Scored against a noise-free
    response the ratio of a noisy derivation shows an interior optimum;
    scored against itself it is non-increasing in epsilon.
    """
    target = evaluate_against if evaluate_against is not None else h
    ratios = []
    for e in epsilons:
        eq = derive_equalizer(h, e)
        ratios.append(cancellation_report(target, eq, guard_bins=guard_bins).peak_to_residual_db)
    best = int(np.argmax(ratios))
    return {
        "epsilons": list(epsilons),
        "peak_to_residual_db": ratios,
        "best_epsilon": epsilons[best],
        "best_ratio_db": ratios[best],
    }


def export_equalizer_csv(eq: EqualizerFilter, path: str) -> None:
    """Write equalizer taps as CSV with a sidecar header carrying the
    derivation parameters, enough to reload and cascade bit-exactly."""
    with open(path, "w") as f:
        f.write(
            f"# fft_len={eq.fft_len} epsilon_rel={eq.epsilon_rel:.17g} "
            f"source_snapshot={eq.source_snapshot} sample_rate={eq.taps.sample_rate:.17g}\n"
        )
        f.write("tap_index,re,im\n")
        for k, v in enumerate(eq.taps.samples):
            f.write(f"{k},{v.real:.17g},{v.imag:.17g}\n")


def import_equalizer_csv(path: str) -> EqualizerFilter:
    """Reload an equalizer written by :func:`export_equalizer_csv`."""
    with open(path) as f:
        header = f.readline()
    if not header.startswith("#"):
        raise ConfigError("equalizer CSV missing its sidecar header")
    meta = dict(kv.split("=") for kv in header[1:].split())
    data = np.genfromtxt(path, delimiter=",", skip_header=2)
    data = np.atleast_2d(data)
    taps = data[:, 1] + 1j * data[:, 2]
    return EqualizerFilter(
        taps=ComplexSignal(taps, float(meta["sample_rate"])),
        epsilon_rel=float(meta["epsilon_rel"]),
        fft_len=int(meta["fft_len"]),
        source_snapshot=int(meta["source_snapshot"]),
    )
