"""Artificial-path cancellation baseline.

The open-loop alternative to the equalizer: every model tap gets an
inverted companion tap at a small delay offset dt with amplitude
``exp(-dt/tau_rms)``, i.e. the sparse tap vector is convolved with the
two-element kernel ``delta(t) - exp(-dt/tau_rms) * delta(t - dt)``. How
well that cancels the chamber's exponential tail depends on how strongly
the chamber response self-correlates across dt, which is what the
self-correlation analysis here quantifies. Hardware channel emulators
bound dt from below by their sampling grid (10 ns at 100 MHz), which is
precisely where the method degrades.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chamber import Cir
from .dsp import ComplexSignal
from .emulator import TapModel
from .errors import ConfigError, NumericalError
from .metrics import PDP_FLOOR_DB, PdpEstimate, ResidualMetrics, rms_delay_spread

__all__ = [
    "ArtificialPathKernel",
    "CompanionTapSet",
    "apply_artificial_paths",
    "self_correlation",
    "baseline_residual",
]


@dataclass
class ArtificialPathKernel:
    """delta(t) - coefficient * delta(t - dt), coefficient = exp(-dt/tau_rms)."""

    dt: float
    tau_rms: float

    def __post_init__(self):
        if self.dt < 0:
            raise ConfigError("dt must be >= 0")
        if self.tau_rms <= 0:
            raise ConfigError("tau_rms must be > 0")

    @property
    def coefficient(self) -> float:
        return math.exp(-self.dt / self.tau_rms)


@dataclass
class CompanionTapSet:
    """Sparse signed-amplitude taps: the model plus its inverted companions.

    A plain (delay, power, fading) tap list cannot carry the companions'
    negative amplitudes, so this is the baseline's working representation.
    Entries whose amplitudes cancel exactly are kept at amplitude zero.
    """

    delays: np.ndarray          # seconds, sorted
    amplitudes: np.ndarray      # complex
    grid: float

    def to_cir(self, sample_rate: float | None = None) -> Cir:
        """Lay the taps out on a uniform grid as an impulse response."""
        rate = sample_rate if sample_rate is not None else 1.0 / self.grid
        bins = []
        for d in self.delays:
            b = d * rate
            if abs(b - round(b)) > 1e-6:
                raise ConfigError(f"delay {d} not on the 1/{rate} grid")
            bins.append(int(round(b)))
        h = np.zeros(max(bins) + 1 if bins else 1, dtype=complex)
        for b, a in zip(bins, self.amplitudes):
            h[b] += a
        return Cir(taps=ComplexSignal(h, rate))


def apply_artificial_paths(model: TapModel, kernel: ArtificialPathKernel,
                           grid: float) -> CompanionTapSet:
    """Add the inverted companion tap for every model tap.

    Each tap (tau, a) yields (tau, a) and (tau + dt, -a * exp(-dt/tau_rms)),
    with amplitudes a = 10^(power_db/20). Companions landing on existing
    taps combine by complex addition. dt must sit on the emulator grid.
    """
    if grid <= 0:
        raise ConfigError("grid must be > 0")
    steps = kernel.dt / grid
    if abs(steps - round(steps)) > 1e-9:
        raise ConfigError(f"dt {kernel.dt} is not a multiple of the grid {grid}")
    acc: dict[int, complex] = {}
    c = kernel.coefficient
    for t in model.taps:
        b = t.delay / grid
        if abs(b - round(b)) > 1e-6:
            raise ConfigError(f"model tap at {t.delay} is not on the grid {grid}")
        b = int(round(b))
        a = 10.0 ** (t.power_db / 20.0)
        acc[b] = acc.get(b, 0.0) + a
        bc = b + int(round(steps))
        acc[bc] = acc.get(bc, 0.0) - a * c
    bins = sorted(acc)
    return CompanionTapSet(
        delays=np.array([b * grid for b in bins]),
        amplitudes=np.array([acc[b] for b in bins], dtype=complex),
        grid=grid,
    )


def self_correlation(cir: Cir, dt: float) -> tuple[float, complex]:
    """Normalized correlation between a response and its delayed self.

    The shifted copy is delayed by dt (zero-filled at the front,
    truncated to the original length); the value is
    ``<h, h_shifted> / (||h|| * ||h_shifted||)``. Returns the real part
    and the full complex value. dt = 0 gives exactly 1.0.
    """
    energy = cir.taps.energy
    if energy == 0:
        raise NumericalError("zero-energy response")
    steps = dt * cir.sample_rate
    if abs(steps - round(steps)) > 1e-9:
        raise ConfigError(f"dt {dt} is not a multiple of the delay grid")
    d = int(round(steps))
    h = cir.taps.samples
    if d == 0:
        return 1.0, 1.0 + 0.0j
    if d >= len(h):
        raise ConfigError("shifted overlap is empty")
    hs = np.concatenate([np.zeros(d, dtype=complex), h[:-d]])
    num = np.sum(h * np.conj(hs))
    denom = np.linalg.norm(h) * np.linalg.norm(hs)
    if denom == 0:
        raise NumericalError("shifted copy has zero energy")
    rho = num / denom
    return float(rho.real), complex(rho)


def baseline_residual(rc: Cir, model: TapModel, kernel: ArtificialPathKernel,
                      guard: float | None = None) -> ResidualMetrics:
    """Residual profile after the artificial-path cancellation.

    Convolves the companion tap set with the chamber response and
    measures how much energy survives outside the intended tap positions.
    Each intended tap excludes ``[delay - guard, delay + dt + guard]``
    from the residual (default guard: two grid steps), so the companions
    themselves do not count as residual; everything else, i.e. the
    surviving decay tail, does.
    """
    tapset = apply_artificial_paths(model, kernel, 1.0 / rc.sample_rate)
    if not np.any(np.abs(tapset.amplitudes) > 0):
        # dt = 0 cancels every tap exactly: nothing is transmitted
        return ResidualMetrics(peak_to_residual_db=float("inf"),
                               residual_rms_delay_spread=0.0, residual_pdp=None)
    cir = tapset.to_cir(rc.sample_rate)
    cascade = np.convolve(cir.taps.samples, rc.taps.samples)
    p = np.abs(cascade) ** 2
    n = len(p)
    rate = rc.sample_rate
    if guard is None:
        guard = 2.0 / rate
    resid_mask = np.ones(n, dtype=bool)
    tau = np.arange(n) / rate
    for t in model.taps:
        resid_mask &= ~((tau >= t.delay - guard) & (tau <= t.delay + kernel.dt + guard))
    peak = p[~resid_mask].max() if np.any(~resid_mask) else p.max()
    resid_energy = float(p[resid_mask].sum())
    if resid_energy == 0.0:
        return ResidualMetrics(peak_to_residual_db=float("inf"),
                               residual_rms_delay_spread=0.0, residual_pdp=None)
    ratio = 10.0 * np.log10(peak / resid_energy)
    resid = np.where(resid_mask, p, 0.0)
    with np.errstate(divide="ignore"):
        rdb = np.maximum(10.0 * np.log10(resid / resid.max()), PDP_FLOOR_DB)
    rpdp = PdpEstimate(delays=tau, power_db=rdb, n_realizations=1)
    try:
        spread = rms_delay_spread(rpdp)
    except NumericalError:
        spread = 0.0
    return ResidualMetrics(peak_to_residual_db=float(ratio),
                           residual_rms_delay_spread=spread, residual_pdp=rpdp)
