"""Synthetic reverberation-chamber channel model.

Each stirrer position ("snapshot") is one independent realization of a
dense Rayleigh channel whose power delay profile decays exponentially
with the configured RMS delay spread. Every delay bin carries an
independent zero-mean circular complex Gaussian tap, which is the
standard overmoded-cavity model and produces the long decay tail the
equalization loop has to cancel.

Two optional knobs extend the basic model:

* ``bulk_delay``: shifts the whole response by a propagation delay, as a
  real chamber (antenna separation plus front-end latency) would. The
  default of zero keeps the textbook profile starting at delay zero.
* ``delay_coherence``: when nonzero, the taps are correlated across
  neighbouring delay bins with a Lorentzian correlation function
  ``1 / (1 + (dt/delay_coherence)^2)``, modelling a chamber whose
  frequency response is not flat across the sounding band. With the
  default of zero the bins are white.

Snapshots are exportable/importable as CSV (``delay_ns, re, im``) so
measured chamber data can replace the synthetic model.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .dsp import ComplexSignal
from .errors import ConfigError

__all__ = ["RcConfig", "Cir", "synthesize_rc_cir", "rc_ensemble",
           "export_cir_csv", "import_cir_csv"]


@dataclass
class RcConfig:
    """Parameters of the synthetic chamber.

    Attributes:
        tau_rms: target RMS delay spread of the exponential profile [s].
        max_delay: truncation point of the profile [s].
        sample_rate: delay-grid sample rate [Hz].
        los_power_linear: direct-path power (0 for pure NLoS, the default).
        master_seed: seed of the per-snapshot random streams.
        bulk_delay: propagation delay prepended to the response [s].
        delay_coherence: Lorentzian tap-correlation scale [s], 0 = white.
    """

    tau_rms: float
    max_delay: float
    sample_rate: float
    los_power_linear: float = 0.0
    master_seed: int = 0
    bulk_delay: float = 0.0
    delay_coherence: float = 0.0

    def __post_init__(self):
        if not (0 < self.tau_rms < self.max_delay):
            raise ConfigError("need 0 < tau_rms < max_delay")
        if self.sample_rate * self.max_delay < 10:
            raise ConfigError("sample_rate * max_delay must be >= 10 bins")
        if self.los_power_linear < 0:
            raise ConfigError("los_power_linear must be >= 0")
        if self.bulk_delay < 0 or self.delay_coherence < 0:
            raise ConfigError("bulk_delay and delay_coherence must be >= 0")

    @property
    def n_bins(self) -> int:
        return int(round(self.max_delay * self.sample_rate))


@dataclass
class Cir:
    """A channel impulse response on a uniform delay grid starting at 0."""

    taps: ComplexSignal
    snapshot_id: int = 0

    def __len__(self) -> int:
        return len(self.taps)

    @property
    def sample_rate(self) -> float:
        return self.taps.sample_rate


def _snapshot_rng(master_seed: int, snapshot: int) -> np.random.Generator:
    # independent per-snapshot stream; identical whether generated alone
    # or as part of a batch
    return np.random.default_rng(np.random.SeedSequence((master_seed, snapshot)))


def synthesize_rc_cir(cfg: RcConfig, snapshot: int = 0) -> Cir:
    """Draw one stirrer snapshot of the chamber response.

    Tap k is zero-mean circular complex Gaussian with variance
    proportional to exp(-tau_k / tau_rms), truncated at ``max_delay`` and
    normalized to unit total expected energy. Deterministic given
    (master_seed, snapshot).
    """
    if snapshot < 0:
        raise ConfigError("snapshot must be >= 0")
    rng = _snapshot_rng(cfg.master_seed, snapshot)
    n = cfg.n_bins
    tau = np.arange(n) / cfg.sample_rate
    profile = np.exp(-tau / cfg.tau_rms)
    profile /= profile.sum()

    h = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(profile / 2.0)

    if cfg.delay_coherence > 0:
        # shape the spectrum so neighbouring bins correlate with the
        # Lorentzian 1 / (1 + (dt/coherence)^2)
        f = np.fft.fftfreq(n, d=1.0 / cfg.sample_rate)
        f_c = 1.0 / (2.0 * np.pi * cfg.delay_coherence)
        envelope = np.exp(-np.abs(f) / f_c)
        h = np.fft.ifft(np.fft.fft(h) * np.sqrt(envelope))
        h /= np.sqrt(np.mean(envelope))

    if cfg.los_power_linear > 0:
        h[0] += np.sqrt(cfg.los_power_linear) * np.exp(2j * np.pi * rng.random())

    if cfg.bulk_delay > 0:
        shift = int(round(cfg.bulk_delay * cfg.sample_rate))
        h = np.concatenate([np.zeros(shift, dtype=complex), h])

    return Cir(taps=ComplexSignal(h, cfg.sample_rate), snapshot_id=snapshot)


def rc_ensemble(cfg: RcConfig, n_snapshots: int) -> list[Cir]:
    """Generate ``n_snapshots`` independent snapshots.

    Snapshot i is bit-identical whether generated alone or in a batch.
    """
    if n_snapshots < 1:
        raise ConfigError("n_snapshots must be >= 1")
    return [synthesize_rc_cir(cfg, s) for s in range(n_snapshots)]


def export_cir_csv(cir: Cir, path: str) -> None:
    """Write a CIR as ``delay_ns, re, im`` rows (full float precision)."""
    rate = cir.sample_rate
    with open(path, "w") as f:
        f.write("delay_ns,re,im\n")
        for k, v in enumerate(cir.taps.samples):
            f.write(f"{k / rate * 1e9:.17g},{v.real:.17g},{v.imag:.17g}\n")


def import_cir_csv(path: str, snapshot_id: int = 0) -> Cir:
    """Read a CIR written by :func:`export_cir_csv`.

    The sample rate is inferred from the delay column spacing; delays
    must form a uniform grid starting at 0.
    """
    if not os.path.exists(path):
        raise ConfigError(f"no such CIR file: {path}")
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    delays_ns, re, im = data[:, 0], data[:, 1], data[:, 2]
    if len(delays_ns) < 2:
        raise ConfigError("CIR file must contain at least two samples")
    steps = np.diff(delays_ns)
    if abs(delays_ns[0]) > 1e-9 or np.any(np.abs(steps - steps[0]) > 1e-6 * steps[0]):
        raise ConfigError("CIR delays must form a uniform grid starting at 0")
    rate = 1e9 / steps[0]
    return Cir(taps=ComplexSignal(re + 1j * im, rate), snapshot_id=snapshot_id)
