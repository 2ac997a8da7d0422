"""Tapped-delay-line channel emulator.

Realizes a standard multipath model (Pedestrian-B, TDL-B, or a custom
profile) as a delay line with per-tap Rayleigh fading shaped by a Jakes
Doppler spectrum. Mirrors the constraints of a sampled-hardware emulator:
tap delays are coerced to the channel sampling grid (10 ns at 100 MHz),
indistinguishable taps merge by linear power addition, and taps beyond a
configurable realizable delay are dropped (and reported).

Model files are plain text: a ``name`` line, a ``delays`` line declaring
``absolute_ns`` or ``normalized`` delay units, then one ``delay power_db
fading`` row per tap. Normalized models store the dimensionless standard
delays and are turned absolute by :func:`scale_delay_spread`.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .chamber import Cir
from .dsp import ComplexSignal
from .errors import ConfigError

__all__ = [
    "TapEntry",
    "TapModel",
    "DopplerConfig",
    "FadingProcess",
    "load_model",
    "save_model",
    "scale_delay_spread",
    "coerce_to_grid",
    "generate_fading",
    "emulate",
    "model_to_cir",
    "BUILTIN_MODELS",
]

BUILTIN_MODELS = ("pedestrian_b", "tdl_b")


@dataclass(frozen=True)
class TapEntry:
    delay: float            # seconds, or dimensionless when normalized
    power_db: float         # relative to the strongest tap
    fading: str = "rayleigh"


@dataclass
class TapModel:
    """A standard channel model as a list of (delay, power, fading) taps."""

    name: str
    taps: list[TapEntry]
    normalized: bool = False
    grid: float | None = None                      # set once coerced [s]
    dropped: list[TapEntry] = field(default_factory=list)

    def __post_init__(self):
        if not self.taps:
            raise ConfigError("model must contain at least one tap")
        delays = [t.delay for t in self.taps]
        if any(d < 0 for d in delays):
            raise ConfigError("tap delays must be non-negative")
        if sorted(delays) != delays:
            self.taps = sorted(self.taps, key=lambda t: t.delay)
        for t in self.taps:
            if t.fading not in ("rayleigh", "static"):
                raise ConfigError(f"unknown fading type {t.fading!r}")
        peak = max(t.power_db for t in self.taps)
        if sum(1 for t in self.taps if t.power_db == peak) != 1:
            raise ConfigError("model must have exactly one strongest tap")

    @property
    def powers_linear(self) -> np.ndarray:
        return np.array([10.0 ** (t.power_db / 10.0) for t in self.taps])

    @property
    def delays(self) -> np.ndarray:
        return np.array([t.delay for t in self.taps])


@dataclass
class DopplerConfig:
    """Fading dynamics: maximum Doppler shift and spectrum shape.

    ``block_len`` is the number of signal samples one fading sample spans
    when the process drives :func:`emulate` (block fading); 1 means a
    fresh gain every signal sample.
    """

    max_doppler_hz: float = 50.0
    spectrum: str = "jakes"
    block_len: int = 1

    def __post_init__(self):
        if self.max_doppler_hz < 0:
            raise ConfigError("max_doppler_hz must be >= 0")
        if self.spectrum not in ("jakes", "none"):
            raise ConfigError("spectrum must be 'jakes' or 'none'")
        if self.block_len < 1:
            raise ConfigError("block_len must be >= 1")


@dataclass
class FadingProcess:
    """Per-tap complex gain series, one row per model tap."""

    gains: np.ndarray          # shape (n_taps, n_samples)
    sample_rate: float

    def __post_init__(self):
        self.gains = np.atleast_2d(np.asarray(self.gains, dtype=complex))


def _parse_model_text(text: str, fallback_name: str) -> TapModel:
    name = fallback_name
    normalized = False
    taps: list[TapEntry] = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if fields[0] == "name":
            name = fields[1]
        elif fields[0] == "delays":
            if fields[1] not in ("absolute_ns", "normalized"):
                raise ConfigError("delays must be 'absolute_ns' or 'normalized'")
            normalized = fields[1] == "normalized"
        else:
            if len(fields) < 2:
                raise ConfigError(f"bad model row: {raw!r}")
            delay = float(fields[0]) * (1.0 if normalized else 1e-9)
            power = float(fields[1])
            fading = fields[2] if len(fields) > 2 else "rayleigh"
            taps.append(TapEntry(delay=delay, power_db=power, fading=fading))
    return TapModel(name=name, taps=taps, normalized=normalized)


def load_model(source: str) -> TapModel:
    """Load a tap model by built-in name ('pedestrian_b', 'tdl_b') or path."""
    if source in BUILTIN_MODELS:
        text = resources.files("rcemu.models").joinpath(f"{source}.txt").read_text()
        return _parse_model_text(text, source)
    if not os.path.exists(source):
        raise ConfigError(f"unknown model {source!r} (not a built-in, not a file)")
    with open(source) as f:
        return _parse_model_text(f.read(), os.path.splitext(os.path.basename(source))[0])


def save_model(model: TapModel, path: str) -> None:
    with open(path, "w") as f:
        f.write(f"name {model.name}\n")
        f.write(f"delays {'normalized' if model.normalized else 'absolute_ns'}\n")
        for t in model.taps:
            d = t.delay if model.normalized else t.delay * 1e9
            f.write(f"{d:.17g} {t.power_db:.17g} {t.fading}\n")


def scale_delay_spread(model: TapModel, ds_target: float) -> TapModel:
    """Scale a normalized model's delays by the target RMS delay spread."""
    if not model.normalized:
        raise ConfigError(f"model {model.name!r} does not store normalized delays")
    if ds_target < 0:
        raise ConfigError("ds_target must be >= 0")
    taps = [replace(t, delay=t.delay * ds_target) for t in model.taps]
    return TapModel(name=model.name, taps=taps, normalized=False)


def coerce_to_grid(model: TapModel, grid: float,
                   max_realizable_delay: float | None = None) -> TapModel:
    """Snap delays to the emulator grid, merging and truncating as hardware would.

    Each delay is rounded to the nearest grid multiple (half away from
    zero). Taps landing on the same bin merge into one tap whose power is
    the linear sum; a merge is Rayleigh if any constituent is. Taps whose
    coerced delay exceeds ``max_realizable_delay`` are dropped and listed
    in the result's ``dropped`` field.
    """
    if model.normalized:
        raise ConfigError("scale the model to absolute delays before coercing")
    if grid <= 0:
        raise ConfigError("grid must be > 0")
    merged: dict[int, list[TapEntry]] = {}
    dropped: list[TapEntry] = []
    for t in model.taps:
        b = math.floor(t.delay / grid + 0.5)
        if max_realizable_delay is not None and b * grid > max_realizable_delay + grid * 1e-9:
            dropped.append(t)
            continue
        merged.setdefault(b, []).append(t)
    if not merged:
        raise ConfigError("no realizable taps remain after coercion")
    taps = []
    for b in sorted(merged):
        group = merged[b]
        if len(group) == 1:
            power = group[0].power_db  # untouched unless a merge happens
        else:
            power = 10.0 * math.log10(sum(10.0 ** (t.power_db / 10.0) for t in group))
        fading = "rayleigh" if any(t.fading == "rayleigh" for t in group) else "static"
        taps.append(TapEntry(delay=b * grid, power_db=power, fading=fading))
    return TapModel(name=model.name, taps=taps, normalized=False,
                    grid=grid, dropped=dropped)


def _jakes_gain_series(n: int, fs: float, fd: float,
                       rng: np.random.Generator) -> np.ndarray:
    f = np.fft.fftfreq(n, d=1.0 / fs)
    inside = np.abs(f) < fd
    n_inside = int(np.count_nonzero(inside))
    if n_inside < 8:
        raise ConfigError(
            f"Doppler bandwidth too narrow: only {n_inside} spectral bins inside "
            f"+-{fd} Hz at resolution {fs / n:.3g} Hz; need >= 8"
        )
    S = np.zeros(n)
    S[inside] = 1.0 / np.sqrt(1.0 - (f[inside] / fd) ** 2)
    # clip the edge bins (nearest the +-fd singularity) to their inward
    # neighbour so bin-center evaluation cannot blow up
    pos = np.nonzero(inside & (f >= 0))[0]
    neg = np.nonzero(inside & (f < 0))[0]
    for side in (pos[np.argsort(f[pos])], neg[np.argsort(-f[neg])]):
        if len(side) >= 2:
            S[side[-1]] = min(S[side[-1]], S[side[-2]])
    noise = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return np.fft.ifft(noise * np.sqrt(S))


def generate_fading(model: TapModel, dop: DopplerConfig, n_samples: int,
                    sample_rate: float, seed: int = 0) -> FadingProcess:
    """Draw per-tap fading gain series.

    Rayleigh taps under a Jakes spectrum get independent complex Gaussian
    processes with the classic band-limited U-shaped PSD, hard-normalized
    so each tap's mean-square gain equals its model power exactly.
    Static taps (or ``spectrum='none'``) get a constant random-phase gain
    at the tap amplitude. Deterministic given (model, dop, seed).
    """
    if model.grid is None:
        raise ConfigError("coerce the model to a grid before generating fading")
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    if sample_rate <= 0:
        raise ConfigError("sample_rate must be > 0")
    if dop.spectrum == "jakes" and not (dop.max_doppler_hz < sample_rate / 2):
        raise ConfigError("max_doppler_hz must be below the fading Nyquist rate")

    gains = np.empty((len(model.taps), n_samples), dtype=complex)
    for k, tap in enumerate(model.taps):
        rng = np.random.default_rng(np.random.SeedSequence((seed, k)))
        p_lin = 10.0 ** (tap.power_db / 10.0)
        if dop.spectrum == "none" or tap.fading == "static" or dop.max_doppler_hz == 0:
            phase = np.exp(2j * np.pi * rng.random())
            gains[k, :] = np.sqrt(p_lin) * phase
        else:
            g = _jakes_gain_series(n_samples, sample_rate, dop.max_doppler_hz, rng)
            g *= np.sqrt(p_lin / np.mean(np.abs(g) ** 2))
            gains[k, :] = g
    return FadingProcess(gains=gains, sample_rate=sample_rate)


def emulate(model: TapModel, fading: FadingProcess,
            signal: ComplexSignal) -> ComplexSignal:
    """Run a signal through the time-varying tapped delay line.

    ``y[n] = sum_k g_k[n] * x[n - d_k/grid]``. The fading may run at the
    signal rate or slower by an integer block factor, in which case each
    gain holds for a block of samples.
    """
    if model.grid is None:
        raise ConfigError("coerce the model to a grid before emulating")
    if abs(signal.sample_rate * model.grid - 1.0) > 1e-9:
        raise ConfigError(
            f"signal rate {signal.sample_rate} does not match the model grid "
            f"{model.grid} (need rate == 1/grid)"
        )
    if fading.gains.shape[0] != len(model.taps):
        raise ConfigError("fading process does not cover every model tap")

    block = signal.sample_rate / fading.sample_rate
    if abs(block - round(block)) > 1e-9 or block < 1:
        raise ConfigError("signal rate must be an integer multiple of the fading rate")
    block = int(round(block))
    n = len(signal)
    needed = -(-n // block)
    if fading.gains.shape[1] < needed:
        raise ConfigError(
            f"fading too short: {fading.gains.shape[1]} samples < {needed} blocks needed"
        )

    x = signal.samples
    y = np.zeros(n, dtype=complex)
    for k, tap in enumerate(model.taps):
        d = int(round(tap.delay * signal.sample_rate))
        g = np.repeat(fading.gains[k, :needed], block)[:n]
        if d == 0:
            y += g * x
        elif d < n:
            y[d:] += g[d:] * x[:-d]
    return ComplexSignal(y, signal.sample_rate)


def model_to_cir(model: TapModel, gains: np.ndarray,
                 sample_rate: float | None = None) -> Cir:
    """Freeze the delay line into a sparse impulse response.

    ``gains`` holds one complex gain per tap. The response is laid out on
    ``sample_rate`` (default: the model grid rate); every coerced delay
    must land on that grid exactly.
    """
    if model.grid is None:
        raise ConfigError("coerce the model to a grid first")
    gains = np.asarray(gains, dtype=complex)
    if gains.shape != (len(model.taps),):
        raise ConfigError("need exactly one complex gain per tap")
    rate = sample_rate if sample_rate is not None else 1.0 / model.grid
    bins = []
    for t in model.taps:
        b = t.delay * rate
        if abs(b - round(b)) > 1e-6:
            raise ConfigError(f"tap delay {t.delay} not on the {1 / rate} grid")
        bins.append(int(round(b)))
    h = np.zeros(max(bins) + 1, dtype=complex)
    for b, g in zip(bins, gains):
        h[b] += g
    return Cir(taps=ComplexSignal(h, rate))
