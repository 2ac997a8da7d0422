"""End-to-end experiment pipelines.

This module wires the pieces into the two-step closed loop:

1. *Channel measuring step*: sound one chamber snapshot, window the
   estimate, decimate it to the emulator's chip-spaced grid and derive
   the equalizer filter there.
2. *Channel model synthesis step*: run the periodic probe through
   equalizer -> tapped delay line -> chamber, re-estimate the end-to-end
   response per fading realization, and score the resulting delay
   profile against the coerced target model.

The chip-spaced grid (10 ns at the default 100 MS/s symbol rate) is the
domain the equalizer shares with the channel emulator: chip-spaced
samples of the correlation estimate see a flat effective sounding
spectrum (the raised-cosine pulse is Nyquist for the chip rate), so the
inversion is well conditioned all the way around the sampling circle.

Everything is deterministic given the run configuration: every random
stream is derived from (master_seed, stage tag, snapshot/realization
index), so results do not depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .baseline import ArtificialPathKernel, apply_artificial_paths, self_correlation
from .chamber import Cir, RcConfig, import_cir_csv, synthesize_rc_cir
from .dsp import ComplexSignal
from .emulator import TapEntry, TapModel, coerce_to_grid, load_model, scale_delay_spread
from .equalizer import EqualizerFilter, derive_equalizer
from .errors import ConfigError
from .metrics import (PdpEstimate, ResidualMetrics, TapMatchReport, detect_taps,
                      match_taps, residual_metrics_from_cascade)
from .sounder import SounderConfig, WindowSpec, apply_window, chip_spaced, \
    reference_waveform, sound_channel

__all__ = [
    "RunConfig",
    "SoundingResult",
    "ClosedLoopResult",
    "CancellationResult",
    "DEFAULT_REALIZABLE_LIMIT_NS",
    "prepare_model",
    "sound_snapshot",
    "closed_loop_run",
    "cancellation_run",
    "baseline_sweep_run",
]

# per-model realizable-delay limits reproducing the reference bench, where
# the Pedestrian-B tap at 3700 ns and the four TDL-B taps beyond 1 us
# could not be set in the emulator
DEFAULT_REALIZABLE_LIMIT_NS = {"pedestrian_b": 2500.0, "tdl_b": 1000.0}

# seed-stream tags
_TAG_SOUND = 1
_TAG_EVAL = 2
_TAG_FADING = 3
_STIR_OFFSET = 100_000


@dataclass
class RunConfig:
    """Flat run configuration with bench-replication defaults."""

    # chamber
    rc_tau_rms_ns: float = 250.0
    rc_max_delay_ns: float = 2500.0
    rc_bulk_delay_ns: float = 150.0
    rc_delay_coherence_ns: float = 0.0
    rc_csv: str | None = None
    # sounder
    pn_order: int = 12
    sps: int = 2
    symbol_rate_hz: float = 100e6
    rrc_rolloff: float = 0.25
    rrc_span_symbols: int = 13
    snr_db: float = 30.0
    n_periods: int = 10
    # window
    window_mode: str = "auto"
    window_start_ns: float = 0.0
    window_length_ns: float = 0.0
    window_margin_db: float = 6.0
    # model / emulator
    model: str = "pedestrian_b"
    ds_target_ns: float | None = None
    max_realizable_delay_ns: float | None = None
    doppler_hz: float = 50.0
    doppler_spectrum: str = "jakes"
    # equalizer / evaluation
    epsilon_rel: float = 1e-4
    n_eval_realizations: int = 200
    n_snapshots: int = 20
    master_seed: int = 12345
    stir_between: bool = False
    bypass_ce: bool = False
    # tap detection
    detect_prominence_db: float = 6.0
    detect_floor_db: float = -30.0
    # baseline sweep
    dt_sweep_ns: tuple = (0.0, 10.0, 20.0, 40.0)
    baseline_coherence_ns: float = 10.0
    fine_sample_rate_hz: float = 10e9
    fine_dts_ns: tuple = (0.1, 10.0)

    def rc_config(self) -> RcConfig:
        return RcConfig(
            tau_rms=self.rc_tau_rms_ns * 1e-9,
            max_delay=self.rc_max_delay_ns * 1e-9,
            sample_rate=self.sps * self.symbol_rate_hz,
            master_seed=self.master_seed,
            bulk_delay=self.rc_bulk_delay_ns * 1e-9,
            delay_coherence=self.rc_delay_coherence_ns * 1e-9,
        )

    def sounder_config(self) -> SounderConfig:
        return SounderConfig(
            pn_order=self.pn_order,
            sps=self.sps,
            symbol_rate=self.symbol_rate_hz,
            rrc_rolloff=self.rrc_rolloff,
            rrc_span_symbols=self.rrc_span_symbols,
            snr_db=self.snr_db,
            n_periods=self.n_periods,
            window=self.window_spec(),
        )

    def window_spec(self) -> WindowSpec:
        return WindowSpec(
            mode=self.window_mode,
            start_delay=self.window_start_ns * 1e-9,
            length=self.window_length_ns * 1e-9,
            noise_margin_db=self.window_margin_db,
        )

    @property
    def chip_grid(self) -> float:
        return 1.0 / self.symbol_rate_hz

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dt_sweep_ns"] = list(self.dt_sweep_ns)
        d["fine_dts_ns"] = list(self.fine_dts_ns)
        return d


@dataclass
class SoundingResult:
    snapshot: int
    channel: Cir
    raw_estimate: Cir
    windowed_estimate: Cir
    chip_estimate: Cir
    equalizer: EqualizerFilter


@dataclass
class ClosedLoopResult:
    model: TapModel
    pdp: PdpEstimate
    detected: list
    report: TapMatchReport
    n_realizations: int


@dataclass
class CancellationResult:
    per_snapshot: list
    mean_peak_to_residual_db: float
    stirred: bool


def prepare_model(cfg: RunConfig) -> TapModel:
    """Load, scale and coerce the configured tap model."""
    model = load_model(cfg.model)
    if model.normalized:
        if cfg.ds_target_ns is None:
            raise ConfigError(
                f"model {model.name!r} stores normalized delays; set ds_target_ns"
            )
        model = scale_delay_spread(model, cfg.ds_target_ns * 1e-9)
    limit_ns = cfg.max_realizable_delay_ns
    if limit_ns is None:
        limit_ns = DEFAULT_REALIZABLE_LIMIT_NS.get(model.name)
    limit = None if limit_ns is None else limit_ns * 1e-9
    return coerce_to_grid(model, cfg.chip_grid, max_realizable_delay=limit)


def _snapshot_channel(cfg: RunConfig, snapshot: int) -> Cir:
    if cfg.rc_csv is not None:
        return import_cir_csv(cfg.rc_csv, snapshot_id=snapshot)
    return synthesize_rc_cir(cfg.rc_config(), snapshot)


def sound_snapshot(cfg: RunConfig, snapshot: int = 0) -> SoundingResult:
    """Run the channel measuring step for one stirrer position.

    The equalizer is derived on the chip-spaced PN-period grid: the
    sounding world is genuinely periodic there, so inverting on that
    exact grid cancels the chain bin for bin. The windowed estimate is
    cropped to its support for the derivation (keeping the FFT length at
    twice the support or more) and the resulting taps are circularly
    advanced by the crop offset, which re-embeds the bulk delay
    compensation; the exported filter is the ready-to-apply periodic
    chip-rate filter.
    """
    scfg = cfg.sounder_config()
    channel = _snapshot_channel(cfg, snapshot)
    raw = sound_channel(scfg, channel, seed=_seed(cfg, _TAG_SOUND, snapshot))
    windowed = apply_window(raw, scfg.window)
    chip = chip_spaced(windowed, scfg.sps)
    n_chips = len(chip)

    support = np.nonzero(np.abs(chip.taps.samples) > 0.0)[0]
    if len(support) == 0:
        raise ConfigError("windowed estimate has no chip-spaced support")
    s0, s1 = int(support.min()), int(support.max())
    if (s1 - s0 + 1) > n_chips // 2:
        raise ConfigError(
            "window spans more than half the PN period; the periodic "
            "equalizer derivation needs a shorter window"
        )
    crop = Cir(taps=ComplexSignal(chip.taps.samples[s0:s1 + 1], chip.sample_rate),
               snapshot_id=snapshot)
    eq = derive_equalizer(crop, cfg.epsilon_rel, fft_len=n_chips)
    aligned = EqualizerFilter(
        taps=ComplexSignal(np.roll(eq.taps.samples, -s0), chip.sample_rate),
        epsilon_rel=eq.epsilon_rel, fft_len=eq.fft_len, source_snapshot=snapshot)
    return SoundingResult(snapshot=snapshot, channel=channel, raw_estimate=raw,
                          windowed_estimate=windowed, chip_estimate=chip,
                          equalizer=aligned)


def _seed(cfg: RunConfig, tag: int, index: int) -> int:
    # distinct deterministic stream per (run, stage, index)
    return int(np.random.SeedSequence((cfg.master_seed, tag, index)).generate_state(1)[0])


def _fold(taps: np.ndarray, period: int) -> np.ndarray:
    out = np.zeros(period, dtype=complex)
    for i in range(0, len(taps), period):
        blk = taps[i:i + period]
        out[: len(blk)] += blk
    return out


def _chain_spectra(cfg: RunConfig, sounding: SoundingResult):
    """Precompute the fixed per-run spectra of the synthesis chain."""
    scfg = cfg.sounder_config()
    ref = reference_waveform(scfg)
    period = len(ref)
    n_chips = period // scfg.sps
    REF = np.fft.fft(ref.samples)
    # equalizer folded to the chip period, replicated across the
    # oversampled band (a chip-spaced filter applied to the chip stream)
    eq_chip = _fold(sounding.equalizer.taps.samples, n_chips)
    EQ = np.tile(np.fft.fft(eq_chip), scfg.sps)[:period]
    if len(sounding.channel.taps.samples) > period:
        raise ConfigError("chamber response longer than one PN period")
    HRC = np.fft.fft(sounding.channel.taps.samples, period)
    return ref, REF, EQ, HRC, n_chips


def _estimate_through_chain(cfg, scfg, ref, spec, rng) -> np.ndarray:
    """Receive one capture of the periodic probe through `spec` and
    slide-correlate; returns the chip-spaced estimate."""
    period = len(ref)
    rx = np.fft.ifft(spec)
    if np.isfinite(cfg.snr_db):
        mean_power = np.mean(np.abs(rx) ** 2)
        sigma2 = scfg.sps * mean_power / (10.0 ** (cfg.snr_db / 10.0))
        scale = np.sqrt(sigma2 / 2.0 / scfg.n_periods)
        rx = rx + scale * (rng.standard_normal(period) + 1j * rng.standard_normal(period))
    est = np.fft.ifft(np.fft.fft(rx) * np.conj(np.fft.fft(ref.samples))) / ref.energy
    return est[:: scfg.sps]


def closed_loop_run(cfg: RunConfig, snapshot: int = 0) -> ClosedLoopResult:
    """Synthesize the configured model through the closed loop and score it.

    One fixed chamber snapshot (the closed-loop premise), fresh fading
    gains per evaluation realization. The delay profile is averaged on
    the emulator's chip grid and matched against the coerced target.
    """
    model = prepare_model(cfg)
    sounding = sound_snapshot(cfg, snapshot)
    scfg = cfg.sounder_config()
    ref, REF, EQ, HRC, n_chips = _chain_spectra(cfg, sounding)
    if cfg.stir_between:
        other = _snapshot_channel(cfg, snapshot + _STIR_OFFSET)
        HRC = np.fft.fft(other.taps.samples, len(ref))

    chip_rate = cfg.symbol_rate_hz
    bins = np.array([int(round(t.delay * chip_rate)) for t in model.taps])
    amps = np.array([10.0 ** (t.power_db / 20.0) for t in model.taps])
    static = np.array([t.fading == "static" for t in model.taps])

    acc = np.zeros(n_chips)
    for r in range(cfg.n_eval_realizations):
        rng = np.random.default_rng(
            np.random.SeedSequence((cfg.master_seed, _TAG_FADING, snapshot, r)))
        phases = np.exp(2j * np.pi * rng.random(len(bins)))
        ray = (rng.standard_normal(len(bins)) + 1j * rng.standard_normal(len(bins))) / np.sqrt(2)
        gains = np.where(static, amps * phases, amps * ray)
        hce = np.zeros(n_chips, dtype=complex)
        np.add.at(hce, bins, gains)
        HCE = np.tile(np.fft.fft(hce), scfg.sps)[: len(ref)]
        noise_rng = np.random.default_rng(
            np.random.SeedSequence((cfg.master_seed, _TAG_EVAL, snapshot, r)))
        est_c = _estimate_through_chain(cfg, scfg, ref, REF * EQ * HCE * HRC, noise_rng)
        acc += np.abs(est_c[:n_chips]) ** 2
    acc /= cfg.n_eval_realizations

    with np.errstate(divide="ignore"):
        pdb = np.maximum(10.0 * np.log10(acc / acc.max()), -120.0)
    pdp = PdpEstimate(delays=np.arange(n_chips) / chip_rate, power_db=pdb,
                      n_realizations=cfg.n_eval_realizations)
    detected = detect_taps(pdp, cfg.detect_prominence_db, cfg.detect_floor_db)
    report = match_taps(detected, model, delay_tol=cfg.chip_grid * 1.001)
    return ClosedLoopResult(model=model, pdp=pdp, detected=detected,
                            report=report, n_realizations=cfg.n_eval_realizations)


def cancellation_run(cfg: RunConfig, guard_bins: int = 1) -> CancellationResult:
    """Equalizer-cancellation experiment (closed loop with the emulator
    bypassed): probe -> equalizer -> chamber, re-measured per snapshot.

    With ``cfg.stir_between`` the chamber moves to a fresh snapshot
    between derivation and evaluation, quantifying why the loop must stay
    closed.
    """
    results = []
    for s in range(cfg.n_snapshots):
        sounding = sound_snapshot(cfg, s)
        scfg = cfg.sounder_config()
        ref, REF, EQ, HRC, n_chips = _chain_spectra(cfg, sounding)
        if cfg.stir_between:
            other = _snapshot_channel(cfg, s + _STIR_OFFSET)
            HRC = np.fft.fft(other.taps.samples, len(ref))
        rng = np.random.default_rng(
            np.random.SeedSequence((cfg.master_seed, _TAG_EVAL, s)))
        est_c = _estimate_through_chain(cfg, scfg, ref, REF * EQ * HRC, rng)
        cascade = ComplexSignal(est_c[:n_chips], cfg.symbol_rate_hz)
        results.append(residual_metrics_from_cascade(cascade, guard_bins=guard_bins))
    mean_db = float(np.mean([m.peak_to_residual_db for m in results]))
    return CancellationResult(per_snapshot=results, mean_peak_to_residual_db=mean_db,
                              stirred=cfg.stir_between)


def _unit_model() -> TapModel:
    return TapModel(name="unit", taps=[TapEntry(delay=0.0, power_db=0.0)])


def baseline_sweep_run(cfg: RunConfig, sample_rate: float | None = None,
                       dts_ns: tuple | None = None,
                       model: TapModel | None = None) -> list[dict]:
    """Artificial-path residual and self-correlation versus path offset.

    For each dt the same snapshot ensemble is reused (paired comparison),
    accumulating the mean cancellation residual (relative to the model
    tap energy, in dB) and the magnitude of the ensemble-mean delayed
    self-correlation. Rows come back as dicts ready for CSV emission.
    """
    rate = sample_rate if sample_rate is not None else cfg.sps * cfg.symbol_rate_hz
    dts = dts_ns if dts_ns is not None else cfg.dt_sweep_ns
    rc = RcConfig(
        tau_rms=cfg.rc_tau_rms_ns * 1e-9,
        max_delay=cfg.rc_max_delay_ns * 1e-9,
        sample_rate=rate,
        master_seed=cfg.master_seed,
        delay_coherence=cfg.baseline_coherence_ns * 1e-9,
    )
    if model is None:
        model = _unit_model()
    if model.normalized:
        raise ConfigError("baseline sweep needs an absolute-delay model")
    grid = 1.0 / rate
    model_energy = float(np.sum(model.powers_linear))
    snapshots = [synthesize_rc_cir(rc, s) for s in range(cfg.n_snapshots)]

    rows = []
    for dt_ns in dts:
        dt = dt_ns * 1e-9
        kernel = ArtificialPathKernel(dt=dt, tau_rms=rc.tau_rms)
        tapset = apply_artificial_paths(model, kernel, grid)
        active = np.any(np.abs(tapset.amplitudes) > 0)
        resid_acc, rho_acc = [], []
        for cir in snapshots:
            if active:
                k_cir = tapset.to_cir(rate)
                cascade = np.convolve(k_cir.taps.samples, cir.taps.samples)
                p = np.abs(cascade) ** 2
                tau = np.arange(len(p)) / rate
                mask = np.ones(len(p), dtype=bool)
                guard = 2.0 * grid
                for t in model.taps:
                    mask &= ~((tau >= t.delay - guard) & (tau <= t.delay + dt + guard))
                resid_acc.append(p[mask].sum() / model_energy)
            else:
                resid_acc.append(0.0)
            if dt > 0:
                rho_acc.append(self_correlation(cir, dt)[1])
            else:
                rho_acc.append(1.0 + 0j)
        mean_resid = float(np.mean(resid_acc))
        rows.append({
            "dt_ns": float(dt_ns),
            "mean_residual_db": (10.0 * np.log10(mean_resid)
                                 if mean_resid > 0 else float("-inf")),
            "mean_selfcorr": float(np.abs(np.mean(rho_acc))),
        })
    return rows
