"""Acceptance suite: one test per acceptance criterion.

Each test exercises the criterion at its stated tolerance and prints a
single PASS line (visible with ``pytest -s`` or in captured output) once
its assertions hold.
"""

import dataclasses
import json
import os

import numpy as np
import pytest
from scipy import stats

from rcemu.chamber import RcConfig, rc_ensemble, synthesize_rc_cir
from rcemu.cli import EXIT_OK, main
from rcemu.dsp import ComplexSignal, convolve, fft, generate_pn, ifft
from rcemu.emulator import (DopplerConfig, FadingProcess, TapEntry, TapModel,
                            coerce_to_grid, emulate, generate_fading,
                            load_model, model_to_cir, scale_delay_spread)
from rcemu.equalizer import derive_equalizer
from rcemu.experiments import (RunConfig, baseline_sweep_run, cancellation_run,
                               closed_loop_run)
from rcemu.metrics import PdpEstimate, rms_delay_spread
from rcemu.sounder import SounderConfig, sound_channel
from rcemu.chamber import Cir

# Table II rows: delay_ns, power_db, coerced_ns (None = dropped in replication)
PEDB_ROWS = [
    (0.0, 0.0, 0),
    (200.0, -0.9, 200),
    (800.0, -4.9, 800),
    (1200.0, -8.0, 1200),
    (2300.0, -7.8, 2300),
    (3700.0, -23.9, None),
]

# Table III rows: printed scaled delay [us], power_db, coerced_ns
# (rows 20-23 unrealizable in the replication configuration)
TDLB_ROWS = [
    (0.00000, 0.0, 0), (0.03216, -2.2, 30), (0.06285, -4.0, 60),
    (0.06465, -3.2, 60), (0.08610, -9.8, 90), (0.08958, -1.2, 90),
    (0.11043, -3.4, 110), (0.11091, -5.2, 110), (0.11256, -7.6, 110),
    (0.15165, -3.0, 150), (0.15849, -8.9, 160), (0.17100, -9.0, 170),
    (0.33063, -4.8, 330), (0.38268, -5.7, 380), (0.46422, -7.5, 460),
    (0.53526, -1.9, 540), (0.60507, -7.6, 610), (0.84882, -12.2, 850),
    (0.90657, -9.8, 910), (1.08561, -11.4, 1090), (1.23201, -14.9, 1230),
    (1.28370, -9.2, 1280), (1.43502, -11.3, 1440),
]


def test_criterion_1_table_fidelity():
    """Loaded models reproduce the published tables exactly."""
    pedb = load_model("pedestrian_b")
    assert [t.delay * 1e9 for t in pedb.taps] == \
        pytest.approx([d for d, _, _ in PEDB_ROWS], abs=1e-9)
    assert [t.power_db for t in pedb.taps] == [p for _, p, _ in PEDB_ROWS]
    coerced = coerce_to_grid(pedb, 10e-9, max_realizable_delay=2500e-9)
    assert [round(t.delay * 1e9) for t in coerced.taps] == \
        [c for _, _, c in PEDB_ROWS if c is not None]
    assert [round(t.delay * 1e9) for t in coerced.dropped] == [3700]

    tdlb = scale_delay_spread(load_model("tdl_b"), 300e-9)
    for tap, (us, p, _) in zip(tdlb.taps, TDLB_ROWS):
        assert tap.delay * 1e6 == pytest.approx(us, abs=1e-9)
        assert tap.power_db == p
    # full coerced column (no realizable-delay limit applied)
    full = coerce_to_grid(tdlb, 10e-9)
    assert sorted({round(t.delay * 1e9) for t in full.taps}) == \
        sorted({c for _, _, c in TDLB_ROWS})
    # replication limit drops exactly rows 20-23
    lim = coerce_to_grid(tdlb, 10e-9, max_realizable_delay=1000e-9)
    assert sorted({round(t.delay * 1e9) for t in lim.taps}) == \
        sorted({c for _, _, c in TDLB_ROWS[:19]})
    assert len(lim.dropped) == 4
    # merged bins carry the linear power sums
    by_delay = {round(t.delay * 1e9): t.power_db for t in lim.taps}
    for coerced_ns in sorted({c for _, _, c in TDLB_ROWS[:19]}):
        lin = sum(10 ** (p / 10) for _, p, c in TDLB_ROWS[:19] if c == coerced_ns)
        assert by_delay[coerced_ns] == pytest.approx(10 * np.log10(lin), abs=1e-12)
    print("ACCEPTANCE 1 PASS: Pedestrian-B and TDL-B tables reproduced exactly "
          "(scaling, coercion, merges, drops)")


def test_criterion_2_pn_and_delay_resolution():
    """PN-4095 autocorrelation exact; 20 ns two-tap resolution at 0.5 dB."""
    pn = generate_pn(12)
    spec = np.fft.fft(pn.chips)
    corr = np.round(np.fft.ifft(spec * np.conj(spec)).real).astype(int)
    assert corr[0] == 4095
    assert np.all(corr[1:] == -1)

    cfg = SounderConfig(snr_db=float("inf"))
    h = np.zeros(8, dtype=complex)
    h[0] = 1.0
    h[4] = 10 ** (-6.0 / 20.0)  # 20 ns at 200 MS/s
    est = sound_channel(cfg, Cir(ComplexSignal(h, 200e6)))
    # the chip-spaced view separates the taps from the pulse shoulders
    e = np.abs(est.taps.samples[::2])
    order = np.argsort(e)[::-1]
    assert set(order[:2]) == {0, 2}
    assert abs(20 * np.log10(e[0]) - 0.0) < 0.5
    assert abs(20 * np.log10(e[2]) - (-6.0206)) < 0.5
    print("ACCEPTANCE 2 PASS: PN autocorrelation {4095, -1} exact; "
          "taps 20 ns apart resolved within 0.5 dB")


def test_criterion_3_equalizer_cancellation():
    """Matched cancellation >= 25 dB over 20 snapshots; stirred < 5 dB."""
    cfg = RunConfig(n_snapshots=20, snr_db=30.0, n_periods=10, epsilon_rel=1e-4,
                    master_seed=301)
    matched = cancellation_run(cfg)
    assert matched.mean_peak_to_residual_db >= 25.0
    stirred = cancellation_run(dataclasses.replace(cfg, stir_between=True))
    assert stirred.mean_peak_to_residual_db < 5.0
    print(f"ACCEPTANCE 3 PASS: matched cancellation "
          f"{matched.mean_peak_to_residual_db:.1f} dB (>= 25), stirred "
          f"{stirred.mean_peak_to_residual_db:.1f} dB (< 5)")


def test_criterion_4_closed_loop_pedestrian_b():
    """All 5 realizable taps within one grid step and 1.5 dB, no spurious."""
    cfg = RunConfig(model="pedestrian_b", n_eval_realizations=250, master_seed=401)
    res = closed_loop_run(cfg)
    assert res.report.all_matched
    targets = [0, 200, 800, 1200, 2300]
    matched_delays = sorted(round(m.detected_delay * 1e9) for m in res.report.matches)
    assert matched_delays == targets
    assert res.report.max_abs_delay_error() <= 10e-9 + 1e-15
    assert res.report.max_abs_power_error_db() <= 1.5
    assert res.report.spurious_taps == []
    print(f"ACCEPTANCE 4 PASS: Pedestrian-B: 5/5 taps at {targets} ns, max "
          f"power error {res.report.max_abs_power_error_db():.2f} dB, 0 spurious")


def test_criterion_5_closed_loop_tdl_b():
    """All distinct coerced TDL-B delays (rows 1-19) within tolerance."""
    cfg = RunConfig(model="tdl_b", ds_target_ns=300.0, n_eval_realizations=500,
                    master_seed=501)
    res = closed_loop_run(cfg)
    want = sorted({c for _, _, c in TDLB_ROWS[:19]})
    assert [round(t.delay * 1e9) for t in res.model.taps] == want
    assert res.report.all_matched
    assert res.report.max_abs_delay_error() <= 10e-9 + 1e-15
    assert res.report.max_abs_power_error_db() <= 1.5
    assert res.report.spurious_taps == []
    print(f"ACCEPTANCE 5 PASS: TDL-B: {len(want)}/{len(want)} coerced taps "
          f"matched, max power error {res.report.max_abs_power_error_db():.2f} dB")


def test_criterion_6_baseline_sweep():
    """Residual non-decreasing in the offset; fine offsets win by >= 10 dB;
    self-correlation 1.0 at zero offset, strictly decreasing."""
    cfg = RunConfig(n_snapshots=200, master_seed=601)
    rows = baseline_sweep_run(cfg)
    assert [r["dt_ns"] for r in rows] == [0.0, 10.0, 20.0, 40.0]
    resid = [r["mean_residual_db"] for r in rows]
    assert resid[0] == float("-inf")
    assert all(resid[i] <= resid[i + 1] + 1e-12 for i in range(len(resid) - 1))
    corr = [r["mean_selfcorr"] for r in rows]
    assert corr[0] == 1.0
    assert all(corr[i] > corr[i + 1] for i in range(len(corr) - 1))

    fine_cfg = dataclasses.replace(cfg, n_snapshots=50)
    fine = baseline_sweep_run(fine_cfg, sample_rate=fine_cfg.fine_sample_rate_hz,
                              dts_ns=(0.1, 10.0))
    gain = fine[1]["mean_residual_db"] - fine[0]["mean_residual_db"]
    assert gain >= 10.0
    print(f"ACCEPTANCE 6 PASS: residual non-decreasing over (0,10,20,40) ns; "
          f"0.1 ns offset beats 10 ns by {gain:.1f} dB; self-correlation "
          f"strictly decreasing from 1.0")


def test_criterion_7_statistical_validity():
    """Rayleigh fading, Jakes band shape, chamber statistics."""
    model = coerce_to_grid(load_model("pedestrian_b"), 10e-9,
                           max_realizable_delay=2500e-9)
    fd, fs = 100.0, 1000.0
    fading = generate_fading(model, DopplerConfig(max_doppler_hz=fd), 100_000,
                             sample_rate=fs, seed=701)
    env = np.abs(fading.gains[0])
    sigma = np.sqrt(np.mean(env ** 2) / 2)
    p_fading = stats.kstest(env, "rayleigh", args=(0, sigma)).pvalue
    assert p_fading > 0.01

    psd = np.abs(np.fft.fft(fading.gains[1])) ** 2
    freq = np.fft.fftfreq(len(fading.gains[1]), d=1 / fs)
    containment = psd[np.abs(freq) <= fd].sum() / psd.sum()
    assert containment >= 0.99
    outer = psd[(np.abs(freq) >= 0.9 * fd) & (np.abs(freq) <= fd)].sum()
    center = psd[np.abs(freq) <= 0.1 * fd].sum()
    assert outer > center

    rc = RcConfig(tau_rms=250e-9, max_delay=2500e-9, sample_rate=200e6,
                  master_seed=702)
    snaps = rc_ensemble(rc, 800)
    env_bin = np.array([abs(c.taps.samples[30]) for c in snaps])
    sigma = np.sqrt(np.mean(env_bin ** 2) / 2)
    p_rc = stats.kstest(env_bin, "rayleigh", args=(0, sigma)).pvalue
    assert p_rc > 0.01

    pdp = np.mean([np.abs(c.taps.samples) ** 2 for c in snaps], axis=0)
    tau = np.arange(len(pdp)) / rc.sample_rate
    n4 = int(4 * rc.tau_rms * rc.sample_rate)
    A = np.vstack([tau[:n4], np.ones(n4)]).T
    slope = np.linalg.lstsq(A, 10 * np.log10(pdp[:n4]), rcond=None)[0][0]
    want = -10 * np.log10(np.e) / rc.tau_rms
    assert slope == pytest.approx(want, rel=0.10)
    print(f"ACCEPTANCE 7 PASS: fading KS p={p_fading:.3f}, Jakes containment "
          f"{containment:.4f} with U-shape, chamber bin KS p={p_rc:.3f}, PDP "
          f"slope within {abs(slope / want - 1) * 100:.1f}% of -10*log10(e)/tau")


def test_criterion_8_numerical_oracles():
    """Cross-checks against independent numerical routes."""
    rng = np.random.default_rng(801)
    # convolution against the O(N^2) direct sum
    a = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    b = rng.standard_normal(70) + 1j * rng.standard_normal(70)
    got = convolve(ComplexSignal(a, 1.0), ComplexSignal(b, 1.0)).samples
    want = np.zeros(119, dtype=complex)
    for i in range(50):
        for j in range(70):
            want[i + j] += a[i] * b[j]
    assert np.max(np.abs(got - want)) < 1e-10

    # FFT round trip
    x = ComplexSignal(rng.standard_normal(513) + 1j * rng.standard_normal(513), 1.0)
    back = ifft(fft(x)).samples
    assert np.max(np.abs(back - x.samples)) / np.max(np.abs(x.samples)) < 1e-10

    # exact equalizer inverse at epsilon = 0
    h = Cir(ComplexSignal(np.array([1.0, 0.5, -0.125j]), 1e8))
    eq = derive_equalizer(h, epsilon_rel=0.0, fft_len=64)
    H = np.fft.fft(h.taps.samples, 64)
    assert np.max(np.abs(np.fft.fft(eq.taps.samples) * H - 1.0)) < 1e-9

    # frozen-fading delay line equals convolution
    model = coerce_to_grid(load_model("pedestrian_b"), 10e-9,
                           max_realizable_delay=2500e-9)
    gains = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    x = ComplexSignal(rng.standard_normal(512) + 1j * rng.standard_normal(512), 1e8)
    fading = FadingProcess(gains=np.repeat(gains[:, None], 512, axis=1),
                           sample_rate=1e8)
    y = emulate(model, fading, x)
    yc = convolve(x, model_to_cir(model, gains).taps).samples[:512]
    assert np.max(np.abs(y.samples - yc)) < 1e-10

    # two equal taps at spacing T: rms delay spread is exactly T/2
    T_bins, n = 40, 64
    p = np.full(n, -120.0)
    p[0] = 0.0
    p[T_bins] = 0.0
    pdp = PdpEstimate(delays=np.arange(n) / 1e8, power_db=p, n_realizations=1)
    got = rms_delay_spread(pdp)
    assert got == pytest.approx((T_bins / 1e8) / 2, rel=1e-14)
    print("ACCEPTANCE 8 PASS: convolution, FFT, exact inverse, delay line and "
          "delay-spread oracles all within tolerance")


def test_criterion_9_reproducibility(tmp_path):
    """Identical config and seed produce byte-identical outputs."""
    args = ["closed-loop", "--seed", "901", "--realizations", "60"]
    out1, out2, out3 = (tmp_path / d for d in ("r1", "r2", "r3"))
    assert main(args + ["--out", str(out1)]) == EXIT_OK
    assert main(args + ["--out", str(out2)]) == EXIT_OK
    # replay purely from the recorded manifest
    assert main(["closed-loop", "--out", str(out3),
                 "--config", str(out1 / "manifest.json")]) == EXIT_OK
    names = [n for n in sorted(os.listdir(out1)) if n.endswith(".csv")]
    assert names
    for name in names:
        b1 = (out1 / name).read_bytes()
        assert b1 == (out2 / name).read_bytes()
        assert b1 == (out3 / name).read_bytes()

    # snapshot streams are index-derived: batch generation equals
    # one-at-a-time generation bit for bit, so results cannot depend on
    # evaluation order or worker partitioning
    rc = RcConfig(tau_rms=250e-9, max_delay=2500e-9, sample_rate=200e6,
                  master_seed=902)
    batch = rc_ensemble(rc, 6)
    for s in (0, 3, 5):
        alone = synthesize_rc_cir(rc, s)
        assert np.array_equal(batch[s].taps.samples, alone.taps.samples)
    print("ACCEPTANCE 9 PASS: byte-identical outputs across runs and manifest "
          "replay; snapshot streams independent of generation order")
