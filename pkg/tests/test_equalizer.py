"""Tests for the deconvolution equalizer."""

import numpy as np
import pytest

from rcemu.chamber import Cir, RcConfig, synthesize_rc_cir
from rcemu.dsp import ComplexSignal
from rcemu.equalizer import (EqualizerFilter, cancellation_report,
                             derive_equalizer, epsilon_sweep,
                             export_equalizer_csv, import_equalizer_csv,
                             regularized_inverse_spectrum)
from rcemu.errors import ConfigError, NumericalError

RATE = 200e6
RC = RcConfig(tau_rms=250e-9, max_delay=2500e-9, sample_rate=RATE, master_seed=99)


def cir_of(samples):
    return Cir(ComplexSignal(np.asarray(samples, dtype=complex), RATE))


class TestDeriveEqualizer:
    def test_identity_channel_gives_identity_filter(self):
        h = cir_of([1.0, 0.0, 0.0, 0.0])
        eq = derive_equalizer(h, epsilon_rel=0.0)
        assert abs(eq.taps.samples[0]) == pytest.approx(1.0, abs=1e-12)
        assert np.max(np.abs(eq.taps.samples[1:])) < 1e-12
        rep = cancellation_report(h, eq)
        assert rep.peak_to_residual_db > 200 or rep.peak_to_residual_db == np.inf

    def test_two_tap_exact_inverse(self):
        h = cir_of([1.0, 0.5])
        eq = derive_equalizer(h, epsilon_rel=0.0, fft_len=128)
        H = np.fft.fft(h.taps.samples, 128)
        EQ = np.fft.fft(eq.taps.samples)
        assert np.max(np.abs(EQ * H - 1.0)) < 1e-9
        cascade = np.fft.ifft(EQ * H)
        c_db = 20 * np.log10(np.maximum(np.abs(cascade), 1e-300))
        assert abs(cascade[0]) == pytest.approx(1.0, abs=1e-9)
        assert np.max(c_db[1:]) < -80.0

    def test_default_fft_len_next_pow2(self):
        h = cir_of(np.ones(300))
        eq = derive_equalizer(h, epsilon_rel=1e-4)
        assert eq.fft_len == 1024

    def test_fft_len_too_short_rejected(self):
        h = cir_of(np.ones(100))
        with pytest.raises(ConfigError):
            derive_equalizer(h, epsilon_rel=0.0, fft_len=150)

    def test_bare_inverse_refused_on_deep_nulls(self):
        # two equal taps null half the spectrum
        h = cir_of([1.0, 1.0])
        with pytest.raises(NumericalError):
            derive_equalizer(h, epsilon_rel=0.0, fft_len=64)

    def test_negative_epsilon_rejected(self):
        with pytest.raises(ConfigError):
            derive_equalizer(cir_of([1.0, 0.2]), epsilon_rel=-1e-6)

    def test_synthetic_chamber_residual(self):
        # the structural cancellation benchmark: invert the true response
        # and measure what leaks outside the zero-delay bin
        vals = []
        for s in range(20):
            h = synthesize_rc_cir(RC, s)
            eq = derive_equalizer(h, epsilon_rel=1e-4)
            vals.append(cancellation_report(h, eq, guard_bins=0).peak_to_residual_db)
        assert np.mean(vals) > 25.0

    def test_cross_snapshot_cancellation_collapses(self):
        vals = []
        for s in range(8):
            h_a = synthesize_rc_cir(RC, s)
            h_b = synthesize_rc_cir(RC, 500 + s)
            eq = derive_equalizer(h_a, epsilon_rel=1e-4)
            vals.append(cancellation_report(h_b, eq, guard_bins=0).peak_to_residual_db)
        assert np.mean(vals) < 5.0


class TestInvariants:
    def test_energy_bound(self):
        rng = np.random.default_rng(5)
        h = cir_of(rng.standard_normal(64) + 1j * rng.standard_normal(64))
        for eps in (1e-6, 1e-4, 1e-2):
            H = np.fft.fft(h.taps.samples, 256)
            EQ = regularized_inverse_spectrum(H, eps)
            bound = 1.0 / (2.0 * np.sqrt(eps * np.max(np.abs(H) ** 2)))
            assert np.max(np.abs(EQ)) <= bound * (1 + 1e-12)

    def test_ratio_non_increasing_in_epsilon_noise_free(self):
        h = synthesize_rc_cir(RC, 3)
        sweep = epsilon_sweep(h, [1e-10, 1e-6, 1e-4, 1e-2])
        r = sweep["peak_to_residual_db"]
        assert all(r[i] >= r[i + 1] - 1e-9 for i in range(len(r) - 1))

    def test_noisy_derivation_has_interior_optimum_reported(self):
        h = synthesize_rc_cir(RC, 4)
        rng = np.random.default_rng(8)
        noisy = cir_of(h.taps.samples + 3e-3 * (rng.standard_normal(len(h))
                                                + 1j * rng.standard_normal(len(h))))
        sweep = epsilon_sweep(noisy, [1e-10, 1e-6, 1e-4, 1e-2],
                              evaluate_against=h)
        assert len(sweep["peak_to_residual_db"]) == 4
        assert sweep["best_epsilon"] in sweep["epsilons"]
        assert sweep["best_ratio_db"] == max(sweep["peak_to_residual_db"])

    def test_delta_cascade_reports_no_residual_sentinel(self):
        eq = EqualizerFilter(taps=ComplexSignal(np.r_[1.0 + 0j, np.zeros(7)], RATE),
                             epsilon_rel=0.0, fft_len=8)
        rep = cancellation_report(cir_of([1.0]), eq)
        assert rep.peak_to_residual_db == np.inf
        assert rep.residual_rms_delay_spread == 0.0
        assert rep.residual_pdp is None


class TestCsv:
    def test_round_trip_bit_exact(self, tmp_path):
        h = synthesize_rc_cir(RC, 6)
        eq = derive_equalizer(h, epsilon_rel=1e-4)
        path = tmp_path / "eq.csv"
        export_equalizer_csv(eq, str(path))
        back = import_equalizer_csv(str(path))
        assert np.array_equal(back.taps.samples, eq.taps.samples)
        assert back.epsilon_rel == eq.epsilon_rel
        assert back.fft_len == eq.fft_len
        assert back.source_snapshot == eq.source_snapshot

    def test_import_requires_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("tap_index,re,im\n0,1,0\n")
        with pytest.raises(ConfigError):
            import_equalizer_csv(str(path))
