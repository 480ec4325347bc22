import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pathlib import Path

from analogrf.waveform import (MapOverflowError, MixerMode,
                               analog_mvm_oracle, build_subcarrier_maps,
                               decode_if, encode_symbol, map_cross_products_clear,
                               mixer_emulate, read_complex_matrix,
                               write_complex_matrix, _mix_baseband)

GOLDEN = Path(__file__).parent / "golden"


def small_signal(rho=0.2512):
    return MixerMode("small_signal", rho_mixer=rho)


class TestSubcarrierMaps:
    def test_smallest_legal_map(self):
        smap = build_subcarrier_maps(1, 1, 0.0, 2, 16)
        assert smap.nu_x.tolist() == [2]
        assert smap.nu_w.tolist() == [[1]]

    def test_guarded_map_indices(self):
        smap = build_subcarrier_maps(3, 6, 0.33, 9, 4096)
        assert smap.m_band == 8  # ceil(7.98)
        assert smap.nu_x.tolist() == [9, 17, 25]
        assert smap.nu_w[0, 1] == 16

    def test_cross_products_clear_for_production_shape(self):
        smap = build_subcarrier_maps(25, 6, 0.33, 9, 4096)
        assert map_cross_products_clear(smap)

    def test_nu0_must_exceed_block(self):
        with pytest.raises(ValueError):
            build_subcarrier_maps(3, 6, 0.33, 6, 4096)

    def test_overflow(self):
        with pytest.raises(MapOverflowError):
            build_subcarrier_maps(400, 6, 0.33, 9, 4096)

    @given(n=st.integers(1, 12), mprime=st.integers(1, 8),
           theta=st.floats(0.0, 1.0), extra=st.integers(1, 5))
    @settings(max_examples=60, deadline=None)
    def test_map_invariants(self, n, mprime, theta, extra):
        nu0 = mprime + extra
        lfft = 4096
        try:
            smap = build_subcarrier_maps(n, mprime, theta, nu0, lfft)
        except MapOverflowError:
            return
        assert np.all(smap.nu_x == nu0 + smap.m_band * np.arange(n))
        assert np.all(smap.nu_w == smap.nu_x[None, :]
                      - np.arange(1, mprime + 1)[:, None])
        assert smap.nu_w.min() >= 1 and smap.nu_x.max() <= lfft
        assert len(np.unique(smap.nu_w)) == smap.nu_w.size
        assert smap.m_band >= mprime
        assert map_cross_products_clear(smap)


class TestEncode:
    def test_input_trivial(self):
        smap = build_subcarrier_maps(1, 1, 0.0, 2, 16)
        sym = encode_symbol(np.array([1.0 + 0j]), smap, "input")
        assert sym.freq[2] == 1.0
        assert np.count_nonzero(sym.freq) == 1

    def test_weight_trivial_conjugate(self):
        smap = build_subcarrier_maps(1, 1, 0.0, 2, 16)
        sym = encode_symbol(np.array([[1.0 + 0j]]), smap, "weight")
        assert sym.freq[1] == 1.0

    def test_weight_conjugation_convention(self):
        smap = build_subcarrier_maps(3, 6, 0.33, 9, 4096)
        w = np.zeros((6, 3), dtype=complex)
        w[0, 0] = 1j
        sym = encode_symbol(w, smap, "weight")
        assert sym.freq[8] == -1j

    def test_shape_mismatch(self):
        smap = build_subcarrier_maps(3, 6, 0.33, 9, 4096)
        with pytest.raises(ValueError):
            encode_symbol(np.zeros(4, dtype=complex), smap, "input")
        with pytest.raises(ValueError):
            encode_symbol(np.zeros((5, 3), dtype=complex), smap, "weight")

    def test_cp_is_tail_and_time_is_idft(self):
        smap = build_subcarrier_maps(3, 6, 0.33, 9, 512)
        x = np.arange(1, 4).astype(complex)
        sym = encode_symbol(x, smap, "input", cp_overhead=0.125)
        assert len(sym.cp) == 64
        np.testing.assert_allclose(sym.cp, sym.time[-64:])
        np.testing.assert_allclose(sym.time,
                                   np.fft.ifft(sym.freq) * len(sym.freq))


def test_circular_convolution_identity():
    rng = np.random.default_rng(5)
    lfft = 256
    a = rng.normal(size=lfft) + 1j * rng.normal(size=lfft)
    b = rng.normal(size=lfft) + 1j * rng.normal(size=lfft)
    a /= np.abs(a).max()
    b /= np.abs(b).max()
    ta = np.fft.ifft(a) * lfft
    tb = np.fft.ifft(b) * lfft
    product_spectrum = np.fft.fft(ta * tb) / lfft
    circ = np.zeros(lfft, dtype=complex)
    for shift in range(lfft):
        circ += a[shift] * np.roll(b, shift)
    assert np.abs(product_spectrum - circ).max() < 1e-10 * np.abs(circ).max()


class TestMixerEmulate:
    def test_small_signal_product(self):
        out = mixer_emulate([2.0], [3.0], small_signal())
        np.testing.assert_allclose(out, [1.5072])

    def test_saturated_sign(self):
        mode = MixerMode("lo_saturated", rho_mixer=1.0, v_lo_sat=1.0)
        np.testing.assert_allclose(mixer_emulate([-5.0], [3.0], mode), [-3.0])

    def test_zero_rf(self):
        out = mixer_emulate(np.ones(8), np.zeros(8), small_signal())
        assert np.all(out == 0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mixer_emulate(np.ones(4), np.ones(5), small_signal())

    def test_passband_tones_land_on_difference_frequency(self):
        # 16x-oversampled toy passband: LO at bin 20, RF at bin 50
        n = 256
        t = np.arange(n)
        lo = np.cos(2 * np.pi * 20 * t / n)
        rf = np.cos(2 * np.pi * 50 * t / n)
        rho = 0.2512
        out = mixer_emulate(lo, rf, small_signal(rho))
        spec = np.fft.fft(out)
        assert abs(spec[30]) == pytest.approx(rho / 4 * n, rel=1e-9)
        assert abs(spec[70]) == pytest.approx(rho / 4 * n, rel=1e-9)

    def test_passband_hard_limited_fundamental(self):
        n = 4096
        t = np.arange(n)
        lo = 0.3 * np.cos(2 * np.pi * 20 * t / n)  # amplitude irrelevant once limited
        rf = np.cos(2 * np.pi * 50 * t / n)
        mode = MixerMode("lo_saturated", rho_mixer=0.2512, v_lo_sat=0.7)
        out = mixer_emulate(lo, rf, mode)
        spec = np.fft.fft(out)
        expected = mode.rho_mixer * mode.v_lo_sat * (4 / np.pi) / 4 * n
        assert abs(spec[30]) == pytest.approx(expected, rel=1e-4)


class TestDecode:
    def test_single_tone_scalar_product(self, sp):
        smap = build_subcarrier_maps(1, 1, 0.0, 2, 16)
        x0, w0 = 0.7 - 0.2j, 1.5 + 0.4j
        rf = encode_symbol(np.array([x0]), smap, "input")
        lo = encode_symbol(np.array([[w0]]), smap, "weight")
        if_sym, gain = _mix_baseband(lo, rf, small_signal(), 16.0)
        decoded = decode_if(if_sym, smap, gain)
        np.testing.assert_allclose(decoded, [w0 * x0], rtol=1e-12)

    def test_two_entry_block(self, sp):
        mode = small_signal(sp.rho_mixer)
        y = analog_mvm_oracle(np.array([[1.0, 2.0]]), np.array([3.0, 4.0]),
                              1, sp, mode)
        np.testing.assert_allclose(y, [11.0], rtol=1e-9)

    def test_dense_block(self, sp):
        rng = np.random.default_rng(11)
        w = rng.normal(size=(6, 25)) + 1j * rng.normal(size=(6, 25))
        x = rng.normal(size=25) + 1j * rng.normal(size=25)
        y = analog_mvm_oracle(w, x, 6, sp, small_signal(sp.rho_mixer))
        assert (np.linalg.norm(y - w @ x) / np.linalg.norm(w @ x)) < 1e-9

    def test_zero_gain(self):
        smap = build_subcarrier_maps(1, 1, 0.0, 2, 16)
        sym = encode_symbol(np.array([1.0 + 0j]), smap, "input")
        with pytest.raises(ZeroDivisionError):
            decode_if(sym, smap, 0.0)


class TestOracle:
    def test_identity(self, sp):
        y = analog_mvm_oracle(np.eye(6), np.eye(6)[2], 6, sp, small_signal())
        np.testing.assert_allclose(y.real, np.eye(6)[2], atol=1e-12)

    def test_unit_disk_inputs_all_shapes(self, sp):
        rng = np.random.default_rng(3)
        mode = small_signal(sp.rho_mixer)
        for m, n in [(6, 25), (16, 150), (120, 400), (84, 120), (10, 84)]:
            w = rng.uniform(-1, 1, (m, n)) + 1j * rng.uniform(-1, 1, (m, n))
            x = rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n)
            y = analog_mvm_oracle(w, x, 6, sp, mode)
            rel = np.linalg.norm(y - w @ x) / np.linalg.norm(w @ x)
            assert rel < 1e-9, (m, n, rel)

    def test_zero_padded_rows_decode_to_nothing(self, sp):
        rng = np.random.default_rng(4)
        w = rng.normal(size=(7, 4))  # two blocks of 6, five padded rows
        x = rng.normal(size=4)
        q_rows = 12
        # decode all padded rows by asking for the full stack
        padded = np.zeros((q_rows, 4))
        padded[:7] = w
        y = analog_mvm_oracle(padded, x, 6, sp, small_signal())
        ref = w @ x
        rms = np.sqrt(np.mean(np.abs(ref) ** 2))
        assert np.abs(y[7:]).max() < 1e-9 * rms

    def test_saturated_mode_distorts_multitone(self, sp):
        rng = np.random.default_rng(9)
        w = rng.normal(size=(6, 25)) + 1j * rng.normal(size=(6, 25))
        x = rng.normal(size=25) + 1j * rng.normal(size=25)
        ref = w @ x
        mode_sat = MixerMode("lo_saturated", rho_mixer=sp.rho_mixer,
                             v_lo_sat=1.0)
        err_ss = np.linalg.norm(
            analog_mvm_oracle(w, x, 6, sp, small_signal(sp.rho_mixer)) - ref)
        err_sat = np.linalg.norm(
            analog_mvm_oracle(w, x, 6, sp, mode_sat) - ref)
        assert err_sat > err_ss

    def test_shape_mismatch(self, sp):
        with pytest.raises(ValueError):
            analog_mvm_oracle(np.eye(4), np.ones(5), 2, sp, small_signal())


class TestGoldenVectors:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        mat = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))
        path = tmp_path / "mat.txt"
        write_complex_matrix(path, mat)
        np.testing.assert_array_equal(read_complex_matrix(path), mat)

    def test_encoder_decoder_regression(self, sp):
        w = read_complex_matrix(GOLDEN / "weights.txt")
        x = read_complex_matrix(GOLDEN / "input.txt")[0]
        expected = read_complex_matrix(GOLDEN / "decoded.txt")[0]
        y = analog_mvm_oracle(w, x, 6, sp, small_signal(sp.rho_mixer))
        np.testing.assert_allclose(y, expected, rtol=1e-9)
