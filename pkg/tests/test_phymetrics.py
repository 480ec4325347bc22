import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from analogrf.phymetrics import (LayerSpec, SystemParams, aggregate_energy,
                                 clip_gain, client_energy_coefficient,
                                 compute_kappa, dbm_to_watts, lenet_layers,
                                 nmse_ref, per_mac_energies, required_gain,
                                 tw_schedule, watts_to_dbm)
from analogrf.solver import optimal_beta

complex_st = st.complex_numbers(min_magnitude=1e-6, max_magnitude=1e3,
                                allow_nan=False, allow_infinity=False)


class TestSystemParams:
    def test_table_defaults(self, sp):
        assert sp.a_max == pytest.approx(0.70795, abs=1e-5)
        assert sp.beta_max == pytest.approx(math.sqrt(10 ** 2.3), rel=1e-12)
        assert watts_to_dbm(sp.p_wmax_w) == pytest.approx(48.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            SystemParams(eta_bs=0.0)
        with pytest.raises(ValueError):
            SystemParams(lam=1.5)


class TestKappa:
    def test_table_value(self, sp):
        assert compute_kappa(sp) == pytest.approx(6.340e8, rel=1e-3)

    def test_unit_reference(self):
        sp = SystemParams(rho_mixer=1.0, rho_nf=1.0, p_w0_w=1e-3, p_x0_w=1e-3,
                          kt0_w_per_hz=1e-3, b_hz=1.0)
        assert compute_kappa(sp) == pytest.approx(1.0, rel=1e-15)

    def test_bandwidth_scaling(self, sp):
        doubled = replace(sp, b_hz=2 * sp.b_hz)
        assert compute_kappa(doubled) == pytest.approx(compute_kappa(sp) / 2,
                                                       rel=1e-15)


class TestRequiredGain:
    def test_unit(self):
        assert required_gain(1.0, 1.0) == 1.0

    def test_table_value(self, sp):
        u = required_gain(0.1, compute_kappa(sp))
        assert u == pytest.approx(3.972e-4, rel=1e-3)

    def test_eps_scaling(self, sp):
        kappa = compute_kappa(sp)
        assert required_gain(0.2, kappa) == pytest.approx(
            required_gain(0.1, kappa) / 2, rel=1e-15)

    def test_domain(self):
        with pytest.raises(ValueError):
            required_gain(0.0, 1.0)


class TestClipGain:
    def test_below_cap_unchanged(self):
        g = 0.5 * np.exp(1j * np.pi / 4)
        assert clip_gain(g, 0.70795) == g

    def test_clipped_magnitude_and_phase(self):
        g = 2.0 * np.exp(1j * np.pi / 4)
        a = clip_gain(g, 0.70795)
        assert abs(a) == pytest.approx(0.70795)
        assert np.angle(a) == pytest.approx(np.pi / 4)

    def test_zero(self):
        assert clip_gain(0.0, 1.0) == 0.0

    @given(complex_st, st.floats(1e-3, 10.0))
    @settings(max_examples=60, deadline=None)
    def test_idempotent_and_angle_preserving(self, g, a_max):
        once = clip_gain(g, a_max)
        twice = clip_gain(once, a_max)
        assert twice == pytest.approx(once, rel=1e-12)
        assert abs(once) <= a_max * (1 + 1e-12)
        if abs(g) > 0:
            assert np.angle(once) == pytest.approx(np.angle(g), abs=1e-9)


class TestNmseRef:
    def test_unit(self):
        assert nmse_ref(1.0, 1.0, 1.0) == 1.0

    def test_closed_loop_target(self, sp):
        kappa = compute_kappa(sp)
        u = required_gain(0.1, kappa)
        a = sp.a_max
        beta = optimal_beta(a, u, sp.beta_max)
        assert nmse_ref(a, beta, kappa) == pytest.approx(0.01, rel=1e-12)

    def test_beta_scaling(self):
        assert nmse_ref(1.0, 2.0, 1.0) == pytest.approx(0.25)

    def test_zero_gain(self):
        with pytest.raises(ZeroDivisionError):
            nmse_ref(0.0, 1.0, 1.0)

    @given(st.floats(0.05, 0.7), st.floats(0.01, 2.0))
    @settings(max_examples=40, deadline=None)
    def test_optimal_beta_hits_floor(self, a_mag, eps):
        kappa = 6.34e8
        u = required_gain(eps, kappa)
        beta_max = 1e6  # keep every draw feasible
        beta = optimal_beta(a_mag, u, beta_max)
        assert nmse_ref(a_mag, beta, kappa) == pytest.approx(
            1.0 / (kappa * u ** 2), rel=1e-12)


class TestPerMacEnergies:
    def test_layer1_fixed_terms(self, sp, layers):
        _, e2, e3 = per_mac_energies(0.0, layers[0], sp)
        assert e2 == pytest.approx(0.0266e-12, rel=1e-6)
        assert e3 == pytest.approx(0.0797e-12, rel=1e-3)

    def test_zero_beta_no_waveform_energy(self, sp, layers):
        e1, _, _ = per_mac_energies(0.0, layers[0], sp)
        assert e1 == 0.0

    def test_layer3_adc_term(self, sp, layers):
        _, e2, _ = per_mac_energies(0.0, layers[2], sp)
        assert e2 == pytest.approx(1.663e-15, rel=1e-3)

    @given(st.floats(1e-6, 1e2))
    @settings(max_examples=40, deadline=None)
    def test_e1_quadratic_in_beta(self, beta):
        sp, layer = SystemParams(), lenet_layers()[0]
        e1_a, _, _ = per_mac_energies(beta, layer, sp)
        e1_b, _, _ = per_mac_energies(2 * beta, layer, sp)
        assert e1_b == pytest.approx(4 * e1_a, rel=1e-12)


class TestTwSchedule:
    def test_layer1(self, sp, layers):
        assert tw_schedule(layers[0], sp.lfft, sp.b_hz) == pytest.approx(
            128.45e-3, rel=1e-4)

    def test_layer3_tiling(self, sp, layers):
        assert tw_schedule(layers[2], sp.lfft, sp.b_hz) == pytest.approx(
            1.966e-3, rel=1e-3)

    def test_single_tile_when_everything_fits(self, sp):
        layer = LayerSpec("toy", m=8, n=100, p=3)
        # floor(4096/8) = 512 >= 100 -> one tile
        assert tw_schedule(layer, sp.lfft, sp.b_hz) == pytest.approx(
            3 * sp.lfft / sp.b_hz)

    def test_output_too_wide(self, sp):
        with pytest.raises(ValueError):
            tw_schedule(LayerSpec("bad", m=5000, n=10, p=1), sp.lfft, sp.b_hz)


class _StubDesign:
    def __init__(self, f, beta):
        self.f = np.asarray(f, dtype=complex)
        self.beta = np.asarray(beta, dtype=complex)


class TestAggregateEnergy:
    def test_mac_totals(self, layers):
        macs = [layer.macs for layer in layers]
        assert macs == [117600, 240000, 48000, 10080, 840]
        total = sum(macs)
        assert total == 416520
        # rounded per-layer table entries sum to 416.54k
        assert abs(total - 416540) / 416540 < 1e-4

    def test_zero_design_reduces_to_readout_floor(self, sp, layers):
        k = 3
        designs = [_StubDesign(np.zeros(16), np.zeros(k)) for _ in layers]
        bd = aggregate_energy(designs, layers, sp)
        expected = sum(layer.macs * sum(per_mac_energies(0, layer, sp)[1:])
                       for layer in layers) / sum(l.macs for l in layers)
        assert bd.ebar_client == pytest.approx(expected, rel=1e-12)
        assert bd.ebar_bs == 0.0
        assert bd.ebar_e1 == 0.0

    def test_single_layer_identity(self, sp, layers):
        layer = layers[0]
        beta = 0.3 + 0.1j
        design = _StubDesign(np.ones(4), [beta])
        bd = aggregate_energy([design], [layer], sp)
        e1, e2, e3 = per_mac_energies(beta, layer, sp)
        assert bd.e_client[0, 0] == pytest.approx(layer.macs * (e1 + e2 + e3),
                                                  rel=1e-12)
        t_w = tw_schedule(layer, sp.lfft, sp.b_hz)
        assert bd.e_bs[0] == pytest.approx(t_w / sp.eta_bs * sp.p_w0_w * 4.0,
                                           rel=1e-12)

    def test_ebar_is_mac_weighted_average(self, sp, layers):
        rng = np.random.default_rng(0)
        k = 2
        designs = [_StubDesign(rng.normal(size=8), rng.normal(size=k))
                   for _ in layers]
        bd = aggregate_energy(designs, layers, sp)
        per_layer_client = np.array(
            [[sum(per_mac_energies(b, layer, sp)) for b in d.beta]
             for d, layer in zip(designs, layers)])
        macs = np.array([layer.macs for layer in layers], dtype=float)
        expected = (per_layer_client * macs[:, None]).sum() / (k * macs.sum())
        assert bd.ebar_client == pytest.approx(expected, rel=1e-12)

    def test_client_coefficient_consistency(self, sp, layers):
        # c * |beta|^2 equals the layer's waveform joules
        layer = layers[1]
        beta = 1.7 - 0.4j
        e1, _, _ = per_mac_energies(beta, layer, sp)
        c = client_energy_coefficient(layer, sp)
        assert c * abs(beta) ** 2 == pytest.approx(layer.macs * e1, rel=1e-12)


def test_dbm_round_trip():
    for dbm in (-174.0, -3.0, 0.0, 23.0, 48.0):
        assert watts_to_dbm(dbm_to_watts(dbm)) == pytest.approx(dbm)
