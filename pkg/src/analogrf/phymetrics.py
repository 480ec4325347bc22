"""Closed-form accuracy (NMSE) and energy models for mixer-based analog MVM.

Maps the physical-layer variables (beamforming gain ``a``, client scaling
``beta``) to the reference NMSE metric and to per-MAC / per-layer energy
figures used as objective and constraints by the layer solver.

Unit discipline: powers are stored in watts and energies in joules; dBm and
pJ conversions happen only at the configuration boundary.  The mixer/noise
coefficients are calibrated against 1 mW reference levels, so the SNR
constant kappa normalizes powers to milliwatts internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

MILLIWATT = 1e-3  # watts


def dbm_to_watts(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0) * MILLIWATT


def watts_to_dbm(p_w: float) -> float:
    return 10.0 * math.log10(p_w / MILLIWATT)


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


class InfeasibleError(RuntimeError):
    """A gain/precision requirement cannot be met under the hardware caps."""

    def __init__(self, message, clients=()):
        super().__init__(message)
        self.clients = tuple(clients)


@dataclass(frozen=True)
class SystemParams:
    """Hardware and air-interface constants (defaults follow the simulation setup).

    Powers in watts, energies in joules, bandwidth in Hz.  ``lam`` is the
    BS-vs-client energy weighting in [0, 1].
    """

    b_hz: float = 25e6
    f_w_ghz: float = 2.5
    p_w0_w: float = 1e-3          # BS-side reference level, 0 dBm
    p_x0_w: float = 1e-3          # client-side reference level, 0 dBm
    p_wmax_w: float = dbm_to_watts(48.0)
    p_xmax_w: float = dbm_to_watts(23.0)
    p_lo_th_w: float = dbm_to_watts(-3.0)
    rho_mixer: float = 0.2512
    rho_nf: float = 0.2512
    rho_radio: float = 0.30
    eta_bs: float = 0.5           # PA efficiency; not pinned by the source tables
    kt0_w_per_hz: float = dbm_to_watts(-174.0)
    e_adc_j: float = 1e-12        # per ADC sample
    e_dig_j: float = 1e-12        # per readout op
    e_digital_j: float = 3e-12    # digital-computing reference, per MAC
    lfft: int = 4096
    lam: float = 0.0

    def __post_init__(self):
        for name in ("b_hz", "p_w0_w", "p_x0_w", "p_wmax_w", "p_xmax_w",
                     "p_lo_th_w", "rho_mixer", "rho_nf", "rho_radio",
                     "kt0_w_per_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.eta_bs <= 1:
            raise ValueError("eta_bs must lie in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ValueError("lam must lie in [0, 1]")

    @property
    def a_max(self) -> float:
        """LO-drive gain cap keeping the mixer in its small-signal region."""
        return math.sqrt(self.p_lo_th_w / self.p_w0_w)

    @property
    def beta_max(self) -> float:
        """Client scaling cap implied by the client transmit-power limit."""
        return math.sqrt(self.p_xmax_w / self.p_x0_w)

    def with_lambda(self, lam: float) -> "SystemParams":
        return replace(self, lam=lam)


@dataclass(frozen=True)
class LayerSpec:
    """Shape of one NN layer's MVM plus its waveform overhead factors."""

    name: str
    m: int            # output length
    n: int            # input length
    p: int            # vectors per inference (convolution windows)
    mprime: int = 6   # row-block size per OFDM symbol
    theta_guard: float = 0.33
    cp_overhead: float = 0.125

    def __post_init__(self):
        if min(self.m, self.n, self.p, self.mprime) < 1:
            raise ValueError("layer dimensions must be >= 1")

    @property
    def q_blocks(self) -> int:
        return math.ceil(self.m / self.mprime)

    @property
    def macs(self) -> int:
        return self.m * self.n * self.p


def lenet_layers(mprime: int = 6, theta_guard: float = 0.33,
                 cp_overhead: float = 0.125) -> list[LayerSpec]:
    """The five linear-layer shapes of the LeNet-style CNN."""
    shapes = [("conv1", 6, 25, 784), ("conv2", 16, 150, 100),
              ("fc1", 120, 400, 1), ("fc2", 84, 120, 1), ("fc3", 10, 84, 1)]
    return [LayerSpec(name, m, n, p, mprime=mprime, theta_guard=theta_guard,
                      cp_overhead=cp_overhead) for name, m, n, p in shapes]


def compute_kappa(sp: SystemParams) -> float:
    """Reference SNR constant linking end-to-end gain to the reference NMSE.

    Powers enter normalized to 1 mW, matching the calibration convention of
    the mixer and noise coefficients.
    """
    noise_mw = sp.kt0_w_per_hz * sp.b_hz / MILLIWATT
    return (sp.rho_mixer * sp.rho_nf * (sp.p_w0_w / MILLIWATT)
            * (sp.p_x0_w / MILLIWATT) / noise_mw)


def required_gain(eps: float, kappa: float) -> float:
    """Minimum end-to-end gain |a*beta| for a root-NMSE target eps."""
    if eps <= 0 or kappa <= 0:
        raise ValueError("eps and kappa must be positive")
    return math.sqrt(1.0 / (kappa * eps * eps))


def clip_gain(g: complex, a_max: float) -> complex:
    """Cap the magnitude of a beamforming gain at a_max, preserving phase."""
    if a_max <= 0:
        raise ValueError("a_max must be positive")
    mag = abs(g)
    if mag <= a_max:
        return g
    return g * (a_max / mag)


def nmse_ref(a: complex, beta: complex, kappa: float) -> float:
    """Reference NMSE of the equalized analog MVM output."""
    denom = kappa * abs(a) ** 2 * abs(beta) ** 2
    if denom == 0:
        raise ZeroDivisionError("nmse_ref undefined for zero gain")
    return 1.0 / denom


def per_mac_energies(beta: complex, layer: LayerSpec,
                     sp: SystemParams) -> tuple[float, float, float]:
    """Client-side (waveform, ADC, decode) energies in J/MAC for one layer."""
    th, cp = layer.theta_guard, layer.cp_overhead
    e1 = ((1 + th) * (1 + cp) / (4.0 * sp.b_hz) / sp.rho_radio
          * sp.p_x0_w * abs(beta) ** 2)
    e2 = (1 + th) / (2.0 * layer.n) * sp.e_adc_j
    e3 = ((1 + th) / (2.0 * layer.n)
          * math.log2((1 + th) * layer.mprime) * sp.e_dig_j)
    return e1, e2, e3


def client_energy_coefficient(layer: LayerSpec, sp: SystemParams) -> float:
    """c coefficient: per-layer client waveform energy is c * |beta|^2 joules."""
    th, cp = layer.theta_guard, layer.cp_overhead
    return ((1 + th) * (1 + cp) / (4.0 * sp.b_hz) / sp.rho_radio
            * layer.macs * sp.p_x0_w)


def tw_schedule(layer: LayerSpec, lfft: int, b_hz: float) -> float:
    """Airtime of the layer's weight waveform from frequency-domain tiling."""
    if layer.m > lfft:
        raise ValueError(f"layer output {layer.m} exceeds FFT length {lfft}")
    n_tile = math.ceil(layer.n / max(1, lfft // layer.m))
    return layer.p * n_tile * (lfft / b_hz)


@dataclass
class EnergyBreakdown:
    """Per-layer/per-client energy figures with MAC-weighted aggregates."""

    e1_per_mac: np.ndarray   # (L, K) J/MAC
    e2_per_mac: np.ndarray   # (L,)   J/MAC
    e3_per_mac: np.ndarray   # (L,)   J/MAC
    e_client: np.ndarray     # (L, K) J per client per layer
    e_bs: np.ndarray         # (L,)   J per layer
    ebar_client: float       # J/MAC over all clients and layers
    ebar_bs: float           # J/MAC
    ebar_e1: float           # waveform-generation part of ebar_client

    @property
    def ebar_fixed(self) -> float:
        """MAC-weighted readout floor (ADC + digital decode)."""
        return self.ebar_client - self.ebar_e1


def aggregate_energy(designs, layers: list[LayerSpec],
                     sp: SystemParams) -> EnergyBreakdown:
    """Total and per-MAC energies for one solved design per layer.

    ``designs[l]`` must expose ``f`` (beamformer) and ``beta`` (K scalings);
    layers with no feasible design may pass beta=0, f=0.
    """
    if len(designs) != len(layers):
        raise ValueError("need one design per layer")
    n_layers = len(layers)
    k = len(np.atleast_1d(designs[0].beta))
    e1 = np.zeros((n_layers, k))
    e2 = np.zeros(n_layers)
    e3 = np.zeros(n_layers)
    e_client = np.zeros((n_layers, k))
    e_bs = np.zeros(n_layers)
    for i, (design, layer) in enumerate(zip(designs, layers)):
        betas = np.atleast_1d(np.asarray(design.beta))
        for j, beta in enumerate(betas):
            a, b, c = per_mac_energies(beta, layer, sp)
            e1[i, j] = a
            e2[i] = b
            e3[i] = c
            e_client[i, j] = layer.macs * (a + b + c)
        t_w = tw_schedule(layer, sp.lfft, sp.b_hz)
        f = np.asarray(design.f)
        e_bs[i] = t_w / sp.eta_bs * sp.p_w0_w * float(np.vdot(f, f).real)
    total_macs = sum(layer.macs for layer in layers)
    ebar_client = e_client.sum() / (k * total_macs)
    ebar_bs = e_bs.sum() / (k * total_macs)
    mac_col = np.array([layer.macs for layer in layers], dtype=float)
    ebar_e1 = (e1 * mac_col[:, None]).sum() / (k * total_macs)
    return EnergyBreakdown(e1, e2, e3, e_client, e_bs,
                           float(ebar_client), float(ebar_bs), float(ebar_e1))


def energy_report_rows(breakdown: EnergyBreakdown) -> list[dict]:
    """Flatten a breakdown into the CSV row schema of the energy report."""
    rows = []
    n_layers, k = breakdown.e1_per_mac.shape
    for i in range(n_layers):
        for j in range(k):
            rows.append({
                "layer": i + 1,
                "client": j + 1,
                "e1_pJ": breakdown.e1_per_mac[i, j] * 1e12,
                "e2_pJ": breakdown.e2_per_mac[i] * 1e12,
                "e3_pJ": breakdown.e3_per_mac[i] * 1e12,
                "E_client_J": breakdown.e_client[i, j],
                "E_bs_J": breakdown.e_bs[i],
                "ebar_client_pJ_per_mac": breakdown.ebar_client * 1e12,
                "ebar_bs_pJ_per_mac": breakdown.ebar_bs * 1e12,
            })
    return rows
