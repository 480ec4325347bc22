"""Waveform-level emulation of subcarrier-mapped analog matrix-vector multiply.

Inputs and weights are loaded onto interleaved OFDM subcarriers so that the
pointwise product taken by a passive mixer lands every (weight, input) pair
on its own difference-band bin.  The emulator works on the complex baseband
at Lfft samples per useful symbol; real-passband behaviour is exercised only
by ``mixer_emulate`` (Eq.-level unit model of the two operating regions).

Weight entries are loaded conjugated: mixing two real passband waveforms
places (1/2) * conj(LO) * RF in the difference band, so broadcasting conj(W)
makes the decoded band carry W @ x with an analytically known gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .phymetrics import SystemParams

FIRST_ZONE_LIMITER_GAIN = 4.0 / math.pi  # fundamental of a hard limiter


class MapOverflowError(ValueError):
    """Subcarrier map does not fit inside the FFT grid."""


@dataclass(frozen=True)
class SubcarrierMap:
    """Integer subcarrier assignment for one (input, weight) symbol pair."""

    n_in: int          # N, input length
    m_out: int         # M', useful outputs per symbol
    m_band: int        # padded band width including guard
    nu0: int           # reference subcarrier of the first input tone
    lfft: int
    nu_x: np.ndarray   # (N,) input tone indices
    nu_w: np.ndarray   # (M', N) weight tone indices


def build_subcarrier_maps(n: int, mprime: int, theta_guard: float,
                          nu0: int, lfft: int) -> SubcarrierMap:
    """Lay out input and weight tones with a guard margin of theta_guard.

    The band width is ceil((1 + theta_guard) * mprime) so the guard property
    survives non-integer products.
    """
    if n < 1 or mprime < 1:
        raise ValueError("n and mprime must be >= 1")
    if theta_guard < 0:
        raise ValueError("theta_guard must be non-negative")
    if nu0 <= mprime:
        raise ValueError(f"nu0 must exceed mprime (got nu0={nu0}, mprime={mprime})")
    m_band = math.ceil((1.0 + theta_guard) * mprime)
    if n * m_band + nu0 > lfft // 2:
        raise MapOverflowError(
            f"map needs {n * m_band + nu0} bins, only {lfft // 2} available")
    nu_x = nu0 + m_band * np.arange(n)
    nu_w = nu_x[None, :] - np.arange(1, mprime + 1)[:, None]
    return SubcarrierMap(n, mprime, m_band, nu0, lfft, nu_x, nu_w)


def map_cross_products_clear(smap: SubcarrierMap) -> bool:
    """Check that no cross-block mixing product lands in bins 1..M'.

    A weight tone nu_w(m, n) mixed with a foreign input tone nu_x(n') lands
    on difference bin (nu_x(n') - nu_w(m, n)) mod Lfft; the map is clean when
    none of these fall into the useful band.
    """
    for n_prime in range(smap.n_in):
        diff = (smap.nu_x[n_prime] - smap.nu_w) % smap.lfft   # (M', N)
        diff[:, n_prime] = 0  # same-block products are the wanted ones
        if np.any((diff >= 1) & (diff <= smap.m_out)):
            return False
    return True


@dataclass(frozen=True)
class OfdmSymbol:
    """One OFDM symbol: loaded spectrum, useful-time samples, cyclic prefix."""

    freq: np.ndarray     # (Lfft,) DFT coefficients
    time: np.ndarray     # (Lfft,) useful part, time[t] = sum freq[v] e^{j2pi v t/L}
    cp: np.ndarray       # tail copy of the useful part
    sample_rate: float

    @property
    def with_cp(self) -> np.ndarray:
        return np.concatenate([self.cp, self.time])


def _symbol_from_freq(freq: np.ndarray, cp_overhead: float,
                      sample_rate: float) -> OfdmSymbol:
    time = np.fft.ifft(freq) * len(freq)
    n_cp = int(round(cp_overhead * len(freq)))
    cp = time[len(time) - n_cp:] if n_cp else time[:0]
    return OfdmSymbol(freq, time, cp, sample_rate)


def encode_symbol(values, smap: SubcarrierMap, role: str,
                  normalization: float = 1.0, cp_overhead: float = 0.0,
                  sample_rate: float = 25e6) -> OfdmSymbol:
    """Load input entries (role='input') or a weight block (role='weight').

    Weight entries are stored conjugated (see module docstring); all bins
    outside the map stay zero.
    """
    values = np.asarray(values)
    freq = np.zeros(smap.lfft, dtype=complex)
    if role == "input":
        if values.shape != (smap.n_in,):
            raise ValueError(f"input must have shape ({smap.n_in},), got {values.shape}")
        freq[smap.nu_x] = values * normalization
    elif role == "weight":
        if values.shape != (smap.m_out, smap.n_in):
            raise ValueError(
                f"weight block must have shape ({smap.m_out}, {smap.n_in}), "
                f"got {values.shape}")
        freq[smap.nu_w] = np.conj(values) * normalization
    else:
        raise ValueError(f"role must be 'input' or 'weight', got {role!r}")
    return _symbol_from_freq(freq, cp_overhead, sample_rate)


@dataclass(frozen=True)
class MixerMode:
    """Behavioral operating point of the passive mixer."""

    variant: str                 # 'small_signal' or 'lo_saturated'
    rho_mixer: float = 0.2512
    v_lo_sat: float = 1.0

    def __post_init__(self):
        if self.variant not in ("small_signal", "lo_saturated"):
            raise ValueError(f"unknown mixer variant {self.variant!r}")
        if self.rho_mixer <= 0 or self.v_lo_sat <= 0:
            raise ValueError("rho_mixer and v_lo_sat must be positive")


def mixer_emulate(lo, rf, mode: MixerMode) -> np.ndarray:
    """Sample-level mixer output for real LO / RF drive waveforms.

    Small-signal region multiplies the ports; the LO-saturated region hard
    limits the LO path to +-v_lo_sat.
    """
    lo = np.asarray(lo, dtype=float)
    rf = np.asarray(rf, dtype=float)
    if lo.shape != rf.shape:
        raise ValueError(f"length mismatch: lo {lo.shape} vs rf {rf.shape}")
    if mode.variant == "small_signal":
        return mode.rho_mixer * lo * rf
    return mode.rho_mixer * mode.v_lo_sat * rf * np.sign(lo)


def decode_if(if_symbol: OfdmSymbol, smap: SubcarrierMap,
              known_gain: complex) -> np.ndarray:
    """Equalized useful band: FFT bins 1..M' of the IF symbol over known_gain."""
    if known_gain == 0:
        raise ZeroDivisionError("known_gain must be nonzero")
    spectrum = np.fft.fft(if_symbol.time) / len(if_symbol.time)
    return spectrum[1:smap.m_out + 1] / known_gain


def _mix_baseband(lo: OfdmSymbol, rf: OfdmSymbol, mode: MixerMode,
                  sample_rate: float) -> tuple[OfdmSymbol, complex]:
    """Difference-band IF baseband and its analytic conversion gain.

    Small signal: (1/2) rho conj(lo) * rf.  LO-saturated: the limiter keeps
    only the LO phase; its fundamental carries (4/pi) v_sat, and the decode
    gain uses the describing-function normalization at the LO RMS envelope.
    """
    if mode.variant == "small_signal":
        if_time = 0.5 * mode.rho_mixer * np.conj(lo.time) * rf.time
        gain = 0.5 * mode.rho_mixer
    else:
        env = np.abs(lo.time)
        rms = math.sqrt(float(np.mean(env ** 2)))
        safe = np.where(env > 0, env, 1.0)
        phase_only = np.conj(lo.time) / safe
        if_time = (0.5 * mode.rho_mixer * mode.v_lo_sat
                   * FIRST_ZONE_LIMITER_GAIN * phase_only * rf.time)
        gain = (0.5 * mode.rho_mixer * mode.v_lo_sat
                * FIRST_ZONE_LIMITER_GAIN / rms)
    freq = np.fft.fft(if_time) / len(if_time)
    return OfdmSymbol(freq, if_time, if_time[:0], sample_rate), gain


def analog_mvm_oracle(w, x, mprime: int, sp: SystemParams, mode: MixerMode,
                      theta_guard: float = 0.33,
                      nu0: int | None = None) -> np.ndarray:
    """Emulate W @ x through the subcarrier-mapped mixer, block by block.

    Rows are processed in ceil(M / mprime) blocks, the last zero-padded; an
    input dimension too wide for the half spectrum is tiled over several
    symbols whose partial products sum.  In the small-signal region the
    decoded stack equals W @ x up to numerical error of the FFTs.
    """
    w = np.asarray(w, dtype=complex)
    x = np.asarray(x, dtype=complex)
    if w.ndim != 2 or x.shape != (w.shape[1],):
        raise ValueError(f"shape mismatch: W {w.shape} against x {x.shape}")
    m, n = w.shape
    if nu0 is None:
        nu0 = mprime + 3  # smallest index with margin
    m_band = math.ceil((1.0 + theta_guard) * mprime)
    n_fit = (sp.lfft // 2 - nu0) // m_band
    if n_fit < 1:
        raise MapOverflowError(f"no room for any input tone above nu0={nu0}")
    q = math.ceil(m / mprime)
    padded = np.zeros((q * mprime, n), dtype=complex)
    padded[:m] = w
    out = np.zeros(q * mprime, dtype=complex)
    for lo_col in range(0, n, n_fit):
        cols = slice(lo_col, min(lo_col + n_fit, n))
        n_chunk = cols.stop - cols.start
        smap = build_subcarrier_maps(n_chunk, mprime, theta_guard, nu0,
                                     sp.lfft)
        rf = encode_symbol(x[cols], smap, "input", sample_rate=sp.b_hz)
        for b in range(q):
            block = padded[b * mprime:(b + 1) * mprime, cols]
            lo = encode_symbol(block, smap, "weight", sample_rate=sp.b_hz)
            if_symbol, gain = _mix_baseband(lo, rf, mode, sp.b_hz)
            out[b * mprime:(b + 1) * mprime] += decode_if(if_symbol, smap,
                                                          gain)
    return out[:m]


def write_complex_matrix(path, mat) -> None:
    """Golden-vector format: one row per line, 're,im' pairs ';'-separated."""
    mat = np.atleast_2d(np.asarray(mat, dtype=complex))
    with open(path, "w") as fh:
        for row in mat:
            fh.write(";".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row) + "\n")


def read_complex_matrix(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entries = []
            for cell in line.split(";"):
                re_s, im_s = cell.split(",")
                entries.append(complex(float(re_s), float(im_s)))
            rows.append(entries)
    return np.array(rows, dtype=complex)
