"""MU-MIMO downlink channel generation for the indoor-factory (InF-SH) setup.

Geometry, LoS probability, dual-slope path loss, log-normal shadow fading and
Rician/Rayleigh small-scale fading with UPA steering, per TR 38.901 InF-SH
sparse-clutter parameters.  Every random quantity is drawn from a named
substream spawned off the master seed, so adding clients never perturbs the
draws of existing ones.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GeometryParams:
    """Deployment geometry and large-scale fading constants."""

    d2d_min_m: float = 10.0
    d2d_max_m: float = 15.0
    h_bs_m: float = 8.0
    h_client_m: float = 1.5
    g_bs_dbi: float = 8.0
    g_client_dbi: float = 3.0
    f_w_ghz: float = 2.5
    k_infsh_m: float = 582.6
    rician_k_db: float = 9.0
    sf_sigma_los_db: float = 4.0
    sf_sigma_nlos_db: float = 5.9

    def __post_init__(self):
        if self.d2d_min_m <= 0 or self.d2d_max_m < self.d2d_min_m:
            raise ValueError("d2d range must be positive and ordered")
        if self.h_bs_m <= self.h_client_m:
            raise ValueError("BS must be above the client height")
        if self.k_infsh_m <= 0:
            raise ValueError("k_infsh_m must be positive")

    def at_distance(self, d2d_m: float) -> "GeometryParams":
        """Pin every client to one horizontal distance (tradeoff scenarios)."""
        from dataclasses import replace
        return replace(self, d2d_min_m=d2d_m, d2d_max_m=d2d_m)


@dataclass(frozen=True)
class ClientGeometry:
    d2d_m: float
    d3d_m: float
    phi_rad: float      # azimuth
    theta_rad: float    # elevation, negative when looking down from the BS
    is_los: bool
    sf_db: float


@dataclass(frozen=True)
class ChannelRealization:
    """One Monte-Carlo draw of the K downlink channel vectors."""

    h: np.ndarray                 # (N_t, K) complex, columns are clients
    zeta: np.ndarray              # (K,) linear large-scale power gains
    geoms: tuple[ClientGeometry, ...]
    seed: int

    @property
    def n_t(self) -> int:
        return self.h.shape[0]

    @property
    def k(self) -> int:
        return self.h.shape[1]


def k_infsh_from_clutter(d_clutter_m: float, clutter_ratio: float,
                         h_clutter_m: float, h_bs_m: float,
                         h_client_m: float) -> float:
    """LoS-probability decay constant of the InF-SH scenario."""
    return (-d_clutter_m / math.log(1.0 - clutter_ratio)
            * (h_bs_m - h_client_m) / (h_clutter_m - h_client_m))


def los_probability(d2d_m: float, k_infsh_m: float) -> float:
    return math.exp(-d2d_m / k_infsh_m)


def path_loss_db(d3d_m: float, f_ghz: float, is_los: bool) -> float:
    """Dual-slope InF path loss; the NLoS branch never undercuts LoS."""
    if d3d_m <= 0 or f_ghz <= 0:
        raise ValueError("distance and frequency must be positive")
    pl_los = 31.84 + 21.5 * math.log10(d3d_m) + 19.0 * math.log10(f_ghz)
    if is_los:
        return pl_los
    pl_nlos = 32.4 + 23.0 * math.log10(d3d_m) + 20.0 * math.log10(f_ghz)
    return max(pl_los, pl_nlos)


def large_scale_gain(geom: ClientGeometry, gp: GeometryParams) -> float:
    """Linear power gain zeta after path loss, shadowing and antenna gains."""
    pl0 = path_loss_db(geom.d3d_m, gp.f_w_ghz, geom.is_los)
    return 10.0 ** (-(pl0 + geom.sf_db - gp.g_bs_dbi - gp.g_client_dbi) / 10.0)


def upa_steering(theta_rad: float, phi_rad: float, rows: int,
                 cols: int) -> np.ndarray:
    """Half-wavelength UPA steering vector, flattened row-major.

    The array sits in the vertical plane facing the service area; element
    (p, q) uses the direction cosines (sin theta, cos theta * sin phi).
    """
    p = np.arange(rows)[:, None]
    q = np.arange(cols)[None, :]
    phase = math.pi * (p * math.sin(theta_rad)
                       + q * math.cos(theta_rad) * math.sin(phi_rad))
    return np.exp(1j * phase).reshape(rows * cols)


def upa_shape(n_t: int) -> tuple[int, int]:
    """Most-square factorization of the array size (exact divisors only)."""
    best = None
    for rows in range(1, int(math.isqrt(n_t)) + 1):
        if n_t % rows == 0:
            best = (rows, n_t // rows)
    if best is None:  # n_t >= 1 always factors with rows = 1
        raise ValueError(f"cannot factor array size {n_t}")
    return best


def _as_seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def sample_geometry(seed, k: int, gp: GeometryParams) -> list[ClientGeometry]:
    """Draw placement, LoS state and shadow fading for k clients."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ss = _as_seedseq(seed)
    geom_ss, los_ss, sf_ss = ss.spawn(3)
    geoms = []
    dh = gp.h_bs_m - gp.h_client_m
    for g_child, l_child, s_child in zip(geom_ss.spawn(k), los_ss.spawn(k),
                                         sf_ss.spawn(k)):
        g_rng = np.random.default_rng(g_child)
        d2d = g_rng.uniform(gp.d2d_min_m, gp.d2d_max_m)
        phi = g_rng.uniform(0.0, 2.0 * math.pi)
        is_los = bool(np.random.default_rng(l_child).random()
                      < los_probability(d2d, gp.k_infsh_m))
        sigma = gp.sf_sigma_los_db if is_los else gp.sf_sigma_nlos_db
        sf = float(np.random.default_rng(s_child).normal(0.0, sigma))
        d3d = math.sqrt(d2d ** 2 + dh ** 2)
        theta = math.atan((gp.h_client_m - gp.h_bs_m) / d2d)
        geoms.append(ClientGeometry(d2d, d3d, phi, theta, is_los, sf))
    return geoms


def sample_channels(seed, k: int, n_t: int, gp: GeometryParams,
                    rows: int | None = None,
                    cols: int | None = None) -> ChannelRealization:
    """One reproducible channel realization for k clients on an N_t UPA."""
    if rows is None or cols is None:
        rows, cols = upa_shape(n_t)
    if rows * cols != n_t:
        raise ValueError(f"UPA {rows}x{cols} does not match n_t={n_t}")
    ss = _as_seedseq(seed)
    geom_branch, fade_branch = ss.spawn(2)
    geoms = sample_geometry(geom_branch, k, gp)
    k_lin = 10.0 ** (gp.rician_k_db / 10.0)
    h = np.empty((n_t, k), dtype=complex)
    zeta = np.empty(k)
    for i, (geom, child) in enumerate(zip(geoms, fade_branch.spawn(k))):
        rng = np.random.default_rng(child)
        carrier_phase = rng.uniform(0.0, 2.0 * math.pi)
        scatter = (rng.standard_normal(n_t)
                   + 1j * rng.standard_normal(n_t)) / math.sqrt(2.0)
        if geom.is_los:
            los_part = np.exp(1j * carrier_phase) * upa_steering(
                geom.theta_rad, geom.phi_rad, rows, cols)
            h_small = (math.sqrt(k_lin / (k_lin + 1.0)) * los_part
                       + math.sqrt(1.0 / (k_lin + 1.0)) * scatter)
        else:
            h_small = scatter
        zeta[i] = large_scale_gain(geom, gp)
        h[:, i] = math.sqrt(zeta[i]) * h_small
    seed_val = ss.entropy if isinstance(ss.entropy, int) else 0
    return ChannelRealization(h, zeta, tuple(geoms), seed_val)


def export_channel_csv(path, real: ChannelRealization) -> None:
    """Snapshot format: header (n_t, k, seed), body (k, antenna, re, im, zeta)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_t", "k", "seed"])
        writer.writerow([real.n_t, real.k, real.seed])
        writer.writerow(["client", "antenna", "re", "im", "zeta"])
        for j in range(real.k):
            for a in range(real.n_t):
                z = real.h[a, j]
                writer.writerow([j + 1, a + 1, repr(float(z.real)),
                                 repr(float(z.imag)),
                                 repr(float(real.zeta[j]))])


def import_channel_csv(path) -> ChannelRealization:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["n_t", "k", "seed"]:
            raise ValueError(f"not a channel snapshot: header {header}")
        n_t, k, seed = (int(v) for v in next(reader))
        next(reader)  # column names
        h = np.zeros((n_t, k), dtype=complex)
        zeta = np.zeros(k)
        for row in reader:
            j, a = int(row[0]) - 1, int(row[1]) - 1
            h[a, j] = complex(float(row[2]), float(row[3]))
            zeta[j] = float(row[4])
    return ChannelRealization(h, zeta, tuple(), seed)
