"""Config-driven experiment runner for channel / solver / inference sweeps.

Configs are flat ``key = value`` pairs under ``[section]`` headers, with
units spelled out in the key names (p_wmax_dbm, b_mhz, ...).  Every output
row carries the config hash and the master seed, and identical
(config, seed) pairs re-produce byte-identical CSV files.  Wall-clock
measurements of the runtime sweep are the one inherently unrepeatable
quantity; they go to a separate ``*_timing.csv`` sidecar excluded from the
byte-identity contract.

Sweep cells are independent; a failed or infeasible cell is flagged in its
rows and never aborts the remaining cells.  ``ANALOGRF_WORKERS`` sets the
process-pool width (default 1, serial).
"""

from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cnn, dataio, precision, solver
from .channel import GeometryParams, sample_channels
from .phymetrics import (SystemParams, aggregate_energy, dbm_to_watts,
                         lenet_layers)

DEFAULT_CONFIG_TEXT = """\
[system]
b_mhz = 25.0
f_w_ghz = 2.5
p_w0_dbm = 0.0
p_x0_dbm = 0.0
p_wmax_dbm = 48.0
p_xmax_dbm = 23.0
p_lo_th_dbm = -3.0
rho_mixer = 0.2512
rho_nf = 0.2512
rho_radio = 0.30
eta_bs = 0.5
kt0_dbm_per_hz = -174.0
e_adc_pj = 1.0
e_dig_pj = 1.0
e_digital_pj = 3.0
lfft = 4096
mprime = 6
theta_guard = 0.33
cp_overhead = 0.125

[geometry]
d2d_min_m = 10.0
d2d_max_m = 15.0
h_bs_m = 8.0
h_client_m = 1.5
g_bs_dbi = 8.0
g_client_dbi = 3.0
rician_k_db = 9.0
k_infsh_m = 582.6
sf_sigma_los_db = 4.0
sf_sigma_nlos_db = 5.9

[data]
data_dir = artifacts/data
weights_path = artifacts/lenet-weights.bin
data_seed = 0

[experiment]
kind = energy_accuracy
k = 10
n_t = 256
i_max = 30
n_seeds = 3
eps = 0.1
lambda = 0.0
eps_grid_min = 0.05
eps_grid_max = 2.0
eps_grid_points = 12
lambda_grid_min = 0.002
lambda_grid_max = 0.9
lambda_grid_points = 10
tradeoff_eps = 0.12
tradeoff_distances_m = 10,100
runtime_nt_grid = 64,128,256,512,1024
runtime_reps = 5
runtime_i_max = 5
convergence_k_grid = 4,10
convergence_lambda_grid = 0.0,0.5
eval_images = 1500
eval_trials = 2
mixed_k = 6
eps_sh_min = 0.06
eps_sh_max = 0.95
eps_sh_points = 18
gamma_min = 0.25
adam_steps = 200
adam_batch = 128
adam_eta = 0.05
"""

EXPERIMENT_KINDS = ("convergence", "runtime", "energy_accuracy", "tradeoff",
                    "mixed_precision")


def parse_config(text: str) -> dict:
    cfg: dict[str, dict] = {}
    section = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            cfg.setdefault(section, {})
            continue
        if "=" not in line or section is None:
            raise ValueError(f"bad config line: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        cfg[section][key] = value
    return cfg


def default_config() -> dict:
    return parse_config(DEFAULT_CONFIG_TEXT)


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = default_config()
    if path is not None:
        for section, entries in parse_config(Path(path).read_text()).items():
            cfg.setdefault(section, {}).update(entries)
    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        cfg.setdefault(section, {})[key] = str(value)
    return cfg


def render_config(cfg: dict) -> str:
    chunks = []
    for section in sorted(cfg):
        chunks.append(f"[{section}]")
        for key in sorted(cfg[section]):
            chunks.append(f"{key} = {cfg[section][key]}")
        chunks.append("")
    return "\n".join(chunks)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(render_config(cfg).encode()).hexdigest()[:12]


def _get_list(cfg, section, key, cast=float):
    return [cast(v) for v in str(cfg[section][key]).split(",") if v.strip()]


def build_system_params(cfg: dict, lam: float = 0.0) -> SystemParams:
    s = cfg["system"]
    return SystemParams(
        b_hz=float(s["b_mhz"]) * 1e6,
        f_w_ghz=float(s["f_w_ghz"]),
        p_w0_w=dbm_to_watts(float(s["p_w0_dbm"])),
        p_x0_w=dbm_to_watts(float(s["p_x0_dbm"])),
        p_wmax_w=dbm_to_watts(float(s["p_wmax_dbm"])),
        p_xmax_w=dbm_to_watts(float(s["p_xmax_dbm"])),
        p_lo_th_w=dbm_to_watts(float(s["p_lo_th_dbm"])),
        rho_mixer=float(s["rho_mixer"]),
        rho_nf=float(s["rho_nf"]),
        rho_radio=float(s["rho_radio"]),
        eta_bs=float(s["eta_bs"]),
        kt0_w_per_hz=dbm_to_watts(float(s["kt0_dbm_per_hz"])),
        e_adc_j=float(s["e_adc_pj"]) * 1e-12,
        e_dig_j=float(s["e_dig_pj"]) * 1e-12,
        e_digital_j=float(s["e_digital_pj"]) * 1e-12,
        lfft=int(s["lfft"]),
        lam=lam,
    )


def build_geometry(cfg: dict) -> GeometryParams:
    g = cfg["geometry"]
    return GeometryParams(
        d2d_min_m=float(g["d2d_min_m"]), d2d_max_m=float(g["d2d_max_m"]),
        h_bs_m=float(g["h_bs_m"]), h_client_m=float(g["h_client_m"]),
        g_bs_dbi=float(g["g_bs_dbi"]), g_client_dbi=float(g["g_client_dbi"]),
        f_w_ghz=float(cfg["system"]["f_w_ghz"]),
        k_infsh_m=float(g["k_infsh_m"]),
        rician_k_db=float(g["rician_k_db"]),
        sf_sigma_los_db=float(g["sf_sigma_los_db"]),
        sf_sigma_nlos_db=float(g["sf_sigma_nlos_db"]),
    )


def build_layers(cfg: dict) -> list:
    s = cfg["system"]
    return lenet_layers(mprime=int(s["mprime"]),
                        theta_guard=float(s["theta_guard"]),
                        cp_overhead=float(s["cp_overhead"]))


def get_model_and_data(cfg: dict):
    """Dataset (synthesized on first use) plus the trained-or-loaded model."""
    data_dir = Path(cfg["data"]["data_dir"])
    weights_path = Path(cfg["data"]["weights_path"])
    weights_path.parent.mkdir(parents=True, exist_ok=True)
    data_seed = int(cfg["data"]["data_seed"])
    dataset = dataio.ensure_dataset(data_dir, seed=data_seed)
    model = cnn.train_or_load(dataset, cnn.TrainConfig(),
                              np.random.default_rng(data_seed + 1),
                              weights_path=weights_path)
    stats = cnn.calibrate_sref(model, dataset["calib_images"])
    return dataset, model, stats


@dataclass
class RunRecord:
    experiment: str
    columns: list[str]
    rows: list[list]
    config_hash: str
    seed: int
    sidecars: dict = None  # name -> (columns, rows); excluded from byte identity

    def as_csv(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, (np.floating, np.integer)):
        return repr(value.item())
    return str(value)


def write_record(out_dir, record: RunRecord) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    main = out_dir / f"{record.experiment}.csv"
    main.write_text(record.as_csv())
    for name, (columns, rows) in (record.sidecars or {}).items():
        side = out_dir / f"{record.experiment}_{name}.csv"
        text = ",".join(columns) + "\n"
        text += "\n".join(",".join(_fmt(v) for v in row) for row in rows)
        side.write_text(text + "\n")
    return main


def _scaled_count(n: int, scale: float, minimum: int = 2) -> int:
    return max(minimum, int(round(n * scale)))


def _seed_list(master_seed: int, n: int) -> list[int]:
    return [master_seed + i for i in range(n)]


def _pool_map(fn, cells):
    workers = int(os.environ.get("ANALOGRF_WORKERS", "1"))
    if workers <= 1 or len(cells) <= 1:
        return [fn(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


def eps_grid_with_anchor(lo: float, hi: float, n: int,
                         anchor: float = 0.1) -> list[float]:
    """Log-spaced grid that always contains the anchor target exactly."""
    grid = np.geomspace(lo, hi, n)
    grid[np.argmin(np.abs(grid - anchor))] = anchor
    return [float(v) for v in grid]


# ---------------------------------------------------------------- experiments

def run_convergence(cfg: dict, seed: int, scale: float = 1.0) -> RunRecord:
    """Per-iteration objective of reduced vs full solves from identical inits."""
    chash = config_hash(cfg)
    gp = build_geometry(cfg)
    layers = build_layers(cfg)
    n_t = int(cfg["experiment"]["n_t"])
    i_max = int(cfg["experiment"]["i_max"])
    eps = float(cfg["experiment"]["eps"])
    k_grid = _get_list(cfg, "experiment", "convergence_k_grid", int)
    lam_grid = _get_list(cfg, "experiment", "convergence_lambda_grid", float)
    rows = []
    for k in k_grid:
        for lam in lam_grid:
            sp = build_system_params(cfg, lam)
            real = sample_channels(np.random.SeedSequence([seed, k]), k, n_t, gp)
            status = "ok"
            try:
                reduced = solver.solve_layer(real.h, eps, layers[0], sp,
                                             lam=lam, i_max=i_max,
                                             sca_rel_tol=0.0)
                full = solver.solve_layer(real.h, eps, layers[0], sp, lam=lam,
                                          i_max=i_max, reduce=False,
                                          sca_rel_tol=0.0)
                traces = {"reduced": reduced.objective_trace,
                          "full": full.objective_trace}
            except solver.InfeasibleError:
                status, traces = "infeasible", {}
            except Exception:
                status, traces = "error", {}
            if status != "ok":
                rows.append([chash, seed, k, lam, "-", -1, 0.0, status])
                continue
            for mode, trace in traces.items():
                for it, value in enumerate(trace):
                    rows.append([chash, seed, k, lam, mode, it, value, "ok"])
    return RunRecord("convergence",
                     ["config_hash", "seed", "k", "lambda", "mode",
                      "iteration", "objective", "status"],
                     rows, chash, seed)


def run_runtime(cfg: dict, seed: int, scale: float = 1.0) -> RunRecord:
    """Median wall-clock of reduced vs full solves across the antenna grid."""
    chash = config_hash(cfg)
    gp = build_geometry(cfg)
    layers = build_layers(cfg)
    k = int(cfg["experiment"]["k"])
    eps = float(cfg["experiment"]["eps"])
    lam = float(cfg["experiment"]["lambda"])
    sp = build_system_params(cfg, lam)
    i_max = int(cfg["experiment"]["runtime_i_max"])
    reps = max(5, int(round(int(cfg["experiment"]["runtime_reps"]) * scale)))
    nt_grid = _get_list(cfg, "experiment", "runtime_nt_grid", int)
    if scale < 1.0 and len(nt_grid) > 3:
        nt_grid = [nt_grid[0], nt_grid[len(nt_grid) // 2], nt_grid[-1]]
    rows, timing_rows = [], []
    for n_t in nt_grid:
        # one independent channel instance per repetition; the median damps
        # instance-to-instance variation in inner iteration counts
        reals = [sample_channels(np.random.SeedSequence([seed, n_t, rep]),
                                 k, n_t, gp) for rep in range(reps)]
        for mode, reduce in (("reduced", True), ("full", False)):
            elapsed = []
            iterations = []
            for real in reals:
                t0 = time.perf_counter()
                design = solver.solve_layer(real.h, eps, layers[0], sp,
                                            lam=lam, i_max=i_max,
                                            reduce=reduce, sca_rel_tol=0.0)
                elapsed.append(time.perf_counter() - t0)
                iterations.append(design.iterations)
            rows.append([chash, seed, n_t, mode,
                         int(np.median(iterations)), reps])
            timing_rows.append([n_t, mode, float(np.median(elapsed))])
    return RunRecord("runtime",
                     ["config_hash", "seed", "n_t", "mode", "iterations",
                      "reps"],
                     rows, chash, seed,
                     sidecars={"timing": (["n_t", "mode", "median_seconds"],
                                          timing_rows)})


def _solve_net(real, eps_per_layer, layers, cfg, lam: float):
    """Feasible designs for all layers under one channel realization."""
    sp = build_system_params(cfg, lam)
    designs = []
    for eps_l, layer in zip(eps_per_layer, layers):
        designs.append(solver.solve_layer(real.h, eps_l, layer, sp,
                                          lam=lam,
                                          i_max=int(cfg["experiment"]["i_max"])))
    return designs, sp


def run_energy_accuracy(cfg: dict, seed: int, scale: float = 1.0,
                        model_bundle=None) -> RunRecord:
    """Client energy and inference quality across a shared root-NMSE sweep."""
    chash = config_hash(cfg)
    gp = build_geometry(cfg)
    layers = build_layers(cfg)
    exp = cfg["experiment"]
    k = int(exp["k"])
    n_t = int(exp["n_t"])
    if model_bundle is None:
        model_bundle = get_model_and_data(cfg)
    dataset, model, stats = model_bundle
    n_points = _scaled_count(int(exp["eps_grid_points"]), scale, minimum=4)
    grid = eps_grid_with_anchor(float(exp["eps_grid_min"]),
                                float(exp["eps_grid_max"]), n_points)
    n_seeds = _scaled_count(int(exp["n_seeds"]), scale, minimum=1)
    n_eval = _scaled_count(int(exp["eval_images"]), scale, minimum=300)
    trials = int(exp["eval_trials"])
    e_digital_pj = float(cfg["system"]["e_digital_pj"])
    rows = []
    for cell_seed in _seed_list(seed, n_seeds):
        real = sample_channels(np.random.SeedSequence([cell_seed, 0xCE11]),
                               k, n_t, gp)
        pick = np.random.default_rng(
            np.random.SeedSequence([cell_seed, 0xE7A1])).choice(
            len(dataset["eval_images"]), size=min(n_eval, len(dataset["eval_images"])),
            replace=False)
        images = dataset["eval_images"][pick]
        labels = dataset["eval_labels"][pick]
        clean_acc, _ = cnn.evaluate(model, images, labels, None, None)
        for i, eps in enumerate(grid):
            status = "ok"
            ebar1 = ebar_c = ebar_bs = acc = ce = float("nan")
            try:
                designs, sp = _solve_net(real, [eps] * len(layers), layers,
                                         cfg, lam=0.0)
                breakdown = aggregate_energy(designs, layers, sp)
                ebar1 = breakdown.ebar_e1 * 1e12
                ebar_c = breakdown.ebar_client * 1e12
                ebar_bs = breakdown.ebar_bs * 1e12
                rng = np.random.default_rng(
                    np.random.SeedSequence([cell_seed, 0x401, i]))
                acc, ce = cnn.evaluate(model, images, labels,
                                       np.full(len(layers), eps), stats,
                                       trials=trials, rng=rng)
            except solver.InfeasibleError:
                status = "infeasible"
            except Exception:
                status = "error"
            rows.append([chash, cell_seed, eps, status, ebar1, ebar_c,
                         ebar_bs, acc, ce, clean_acc, e_digital_pj])
    return RunRecord("energy_accuracy",
                     ["config_hash", "seed", "eps", "status",
                      "ebar1_pj_per_mac", "ebar_client_pj_per_mac",
                      "ebar_bs_pj_per_mac", "accuracy", "cross_entropy",
                      "clean_accuracy", "e_digital_pj_per_mac"],
                     rows, chash, seed)


def _tradeoff_cell(payload) -> list[list]:
    """One (distance, seed) worker cell of the tradeoff sweep.

    Channel randomness is keyed by the seed only, so the two distance
    scenarios see paired fading draws.
    """
    cfg, chash, cell_seed, d2d, lam_grid, eps = payload
    layers = build_layers(cfg)
    exp = cfg["experiment"]
    gp = build_geometry(cfg).at_distance(d2d)
    real = sample_channels(np.random.SeedSequence([cell_seed, 0xD157]),
                           int(exp["k"]), int(exp["n_t"]), gp)
    rows = []
    for lam in lam_grid:
        status = "ok"
        ebar_bs = ebar_c = float("nan")
        try:
            designs, sp = _solve_net(real, [eps] * len(layers), layers, cfg,
                                     lam=float(lam))
            breakdown = aggregate_energy(designs, layers, sp)
            ebar_bs = breakdown.ebar_bs * 1e12
            ebar_c = breakdown.ebar_client * 1e12
        except solver.InfeasibleError:
            status = "infeasible"
        except Exception:
            status = "error"
        rows.append([chash, cell_seed, d2d, float(lam), status, ebar_bs,
                     ebar_c])
    return rows


def run_tradeoff(cfg: dict, seed: int, scale: float = 1.0) -> RunRecord:
    """BS-vs-client energy frontier at two fixed client distances."""
    chash = config_hash(cfg)
    exp = cfg["experiment"]
    eps = float(exp["tradeoff_eps"])
    distances = _get_list(cfg, "experiment", "tradeoff_distances_m", float)
    n_lam = _scaled_count(int(exp["lambda_grid_points"]), scale, minimum=4)
    lam_grid = [float(v) for v in np.geomspace(float(exp["lambda_grid_min"]),
                                               float(exp["lambda_grid_max"]),
                                               n_lam)]
    n_seeds = _scaled_count(int(exp["n_seeds"]), scale, minimum=1)
    cells = [(cfg, chash, cell_seed, d2d, lam_grid, eps)
             for d2d in distances for cell_seed in _seed_list(seed, n_seeds)]
    rows = [row for cell_rows in _pool_map(_tradeoff_cell, cells)
            for row in cell_rows]
    return RunRecord("tradeoff",
                     ["config_hash", "seed", "d2d_m", "lambda", "status",
                      "ebar_bs_pj_per_mac", "ebar_client_pj_per_mac"],
                     rows, chash, seed)


def run_mixed_precision(cfg: dict, seed: int, scale: float = 1.0,
                        model_bundle=None) -> RunRecord:
    """Uniform vs optimized mixed profiles under matched budgets, paired
    over channel draws and noise seeds."""
    chash = config_hash(cfg)
    gp = build_geometry(cfg)
    layers = build_layers(cfg)
    exp = cfg["experiment"]
    k = int(exp["mixed_k"])
    n_t = int(exp["n_t"])
    sp0 = build_system_params(cfg, 0.0)
    if model_bundle is None:
        model_bundle = get_model_and_data(cfg)
    dataset, model, stats = model_bundle
    omega = precision.omega_weights(layers, k, sp0)
    eps_sh_grid = np.geomspace(float(exp["eps_sh_min"]),
                               float(exp["eps_sh_max"]),
                               int(exp["eps_sh_points"]))
    n_seeds = _scaled_count(int(exp["n_seeds"]), scale, minimum=1)
    n_eval = _scaled_count(int(exp["eval_images"]), scale, minimum=300)
    hyper = precision.AdamConfig(steps=int(exp["adam_steps"]),
                                 batch=int(exp["adam_batch"]),
                                 eta=float(exp["adam_eta"]))
    calib = (dataset["calib_images"], dataset["calib_labels"])
    rows = []
    for b_idx, eps_sh in enumerate(eps_sh_grid):
        gamma0 = precision.budget_from_uniform(float(eps_sh), layers, k, sp0)
        budget = precision.BudgetSpec(gamma0, omega,
                                      gamma_min=float(exp["gamma_min"]))
        result = precision.optimize_mixed_precision(
            model, calib, budget, hyper,
            np.random.default_rng(np.random.SeedSequence([seed, 0xADA, b_idx])),
            stats=stats)
        budget_dev = float(np.max(np.abs(np.array(result.budget_trace)
                                         - gamma0)) / gamma0)
        profiles = {"uniform": precision.PrecisionProfile.uniform(
                        float(eps_sh), len(layers)),
                    "mixed": result.profile}
        for cell_seed in _seed_list(seed, n_seeds):
            real = sample_channels(
                np.random.SeedSequence([cell_seed, 0xC4A, b_idx]), k, n_t, gp)
            pick = np.random.default_rng(
                np.random.SeedSequence([cell_seed, 0xE7A1, b_idx])).choice(
                len(dataset["eval_images"]),
                size=min(n_eval, len(dataset["eval_images"])), replace=False)
            images = dataset["eval_images"][pick]
            labels = dataset["eval_labels"][pick]
            for mode, profile in profiles.items():
                status = "ok"
                ebar1 = acc = ce = float("nan")
                try:
                    designs, sp = _solve_net(real, list(profile.eps), layers,
                                             cfg, lam=0.0)
                    breakdown = aggregate_energy(designs, layers, sp)
                    ebar1 = breakdown.ebar_e1 * 1e12
                    noise_rng = np.random.default_rng(
                        np.random.SeedSequence([cell_seed, 0x907, b_idx]))
                    acc, ce = cnn.evaluate(model, images, labels, profile.eps,
                                           stats, trials=int(exp["eval_trials"]),
                                           rng=noise_rng)
                except solver.InfeasibleError:
                    status = "infeasible"
                except Exception:
                    status = "error"
                rows.append([chash, cell_seed, b_idx, float(eps_sh), gamma0,
                             mode, status, ebar1, acc, ce, budget_dev])
    return RunRecord("mixed_precision",
                     ["config_hash", "seed", "budget_index", "eps_sh",
                      "gamma0", "mode", "status", "ebar1_pj_per_mac",
                      "accuracy", "cross_entropy", "budget_max_rel_dev"],
                     rows, chash, seed)


RUNNERS = {
    "convergence": run_convergence,
    "runtime": run_runtime,
    "energy_accuracy": run_energy_accuracy,
    "tradeoff": run_tradeoff,
    "mixed_precision": run_mixed_precision,
}


def run_sweep(kind: str, cfg: dict, seed: int, out_dir,
              scale: float = 1.0) -> tuple[RunRecord, int]:
    """Run one experiment kind; exit status 0 ok, 2 infeasible-only cells."""
    if kind not in RUNNERS:
        raise ValueError(f"unknown experiment kind {kind!r}; "
                         f"choose from {EXPERIMENT_KINDS}")
    record = RUNNERS[kind](cfg, seed, scale)
    write_record(out_dir, record)
    statuses = {row[record.columns.index("status")]
                for row in record.rows} if "status" in record.columns else {"ok"}
    if "error" in statuses:
        return record, 1
    if "infeasible" in statuses:
        return record, 2
    return record, 0
