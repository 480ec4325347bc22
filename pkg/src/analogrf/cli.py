"""Command-line entry points.

Subcommands: channel, solve-layer, solve-net, infer, mixed, sweep <kind>.
Common flags: --config <path>, --seed <int>, --out <dir>, --scale <float>.
Exit codes: 0 success, 2 when the only failures were infeasible cells,
1 on error.  ANALOGRF_WORKERS controls the sweep worker pool.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import cnn, harness, precision, solver
from .channel import export_channel_csv, import_channel_csv, sample_channels
from .phymetrics import aggregate_energy, energy_report_rows


def _common(parser):
    parser.add_argument("--config", default=None, help="config file path")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--scale", type=float, default=1.0,
                        help="desk-scale factor shrinking grids and seeds")
    parser.add_argument("--set", action="append", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="override one config entry")


def _load_cfg(args):
    overrides = {}
    for item in args.set:
        dotted, value = item.split("=", 1)
        overrides[dotted.strip()] = value.strip()
    return harness.load_config(args.config, overrides)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_channel(args) -> int:
    cfg = _load_cfg(args)
    gp = harness.build_geometry(cfg)
    k = int(cfg["experiment"]["k"])
    n_t = int(cfg["experiment"]["n_t"])
    real = sample_channels(args.seed, k, n_t, gp)
    path = _outdir(args) / "channels.csv"
    export_channel_csv(path, real)
    print(f"wrote {path} ({n_t}x{k}, seed {args.seed})")
    return 0


def cmd_solve_layer(args) -> int:
    cfg = _load_cfg(args)
    layers = harness.build_layers(cfg)
    layer = layers[args.layer - 1]
    sp = harness.build_system_params(cfg, args.lam)
    real = import_channel_csv(args.channel_csv)
    try:
        design = solver.solve_layer(real.h, args.eps, layer, sp, lam=args.lam,
                                    i_max=int(cfg["experiment"]["i_max"]))
    except solver.InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    path = _outdir(args) / f"design_layer{args.layer}.txt"
    solver.export_design(path, design)
    print(f"wrote {path}; objective {design.objective_trace[-1]!r} "
          f"after {design.iterations} iterations")
    return 0


def cmd_solve_net(args) -> int:
    cfg = _load_cfg(args)
    gp = harness.build_geometry(cfg)
    layers = harness.build_layers(cfg)
    sp = harness.build_system_params(cfg, args.lam)
    k = int(cfg["experiment"]["k"])
    n_t = int(cfg["experiment"]["n_t"])
    real = sample_channels(args.seed, k, n_t, gp)
    out = _outdir(args)
    designs = []
    infeasible = False
    for i, layer in enumerate(layers, start=1):
        try:
            design = solver.solve_layer(real.h, args.eps, layer, sp,
                                        lam=args.lam,
                                        i_max=int(cfg["experiment"]["i_max"]))
        except solver.InfeasibleError as exc:
            print(f"layer {i} infeasible: {exc}", file=sys.stderr)
            infeasible = True
            design = solver.PhyDesign(
                f=np.zeros(n_t, dtype=complex), beta=np.zeros(k, dtype=complex),
                b=np.zeros(0), objective_trace=[float("nan")],
                feasible=False, iterations=0)
        designs.append(design)
        solver.export_design(out / f"design_layer{i}.txt", design)
    breakdown = aggregate_energy(designs, layers, sp)
    report = out / "energy_report.csv"
    rows = energy_report_rows(breakdown)
    with open(report, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {report}; ebar_client "
          f"{breakdown.ebar_client * 1e12:.4f} pJ/MAC, ebar_bs "
          f"{breakdown.ebar_bs * 1e12:.4f} pJ/MAC")
    return 2 if infeasible else 0


def cmd_infer(args) -> int:
    cfg = _load_cfg(args)
    dataset, model, stats = harness.get_model_and_data(cfg)
    eps = np.full(5, args.eps)
    out_rows = []
    for trial in range(args.trials):
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, trial]))
        acc, ce = cnn.evaluate(model, dataset["eval_images"],
                               dataset["eval_labels"],
                               eps if args.eps > 0 else None,
                               stats, trials=1, rng=rng)
        out_rows.append([f"uniform-{args.eps}", trial, acc, ce])
    path = _outdir(args) / "eval_report.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eps_profile_id", "trial", "accuracy",
                         "cross_entropy"])
        writer.writerows(out_rows)
    mean_acc = float(np.mean([r[2] for r in out_rows]))
    print(f"wrote {path}; mean accuracy {mean_acc:.4f}")
    return 0


def cmd_mixed(args) -> int:
    cfg = _load_cfg(args)
    dataset, model, stats = harness.get_model_and_data(cfg)
    layers = harness.build_layers(cfg)
    sp = harness.build_system_params(cfg, 0.0)
    k = int(cfg["experiment"]["mixed_k"])
    omega = precision.omega_weights(layers, k, sp)
    gamma0 = precision.budget_from_uniform(args.eps_sh, layers, k, sp)
    budget = precision.BudgetSpec(gamma0, omega,
                                  gamma_min=float(cfg["experiment"]["gamma_min"]))
    hyper = precision.AdamConfig(
        steps=int(cfg["experiment"]["adam_steps"]),
        batch=int(cfg["experiment"]["adam_batch"]),
        eta=float(cfg["experiment"]["adam_eta"]))
    result = precision.optimize_mixed_precision(
        model, (dataset["calib_images"], dataset["calib_labels"]), budget,
        hyper, np.random.default_rng(args.seed), stats=stats)
    path = _outdir(args) / "mixed_profile.csv"
    rows = precision.profile_rows(result.profile, budget)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {path}; eps = "
          + ", ".join(f"{e:.4f}" for e in result.profile.eps))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    cfg["experiment"]["kind"] = args.kind
    record, status = harness.run_sweep(args.kind, cfg, args.seed,
                                       _outdir(args), scale=args.scale)
    print(f"{args.kind}: {len(record.rows)} rows "
          f"(config {record.config_hash}, seed {record.seed}), "
          f"exit {status}")
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="analogrf",
        description="Analog-RF computing physical layer toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("channel", help="sample a channel realization to CSV")
    _common(p)
    p.set_defaults(func=cmd_channel)

    p = sub.add_parser("solve-layer", help="solve one layer from a channel CSV")
    _common(p)
    p.add_argument("--channel-csv", required=True)
    p.add_argument("--layer", type=int, default=1)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--lam", type=float, default=0.0)
    p.set_defaults(func=cmd_solve_layer)

    p = sub.add_parser("solve-net", help="solve all layers and report energy")
    _common(p)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--lam", type=float, default=0.0)
    p.set_defaults(func=cmd_solve_net)

    p = sub.add_parser("infer", help="evaluate noisy inference")
    _common(p)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=3)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("mixed", help="optimize a mixed-precision profile")
    _common(p)
    p.add_argument("--eps-sh", type=float, default=0.3,
                   help="shared target whose budget is matched")
    p.set_defaults(func=cmd_mixed)

    p = sub.add_parser("sweep", help="run an experiment sweep")
    p.add_argument("kind", choices=harness.EXPERIMENT_KINDS)
    _common(p)
    p.set_defaults(func=cmd_sweep)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except cnn.DataMissingError as exc:
        print(f"missing data: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
