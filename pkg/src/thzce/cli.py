"""Command-line interface: generate / train / estimate / bench / flops /
experiment.  Parameters come from flags or a JSON config file whose keys
mirror the SystemConfig / TrainConfig field names; flags win."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from .config import DESK_M_GRID, DESK_SNR_GRID, SystemConfig, get_preset
from .training import TrainConfig

_SYS_FIELDS = {f.name: f.type for f in fields(SystemConfig)}
_INT_SYS = {"N", "K", "M", "N_c", "N_p", "Q", "seed", "n_rf"}


def _load_config_file(path):
    with open(path) as fh:
        return json.load(fh)


def build_system_config(args) -> SystemConfig:
    cfg = get_preset(args.preset)
    overrides = {}
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        for key, value in file_cfg.items():
            if key in _SYS_FIELDS:
                overrides[key] = value
    for name in _SYS_FIELDS:
        v = getattr(args, f"sys_{name}", None)
        if v is not None:
            overrides[name] = v
    for key in list(overrides):
        overrides[key] = int(overrides[key]) if key in _INT_SYS else float(overrides[key])
    return cfg.with_(**overrides)


def build_train_config(args, config_grid=None) -> TrainConfig:
    kwargs = {}
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        tc_fields = {f.name for f in fields(TrainConfig)}
        for key, value in file_cfg.items():
            if key in tc_fields and key != "config_grid":
                kwargs[key] = value
    for name, attr in (("max_epochs", "epochs"), ("layerwise_max", "max_layers"),
                       ("min_layers", "min_layers"), ("seed", "train_seed"),
                       ("optimizer", "optimizer"), ("lr0", "lr"), ("batch", "batch")):
        v = getattr(args, attr, None)
        if v is not None:
            kwargs[name] = v
    if config_grid is not None:
        kwargs["config_grid"] = tuple(config_grid)
    return TrainConfig(**kwargs)


def _add_system_flags(p):
    for name in _SYS_FIELDS:
        if name == "seed":  # each subcommand owns its run seed
            continue
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"sys_{name}", type=float, default=None,
                       help=f"override SystemConfig.{name}")
    p.add_argument("--preset", default="desk", choices=("desk", "full"))
    p.add_argument("--config", default=None, help="JSON config file (SystemConfig/TrainConfig keys)")


def _parse_grid(text):
    grid = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        m, snr = part.split(",")
        grid.append((int(m), float(snr)))
    return grid


def _parse_counts(text):
    a, b, c = (int(x) for x in text.split(","))
    return (a, b, c)


def cmd_generate(args) -> int:
    from .dataset import generate_dataset, manifest_hash

    cfg = build_system_config(args)
    grid = _parse_grid(args.grid) if args.grid else [(cfg.M, cfg.snr_db)]
    counts = _parse_counts(args.counts)
    generate_dataset(cfg, counts, grid, args.out, seed=args.seed, dictionary_kind=args.dict)
    print(f"dataset written to {args.out}")
    print(f"configs: {grid}")
    print(f"counts (train/val/test per config): {counts}")
    print(f"manifest sha256: {manifest_hash(args.out)}")
    return 0


def cmd_train(args) -> int:
    from .dataset import load_dataset
    from .dictionary import build_grid
    from .training import ConfigWeightTable, layerwise_train, mixed_train, write_training_log
    from .unfolded import save_model

    base_cfg, problems, meta = load_dataset(args.dataset)
    grid_cfgs = list(problems.keys())
    if args.single_config:
        key = (int(args.single_config.split(",")[0]), float(args.single_config.split(",")[1]))
        if key not in problems:
            raise KeyError(f"config {key} not in dataset (has {grid_cfgs})")
        problems = {key: problems[key]}
        grid_cfgs = [key]
    tc = build_train_config(args, config_grid=grid_cfgs)
    grid = build_grid(base_cfg)
    table = None
    if args.weight_table:
        with open(args.weight_table) as fh:
            raw = json.load(fh)
        table = ConfigWeightTable(
            weights={(int(k.split(",")[0]), float(k.split(",")[1])): v for k, v in raw["weights"].items()},
            middle=tuple(raw["middle"]),
        )
    if args.mixed:
        if table is None:
            raise ValueError("mixed training needs --weight-table (see README)")
        model, info = mixed_train(problems, table, tc, S=grid.S, Q=grid.Q)
    else:
        model, info = layerwise_train(problems, tc, table=table, S=grid.S, Q=grid.Q)
    save_model(model, args.out)
    if args.log:
        write_training_log(info["log"], args.log)
    print(f"trained model with L={model.L} layers -> {args.out}")
    print("stage validation metrics:", [f"{m:.5g}" for m in info["stage_metrics"]])
    return 0


def cmd_estimate(args) -> int:
    from .dataset import load_dataset
    from .dictionary import get_dictionary
    from .experiments import _estimate
    from .measurement import measurement_matrices
    from .solvers import nmse, nmse_db_mean
    from .unfolded import load_model

    base_cfg, problems, meta = load_dataset(args.dataset)
    model = load_model(args.model) if args.model else None
    dictionary = get_dictionary(base_cfg, args.dict)
    rows = []
    for key, prob in sorted(problems.items()):
        Phi = measurement_matrices(prob.W, dictionary)
        H = prob.H[args.split]
        Y = prob.Y[args.split]
        n = H.shape[0] if args.limit is None else min(args.limit, H.shape[0])
        lins = []
        for i in range(n):
            try:
                H_hat = _estimate(args.alg, Y[i], Phi, dictionary, prob.sigma2,
                                  prob.M, prob.snr_db, model)
                lin, _ = nmse(H[i], H_hat)
            except Exception:
                lin = np.inf
            lins.append(lin if np.isfinite(lin) else np.inf)
        db = nmse_db_mean(lins)
        rows.append((key, db, n))
        print(f"config M={key[0]} snr={key[1]:g} dB: {args.alg}-{args.dict} NMSE = {db:.3f} dB ({n} samples)")
    if args.out:
        import csv as _csv

        with open(args.out, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["axis", "algorithm", "dictionary", "nmse_db", "samples"])
            for key, db, n in rows:
                w.writerow([f"{key[0]},{key[1]:g}", args.alg, args.dict, f"{db:.4f}", n])
    return 0


def cmd_bench(args) -> int:
    from .experiments import benchmark_runtime
    from .unfolded import load_model

    cfg = build_system_config(args)
    model = load_model(args.model) if args.model else None
    algs = [("somp", "pd"), ("msbl", "ad"), ("amp_sbl", "pd")]
    if model is not None:
        algs.append(("unfolded", "pd"))
    rows = benchmark_runtime(algs, cfg, repetitions=args.reps, seed=args.seed, model=model)
    print(f"{'algorithm':<12} {'dict':<5} {'median_ms':>10} {'iqr_ms':>10}  (reps={args.reps})")
    for r in rows:
        print(f"{r['algorithm']:<12} {r['dictionary']:<5} {r['median_s']*1e3:>10.3f} {r['iqr_s']*1e3:>10.3f}")
    if args.out:
        import csv as _csv

        with open(args.out, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["algorithm", "dictionary", "median_s", "iqr_s", "repetitions"])
            for r in rows:
                w.writerow([r["algorithm"], r["dictionary"], r["median_s"], r["iqr_s"], r["repetitions"]])
    return 0


def cmd_flops(args) -> int:
    from .experiments import flops

    total, per = flops(args.alg, args.K, args.M, args.G, args.iters)
    print(f"{args.alg}: per-iteration {per/1e9:.3f} x1e9 FLOPs, "
          f"total over {args.iters} iterations {total/1e9:.3f} x1e9 FLOPs")
    return 0


def cmd_experiment(args) -> int:
    from .experiments import (run_sparsity_structure, run_vs_m, run_vs_rc,
                              run_vs_snr_configs)
    from .unfolded import load_model

    cfg = build_system_config(args)
    model = load_model(args.model) if args.model else None
    if args.kind == "vs_M":
        axis = [int(float(x)) for x in args.axis.split(",")] if args.axis else list(DESK_M_GRID)
        res = run_vs_m(cfg, axis, n_samples=args.samples, seed=args.seed, model=model)
    elif args.kind == "vs_rc":
        from .channel import rayleigh_distance

        if args.axis:
            axis = [float(x) for x in args.axis.split(",")]
        else:
            rray = rayleigh_distance(cfg)
            axis = [5.0, 10.0, 30.0, 5 * rray]
        res = run_vs_rc(cfg, axis, n_samples=args.samples, seed=args.seed, model=model)
    elif args.kind == "vs_snr_configs":
        grid = _parse_grid(args.grid) if args.grid else [
            (m, s) for m in DESK_M_GRID for s in DESK_SNR_GRID
        ]
        st_models = None
        if args.st_dir:
            st_models = {}
            for key in grid:
                p = os.path.join(args.st_dir, f"st_M{key[0]}_snr{key[1]:g}")
                if os.path.isdir(p):
                    st_models[key] = load_model(p)
        res = run_vs_snr_configs(cfg, grid, n_samples=args.samples, seed=args.seed,
                                 mt_model=model, st_models=st_models)
    elif args.kind == "sparsity_structure":
        res = run_sparsity_structure(cfg, n_channels=args.samples, r_c=args.rc, seed=args.seed)
    elif args.kind == "optimizer_study":
        from .dataset import load_dataset
        from .dictionary import build_grid
        from .experiments import run_optimizer_study

        if not args.dataset:
            raise ValueError("optimizer_study needs --dataset")
        base_cfg, problems, _ = load_dataset(args.dataset)
        grid = build_grid(base_cfg)
        res = run_optimizer_study(problems, grid.S, grid.Q, epochs=args.epochs or 20,
                                  seed=args.seed)
    else:
        raise ValueError(f"unknown experiment kind {args.kind!r}")
    for row in res.rows:
        print(f"{res.axis_name}={row['axis']}: {row['algorithm']}-{row['dictionary']} "
              f"NMSE = {row['nmse_db']:.3f} dB ({row['samples']} samples)")
    if args.out:
        res.to_csv(args.out)
        print(f"CSV written to {args.out}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thzce", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate and persist a dataset")
    _add_system_flags(g)
    g.add_argument("--out", required=True)
    g.add_argument("--counts", default="200,50,50", help="train,val,test per config")
    g.add_argument("--grid", default=None, help="semicolon list of M,snr pairs")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dict", default="pd", choices=("pd", "ad", "cad"))
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the unfolded estimator on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--mixed", action="store_true", help="weighted mixed training over all configs")
    t.add_argument("--single-config", default=None, help="train on one M,snr config only")
    t.add_argument("--weight-table", default=None, help="JSON weight table for the mixed loss")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--max-layers", type=int, default=None)
    t.add_argument("--min-layers", type=int, default=None)
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--optimizer", default=None, choices=("adam", "sgd", "momentum"))
    t.add_argument("--train-seed", type=int, default=None)
    t.add_argument("--log", default=None, help="write the training log here")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("estimate", help="run an estimator over a dataset split")
    e.add_argument("--dataset", required=True)
    e.add_argument("--model", default=None)
    e.add_argument("--alg", required=True, choices=("somp", "msbl", "amp_sbl", "unfolded"))
    e.add_argument("--dict", default="pd", choices=("pd", "ad", "cad"))
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--limit", type=int, default=None)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bench", help="wall-clock solver benchmark")
    _add_system_flags(b)
    b.add_argument("--model", default=None)
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("flops", help="closed-form FLOP accounting")
    f.add_argument("--alg", required=True, choices=("sbl", "msbl", "amp_sbl", "unfolded", "somp"))
    f.add_argument("--K", type=int, required=True)
    f.add_argument("--M", type=int, required=True)
    f.add_argument("--G", type=int, required=True)
    f.add_argument("--iters", type=int, default=1)
    f.set_defaults(func=cmd_flops)

    x = sub.add_parser("experiment", help="run a predefined experiment")
    x.add_argument("kind", choices=("vs_M", "vs_rc", "vs_snr_configs",
                                    "sparsity_structure", "optimizer_study"))
    _add_system_flags(x)
    x.add_argument("--samples", type=int, default=200)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--axis", default=None, help="comma list of axis values")
    x.add_argument("--grid", default=None, help="semicolon list of M,snr pairs")
    x.add_argument("--model", default=None, help="trained (MT) model directory")
    x.add_argument("--st-dir", default=None, help="directory of per-config ST models")
    x.add_argument("--rc", type=float, default=10.0, help="channel distance for sparsity_structure")
    x.add_argument("--dataset", default=None)
    x.add_argument("--epochs", type=int, default=None)
    x.add_argument("--out", default=None)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface the message, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
