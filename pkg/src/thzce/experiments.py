"""Experiment runners mirroring the reference experiment shapes, closed-form
FLOP accounting, and wall-clock benchmarking.

All NMSE figures are 10*log10 of the mean linear NMSE over the declared
sample count; every run is reproducible from (preset, seed).
"""

from __future__ import annotations

import csv
import time
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

from .channel import rayleigh_distance, sample_channel
from .config import SystemConfig
from .dictionary import get_dictionary
from .measurement import generate_pilot_matrix, measurement_matrices, observe
from .solvers import amp_sbl, msbl, nmse, nmse_db_mean, somp
from .unfolded import DivergenceError, reconstruct, unfolded_forward

DEFAULT_SAMPLES = 200
SOMP_ITERS = 6
MSBL_ITERS = 100
AMP_ITERS = 100


# -- FLOP accounting -----------------------------------------------------------

_FLOP_PER_ITER = {
    "sbl": lambda K, M, G: 16 * K * M * M * G,
    "amp_sbl": lambda K, M, G: 20 * K * M * G,
    "unfolded": lambda K, M, G: (20 * K * M + 800) * G,
    "somp": lambda K, M, G: 8 * K * M * G,
}


def flops(alg: str, K: int, M: int, G: int, iters: int = 1):
    """Closed-form real-FLOP counts; returns (total, per_iteration)."""
    key = {"msbl": "sbl"}.get(alg, alg)
    if key not in _FLOP_PER_ITER:
        raise ValueError(f"unknown algorithm {alg!r}; choose from {sorted(_FLOP_PER_ITER)}")
    if min(K, M, G, iters) < 1:
        raise ValueError("K, M, G, iters must be positive")
    per = _FLOP_PER_ITER[key](K, M, G)
    return per * iters, per


# -- shared evaluation machinery -------------------------------------------------


def _spawn_rngs(seed, n):
    return [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(n)]


def _estimate(alg, Y, Phi, dictionary, sigma2, M, snr_db, model=None):
    """Run one solver; returns the antenna-domain estimate (or None on
    reported divergence of the unfolded forward)."""
    if alg == "somp":
        X = somp(Y, Phi, max_iter=SOMP_ITERS)
    elif alg == "msbl":
        X, _ = msbl(Y, Phi, sigma2, max_iter=MSBL_ITERS)
    elif alg == "amp_sbl":
        X = amp_sbl(Y, Phi, sigma2, AMP_ITERS)
    elif alg == "unfolded":
        if model is None:
            raise ValueError("the unfolded estimator needs a trained model")
        X = unfolded_forward(Y, Phi, sigma2, M, snr_db, model)
    else:
        raise ValueError(f"unknown algorithm {alg!r}")
    return reconstruct(X, dictionary)


def evaluate_combo(cfg: SystemConfig, alg: str, dict_kind: str, n_samples: int,
                   seed: int, model=None, r_c=None):
    """Per-sample linear NMSEs of one (algorithm, dictionary) pair.  The pilot
    matrix is drawn once per run and shared across samples; divergent samples
    contribute +inf."""
    dictionary = get_dictionary(cfg, dict_kind)
    rngs = _spawn_rngs(seed, n_samples + 1)
    W = generate_pilot_matrix(cfg.M, cfg.N, rngs[0])
    Phi = measurement_matrices(W, dictionary)
    out = []
    for i in range(n_samples):
        rng = rngs[i + 1]
        H = sample_channel(cfg, rng, r_c=r_c).H
        Y = observe(H, W, cfg.sigma2, rng)
        try:
            H_hat = _estimate(alg, Y, Phi, dictionary, cfg.sigma2, cfg.M, cfg.snr_db, model)
            lin, _ = nmse(H, H_hat)
        except DivergenceError:
            lin = np.inf
        if not np.isfinite(lin):
            lin = np.inf
        out.append(lin)
    return np.array(out)


@dataclass
class ExperimentResult:
    kind: str
    axis_name: str
    rows: list = field(default_factory=list)  # dicts: axis, algorithm, dictionary, nmse_db, samples
    extra: dict = field(default_factory=dict)

    def add(self, axis, algorithm, dictionary, nmse_db, samples):
        self.rows.append({
            "axis": axis, "algorithm": algorithm, "dictionary": dictionary,
            "nmse_db": nmse_db, "samples": samples,
        })

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["axis", "algorithm", "dictionary", "nmse_db", "samples"])
            for row in self.rows:
                w.writerow([row["axis"], row["algorithm"], row["dictionary"],
                            f"{row['nmse_db']:.4f}", row["samples"]])

    def lookup(self, axis, algorithm, dictionary):
        for row in self.rows:
            if (row["axis"], row["algorithm"], row["dictionary"]) == (axis, algorithm, dictionary):
                return row["nmse_db"]
        raise KeyError((axis, algorithm, dictionary))


_DEFAULT_VS_M_COMBOS = (
    ("somp", "ad"), ("somp", "pd"),
    ("msbl", "ad"), ("msbl", "pd"),
    ("amp_sbl", "pd"),
    ("unfolded", "pd"),
)


def run_vs_m(cfg: SystemConfig, m_values, n_samples=DEFAULT_SAMPLES, seed=0,
             model=None, combos=_DEFAULT_VS_M_COMBOS):
    res = ExperimentResult(kind="vs_M", axis_name="M")
    for M in m_values:
        c = cfg.with_(M=int(M))
        for alg, dk in combos:
            if alg == "unfolded" and model is None:
                continue
            lins = evaluate_combo(c, alg, dk, n_samples, seed, model=model)
            res.add(int(M), alg, dk, nmse_db_mean(lins), n_samples)
    return res


def run_vs_rc(cfg: SystemConfig, rc_values, n_samples=DEFAULT_SAMPLES, seed=0,
              model=None, combos=(("somp", "ad"), ("somp", "pd"))):
    res = ExperimentResult(kind="vs_rc", axis_name="r_c")
    res.extra["rayleigh_distance"] = rayleigh_distance(cfg)
    for rc in rc_values:
        for alg, dk in combos:
            if alg == "unfolded" and model is None:
                continue
            lins = evaluate_combo(cfg, alg, dk, n_samples, seed, model=model, r_c=float(rc))
            res.add(float(rc), alg, dk, nmse_db_mean(lins), n_samples)
    return res


def run_vs_snr_configs(cfg: SystemConfig, config_grid, n_samples=DEFAULT_SAMPLES, seed=0,
                       mt_model=None, st_models=None, include_msbl=True):
    """One row per (config, estimator): mixed-trained model, per-config
    separately-trained models, and the MSBL-AD reference."""
    res = ExperimentResult(kind="vs_snr_configs", axis_name="(M,snr_db)")
    for key in config_grid:
        M, snr_db = key
        c = cfg.with_(M=int(M), snr_db=float(snr_db))
        if mt_model is not None:
            lins = evaluate_combo(c, "unfolded", "pd", n_samples, seed, model=mt_model)
            res.add(f"{M},{snr_db:g}", "unfolded-mt", "pd", nmse_db_mean(lins), n_samples)
        if st_models and key in st_models:
            lins = evaluate_combo(c, "unfolded", "pd", n_samples, seed, model=st_models[key])
            res.add(f"{M},{snr_db:g}", "unfolded-st", "pd", nmse_db_mean(lins), n_samples)
        if include_msbl:
            lins = evaluate_combo(c, "msbl", "ad", n_samples, seed)
            res.add(f"{M},{snr_db:g}", "msbl", "ad", nmse_db_mean(lins), n_samples)
    return res


def run_sparsity_structure(cfg: SystemConfig, n_channels=50, top_p=20, r_c=10.0, seed=0):
    """Cross-subcarrier support alignment: mean Jaccard similarity between the
    top-P least-squares coefficient supports of the first and last subcarrier,
    under frequency-dependent polar dictionaries vs one common angular
    dictionary."""
    pd_dict = get_dictionary(cfg, "pd")
    cad_dict = get_dictionary(cfg, "cad")
    pinv_pd = (np.linalg.pinv(pd_dict.matrices[0]), np.linalg.pinv(pd_dict.matrices[-1]))
    pinv_cad = np.linalg.pinv(cad_dict.matrices[0])
    rngs = _spawn_rngs(seed, n_channels)

    def top_support(coef):
        return set(np.argsort(-np.abs(coef))[:top_p])

    def jaccard(a, b):
        return len(a & b) / len(a | b)

    j_pd, j_cad = [], []
    for rng in rngs:
        H = sample_channel(cfg, rng, r_c=r_c).H
        j_pd.append(jaccard(top_support(pinv_pd[0] @ H[:, 0]), top_support(pinv_pd[1] @ H[:, -1])))
        j_cad.append(jaccard(top_support(pinv_cad @ H[:, 0]), top_support(pinv_cad @ H[:, -1])))
    res = ExperimentResult(kind="sparsity_structure", axis_name="dictionary")
    res.add("jaccard", "ls_support", "pd", float(np.mean(j_pd)), n_channels)
    res.add("jaccard", "ls_support", "cad", float(np.mean(j_cad)), n_channels)
    res.extra.update(jaccard_pd=float(np.mean(j_pd)), jaccard_cad=float(np.mean(j_cad)))
    return res


def run_optimizer_study(problems, S, Q, optimizers=("adam", "sgd", "momentum"),
                        layers=3, epochs=30, seed=0, lr0=1e-3):
    """Desk-scale optimizer comparison: identical data and init, fixed-depth
    training, per-epoch validation NMSE recorded for each optimizer."""
    from .training import TrainConfig, train_stage
    from .unfolded import init_model

    res = ExperimentResult(kind="optimizer_study", axis_name="epoch")
    for opt in optimizers:
        tc = TrainConfig(optimizer=opt, max_epochs=epochs, seed=seed, lr0=lr0,
                         early_stop=epochs + 1, lr_patience=epochs + 1)
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        model = init_model(S, Q, layers, rng)
        log: list = []
        train_stage(model, problems, tc, rng, None, log, stage=1)
        for row in log:
            res.add(row["epoch"], opt, "pd", 10 * np.log10(row["val_metric"]), row["epoch"])
    return res


def run_experiment(kind: str, cfg: SystemConfig, **kw) -> ExperimentResult:
    if kind == "vs_M":
        return run_vs_m(cfg, **kw)
    if kind == "vs_rc":
        return run_vs_rc(cfg, **kw)
    if kind == "vs_snr_configs":
        return run_vs_snr_configs(cfg, **kw)
    if kind == "sparsity_structure":
        return run_sparsity_structure(cfg, **kw)
    if kind == "optimizer_study":
        return run_optimizer_study(**kw)
    raise ValueError(f"unknown experiment kind {kind!r}")


# -- wall-clock benchmarking ------------------------------------------------------


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    except ImportError:
        return nullcontext()


def benchmark_runtime(algs, cfg: SystemConfig, repetitions=10, seed=0, model=None):
    """Median and IQR wall-clock per solve on one fixed instance, solvers
    forced single-threaded when threadpoolctl is available."""
    rows = []
    rng = np.random.default_rng(seed)
    dicts = {}
    for alg, dk in algs:
        dicts.setdefault(dk, get_dictionary(cfg, dk))
    H = sample_channel(cfg, rng).H
    W = generate_pilot_matrix(cfg.M, cfg.N, rng)
    Phis = {dk: measurement_matrices(W, d) for dk, d in dicts.items()}
    Y = observe(H, W, cfg.sigma2, rng)
    with _single_thread():
        for alg, dk in algs:
            Phi = Phis[dk]
            d = dicts[dk]

            def run():
                return _estimate(alg, Y, Phi, d, cfg.sigma2, cfg.M, cfg.snr_db, model)

            try:
                run()  # warm-up
            except DivergenceError:
                pass
            times = []
            for _ in range(repetitions):
                t0 = time.perf_counter()
                try:
                    run()
                except DivergenceError:
                    pass
                times.append(time.perf_counter() - t0)
            times = np.array(times)
            rows.append({
                "algorithm": alg, "dictionary": dk,
                "median_s": float(np.median(times)),
                "iqr_s": float(np.percentile(times, 75) - np.percentile(times, 25)),
                "repetitions": repetitions,
            })
    return rows
