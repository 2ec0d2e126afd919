"""Dataset persistence: a text manifest plus one binary blob per array.

Blobs are row-major little-endian 64-bit floats; complex arrays store
interleaved real/imaginary parts (numpy '<c16' layout).  Loading verifies
that manifest shapes match blob byte lengths exactly, and load->save
round-trips bit-identically.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import asdict

import numpy as np

from .config import SystemConfig
from .training import ConfigProblem, make_problems

_MAGIC = "thzce-dataset-v1"

_CFG_FIELDS = ("N", "K", "f_c", "f_s", "M", "snr_db", "N_c", "N_p", "Q", "beta",
               "rho_min", "seed", "n_rf")


def _fmt(v):
    return repr(v)


def save_dataset(path, base_cfg: SystemConfig, problems: dict, counts, seed: int,
                 dictionary_kind: str = "pd") -> None:
    os.makedirs(path, exist_ok=True)
    cfgd = asdict(base_cfg)
    lines = [f"format = {_MAGIC}"]
    for f in _CFG_FIELDS:
        lines.append(f"cfg.{f} = {_fmt(cfgd[f])}")
    lines.append(f"counts = {counts[0]},{counts[1]},{counts[2]}")
    lines.append(f"seed = {seed}")
    lines.append(f"dictionary = {dictionary_kind}")
    keys = sorted(problems.keys())
    lines.append("configs = " + ";".join(f"{m},{_fmt(s)}" for m, s in keys))

    arrays = []
    for ci, key in enumerate(keys):
        prob = problems[key]
        arrays.append((f"W_{ci}", prob.W.astype("<f8")))
        for split in ("train", "val", "test"):
            arrays.append((f"H_{ci}_{split}", prob.H[split].astype("<c16")))
            arrays.append((f"Y_{ci}_{split}", prob.Y[split].astype("<c16")))
    for name, arr in arrays:
        kind = "c16" if arr.dtype == np.dtype("<c16") else "f8"
        fname = name + ".bin"
        lines.append(
            f"array {name} kind={kind} shape={','.join(map(str, arr.shape))} file={fname}"
        )
        np.ascontiguousarray(arr).tofile(os.path.join(path, fname))
    with open(os.path.join(path, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path):
    """Returns (base_cfg, problems, meta).  Measurement-side precomputations
    (SVD whitening, dictionary matrices) are rebuilt deterministically from
    the stored pilot matrices and config."""
    from .dictionary import get_dictionary
    from .measurement import measurement_matrices

    with open(os.path.join(path, "manifest.txt")) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    meta = {}
    array_specs = []
    for ln in lines:
        if ln.startswith("array "):
            _, name, kind_s, shape_s, file_s = ln.split()
            array_specs.append(
                (
                    name,
                    kind_s.split("=")[1],
                    tuple(int(x) for x in shape_s.split("=")[1].split(",")),
                    file_s.split("=")[1],
                )
            )
        else:
            key, _, value = ln.partition(" = ")
            meta[key] = value
    if meta.get("format") != _MAGIC:
        raise ValueError(f"not a {_MAGIC} dataset: {path}")

    int_fields = {"N", "K", "M", "N_c", "N_p", "Q", "seed", "n_rf"}
    cfg_kwargs = {
        f: (int if f in int_fields else float)(meta[f"cfg.{f}"]) for f in _CFG_FIELDS
    }
    base_cfg = SystemConfig(**cfg_kwargs)

    arrays = {}
    for name, kind, shape, fname in array_specs:
        dtype = "<c16" if kind == "c16" else "<f8"
        fpath = os.path.join(path, fname)
        expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
        actual = os.path.getsize(fpath)
        if actual != expected:
            raise ValueError(
                f"blob {fname}: {actual} bytes on disk but manifest shape {shape} needs {expected}"
            )
        arrays[name] = np.fromfile(fpath, dtype=dtype).reshape(shape)

    keys = [
        (int(p.split(",")[0]), float(p.split(",")[1]))
        for p in meta["configs"].split(";")
        if p
    ]
    kind = meta.get("dictionary", "pd")
    dictionary = get_dictionary(base_cfg, kind)
    problems = {}
    for ci, key in enumerate(keys):
        W = arrays[f"W_{ci}"]
        cfg = base_cfg.with_(M=int(key[0]), snr_db=float(key[1]))
        Phi = measurement_matrices(W, dictionary)
        U, B, aB2, aB2T = [], [], [], []
        for P in Phi:
            u, _, _ = np.linalg.svd(P, full_matrices=True)
            b = u.conj().T @ P
            U.append(u)
            B.append(b)
            aB2.append(np.abs(b) ** 2)
            aB2T.append(np.ascontiguousarray(np.abs(b) ** 2).T.copy())
        problems[key] = ConfigProblem(
            M=int(key[0]), snr_db=float(key[1]), sigma2=cfg.sigma2, W=W,
            U=U, B=B, absB2=aB2, absB2T=aB2T, A=list(dictionary.matrices),
            H={s: arrays[f"H_{ci}_{s}"] for s in ("train", "val", "test")},
            Y={s: arrays[f"Y_{ci}_{s}"] for s in ("train", "val", "test")},
        )
    counts = tuple(int(x) for x in meta["counts"].split(","))
    return base_cfg, problems, {
        "counts": counts,
        "seed": int(meta["seed"]),
        "dictionary": kind,
        "configs": keys,
    }


def generate_dataset(cfg: SystemConfig, counts, config_grid, out_path, seed: int = 0,
                     dictionary_kind: str = "pd"):
    """Channels, pilot matrices, observations and config tags, persisted and
    reproducible from (cfg, grid, counts, seed)."""
    problems = make_problems(cfg, config_grid, counts=counts, seed=seed,
                             dictionary_kind=dictionary_kind)
    save_dataset(out_path, cfg, problems, counts, seed, dictionary_kind)
    return problems


def manifest_hash(path) -> str:
    with open(os.path.join(path, "manifest.txt"), "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
