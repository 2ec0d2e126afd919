"""Transform dictionaries: frequency-dependent polar (angle x distance) grids
and far-field angular baselines, plus coherence diagnostics.

Grid-to-plane convention used everywhere downstream: flat index g = s*Q + q,
i.e. reshaping a length-G vector to (S, Q) is row-major by distance ring.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import far_field_steering, near_field_steering, subcarrier_frequencies
from .config import SystemConfig


@dataclass(frozen=True)
class PolarGrid:
    """Angle/distance sampling tables.

    theta_grid  Q uniformly spaced sines, (2q - Q + 1)/Q
    r_grid      (S, Q) distances in meters; ring 0 is the far-field ring
                (r = inf), ring s >= 1 follows (1/s) * Z_delta * (1 - theta^2)
    """

    Q: int
    S: int
    Z_delta: float
    theta_grid: np.ndarray
    r_grid: np.ndarray

    @property
    def G(self) -> int:
        return self.S * self.Q


@dataclass(frozen=True)
class PolarDictionary:
    """Per-subcarrier transform matrices with their sampling grid.

    matrices[k] is N x G with unit-norm columns; column g = s*Q + q is the
    steering vector at (theta_grid[q], r_grid[s, q], frequencies[k]).
    kind is 'polar', 'angular' (frequency-dependent far-field) or
    'angular-common' (single matrix at f_c replicated across subcarriers).
    """

    matrices: tuple
    grid: PolarGrid
    frequencies: np.ndarray
    kind: str = "polar"

    @property
    def G(self) -> int:
        return self.matrices[0].shape[1]

    @property
    def K(self) -> int:
        return len(self.matrices)


def ring_count(cfg: SystemConfig) -> int:
    """Minimum integer S with (1/S) * Z_delta < rho_min."""
    z = ring_constant(cfg)
    S = 1
    while z / S >= cfg.rho_min:
        S += 1
    return S


def ring_constant(cfg: SystemConfig) -> float:
    """Z_delta = N^2 d^2 / (2 beta^2 lambda)."""
    return cfg.N**2 * cfg.spacing**2 / (2.0 * cfg.beta**2 * cfg.wavelength)


def build_grid(cfg: SystemConfig) -> PolarGrid:
    """Uniform angle sampling, non-uniform distance rings.

    The printed ring rule divides by s and is singular at s = 0; ring 0 is
    therefore the far-field ring (r = inf, planar steering), matching the
    polar-codebook construction this grid follows.
    """
    Q = cfg.Q
    theta = (2.0 * np.arange(Q) - Q + 1) / Q
    S = ring_count(cfg)
    z = ring_constant(cfg)
    r = np.empty((S, Q))
    r[0, :] = np.inf
    for s in range(1, S):
        r[s, :] = (z / s) * (1.0 - theta**2)
    theta.setflags(write=False)
    r.setflags(write=False)
    return PolarGrid(Q=Q, S=S, Z_delta=z, theta_grid=theta, r_grid=r)


def _steering_block(theta, r, f, N, d):
    """N x Q block of steering columns at one frequency."""
    return near_field_steering(theta, r, np.full_like(theta, f), N, d).T


@lru_cache(maxsize=8)
def build_polar_dictionary(cfg: SystemConfig) -> PolarDictionary:
    """K frequency-dependent polar matrices A^k = [A^k_0, ..., A^k_{S-1}].

    Cached per config: the K*N*G complex entries dominate setup cost and are
    shared read-only by every sample.
    """
    grid = build_grid(cfg)
    fk = subcarrier_frequencies(cfg)
    mats = []
    for f in fk:
        blocks = [
            _steering_block(grid.theta_grid, grid.r_grid[s], f, cfg.N, cfg.spacing)
            for s in range(grid.S)
        ]
        A = np.concatenate(blocks, axis=1)
        A.setflags(write=False)
        mats.append(A)
    return PolarDictionary(matrices=tuple(mats), grid=grid, frequencies=fk, kind="polar")


def build_angular_dictionary(N: int, Q: int, f: float) -> np.ndarray:
    """N x Q far-field dictionary on the uniform sine grid, evaluated at f
    with half-wavelength-at-f element spacing (DFT-orthogonal when Q = N)."""
    from .config import SPEED_OF_LIGHT

    theta = (2.0 * np.arange(Q) - Q + 1) / Q
    d = SPEED_OF_LIGHT / f / 2.0
    return far_field_steering(theta, np.full(Q, f), N, d).T


@lru_cache(maxsize=8)
def build_angular_set(cfg: SystemConfig, common: bool = False) -> PolarDictionary:
    """Angular (far-field) baseline dictionaries.

    common=False gives frequency-dependent matrices at each f_k (the standard
    wideband baseline: beam split compensated, near field not).  common=True
    replicates the single f_c matrix across subcarriers (the naive baseline
    whose cross-subcarrier sparsity structure beam split destroys).
    """
    Q = cfg.Q
    theta = (2.0 * np.arange(Q) - Q + 1) / Q
    fk = subcarrier_frequencies(cfg)
    grid = PolarGrid(
        Q=Q,
        S=1,
        Z_delta=ring_constant(cfg),
        theta_grid=theta,
        r_grid=np.full((1, Q), np.inf),
    )
    if common:
        A = _steering_block(theta, np.full(Q, np.inf), cfg.f_c, cfg.N, cfg.spacing)
        A.setflags(write=False)
        mats = tuple([A] * cfg.K)
        kind = "angular-common"
    else:
        mats = []
        for f in fk:
            A = _steering_block(theta, np.full(Q, np.inf), f, cfg.N, cfg.spacing)
            A.setflags(write=False)
            mats.append(A)
        mats = tuple(mats)
        kind = "angular"
    return PolarDictionary(matrices=mats, grid=grid, frequencies=fk, kind=kind)


def get_dictionary(cfg: SystemConfig, kind: str) -> PolarDictionary:
    """kind: 'pd' (polar), 'ad' (frequency-dependent angular),
    'cad' (common angular at f_c)."""
    if kind == "pd":
        return build_polar_dictionary(cfg)
    if kind == "ad":
        return build_angular_set(cfg, common=False)
    if kind == "cad":
        return build_angular_set(cfg, common=True)
    raise ValueError(f"unknown dictionary kind {kind!r}")


def mutual_coherence(A: np.ndarray) -> float:
    """max_{i != j} |a_i^H a_j| / (||a_i|| ||a_j||)."""
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        raise ValueError("dictionary contains a zero column")
    An = A / norms
    gram = np.abs(An.conj().T @ An)
    np.fill_diagonal(gram, 0.0)
    return float(gram.max())


def polar_transform(x: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Domain transformation h = A x."""
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, x has length {x.shape[0]}")
    return A @ x


def export_grid_csv(grid: PolarGrid, path) -> None:
    """Grid table as CSV with columns s, q, theta, r (ring 0 prints inf)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "q", "theta", "r"])
        for s in range(grid.S):
            for q in range(grid.Q):
                w.writerow([s, q, repr(grid.theta_grid[q]), repr(grid.r_grid[s, q])])
