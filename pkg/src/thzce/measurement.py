"""Pilot matrices, per-subcarrier measurement matrices, noisy observations.

The one-bit-phase-shifter front end reduces to a real pilot matrix W whose
entries are +-1/sqrt(N); the RF-chain count is bookkeeping only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dictionary import PolarDictionary


@dataclass(frozen=True)
class MeasurementSet:
    """One observation bundle: pilots, measurement matrices, observations."""

    W: np.ndarray          # M x N, entries +-1/sqrt(N)
    Phi: tuple             # K matrices, M x G, Phi^k = W @ A^k
    Y: np.ndarray          # M x K noisy observations
    sigma2: float


def generate_pilot_matrix(M: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. equiprobable +-1/sqrt(N) entries."""
    if M < 1 or N < 1:
        raise ValueError("M and N must be >= 1")
    signs = rng.integers(0, 2, size=(M, N)) * 2 - 1
    return signs / np.sqrt(N)


def observe(H: np.ndarray, W: np.ndarray, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Y with column k = W h^k + n^k, n^k ~ CN(0, sigma2 I)."""
    if sigma2 < 0:
        raise ValueError("noise variance must be nonnegative")
    if W.shape[1] != H.shape[0]:
        raise ValueError(f"dimension mismatch: W is {W.shape}, H is {H.shape}")
    Y = W @ H
    if sigma2 > 0:
        M, K = Y.shape
        noise = rng.standard_normal((M, K)) + 1j * rng.standard_normal((M, K))
        Y = Y + noise * np.sqrt(sigma2 / 2.0)
    return Y


def measurement_matrices(W: np.ndarray, dictionary: PolarDictionary) -> tuple:
    """Phi^k = W @ A^k for every subcarrier."""
    if W.shape[1] != dictionary.matrices[0].shape[0]:
        raise ValueError(
            f"dimension mismatch: W is {W.shape}, dictionary atoms have "
            f"{dictionary.matrices[0].shape[0]} elements"
        )
    return tuple(W @ A for A in dictionary.matrices)


def make_measurement_set(
    H: np.ndarray,
    dictionary: PolarDictionary,
    M: int,
    sigma2: float,
    rng: np.random.Generator,
) -> MeasurementSet:
    W = generate_pilot_matrix(M, H.shape[0], rng)
    return MeasurementSet(
        W=W,
        Phi=measurement_matrices(W, dictionary),
        Y=observe(H, W, sigma2, rng),
        sigma2=sigma2,
    )
