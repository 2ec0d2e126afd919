"""Wideband near-field multipath channel generation.

The array is a ULA of N elements with half-wavelength spacing at the carrier.
Steering vectors use the Fresnel approximation of the exact element-to-source
distance; phases follow the physical 2*pi*(f/c)*path-difference convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SPEED_OF_LIGHT, SystemConfig


@dataclass(frozen=True)
class PathParams:
    """One propagation path: complex gain, delay, sine-of-AoD, distance."""

    alpha: complex
    tau: float
    theta: float
    r: float

    def __post_init__(self):
        if not abs(self.theta) <= 1:
            raise ValueError("theta is a sine and must lie in [-1, 1]")
        if not self.r > 0:
            raise ValueError("path distance must be positive")
        if self.tau < 0:
            raise ValueError("delay must be nonnegative")


@dataclass(frozen=True)
class ChannelRealization:
    """Sampled paths plus the assembled N x K subchannel matrix."""

    paths: tuple
    H: np.ndarray


def rayleigh_distance(cfg: SystemConfig) -> float:
    """Near/far-field boundary 2*D^2/lambda for aperture D = (N-1)*d."""
    D = (cfg.N - 1) * cfg.spacing
    return 2.0 * D * D / cfg.wavelength


def subcarrier_frequency(cfg: SystemConfig, k: int) -> float:
    """Frequency of subcarrier k (1-based), symmetric about the carrier."""
    if not 1 <= k <= cfg.K:
        raise ValueError(f"subcarrier index {k} outside 1..{cfg.K}")
    return cfg.f_c + (k - 1 - (cfg.K - 1) / 2.0) * cfg.f_s / cfg.K


def subcarrier_frequencies(cfg: SystemConfig) -> np.ndarray:
    k = np.arange(1, cfg.K + 1)
    return cfg.f_c + (k - 1 - (cfg.K - 1) / 2.0) * cfg.f_s / cfg.K


def antenna_offsets(N: int) -> np.ndarray:
    """Signed element offsets delta_n = (2n - N + 1)/2 in units of d."""
    return (2.0 * np.arange(N) - N + 1) / 2.0


def near_field_steering(theta, r, f, N, d) -> np.ndarray:
    """Fresnel-approximated array response, unit Euclidean norm.

    Element n carries phase -2*pi*(f/c) * (delta_n^2 d^2 (1-theta^2)/(2r)
    - delta_n d theta).  r = inf gives the far-field (planar) response.
    Supports broadcasting: theta/r/f may be arrays of a common shape, in
    which case the element axis is appended last.
    """
    theta = np.asarray(theta, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(theta) > 1):
        raise ValueError("theta is a sine and must lie in [-1, 1]")
    if np.any(r <= 0):
        raise ValueError("distance must be positive (use np.inf for far field)")
    delta = antenna_offsets(N)
    # r = inf cleanly zeroes the curvature term (finite / inf == 0.0)
    curv = delta**2 * d * d * (1.0 - theta[..., None] ** 2) / (2.0 * r[..., None])
    phase = -2.0 * np.pi * (np.asarray(f) / SPEED_OF_LIGHT)[..., None] * (
        curv - delta * d * theta[..., None]
    )
    return np.exp(1j * phase) / np.sqrt(N)


def far_field_steering(theta, f, N, d) -> np.ndarray:
    """Planar-wavefront limit of the near-field response (r -> inf)."""
    return near_field_steering(theta, np.inf, f, N, d)


def assemble_subchannels(paths, cfg: SystemConfig) -> np.ndarray:
    """Evaluate the wideband channel: column k sums the per-path responses
    alpha * exp(-j 2 pi f_k tau) * a_N(theta, r, f_k), scaled by
    sqrt(N / (N_c N_p))."""
    fk = subcarrier_frequencies(cfg)
    H = np.zeros((cfg.N, cfg.K), dtype=complex)
    for p in paths:
        a = near_field_steering(
            np.full(cfg.K, p.theta), np.full(cfg.K, p.r), fk, cfg.N, cfg.spacing
        )  # (K, N)
        H += (p.alpha * np.exp(-2j * np.pi * fk * p.tau))[None, :] * a.T
    return np.sqrt(cfg.N / (cfg.N_c * cfg.N_p)) * H


def _truncated_laplace(rng, loc, scale, lo, hi, max_tries=100):
    """Laplace draw rejected into [lo, hi]; clips after max_tries so that
    cluster centers near a boundary cannot stall the sampler."""
    if scale == 0.0:
        return min(max(loc, lo), hi)
    for _ in range(max_tries):
        x = rng.laplace(loc, scale)
        if lo <= x <= hi:
            return x
    return min(max(loc, lo), hi)


def sample_channel(
    cfg: SystemConfig,
    rng: np.random.Generator,
    *,
    angle_spread_deg: float = 4.0,
    distance_spread_m: float = 1.0,
    r_c=None,
) -> ChannelRealization:
    """Draw one channel realization.

    Cluster centers have physical angle ~ U[0, 360) deg and distance
    ~ U[5 m, 30 m] (upper end capped by the Rayleigh distance so all paths
    stay in the modeled near-field regime).  Subpaths perturb the center by
    Laplacian spreads with std 4 deg in angle and 1 m in distance; distance
    draws are truncated into [1 m, r_Ray].  Gains are CN(0, 1) and delays
    are the geometric r/c.

    r_c, when given, forces every path distance to that exact value (used by
    the distance-sweep experiment); it may lie beyond the Rayleigh distance.
    """
    r_ray = rayleigh_distance(cfg)
    if r_c is None and not r_ray > cfg.rho_min:
        raise ValueError(
            f"Rayleigh distance {r_ray:.3g} m does not exceed rho_min={cfg.rho_min} m; "
            "no near field to sample"
        )
    # Laplace scale b from the target standard deviation (var = 2 b^2)
    b_ang = angle_spread_deg / np.sqrt(2.0)
    b_dist = distance_spread_m / np.sqrt(2.0)
    r_hi = min(30.0, r_ray)
    paths = []
    for _ in range(cfg.N_c):
        center_phi = rng.uniform(0.0, 360.0)
        if r_c is not None:
            center_r = float(r_c)
        else:
            center_r = rng.uniform(5.0, r_hi) if r_hi > 5.0 else rng.uniform(1.0, r_hi)
        for _ in range(cfg.N_p):
            phi = center_phi + (rng.laplace(0.0, b_ang) if b_ang > 0 else 0.0)
            if r_c is not None:
                r = float(r_c)
            else:
                r = _truncated_laplace(rng, center_r, b_dist, 1.0, r_ray)
            alpha = complex(rng.standard_normal(), rng.standard_normal()) / np.sqrt(2.0)
            paths.append(
                PathParams(alpha=alpha, tau=r / SPEED_OF_LIGHT, theta=float(np.sin(np.deg2rad(phi))), r=r)
            )
    paths = tuple(paths)
    return ChannelRealization(paths=paths, H=assemble_subchannels(paths, cfg))
