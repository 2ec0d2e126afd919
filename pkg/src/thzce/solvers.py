"""Classic MMV sparse-recovery baselines: SOMP, MSBL, and the AMP-based SBL
iteration with unitary preprocessing, plus NMSE scoring.

Gamma semantics differ between the two SBL variants and that is deliberate:
MSBL treats gamma as a per-coefficient prior VARIANCE (its standard EM form),
while the AMP-SBL update rule divides by the mean posterior power and is only
self-consistent with gamma as a PRECISION.  Each solver follows its own form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FLOOR = 1e-30


class SingularSupportError(RuntimeError):
    """SOMP selected a support whose submatrix is numerically rank deficient."""


@dataclass
class WhitenedProblem:
    """Per-subcarrier unitary preprocessing of (y, Phi).

    r[k] = U^H y^k and B[k] = U^H Phi^k where Phi^k = U S V^H; the transform
    preserves norms (U unitary) and gives B orthogonal scaled rows, which is
    what stabilizes the AMP iteration.
    """

    r: list
    B: list
    abs_B2: list      # |B|^2, used by the variance messages
    singvals: list

    @classmethod
    def from_measurements(cls, Y, Phi_set):
        r, B, aB2, sv = [], [], [], []
        for k, Phi in enumerate(Phi_set):
            try:
                U, s, _ = np.linalg.svd(Phi, full_matrices=True)
            except np.linalg.LinAlgError as e:
                raise np.linalg.LinAlgError(f"SVD failed on measurement matrix {k}: {e}") from e
            Uh = U.conj().T
            B_k = Uh @ Phi
            r.append(Uh @ Y[:, k])
            B.append(B_k)
            aB2.append(np.abs(B_k) ** 2)
            sv.append(s)
        return cls(r=r, B=B, abs_B2=aB2, singvals=sv)


def nmse(H_true: np.ndarray, H_hat: np.ndarray):
    """Frobenius NMSE, returned as (linear, dB).  Exact recovery gives
    (0.0, -inf); the dB sentinel is the natural log10(0)."""
    den = np.linalg.norm(H_true) ** 2
    if den == 0:
        raise ValueError("NMSE undefined for an all-zero reference")
    lin = float(np.linalg.norm(H_true - H_hat) ** 2 / den)
    with np.errstate(divide="ignore"):
        db = float(10.0 * np.log10(lin)) if np.isfinite(lin) else np.inf
    return lin, db


def nmse_db_mean(lin_values) -> float:
    """dB of the mean linear NMSE (the convention used by all experiments)."""
    arr = np.asarray(list(lin_values), dtype=float)
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(arr.mean()))


def somp(Y: np.ndarray, Phi_set, max_iter: int = 6) -> np.ndarray:
    """Simultaneous OMP over K measurement vectors with per-subcarrier
    measurement matrices.

    Each round picks the grid index with the largest column-normalized
    correlation aggregated over subcarriers, then refits all subcarriers by
    least squares on the joint support.  Runs exactly max_iter rounds.
    """
    K = len(Phi_set)
    M, G = Phi_set[0].shape
    if max_iter > M:
        raise ValueError(f"max_iter={max_iter} exceeds the measurement count M={M}")
    norms = [np.maximum(np.linalg.norm(P, axis=0), FLOOR) for P in Phi_set]
    residual = [Y[:, k].copy() for k in range(K)]
    support: list[int] = []
    X = np.zeros((G, K), dtype=complex)
    for _ in range(max_iter):
        score = np.zeros(G)
        for k in range(K):
            score += np.abs(Phi_set[k].conj().T @ residual[k]) / norms[k]
        score[support] = -1.0
        support.append(int(np.argmax(score)))
        for k in range(K):
            sub = Phi_set[k][:, support]
            coef, _, rank, _ = np.linalg.lstsq(sub, Y[:, k], rcond=None)
            if rank < len(support):
                raise SingularSupportError(
                    f"selected support of size {len(support)} is rank deficient "
                    f"on subcarrier {k}"
                )
            X[:, k] = 0.0
            X[support, k] = coef
            residual[k] = Y[:, k] - sub @ coef
    return X


def msbl(Y: np.ndarray, Phi_set, sigma2: float, max_iter: int = 100):
    """MMV sparse Bayesian learning, dense EM form.

    E-step posterior per subcarrier: Sigma = (Gamma^-1 + Phi^H Phi/sigma2)^-1,
    mu = Sigma Phi^H y / sigma2, evaluated through the Woodbury identity so
    only an M x M system is solved (gamma = 0 entries stay exactly zero).
    Shared M-step: gamma_g = mean_k(|mu_g|^2 + Sigma_gg).

    Returns (X, gamma) with X the G x K posterior means.  No gamma pruning is
    performed, so runtime is O(K L M^2 G); prune externally if you need the
    fast sparse variant.
    """
    if sigma2 <= 0:
        raise ValueError("msbl requires a strictly positive noise variance")
    K = len(Phi_set)
    M, G = Phi_set[0].shape
    gamma = np.ones(G)
    mus = np.zeros((G, K), dtype=complex)
    eyeM = np.eye(M)
    for _ in range(max_iter):
        acc = np.zeros(G)
        for k in range(K):
            Phi = Phi_set[k]
            GPhiH = gamma[:, None] * Phi.conj().T          # Gamma Phi^H
            C = sigma2 * eyeM + Phi @ GPhiH                # M x M innovation covariance
            Ci = np.linalg.solve(C, eyeM)
            T = GPhiH @ Ci                                  # Gamma Phi^H C^-1
            mu = T @ Y[:, k]
            diag_Sigma = gamma - np.real(np.sum(T * GPhiH.conj(), axis=1))
            mus[:, k] = mu
            acc += np.abs(mu) ** 2 + np.maximum(diag_Sigma, 0.0)
        gamma = np.maximum(acc / K, FLOOR)
    return mus, gamma


def msbl_log_likelihood(Y: np.ndarray, Phi_set, sigma2: float, gamma: np.ndarray) -> float:
    """Marginal log-likelihood sum_k log CN(y^k; 0, sigma2 I + Phi Gamma Phi^H)
    up to the constant -M log pi per subcarrier (EM monotonicity diagnostic)."""
    total = 0.0
    M = Phi_set[0].shape[0]
    for k, Phi in enumerate(Phi_set):
        C = sigma2 * np.eye(M) + (Phi * gamma) @ Phi.conj().T
        sign, logdet = np.linalg.slogdet(C)
        y = Y[:, k]
        total += -float(np.real(y.conj() @ np.linalg.solve(C, y))) - logdet
    return total


def amp_sbl(Y: np.ndarray, Phi_set, sigma2: float, L: int, *, return_trace: bool = False):
    """AMP-SBL for MMV-CS: unitary preprocessing, then L iterations of the
    element-wise AMP E-step and the moment-matched gamma/epsilon update.

    All seven update lines use element-wise products and divisions; gamma acts
    as a precision in the denoiser mu = q / (1 + tau_q * gamma).  Denominators
    are floored at 1e-30 to avoid division blow-ups; nothing else is damped or
    clipped, so divergence on unfriendly measurement matrices shows up
    honestly in the output (and in NMSE).

    Returns the G x K posterior means; with return_trace=True also a dict of
    per-iteration diagnostics (gamma, epsilon, epsilon radicand).
    """
    if sigma2 <= 0:
        raise ValueError("amp_sbl requires a strictly positive noise variance")
    if L < 1:
        raise ValueError("iteration count L must be >= 1")
    K = len(Phi_set)
    M, G = Phi_set[0].shape
    wp = WhitenedProblem.from_measurements(Y, Phi_set)
    abs_BT2 = [a.T.copy() for a in wp.abs_B2]

    mu = [np.zeros(G, dtype=complex) for _ in range(K)]
    tau_x = [np.ones(G) for _ in range(K)]
    s = [np.zeros(M, dtype=complex) for _ in range(K)]
    gamma = np.ones(G)
    eps = 1e-3
    trace = {"gamma": [], "epsilon": [], "radicand": []} if return_trace else None

    for _ in range(L):
        power = np.zeros(G)
        for k in range(K):
            B, r = wp.B[k], wp.r[k]
            tau_p = wp.abs_B2[k] @ tau_x[k]
            p = B @ mu[k] - tau_p * s[k]
            tau_s = 1.0 / np.maximum(tau_p + sigma2, FLOOR)
            s[k] = tau_s * (r - p)
            tau_q = 1.0 / np.maximum(abs_BT2[k] @ tau_s, FLOOR)
            q = mu[k] + tau_q * (B.conj().T @ s[k])
            den = np.maximum(1.0 + tau_q * gamma, FLOOR)
            mu[k] = q / den
            tau_x[k] = tau_q / den
            power += np.abs(mu[k]) ** 2 + tau_x[k]
        gamma = (2.0 * eps + 1.0) / np.maximum(power / K, FLOOR)
        with np.errstate(invalid="ignore", divide="ignore"):
            radicand = np.log10(np.mean(gamma)) - np.mean(np.log10(gamma))
        eps = 0.5 * np.sqrt(max(radicand, 0.0))
        if trace is not None:
            trace["gamma"].append(gamma.copy())
            trace["epsilon"].append(eps)
            trace["radicand"].append(float(radicand))

    X = np.stack(mu, axis=1)
    if return_trace:
        return X, trace
    return X
