"""Deep-unfolded AMP-SBL estimator: L layers, each an AMP E-step followed by
a small conv/attention network that replaces the moment-matched gamma update.

Layer dataflow matches the classic iteration exactly: the E-step of layer l
consumes gamma^{l-1}, then the network produces gamma^l from the posterior
statistics.  The printed iteration would leave the last gamma unused, which
would make a 1-layer network untrainable, so the final estimate re-applies
the layer's own denoiser with gamma^L:  mu_out = q^L / (1 + tau_q^L gamma^L).
With a network frozen to emit all-ones this reduces exactly to one iteration
of amp_sbl with gamma fixed at 1.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .solvers import FLOOR, WhitenedProblem


class DivergenceError(RuntimeError):
    """A forward pass produced non-finite intermediates."""


@dataclass
class LayerWeights:
    """Trainable tensors of one AMP-SBL layer.

    conv1: 5x5, 2 -> 16 channels; conv2: 5x5, 16 -> 1 channel; fc1/fc2 map
    the normalized (M, SNR) pair to the 16 per-channel attention weights.
    """

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray

    def named(self):
        return [
            ("conv1_w", self.conv1_w),
            ("conv1_b", self.conv1_b),
            ("conv2_w", self.conv2_w),
            ("conv2_b", self.conv2_b),
            ("fc1_w", self.fc1_w),
            ("fc1_b", self.fc1_b),
            ("fc2_w", self.fc2_w),
            ("fc2_b", self.fc2_b),
        ]

    def copy(self) -> "LayerWeights":
        return LayerWeights(**{n: v.copy() for n, v in self.named()})

    def check(self, hidden: int):
        expected = {
            "conv1_w": (5, 5, 2, 16),
            "conv1_b": (16,),
            "conv2_w": (5, 5, 16, 1),
            "conv2_b": (1,),
            "fc1_w": (hidden, 2),
            "fc1_b": (hidden,),
            "fc2_w": (16, hidden),
            "fc2_b": (16,),
        }
        for name, value in self.named():
            if value.shape != expected[name]:
                raise ValueError(f"{name} has shape {value.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(value)):
                raise ValueError(f"{name} contains non-finite values")


@dataclass
class UnfoldedModel:
    """Stack of AMP-SBL layers plus the grid geometry they were built for."""

    layers: list
    S: int
    Q: int
    hidden: int = 16
    att_m_scale: float = 64.0
    att_snr_scale: float = 20.0
    configs_seen: tuple = field(default_factory=tuple)

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def G(self) -> int:
        return self.S * self.Q

    def copy(self) -> "UnfoldedModel":
        return replace(self, layers=[l.copy() for l in self.layers], configs_seen=tuple(self.configs_seen))

    def check(self):
        if self.L < 1:
            raise ValueError("model needs at least one layer")
        for layer in self.layers:
            layer.check(self.hidden)


def init_layer(rng: np.random.Generator, hidden: int = 16) -> LayerWeights:
    """He-scaled conv kernels, small fc weights, zero biases."""
    def he(shape, fan_in):
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    return LayerWeights(
        conv1_w=he((5, 5, 2, 16), 5 * 5 * 2),
        conv1_b=np.zeros(16),
        conv2_w=he((5, 5, 16, 1), 5 * 5 * 16),
        conv2_b=np.zeros(1),
        fc1_w=he((hidden, 2), 2),
        fc1_b=np.zeros(hidden),
        fc2_w=he((16, hidden), hidden),
        fc2_b=np.zeros(16),
    )


def init_model(S: int, Q: int, L: int, rng: np.random.Generator, hidden: int = 16) -> UnfoldedModel:
    return UnfoldedModel(layers=[init_layer(rng, hidden) for _ in range(L)], S=S, Q=Q, hidden=hidden)


# -- spec-surface operations (single tensors, no batching) -------------------


def conv2d_same(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Zero-padded cross-correlation keeping spatial dims: (S,Q,Cin) ->
    (S,Q,Cout) for a 5x5 kernel (pad 2 each side)."""
    if kernel.shape[:2] != (5, 5):
        raise ValueError("kernel must be 5x5")
    if x.ndim != 3 or x.shape[2] != kernel.shape[2]:
        raise ValueError(f"input {x.shape} does not match kernel {kernel.shape}")
    y = kernels.conv2d_forward(x[None].astype(np.float64), kernel, bias)
    return y[0]


def attention_weights(M, snr_db, fc1, fc2, m_scale=64.0, snr_scale=20.0) -> np.ndarray:
    """16 per-channel weights in (0,1): sigmoid(fc2(relu(fc1([M/m_scale,
    snr_db/snr_scale]))))."""
    w1, b1 = fc1
    w2, b2 = fc2
    x = np.array([M / m_scale, snr_db / snr_scale], dtype=np.float64)
    hiddenv = np.maximum(w1 @ x + b1, 0.0)
    return 1.0 / (1.0 + np.exp(-(w2 @ hiddenv + b2)))


def dnn_m_step(mu_set, tau_set, M, snr_db, layer: LayerWeights, grid_shape,
               m_scale=64.0, snr_scale=20.0) -> np.ndarray:
    """Network gamma update: per subcarrier reshape (|mu|^2, tau) to the
    (S, Q) plane (ring-major), conv1+ReLU, average over subcarriers, channel
    attention, conv2, final ReLU; flattened back to length G."""
    S, Q = grid_shape
    G = S * Q
    K = len(mu_set)
    feats = np.zeros((S, Q, 16))
    for k in range(K):
        mu2 = (np.abs(mu_set[k]) ** 2).reshape(S, Q)
        tau = np.asarray(tau_set[k], dtype=float).reshape(S, Q)
        t = np.stack([mu2, tau], axis=-1)
        feats += np.maximum(conv2d_same(t, layer.conv1_w, layer.conv1_b), 0.0)
    feats /= K
    att = attention_weights(M, snr_db, (layer.fc1_w, layer.fc1_b), (layer.fc2_w, layer.fc2_b),
                            m_scale, snr_scale)
    out = conv2d_same(feats * att, layer.conv2_w, layer.conv2_b)
    return np.maximum(out[:, :, 0], 0.0).reshape(G)


def unfolded_forward(Y, Phi_set, sigma2, M, snr_db, model: UnfoldedModel,
                     return_trace: bool = False):
    """Full inference pass.  Returns the G x K estimate, or (estimate, trace)
    with per-layer (mu, tau, gamma) when return_trace is set.

    Raises DivergenceError if any intermediate goes non-finite; divergence is
    reported, never clipped away.
    """
    model.check()
    K = len(Phi_set)
    Mdim, G = Phi_set[0].shape
    if G != model.G:
        raise ValueError(f"model grid {model.S}x{model.Q} does not match G={G}")
    wp = WhitenedProblem.from_measurements(Y, Phi_set)
    abs_BT2 = [a.T.copy() for a in wp.abs_B2]

    mu = [np.zeros(G, dtype=complex) for _ in range(K)]
    tau_x = [np.ones(G) for _ in range(K)]
    s = [np.zeros(Mdim, dtype=complex) for _ in range(K)]
    gamma = np.ones(G)
    trace = []
    q_last = [None] * K
    tau_q_last = [None] * K

    for layer in model.layers:
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
            q_last[k] = q
            tau_q_last[k] = tau_q
            if not (np.all(np.isfinite(mu[k])) and np.all(np.isfinite(tau_x[k]))):
                raise DivergenceError("E-step produced non-finite posterior statistics")
        gamma = dnn_m_step(mu, tau_x, M, snr_db, layer, (model.S, model.Q),
                           model.att_m_scale, model.att_snr_scale)
        if not np.all(np.isfinite(gamma)):
            raise DivergenceError("network M-step produced non-finite gamma")
        if return_trace:
            trace.append({
                "mu": [m.copy() for m in mu],
                "tau": [t.copy() for t in tau_x],
                "gamma": gamma.copy(),
            })

    X = np.empty((G, K), dtype=complex)
    for k in range(K):
        den = np.maximum(1.0 + tau_q_last[k] * gamma, FLOOR)
        X[:, k] = q_last[k] / den
    if not np.all(np.isfinite(X)):
        raise DivergenceError("output re-denoising produced non-finite estimate")
    if return_trace:
        return X, trace
    return X


def reconstruct(X, dictionary) -> np.ndarray:
    """Back to antenna domain: column k = A^k x^k."""
    K = X.shape[1]
    return np.stack([dictionary.matrices[k] @ X[:, k] for k in range(K)], axis=1)


# -- serialization -----------------------------------------------------------

_NAME_RE = re.compile(r"^layer(\d+)\.(\w+)$")


def save_model(model: UnfoldedModel, path) -> None:
    """Manifest (key = value text) plus one little-endian float64 blob per
    weight tensor; round-trips bit-exactly."""
    model.check()
    os.makedirs(path, exist_ok=True)
    lines = [
        f"L = {model.L}",
        f"S = {model.S}",
        f"Q = {model.Q}",
        f"hidden = {model.hidden}",
        f"att_m_scale = {model.att_m_scale!r}",
        f"att_snr_scale = {model.att_snr_scale!r}",
        f"configs_seen = {';'.join(f'{m},{s}' for m, s in model.configs_seen)}",
    ]
    for i, layer in enumerate(model.layers):
        for name, value in layer.named():
            full = f"layer{i}.{name}"
            fname = full.replace(".", "_") + ".bin"
            lines.append(f"tensor {full} shape={','.join(map(str, value.shape))} file={fname}")
            np.ascontiguousarray(value, dtype="<f8").tofile(os.path.join(path, fname))
    with open(os.path.join(path, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> UnfoldedModel:
    with open(os.path.join(path, "manifest.txt")) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    meta = {}
    tensors = {}
    for ln in lines:
        if ln.startswith("tensor "):
            _, full, shape_s, file_s = ln.split()
            shape = tuple(int(v) for v in shape_s.split("=")[1].split(","))
            fname = file_s.split("=")[1]
            data = np.fromfile(os.path.join(path, fname), dtype="<f8").reshape(shape)
            tensors[full] = data
        else:
            key, _, value = ln.partition(" = ")
            meta[key] = value
    L = int(meta["L"])
    configs = tuple(
        (int(float(p.split(",")[0])), float(p.split(",")[1]))
        for p in meta.get("configs_seen", "").split(";")
        if p
    )
    layers = []
    for i in range(L):
        kw = {}
        for name in ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b"):
            kw[name] = tensors[f"layer{i}.{name}"]
        layers.append(LayerWeights(**kw))
    model = UnfoldedModel(
        layers=layers,
        S=int(meta["S"]),
        Q=int(meta["Q"]),
        hidden=int(meta["hidden"]),
        att_m_scale=float(meta["att_m_scale"]),
        att_snr_scale=float(meta["att_snr_scale"]),
        configs_seen=configs,
    )
    model.check()
    return model
