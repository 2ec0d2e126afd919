"""Training of the unfolded estimator: reverse-mode gradients through the
full L-layer computation, Adam, layer-wise growth with weight inheritance,
and weighted-NMSE mixed training across system configurations.

Complex-valued stages are differentiated by treating real and imaginary
parts as independent real variables; the loss itself is real.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import CT, Tensor
from .channel import sample_channel
from .config import DESK_M_GRID, DESK_SNR_GRID, MIDDLE_CONFIG, SystemConfig
from .dictionary import get_dictionary
from .measurement import generate_pilot_matrix, measurement_matrices, observe
from .solvers import FLOOR
from .unfolded import UnfoldedModel, init_layer, init_model

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    batch: int = 16
    max_epochs: int = 100
    lr_decay: float = 0.5
    lr_patience: int = 5            # epochs without val improvement before decay
    early_stop: int = 10            # epochs without val improvement before stage stop
    layerwise_max: int = 10
    min_layers: int = 1             # grow at least this deep before the stop rule applies
    hidden: int = 16
    config_grid: tuple = tuple((m, s) for m in DESK_M_GRID for s in DESK_SNR_GRID)
    n_train: int = 8000
    n_val: int = 1000
    n_test: int = 1000
    seed: int = 0
    optimizer: str = "adam"


@dataclass(frozen=True)
class ConfigWeightTable:
    """Loss weights a(M, snr) = baseline NMSE at the middle configuration
    divided by baseline NMSE at (M, snr); the middle point gets exactly 1."""

    weights: dict
    middle: tuple

    def weight(self, M, snr_db) -> float:
        key = (int(M), float(snr_db))
        if key not in self.weights:
            raise KeyError(f"no weight for configuration {key}")
        return self.weights[key]


def compute_config_weights(baseline_nmse: dict, middle=MIDDLE_CONFIG) -> ConfigWeightTable:
    mid_key = (int(middle[0]), float(middle[1]))
    if mid_key not in baseline_nmse:
        raise KeyError(f"middle configuration {mid_key} missing from the baseline map")
    mid = baseline_nmse[mid_key]
    weights = {}
    for key, val in baseline_nmse.items():
        if val <= 0:
            raise ValueError(f"baseline NMSE for {key} must be positive, got {val}")
        weights[(int(key[0]), float(key[1]))] = mid / val
    return ConfigWeightTable(weights=weights, middle=mid_key)


def weighted_nmse_loss(H, H_hat, M, snr_db, table: ConfigWeightTable) -> float:
    """a(M, snr) * ||H - H_hat||_F^2 / ||H||_F^2 for one sample (or the mean
    over a leading batch axis)."""
    a = table.weight(M, snr_db)
    H = np.asarray(H)
    H_hat = np.asarray(H_hat)
    if H.ndim == 2:
        return a * float(np.linalg.norm(H - H_hat) ** 2 / np.linalg.norm(H) ** 2)
    num = np.sum(np.abs(H - H_hat) ** 2, axis=(1, 2))
    den = np.sum(np.abs(H) ** 2, axis=(1, 2))
    return a * float(np.mean(num / den))


# -- problems: one measurement operator + sample pool per configuration ------


@dataclass
class ConfigProblem:
    """Everything training needs for one (M, snr) point: the fixed pilot
    matrix, whitened per-subcarrier operators, the reconstruction dictionary,
    and train/val/test channel+observation arrays."""

    M: int
    snr_db: float
    sigma2: float
    W: np.ndarray
    U: list
    B: list
    absB2: list
    absB2T: list
    A: list                           # dictionary matrices for reconstruction
    H: dict                           # split -> (n, N, K) complex
    Y: dict                           # split -> (n, M, K) complex

    def r_batch(self, Y_slice):
        """Whitened observations per subcarrier: list of (B?, M) complex."""
        return [Y_slice[..., k] @ np.conj(self.U[k]) for k in range(len(self.U))]


def make_problems(
    base_cfg: SystemConfig,
    config_grid,
    counts=(8000, 1000, 1000),
    seed: int = 0,
    dictionary_kind: str = "pd",
) -> dict:
    """Generate per-config problems with independent RNG streams derived from
    (seed, config index).  The pilot matrix is drawn once per configuration
    and shared by every sample in it, which is what lets the network learn
    the measurement operator."""
    dictionary = get_dictionary(base_cfg, dictionary_kind)
    n_train, n_val, n_test = counts
    problems = {}
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(len(config_grid))
    for ci, (M, snr_db) in enumerate(config_grid):
        rng = np.random.default_rng(children[ci])
        cfg = base_cfg.with_(M=int(M), snr_db=float(snr_db))
        W = generate_pilot_matrix(cfg.M, cfg.N, rng)
        Phi = measurement_matrices(W, dictionary)
        U, B, aB2, aB2T = [], [], [], []
        for P in Phi:
            u, _, _ = np.linalg.svd(P, full_matrices=True)
            b = u.conj().T @ P
            U.append(u)
            B.append(b)
            aB2.append(np.abs(b) ** 2)
            aB2T.append(np.ascontiguousarray(np.abs(b) ** 2).T.copy())
        H = {}
        Yd = {}
        for split, n in (("train", n_train), ("val", n_val), ("test", n_test)):
            Hs = np.empty((n, cfg.N, cfg.K), dtype=complex)
            Ys = np.empty((n, cfg.M, cfg.K), dtype=complex)
            for i in range(n):
                Hs[i] = sample_channel(cfg, rng).H
                Ys[i] = observe(Hs[i], W, cfg.sigma2, rng)
            H[split] = Hs
            Yd[split] = Ys
        problems[(int(M), float(snr_db))] = ConfigProblem(
            M=int(M), snr_db=float(snr_db), sigma2=cfg.sigma2, W=W, U=U, B=B,
            absB2=aB2, absB2T=aB2T, A=list(dictionary.matrices), H=H, Y=Yd,
        )
    return problems


# -- autodiff forward ---------------------------------------------------------


def make_layer_tensors(model: UnfoldedModel):
    """Wrap every weight of every layer in a gradient-tracking Tensor."""
    out = []
    for layer in model.layers:
        out.append({name: Tensor(value, requires_grad=True) for name, value in layer.named()})
    return out


def tensors_to_model(layer_tensors, template: UnfoldedModel) -> UnfoldedModel:
    model = template.copy()
    for layer, tens in zip(model.layers, layer_tensors):
        for name in PARAM_NAMES:
            setattr(layer, name, tens[name].data.copy())
    return model


def _dnn_gamma(layer_t, mu_abs2_list, tau_list, M, snr_db, S, Q, m_scale, snr_scale):
    """Batched Eq.-style network M-step on Tensors; returns gamma (B, G)."""
    K = len(mu_abs2_list)
    feats = None
    for k in range(K):
        mu2 = ad.reshape(mu_abs2_list[k], (-1, S, Q))
        tau = ad.reshape(tau_list[k], (-1, S, Q))
        t = ad.stack([mu2, tau], axis=-1)
        f = ad.relu(ad.conv2d(t, layer_t["conv1_w"], layer_t["conv1_b"]))
        feats = f if feats is None else ad.add(feats, f)
    feats = ad.mul(feats, 1.0 / K)
    x_att = np.array([M / m_scale, snr_db / snr_scale])
    hidden = ad.relu(ad.add(ad.matmul(layer_t["fc1_w"], x_att), layer_t["fc1_b"]))
    att = ad.sigmoid(ad.add(ad.matmul(layer_t["fc2_w"], hidden), layer_t["fc2_b"]))
    scaled = ad.mul(feats, att)
    out = ad.relu(ad.conv2d(scaled, layer_t["conv2_w"], layer_t["conv2_b"]))
    return ad.reshape(out, (-1, S * Q))


def forward_graph(layer_tensors, problem: ConfigProblem, Y_slice, S, Q,
                  m_scale=64.0, snr_scale=20.0):
    """Differentiable batched forward pass.  Returns per-subcarrier output
    CTs (B, G), mirroring unfolded_forward arithmetic exactly."""
    K = len(problem.B)
    G = S * Q
    Bn = Y_slice.shape[0]
    r_list = [CT.from_complex(r) for r in problem.r_batch(Y_slice)]
    Bt = [np.ascontiguousarray(problem.B[k].T) for k in range(K)]
    Bc = [np.ascontiguousarray(problem.B[k].conj()) for k in range(K)]

    mu = [CT(np.zeros((Bn, G)), np.zeros((Bn, G))) for _ in range(K)]
    tau_x = [Tensor(np.ones((Bn, G))) for _ in range(K)]
    s = [CT(np.zeros((Bn, problem.M)), np.zeros((Bn, problem.M))) for _ in range(K)]
    gamma = Tensor(np.ones((Bn, G)))
    q_last = [None] * K
    tau_q_last = [None] * K

    for layer_t in layer_tensors:
        mu_abs2 = [None] * K
        for k in range(K):
            tau_p = ad.matmul(tau_x[k], problem.absB2[k].T)
            p = c_sub_ct(ad_c_matmul(mu[k], Bt[k]), c_mul(tau_p, s[k]))
            tau_s = recip_floor(ad.add(tau_p, problem.sigma2))
            s[k] = c_mul(tau_s, c_sub_ct(r_list[k], p))
            tau_q = recip_floor(ad.matmul(tau_s, problem.absB2[k]))
            q = c_add_ct(mu[k], c_mul(tau_q, ad_c_matmul(s[k], Bc[k])))
            den = ad.maximum_const(ad.add(ad.mul(tau_q, gamma), 1.0), FLOOR)
            mu[k] = c_div(q, den)
            tau_x[k] = ad.div(tau_q, den)
            q_last[k] = q
            tau_q_last[k] = tau_q
            mu_abs2[k] = ad.c_abs2(mu[k])
        gamma = _dnn_gamma(layer_t, mu_abs2, tau_x, problem.M, problem.snr_db,
                           S, Q, m_scale, snr_scale)

    out = []
    for k in range(K):
        den = ad.maximum_const(ad.add(ad.mul(tau_q_last[k], gamma), 1.0), FLOOR)
        out.append(c_div(q_last[k], den))
    return out


# thin aliases keeping forward_graph readable
def c_sub_ct(a, b):
    return ad.c_sub(a, b)


def c_add_ct(a, b):
    return ad.c_add(a, b)


def c_mul(r, a):
    return ad.c_mul_real(r, a)


def c_div(a, r):
    return ad.c_div_real(a, r)


def ad_c_matmul(a, Bconst):
    return ad.c_matmul_const(a, Bconst)


def recip_floor(t):
    return ad.div(1.0, ad.maximum_const(t, FLOOR))


def batch_loss(layer_tensors, problem: ConfigProblem, H_slice, Y_slice, S, Q,
               weight_a=1.0, m_scale=64.0, snr_scale=20.0) -> Tensor:
    """Weighted NMSE of the reconstructed subchannels over one batch."""
    out = forward_graph(layer_tensors, problem, Y_slice, S, Q, m_scale, snr_scale)
    K = len(out)
    den = np.sum(np.abs(H_slice) ** 2, axis=(1, 2))
    num = None
    for k in range(K):
        At = np.ascontiguousarray(problem.A[k].T)  # (G, N)
        Hhat_k = ad.c_matmul_const(out[k], At)
        err = ad.c_sub(CT.from_complex(H_slice[:, :, k]), Hhat_k)
        sq = ad.tsum(ad.c_abs2(err), axis=1)
        num = sq if num is None else ad.add(num, sq)
    loss = ad.mul(ad.mean_all(ad.div(num, den)), float(weight_a))
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite training loss (divergent forward pass)")
    return loss


def backward(layer_tensors, loss: Tensor):
    """Reverse-mode gradients of the batch loss for every weight tensor.
    Returns a list of dicts shaped exactly like the layer tensors."""
    loss.backward()
    grads = []
    for tens in layer_tensors:
        grads.append({
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in tens.items()
        })
    return grads


# -- optimizers ----------------------------------------------------------------


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One standard Adam update over a dict of arrays; state carries (t, m, v)
    and is created on first use."""
    if not state:
        state["t"] = 0
        state["m"] = {k: np.zeros_like(v) for k, v in params.items()}
        state["v"] = {k: np.zeros_like(v) for k, v in params.items()}
    state["t"] += 1
    t = state["t"]
    for k in params:
        g = grads[k]
        state["m"][k] = beta1 * state["m"][k] + (1 - beta1) * g
        state["v"][k] = beta2 * state["v"][k] + (1 - beta2) * g * g
        m_hat = state["m"][k] / (1 - beta1**t)
        v_hat = state["v"][k] / (1 - beta2**t)
        params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def sgd_step(params, grads, state, lr, momentum=0.0):
    if momentum > 0 and not state:
        state["v"] = {k: np.zeros_like(v) for k, v in params.items()}
    for k in params:
        if momentum > 0:
            state["v"][k] = momentum * state["v"][k] + grads[k]
            params[k] = params[k] - lr * state["v"][k]
        else:
            params[k] = params[k] - lr * grads[k]
    return params, state


def make_optimizer(name: str):
    name = name.lower()
    if name == "adam":
        return adam_step
    if name == "sgd":
        return lambda p, g, s, lr: sgd_step(p, g, s, lr, momentum=0.0)
    if name == "momentum":
        return lambda p, g, s, lr: sgd_step(p, g, s, lr, momentum=0.9)
    raise ValueError(f"unknown optimizer {name!r}")


# -- evaluation ----------------------------------------------------------------


def evaluate_nmse(model: UnfoldedModel, problem: ConfigProblem, split="val", limit=None):
    """Mean linear NMSE of the model on one problem split (inference path,
    batched through the autodiff-free forward via the training graph shapes)."""
    H = problem.H[split]
    Y = problem.Y[split]
    if limit is not None:
        H, Y = H[:limit], Y[:limit]
    layer_tensors = [
        {name: Tensor(value) for name, value in layer.named()} for layer in model.layers
    ]
    out = forward_graph(layer_tensors, problem, Y, model.S, model.Q,
                        model.att_m_scale, model.att_snr_scale)
    K = len(out)
    Hhat = np.stack([problem.A[k] @ out[k].value().T for k in range(K)], axis=2).transpose(1, 0, 2)
    num = np.sum(np.abs(H - Hhat) ** 2, axis=(1, 2))
    den = np.sum(np.abs(H) ** 2, axis=(1, 2))
    return float(np.mean(num / den))


# -- training loops -------------------------------------------------------------


def _epoch_batches(problems, split, batch, rng):
    """Deterministic batch plan: per-config shuffled sample indices chopped
    into single-config batches, then the batch order shuffled."""
    plan = []
    for key, prob in problems.items():
        n = prob.H[split].shape[0]
        idx = rng.permutation(n)
        for start in range(0, n - batch + 1, batch):
            plan.append((key, idx[start : start + batch]))
    order = rng.permutation(len(plan))
    return [plan[i] for i in order]


def _val_metric(model, problems, table=None):
    """Scalar validation figure: weighted (or plain) mean of per-config val
    NMSE; also returns the per-config map."""
    per_cfg = {}
    total = 0.0
    for key, prob in problems.items():
        v = evaluate_nmse(model, prob, "val")
        per_cfg[key] = v
        a = table.weight(*key) if table is not None else 1.0
        total += a * v
    return total / len(problems), per_cfg


def train_stage(model: UnfoldedModel, problems, cfg: TrainConfig, rng,
                table: ConfigWeightTable | None = None, log=None, stage=0):
    """Train all layers jointly until early stopping; returns the best model
    (by validation metric) and its metric."""
    layer_tensors = make_layer_tensors(model)
    params = {
        f"layer{i}.{name}": tens[name].data
        for i, tens in enumerate(layer_tensors)
        for name in PARAM_NAMES
    }
    step = make_optimizer(cfg.optimizer)
    state: dict = {}
    lr = cfg.lr0
    best_metric, per_cfg = _val_metric(tensors_to_model(layer_tensors, model), problems, table)
    best_model = tensors_to_model(layer_tensors, model)
    stall = 0
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for key, idx in _epoch_batches(problems, "train", cfg.batch, rng):
            prob = problems[key]
            a = table.weight(*key) if table is not None else 1.0
            for tens in layer_tensors:
                for t in tens.values():
                    t.grad = None
            loss = batch_loss(layer_tensors, prob, prob.H["train"][idx], prob.Y["train"][idx],
                              model.S, model.Q, a, model.att_m_scale, model.att_snr_scale)
            grads_list = backward(layer_tensors, loss)
            grads = {
                f"layer{i}.{name}": grads_list[i][name]
                for i in range(len(grads_list))
                for name in PARAM_NAMES
            }
            params, state = step(params, grads, state, lr)
            for i, tens in enumerate(layer_tensors):
                for name in PARAM_NAMES:
                    tens[name].data = params[f"layer{i}.{name}"]
            losses.append(loss.data.item())
        cur = tensors_to_model(layer_tensors, model)
        metric, per_cfg = _val_metric(cur, problems, table)
        if log is not None:
            log.append({
                "stage": stage, "epoch": epoch, "lr": lr,
                "train_loss": float(np.mean(losses)), "val_metric": metric,
                "val_per_config": dict(per_cfg),
            })
        if metric < best_metric * (1 - 1e-4):
            best_metric = metric
            best_model = cur
            stall = 0
        else:
            stall += 1
            if stall % cfg.lr_patience == 0:
                lr *= cfg.lr_decay
            if stall >= cfg.early_stop:
                break
    return best_model, best_metric


def layerwise_train(problems, cfg: TrainConfig, *, table=None, S=None, Q=None,
                    m_scale=64.0, snr_scale=20.0):
    """Grow the network one layer at a time.  Stage j trains a j-layer model
    (all layers jointly); the new layer is initialized from the previous
    last layer's weights.  Growth stops when validation stops improving
    (after at least cfg.min_layers stages) and the best shallower model is
    returned together with the training log."""
    if not problems:
        raise ValueError("empty problem set")
    if S is None or Q is None:
        raise ValueError("grid shape (S, Q) is required")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    model = init_model(S, Q, 1, rng, cfg.hidden)
    model.att_m_scale = m_scale
    model.att_snr_scale = snr_scale
    model.configs_seen = tuple(problems.keys())
    log: list = []
    best_model, best_metric = train_stage(model, problems, cfg, rng, table, log, stage=1)
    stage_metrics = [best_metric]
    for stage in range(2, cfg.layerwise_max + 1):
        grown = best_model.copy()
        grown.layers.append(grown.layers[-1].copy())
        cand_model, cand_metric = train_stage(grown, problems, cfg, rng, table, log, stage=stage)
        stage_metrics.append(cand_metric)
        if cand_metric < best_metric:
            best_model, best_metric = cand_model, cand_metric
        elif stage > cfg.min_layers:
            break
    return best_model, {"log": log, "stage_metrics": stage_metrics}


def mixed_train(problems, table: ConfigWeightTable, cfg: TrainConfig, *, S=None, Q=None,
                m_scale=64.0, snr_scale=20.0):
    """Mixed training over the config grid with the weighted NMSE loss;
    every sample must belong to a configuration present in the table."""
    for key in problems:
        table.weight(*key)
    return layerwise_train(problems, cfg, table=table, S=S, Q=Q,
                           m_scale=m_scale, snr_scale=snr_scale)


def write_training_log(log, path):
    """Line-delimited key=value text, one line per epoch."""
    with open(path, "w") as fh:
        for row in log:
            parts = [
                f"stage={row['stage']}",
                f"epoch={row['epoch']}",
                f"lr={row['lr']:.6g}",
                f"train_loss={row['train_loss']:.8g}",
                f"val_metric={row['val_metric']:.8g}",
            ]
            for key, v in sorted(row["val_per_config"].items()):
                parts.append(f"val[M={key[0]},snr={key[1]:g}]={v:.8g}")
            fh.write(" ".join(parts) + "\n")
