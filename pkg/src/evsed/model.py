"""Beta-evidence sequence model and its training loop.

The predictor is deliberately small: a linear projection of each log-mel
frame, one gated recurrent layer, and a linear head of width 2K whose
rectified outputs are the positive/negative evidence for each class
(alpha = relu + 1, beta likewise, so zero activation means total vacuity).
Backpropagation is hand-derived and checked against finite differences in
the tests; the whole loss path runs in float64 while parameters are stored
float32.

Training minimizes the expected binary cross-entropy under the predicted
Beta distribution, which collapses to digamma differences:

    y * (psi(a+b) - psi(a)) + (1-y) * (psi(a+b) - psi(b))
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import io
from .frontend import N_MELS, SEGMENT_FRAMES
from .specfun import digamma, trigamma


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")
        self.epoch = epoch


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    mel_bins: int = N_MELS
    hidden: int = 32
    context_back: int = 3
    context_forward: int = 0
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.hidden < 1:
            raise ValueError("num_classes and hidden must be >= 1")
        if self.context_back < 0 or self.context_forward < 0:
            raise ValueError("context steps must be >= 0")

    @property
    def window_segments(self) -> int:
        return self.context_back + self.context_forward + 1

    @property
    def window_frames(self) -> int:
        return self.window_segments * SEGMENT_FRAMES

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class EvidenceOutput:
    """Per-class Beta evidence for one decided segment."""

    alpha: np.ndarray
    beta: np.ndarray


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, h, k = config.mel_bins, config.hidden, config.num_classes
    shapes: dict[str, tuple[int, ...]] = {"embed_w": (d, h), "embed_b": (h,)}
    for gate in ("update", "reset", "cand"):
        shapes[f"{gate}_w"] = (h, h)
        shapes[f"{gate}_u"] = (h, h)
        shapes[f"{gate}_b"] = (h,)
    shapes["head_w"] = (h, 2 * k)
    shapes["head_b"] = (2 * k,)
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, stored float32.

    The head bias starts at +1 so every rectified evidence output is alive at
    init; with a zero start the majority-negative windows drag the positive
    heads below the kink before the encoder separates classes, and the zero
    subgradient then keeps them dead permanently.
    """
    params = {}
    for name, shape in param_shapes(config).items():
        if name == "head_b":
            params[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return params


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def forward_batch(params, windows: np.ndarray, num_classes: int, want_cache: bool = False):
    """Run the recurrent encoder over a batch of frame windows.

    windows: (B, T, mel_bins). Returns (alpha, beta) of shape (B, K) plus,
    when requested, the intermediate activations needed for backprop.
    """
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim == 2:
        w = w[None]
    batch, steps, _ = w.shape
    hdim = params["embed_b"].shape[0]

    proj = w @ params["embed_w"] + params["embed_b"]  # (B, T, H)
    h = np.zeros((batch, hdim))
    zs = np.empty((steps, batch, hdim))
    rs = np.empty_like(zs)
    cs = np.empty_like(zs)
    hs = np.empty((steps + 1, batch, hdim))
    hs[0] = h
    for t in range(steps):
        p = proj[:, t]
        z = _sigmoid(p @ params["update_w"] + h @ params["update_u"] + params["update_b"])
        r = _sigmoid(p @ params["reset_w"] + h @ params["reset_u"] + params["reset_b"])
        c = np.tanh(p @ params["cand_w"] + (r * h) @ params["cand_u"] + params["cand_b"])
        h = (1.0 - z) * h + z * c
        zs[t], rs[t], cs[t], hs[t + 1] = z, r, c, h

    logits = h @ params["head_w"] + params["head_b"]  # (B, 2K)
    evidence = np.maximum(logits, 0.0)
    alpha = evidence[:, :num_classes] + 1.0
    beta = evidence[:, num_classes:] + 1.0
    if not want_cache:
        return alpha, beta, None
    cache = {"windows": w, "proj": proj, "z": zs, "r": rs, "c": cs, "h": hs, "logits": logits}
    return alpha, beta, cache


def forward(params, window_frames: np.ndarray, num_classes: int) -> EvidenceOutput:
    """Evidence for a single feature window of shape (window_frames, mel_bins)."""
    frames = np.asarray(window_frames)
    if frames.ndim != 2 or frames.shape[1] != params["embed_w"].shape[0]:
        raise ValueError(
            f"expected (frames, {params['embed_w'].shape[0]}) window, got {frames.shape}"
        )
    alpha, beta, _ = forward_batch(params, frames[None], num_classes)
    return EvidenceOutput(alpha=alpha[0], beta=beta[0])


def _check_evidence(alpha, beta):
    if np.any(alpha < 1.0) or np.any(beta < 1.0):
        raise ValueError("evidence parameters must be >= 1")


def beta_loss(alpha, beta, labels) -> float:
    """Bayes-risk binary cross-entropy under Beta(alpha, beta), summed over
    all (segment, class) terms."""
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    _check_evidence(alpha, beta)
    psi_total = digamma(alpha + beta)
    terms = y * (psi_total - digamma(alpha)) + (1.0 - y) * (psi_total - digamma(beta))
    return float(np.sum(terms))


def beta_loss_grad(alpha, beta, labels):
    """Analytic d(loss)/d(alpha), d(loss)/d(beta), elementwise."""
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    _check_evidence(alpha, beta)
    psi1_total = trigamma(alpha + beta)
    d_alpha = psi1_total - y * trigamma(alpha)
    d_beta = psi1_total - (1.0 - y) * trigamma(beta)
    return d_alpha, d_beta


def backprop(params, windows, labels, num_classes: int):
    """Loss and parameter gradients for a batch of windows.

    The relu uses subgradient 0 at the kink. Returns (loss_sum, grads) with
    grads keyed like params, all float64.
    """
    alpha, beta, cache = forward_batch(params, windows, num_classes, want_cache=True)
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim == 1:
        y = y[None]
    loss = beta_loss(alpha, beta, y)
    d_alpha, d_beta = beta_loss_grad(alpha, beta, y)

    d_logits = np.concatenate([d_alpha, d_beta], axis=1) * (cache["logits"] > 0.0)
    h_final = cache["h"][-1]
    grads = {
        "head_w": h_final.T @ d_logits,
        "head_b": d_logits.sum(axis=0),
    }
    hdim = params["embed_b"].shape[0]
    for gate in ("update", "reset", "cand"):
        grads[f"{gate}_w"] = np.zeros((hdim, hdim))
        grads[f"{gate}_u"] = np.zeros((hdim, hdim))
        grads[f"{gate}_b"] = np.zeros(hdim)

    steps = cache["proj"].shape[1]
    d_proj = np.empty_like(cache["proj"])
    d_h = d_logits @ np.asarray(params["head_w"], dtype=np.float64).T
    for t in range(steps - 1, -1, -1):
        z, r, c = cache["z"][t], cache["r"][t], cache["c"][t]
        h_prev = cache["h"][t]
        p = cache["proj"][:, t]

        d_z = d_h * (c - h_prev)
        d_pre_c = (d_h * z) * (1.0 - c * c)
        d_rh = d_pre_c @ np.asarray(params["cand_u"], dtype=np.float64).T
        d_pre_r = (d_rh * h_prev) * r * (1.0 - r)
        d_pre_z = d_z * z * (1.0 - z)

        grads["update_w"] += p.T @ d_pre_z
        grads["update_u"] += h_prev.T @ d_pre_z
        grads["update_b"] += d_pre_z.sum(axis=0)
        grads["reset_w"] += p.T @ d_pre_r
        grads["reset_u"] += h_prev.T @ d_pre_r
        grads["reset_b"] += d_pre_r.sum(axis=0)
        grads["cand_w"] += p.T @ d_pre_c
        grads["cand_u"] += (r * h_prev).T @ d_pre_c
        grads["cand_b"] += d_pre_c.sum(axis=0)

        d_proj[:, t] = (
            d_pre_z @ np.asarray(params["update_w"], dtype=np.float64).T
            + d_pre_r @ np.asarray(params["reset_w"], dtype=np.float64).T
            + d_pre_c @ np.asarray(params["cand_w"], dtype=np.float64).T
        )
        d_h = (
            d_h * (1.0 - z)
            + d_rh * r
            + d_pre_z @ np.asarray(params["update_u"], dtype=np.float64).T
            + d_pre_r @ np.asarray(params["reset_u"], dtype=np.float64).T
        )

    flat_w = cache["windows"].reshape(-1, cache["windows"].shape[2])
    flat_dp = d_proj.reshape(-1, hdim)
    grads["embed_w"] = flat_w.T @ flat_dp
    grads["embed_b"] = flat_dp.sum(axis=0)
    return loss, grads


class Adam:
    """Standard Adam; moments kept in float64, parameters stay float32."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(v.shape) for k, v in params.items()}
        self.v = {k: np.zeros(v.shape) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            params[name] = (params[name].astype(np.float64) - update).astype(np.float32)


def _gather_windows(clip_segments, items, back, forward):
    """Stack training windows for (clip_index, segment_index) pairs."""
    span = back + forward + 1
    mel_bins = clip_segments[0].shape[2]
    out = np.empty((len(items), span * SEGMENT_FRAMES, mel_bins))
    for i, (ci, t) in enumerate(items):
        segs = clip_segments[ci]
        idx = np.maximum(np.arange(t - back, t + forward + 1), 0)
        out[i] = segs[idx].reshape(-1, mel_bins)
    return out


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    loss_trace: list[float]  # mean per-window loss per epoch


def train(config: ModelConfig, clips, initial_params=None, log_fn=None) -> TrainResult:
    """Adam over shuffled mini-batches of per-segment context windows.

    clips: sequence of (segments, labels) pairs, segments (T, 4, mel_bins)
    and labels (T, num_classes) in {0, 1}. Deterministic for a fixed config
    seed: initialization, shuffling, and summation order are all fixed.
    """
    if not clips:
        raise ValueError("training corpus is empty")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    if initial_params is None:
        params = init_params(config, rng)
    else:
        expected = param_shapes(config)
        for name, shape in expected.items():
            if name not in initial_params or tuple(initial_params[name].shape) != shape:
                raise ValueError(f"initial parameter {name!r} missing or mis-shaped")
        params = {k: v.astype(np.float32).copy() for k, v in initial_params.items()}

    back, fwd = config.context_back, config.context_forward
    index = [
        (ci, t)
        for ci, (segments, labels) in enumerate(clips)
        for t in range(segments.shape[0] - fwd)
    ]
    if not index:
        raise ValueError("no trainable windows (clips shorter than the forward context)")
    segments_list = [c[0] for c in clips]
    labels_list = [c[1] for c in clips]

    optimizer = Adam(params, learning_rate=config.learning_rate)
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(index))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            chosen = [index[i] for i in order[start : start + config.batch_size]]
            windows = _gather_windows(segments_list, chosen, back, fwd)
            labels = np.stack([labels_list[ci][t] for ci, t in chosen])
            loss, grads = backprop(params, windows, labels, config.num_classes)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch=epoch, loss=loss)
            epoch_loss += loss
            optimizer.step(params, grads)
        trace.append(epoch_loss / len(index))
        if log_fn is not None:
            log_fn(epoch, trace[-1])
    return TrainResult(params=params, loss_trace=trace)


def save_model(path, config: ModelConfig, params) -> None:
    io.save_checkpoint(path, config.to_dict(), params)


def load_model(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    """Load and validate a checkpoint; rejects bad magic and shape drift."""
    config_dict, tensors = io.load_checkpoint(path)
    config = ModelConfig.from_dict(config_dict)
    expected = param_shapes(config)
    if set(tensors) != set(expected):
        raise ValueError(
            f"checkpoint tensors {sorted(tensors)} do not match model {sorted(expected)}"
        )
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != shape:
            raise ValueError(
                f"checkpoint tensor {name!r} has shape {tensors[name].shape}, expected {shape}"
            )
    return config, tensors
