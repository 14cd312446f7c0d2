"""Byte-window convolutional classifier: build, train, defend, checkpoint.

Architecture family: embedding over the 257-token vocabulary, one to four
1-D conv layers (stride 4) with ReLU, global average pooling, one to four
dense layers, softmax output. The same forward pass exists twice: a plain
numpy path for fast inference/candidate scoring, and an ndgrad graph for
training and input gradients; both produce bit-identical logits.

Training is plain mini-batch gradient descent with momentum (fixed step
size). The checkpoint format is binary, versioned, little-endian, with
weights stored as float32 arrays in canonical name order; round-trips are
prediction-bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from bytelab import ndgrad as ng
from bytelab.fileforge import derive_rng
from bytelab.windowing import (
    PAD,
    WINDOW_LEN,
    AesConfig,
    ByteWindow,
    WindowSpec,
    encrypt_blocks,
    extract,
    key_schedule,
)

CONV_STRIDE = 4
CHECKPOINT_MAGIC = b"BYTECLF1"
CHECKPOINT_VERSION = 1

DEFAULT_LABELS = ("bin", "csv", "elf", "gif", "html", "js", "json", "pdf", "png", "tar", "txt", "zip")


class TrainingDiverged(ArithmeticError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ArchDescriptor:
    embed_dim: int = 32
    conv_layers: tuple[tuple[int, int], ...] = ((12, 64), (12, 64))
    dense_layers: tuple[int, ...] = (128,)
    n_classes: int = len(DEFAULT_LABELS)
    vocab_size: int = 257
    pool: str = "max"  # global max or average pooling over conv positions

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(tuple(c) for c in self.conv_layers))
        object.__setattr__(self, "dense_layers", tuple(self.dense_layers))
        if not 1 <= len(self.conv_layers) <= 4:
            raise ValueError("conv depth must lie in [1, 4]")
        if not 1 <= len(self.dense_layers) <= 4:
            raise ValueError("dense depth must lie in [1, 4]")
        for k, c in self.conv_layers:
            if not 8 <= k <= 16:
                raise ValueError("kernel sizes must lie in [8, 16]")
            if c < 1:
                raise ValueError("channel counts must be positive")
        if self.embed_dim < 1 or self.n_classes < 2 or self.vocab_size != PAD + 1:
            raise ValueError("bad embed_dim / n_classes / vocab_size")
        if self.pool not in ("max", "avg"):
            raise ValueError("pool must be 'max' or 'avg'")
        length = WINDOW_LEN
        for k, _ in self.conv_layers:
            length = (length - k) // CONV_STRIDE + 1
            if length < 1:
                raise ValueError("conv stack does not fit the 1536-token window")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "conv_layers": [list(c) for c in self.conv_layers],
            "dense_layers": list(self.dense_layers),
            "n_classes": self.n_classes,
            "vocab_size": self.vocab_size,
            "pool": self.pool,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchDescriptor":
        return cls(
            embed_dim=int(d["embed_dim"]),
            conv_layers=tuple((int(k), int(c)) for k, c in d["conv_layers"]),
            dense_layers=tuple(int(w) for w in d["dense_layers"]),
            n_classes=int(d["n_classes"]),
            vocab_size=int(d["vocab_size"]),
            pool=str(d.get("pool", "avg")),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {"embed": (self.vocab_size, self.embed_dim)}
        d_in = self.embed_dim
        for i, (k, c) in enumerate(self.conv_layers):
            shapes[f"conv{i}.w"] = (k * d_in, c)
            shapes[f"conv{i}.b"] = (c,)
            d_in = c
        for j, width in enumerate(self.dense_layers):
            shapes[f"dense{j}.w"] = (d_in, width)
            shapes[f"dense{j}.b"] = (width,)
            d_in = width
        shapes["out.w"] = (d_in, self.n_classes)
        shapes["out.b"] = (self.n_classes,)
        return shapes


def init_weights(arch: ArchDescriptor, seed: int) -> dict[str, np.ndarray]:
    """Deterministic uniform(+-sqrt(6/(fan_in+fan_out))) init from a named counter-based stream."""
    weights: dict[str, np.ndarray] = {}
    for name, shape in arch.weight_shapes().items():
        rng = derive_rng("init", seed, name)
        if name.endswith(".b"):
            weights[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in, fan_out = shape[0], shape[-1]
            bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
            weights[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return weights


@dataclass
class ClassifierModel:
    arch: ArchDescriptor
    weights: dict[str, np.ndarray]
    window: WindowSpec = field(default_factory=WindowSpec)
    aes: AesConfig | None = None
    labels: tuple[str, ...] = DEFAULT_LABELS

    def __post_init__(self):
        if len(self.labels) != self.arch.n_classes:
            raise ValueError("label list length must equal n_classes")
        if self.aes is not None:
            for b in (self.window.b1, self.window.b2, self.window.b3):
                if b % 16:
                    raise ValueError("AES preprocessing requires slice lengths divisible by 16")
        self._round_keys = key_schedule(self.aes.key) if self.aes else None

    def clone(self) -> "ClassifierModel":
        return ClassifierModel(
            arch=self.arch,
            weights={k: v.copy() for k, v in self.weights.items()},
            window=self.window,
            aes=self.aes,
            labels=self.labels,
        )

    def label_index(self, label: str) -> int:
        return self.labels.index(label)


def build(arch: ArchDescriptor, seed: int, window: WindowSpec | None = None,
          aes: AesConfig | None = None, labels: tuple[str, ...] = DEFAULT_LABELS) -> ClassifierModel:
    return ClassifierModel(
        arch=arch,
        weights=init_weights(arch, seed),
        window=window or WindowSpec(),
        aes=aes,
        labels=labels,
    )


# --------------------------------------------------------------------------
# token pipelines


def encode_plain(model: ClassifierModel, plain_tokens: np.ndarray) -> np.ndarray:
    """Apply the model's AES step (if any) to plain window tokens [..., 1536]."""
    if model.aes is None:
        return plain_tokens
    flat = plain_tokens.reshape(-1, WINDOW_LEN)
    out = flat.copy()
    rk, rounds = model._round_keys, model.aes.rounds
    for ws, we in model.window.slice_offsets():
        seg = out[:, ws:we]
        real = (seg != PAD).sum(axis=1)  # live tokens form a prefix of each slice
        padded = -(-real // 16) * 16
        max_pad = int(padded.max(initial=0))
        if max_pad == 0:
            continue
        sub = seg[:, :max_pad]
        buf = np.where(sub != PAD, sub, 0).astype(np.uint8)
        enc = encrypt_blocks(buf.reshape(-1, 16), rk, rounds).reshape(sub.shape)
        mask = np.arange(max_pad)[None, :] < padded[:, None]
        sub[mask] = enc[mask].astype(np.int16)
    return out.reshape(plain_tokens.shape)


def window_tokens(model: ClassifierModel, data: bytes) -> np.ndarray:
    """File bytes -> model input tokens (extract, then AES if configured)."""
    w = extract(data, model.window)
    return encode_plain(model, w.tokens[None, :])[0]


# --------------------------------------------------------------------------
# forward passes (numpy fast path and ndgrad graph; bit-identical)


def forward_np(model: ClassifierModel, tokens: np.ndarray) -> np.ndarray:
    """Logits for model-input tokens [B, 1536]; plain numpy, no graph."""
    w = model.weights
    x = w["embed"][tokens]
    for i in range(len(model.arch.conv_layers)):
        k = model.arch.conv_layers[i][0]
        u = ng.sliding_windows(x, k, CONV_STRIDE)
        B, Lo, KD = u.shape
        h = (u.reshape(-1, KD) @ w[f"conv{i}.w"]).reshape(B, Lo, -1) + w[f"conv{i}.b"]
        x = h * (h > 0)
    if model.arch.pool == "max":
        pooled = x.max(axis=1)
    else:
        n = x.shape[1]
        pooled = (x.sum(axis=1, dtype=np.float64).astype(x.dtype)) * x.dtype.type(1.0 / n)
    h = pooled
    for j in range(len(model.arch.dense_layers)):
        z = h @ w[f"dense{j}.w"] + w[f"dense{j}.b"]
        h = z * (z > 0)
    return h @ w["out.w"] + w["out.b"]


def loss_graph(
    model: ClassifierModel,
    tokens: np.ndarray,
    onehot: np.ndarray,
    weight_tensors: dict[str, ng.Tensor] | None = None,
    embed_leaf: ng.Tensor | None = None,
) -> tuple[ng.Tensor, dict[str, ng.Tensor], ng.Tensor]:
    """Cross-entropy graph; returns (mean loss, weight tensors, embedding activations).

    `embed_leaf` replaces the embedding lookup with a caller-owned leaf so
    input gradients can be taken; otherwise the lookup is part of the graph.
    """
    wt = weight_tensors or {
        name: ng.Tensor(arr, requires_grad=True) for name, arr in model.weights.items()
    }
    if embed_leaf is not None:
        x = embed_leaf
    else:
        x = ng.embedding(tokens, wt["embed"])
    for i in range(len(model.arch.conv_layers)):
        k = model.arch.conv_layers[i][0]
        u = ng.unfold1d(x, k, CONV_STRIDE)
        h = ng.add(ng.matmul(u, wt[f"conv{i}.w"]), wt[f"conv{i}.b"])
        x = ng.relu(h)
    pooled = ng.gmax(x, axis=1) if model.arch.pool == "max" else ng.tmean(x, axis=1)
    h = pooled
    for j in range(len(model.arch.dense_layers)):
        z = ng.add(ng.matmul(h, wt[f"dense{j}.w"]), wt[f"dense{j}.b"])
        h = ng.relu(z)
    logits = ng.add(ng.matmul(h, wt["out.w"]), wt["out.b"])
    loss = ng.softmax_cross_entropy(logits, onehot)
    return loss, wt, x if embed_leaf is None else embed_leaf


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_batch(model: ClassifierModel, tokens: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(argmax indices, probability rows) for model-input tokens [B, 1536]."""
    if tokens.min() < 0 or tokens.max() > PAD:
        raise ValueError("token out of [0, 256]")
    probs = softmax_np(forward_np(model, tokens))
    return probs.argmax(axis=-1), probs


def predict(model: ClassifierModel, window: ByteWindow) -> tuple[str, np.ndarray]:
    """Label and probability vector for one extracted (pre-AES) window."""
    if window.tokens.shape != (WINDOW_LEN,):
        raise ValueError(f"window must hold exactly {WINDOW_LEN} tokens")
    tokens = encode_plain(model, window.tokens[None, :])
    idx, probs = predict_batch(model, tokens)
    return model.labels[int(idx[0])], probs[0]


def predict_file(model: ClassifierModel, data: bytes) -> tuple[str, np.ndarray]:
    return predict(model, extract(data, model.window))


def accuracy(model: ClassifierModel, tokens: np.ndarray, labels: np.ndarray,
             batch_size: int = 512) -> float:
    hits = 0
    for i in range(0, len(tokens), batch_size):
        idx, _ = predict_batch(model, tokens[i : i + batch_size])
        hits += int((idx == labels[i : i + batch_size]).sum())
    return hits / max(1, len(tokens))


# --------------------------------------------------------------------------
# datasets


@dataclass
class WindowDataset:
    """Plain (pre-AES) window tokens plus integer labels."""

    tokens: np.ndarray  # int16 [N, 1536]
    labels: np.ndarray  # int64 [N]

    def __len__(self) -> int:
        return len(self.labels)


def make_dataset(pairs: list[tuple[bytes, str]], window: WindowSpec,
                 labels: tuple[str, ...] = DEFAULT_LABELS) -> WindowDataset:
    toks = np.stack([extract(data, window).tokens for data, _ in pairs])
    idx = np.array([labels.index(lbl) for _, lbl in pairs], dtype=np.int64)
    return WindowDataset(tokens=toks, labels=idx)


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 20
    batch_size: int = 64
    step_size: float = 0.3
    momentum: float = 0.9
    clip_norm: float = 1.0  # global gradient-norm cap; <=0 disables
    weight_decay: float = 0.0  # optional decoupled L2 shrink per step
    adv_budget: int = 0
    unpair_lambda: float = 0.0
    unpair_epochs: int = 10
    attack_self: bool = False  # adversarial training against the in-training model
    adv_candidates: int = 8

    def __post_init__(self):
        if not 1 <= self.epochs <= 100:
            raise ValueError("epochs must lie in [1, 100]")
        if self.adv_budget not in (0, 5, 10, 15):
            raise ValueError("adversarial budget must be one of {0, 5, 10, 15}")
        if self.unpair_lambda < 0:
            raise ValueError("unpair_lambda must be non-negative")


@dataclass
class TrainLogRow:
    epoch: int
    train_loss: float
    test_accuracy: float
    mean_cs: float = float("nan")

    def as_csv(self) -> str:
        cs = "" if np.isnan(self.mean_cs) else f"{self.mean_cs:.6f}"
        return f"{self.epoch},{self.train_loss:.6f},{self.test_accuracy:.6f},{cs}"


def _check_finite_loss(value: float) -> float:
    if not np.isfinite(value):
        raise TrainingDiverged(f"loss became non-finite: {value}")
    return value


def _sgd_step(weights, grads, velocity, lr: float, mu: float,
              clip_norm: float = 0.0, weight_decay: float = 0.0) -> None:
    if clip_norm > 0:
        total = float(
            np.sqrt(sum(np.sum(g.astype(np.float64) ** 2) for g in grads.values()))
        )
        if total > clip_norm:
            scale = np.float32(clip_norm / total)
            grads = {n: g * scale for n, g in grads.items()}
    shrink = np.float32(1.0 - lr * weight_decay)
    for name, g in grads.items():
        v = velocity[name]
        v *= mu
        v -= lr * g
        if weight_decay > 0 and not name.endswith(".b"):
            weights[name] *= shrink
        weights[name] += v


def train(model: ClassifierModel, train_ds: WindowDataset, test_ds: WindowDataset,
          cfg: TrainConfig) -> tuple[ClassifierModel, list[TrainLogRow]]:
    """Clean training; returns the epoch checkpoint with the best test accuracy."""
    if len(train_ds) == 0:
        raise ValueError("empty training corpus")
    if cfg.adv_budget != 0:
        raise ValueError("train() is clean training; use adversarial_train for adv_budget > 0")
    work = model.clone()
    enc_train = encode_plain(work, train_ds.tokens)
    enc_test = encode_plain(work, test_ds.tokens) if len(test_ds) else enc_train
    test_labels = test_ds.labels if len(test_ds) else train_ds.labels
    onehot_all = np.eye(model.arch.n_classes, dtype=np.float32)
    velocity = {k: np.zeros_like(v) for k, v in work.weights.items()}
    best_acc, best_weights, log = -1.0, None, []
    for epoch in range(cfg.epochs):
        order = derive_rng("shuffle", cfg.seed, epoch).permutation(len(train_ds))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            batch = order[i : i + cfg.batch_size]
            loss, wt, _ = loss_graph(work, enc_train[batch], onehot_all[train_ds.labels[batch]])
            losses.append(_check_finite_loss(float(loss.data)))
            grads = ng.backward(loss, list(wt.values()))
            grad_map = {name: g.data for name, g in zip(wt.keys(), grads)}
            _sgd_step(work.weights, grad_map, velocity, cfg.step_size, cfg.momentum, cfg.clip_norm, cfg.weight_decay)
        acc = accuracy(work, enc_test, test_labels)
        log.append(TrainLogRow(epoch=epoch, train_loss=float(np.mean(losses)), test_accuracy=acc))
        if acc > best_acc:
            best_acc = acc
            best_weights = {k: v.copy() for k, v in work.weights.items()}
    work.weights = best_weights
    return work, log


# --------------------------------------------------------------------------
# attack-side gradients shared by adversarial training and the attacks module


def attack_loss_np(model: ClassifierModel, tokens: np.ndarray, label_idx: int,
                   target_idx: int | None = None) -> np.ndarray:
    """Per-row attack loss for model-input tokens [B, 1536].

    Untargeted: negative cross-entropy of the true label (minimizing drives
    the true probability down). Targeted: cross-entropy toward the target.
    Computed as -log1p(sum_j exp(z_j - z_anchor)) in float64: a saturated
    softmax (p_anchor ~ 1) still yields a usable ranking signal instead of
    underflowing to exactly zero.
    """
    logits = forward_np(model, tokens).astype(np.float64)
    anchor = label_idx if target_idx is None else target_idx
    z = logits - logits[:, [anchor]]
    z[:, anchor] = -np.inf
    with np.errstate(over="ignore"):
        s = np.exp(z).sum(axis=1)
    logp_anchor = -np.log1p(s)
    return logp_anchor if target_idx is None else -logp_anchor


def _f64_weights(model: ClassifierModel) -> dict[str, ng.Tensor]:
    return {n: ng.Tensor(arr.astype(np.float64), requires_grad=True) for n, arr in model.weights.items()}


def embed_gradient_np(model: ClassifierModel, tokens: np.ndarray, label_idx: int,
                      target_idx: int | None = None) -> tuple[float, np.ndarray]:
    """(attack loss, d CE_anchor / d embedding) for one input, hand-rolled in float64.

    Same quantity as the ndgrad path in `input_gains` but ~an order of
    magnitude faster; equality is pinned by tests.
    """
    w = model.weights
    arch = model.arch
    x = w["embed"].astype(np.float64)[tokens][None, :]
    acts = [x]
    pre = []
    for i in range(len(arch.conv_layers)):
        k = arch.conv_layers[i][0]
        u = ng.sliding_windows(np.ascontiguousarray(acts[-1]), k, CONV_STRIDE)
        z = u.reshape(-1, u.shape[-1]) @ w[f"conv{i}.w"].astype(np.float64)
        z = z.reshape(1, u.shape[1], -1) + w[f"conv{i}.b"].astype(np.float64)
        pre.append((u, z))
        acts.append(z * (z > 0))
    h = acts[-1]
    if arch.pool == "max":
        arg = h.argmax(axis=1)
        pooled = np.take_along_axis(h, arg[:, None, :], axis=1)[:, 0, :]
    else:
        pooled = h.mean(axis=1)
    dense_pre = []
    d = pooled
    for j in range(len(arch.dense_layers)):
        z = d @ w[f"dense{j}.w"].astype(np.float64) + w[f"dense{j}.b"].astype(np.float64)
        dense_pre.append((d, z))
        d = z * (z > 0)
    logits = d @ w["out.w"].astype(np.float64) + w["out.b"].astype(np.float64)

    anchor = label_idx if target_idx is None else target_idx
    zz = logits - logits[:, [anchor]]
    zz[:, anchor] = -np.inf
    with np.errstate(over="ignore"):
        s_exp = np.exp(zz)
    ce = float(np.log1p(s_exp.sum()))

    # backward of CE_anchor: dlogits = softmax - onehot(anchor)
    zs = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(zs)
    p /= p.sum(axis=1, keepdims=True)
    p[0, anchor] -= 1.0
    g = p @ w["out.w"].astype(np.float64).T
    for j in range(len(arch.dense_layers) - 1, -1, -1):
        d_in, z = dense_pre[j]
        g = g * (z > 0)
        g = g @ w[f"dense{j}.w"].astype(np.float64).T
    if arch.pool == "max":
        gh = np.zeros_like(h)
        np.put_along_axis(gh, arg[:, None, :], g[:, None, :], axis=1)
    else:
        gh = np.repeat(g[:, None, :], h.shape[1], axis=1) / h.shape[1]
    for i in range(len(arch.conv_layers) - 1, -1, -1):
        u, z = pre[i]
        gz = gh * (z > 0)
        k = arch.conv_layers[i][0]
        gu = gz.reshape(-1, gz.shape[-1]) @ w[f"conv{i}.w"].astype(np.float64).T
        gu = gu.reshape(1, z.shape[1], k, -1)
        length = acts[i].shape[1]
        gx = np.zeros_like(acts[i])
        for j in range(k):
            gx[:, j : j + CONV_STRIDE * z.shape[1] : CONV_STRIDE, :] += gu[:, :, j, :]
        gh = gx
    sign = -1.0 if target_idx is None else 1.0
    return sign * ce, gh[0]


def input_gains(model: ClassifierModel, tokens: np.ndarray, label_idx: int,
                target_idx: int | None = None) -> tuple[float, np.ndarray]:
    """Attack loss and its one-hot linearization for one input [1536].

    Returns (loss, gains[1536, vocab]) where gains[p, v] approximates the
    loss change of substituting value v at position p: g_e[p] . (E[v] - E[cur]).
    The pass runs in float64 so the gradient of a saturated softmax
    survives instead of rounding to zero.
    """
    loss, grad = embed_gradient_np(model, tokens, label_idx, target_idx)
    sign = -1.0 if target_idx is None else 1.0  # untargeted loss = -CE(true)
    gains_abs = sign * (grad @ model.weights["embed"].astype(np.float64).T)
    cur = gains_abs[np.arange(tokens.shape[0]), tokens]
    return loss, gains_abs - cur[:, None]


def input_gains_graph(model: ClassifierModel, tokens: np.ndarray, label_idx: int,
                      target_idx: int | None = None) -> tuple[float, np.ndarray]:
    """Reference ndgrad implementation of `input_gains` (kept for cross-checks)."""
    onehot = np.zeros((1, model.arch.n_classes), dtype=np.float64)
    onehot[0, label_idx if target_idx is None else target_idx] = 1.0
    wt = _f64_weights(model)
    e_np = wt["embed"].data[tokens[None, :]]
    e_leaf = ng.Tensor(e_np, requires_grad=True)
    ce, _, _ = loss_graph(model, tokens[None, :], onehot, weight_tensors=wt, embed_leaf=e_leaf)
    (g_e,) = ng.backward(ce, [e_leaf])
    grad = g_e.data[0]
    sign = -1.0 if target_idx is None else 1.0
    loss = sign * float(ce.data)
    gains_abs = sign * (grad @ wt["embed"].data.T)
    cur = gains_abs[np.arange(tokens.shape[0]), tokens]
    return loss, gains_abs - cur[:, None]


# --------------------------------------------------------------------------
# adversarial training


def _craft_batch(attack_model: ClassifierModel, plain: np.ndarray, labels: np.ndarray,
                 budget: int, rng: np.random.Generator, n_candidates: int) -> np.ndarray:
    """Greedy per-sample perturbation of plain window tokens against attack_model.

    One coordinate per step, up to `budget` distinct positions; candidates
    ranked by the one-hot linearization, the winner chosen by exact loss
    increase on the attacked model.
    """
    adv = plain.copy()
    B = adv.shape[0]
    changed = np.zeros((B, WINDOW_LEN), dtype=bool)
    aes = attack_model.aes is not None
    for _ in range(budget):
        cand_tokens = np.repeat(adv[:, None, :], n_candidates, axis=1)  # [B, C, 1536]
        for b in range(B):
            blocked = changed[b] | (adv[b] == PAD)
            if aes:
                scores = _aes_position_scores(attack_model, adv[b], int(labels[b]))
                scores[blocked] = -np.inf
                pos_pick = np.argsort(scores)[::-1][:n_candidates]
                vals = rng.integers(0, 256, n_candidates)
                for c, (p, v) in enumerate(zip(pos_pick, vals)):
                    cand_tokens[b, c, p] = v
            else:
                _, gains = input_gains(attack_model, adv[b], int(labels[b]))
                gains = gains[:, :256]  # PAD is not a byte value
                gains[blocked] = np.inf  # maximizing CE = minimizing attack gain
                flat = np.argsort(gains, axis=None)[:n_candidates]
                for c, f in enumerate(flat):
                    p, v = divmod(int(f), 256)
                    cand_tokens[b, c, p] = v
        enc = encode_plain(attack_model, cand_tokens.reshape(-1, WINDOW_LEN))
        losses = np.empty(B * n_candidates)
        for b in range(B):
            sl = slice(b * n_candidates, (b + 1) * n_candidates)
            losses[sl] = attack_loss_np(attack_model, enc[sl], int(labels[b]))
        losses = losses.reshape(B, n_candidates)
        best = losses.argmin(axis=1)  # most negative = largest CE(true)
        for b in range(B):
            pick = cand_tokens[b, best[b]]
            delta = pick != adv[b]
            changed[b] |= delta
            adv[b] = pick
    return adv


def _aes_position_scores(model: ClassifierModel, plain: np.ndarray, label_idx: int,
                         target_idx: int | None = None) -> np.ndarray:
    """Per-plain-position saliency for an AES model: block-aggregated |grad|."""
    enc = encode_plain(model, plain[None, :])[0]
    _, gains = input_gains(model, enc, label_idx, target_idx)
    sal = np.abs(gains[:, :256]).max(axis=1)
    scores = np.zeros(WINDOW_LEN, dtype=np.float64)
    for ws, we in model.window.slice_offsets():
        seg = sal[ws:we]
        blocks = seg[: (len(seg) // 16) * 16].reshape(-1, 16).sum(axis=1)
        rep = np.repeat(blocks, 16)
        scores[ws : ws + rep.size] = rep
    return scores


def adversarial_train(model: ClassifierModel, public_model: ClassifierModel,
                      train_ds: WindowDataset, test_ds: WindowDataset,
                      cfg: TrainConfig) -> tuple[ClassifierModel, list[TrainLogRow]]:
    """Mixed clean/adversarial training; perturbations crafted per mini-batch.

    Candidate coordinates maximize cross-entropy on the public released
    model (or the in-training model when cfg.attack_self is set); crafted
    copies keep their ground-truth labels.
    """
    if cfg.adv_budget == 0:
        return train(model, train_ds, test_ds, cfg)
    work = model.clone()
    enc_test = encode_plain(work, test_ds.tokens) if len(test_ds) else None
    onehot_all = np.eye(model.arch.n_classes, dtype=np.float32)
    velocity = {k: np.zeros_like(v) for k, v in work.weights.items()}
    best_acc, best_weights, log = -1.0, None, []
    for epoch in range(cfg.epochs):
        rng = derive_rng("advtrain", cfg.seed, epoch)
        order = rng.permutation(len(train_ds))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            batch = order[i : i + cfg.batch_size]
            plain = train_ds.tokens[batch]
            labels = train_ds.labels[batch]
            attacker_view = work if cfg.attack_self else public_model
            adv = _craft_batch(attacker_view, plain, labels, cfg.adv_budget, rng, cfg.adv_candidates)
            mixed = np.concatenate([plain, adv])
            mixed_labels = np.concatenate([labels, labels])
            loss, wt, _ = loss_graph(work, encode_plain(work, mixed), onehot_all[mixed_labels])
            losses.append(_check_finite_loss(float(loss.data)))
            grads = ng.backward(loss, list(wt.values()))
            _sgd_step(work.weights, {n: g.data for n, g in zip(wt.keys(), grads)},
                      velocity, cfg.step_size, cfg.momentum, cfg.clip_norm, cfg.weight_decay)
        acc = accuracy(work, enc_test, test_ds.labels) if enc_test is not None else 0.0
        log.append(TrainLogRow(epoch=epoch, train_loss=float(np.mean(losses)), test_accuracy=acc))
        if acc > best_acc:
            best_acc = acc
            best_weights = {k: v.copy() for k, v in work.weights.items()}
    work.weights = best_weights
    return work, log


# --------------------------------------------------------------------------
# similarity unpairing


def unpair_finetune(private: ClassifierModel, train_ds: WindowDataset, test_ds: WindowDataset,
                    cfg: TrainConfig) -> tuple[ClassifierModel, list[TrainLogRow]]:
    """Fine-tune a public copy whose input-embedding gradients decorrelate from the private model.

    Objective per batch: L_xe(public) + lambda * mean_i cos(g_private_i, g_public_i)
    where g = d L_xe / d embedding-activations. The penalty's parameter
    gradient is a mixed second derivative, taken by differentiating through
    the first backward pass (reverse over reverse).
    """
    public = private.clone()
    enc_train = encode_plain(public, train_ds.tokens)
    enc_test = encode_plain(public, test_ds.tokens) if len(test_ds) else enc_train
    test_labels = test_ds.labels if len(test_ds) else train_ds.labels
    onehot_all = np.eye(private.arch.n_classes, dtype=np.float32)
    velocity = {k: np.zeros_like(v) for k, v in public.weights.items()}
    log = []
    lam = np.float32(cfg.unpair_lambda)
    for epoch in range(cfg.unpair_epochs):
        order = derive_rng("unpair", cfg.seed, epoch).permutation(len(train_ds))
        losses, cs_vals = [], []
        for i in range(0, len(order), cfg.batch_size):
            batch = order[i : i + cfg.batch_size]
            tokens = enc_train[batch]
            onehot = onehot_all[train_ds.labels[batch]]

            # frozen private input-gradient (a constant for this batch)
            e_priv = ng.Tensor(private.weights["embed"][tokens], requires_grad=True)
            priv_loss, _, _ = loss_graph(private, tokens, onehot, embed_leaf=e_priv)
            (g_priv,) = ng.backward(priv_loss, [e_priv])
            g_priv_const = ng.tensor(g_priv.data.reshape(len(batch), -1))

            wt = {n: ng.Tensor(arr, requires_grad=True) for n, arr in public.weights.items()}
            e_pub = ng.Tensor(public.weights["embed"][tokens], requires_grad=True)
            xe, _, _ = loss_graph(public, tokens, onehot, weight_tensors=wt, embed_leaf=e_pub)
            (g_pub,) = ng.backward(xe, [e_pub])
            cs = ng.tmean(
                ng.cosine_similarity(ng.reshape(g_pub, (len(batch), -1)), g_priv_const, axis=-1)
            )
            total = ng.add(xe, ng.mul(ng.tensor(lam), cs))
            losses.append(_check_finite_loss(float(total.data)))
            cs_vals.append(float(cs.data))

            leaves = list(wt.values()) + [e_pub]
            grads = ng.backward(total, leaves)
            grad_map = {n: g.data for n, g in zip(wt.keys(), grads[:-1])}
            # the embedding table feels the input-gradient path through the lookup
            g_e = grads[-1].data
            emb_extra = np.zeros_like(public.weights["embed"], dtype=np.float64)
            for d in range(emb_extra.shape[1]):
                emb_extra[:, d] = np.bincount(
                    tokens.reshape(-1), weights=g_e[..., d].reshape(-1).astype(np.float64),
                    minlength=emb_extra.shape[0],
                )
            grad_map["embed"] = grad_map["embed"] + emb_extra.astype(np.float32)
            _sgd_step(public.weights, grad_map, velocity, cfg.step_size, cfg.momentum, cfg.clip_norm, cfg.weight_decay)
        acc = accuracy(public, enc_test, test_labels)
        log.append(
            TrainLogRow(epoch=epoch, train_loss=float(np.mean(losses)),
                        test_accuracy=acc, mean_cs=float(np.mean(cs_vals)))
        )
    return public, log


# --------------------------------------------------------------------------
# architecture sampling (substitute ensembles)


def sample_arch(rng: np.random.Generator, n_classes: int = len(DEFAULT_LABELS)) -> ArchDescriptor:
    """Random descriptor within the sampling bounds: conv depth 1-4, kernels 8-16, dense 1-4."""
    while True:
        conv = tuple(
            (int(rng.integers(8, 17)), int(rng.choice([16, 32, 64])))
            for _ in range(int(rng.integers(1, 5)))
        )
        dense = tuple(int(rng.choice([32, 64, 128])) for _ in range(int(rng.integers(1, 5))))
        try:
            return ArchDescriptor(
                embed_dim=int(rng.choice([16, 32])),
                conv_layers=conv,
                dense_layers=dense,
                n_classes=n_classes,
            )
        except ValueError:
            continue


def sample_validated_arch(rng: np.random.Generator, train_ds: WindowDataset,
                          test_ds: WindowDataset, cfg: TrainConfig,
                          min_accuracy: float = 0.95, max_redraws: int = 8,
                          labels: tuple[str, ...] = DEFAULT_LABELS,
                          window: WindowSpec | None = None,
                          seed: int = 0) -> tuple[ArchDescriptor, ClassifierModel, int]:
    """Draw descriptors until a paired train run reaches the accuracy bar."""
    for redraw in range(max_redraws):
        arch = sample_arch(rng, n_classes=len(labels))
        model = build(arch, seed=seed, window=window, labels=labels)
        trained, log = train(model, train_ds, test_ds, cfg)
        if max(r.test_accuracy for r in log) >= min_accuracy:
            return arch, trained, redraw
    raise RuntimeError(f"no sampled architecture reached {min_accuracy:.0%} in {max_redraws} draws")


# --------------------------------------------------------------------------
# checkpoint format


def save(model: ClassifierModel, path) -> None:
    names = sorted(model.weights)
    header = {
        "arch": model.arch.to_dict(),
        "window": model.window.to_dict(),
        "aes": model.aes.to_dict() if model.aes else None,
        "labels": list(model.labels),
        "weights": [[n, list(model.weights[n].shape)] for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            arr = np.ascontiguousarray(model.weights[n], dtype="<f4")
            fh.write(arr.tobytes())


def load(path) -> ClassifierModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16 : 16 + hlen])
    except ValueError as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc
    arch = ArchDescriptor.from_dict(header["arch"])
    expected = arch.weight_shapes()
    weights: dict[str, np.ndarray] = {}
    pos = 16 + hlen
    for name, shape in header["weights"]:
        shape = tuple(shape)
        if name not in expected or expected[name] != shape:
            raise CheckpointError(f"weight {name} has unexpected shape {shape}")
        n_bytes = int(np.prod(shape)) * 4
        chunk = raw[pos : pos + n_bytes]
        if len(chunk) != n_bytes:
            raise CheckpointError("checkpoint truncated")
        weights[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        pos += n_bytes
    if pos != len(raw):
        raise CheckpointError("trailing bytes after weight data")
    if set(weights) != set(expected):
        raise CheckpointError("checkpoint is missing weights")
    return ClassifierModel(
        arch=arch,
        weights=weights,
        window=WindowSpec.from_dict(header["window"]),
        aes=AesConfig.from_dict(header["aes"]) if header["aes"] else None,
        labels=tuple(header["labels"]),
    )
