"""Evasion procedures: blind-spot greedy coordinate gradient search, the
gradient-free random-flip baseline, neighbor-count sweeps, and adaptive
probing of hidden window offsets.

The gradient attack edits file bytes in place, restricted to blind-spot
positions and their alphabets. Each iteration nominates promising
(position, value) substitutions from input-embedding gradients averaged
over the attacked models, evaluates a batch of candidates exactly, and
greedily keeps the best strict improvement. Every reported success is
re-verified end to end: repair, validate, fresh prediction.

Transfer experiments hand this module substitute models only; the target
appears solely as a final-check oracle.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from bytelab import fileforge as ff
from bytelab.bytemodel import (
    ClassifierModel,
    attack_loss_np,
    encode_plain,
    forward_np,
    input_gains,
    softmax_np,
)
from bytelab.fileforge import BlindSpotMap, derive_rng
from bytelab.windowing import PAD, WINDOW_LEN, extract

__all__ = [
    "AttackConfig",
    "AttackResult",
    "Oracle",
    "model_oracle",
    "ensemble_loss",
    "gcg_blindspot",
    "random_flip",
    "neighbor_sweep",
    "offset_probe",
]


@dataclass(frozen=True)
class AttackConfig:
    iterations: int = 80
    top_k: int = 48
    neighbors: int = 128  # candidate batch size per iteration
    budget: int = 10  # max distinct modified positions
    mode: str = "untargeted"
    target_class: int | None = None
    scoring: str = "onehot"  # onehot | signed_range | exhaustive
    value_top: int = 24
    seed: int = 0
    early_stop: bool = True
    minimize: bool = True  # post-success revert pass
    enforce_format: bool = True  # False only for the unconstrained warm-up map

    def __post_init__(self):
        if self.budget < 0 or self.neighbors < 1 or self.iterations < 0:
            raise ValueError("budget/neighbors/iterations out of range")
        if self.mode not in ("untargeted", "targeted"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "targeted" and self.target_class is None:
            raise ValueError("targeted mode needs target_class")
        if self.scoring not in ("onehot", "signed_range", "exhaustive"):
            raise ValueError(f"unknown scoring {self.scoring!r}")


@dataclass
class AttackResult:
    success: bool
    bytes_changed: int
    modified: dict[int, int]  # file offset -> final byte value
    final_label: int
    final_prob: float
    loss_trace: list[float]
    evals: int
    queries: int = 0
    oracle_batches: int = 0
    data: bytes = b""
    snapshots: dict[int, bytes] = field(default_factory=dict)  # bytes_changed -> file

    def record(self, sample_id: str, label: str) -> dict:
        return {
            "sample": sample_id,
            "label": label,
            "success": bool(self.success),
            "bytes_changed": int(self.bytes_changed),
            "positions": sorted(int(p) for p in self.modified),
            "values": [int(self.modified[p]) for p in sorted(self.modified)],
            "final_label": int(self.final_label),
            "final_prob": float(self.final_prob),
            "evals": int(self.evals),
            "queries": int(self.queries),
            "loss_first": float(self.loss_trace[0]) if self.loss_trace else None,
            "loss_last": float(self.loss_trace[-1]) if self.loss_trace else None,
        }


class Oracle:
    """Query-counted wrapper around a deployed classifier.

    `labels` is the deployed system's public class order, needed by
    black-box attackers to read the probability vector.
    """

    def __init__(self, fn: Callable[[bytes], tuple[int, np.ndarray]],
                 labels: tuple[str, ...] | None = None):
        self._fn = fn
        self.labels = labels
        self.queries = 0
        self.batches = 0

    def query(self, data: bytes) -> tuple[int, np.ndarray]:
        self.queries += 1
        return self._fn(data)

    def query_batch(self, datas: Sequence[bytes]) -> list[tuple[int, np.ndarray]]:
        self.batches += 1
        out = []
        for d in datas:
            self.queries += 1
            out.append(self._fn(d))
        return out


def model_oracle(model: ClassifierModel) -> Oracle:
    def fn(data: bytes) -> tuple[int, np.ndarray]:
        tokens = encode_plain(model, extract(data, model.window).tokens[None, :])
        probs = softmax_np(forward_np(model, tokens))[0]
        return int(probs.argmax()), probs

    return Oracle(fn, labels=model.labels)


def ensemble_loss(models: Sequence[ClassifierModel], enc_tokens: list[np.ndarray],
                  label_idx: int, target_idx: int | None = None) -> np.ndarray:
    """Arithmetic mean of the member losses for per-model encoded candidates."""
    total = None
    for model, toks in zip(models, enc_tokens):
        part = attack_loss_np(model, toks, label_idx, target_idx)
        total = part if total is None else total + part
    return total / len(models)


# --------------------------------------------------------------------------
# per-model attack state


class _View:
    """One attacked model's window mapping and cached tokens for a file."""

    def __init__(self, model: ClassifierModel, data: bytes):
        self.model = model
        w = extract(data, model.window)
        self.plain = w.tokens.copy()
        self.window_idx: dict[int, list[int]] = {}
        for widx, pos in enumerate(w.origin):
            if pos >= 0:
                self.window_idx.setdefault(int(pos), []).append(widx)

    def covers(self, positions: np.ndarray) -> np.ndarray:
        return np.array([p in self.window_idx for p in positions], dtype=bool)

    def apply(self, pos: int, val: int) -> None:
        for widx in self.window_idx.get(int(pos), ()):
            self.plain[widx] = val

    def enc_current(self) -> np.ndarray:
        return encode_plain(self.model, self.plain[None, :])[0]

    def enc_candidates(self, cands: list[tuple[int, int]]) -> np.ndarray:
        batch = np.repeat(self.plain[None, :], len(cands), axis=0)
        for row, (pos, val) in enumerate(cands):
            for widx in self.window_idx.get(int(pos), ()):
                batch[row, widx] = val
        return encode_plain(self.model, batch)

    def file_gains(self, positions: np.ndarray, label_idx: int,
                   target_idx: int | None) -> tuple[np.ndarray, np.ndarray | None]:
        """(per-position promise score, per-position value gains or None).

        Plain models expose the one-hot linearization per window index,
        summed over duplicate window positions. AES models only admit
        block-level position saliency: a byte edit rewrites its whole
        ciphertext block, so |gradient| mass is pooled per 16-byte block
        and value gains are unavailable.
        """
        enc = self.enc_current()
        _, gains = input_gains(self.model, enc, label_idx, target_idx)
        gains = gains[:, :256]
        if self.model.aes is None:
            out = np.zeros((len(positions), 256), dtype=np.float64)
            seen = np.zeros(len(positions), dtype=bool)
            for i, pos in enumerate(positions):
                for widx in self.window_idx.get(int(pos), ()):
                    out[i] += gains[widx]
                    seen[i] = True
            score = np.where(seen, -out.min(axis=1), -np.inf)
            return score, out
        sal = np.abs(gains).max(axis=1)
        block_score = np.zeros(WINDOW_LEN, dtype=np.float64)
        for ws, we in self.model.window.slice_offsets():
            seg = sal[ws:we]
            n16 = (len(seg) // 16) * 16
            blocks = seg[:n16].reshape(-1, 16).sum(axis=1)
            block_score[ws : ws + n16] = np.repeat(blocks, 16)
        score = np.full(len(positions), -np.inf)
        for i, pos in enumerate(positions):
            for widx in self.window_idx.get(int(pos), ()):
                score[i] = max(score[i], block_score[widx])
        return score, None


def _predict_models(models: Sequence[ClassifierModel], data: bytes) -> list[tuple[int, float]]:
    out = []
    for m in models:
        tokens = encode_plain(m, extract(data, m.window).tokens[None, :])
        probs = softmax_np(forward_np(m, tokens))[0]
        out.append((int(probs.argmax()), float(probs.max())))
    return out


def _goal_met(preds: list[tuple[int, float]], label_idx: int, target_idx: int | None) -> bool:
    if target_idx is None:
        return all(p != label_idx for p, _ in preds)
    return all(p == target_idx for p, _ in preds)


# --------------------------------------------------------------------------
# the gradient attack


def gcg_blindspot(
    models: Sequence[ClassifierModel] | ClassifierModel,
    sample: ff.FileSample,
    bsmap: BlindSpotMap,
    cfg: AttackConfig,
    final_oracle: Oracle | None = None,
) -> AttackResult:
    """Greedy coordinate gradient over blind-spot bytes, jointly on all models.

    Success against the attacked models stops the search early; the
    returned result's `success` is judged by `final_oracle` when given
    (transfer setting), otherwise by the attacked models themselves.
    """
    if isinstance(models, ClassifierModel):
        models = [models]
    fmt = sample.label
    label_idx = models[0].labels.index(fmt)
    target_idx = cfg.target_class if cfg.mode == "targeted" else None
    if target_idx is not None and target_idx == label_idx:
        raise ValueError("targeted class must differ from the true class")

    orig = sample.data
    file = bytearray(orig)
    views = [_View(m, orig) for m in models]
    all_positions = bsmap.positions()
    cover = np.zeros(len(all_positions), dtype=bool)
    for v in views:
        inter = v.covers(all_positions)
        if not inter.any():
            raise ValueError("blind spots do not intersect a model's extraction window")
        cover |= inter
    positions = all_positions[cover]
    if positions.size == 0:
        raise ValueError("no modifiable positions inside any extraction window")
    alphabets = {int(p): bsmap.alphabet_of(int(p)) for p in positions}

    rng = derive_rng("gcg", cfg.seed, hashlib.sha256(orig).hexdigest()[:16])
    evals = 0

    def mean_loss_current() -> float:
        nonlocal evals
        evals += len(views)
        return float(
            ensemble_loss(models, [v.enc_current()[None, :] for v in views], label_idx, target_idx)[0]
        )

    def finalize(buf: bytes) -> bytes:
        return ff.repair(fmt, buf) if cfg.enforce_format else buf

    def check_repaired() -> tuple[bytes, bool, tuple[int, float]]:
        nonlocal evals
        repaired = finalize(bytes(file))
        preds = _predict_models(models, repaired)
        evals += len(views)
        return repaired, _goal_met(preds, label_idx, target_idx), preds[0]

    modified: dict[int, int] = {}
    trace = [mean_loss_current()]
    snapshots: dict[int, bytes] = {}
    repaired, fooled, _ = check_repaired()
    snapshots[0] = repaired

    if not (fooled and cfg.early_stop) and cfg.budget > 0:
        for _ in range(cfg.iterations):
            at_budget = len(modified) >= cfg.budget
            allowed = np.array(sorted(modified)) if at_budget else positions
            cands = _nominate(views, allowed, alphabets, file, label_idx, target_idx, cfg, rng)
            if not cands:
                break
            losses = ensemble_loss(
                models, [v.enc_candidates(cands) for v in views], label_idx, target_idx
            )
            evals += len(cands) * len(views)
            order = sorted(range(len(cands)), key=lambda i: (losses[i], cands[i]))
            best = order[0]
            if losses[best] >= trace[-1]:
                continue
            pos, val = cands[best]
            file[pos] = val
            for v in views:
                v.apply(pos, val)
            if val == orig[pos]:
                modified.pop(pos, None)
            else:
                modified[pos] = val
            trace.append(float(losses[best]))
            repaired, fooled, _ = check_repaired()
            snapshots[len(modified)] = repaired
            if fooled and cfg.early_stop:
                break

    if fooled and cfg.minimize and modified:
        for pos in sorted(modified):
            saved = file[pos]
            file[pos] = orig[pos]
            for v in views:
                v.apply(pos, orig[pos])
            repaired_try = finalize(bytes(file))
            preds = _predict_models(models, repaired_try)
            evals += len(views)
            if _goal_met(preds, label_idx, target_idx):
                del modified[pos]
                repaired = repaired_try
                snapshots[len(modified)] = repaired
            else:
                file[pos] = saved
                for v in views:
                    v.apply(pos, saved)

    repaired = finalize(bytes(file))
    if cfg.enforce_format and ff.validate(fmt, repaired):
        raise AssertionError("attack produced an invalid file despite blind-spot soundness")
    if final_oracle is not None:
        final_label, probs = final_oracle.query(repaired)
        success = (final_label != label_idx) if target_idx is None else (final_label == target_idx)
        final_prob = float(probs[final_label])
        queries = final_oracle.queries
    else:
        preds = _predict_models(models, repaired)
        evals += len(views)
        success = _goal_met(preds, label_idx, target_idx)
        final_label, final_prob = preds[0]
        queries = 0
    return AttackResult(
        success=success,
        bytes_changed=len(modified),
        modified=dict(modified),
        final_label=final_label,
        final_prob=final_prob,
        loss_trace=trace,
        evals=evals,
        queries=queries,
        data=repaired,
        snapshots=snapshots,
    )


def _nominate(views, allowed: np.ndarray, alphabets: dict[int, np.ndarray],
              file: bytearray, label_idx: int, target_idx: int | None,
              cfg: AttackConfig, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Build the candidate batch for one iteration, per the scoring mode."""
    if cfg.scoring == "exhaustive":
        cands = []
        for pos in allowed:
            cur = file[int(pos)]
            for val in alphabets[int(pos)]:
                if int(val) != cur:
                    cands.append((int(pos), int(val)))
        return cands

    score_sum = np.zeros(len(allowed), dtype=np.float64)
    gain_sum = np.zeros((len(allowed), 256), dtype=np.float64)
    any_gain = False
    for v in views:
        score, gains = v.file_gains(allowed, label_idx, target_idx)
        score_sum += np.where(np.isfinite(score), score, 0.0)
        if gains is not None:
            gain_sum += gains
            any_gain = True
    k = min(cfg.top_k, len(allowed))
    top_idx = np.argsort(-score_sum, kind="stable")[:k]

    cands: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    if cfg.scoring == "onehot" and any_gain:
        # half the batch: globally best (position, value) pairs by linearized gain
        pool: list[tuple[float, int, int]] = []
        for i in top_idx:
            pos = int(allowed[int(i)])
            cur = file[pos]
            alpha = alphabets[pos]
            vals = alpha[alpha != cur]
            if vals.size == 0:
                continue
            row = gain_sum[int(i)]
            best_vals = vals[np.argsort(row[vals], kind="stable")[: cfg.value_top]]
            pool.extend((float(row[v]), pos, int(v)) for v in best_vals)
        pool.sort()
        for _, pos, val in pool[: max(1, cfg.neighbors // 2)]:
            if (pos, val) not in seen:
                seen.add((pos, val))
                cands.append((pos, val))
    for _ in range(cfg.neighbors - len(cands)):
        i = int(top_idx[rng.integers(0, len(top_idx))])
        pos = int(allowed[i])
        cur = file[pos]
        alpha = alphabets[pos]
        if cfg.scoring == "onehot" and any_gain:
            row = gain_sum[i]
            allowed_vals = alpha[alpha != cur]
            if allowed_vals.size == 0:
                continue
            ranked = allowed_vals[np.argsort(row[allowed_vals], kind="stable")]
            pick = ranked[: max(1, min(cfg.value_top, ranked.size))]
            val = int(pick[rng.integers(0, len(pick))])
        elif cfg.scoring == "signed_range" and any_gain:
            row = gain_sum[i]
            lo_g = row[max(cur - 1, 0)]
            hi_g = row[min(cur + 1, 255)]
            slope = hi_g - lo_g
            rng_vals = alpha[alpha < cur] if slope < 0 else alpha[alpha > cur]
            if rng_vals.size == 0:
                rng_vals = alpha[alpha != cur]
            if rng_vals.size == 0:
                continue
            val = int(rng_vals[rng.integers(0, len(rng_vals))])
        else:  # AES-only ensemble: values carry no usable linearization
            choices = alpha[alpha != cur]
            if choices.size == 0:
                continue
            val = int(choices[rng.integers(0, len(choices))])
        if (pos, val) not in seen:
            seen.add((pos, val))
            cands.append((pos, val))
    return cands


# --------------------------------------------------------------------------
# gradient-free baseline


def _rf_loss(probs: np.ndarray, label_idx: int, target_idx: int | None) -> float:
    return float(probs[label_idx]) if target_idx is None else float(-probs[target_idx])


def random_flip(oracle: Oracle, sample: ff.FileSample, bsmap: BlindSpotMap,
                cfg: AttackConfig) -> AttackResult:
    """Greedy best-of-B search with uniformly random substitutions, oracle-scored.

    Uses only the oracle's probability vector (score-based black box); the
    true class index is read off the oracle's public label order. One
    candidate batch of size `neighbors` is consumed per iteration.
    """
    if oracle.labels is None:
        raise ValueError("oracle must expose its class order for black-box attacks")
    fmt = sample.label
    label_idx = oracle.labels.index(fmt)
    target_idx = cfg.target_class if cfg.mode == "targeted" else None
    orig = sample.data
    file = bytearray(orig)
    positions = bsmap.positions()
    if positions.size == 0:
        raise ValueError("no modifiable positions")
    alphabets = {int(p): bsmap.alphabet_of(int(p)) for p in positions}
    rng = derive_rng("rflip", cfg.seed, hashlib.sha256(orig).hexdigest()[:16])

    modified: dict[int, int] = {}
    pred, probs = oracle.query(ff.repair(fmt, bytes(file)))
    loss = _rf_loss(probs, label_idx, target_idx)
    trace = [loss]
    snapshots = {0: ff.repair(fmt, bytes(file))}
    final_pred, final_probs = pred, probs

    def goal(p: int) -> bool:
        return (p != label_idx) if target_idx is None else (p == target_idx)

    fooled = goal(pred)
    if not (fooled and cfg.early_stop) and cfg.budget > 0:
        for _ in range(cfg.iterations):
            at_budget = len(modified) >= cfg.budget
            pool = np.array(sorted(modified)) if at_budget else positions
            cands: list[tuple[int, int]] = []
            seen: set[tuple[int, int]] = set()
            for _ in range(cfg.neighbors):
                pos = int(pool[rng.integers(0, len(pool))])
                alpha = alphabets[pos]
                choices = alpha[alpha != file[pos]]
                if choices.size == 0:
                    continue
                val = int(choices[rng.integers(0, len(choices))])
                if (pos, val) not in seen:
                    seen.add((pos, val))
                    cands.append((pos, val))
            if not cands:
                break
            probes = []
            for pos, val in cands:
                saved = file[pos]
                file[pos] = val
                probes.append(ff.repair(fmt, bytes(file)))
                file[pos] = saved
            answers = oracle.query_batch(probes)
            losses = [_rf_loss(p, label_idx, target_idx) for _, p in answers]
            order = sorted(range(len(cands)), key=lambda i: (losses[i], cands[i]))
            best = order[0]
            if losses[best] >= trace[-1]:
                continue
            pos, val = cands[best]
            file[pos] = val
            if val == orig[pos]:
                modified.pop(pos, None)
            else:
                modified[pos] = val
            trace.append(losses[best])
            final_pred, final_probs = answers[best]
            snapshots[len(modified)] = probes[best]
            if goal(final_pred) and cfg.early_stop:
                fooled = True
                break

    repaired = ff.repair(fmt, bytes(file))
    final_pred, final_probs = oracle.query(repaired)
    return AttackResult(
        success=goal(final_pred),
        bytes_changed=len(modified),
        modified=dict(modified),
        final_label=final_pred,
        final_prob=float(final_probs[final_pred]),
        loss_trace=trace,
        evals=0,
        queries=oracle.queries,
        oracle_batches=oracle.batches,
        data=repaired,
        snapshots=snapshots,
    )


# --------------------------------------------------------------------------
# sweeps and probing


def neighbor_sweep(
    attack_fn: Callable[[AttackConfig], list[AttackResult]],
    neighbor_values: Sequence[int],
    base_cfg: AttackConfig,
) -> list[dict]:
    """Run an attack callback at each candidate-batch size; returns table rows."""
    rows = []
    for nb in neighbor_values:
        cfg = replace(base_cfg, neighbors=int(nb))
        results = attack_fn(cfg)
        n = len(results)
        wins = [r for r in results if r.success]
        rows.append(
            {
                "neighbors": int(nb),
                "n": n,
                "success_rate": len(wins) / max(1, n),
                "mean_bytes_changed": float(np.mean([r.bytes_changed for r in wins])) if wins else float("nan"),
            }
        )
    return rows


def offset_probe(oracle: Oracle, probe_len: int = 4096, search_max: int = 512,
                 step: int = 8, pattern: bytes | None = None,
                 base: bytes | None = None, base_label: str = "txt",
                 threshold: float = 0.05) -> dict:
    """Estimate a hidden head offset o1 by sliding a discriminative pattern.

    Probe files plant `pattern` at each candidate offset; offsets whose
    probe shifts the oracle's probability vector are inferred to intersect
    the hidden first slice. Returns ranked WindowSpec candidates (uniform
    rank with `inconclusive=True` when nothing responds) plus query cost.
    """
    from bytelab.windowing import WindowSpec  # local import to avoid cycles

    if pattern is None:
        pattern = b"\x89PNG\r\n\x1a\n" + b"\x00\x00\x00\rIHDR"
    if base is None:
        base = ff.generate(base_label, 424242, probe_len).data
    base = bytes(base[:probe_len]) if len(base) >= probe_len else base
    _, base_probs = oracle.query(base)
    responses = []
    for c in range(0, search_max + 1, step):
        probe = bytearray(base)
        probe[c : c + len(pattern)] = pattern
        _, probs = oracle.query(bytes(probe))
        responses.append((c, float(np.abs(probs - base_probs).sum())))
    responsive = [c for c, d in responses if d > threshold]
    if not responsive:
        candidates = [WindowSpec(o1=o) for o in range(0, search_max + 1, 16)]
        return {
            "inconclusive": True,
            "candidates": candidates,
            "scores": [0.0] * len(candidates),
            "queries": oracle.queries,
        }
    est = min(responsive) + step
    cands, scores = [], []
    for delta in (0, -step, step, -2 * step, 2 * step):
        o1 = est + delta
        if 0 <= o1 <= 512:
            cands.append(WindowSpec(o1=o1))
            scores.append(1.0 / (1.0 + abs(delta)))
    return {"inconclusive": False, "candidates": cands, "scores": scores, "queries": oracle.queries}
