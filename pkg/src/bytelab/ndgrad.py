"""Minimal dense-tensor reverse-mode autodiff over a closed op set.

Tensors wrap numpy arrays (float32 by default, float64 available for
high-precision derivative checks). Every differentiable op records its
parents and a vjp closure, so a computation implicitly builds an ordered
op graph; `backward` walks it in reverse topological order. All vjp rules
are themselves expressed through the public ops, which makes the graph
closed under differentiation: `backward(..., in-graph)` output tensors can
be differentiated again. That is what `grad_of_grad_dot` (reverse over
reverse) relies on for mixed second derivatives.

Op set (fixed in advance, sized to the classifier architecture):
embedding gather / scatter, 1-D unfold/fold (im2col convolution), add,
mul, neg, matmul, relu, exp, log, pow_const, sum, mean, reshape, plus the
helper compositions `log_softmax`, `softmax_cross_entropy`, and
`cosine_similarity`.

ReLU is treated as piecewise linear: its vjp multiplies by a constant 0/1
mask, so all second derivatives through ReLU are exactly zero and the
subgradient at the kink is 0. Finite-difference oracles must keep probe
points away from the kink.

Reductions (sum / mean / the accumulations inside matmul-free paths)
accumulate in float64 before casting back to the working dtype. Any op
producing a NaN/Inf raises `NonFiniteError` instead of propagating it.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "ShapeError",
    "tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "relu",
    "exp",
    "log",
    "pow_const",
    "tsum",
    "tmean",
    "gmax",
    "reshape",
    "embedding",
    "scatter_rows",
    "unfold1d",
    "fold1d",
    "sliding_windows",
    "log_softmax",
    "softmax_cross_entropy",
    "cosine_similarity",
    "backward",
    "grad_of_grad_dot",
]


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf; the graph is in an error state."""


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the op's contract."""


# Ops that only rearrange existing values cannot create NaN/Inf, so they
# skip the finiteness probe (it costs a full pass over the data).
_REARRANGE_OPS = frozenset({"leaf", "reshape", "unfold1d", "embedding"})


def _check_finite(arr: np.ndarray, op: str) -> None:
    # Cheap probe first: a float64 sum is NaN/Inf iff some element is
    # (float32 magnitudes cannot overflow a float64 accumulator).
    s = float(arr.sum(dtype=np.float64))
    if not np.isfinite(s):
        raise NonFiniteError(f"non-finite value produced by op '{op}'")


class Tensor:
    """A dense float array plus the graph edge that produced it."""

    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "_op")

    def __init__(
        self,
        data: np.ndarray,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _vjp: Callable[["Tensor"], Sequence["Tensor | None"]] | None = None,
        _op: str = "leaf",
    ):
        if data.dtype not in (np.float32, np.float64):
            raise TypeError(f"Tensor dtype must be float32/float64, got {data.dtype}")
        self.data = data
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._vjp = _vjp
        self._op = _op
        if _op not in _REARRANGE_OPS:
            _check_finite(data, _op)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, grad={self.requires_grad})"

    # Small amount of operator sugar; the module-level functions are the API.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def tensor(values, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    arr = np.asarray(values, dtype=dtype)
    return Tensor(arr, requires_grad=requires_grad)


def _const(arr: np.ndarray) -> Tensor:
    return Tensor(arr)


def _result_dtype(*ts: Tensor):
    return np.float64 if any(t.dtype == np.float64 for t in ts) else np.float32


# ---------------------------------------------------------------------------
# broadcast helpers


def _sum_to(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast gradient back to `shape` (vjp side of broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.data.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        i + extra for i, n in enumerate(shape) if n == 1 and g.shape[i + extra] != 1
    )
    out = tsum(g, axis=axes, keepdims=False) if axes else g
    return reshape(out, shape)


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def vjp(g: Tensor):
        return _sum_to(g, a.shape), _sum_to(g, b.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp, _op="add")


def neg(a: Tensor) -> Tensor:
    def vjp(g: Tensor):
        return (neg(g),)

    return Tensor(-a.data, _parents=(a,), _vjp=vjp, _op="neg")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def vjp(g: Tensor):
        return _sum_to(mul(g, b), a.shape), _sum_to(mul(g, a), b.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp, _op="mul")


def matmul(a: Tensor, b: Tensor, ta: bool = False, tb: bool = False) -> Tensor:
    """GEMM with transpose flags: op(a) @ op(b), where op(x) = x.T when flagged.

    `a` may be rank 3 when not transposed (leading dims are flattened for
    the GEMM and restored afterwards); `b` must be rank 2. Transposes are
    BLAS views, never materialized copies, and the vjp re-expresses itself
    through flagged matmuls so the graph stays closed under differentiation.
    """
    if b.data.ndim != 2:
        raise ShapeError(f"matmul rhs must be rank 2, got {b.shape}")
    lead: tuple[int, ...] = ()
    if a.data.ndim == 3:
        if ta:
            raise ShapeError("3D lhs cannot be transposed")
        lead = a.shape[:2]
        a2 = a.data.reshape(-1, a.shape[-1])
    elif a.data.ndim == 2:
        a2 = a.data
    else:
        raise ShapeError(f"matmul lhs must be rank 2 or 3, got {a.shape}")
    a_op = a2.T if ta else a2
    b_op = b.data.T if tb else b.data
    if a_op.shape[1] != b_op.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape}(T={ta}) @ {b.shape}(T={tb})")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a_op @ b_op
    if lead:
        out = out.reshape(lead + (out.shape[-1],))

    def vjp(g: Tensor):
        g2 = reshape(g, (-1, out.shape[-1])) if lead else g
        a_mat = reshape(a, (-1, a.shape[-1])) if lead else a
        if ta:
            da = matmul(b, g2, ta=tb, tb=True)
        else:
            da = matmul(g2, b, ta=False, tb=not tb)
            if lead:
                da = reshape(da, a.shape)
        if tb:
            db = matmul(g2, a_mat, ta=True, tb=ta)
        else:
            db = matmul(a_mat, g2, ta=not ta, tb=False)
        return da, db

    return Tensor(out, _parents=(a, b), _vjp=vjp, _op="matmul")


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(a.data.dtype)
    out = a.data * mask

    def vjp(g: Tensor):
        # Piecewise-constant derivative: the mask is a constant, so all
        # second derivatives through relu vanish.
        return (mul(g, _const(mask)),)

    return Tensor(out, _parents=(a,), _vjp=vjp, _op="relu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    out_t = Tensor(out, _parents=(a,), _vjp=None, _op="exp")

    def vjp(g: Tensor):
        return (mul(g, out_t),)

    out_t._vjp = vjp
    return out_t


def log(a: Tensor) -> Tensor:
    def vjp(g: Tensor):
        return (mul(g, pow_const(a, -1.0)),)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return Tensor(out, _parents=(a,), _vjp=vjp, _op="log")


def pow_const(a: Tensor, p: float) -> Tensor:
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out = a.data**p

    def vjp(g: Tensor):
        coeff = mul(_const(np.asarray(p, dtype=a.dtype)), pow_const(a, p - 1.0))
        return (mul(g, coeff),)

    return Tensor(out, _parents=(a,), _vjp=vjp, _op="pow")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def vjp(g: Tensor):
        gd = g
        if axis is not None and not keepdims:
            kept = list(a.shape)
            axes = (axis,) if isinstance(axis, int) else axis
            for ax in axes:
                kept[ax] = 1
            gd = reshape(g, tuple(kept))
        ones = _const(np.ones(a.shape, dtype=a.dtype))
        return (mul(gd, ones),)

    return Tensor(out, _parents=(a,), _vjp=vjp, _op="sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, _const(np.asarray(1.0 / n, dtype=a.dtype)))


def gmax(a: Tensor, axis: int = 1) -> Tensor:
    """Max over one axis; the vjp routes to the (first) argmax, treated as
    a constant routing like the ReLU mask, so second derivatives vanish."""
    idx = a.data.argmax(axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    onehot = np.zeros_like(a.data)
    np.put_along_axis(onehot, np.expand_dims(idx, axis), 1.0, axis=axis)

    def vjp(g: Tensor):
        ge = reshape(g, g.shape[:axis] + (1,) + g.shape[axis:])
        return (mul(ge, _const(onehot)),)

    return Tensor(out, _parents=(a,), _vjp=vjp, _op="gmax")


def reshape(a: Tensor, shape) -> Tensor:
    def vjp(g: Tensor):
        return (reshape(g, a.shape),)

    return Tensor(a.data.reshape(shape), _parents=(a,), _vjp=vjp, _op="reshape")


def embedding(tokens: np.ndarray, table: Tensor) -> Tensor:
    """Gather rows of `table` ([V, D]) at integer `tokens` (any shape)."""
    if tokens.min() < 0 or tokens.max() >= table.shape[0]:
        raise ShapeError("token id out of vocabulary range")
    out = table.data[tokens]

    def vjp(g: Tensor):
        return (scatter_rows(tokens, g, table.shape[0]),)

    return Tensor(out, _parents=(table,), _vjp=vjp, _op="embedding")


def scatter_rows(tokens: np.ndarray, updates: Tensor, n_rows: int) -> Tensor:
    """Sum `updates` rows into an [n_rows, D] zero tensor at `tokens`.

    Linear adjoint of `embedding`; implemented with per-column bincount so
    accumulation runs in float64 C loops.
    """
    flat_idx = tokens.reshape(-1)
    upd2 = updates.data.reshape(-1, updates.shape[-1])
    cols = [
        np.bincount(flat_idx, weights=upd2[:, d].astype(np.float64), minlength=n_rows)
        for d in range(upd2.shape[1])
    ]
    out = np.stack(cols, axis=1).astype(updates.dtype)

    def vjp(g: Tensor):
        return (reshape(embedding(tokens, g), updates.shape),)

    return Tensor(out, _parents=(updates,), _vjp=vjp, _op="scatter_rows")


def sliding_windows(arr: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Contiguous im2col copy [B, L_out, kernel*D] of a [B, L, D] array."""
    B, L, D = arr.shape
    n_out = (L - kernel) // stride + 1
    if n_out < 1:
        raise ShapeError(f"unfold1d: length {L} too short for kernel {kernel}")
    sb, sl, sd = arr.strides
    view = np.lib.stride_tricks.as_strided(
        arr, shape=(B, n_out, kernel, D), strides=(sb, sl * stride, sl, sd), writeable=False
    )
    return np.ascontiguousarray(view).reshape(B, n_out, kernel * D)


def unfold1d(a: Tensor, kernel: int, stride: int) -> Tensor:
    """[B, L, D] -> [B, L_out, kernel*D] sliding windows (im2col)."""
    if a.data.ndim != 3:
        raise ShapeError("unfold1d expects [B, L, D]")
    B, L, D = a.shape
    out = sliding_windows(np.ascontiguousarray(a.data), kernel, stride)

    def vjp(g: Tensor):
        return (fold1d(g, kernel, stride, L),)

    return Tensor(out, _parents=(a,), _vjp=vjp, _op="unfold1d")


def fold1d(g: Tensor, kernel: int, stride: int, length: int) -> Tensor:
    """Adjoint of unfold1d: scatter-add windows back to [B, length, D]."""
    B, n_out, KD = g.shape
    D = KD // kernel
    gd = g.data.reshape(B, n_out, kernel, D)
    out = np.zeros((B, length, D), dtype=g.dtype)
    for j in range(kernel):
        # window w covers position w*stride + j; those positions form a
        # non-overlapping strided slice for fixed j.
        out[:, j : j + stride * n_out : stride, :] += gd[:, :, j, :]

    def vjp(h: Tensor):
        return (reshape(unfold1d(h, kernel, stride), (B, n_out, KD)),)

    return Tensor(out, _parents=(g,), _vjp=vjp, _op="fold1d")


# ---------------------------------------------------------------------------
# helper compositions (stable softmax / cross-entropy / cosine)


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log softmax over the last axis, shift-stabilized."""
    shift = logits.data.max(axis=-1, keepdims=True)
    z = sub(logits, _const(shift))
    lse = log(tsum(exp(z), axis=-1, keepdims=True))
    return sub(z, lse)


def softmax_cross_entropy(logits: Tensor, onehot: np.ndarray, reduce_mean: bool = True) -> Tensor:
    """Cross-entropy between softmax(logits) and one-hot targets.

    Returns the batch mean by default, or the per-row vector with
    `reduce_mean=False`.
    """
    if onehot.shape != logits.shape:
        raise ShapeError(f"targets {onehot.shape} do not match logits {logits.shape}")
    logp = log_softmax(logits)
    picked = mul(logp, _const(onehot.astype(logits.data.dtype)))
    per_row = neg(tsum(picked, axis=-1))
    return tmean(per_row) if reduce_mean else per_row


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """cos(a, b) along `axis`, guarded against zero norms."""
    num = tsum(mul(a, b), axis=axis)
    eps_t = _const(np.asarray(eps, dtype=a.dtype))
    na = pow_const(add(tsum(mul(a, a), axis=axis), eps_t), 0.5)
    nb = pow_const(add(tsum(mul(b, b), axis=axis), eps_t), 0.5)
    return mul(num, pow_const(mul(na, nb), -1.0))


# ---------------------------------------------------------------------------
# backward


def _topo(sink: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(sink, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(sink: Tensor, wrt: Iterable[Tensor]) -> list[Tensor]:
    """Gradients of a scalar `sink` with respect to each tensor in `wrt`.

    Each returned gradient has the shape of its leaf. The gradients are
    themselves graph tensors, so they can be fed back into further ops and
    differentiated again (reverse over reverse). Each node's vjp runs
    exactly once.
    """
    if sink.data.size != 1:
        raise ShapeError(f"backward sink must be scalar, got shape {sink.shape}")
    wrt = list(wrt)
    grads: dict[int, Tensor] = {
        id(sink): _const(np.ones(sink.shape, dtype=sink.dtype))
    }
    for node in reversed(_topo(sink)):
        g = grads.pop(id(node), None)
        if g is None or node._vjp is None:
            if g is not None and id(node) in (id(w) for w in wrt):
                grads[id(node)] = g
            continue
        # keep leaf grads addressable after the sweep
        if any(id(node) == id(w) for w in wrt):
            grads[id(node)] = g
        contribs = node._vjp(g)
        for parent, contrib in zip(node._parents, contribs):
            if contrib is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else add(prev, contrib)
    out = []
    for w in wrt:
        g = grads.get(id(w))
        if g is None:
            g = _const(np.zeros(w.shape, dtype=w.dtype))
        out.append(g)
    return out


def grad_of_grad_dot(sink: Tensor, leaf_a: Tensor, vector: Tensor, leaf_b: Tensor) -> Tensor:
    """d/d(leaf_b) of [ d(sink)/d(leaf_a) . vector ] for a fixed vector.

    Reverse over reverse: the first backward pass extends the graph, the
    contraction with `vector` gives a new scalar, and a second backward
    pass differentiates it with respect to `leaf_b`.
    """
    if vector.shape != leaf_a.shape:
        raise ShapeError(
            f"vector shape {vector.shape} must match leaf_a shape {leaf_a.shape}"
        )
    (g_a,) = backward(sink, [leaf_a])
    contracted = tsum(mul(g_a, vector))
    (g_b,) = backward(contracted, [leaf_b])
    return g_b
