"""Reverse-mode differentiation over dense numpy arrays.

A Tape records one backward closure per primitive in execution order;
backward() replays them reversed, accumulating adjoints into .grad.
The primitive set is exactly what the network needs: matmul, add (same
shape or row bias), elementwise mul, leaky relu, batch norm, dropout,
gather/segment ops, column concat, reshape, and a per-row vector-matrix
contraction. No general broadcasting; shapes are checked per primitive.

Training runs in float32; gradient verification uses float64 inputs,
which every primitive preserves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError


class Tensor:
    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        return f"<tensor {self.values.shape} grad={self.requires_grad}>"


class Tape:
    """Execution-ordered record of backward closures."""

    def __init__(self):
        self._backwards: list = []

    def record(self, fn):
        self._backwards.append(fn)

    def backward(self, loss: Tensor):
        if loss.values.shape != ():
            raise ShapeError(f"backward needs a scalar, got {loss.values.shape}")
        if not np.isfinite(loss.values):
            raise NumericError("non-finite loss")
        loss.grad = np.ones_like(loss.values)
        for fn in reversed(self._backwards):
            fn()


def _make(tape: Tape | None, values, inputs, backward) -> Tensor:
    """Output tensor; records backward when any input is tracked."""
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=tracked)
    if tracked:
        tape.record(backward(out))
    return out


def _accum(t: Tensor, delta: np.ndarray, own: bool = False):
    """Add an adjoint contribution, allocating lazily.

    own=True hands the buffer over outright; callers assert the delta is
    freshly computed (or a view of a parent adjoint no closure will read
    again) and reaches exactly one tensor, so adopting it is safe. The
    lazy path is what keeps big per-pair intermediates from being
    zero-filled during the forward pass.
    """
    if t.grad is None:
        t.grad = delta if own else np.array(delta)
    else:
        t.grad += delta


def _check2d(name, *tensors):
    for t in tensors:
        if t.values.ndim != 2:
            raise ShapeError(f"{name}: expected 2-d operand, got {t.values.shape}")


def matmul(tape, a: Tensor, b: Tensor) -> Tensor:
    _check2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    values = a.values @ b.values

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g @ b.values.T, own=True)
            if b.requires_grad:
                _accum(b, a.values.T @ g, own=True)
        return fn

    return _make(tape, values, (a, b), backward)


def add(tape, a: Tensor, b: Tensor) -> Tensor:
    """Same-shape add, or b as a (1, k) row bias."""
    bias = b.values.ndim == 2 and b.shape[0] == 1 and a.values.ndim == 2 and a.shape[1] == b.shape[1]
    if a.shape != b.shape and not bias:
        raise ShapeError(f"add: {a.shape} + {b.shape}")
    values = a.values + b.values

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if bias and a.shape != b.shape:
                if a.requires_grad:
                    _accum(a, g, own=True)
                if b.requires_grad:
                    _accum(b, g.sum(axis=0, keepdims=True), own=True)
            else:
                # at most one copy: g itself goes to whichever comes last
                if a.requires_grad:
                    _accum(a, g, own=not b.requires_grad)
                if b.requires_grad:
                    _accum(b, g, own=True)
        return fn

    return _make(tape, values, (a, b), backward)


def mul(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} * {b.shape}")
    values = a.values * b.values

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g * b.values, own=True)
            if b.requires_grad:
                _accum(b, g * a.values, own=True)
        return fn

    return _make(tape, values, (a, b), backward)


def scale(tape, a: Tensor, factor: float) -> Tensor:
    values = a.values * factor

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g * factor, own=True)
        return fn

    return _make(tape, values, (a,), backward)


def scale_rows(tape, a: Tensor, factors: np.ndarray) -> Tensor:
    """Multiply row i by factors[i]; factors are constant."""
    _check2d("scale_rows", a)
    factors = np.asarray(factors)
    if factors.shape != (a.shape[0],):
        raise ShapeError(f"scale_rows: {a.shape} rows vs {factors.shape} factors")
    col = factors[:, None].astype(a.values.dtype)
    values = a.values * col

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g * col, own=True)
        return fn

    return _make(tape, values, (a,), backward)


def leaky_relu(tape, a: Tensor, slope: float = 0.2) -> Tensor:
    positive = a.values >= 0
    values = np.where(positive, a.values, slope * a.values)

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g * np.where(positive, 1.0, slope).astype(a.values.dtype), own=True)
        return fn

    return _make(tape, values, (a,), backward)


@dataclass
class BatchNormState:
    """Running statistics, updated in place during training."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def create(cls, width: int, dtype=np.float32):
        return cls(np.zeros(width, dtype=dtype), np.ones(width, dtype=dtype))


def batch_norm(
    tape,
    a: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    train: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    _check2d("batch_norm", a)
    k = a.shape[1]
    if gamma.shape != (1, k) or beta.shape != (1, k):
        raise ShapeError(f"batch_norm: scale/shift must be (1, {k})")
    v = a.values
    if train:
        mu = v.mean(axis=0)
        var = v.var(axis=0)
        state.mean[:] = momentum * state.mean + (1.0 - momentum) * mu
        state.var[:] = momentum * state.var + (1.0 - momentum) * var
    else:
        mu = state.mean.astype(v.dtype)
        var = state.var.astype(v.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (v - mu) * inv_std
    values = gamma.values * xhat + beta.values

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).sum(axis=0, keepdims=True), own=True)
            if beta.requires_grad:
                _accum(beta, g.sum(axis=0, keepdims=True), own=True)
            if a.requires_grad:
                gx = g * gamma.values
                if train:
                    m = v.shape[0]
                    centered = v - mu
                    dvar = (gx * centered).sum(axis=0) * -0.5 * inv_std**3
                    dmu = -(gx.sum(axis=0)) * inv_std + dvar * (-2.0 / m) * centered.sum(axis=0)
                    _accum(a, gx * inv_std + dvar * (2.0 / m) * centered + dmu / m, own=True)
                else:
                    _accum(a, gx * inv_std, own=True)
        return fn

    return _make(tape, values, (a, gamma, beta), backward)


def dropout(tape, a: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout; identity when p = 0 or in eval mode."""
    if not train or p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.values.dtype) / (1.0 - p)
    values = a.values * keep

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g * keep, own=True)
        return fn

    return _make(tape, values, (a,), backward)


def gather_rows(tape, a: Tensor, indices: np.ndarray) -> Tensor:
    _check2d("gather_rows", a)
    indices = np.asarray(indices, dtype=np.int64)
    values = a.values[indices]

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                if a.grad is None:
                    a.grad = np.zeros_like(a.values)
                np.add.at(a.grad, indices, g)
        return fn

    return _make(tape, values, (a,), backward)


def segment_sum(tape, a: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    _check2d("segment_sum", a)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.shape != (a.shape[0],):
        raise ShapeError(f"segment_sum: {a.shape} rows vs {segment_ids.shape} ids")
    values = np.zeros((num_segments, a.shape[1]), dtype=a.values.dtype)
    np.add.at(values, segment_ids, a.values)

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g[segment_ids], own=True)
        return fn

    return _make(tape, values, (a,), backward)


def segment_mean(tape, a: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    counts = np.bincount(np.asarray(segment_ids, dtype=np.int64), minlength=num_segments)
    if (counts == 0).any():
        raise ShapeError("segment_mean: empty segment")
    total = segment_sum(tape, a, segment_ids, num_segments)
    return scale_rows(tape, total, 1.0 / counts)


def mean_rows(tape, a: Tensor) -> Tensor:
    _check2d("mean_rows", a)
    m = a.shape[0]
    values = a.values.mean(axis=0, keepdims=True)

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, np.broadcast_to(g / m, a.values.shape))
        return fn

    return _make(tape, values, (a,), backward)


def concat_cols(tape, a: Tensor, b: Tensor) -> Tensor:
    _check2d("concat_cols", a, b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: {a.shape} | {b.shape}")
    values = np.concatenate([a.values, b.values], axis=1)
    split = a.shape[1]

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            # disjoint views of a dead adjoint: safe to hand over
            if a.requires_grad:
                _accum(a, g[:, :split], own=True)
            if b.requires_grad:
                _accum(b, g[:, split:], own=True)
        return fn

    return _make(tape, values, (a, b), backward)


def reshape(tape, a: Tensor, shape: tuple) -> Tensor:
    values = a.values.reshape(shape)

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g.reshape(a.values.shape), own=True)
        return fn

    return _make(tape, values, (a,), backward)


def row_vecmat(tape, a: Tensor, b: Tensor) -> Tensor:
    """Per-row contraction: out[e, k] = sum_t a[e, t] * b[e, t, k]."""
    if a.values.ndim != 2 or b.values.ndim != 3 or a.shape != b.shape[:2]:
        raise ShapeError(f"row_vecmat: {a.shape} with {b.shape}")
    values = np.einsum("et,etk->ek", a.values, b.values)

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, np.einsum("ek,etk->et", g, b.values), own=True)
            if b.requires_grad:
                _accum(b, np.einsum("et,ek->etk", a.values, g), own=True)
        return fn

    return _make(tape, values, (a, b), backward)


def sum_squares(tape, a: Tensor) -> Tensor:
    values = np.asarray((a.values**2).sum(), dtype=a.values.dtype)

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, 2.0 * a.values * g, own=True)
        return fn

    return _make(tape, values, (a,), backward)


def add_scalars(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != () or b.values.shape != ():
        raise ShapeError(f"add_scalars: {a.shape} + {b.shape}")
    values = a.values + b.values

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                _accum(b, g)
        return fn

    return _make(tape, values, (a, b), backward)


def softmax_cross_entropy(
    tape, logits: Tensor, labels: np.ndarray, sample_weights: np.ndarray | None = None
) -> Tensor:
    """Weighted mean cross entropy over rows; labels are class ids."""
    _check2d("softmax_cross_entropy", logits)
    labels = np.asarray(labels, dtype=np.int64)
    m, _ = logits.shape
    if labels.shape != (m,):
        raise ShapeError(f"softmax_cross_entropy: {logits.shape} logits vs {labels.shape} labels")
    if sample_weights is None:
        weights = np.full(m, 1.0 / m)
    else:
        sample_weights = np.asarray(sample_weights, dtype=np.float64)
        weights = sample_weights / sample_weights.sum()
    z = logits.values
    zmax = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)) + zmax
    losses = lse[:, 0] - z[np.arange(m), labels]
    values = np.asarray((losses * weights).sum(), dtype=z.dtype)

    def backward(out):
        def fn():
            g = out.grad
            if g is None:
                return
            if logits.requires_grad:
                probs = np.exp(z - lse)
                probs[np.arange(m), labels] -= 1.0
                _accum(logits, probs * (weights[:, None] * g).astype(z.dtype), own=True)
        return fn

    return _make(tape, values, (logits,), backward)


def gradient_check(fn, arrays: list[np.ndarray], epsilon: float = 1e-3, max_coords: int | None = None, rng=None) -> float:
    """Max relative error between tape gradients and central differences.

    fn(tape, tensors) must return a scalar Tensor. Arrays should be
    float64. When max_coords is set, that many coordinates are sampled
    per array instead of sweeping all of them.
    """
    tensors = [Tensor(np.asarray(a, dtype=np.float64), requires_grad=True) for a in arrays]
    tape = Tape()
    loss = fn(tape, tensors)
    tape.backward(loss)
    for t in tensors:
        if t.grad is None:
            t.grad = np.zeros_like(t.values)
    if not all(np.isfinite(t.grad).all() for t in tensors):
        raise NumericError("non-finite analytic gradient")

    worst = 0.0
    for t in tensors:
        flat = t.values.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            picker = rng if rng is not None else np.random.default_rng(0)
            coords = picker.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            original = flat[c]
            flat[c] = original + epsilon
            hi = float(fn(Tape(), [Tensor(x.values) for x in tensors]).values)
            flat[c] = original - epsilon
            lo = float(fn(Tape(), [Tensor(x.values) for x in tensors]).values)
            flat[c] = original
            numeric = (hi - lo) / (2.0 * epsilon)
            analytic = t.grad.reshape(-1)[c]
            if not np.isfinite(numeric):
                raise NumericError("non-finite numeric gradient")
            err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, err)
    return worst


def global_grad_norm(tensors: list[Tensor]) -> float:
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float((t.grad.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))
