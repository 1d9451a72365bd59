"""Dense tensors with a recording tape and reverse-mode gradients.

Only the operations the keyword models need are provided. Every op works on
2-D ``time x channel`` arrays (or vectors) and follows the dtype of its
inputs, so the same code runs in float32 for training and float64 for
finite-difference checks.

Usage::

    with Tape() as tape:
        h = relu(conv1d(x, w, b))
        loss = sum_all(h)
    grads = backward(loss, tape)
    grads[w]   # ndarray with the shape of w
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "TapeError",
    "Tensor",
    "Tape",
    "Gradients",
    "backward",
    "conv1d",
    "maxpool1d",
    "max_over_time",
    "dense",
    "matmul",
    "transpose",
    "relu",
    "sigmoid",
    "softmax",
    "logsumexp_pool",
    "take_rows",
    "add",
    "scale",
    "sum_all",
    "binary_cross_entropy",
    "check_gradients",
]

BCE_EPS = 1e-7

_local = threading.local()


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    """A value node. ``requires_grad`` marks leaves whose gradients are wanted."""

    __slots__ = ("data", "requires_grad", "name", "tracked")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, (np.ndarray, np.floating)) and np.issubdtype(data.dtype, np.floating):
            arr = np.asarray(data)
        else:
            arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        # True for leaves that want gradients and for anything computed from them.
        self.tracked = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"


class Tape:
    """Records ops executed inside a ``with`` block.

    A tape belongs to one thread. ``kinks`` collects the discrete choices made
    by piecewise ops (ReLU masks, max-pool winners); finite-difference checks
    compare them to detect steps that crossed a non-differentiable point.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.produced: set[int] = set()
        self.kinks: list[np.ndarray] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def kink_signature(self) -> tuple[bytes, ...]:
        return tuple(k.tobytes() for k in self.kinks)


def _active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(p.tracked for p in parents):
        out.tracked = True
        tape.nodes.append((out, tuple(parents), grad_fn))
        tape.produced.add(id(out))
    return out


def _note_kink(arr: np.ndarray) -> None:
    tape = _active_tape()
    if tape is not None:
        tape.kinks.append(arr)


class Gradients:
    """Gradients keyed by tensor identity. Missing entries read as zeros."""

    def __init__(self):
        self._grads: dict[int, np.ndarray] = {}
        self._tensors: dict[int, Tensor] = {}

    def _add(self, t: Tensor, g: np.ndarray) -> None:
        key = id(t)
        if key in self._grads:
            self._grads[key] = self._grads[key] + g
        else:
            self._grads[key] = g
            self._tensors[key] = t

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())


def backward(output: Tensor, tape: Tape, grad_output=None) -> Gradients:
    """Propagate from ``output`` back through ``tape``.

    ``output`` must be a scalar unless ``grad_output`` (the seed gradient,
    same shape as ``output``) is given. Returns gradients for every leaf with
    ``requires_grad`` that lies on a path to ``output``.
    """
    if id(output) not in tape.produced:
        raise TapeError("backward() called on a tensor that was not recorded on this tape")
    if grad_output is None:
        if output.data.size != 1:
            raise ShapeError(f"backward() needs a scalar output, got shape {output.shape}")
        seed = np.ones_like(output.data)
    else:
        seed = np.asarray(grad_output, dtype=output.dtype)
        if seed.shape != output.shape:
            raise ShapeError(f"grad_output shape {seed.shape} != output shape {output.shape}")

    pending: dict[int, np.ndarray] = {id(output): seed}
    result = Gradients()
    for out, parents, grad_fn in reversed(tape.nodes):
        g = pending.pop(id(out), None)
        if g is None:
            continue
        for parent, pg in zip(parents, grad_fn(g)):
            if pg is None or not parent.tracked:
                continue
            key = id(parent)
            if key in tape.produced:
                prev = pending.get(key)
                pending[key] = pg if prev is None else prev + pg
            if parent.requires_grad:
                result._add(parent, pg)
    return result


# --------------------------------------------------------------------------
# Ops
# --------------------------------------------------------------------------


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """Stride-1 convolution of ``x[T, C_in]`` with ``kernels[C_out, width, C_in]``."""
    x, kernels, bias = _as_tensor(x), _as_tensor(kernels), _as_tensor(bias)
    if x.data.ndim != 2 or kernels.data.ndim != 3:
        raise ShapeError(f"conv1d expects x[T,C] and kernels[C_out,width,C_in], got {x.shape}, {kernels.shape}")
    T, c_in = x.shape
    c_out, width, k_in = kernels.shape
    if k_in != c_in:
        raise ShapeError(f"conv1d channel mismatch: input has {c_in}, kernels expect {k_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv1d bias shape {bias.shape} != ({c_out},)")
    if width < 1:
        raise ShapeError("conv1d width must be >= 1")
    if padding == "same":
        if width % 2 == 0:
            raise ShapeError("same padding needs an odd kernel width")
        pad = width // 2
    elif padding == "valid":
        if T < width:
            raise ShapeError(f"valid conv needs T >= width ({T} < {width})")
        pad = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")

    if pad:
        xp = np.zeros((T + 2 * pad, c_in), dtype=x.dtype)
        xp[pad : pad + T] = x.data
    else:
        xp = x.data
    t_out = xp.shape[0] - width + 1
    # im2col with rows laid out as (width, C_in) to match the kernels; an
    # explicit contiguous copy is much faster to multiply than a strided view
    cols = np.empty((t_out, width, c_in), dtype=xp.dtype)
    for j in range(width):
        cols[:, j, :] = xp[j : j + t_out]
    cols = cols.reshape(t_out, width * c_in)
    wmat = kernels.data.reshape(c_out, width * c_in)
    out = cols @ wmat.T + bias.data

    def grad_fn(g):
        gw = (g.T @ cols).reshape(c_out, width, c_in)
        gb = g.sum(axis=0)
        gcols = (g @ wmat).reshape(t_out, width, c_in)
        gxp = np.zeros_like(xp)
        for j in range(width):
            gxp[j : j + t_out] += gcols[:, j, :]
        gx = gxp[pad : pad + T] if pad else gxp
        return gx, gw, gb

    return _record(out, (x, kernels, bias), grad_fn)


def _pool_windows(data: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    T, C = data.shape
    n = -(-T // window)
    padded = np.full((n * window, C), -np.inf, dtype=data.dtype)
    padded[:T] = data
    blocks = padded.reshape(n, window, C)
    arg = blocks.argmax(axis=1)  # first maximal index wins
    return blocks, arg


def maxpool1d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max-pool over time; the last window may be partial."""
    x = _as_tensor(x)
    if window < 1:
        raise ShapeError("maxpool window must be >= 1")
    if x.data.ndim != 2:
        raise ShapeError(f"maxpool1d expects x[T,C], got {x.shape}")
    T, C = x.shape
    blocks, arg = _pool_windows(x.data, window)
    n = blocks.shape[0]
    cols = np.arange(C)
    out = blocks[np.arange(n)[:, None], arg, cols[None, :]]
    src = np.arange(n)[:, None] * window + arg  # source frame per output cell
    _note_kink(src)

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[src, cols[None, :]] = g  # windows are disjoint, so no collisions
        return (gx,)

    return _record(out, (x,), grad_fn)


def max_over_time(x: Tensor) -> Tensor:
    """Global max over the time axis: ``[T, C] -> [C]``."""
    x = _as_tensor(x)
    T, C = x.shape
    arg = x.data.argmax(axis=0)
    cols = np.arange(C)
    out = x.data[arg, cols]
    _note_kink(arg)

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[arg, cols] = g
        return (gx,)

    return _record(out, (x,), grad_fn)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ W.T + b`` for ``x[N]`` or a batch ``x[B, N]``."""
    x, weights, bias = _as_tensor(x), _as_tensor(weights), _as_tensor(bias)
    m, n = weights.shape
    if x.shape[-1] != n or x.data.ndim not in (1, 2):
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (m,):
        raise ShapeError(f"dense: bias {bias.shape} != ({m},)")
    out = x.data @ weights.data.T + bias.data

    def grad_fn(g):
        gx = g @ weights.data
        if x.data.ndim == 1:
            gw = np.outer(g, x.data)
            gb = g
        else:
            gw = g.T @ x.data
            gb = g.sum(axis=0)
        return gx, gw, gb

    return _record(out, (x, weights, bias), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), grad_fn)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _record(a.data.T.copy(), (a,), lambda g: (g.T,))


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0  # gradient at exactly zero is 0
    _note_kink(mask)
    return _record(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(z.dtype)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = _sigmoid(x.data)
    return _record(y, (x,), lambda g: (g * y * (1 - y),))


def softmax(x: Tensor, axis: int = 0) -> Tensor:
    """Softmax along ``axis`` (time by default), computed with max subtraction."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (x,), grad_fn)


def logsumexp_pool(scores: Tensor, r: float) -> Tensor:
    """Smooth max over time: ``(1/r) log mean_t exp(r s_t)`` for each column.

    Interpolates between the mean (r -> 0) and the max (r -> inf). Accepts
    ``[T]`` or ``[T, W]``; reduces axis 0.
    """
    scores = _as_tensor(scores)
    if not r > 0:
        raise ValueError(f"aggregation sharpness r must be > 0, got {r}")
    s = scores.data
    if s.shape[0] < 1:
        raise ShapeError("logsumexp_pool needs at least one frame")
    m = s.max(axis=0)
    e = np.exp(r * (s - m))
    total = e.sum(axis=0)
    out = (m + (np.log(total) - np.log(s.shape[0])) / r).astype(s.dtype)
    weights = e / total

    return _record(out, (scores,), lambda g: (weights * g,))


def take_rows(table: Tensor, index) -> Tensor:
    """Row lookup ``table[index]``; gradients scatter back to the chosen rows."""
    table = _as_tensor(table)
    idx = np.asarray(index, dtype=np.intp)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"row index out of range for table with {n} rows")
    out = table.data[idx]

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (table,), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch {a.shape} vs {b.shape}")
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    return _record((a.data * c).astype(a.dtype), (a,), lambda g: (g * c,))


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.asarray(a.data.sum(dtype=np.float64), dtype=a.dtype)
    return _record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def binary_cross_entropy(p: Tensor, target) -> Tensor:
    """Summed ``-[y log p + (1-y) log(1-p)]`` with p clamped to [eps, 1-eps].

    ``target`` is a constant array of values in [0, 1]; soft targets allowed.
    The gradient is evaluated at the clamped probability and passed through,
    so saturated predictions still receive a bounded learning signal.
    """
    p = _as_tensor(p)
    y = np.asarray(target, dtype=p.dtype)
    if y.shape != p.shape:
        raise ShapeError(f"target shape {y.shape} != prediction shape {p.shape}")
    if np.any((y < 0) | (y > 1)) or not np.all(np.isfinite(y)):
        raise ValueError("targets must lie in [0, 1]")
    pc = np.clip(p.data.astype(np.float64), BCE_EPS, 1 - BCE_EPS)
    losses = -(y * np.log(pc) + (1 - y) * np.log1p(-pc))
    out = np.asarray(losses.sum(), dtype=p.dtype)

    def grad_fn(g):
        d = (-(y / pc) + (1 - y) / (1 - pc)) * g
        return (d.astype(p.dtype),)

    return _record(out, (p,), grad_fn)


# --------------------------------------------------------------------------
# Finite-difference checking
# --------------------------------------------------------------------------


def check_gradients(
    loss_fn: Callable[[], tuple[Tensor, Tape]],
    params: Iterable[Tensor],
    step: float = 1e-3,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must build the loss under a fresh tape and return
    ``(loss, tape)``. Parameters are perturbed in place and restored.
    Coordinates whose +/- step changes any ReLU or max-pool decision are
    skipped. Returns the norm-wise relative error per parameter name.
    """
    params = list(params)
    loss, tape = loss_fn()
    grads = backward(loss, tape)
    base_sig = tape.kink_signature()
    errors: dict[str, float] = {}
    for i, p in enumerate(params):
        analytic = grads[p].ravel()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        a_vals, n_vals = [], []
        for j in coords:
            orig = flat[j]
            flat[j] = orig + step
            lp, tp = loss_fn()
            flat[j] = orig - step
            lm, tm = loss_fn()
            flat[j] = orig
            if tp.kink_signature() != base_sig or tm.kink_signature() != base_sig:
                continue
            n_vals.append((float(lp.data) - float(lm.data)) / (2 * step))
            a_vals.append(float(analytic[j]))
        a = np.asarray(a_vals)
        n = np.asarray(n_vals)
        denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
        errors[p.name or f"param{i}"] = float(np.linalg.norm(a - n) / denom) if a.size else 0.0
    return errors
