"""Dense float64 tensors with tape-based reverse-mode differentiation.

Deliberately small: only the primitives needed to express DAG-cell
supernets (separable convolutions, pooling, concatenation, classifier
head) and the probability machinery behind architecture weights
(softmax, masked softmax, weighted mixtures, matrix/vector products).

Conventions
-----------
* Everything is float64.  The tolerances downstream (simplex sums,
  finite-difference gradient checks) are too tight for float32.
* Operations record onto the innermost active :class:`Tape` whenever any
  input requires a gradient.  With no active tape they evaluate plainly.
* ``backward(root)`` runs one reverse sweep over the tape, overwrites
  ``.grad`` on every reachable leaf, and returns a ``{tensor: grad}``
  map.  A tape can be swept once; ``reset()`` re-arms it.
* Leaves that never entered the computation keep ``grad = None`` (their
  derivative is identically zero); optimizers treat ``None`` as zero.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "TapeError",
    "NonFiniteError",
    "set_checked",
    "checked_enabled",
    "backward",
    "apply_primitive",
    "finite_diff_check",
    "add",
    "mul",
    "neg",
    "scale",
    "smul",
    "exp",
    "log",
    "relu",
    "softmax",
    "log_softmax",
    "masked_softmax",
    "matvec",
    "vecmat",
    "matmul",
    "dwconv2d",
    "pwconv2d",
    "avg_pool3x3",
    "max_pool3x3",
    "concat_channels",
    "global_avg_pool",
    "affine",
    "nll",
    "reduce_sum",
    "index",
    "weighted_sum",
]


class ShapeError(ValueError):
    """Inputs have shapes the primitive cannot accept."""


class TapeError(RuntimeError):
    """Misuse of the recording tape (missing root, double backward, ...)."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf was observed while checked mode is enabled."""


_state = threading.local()


def _tape_stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def set_checked(flag: bool) -> None:
    """Enable or disable NaN/Inf scanning on tensor creation (off by default)."""
    _state.checked = bool(flag)


def checked_enabled() -> bool:
    return getattr(_state, "checked", False)


def _ensure_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value in {what}")


class Tensor:
    """A dense float64 array, optionally participating in differentiation."""

    __slots__ = ("values", "grad", "requires_grad", "_tape", "_retain")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if checked_enabled():
            _ensure_finite(arr, "tensor values")
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._tape: Tape | None = None
        self._retain = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def retain_grad(self) -> "Tensor":
        """Ask backward to store this intermediate's gradient too."""
        self._retain = True
        return self

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive applications; context manager.

    Record order is a topological order of the computation by
    construction, so one reverse sweep visits every node exactly once.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._swept = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    def reset(self) -> None:
        """Drop all records and re-arm the tape for another backward."""
        self._records.clear()
        self._swept = False

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
        self._records.append((out, inputs, vjp))
        out._tape = self

    def backward(self, root: Tensor) -> dict[Tensor, np.ndarray]:
        if root.values.size != 1:
            raise TapeError(f"backward root must be scalar, got shape {root.shape}")
        if root._tape is not self:
            raise TapeError("root was not recorded on this tape")
        if self._swept:
            raise TapeError("backward already ran on this tape; call reset() first")
        self._swept = True

        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.values)}
        holders: dict[int, Tensor] = {id(root): root}
        result: dict[Tensor, np.ndarray] = {}

        for out, inputs, vjp in reversed(self._records):
            g = grads.pop(id(out), None)
            holders.pop(id(out), None)
            if g is None:
                continue
            if out._retain:
                out.grad = g
                result[out] = g
            for t, gt in zip(inputs, vjp(g)):
                if gt is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gt
                else:
                    grads[key] = gt
                    holders[key] = t

        # whatever is left was never produced by a record: these are leaves
        for key, g in grads.items():
            leaf = holders[key]
            leaf.grad = np.asarray(g)
            result[leaf] = leaf.grad
        return result


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar root; see :meth:`Tape.backward`."""
    if root._tape is None:
        raise TapeError("root is not on any tape")
    return root._tape.backward(root)


def _finish(inputs: tuple[Tensor, ...], out_values: np.ndarray, vjp) -> Tensor:
    if checked_enabled():
        _ensure_finite(out_values, "primitive output")
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_values, requires_grad=track)
    if track:
        tape._record(out, inputs, vjp)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.values.shape != b.values.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    return _finish((a, b), a.values + b.values, lambda g: (g, g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")
    av, bv = a.values, b.values
    return _finish((a, b), av * bv, lambda g: (g * bv, g * av))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _finish((a,), -a.values, lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    """Multiply by a plain (non-differentiated) scalar constant."""
    a = _as_tensor(a)
    c = float(c)
    return _finish((a,), a.values * c, lambda g: (g * c,))


def smul(s, a) -> Tensor:
    """Multiply tensor ``a`` by a one-element tensor ``s``; grads reach both."""
    s, a = _as_tensor(s), _as_tensor(a)
    if s.values.size != 1:
        raise ShapeError(f"smul scalar has shape {s.shape}")
    sv = float(s.values.reshape(()))
    av = a.values

    def vjp(g):
        return (np.sum(g * av).reshape(s.values.shape), g * sv)

    return _finish((s, a), av * sv, vjp)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.values)
    return _finish((a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    av = a.values
    return _finish((a,), np.log(av), lambda g: (g / av,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    av = a.values
    return _finish((a,), np.maximum(av, 0.0), lambda g: (g * (av > 0.0),))


def reduce_sum(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.values.shape
    return _finish((a,), np.sum(a.values), lambda g: (np.broadcast_to(g, shape),))


def index(v, i: int) -> Tensor:
    """Pick element ``i`` from a vector as a scalar tensor."""
    v = _as_tensor(v)
    if v.values.ndim != 1:
        raise ShapeError(f"index expects a vector, got shape {v.shape}")
    i = int(i)
    n = v.values.shape[0]
    if not 0 <= i < n:
        raise ShapeError(f"index {i} out of range for length {n}")

    def vjp(g):
        gi = np.zeros(n)
        gi[i] = g
        return (gi,)

    return _finish((v,), np.asarray(v.values[i]), vjp)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------


def _softmax_values(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a) -> Tensor:
    """Softmax over the last axis (row-wise for matrices)."""
    a = _as_tensor(a)
    out = _softmax_values(a.values)

    def vjp(g):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _finish((a,), out, vjp)


def log_softmax(a) -> Tensor:
    a = _as_tensor(a)
    x = a.values
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * np.sum(g, axis=-1, keepdims=True),)

    return _finish((a,), out, vjp)


def masked_softmax(a, active) -> Tensor:
    """Softmax over the active entries of a vector; inactive entries are exactly 0.

    ``active`` is a boolean mask of the same length.  At least one entry
    must be active.
    """
    a = _as_tensor(a)
    av = a.values
    if av.ndim != 1:
        raise ShapeError(f"masked_softmax expects a vector, got shape {a.shape}")
    mask = np.asarray(active, dtype=bool)
    if mask.shape != av.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match {a.shape}")
    if not mask.any():
        raise ValueError("masked_softmax: no active entries")
    out = np.zeros_like(av)
    sub = av[mask]
    e = np.exp(sub - sub.max())
    out[mask] = e / e.sum()

    def vjp(g):
        gi = np.zeros_like(av)
        s = out[mask]
        gm = g[mask]
        gi[mask] = s * (gm - np.sum(gm * s))
        return (gi,)

    return _finish((a,), out, vjp)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matvec(m, v) -> Tensor:
    m, v = _as_tensor(m), _as_tensor(v)
    if m.values.ndim != 2 or v.values.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: incompatible shapes {m.shape} and {v.shape}")
    mv, vv = m.values, v.values
    return _finish((m, v), mv @ vv, lambda g: (np.outer(g, vv), mv.T @ g))


def vecmat(v, m) -> Tensor:
    """Row vector times matrix: ``out_t = sum_s v_s * m[s, t]``."""
    v, m = _as_tensor(v), _as_tensor(m)
    if v.values.ndim != 1 or m.values.ndim != 2 or v.shape[0] != m.shape[0]:
        raise ShapeError(f"vecmat: incompatible shapes {v.shape} and {m.shape}")
    vv, mv = v.values, m.values
    return _finish((v, m), vv @ mv, lambda g: (mv @ g, np.outer(vv, g)))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    return _finish((a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def affine(x, w, b) -> Tensor:
    """Fully connected layer: ``x @ w + b`` with ``x`` of shape [N, F]."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.values.ndim != 2 or w.values.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: incompatible shapes {x.shape} and {w.shape}")
    if b.values.shape != (w.shape[1],):
        raise ShapeError(f"affine: bias shape {b.shape} does not match {w.shape}")
    xv, wv = x.values, w.values
    out = xv @ wv + b.values

    def vjp(g):
        return (g @ wv.T, xv.T @ g, g.sum(axis=0))

    return _finish((x, w, b), out, vjp)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------


def _check_nchw(x: Tensor, op: str) -> None:
    if x.values.ndim != 4:
        raise ShapeError(f"{op} expects [N, C, H, W], got shape {x.shape}")


def _out_extent(size: int, pad: int, reach: int, stride: int) -> int:
    out = (size + 2 * pad - reach) // stride + 1
    if out < 1:
        raise ShapeError(
            f"window of reach {reach} with pad {pad} does not fit extent {size}"
        )
    return out


def dwconv2d(x, w, stride: int = 1, dilation: int = 1, padding: int | None = None) -> Tensor:
    """Depthwise 2-D convolution with zero padding.

    ``x`` is [N, C, H, W]; ``w`` is [C, kh, kw], one kernel per channel.
    ``padding`` defaults to the value preserving spatial size at stride 1.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    _check_nchw(x, "dwconv2d")
    if w.values.ndim != 3 or w.shape[0] != x.shape[1]:
        raise ShapeError(f"dwconv2d: kernel shape {w.shape} does not match input {x.shape}")
    if stride < 1 or dilation < 1:
        raise ValueError(f"dwconv2d: bad stride/dilation {stride}/{dilation}")
    n, c, h, wid = x.shape
    kh, kw = w.shape[1], w.shape[2]
    if padding is None:
        padding = dilation * (kh - 1) // 2
    reach_h = dilation * (kh - 1) + 1
    reach_w = dilation * (kw - 1) + 1
    ho = _out_extent(h, padding, reach_h, stride)
    wo = _out_extent(wid, padding, reach_w, stride)

    xp = np.pad(x.values, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    wv = w.values
    out = np.zeros((n, c, ho, wo))
    for i in range(kh):
        for j in range(kw):
            patch = xp[
                :,
                :,
                i * dilation : i * dilation + stride * (ho - 1) + 1 : stride,
                j * dilation : j * dilation + stride * (wo - 1) + 1 : stride,
            ]
            out += patch * wv[None, :, i, j, None, None]

    def vjp(g):
        gw = np.zeros_like(wv)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                rows = slice(i * dilation, i * dilation + stride * (ho - 1) + 1, stride)
                cols = slice(j * dilation, j * dilation + stride * (wo - 1) + 1, stride)
                gw[:, i, j] = np.sum(g * xp[:, :, rows, cols], axis=(0, 2, 3))
                gxp[:, :, rows, cols] += g * wv[None, :, i, j, None, None]
        gx = gxp[:, :, padding : padding + h, padding : padding + wid]
        return (gx, gw)

    return _finish((x, w), out, vjp)


def pwconv2d(x, w, b, stride: int = 1) -> Tensor:
    """Pointwise (1x1) convolution with bias; ``w`` is [C_out, C_in]."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    _check_nchw(x, "pwconv2d")
    if w.values.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"pwconv2d: weight shape {w.shape} does not match input {x.shape}")
    if b.values.shape != (w.shape[0],):
        raise ShapeError(f"pwconv2d: bias shape {b.shape} does not match weight {w.shape}")
    if stride < 1:
        raise ValueError(f"pwconv2d: bad stride {stride}")
    xs = x.values[:, :, ::stride, ::stride]
    wv = w.values
    out = np.einsum("oc,nchw->nohw", wv, xs) + b.values[None, :, None, None]

    def vjp(g):
        gw = np.einsum("nohw,nchw->oc", g, xs)
        gb = g.sum(axis=(0, 2, 3))
        gx = np.zeros_like(x.values)
        gx[:, :, ::stride, ::stride] = np.einsum("oc,nohw->nchw", wv, g)
        return (gx, gw, gb)

    return _finish((x, w, b), out, vjp)


def avg_pool3x3(x, stride: int = 1) -> Tensor:
    """3x3 average pooling, zero padding 1, averaging over the full window."""
    x = _as_tensor(x)
    _check_nchw(x, "avg_pool3x3")
    n, c, h, w = x.shape
    ho = _out_extent(h, 1, 3, stride)
    wo = _out_extent(w, 1, 3, stride)
    xp = np.pad(x.values, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, c, ho, wo))
    for i in range(3):
        for j in range(3):
            out += xp[
                :,
                :,
                i : i + stride * (ho - 1) + 1 : stride,
                j : j + stride * (wo - 1) + 1 : stride,
            ]
    out /= 9.0

    def vjp(g):
        gxp = np.zeros_like(xp)
        gg = g / 9.0
        for i in range(3):
            for j in range(3):
                gxp[
                    :,
                    :,
                    i : i + stride * (ho - 1) + 1 : stride,
                    j : j + stride * (wo - 1) + 1 : stride,
                ] += gg
        return (gxp[:, :, 1 : 1 + h, 1 : 1 + w],)

    return _finish((x,), out, vjp)


def max_pool3x3(x, stride: int = 1) -> Tensor:
    """3x3 max pooling, padding 1.

    Padding cells never win (padded with -inf).  Gradient routes to the
    first maximal element of each window in row-major scan order.
    """
    x = _as_tensor(x)
    _check_nchw(x, "max_pool3x3")
    n, c, h, w = x.shape
    ho = _out_extent(h, 1, 3, stride)
    wo = _out_extent(w, 1, 3, stride)
    xp = np.pad(
        x.values, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf
    )
    taps = np.empty((9, n, c, ho, wo))
    k = 0
    for i in range(3):
        for j in range(3):
            taps[k] = xp[
                :,
                :,
                i : i + stride * (ho - 1) + 1 : stride,
                j : j + stride * (wo - 1) + 1 : stride,
            ]
            k += 1
    winner = taps.argmax(axis=0)  # first max in row-major window order
    out = np.take_along_axis(taps, winner[None], axis=0)[0]

    def vjp(g):
        gxp = np.zeros_like(xp)
        k = 0
        for i in range(3):
            for j in range(3):
                gxp[
                    :,
                    :,
                    i : i + stride * (ho - 1) + 1 : stride,
                    j : j + stride * (wo - 1) + 1 : stride,
                ] += g * (winner == k)
                k += 1
        return (gxp[:, :, 1 : 1 + h, 1 : 1 + w],)

    return _finish((x,), out, vjp)


def concat_channels(tensors) -> Tensor:
    """Concatenate [N, C_i, H, W] tensors along the channel axis."""
    ts = tuple(_as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat_channels: empty input list")
    for t in ts:
        _check_nchw(t, "concat_channels")
    base = ts[0].shape
    for t in ts[1:]:
        if t.shape[0] != base[0] or t.shape[2:] != base[2:]:
            raise ShapeError(f"concat_channels: mismatched shapes {base} vs {t.shape}")
    sizes = [t.shape[1] for t in ts]
    out = np.concatenate([t.values for t in ts], axis=1)

    def vjp(g):
        pieces = []
        start = 0
        for s in sizes:
            pieces.append(g[:, start : start + s])
            start += s
        return tuple(pieces)

    return _finish(ts, out, vjp)


def global_avg_pool(x) -> Tensor:
    """Mean over the spatial axes: [N, C, H, W] -> [N, C]."""
    x = _as_tensor(x)
    _check_nchw(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.values.mean(axis=(2, 3))

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)),)

    return _finish((x,), out, vjp)


def weighted_sum(weights, tensors) -> Tensor:
    """Mixture ``sum_k weights[k] * tensors[k]`` accumulated in index order."""
    w = _as_tensor(weights)
    ts = tuple(_as_tensor(t) for t in tensors)
    if w.values.ndim != 1 or w.shape[0] != len(ts):
        raise ShapeError(
            f"weighted_sum: {len(ts)} tensors but weight shape {w.shape}"
        )
    if not ts:
        raise ShapeError("weighted_sum: empty tensor list")
    base = ts[0].shape
    for t in ts[1:]:
        if t.shape != base:
            raise ShapeError(f"weighted_sum: mismatched shapes {base} vs {t.shape}")
    wv = w.values
    out = wv[0] * ts[0].values
    for k in range(1, len(ts)):
        out = out + wv[k] * ts[k].values

    def vjp(g):
        gw = np.array([np.sum(g * t.values) for t in ts])
        return (gw, *[wv[k] * g for k in range(len(ts))])

    return _finish((w, *ts), out, vjp)


def nll(log_probs, labels) -> Tensor:
    """Mean negative log-likelihood over a batch of log-probability rows."""
    lp = _as_tensor(log_probs)
    if lp.values.ndim != 2:
        raise ShapeError(f"nll expects [N, classes], got shape {lp.shape}")
    y = np.asarray(labels, dtype=np.intp)
    n, classes = lp.shape
    if y.shape != (n,):
        raise ShapeError(f"nll: {n} rows but labels shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise ValueError(f"nll: label out of range [0, {classes})")
    rows = np.arange(n)
    out = -lp.values[rows, y].mean()

    def vjp(g):
        gi = np.zeros_like(lp.values)
        gi[rows, y] = -float(g) / n
        return (gi,)

    return _finish((lp,), np.asarray(out), vjp)


# ---------------------------------------------------------------------------
# generic dispatch and gradient checking
# ---------------------------------------------------------------------------

_PRIMITIVES = {
    "add": add,
    "mul": mul,
    "neg": neg,
    "scale": scale,
    "smul": smul,
    "exp": exp,
    "log": log,
    "relu": relu,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "masked_softmax": masked_softmax,
    "matvec": matvec,
    "vecmat": vecmat,
    "matmul": matmul,
    "affine": affine,
    "dwconv2d": dwconv2d,
    "pwconv2d": pwconv2d,
    "avg_pool3x3": avg_pool3x3,
    "max_pool3x3": max_pool3x3,
    "global_avg_pool": global_avg_pool,
    "nll": nll,
    "sum": reduce_sum,
    "index": index,
}


def apply_primitive(kind: str, inputs, attrs: dict | None = None) -> Tensor:
    """Apply a primitive by name.  List-valued primitives take the list as inputs."""
    attrs = dict(attrs or {})
    if kind == "concat_channels":
        return concat_channels(inputs)
    if kind == "weighted_sum":
        return weighted_sum(inputs[0], inputs[1:])
    fn = _PRIMITIVES.get(kind)
    if fn is None:
        raise ValueError(f"unknown primitive {kind!r}")
    return fn(*inputs, **attrs)


def finite_diff_check(f, params, h: float = 1e-5) -> float:
    """Compare reverse-mode gradients of ``f()`` against central differences.

    ``f`` must be a deterministic scalar function of the current values of
    ``params`` (freeze any randomness before calling).  Returns the max
    over all parameter components of

        |analytic - numeric| / max(1, |numeric|).

    Parameter values are perturbed in place and restored.
    """
    base1 = _scalar_value(f)
    base2 = _scalar_value(f)
    if base1 != base2:
        raise RuntimeError(
            f"finite_diff_check: f is not deterministic ({base1!r} != {base2!r})"
        )

    with Tape() as tape:
        out = f()
    grads = tape.backward(out)

    worst = 0.0
    for p in params:
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.values)
        for idx in np.ndindex(p.values.shape):
            orig = p.values[idx]
            p.values[idx] = orig + h
            fp = _scalar_value(f)
            p.values[idx] = orig - h
            fm = _scalar_value(f)
            p.values[idx] = orig
            numeric = (fp - fm) / (2.0 * h)
            err = abs(analytic[idx] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst


def _scalar_value(f) -> float:
    out = f()
    if isinstance(out, Tensor):
        return out.item()
    return float(out)
