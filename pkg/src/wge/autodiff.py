"""A small reverse-mode differentiation tape over numpy arrays.

Every operation on a :class:`Var` appends a node to its :class:`Tape`. Nodes
are appended in creation order, which is already a topological order, so
:meth:`Tape.backward` only has to walk the list once in reverse.

Quaternion-valued variables are ordinary arrays with a leading component axis
of length 4 (see :mod:`wge.quaternion`); their gradients are taken with respect
to the four real components independently.
"""
from __future__ import annotations

import logging
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import quaternion as qa

log = logging.getLogger(__name__)


class TapeError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


class Param:
    """A trainable array plus its gradient accumulator and Adam moments."""

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.name = name
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.t = 0

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.value.shape})"


class Var:
    __slots__ = ("value", "tape", "parents", "vjp", "param", "requires_grad", "index")

    def __init__(self, value, tape: "Tape", parents=(), vjp=None, param=None, requires_grad=False):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.param = param
        self.requires_grad = requires_grad
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(self.tape.lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __repr__(self) -> str:
        return f"Var(shape={np.shape(self.value)}, requires_grad={self.requires_grad})"


class Tape:
    """Records the forward computation of one training step."""

    def __init__(self):
        self.nodes: list[Var] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, var: Var) -> Var:
        var.index = len(self.nodes)
        self.nodes.append(var)
        return var

    def param(self, p: Param) -> Var:
        return self._push(Var(p.value, self, param=p, requires_grad=True))

    def constant(self, value) -> Var:
        if sp.issparse(value):
            return self._push(Var(value, self))
        return self._push(Var(np.asarray(value, dtype=np.float64), self))

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise TapeError("operands recorded on different tapes")
            return x
        return self.constant(x)

    def record(self, value, parents: Sequence[Var], vjp: Callable) -> Var:
        needs = any(p.requires_grad for p in parents)
        if not needs:
            return self._push(Var(value, self))
        return self._push(Var(value, self, tuple(parents), vjp, requires_grad=True))

    def backward(self, loss: Var) -> list[Param]:
        """Propagate d(loss)/d(node) back to every parameter on the tape.

        Gradients are *added* to ``Param.grad``; call ``zero_grad`` between
        steps. Returns the parameters that received a gradient.
        """
        if not self.nodes or loss.tape is not self or loss.index < 0:
            raise TapeError("backward called before a forward pass was recorded on this tape")
        if np.size(loss.value) != 1:
            raise TapeError(f"loss must be a scalar, got shape {np.shape(loss.value)}")
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value, dtype=np.float64)}
        touched: dict[int, Param] = {}
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads.pop(node.index, None)
            if g is None or not node.requires_grad:
                continue
            if node.param is not None:
                node.param.grad += g
                touched[id(node.param)] = node.param
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent.index)
                grads[parent.index] = pg if prev is None else prev + pg
        return list(touched.values())


def backward(tape: Tape, loss: Var) -> list[Param]:
    return tape.backward(loss)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TapeError("at least one operand must be a Var")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    sa, sb = np.shape(a.value), np.shape(b.value)
    return tape.record(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    sa, sb = np.shape(a.value), np.shape(b.value)
    return tape.record(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Var:
    """Elementwise product; on quaternion arrays this is the quaternion element-wise product."""
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    av, bv = a.value, b.value
    return tape.record(
        av * bv,
        (a, b),
        lambda g: (
            _unbroadcast(g * bv, np.shape(av)) if a.requires_grad else None,
            _unbroadcast(g * av, np.shape(bv)) if b.requires_grad else None,
        ),
    )


def neg(a: Var) -> Var:
    return a.tape.record(-a.value, (a,), lambda g: (-g,))


def scale(a: Var, c: float) -> Var:
    return a.tape.record(c * a.value, (a,), lambda g: (c * g,))


def tanh(a: Var) -> Var:
    y = np.tanh(a.value)
    return a.tape.record(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Var) -> Var:
    y = _sigmoid(a.value)
    return a.tape.record(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Var) -> Var:
    mask = a.value > 0
    return a.tape.record(a.value * mask, (a,), lambda g: (g * mask,))


def log(a: Var) -> Var:
    x = a.value
    return a.tape.record(np.log(x), (a,), lambda g: (g / x,))


def log_sigmoid(a: Var) -> Var:
    """log(sigmoid(x)) computed without overflow."""
    x = a.value
    return a.tape.record(-np.logaddexp(0.0, -x), (a,), lambda g: (g * _sigmoid(-x),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sum(a: Var, axis=None) -> Var:  # noqa: A001 - mirrors numpy
    shape = np.shape(a.value)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return a.tape.record(np.sum(a.value, axis=axis), (a,), vjp)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Var, shape) -> Var:
    old = a.value.shape
    return a.tape.record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Var, axes) -> Var:
    inv = np.argsort(axes)
    return a.tape.record(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def gather(a: Var, index: np.ndarray, axis: int = 1) -> Var:
    """Select entries of ``a`` along ``axis`` (rows of a quaternion table by default)."""
    index = np.asarray(index, dtype=np.int64)
    shape = a.value.shape
    n = shape[axis]
    lead = (slice(None),) * axis
    contiguous = index.size > 0 and index.ndim == 1 and np.array_equal(index, np.arange(index[0], index[0] + index.size))

    def vjp(g):
        out = np.zeros(shape)
        if contiguous:
            out[lead + (slice(index[0], index[0] + index.size),)] = g
            return (out,)
        # scatter-add as a sparse (n x len(index)) product; much faster than np.add.at
        scatter = sp.csr_matrix((np.ones(index.size), (index.ravel(), np.arange(index.size))), shape=(n, index.size))
        gm = np.moveaxis(g, axis, 0).reshape(index.size, -1)
        moved = np.moveaxis(out, axis, 0)
        moved[...] = (scatter @ gm).reshape(moved.shape)
        return (out,)

    return a.tape.record(np.take(a.value, index, axis=axis), (a,), vjp)


def concat(xs: Sequence[Var], axis: int = 1) -> Var:
    tape = _tape_of(*xs)
    xs = [tape.lift(x) for x in xs]
    bounds = np.cumsum([0] + [x.value.shape[axis] for x in xs])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[n], bounds[n + 1]), axis=axis) for n in range(len(xs))
        )

    return tape.record(np.concatenate([x.value for x in xs], axis=axis), xs, vjp)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def spmm(adj, x: Var) -> Var:
    """Left-multiply by a constant sparse matrix, per quaternion component when ``x`` is 3-D."""
    adj = sp.csr_matrix(adj)
    adj_t = adj.T.tocsr()

    def apply(m, v):
        if v.ndim == 3:
            return np.stack([m @ v[c] for c in range(v.shape[0])])
        return m @ v

    return x.tape.record(apply(adj, x.value), (x,), lambda g: (apply(adj_t, g),))


def linear(x: Var, w: Var) -> Var:
    """Real dense layer: rows of ``x`` (N, n) times ``w.T`` with ``w`` (m, n)."""
    tape = _tape_of(x, w)
    x, w = tape.lift(x), tape.lift(w)
    xv, wv = x.value, w.value
    return tape.record(xv @ wv.T, (x, w), lambda g: (g @ wv, g.T @ xv))


def hamilton(q, p) -> Var:
    """Hamilton product of component-first arrays with numpy broadcasting."""
    tape = _tape_of(q, p)
    q, p = tape.lift(q), tape.lift(p)
    qv, pv = q.value, p.value

    def vjp(g):
        gq = _unbroadcast(qa.hamilton_array(g, qa.conjugate_array(pv)), qv.shape) if q.requires_grad else None
        gp = _unbroadcast(qa.hamilton_array(qa.conjugate_array(qv), g), pv.shape) if p.requires_grad else None
        return gq, gp

    return tape.record(qa.hamilton_array(qv, pv), (q, p), vjp)


def _conj_transpose(w: np.ndarray) -> np.ndarray:
    return np.stack([w[0].T, -w[1].T, -w[2].T, -w[3].T])


def qmatmul(x, w) -> Var:
    """Apply quaternion matrix ``w`` (4, m, n) to every row of ``x`` (4, ..., n)."""
    tape = _tape_of(x, w)
    x, w = tape.lift(x), tape.lift(w)
    xv, wv = x.value, w.value

    def vjp(g):
        gx = qa.matmul_array(g, _conj_transpose(wv)) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            n, m = xv.shape[-1], g.shape[-1]
            xr, xi, xj, xk = (xv[c].reshape(-1, n) for c in range(4))
            gr, gi, gj, gk = (g[c].reshape(-1, m) for c in range(4))
            gw = np.stack(
                [
                    gr.T @ xr + gi.T @ xi + gj.T @ xj + gk.T @ xk,
                    -gr.T @ xi + gi.T @ xr - gj.T @ xk + gk.T @ xj,
                    -gr.T @ xj + gi.T @ xk + gj.T @ xr - gk.T @ xi,
                    -gr.T @ xk - gi.T @ xj + gj.T @ xi + gk.T @ xr,
                ]
            )
        return gx, gw

    return tape.record(qa.matmul_array(xv, wv), (x, w), vjp)


def qnormalize(a: Var) -> Var:
    """Scale each quaternion entry to unit norm (component axis 0)."""
    n = qa.norm_array(a.value)
    if np.any(n == 0):
        raise qa.DegenerateQuaternionError("cannot normalize a zero quaternion")
    y = a.value / n

    def vjp(g):
        return ((g - y * np.sum(g * y, axis=0, keepdims=True)) / n,)

    return a.tape.record(y, (a,), vjp)


def qinner(q, p) -> Var:
    """Quaternion inner product reducing the component axis and the last axis."""
    tape = _tape_of(q, p)
    q, p = tape.lift(q), tape.lift(p)
    qv, pv = q.value, p.value

    def vjp(g):
        ge = np.expand_dims(np.expand_dims(g, 0), -1)
        return (ge * pv if q.requires_grad else None, ge * qv if p.requires_grad else None)

    return tape.record(qa.inner_array(qv, pv), (q, p), vjp)


# ---------------------------------------------------------------------------
# initialization and optimization
# ---------------------------------------------------------------------------

def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def glorot_init(shape: tuple[int, int], rng_seed, name: str = "", quaternion: bool = True) -> Param:
    """Uniform Glorot initialization.

    ``shape`` is (rows, cols) counted in quaternion units; fan_in is cols and
    fan_out is rows. With ``quaternion=True`` each of the four components is
    drawn independently from U(-bound, bound) and the value has shape
    (4, rows, cols). ``rng_seed`` may be an int or a ``numpy.random.Generator``.
    """
    rows, cols = shape
    if rows <= 0 or cols <= 0:
        raise ValueError(f"dimensions must be positive, got {shape}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    bound = glorot_bound(cols, rows)
    full = (4, rows, cols) if quaternion else (rows, cols)
    return Param(rng.uniform(-bound, bound, size=full), name=name)


class Adam:
    """Adam with bias-corrected moments, state kept on each :class:`Param`."""

    def __init__(self, params: Iterable[Param], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params: Iterable[Param], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    params = list(params)
    bad = [(p.name, int(np.count_nonzero(~np.isfinite(p.grad)))) for p in params if not np.all(np.isfinite(p.grad))]
    if bad:
        detail = ", ".join(f"{name or '<unnamed>'}: {n} non-finite" for name, n in bad)
        raise NonFiniteGradientError(f"aborting optimizer step, non-finite gradients ({detail})")
    for p in params:
        p.t += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * p.grad
        p.v *= beta2
        p.v += (1.0 - beta2) * p.grad * p.grad
        m_hat = p.m / (1.0 - beta1 ** p.t)
        v_hat = p.v / (1.0 - beta2 ** p.t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
