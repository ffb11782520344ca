#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Dense reverse-mode automatic differentiation on top of numpy.

Every differentiable operation computes its forward value eagerly and, when
one of its operands requires a gradient, appends a node to the active
``Tape``. ``backward`` replays the tape in reverse and hands each operand the
vector-Jacobian product of its consumer. Everything is float64.
"""

from __future__ import division, print_function, absolute_import

import contextlib

import numpy as np
from scipy import special

from .base import ContractError, NumericError, NumericDomainError

EPS = 1e-10

_TAPES = []
_RECORDING = [True]


class Tensor(object):
    """Dense float64 array with an optional gradient slot

    Parameters
    ----------
    values: array_like
        the values of the tensor, copied into a float64 array
    requires_grad: bool
        whether operations on this tensor are recorded for differentiation
    name: str
        optional label used in error messages and checkpoints
    """

    # numpy operands defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @classmethod
    def _wrap(cls, values, requires_grad):
        out = cls.__new__(cls)
        out.values = values
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        return out

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        """Return the value of a single-element tensor as a float
        """
        if self.values.size != 1:
            raise ContractError(
                "item() needs a single-element tensor, got shape %s" % (self.shape,))
        return float(self.values.reshape(()))

    def numpy(self):
        """Return the underlying array (not a copy)
        """
        return self.values

    def detach(self):
        """Return a constant copy that is cut off from the tape
        """
        return Tensor(self.values)

    def __repr__(self):
        label = "" if self.name is None else " %s" % self.name
        return "<Tensor%s shape=%s requires_grad=%s>" % (
            label, self.shape, self.requires_grad)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class Node(object):
    """One recorded operation: the operands, the output and the rule that
    maps the output gradient to operand gradients
    """

    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op, inputs, output, vjp):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape(object):
    """Ordered record of the operations executed while it is active

    Use as a context manager; operations on tensors that require gradients
    are appended to the innermost active tape. Outside of any ``with`` block
    a module-level default tape is used.
    """

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, op, inputs, output, vjp):
        self.nodes.append(Node(op, inputs, output, vjp))

    def clear(self):
        self.nodes = []

    def backward(self, loss, inputs=None):
        """Propagate d(loss)/d(.) back through the recorded operations

        Parameters
        ----------
        loss: Tensor
            scalar tensor produced by operations on this tape
        inputs: list of Tensor
            tensors that must receive a gradient entry even when the loss
            does not depend on them (they get zeros)

        Returns
        -------
        grads: dict
            maps every leaf tensor that requires a gradient to d(loss)/d(leaf)
        """
        if not isinstance(loss, Tensor) or loss.values.size != 1:
            shape = loss.shape if isinstance(loss, Tensor) else type(loss)
            raise ContractError("backward needs a scalar loss, got %s" % (shape,))

        produced = set(id(node.output) for node in self.nodes)
        pending = {id(loss): np.ones_like(loss.values)}
        leaves = {}

        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            for operand, og in zip(node.inputs, node.vjp(g)):
                if og is None or not operand.requires_grad:
                    continue
                key = id(operand)
                if key in pending:
                    pending[key] = pending[key] + og
                else:
                    pending[key] = og
                if key not in produced:
                    leaves[key] = operand

        grads = {}
        for key, tensor in leaves.items():
            g = np.asarray(pending[key], dtype=np.float64).reshape(tensor.shape)
            tensor.grad = g
            grads[tensor] = g
        if id(loss) not in produced and loss.requires_grad:
            loss.grad = np.ones_like(loss.values)
            grads[loss] = loss.grad
        for tensor in inputs or []:
            if tensor not in grads:
                tensor.grad = np.zeros_like(tensor.values)
                grads[tensor] = tensor.grad

        self.clear()
        return grads


_DEFAULT_TAPE = Tape()


def current_tape():
    """Return the innermost active tape
    """
    if _TAPES:
        return _TAPES[-1]
    return _DEFAULT_TAPE


@contextlib.contextmanager
def no_grad():
    """Context in which no operation is recorded
    """
    _RECORDING.append(False)
    try:
        yield
    finally:
        _RECORDING.pop()


def backward(loss, inputs=None):
    """Backpropagate ``loss`` through the active tape, see ``Tape.backward``
    """
    return current_tape().backward(loss, inputs=inputs)


def as_tensor(value):
    """Return ``value`` as a Tensor, wrapping constants without gradient
    """
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _emit(op, values, inputs, vjp):
    needs = _RECORDING[-1] and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(np.asarray(values, dtype=np.float64), needs)
    if needs:
        current_tape().record(op, inputs, out, vjp)
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError("%s: shapes %s and %s do not broadcast" % (op, a.shape, b.shape))


def eval_graph(inputs, expression):
    """Evaluate ``expression`` on named tensors

    Parameters
    ----------
    inputs: dict
        maps argument names to Tensors (or constants)
    expression: callable
        composition of the operations of this module, called with the
        inputs as keyword arguments

    Returns
    -------
    out: Tensor
    """
    out = expression(**{k: as_tensor(v) for k, v in inputs.items()})
    if not isinstance(out, Tensor):
        raise ContractError("expression must return a Tensor, got %s" % type(out).__name__)
    return out


# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", a.values + b.values, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("sub", a.values - b.values, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def vjp(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _emit("mul", a.values * b.values, (a, b), vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.values == 0.0):
        raise NumericDomainError("div: division by zero")

    def vjp(g):
        return (_unbroadcast(g / b.values, a.shape),
                _unbroadcast(-g * a.values / (b.values * b.values), b.shape))

    return _emit("div", a.values / b.values, (a, b), vjp)


def neg(a):
    a = as_tensor(a)
    return _emit("neg", -a.values, (a,), lambda g: (-g,))


def power(a, exponent):
    """Raise ``a`` to a constant power
    """
    a = as_tensor(a)
    p = float(exponent)
    if p != int(p) and np.any(a.values < 0):
        raise NumericDomainError("power: negative base with fractional exponent")

    def vjp(g):
        return (g * p * a.values ** (p - 1.0),)

    return _emit("power", a.values ** p, (a,), vjp)


def square(a):
    a = as_tensor(a)
    return _emit("square", a.values * a.values, (a,), lambda g: (2.0 * g * a.values,))


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.values < 0):
        raise NumericDomainError("sqrt: negative operand")
    out = np.sqrt(a.values)
    return _emit("sqrt", out, (a,), lambda g: (0.5 * g / out,))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.values)
    if not np.all(np.isfinite(out)):
        raise NumericError("exp: overflow (max operand %g)" % np.max(a.values))
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a, eps=0.0):
    """Natural logarithm of ``a + eps``
    """
    a = as_tensor(a)
    shifted = a.values + eps
    if np.any(shifted <= 0):
        raise NumericDomainError("log: nonpositive operand (min %g)" % np.min(shifted))
    return _emit("log", np.log(shifted), (a,), lambda g: (g / shifted,))


def sigmoid(a):
    a = as_tensor(a)
    out = special.expit(a.values)
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.values)
    return _emit("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.values)
    return _emit("softplus", out, (a,), lambda g: (g * special.expit(a.values),))


def clip(a, lower=None, upper=None):
    """Clamp ``a`` to [lower, upper]; the gradient is zero where clamped
    """
    a = as_tensor(a)
    lo = -np.inf if lower is None else lower
    hi = np.inf if upper is None else upper
    inside = (a.values >= lo) & (a.values <= hi)
    return _emit("clip", np.clip(a.values, lo, hi), (a,), lambda g: (g * inside,))


def where(condition, a, b):
    """Pick ``a`` where ``condition`` holds and ``b`` elsewhere
    """
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(condition, dtype=bool)
    shape = _broadcast_shape("where", a, b)
    try:
        np.broadcast_shapes(cond.shape, shape)
    except ValueError:
        raise ContractError("where: condition shape %s does not broadcast to %s" % (
            cond.shape, shape))

    def vjp(g):
        return _unbroadcast(np.where(cond, g, 0.0), a.shape), _unbroadcast(
            np.where(cond, 0.0, g), b.shape)

    return _emit("where", np.where(cond, a.values, b.values), (a, b), vjp)


# linear algebra and reductions


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError("matmul: shapes %s and %s do not conform" % (a.shape, b.shape))

    def vjp(g):
        return g @ b.values.T, a.values.T @ g

    return _emit("matmul", a.values @ b.values, (a, b), vjp)


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ContractError("transpose needs a matrix, got shape %s" % (a.shape,))
    return _emit("transpose", a.values.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise ContractError("reshape: cannot view %s as %s" % (a.shape, shape))
    return _emit("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    """Sum over ``axis`` (all entries when None)
    """
    a = as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)
    return _emit("sum", out, (a,), lambda g: (_expand(g, a.shape, axis, keepdims).copy(),))


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    out = a.values.mean(axis=axis, keepdims=keepdims)
    return _emit(
        "mean", out, (a,), lambda g: (_expand(g, a.shape, axis, keepdims) / count,))


def logsumexp(a, axis, keepdims=False):
    a = as_tensor(a)
    out = special.logsumexp(a.values, axis=axis, keepdims=True)
    weights = np.exp(a.values - out)
    value = out if keepdims else np.squeeze(out, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return _emit("logsumexp", value, (a,), vjp)


def softmax(a, axis):
    a = as_tensor(a)
    out = special.softmax(a.values, axis=axis)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _emit("softmax", out, (a,), vjp)


def log_softmax(a, axis):
    a = as_tensor(a)
    out = special.log_softmax(a.values, axis=axis)

    def vjp(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _emit("log_softmax", out, (a,), vjp)


# structural


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as err:
        raise ContractError("concatenate: %s" % err)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concatenate", out, tuple(tensors), vjp)


def getitem(a, index):
    """Basic or advanced indexing; repeated indices accumulate gradient
    """
    a = as_tensor(a)
    try:
        out = a.values[index]
    except IndexError as err:
        raise ContractError("slice: %s" % err)

    def vjp(g):
        full = np.zeros_like(a.values)
        np.add.at(full, index, g)
        return (full,)

    return _emit("slice", np.array(out, dtype=np.float64), (a,), vjp)


def take(a, indices):
    """Select rows of ``a``
    """
    return getitem(a, np.asarray(indices, dtype=np.intp))


# optimisation


class AdamState(object):
    """Moment estimates and hyper-parameters of the Adam optimiser

    Parameters
    ----------
    learning_rate: float
    beta1: float
        decay of the first-moment estimate
    beta2: float
        decay of the second-moment estimate
    epsilon: float
        added to the denominator of the update
    """

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(params, grads, state):
    """Apply one bias-corrected Adam update in place

    Parameters
    ----------
    params: dict
        maps parameter names to Tensors
    grads: dict
        maps the same names to gradient arrays
    state: AdamState

    Returns
    -------
    params, state
    """
    missing = [name for name in params if name not in grads]
    if missing:
        raise ContractError("adam_step: no gradient for %s" % ", ".join(missing))

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t

    for name, param in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != param.shape:
            raise ContractError("adam_step: gradient of %s has shape %s, expected %s" % (
                name, g.shape, param.shape))
        if name not in state.m:
            state.m[name] = np.zeros_like(param.values)
            state.v[name] = np.zeros_like(param.values)
        elif state.m[name].shape != param.shape:
            raise ContractError("adam_step: state for %s has shape %s, expected %s" % (
                name, state.m[name].shape, param.shape))

        state.m[name] *= state.beta1
        state.m[name] += (1.0 - state.beta1) * g
        state.v[name] *= state.beta2
        state.v[name] += (1.0 - state.beta2) * (g * g)

        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        param.values -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)

    return params, state


class Adam(object):
    """Adam optimiser over a named set of parameters

    Parameters
    ----------
    params: dict
        maps names to Tensors; updated in place by ``step``
    **kwargs: dict
        passed to ``AdamState``
    """

    def __init__(self, params, **kwargs):
        self.params = params
        self.state = AdamState(**kwargs)

    def step(self, grads):
        """Update the parameters from a gradient map keyed by name or Tensor
        """
        by_name = {}
        for name, param in self.params.items():
            if name in grads:
                by_name[name] = grads[name]
            elif param in grads:
                by_name[name] = grads[param]
        adam_step(self.params, by_name, self.state)


def grad_check(loss_fn, params, h=1e-5):
    """Compare analytic gradients with central finite differences

    Parameters
    ----------
    loss_fn: callable
        no-argument function returning a scalar Tensor built from ``params``;
        it must be deterministic
    params: list of Tensor
        tensors to perturb, each with ``requires_grad`` set
    h: float
        finite-difference step

    Returns
    -------
    error: float
        max over all entries of |analytic - numeric| / max(1, |analytic|)
    """
    params = list(params.values()) if isinstance(params, dict) else list(params)
    with Tape() as tape:
        loss = loss_fn()
        grads = tape.backward(loss, inputs=params)

    worst = 0.0
    with no_grad():
        for param in params:
            analytic = grads[param].ravel()
            flat = param.values.reshape(-1)
            for k in range(flat.size):
                saved = flat[k]
                flat[k] = saved + h
                f_plus = loss_fn().item()
                flat[k] = saved - h
                f_minus = loss_fn().item()
                flat[k] = saved
                numeric = (f_plus - f_minus) / (2.0 * h)
                err = abs(analytic[k] - numeric) / max(1.0, abs(analytic[k]))
                worst = max(worst, err)
    return worst
