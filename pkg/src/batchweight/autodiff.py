"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Everything trainable in this package runs on the machinery in this module:
a tape-recording :class:`Tensor`, a small set of differentiable primitives,
:class:`ParameterGraph` for forward/backward/replay over named parameters,
the Adam optimizer on flat parameter vectors, and power-iteration spectral
normalization for weight matrices.

Tapes are thread-local: one graph instance must not be shared across
threads, but independent graphs on independent threads are safe.
"""

import json
import threading

import numpy as np

from .errors import GraphStateError, NumericalError, ShapeError

_LOCAL = threading.local()


def _active_tape():
    return getattr(_LOCAL, "tape", None)


class Tensor:
    """A dense float64 array plus the tape record that produced it.

    Leaf tensors (parameters, inputs, constants) have ``op`` set to None.
    Tensors produced by a primitive remember the op name, their parent
    tensors and any non-differentiable attributes (``aux``), which is all
    the information needed to replay the computation or run a VJP.
    """

    __slots__ = ("data", "op", "parents", "aux", "name")

    def __init__(self, data, op=None, parents=(), aux=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.op = op
        self.parents = parents
        self.aux = aux or {}
        self.name = name
        if op is not None:
            tape = _active_tape()
            if tape is not None:
                tape.append(self)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        src = self.op or self.name or "leaf"
        return f"Tensor(shape={self.data.shape}, source={src})"


def constant(data, name=None):
    """Wrap an array as a leaf tensor that never receives gradients."""
    return Tensor(data, name=name)


# --- primitive registry -----------------------------------------------------
#
# Each primitive has a forward rule on raw arrays and a VJP rule mapping the
# output cotangent to one cotangent (or None) per parent.  The registry is
# what ParameterGraph.replay() and the gradient-check tests iterate over.

_FORWARD = {}
_VJP = {}


def _register(name, forward, vjp):
    _FORWARD[name] = forward
    _VJP[name] = vjp


def primitive_names():
    """Names of all registered differentiable primitives."""
    return sorted(_FORWARD)


def _apply(op, *parents, **aux):
    data = _FORWARD[op](*[p.data for p in parents], **aux)
    return Tensor(data, op=op, parents=parents, aux=aux)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul got shapes {a.shape} and {b.shape}")
    return a @ b


_register(
    "matmul",
    _matmul_fwd,
    lambda g, out, a, b: (g @ b.T, a.T @ g),
)
_register(
    "add",
    lambda a, b: a + b,
    lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
)
_register(
    "sub",
    lambda a, b: a - b,
    lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
)
_register(
    "mul",
    lambda a, b: a * b,
    lambda g, out, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
)
_register(
    "div",
    lambda a, b: a / b,
    lambda g, out, a, b: (
        _unbroadcast(g / b, a.shape),
        _unbroadcast(-g * a / (b * b), b.shape),
    ),
)
_register(
    "scale",
    lambda a, factor: a * factor,
    lambda g, out, a, factor: (g * factor,),
)
_register(
    "relu",
    lambda a: np.maximum(a, 0.0),
    lambda g, out, a: (g * (a > 0.0),),
)
_register(
    # algebraic form 0.5(1+s)a + 0.5(1-s)|a|: one pass fewer than np.where
    "leaky_relu",
    lambda a, slope: 0.5 * (1.0 + slope) * a + 0.5 * (1.0 - slope) * np.abs(a),
    lambda g, out, a, slope: (np.where(a > 0.0, g, slope * g),),
)
_register(
    "tanh",
    lambda a: np.tanh(a),
    lambda g, out, a: (g * (1.0 - out * out),),
)


def _sigmoid_fwd(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


_register(
    "sigmoid",
    _sigmoid_fwd,
    lambda g, out, a: (g * out * (1.0 - out),),
)


def _softmax_fwd(a, axis):
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_vjp(g, out, a, axis):
    inner = (g * out).sum(axis=axis, keepdims=True)
    return (out * (g - inner),)


_register("softmax", _softmax_fwd, _softmax_vjp)


def _softmax_mean_one_fwd(a, axis):
    # e * (m / sum(e)) rather than softmax * m: zero logits map to exactly 1.0
    # for every batch size.
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    m = a.shape[axis]
    return e * (m / e.sum(axis=axis, keepdims=True))


def _softmax_mean_one_vjp(g, out, a, axis):
    m = a.shape[axis]
    inner = (g * out).sum(axis=axis, keepdims=True) / m
    return (out * (g - inner),)


_register("softmax_mean_one", _softmax_mean_one_fwd, _softmax_mean_one_vjp)


def _sum_vjp(g, out, a, axis):
    if axis is None:
        return (np.broadcast_to(g, a.shape).copy(),)
    return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)


_register("sum", lambda a, axis: a.sum(axis=axis), _sum_vjp)
_register(
    "mean",
    lambda a: a.mean(),
    lambda g, out, a: (np.broadcast_to(g / a.size, a.shape).copy(),),
)
_register(
    "square",
    lambda a: a * a,
    lambda g, out, a: (2.0 * a * g,),
)
_register(
    "abs",
    lambda a: np.abs(a),
    lambda g, out, a: (g * np.sign(a),),
)
_register(
    "clamp",
    lambda a, lo, hi: np.clip(a, lo, hi),
    lambda g, out, a, lo, hi: (g * ((a >= lo) & (a <= hi)),),
)


def _concat_fwd(*arrays, axis):
    return np.concatenate(arrays, axis=axis)


def _concat_vjp(g, out, *arrays, axis):
    sizes = [a.shape[axis] for a in arrays]
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


_register("concat", _concat_fwd, _concat_vjp)


def _slice_rows_vjp(g, out, a, start, stop):
    full = np.zeros_like(a)
    full[start:stop] = g
    return (full,)


_register(
    "slice_rows",
    lambda a, start, stop: a[start:stop],
    _slice_rows_vjp,
)


# --- user-facing op constructors --------------------------------------------

def matmul(a, b):
    return _apply("matmul", a, b)


def add(a, b):
    return _apply("add", a, b)


def sub(a, b):
    return _apply("sub", a, b)


def mul(a, b):
    return _apply("mul", a, b)


def div(a, b):
    return _apply("div", a, b)


def scale(a, factor):
    """Multiply by a python float (no constant tensor involved)."""
    return _apply("scale", a, factor=float(factor))


def relu(a):
    return _apply("relu", a)


def leaky_relu(a, slope=0.2):
    return _apply("leaky_relu", a, slope=float(slope))


def tanh(a):
    return _apply("tanh", a)


def sigmoid(a):
    return _apply("sigmoid", a)


def softmax(a, axis=-1):
    return _apply("softmax", a, axis=int(axis))


def softmax_mean_one(a, axis=-1):
    """Softmax rescaled so entries average to one along `axis`."""
    return _apply("softmax_mean_one", a, axis=int(axis))


def tensor_sum(a, axis=None):
    return _apply("sum", a, axis=axis)


def tensor_mean(a):
    return _apply("mean", a)


def square(a):
    return _apply("square", a)


def absolute(a):
    return _apply("abs", a)


def clamp(a, lo, hi):
    """Clip into [lo, hi]; the bounds are constants, not differentiated."""
    return _apply("clamp", a, lo=float(lo), hi=float(hi))


def concat(tensors, axis=-1):
    return _apply("concat", *tensors, axis=int(axis))


def slice_rows(a, start, stop):
    """Rows [start, stop) of a matrix (the batch-splitting counterpart of
    concat along axis 0)."""
    return _apply("slice_rows", a, start=int(start), stop=int(stop))


def current_tape():
    """The active recording tape, or None outside any graph forward."""
    return _active_tape()


class _TapeRecorder:
    def __enter__(self):
        self.prev = _active_tape()
        _LOCAL.tape = []
        return _LOCAL.tape

    def __exit__(self, *exc):
        _LOCAL.tape = self.prev
        return False


def backward_from(output, seed, tape, targets=None):
    """Walk `tape` in reverse from `output`, returning an id -> grad dict.

    `seed` is the cotangent of `output`; the result maps ``id(tensor)`` to
    the accumulated gradient of ``sum(seed * output)``, leaves included.
    With `targets` (a set of leaf tensor ids) the walk skips every subgraph
    that no target leaf feeds into, which is how discriminator-only updates
    avoid re-differentiating the generators.
    """
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != output.data.shape:
        raise ShapeError(
            f"seed shape {seed.shape} does not match output shape {output.data.shape}"
        )
    required = None
    if targets is not None:
        required = set(targets)
        for node in tape:
            if any(id(p) in required for p in node.parents):
                required.add(id(node))
    grads = {id(output): seed}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parents = node.parents
        if required is not None and not any(id(p) in required for p in parents):
            continue
        pgrads = _VJP[node.op](g, node.data, *[p.data for p in parents], **node.aux)
        for parent, pg in zip(parents, pgrads):
            if pg is None:
                continue
            if required is not None and id(parent) not in required:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return grads


class ParameterGraph:
    """One differentiable computation over an ordered set of named parameters.

    Parameters
    ----------
    params : sequence of (name, Tensor)
        The trainable leaves, in a fixed order that also defines the layout
        of the flat gradient vector.
    fn : callable
        Builds the output tensor from input tensors; called under an active
        tape so every primitive lands on the record.
    input_shapes : sequence of tuple, optional
        Declared per-input shapes; ``None`` entries match any size on that
        axis.  When given, ``forward`` validates its inputs against them.
    """

    def __init__(self, params, fn, input_shapes=None):
        self._params = list(params)
        self._fn = fn
        self._input_shapes = input_shapes
        self._tape = None
        self._output = None
        self._inputs = None

    @property
    def parameters(self):
        return list(self._params)

    @property
    def n_parameters(self):
        return sum(t.data.size for _, t in self._params)

    @property
    def tape(self):
        return self._tape

    @property
    def output(self):
        return self._output

    def parameter_vector(self):
        """Current parameter values as one flat array."""
        return np.concatenate([t.data.ravel() for _, t in self._params])

    def set_parameter_vector(self, flat):
        offset = 0
        for _, t in self._params:
            n = t.data.size
            t.data = flat[offset:offset + n].reshape(t.data.shape)
            offset += n

    def parameter_slices(self):
        """(name, slice) pairs into the flat parameter/gradient vector."""
        out = []
        offset = 0
        for name, t in self._params:
            n = t.data.size
            out.append((name, slice(offset, offset + n)))
            offset += n
        return out

    def _check_inputs(self, inputs):
        if self._input_shapes is None:
            return
        if len(inputs) != len(self._input_shapes):
            raise ShapeError(
                f"expected {len(self._input_shapes)} inputs, got {len(inputs)}"
            )
        for i, (tensor, spec) in enumerate(zip(inputs, self._input_shapes)):
            shape = tensor.data.shape
            ok = len(shape) == len(spec) and all(
                s is None or s == d for s, d in zip(spec, shape)
            )
            if not ok:
                label = tensor.name or f"input[{i}]"
                raise ShapeError(
                    f"{label} has shape {shape}, expected {spec}"
                )

    def forward(self, *inputs):
        """Run the computation, recording the tape for a later backward."""
        self._check_inputs(inputs)
        with _TapeRecorder() as tape:
            out = self._fn(*inputs)
        self._tape = tape
        self._output = out
        self._inputs = inputs
        return out

    def backward(self, seed=None, wrt=None):
        """Gradient of ``sum(seed * output)`` as a flat vector over parameters.

        `wrt` restricts differentiation to the named parameters (gradients
        of the others come back as zeros without being computed), which the
        training loops use for discriminator-only update phases.
        """
        if self._output is None:
            raise GraphStateError("backward called before forward")
        if seed is None:
            seed = np.ones_like(self._output.data)
        targets = None
        if wrt is not None:
            wanted = set(wrt)
            targets = {id(t) for name, t in self._params if name in wanted}
        grads = backward_from(self._output, seed, self._tape, targets=targets)
        parts = []
        for _, t in self._params:
            g = grads.get(id(t))
            parts.append(np.zeros(t.data.size) if g is None else np.asarray(g).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def replay(self):
        """Recompute every taped node in order from current leaf values.

        Returns the recomputed output data; with unchanged leaves this is
        bit-identical to the recorded forward pass.
        """
        if self._output is None:
            raise GraphStateError("replay called before forward")
        values = {}
        for node in self._tape:
            parent_data = [values.get(id(p), p.data) for p in node.parents]
            values[id(node)] = _FORWARD[node.op](*parent_data, **node.aux)
        return values.get(id(self._output), self._output.data)


# --- Adam -------------------------------------------------------------------

class AdamState:
    """Adam moments and hyperparameters for one flat parameter vector.

    Moments start at zero; ``step_count`` increments by exactly one per
    :func:`adam_step`.  ``param_slices`` is only used to name the offending
    parameter when a non-finite gradient shows up.
    """

    def __init__(self, n_params, lr, beta1=0.5, beta2=0.999, epsilon=1e-8,
                 param_slices=None):
        self.first_moment = np.zeros(n_params)
        self.second_moment = np.zeros(n_params)
        self.step_count = 0
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.param_slices = param_slices

    def _locate(self, index):
        if self.param_slices:
            for name, sl in self.param_slices:
                if sl.start <= index < sl.stop:
                    return name
        return f"param[{index}]"

    def state_arrays(self):
        return {"first_moment": self.first_moment, "second_moment": self.second_moment}


def adam_step(state, params, grads):
    """One Adam update with bias correction; returns the new parameter vector.

    The moment buffers and step count in `state` are updated in place.
    Raises :class:`NumericalError` naming the parameter if any gradient
    entry is non-finite.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ShapeError(
            f"adam_step length mismatch: params {params.shape}, grads {grads.shape}, "
            f"moments {state.first_moment.shape}"
        )
    bad = ~np.isfinite(grads)
    if bad.any():
        index = int(np.argmax(bad))
        raise NumericalError(
            f"non-finite gradient for {state._locate(index)} (index {index})"
        )
    state.step_count += 1
    t = state.step_count
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    state.second_moment = (
        state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    )
    m_hat = state.first_moment / (1.0 - state.beta1 ** t)
    v_hat = state.second_moment / (1.0 - state.beta2 ** t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


# --- spectral normalization ---------------------------------------------------

class SpectralState:
    """Persistent power-iteration vectors for one weight matrix.

    ``u`` lives in the column (output) space of the ``[in, out]`` matrix,
    ``v`` in the row space; both are unit-norm after every refresh.
    """

    def __init__(self, out_dim, rng):
        u = rng.standard_normal(out_dim)
        self.u = u / np.linalg.norm(u)
        self.v = None

    def refresh(self, weight, n_iterations=1):
        """Run power-iteration steps against `weight`, updating u and v.

        Returns the current top-singular-value estimate; a zero matrix
        leaves the state untouched and returns 0.
        """
        for _ in range(n_iterations):
            v = weight @ self.u
            nv = np.linalg.norm(v)
            if nv == 0.0:
                return 0.0
            v = v / nv
            u = v @ weight
            nu = np.linalg.norm(u)
            if nu == 0.0:
                return 0.0
            self.u = u / nu
            self.v = v
        return float(self.v @ weight @ self.u)


def spectral_normalize(weight, state, n_iterations=1):
    """Divide `weight` by its estimated top singular value, in-graph.

    Runs `n_iterations` power-iteration steps (updating `state`), then
    builds ``weight / (v @ W @ u)`` with u, v held constant, so gradients
    flow through both the numerator and the estimate — matching how
    spectrally normalized layers are trained elsewhere.  A zero matrix is
    returned unchanged.
    """
    sigma = state.refresh(weight.data, n_iterations)
    if sigma == 0.0:
        return weight
    return normalize_with_state(weight, state)


def normalize_with_state(weight, state):
    """In-graph division of `weight` by sigma computed from stored u, v.

    A zero matrix (or a state that has never seen a non-zero matrix) is
    passed through unchanged so frozen-at-zero networks stay exactly zero.
    """
    if state.v is None or not weight.data.any():
        return weight
    if float(state.v @ weight.data @ state.u) == 0.0:
        return weight
    v_row = constant(state.v[None, :])
    u_col = constant(state.u[:, None])
    sigma = matmul(matmul(v_row, weight), u_col)
    return div(weight, sigma)


# --- checkpoint format --------------------------------------------------------
#
# A checkpoint is one JSON header line (names, shapes, step count, RNG
# state, free-form metadata) followed by the named tensors' float64
# little-endian payloads, concatenated in header order.

def save_checkpoint(path, tensors, step_count=0, rng_state=None, meta=None):
    names = list(tensors)
    header = {
        "format": "batchweight-checkpoint-v1",
        "step_count": int(step_count),
        "rng_state": rng_state,
        "meta": meta or {},
        "tensors": [
            {"name": n, "shape": list(np.asarray(tensors[n]).shape)} for n in names
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors dict, header dict)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        header = json.loads(header_line.decode("utf-8"))
        if header.get("format") != "batchweight-checkpoint-v1":
            raise ValueError(f"{path} is not a recognized checkpoint file")
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"truncated payload for tensor {entry['name']}")
            tensors[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return tensors, header
