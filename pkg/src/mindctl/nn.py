"""Numerical core: affine layers, LSTM cells, softmax cross-entropy with
an l2 penalty, exact sequence gradients, and Adam updates.

Everything here is float64 and purely functional; a batch of samples is
treated as one time-ordered sequence for the recurrent layers. The
backward pass is hand-derived for exactly this layer vocabulary (affine
chains feeding a stack of LSTM layers) rather than a generic autodiff
graph, and is validated against central finite differences.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericError, ShapeError

# Concatenated gate block layout in LSTM weight matrices and biases.
# Fixed so checkpoints are unambiguous.
GATE_ORDER = ("input", "forget", "output", "modulation")


def sigmoid(x):
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class DenseParams:
    """Affine layer: out = in @ W + b. W is (fan_in, fan_out)."""

    W: np.ndarray
    b: np.ndarray

    def arrays(self):
        return [("W", self.W), ("b", self.b)]

    def weight_matrices(self):
        return [self.W]


@dataclass
class LstmParams:
    """One LSTM layer's parameters.

    ``W_in`` is (fan_in, 4*width), ``W_rec`` is (width, 4*width) and
    ``b`` is (4*width,); columns hold the four gate blocks in
    ``GATE_ORDER``.
    """

    W_in: np.ndarray
    W_rec: np.ndarray
    b: np.ndarray

    @property
    def width(self) -> int:
        return self.W_rec.shape[0]

    def arrays(self):
        return [("W_in", self.W_in), ("W_rec", self.W_rec), ("b", self.b)]

    def weight_matrices(self):
        return [self.W_in, self.W_rec]


@dataclass
class LstmState:
    """Cell memory and hidden output carried between time steps."""

    c: np.ndarray
    h: np.ndarray

    @staticmethod
    def zeros(width: int) -> "LstmState":
        return LstmState(np.zeros(width), np.zeros(width))


def zeros_like_layer(layer):
    if isinstance(layer, DenseParams):
        return DenseParams(np.zeros_like(layer.W), np.zeros_like(layer.b))
    return LstmParams(
        np.zeros_like(layer.W_in),
        np.zeros_like(layer.W_rec),
        np.zeros_like(layer.b),
    )


def cast_layers(layers, dtype):
    """Copies of the layer parameters in another float precision."""
    out = []
    for layer in layers:
        cls = type(layer)
        out.append(
            cls(**{name: arr.astype(dtype) for name, arr in layer.arrays()})
        )
    return out


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# forward primitives

def affine(X, params: DenseParams):
    """Affine map over rows: X @ W + b.

    The layer connection is purely affine by design; nonlinearity enters
    through the LSTM layers.
    """
    X = np.asarray(X)
    if not np.issubdtype(X.dtype, np.floating):
        X = X.astype(np.float64)
    if X.ndim != 2 or X.shape[1] != params.W.shape[0]:
        raise ShapeError(
            f"affine input {X.shape} incompatible with weights "
            f"{params.W.shape}"
        )
    return X @ params.W + params.b


def lstm_step(x, state: LstmState, params: LstmParams):
    """One LSTM time step.

    Gate pre-activations are ``x @ W_in + h_prev @ W_rec + b``; the
    input, forget and output gates pass through a sigmoid, the
    modulation gate through tanh. The new cell memory is
    ``forget * c_prev + input * modulation`` and the output is
    ``output * tanh(c)``.

    Returns ``(h, new_state)``.
    """
    x = np.asarray(x, dtype=np.float64)
    width = params.width
    if x.shape != (params.W_in.shape[0],):
        raise ShapeError(
            f"lstm input {x.shape} incompatible with W_in {params.W_in.shape}"
        )
    if state.c.shape != (width,) or state.h.shape != (width,):
        raise ShapeError(
            f"lstm state shapes {state.c.shape}/{state.h.shape} "
            f"do not match width {width}"
        )
    z = x @ params.W_in + state.h @ params.W_rec + params.b
    gi = sigmoid(z[:width])
    gf = sigmoid(z[width : 2 * width])
    go = sigmoid(z[2 * width : 3 * width])
    gm = np.tanh(z[3 * width :])
    c = gf * state.c + gi * gm
    h = go * np.tanh(c)
    return h, LstmState(c=c, h=h)


def softmax(logits):
    """Row-wise softmax with max-subtraction for overflow safety."""
    z = np.asarray(logits, dtype=np.float64)
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None, :]
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# loss

class _ClampCounter:
    """Counts probability clamps in the loss; purely diagnostic."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def add(self, n: int):
        with self._lock:
            self._count += n

    @property
    def count(self) -> int:
        return self._count

    def reset(self):
        with self._lock:
            self._count = 0


clamp_events = _ClampCounter()

_PROB_FLOOR = 1e-12


def cross_entropy_loss(probs, labels, weight_matrices=(), l2: float = 0.0):
    """Mean negative log-probability of the true class, plus the l2 term.

    ``labels`` are 1-based class ids indexing ``probs`` columns. The
    penalty is ``l2 * sum(W**2)`` over weight matrices only, never
    biases. Probabilities at or below 1e-12 are clamped (and counted in
    ``clamp_events``) so the loss is never infinite.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(
            f"probs {probs.shape} and labels {labels.shape} do not align"
        )
    if labels.min() < 1 or labels.max() > probs.shape[1]:
        raise ShapeError(
            f"labels outside 1..{probs.shape[1]}"
        )
    picked = probs[np.arange(len(labels)), labels - 1]
    clamped = picked < _PROB_FLOOR
    if clamped.any():
        clamp_events.add(int(clamped.sum()))
        picked = np.maximum(picked, _PROB_FLOOR)
    loss = -np.log(picked).mean()
    for W in weight_matrices:
        loss += l2 * float(np.sum(np.square(W)))
    return float(loss)


# ---------------------------------------------------------------------------
# sequence forward/backward
#
# A layer stack is a list of DenseParams/LstmParams; the input matrix X
# is (n, width_in) with row t the sample at time step t. LSTM state is
# zero at t = 0 and carries forward across truncation windows; gradients
# do not cross window boundaries.

def forward_sequence(layers, X, keep_caches: bool = False,
                     dtype=np.float64):
    """Run the stack over a sequence. Returns (logits, caches, activations).

    ``activations[k]`` is the output of stack position k (activations[0]
    is the input itself). Caches hold the per-layer intermediates the
    backward pass needs and are None unless requested. ``dtype`` selects
    the compute precision; float64 is the reference path and the only
    one the gradient oracles cover, float32 is an opt-in speed mode.
    """
    A = np.asarray(X, dtype=dtype)
    if A.ndim != 2:
        raise ShapeError(f"sequence input must be 2-D, got {A.shape}")
    if dtype != np.float64:
        layers = cast_layers(layers, dtype)
    n = A.shape[0]
    activations = [A]
    caches = [] if keep_caches else None
    for layer in layers:
        if isinstance(layer, DenseParams):
            out = affine(A, layer)
            if keep_caches:
                caches.append({"input": A})
        else:
            width = layer.width
            if A.shape[1] != layer.W_in.shape[0]:
                raise ShapeError(
                    f"lstm input width {A.shape[1]} incompatible with "
                    f"W_in {layer.W_in.shape}"
                )
            z_in = A @ layer.W_in + layer.b
            gates_i = np.empty((n, width), dtype=dtype)
            gates_f = np.empty((n, width), dtype=dtype)
            gates_o = np.empty((n, width), dtype=dtype)
            gates_m = np.empty((n, width), dtype=dtype)
            cells = np.empty((n, width), dtype=dtype)
            out = np.empty((n, width), dtype=dtype)
            h = np.zeros(width, dtype=dtype)
            c = np.zeros(width, dtype=dtype)
            for t in range(n):
                z = z_in[t] + h @ layer.W_rec
                gi = sigmoid(z[:width])
                gf = sigmoid(z[width : 2 * width])
                go = sigmoid(z[2 * width : 3 * width])
                gm = np.tanh(z[3 * width :])
                c = gf * c + gi * gm
                h = go * np.tanh(c)
                gates_i[t], gates_f[t], gates_o[t], gates_m[t] = gi, gf, go, gm
                cells[t] = c
                out[t] = h
            if keep_caches:
                caches.append(
                    {
                        "input": A,
                        "i": gates_i,
                        "f": gates_f,
                        "o": gates_o,
                        "m": gates_m,
                        "c": cells,
                        "h": out,
                    }
                )
        A = out
        activations.append(A)
    return A, caches, activations


def _lstm_backward(layer: LstmParams, cache, d_out, window: int):
    """Backpropagate one LSTM layer over the sequence, truncated.

    ``d_out`` is the loss gradient w.r.t. this layer's per-step outputs.
    Recurrent gradient flow stops at window boundaries; the forward
    state values crossing those boundaries are treated as constants.
    """
    n, width = d_out.shape
    A = cache["input"]
    gi, gf, go, gm = cache["i"], cache["f"], cache["o"], cache["m"]
    cells, outs = cache["c"], cache["h"]
    tanh_c = np.tanh(cells)

    dZ = np.zeros((n, 4 * width))
    dh_next = np.zeros(width)
    dc_next = np.zeros(width)
    boundaries = range(0, n, window)
    for start in reversed(list(boundaries)):
        stop = min(start + window, n)
        dh_next[:] = 0.0
        dc_next[:] = 0.0
        for t in range(stop - 1, start - 1, -1):
            dh = d_out[t] + dh_next
            dc = dh * go[t] * (1.0 - tanh_c[t] ** 2) + dc_next
            c_prev = cells[t - 1] if t > 0 else 0.0
            d_go = dh * tanh_c[t]
            d_gf = dc * c_prev
            d_gi = dc * gm[t]
            d_gm = dc * gi[t]
            dZ[t, :width] = d_gi * gi[t] * (1.0 - gi[t])
            dZ[t, width : 2 * width] = d_gf * gf[t] * (1.0 - gf[t])
            dZ[t, 2 * width : 3 * width] = d_go * go[t] * (1.0 - go[t])
            dZ[t, 3 * width :] = d_gm * (1.0 - gm[t] ** 2)
            dc_next = dc * gf[t]
            dh_next = dZ[t] @ layer.W_rec.T

    h_prev = np.vstack([np.zeros((1, width)), outs[:-1]])
    grad = LstmParams(
        W_in=A.T @ dZ,
        W_rec=h_prev.T @ dZ,
        b=dZ.sum(axis=0),
    )
    d_in = dZ @ layer.W_in.T
    return grad, d_in


def sequence_gradients(layers, X, labels, l2: float = 0.0, window=None):
    """Loss and exact analytic gradients for one sequence.

    The batch is one time-ordered sequence; per-step softmax
    cross-entropy is averaged over steps and the l2 penalty (weight
    matrices only) is added. ``window`` truncates recurrent gradient
    flow; None unrolls the full sequence.

    Returns ``(loss, grads, probs)`` with ``grads`` mirroring ``layers``.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2:
        raise ShapeError(f"sequence input must be 2-D, got {X.shape}")
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if window is None:
        window = n
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")

    logits, caches, _ = forward_sequence(layers, X, keep_caches=True)
    probs = softmax(logits)
    weight_matrices = [W for layer in layers for W in layer.weight_matrices()]
    loss = cross_entropy_loss(probs, labels, weight_matrices, l2)

    d_out = probs.copy()
    d_out[np.arange(n), labels - 1] -= 1.0
    d_out /= n

    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        layer, cache = layers[k], caches[k]
        if isinstance(layer, DenseParams):
            grads[k] = DenseParams(
                W=cache["input"].T @ d_out,
                b=d_out.sum(axis=0),
            )
            d_out = d_out @ layer.W.T
        else:
            grads[k], d_out = _lstm_backward(layer, cache, d_out, window)

    if l2 != 0.0:
        for layer, grad in zip(layers, grads):
            if isinstance(layer, DenseParams):
                grad.W += 2.0 * l2 * layer.W
            else:
                grad.W_in += 2.0 * l2 * layer.W_in
                grad.W_rec += 2.0 * l2 * layer.W_rec

    return loss, grads, probs


def sequence_loss(layers, X, labels, l2: float = 0.0):
    """Forward-only loss; the reference point for finite differences."""
    logits, _, _ = forward_sequence(layers, X)
    probs = softmax(logits)
    weight_matrices = [W for layer in layers for W in layer.weight_matrices()]
    return cross_entropy_loss(probs, labels, weight_matrices, l2)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    """First/second moment estimates plus the step counter."""

    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(layers, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(
        m=[zeros_like_layer(layer) for layer in layers],
        v=[zeros_like_layer(layer) for layer in layers],
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(layers, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns (new_layers, new_state).

    A non-finite gradient anywhere rejects the whole update: the inputs
    are left untouched and a NumericError describes the offending array.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for k, grad in enumerate(grads):
        for name, arr in grad.arrays():
            if not np.all(np.isfinite(arr)):
                raise NumericError(
                    f"non-finite gradient in layer {k} array {name}; "
                    f"update rejected"
                )

    t = state.t + 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t

    new_layers, new_m, new_v = [], [], []
    for layer, grad, m, v in zip(layers, grads, state.m, state.v):
        updates = {}
        mm = {}
        vv = {}
        for (name, p), (_, g), (_, m_a), (_, v_a) in zip(
            layer.arrays(), grad.arrays(), m.arrays(), v.arrays()
        ):
            m_new = b1 * m_a + (1.0 - b1) * g
            v_new = b2 * v_a + (1.0 - b2) * np.square(g)
            step = lr * (m_new / bc1) / (np.sqrt(v_new / bc2) + eps)
            updates[name] = p - step
            mm[name] = m_new
            vv[name] = v_new
        cls = type(layer)
        new_layers.append(cls(**updates))
        new_m.append(cls(**mm))
        new_v.append(cls(**vv))

    return new_layers, replace(state, m=new_m, v=new_v, t=t)


# ---------------------------------------------------------------------------
# gradient verification

def finite_difference_gradients(layers, X, labels, l2: float = 0.0,
                                step: float = 1e-5):
    """Central-difference gradients of the full-sequence loss."""
    grads = [zeros_like_layer(layer) for layer in layers]
    for layer, grad in zip(layers, grads):
        for (_, arr), (_, out) in zip(layer.arrays(), grad.arrays()):
            flat = arr.reshape(-1)
            flat_out = out.reshape(-1)
            for idx in range(flat.size):
                original = flat[idx]
                flat[idx] = original + step
                hi = sequence_loss(layers, X, labels, l2)
                flat[idx] = original - step
                lo = sequence_loss(layers, X, labels, l2)
                flat[idx] = original
                flat_out[idx] = (hi - lo) / (2.0 * step)
    return grads


def gradient_check(layers, X, labels, l2: float = 0.0, step: float = 1e-5):
    """Max discrepancy between analytic and finite-difference gradients.

    Per entry: |a - f| / max(1, |a|, |f|), i.e. relative error for
    gradients above unit magnitude and absolute error below it (the
    difference quotient itself is only accurate to ~1e-10, so a pure
    ratio would be noise for near-zero entries).
    """
    _, analytic, _ = sequence_gradients(layers, X, labels, l2)
    numeric = finite_difference_gradients(layers, X, labels, l2, step)
    worst = 0.0
    for a_layer, n_layer in zip(analytic, numeric):
        for (_, a), (_, f) in zip(a_layer.arrays(), n_layer.arrays()):
            denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(f)))
            worst = max(worst, float((np.abs(a - f) / denom).max()))
    return worst
