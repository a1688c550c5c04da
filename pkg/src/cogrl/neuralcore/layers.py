"""Network layers with explicit forward/backward passes.

Everything is double-precision numpy and single-threaded; there is no
autograd. Each layer keeps its parameters as plain arrays, returns a cache
from ``forward`` and consumes it in ``backward``, which yields the gradient
with respect to the layer input plus a dict of parameter gradients.

Weight matrices are initialized uniformly on (-1/sqrt(fan_in), +1/sqrt(fan_in))
from the generator passed in; biases start at zero, convolution gains at one,
and embedding rows are uniform on (-0.5, 0.5). The embedding scale matters:
rows much smaller than the recurrent weights leave gate activations nearly
input-independent and gradient descent cannot bootstrap out of the
class-prior solution.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, DimensionError


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# activation -> (function, derivative expressed in terms of the output)
ACTIVATIONS = {
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "sigmoid": (sigmoid, lambda y: y * (1.0 - y)),
    "identity": (lambda x: x, lambda y: np.ones_like(y)),
}


def flip_kernel(kernel: np.ndarray) -> np.ndarray:
    """Spatial flip relating true convolution and cross-correlation.

    Convolving an input with ``k`` equals cross-correlating it with
    ``flip_kernel(k)``; flipping twice returns the original kernel. The
    convolution layer itself evaluates the index-reversed (true) form, so
    this adapter is for callers holding cross-correlation-oriented kernels.
    """
    return np.asarray(kernel)[..., ::-1, ::-1].copy()


class ConvLayer:
    """2-D valid convolution with a per-output-channel tanh gain.

    Output map j is ``g_j * tanh(sum_i k_ij * x_i)`` where ``*`` is true
    convolution: kernel indices run backwards over the input, no padding.
    Positions are sampled at the stride, so an H x W input produces a
    floor((H-R)/stride)+1 by floor((W-R)/stride)+1 output. There is no
    additive bias.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, rng: np.random.Generator | None = None):
        if kernel_size < 1 or stride < 1 or in_channels < 1 or out_channels < 1:
            raise ConfigurationError(
                "conv layer needs positive channel counts, kernel size and stride")
        rng = rng if rng is not None else np.random.default_rng()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        limit = 1.0 / np.sqrt(in_channels * kernel_size * kernel_size)
        self.kernels = rng.uniform(
            -limit, limit, size=(out_channels, in_channels, kernel_size, kernel_size))
        self.gains = np.ones(out_channels, dtype=np.float64)

    def output_shape(self, h: int, w: int) -> tuple[int, int, int]:
        r, s = self.kernel_size, self.stride
        if h < r or w < r:
            raise DimensionError(
                f"conv kernel {r}x{r} does not fit inside a {h}x{w} input")
        return self.out_channels, (h - r) // s + 1, (w - r) // s + 1

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise DimensionError(
                f"conv layer expects ({self.in_channels}, H, W) input, got {x.shape}")
        _, oh, ow = self.output_shape(x.shape[1], x.shape[2])
        r, s = self.kernel_size, self.stride
        z = np.zeros((self.out_channels, oh, ow))
        for p in range(r):
            for q in range(r):
                # true convolution: output (a, b) reads x[s*a + (R-1-p), s*b + (R-1-q)]
                patch = x[:,
                          r - 1 - p: r - 1 - p + s * (oh - 1) + 1: s,
                          r - 1 - q: r - 1 - q + s * (ow - 1) + 1: s]
                z += np.tensordot(self.kernels[:, :, p, q], patch, axes=([1], [0]))
        t = np.tanh(z)
        y = self.gains[:, None, None] * t
        return y, (x, t)

    def backward(self, dy: np.ndarray, cache):
        x, t = cache
        r, s = self.kernel_size, self.stride
        oh, ow = dy.shape[1], dy.shape[2]
        dgains = np.sum(dy * t, axis=(1, 2))
        dz = dy * self.gains[:, None, None] * (1.0 - t * t)
        dk = np.zeros_like(self.kernels)
        dx = np.zeros_like(x)
        for p in range(r):
            for q in range(r):
                isl = slice(r - 1 - p, r - 1 - p + s * (oh - 1) + 1, s)
                jsl = slice(r - 1 - q, r - 1 - q + s * (ow - 1) + 1, s)
                dk[:, :, p, q] = np.tensordot(dz, x[:, isl, jsl], axes=([1, 2], [1, 2]))
                dx[:, isl, jsl] += np.tensordot(
                    self.kernels[:, :, p, q], dz, axes=([0], [0]))
        return dx, {"kernels": dk, "gains": dgains}


class DenseLayer:
    """Fully connected layer: activation(W x + b)."""

    def __init__(self, in_size: int, out_size: int, activation: str = "identity",
                 rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        if in_size < 1 or out_size < 1:
            raise ConfigurationError("dense layer sizes must be positive")
        rng = rng if rng is not None else np.random.default_rng()
        limit = 1.0 / np.sqrt(in_size)
        self.in_size = in_size
        self.out_size = out_size
        self.activation = activation
        self.weights = rng.uniform(-limit, limit, size=(out_size, in_size))
        self.biases = np.zeros(out_size, dtype=np.float64)

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.in_size,):
            raise DimensionError(
                f"dense layer expects length-{self.in_size} input, got {x.shape}")
        z = self.weights @ x + self.biases
        y = ACTIVATIONS[self.activation][0](z)
        return y, (x, y)

    def backward(self, dy: np.ndarray, cache):
        x, y = cache
        da = dy * ACTIVATIONS[self.activation][1](y)
        return self.weights.T @ da, {"weights": np.outer(da, x), "biases": da}


class EmbeddingTable:
    """Token-id to vector lookup; row 0 is reserved for unknown tokens."""

    def __init__(self, vocab_size: int, dim: int,
                 rng: np.random.Generator | None = None):
        if vocab_size < 1 or dim < 1:
            raise ConfigurationError("embedding table needs positive sizes")
        rng = rng if rng is not None else np.random.default_rng()
        self.vocab_size = vocab_size
        self.dim = dim
        self.vectors = rng.uniform(-0.5, 0.5, size=(vocab_size, dim))

    def forward(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise DimensionError("token id outside embedding table")
        return self.vectors[ids]

    def backward(self, ids: np.ndarray, dvecs: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(self.vectors)
        if len(ids):
            np.add.at(grad, np.asarray(ids, dtype=np.intp), dvecs)
        return grad


class LSTMCell:
    """One LSTM recurrence with separate input and hidden biases.

    Gates follow the standard formulation: input, forget and output gates
    through the logistic function, the cell candidate through tanh, then
    ``c_t = f*c_prev + i*g`` and ``h_t = o*tanh(c_t)``. The four gates are
    stored stacked (order i, f, g, o) so one step costs two matrix products;
    the per-gate matrices ``w_ii, w_if, w_ig, w_io`` / ``w_hi, w_hf, w_hc,
    w_ho`` and the eight biases are live views into the stacked arrays.
    """

    def __init__(self, input_size: int, hidden_size: int,
                 rng: np.random.Generator | None = None):
        if input_size < 1 or hidden_size < 1:
            raise ConfigurationError("LSTM sizes must be positive")
        rng = rng if rng is not None else np.random.default_rng()
        self.input_size = input_size
        self.hidden_size = hidden_size
        li = 1.0 / np.sqrt(input_size)
        lh = 1.0 / np.sqrt(hidden_size)
        self.w_x = rng.uniform(-li, li, size=(4 * hidden_size, input_size))
        self.w_h = rng.uniform(-lh, lh, size=(4 * hidden_size, hidden_size))
        self.b_x = np.zeros(4 * hidden_size, dtype=np.float64)
        self.b_h = np.zeros(4 * hidden_size, dtype=np.float64)

    def _block(self, arr, gate):
        h = self.hidden_size
        return arr[gate * h:(gate + 1) * h]

    # per-gate views: input weights
    w_ii = property(lambda self: self._block(self.w_x, 0))
    w_if = property(lambda self: self._block(self.w_x, 1))
    w_ig = property(lambda self: self._block(self.w_x, 2))
    w_io = property(lambda self: self._block(self.w_x, 3))
    # per-gate views: hidden weights
    w_hi = property(lambda self: self._block(self.w_h, 0))
    w_hf = property(lambda self: self._block(self.w_h, 1))
    w_hc = property(lambda self: self._block(self.w_h, 2))
    w_ho = property(lambda self: self._block(self.w_h, 3))
    # per-gate views: biases
    b_ii = property(lambda self: self._block(self.b_x, 0))
    b_if = property(lambda self: self._block(self.b_x, 1))
    b_ig = property(lambda self: self._block(self.b_x, 2))
    b_io = property(lambda self: self._block(self.b_x, 3))
    b_hi = property(lambda self: self._block(self.b_h, 0))
    b_hf = property(lambda self: self._block(self.b_h, 1))
    b_hg = property(lambda self: self._block(self.b_h, 2))
    b_ho = property(lambda self: self._block(self.b_h, 3))

    def _step_full(self, x_t, h_prev, c_prev):
        x_t = np.asarray(x_t, dtype=np.float64)
        h_prev = np.asarray(h_prev, dtype=np.float64)
        c_prev = np.asarray(c_prev, dtype=np.float64)
        if x_t.shape != (self.input_size,) or h_prev.shape != (self.hidden_size,) \
                or c_prev.shape != (self.hidden_size,):
            raise DimensionError(
                f"LSTM step expects input {self.input_size} and state "
                f"{self.hidden_size}, got {x_t.shape}/{h_prev.shape}/{c_prev.shape}")
        a = self.w_x @ x_t + self.b_x + self.w_h @ h_prev + self.b_h
        ai, af, ag, ao = np.split(a, 4)
        i = sigmoid(ai)
        f = sigmoid(af)
        g = np.tanh(ag)
        o = sigmoid(ao)
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        return h, c, (x_t, h_prev, c_prev, i, f, g, o, tc)

    def step(self, x_t, h_prev, c_prev):
        """Single recurrence step; returns (h_t, c_t)."""
        h, c, _ = self._step_full(x_t, h_prev, c_prev)
        return h, c

    def run(self, xs: np.ndarray):
        """Run over a (T, input_size) sequence from zero initial state.

        Returns the final hidden state, final cell state and the per-step
        caches needed by backward_through_time. An empty sequence yields
        the zero initial states and no caches.
        """
        h = np.zeros(self.hidden_size)
        c = np.zeros(self.hidden_size)
        caches = []
        for x_t in xs:
            h, c, cache = self._step_full(x_t, h, c)
            caches.append(cache)
        return h, c, caches

    def backward_through_time(self, caches, dh_last):
        """Backpropagate a gradient on the final hidden state.

        Returns (dxs, grads) where dxs has one row per input step and grads
        holds accumulated gradients for w_x, w_h, b_x, b_h.
        """
        dwx = np.zeros_like(self.w_x)
        dwh = np.zeros_like(self.w_h)
        dbx = np.zeros_like(self.b_x)
        dbh = np.zeros_like(self.b_h)
        dxs = np.zeros((len(caches), self.input_size))
        dh = np.asarray(dh_last, dtype=np.float64)
        dc = np.zeros(self.hidden_size)
        for t in range(len(caches) - 1, -1, -1):
            x_t, h_prev, c_prev, i, f, g, o, tc = caches[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_next = dc * f
            da = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ])
            dwx += np.outer(da, x_t)
            dwh += np.outer(da, h_prev)
            dbx += da
            dbh += da
            dxs[t] = self.w_x.T @ da
            dh = self.w_h.T @ da
            dc = dc_next
        return dxs, {"w_x": dwx, "w_h": dwh, "b_x": dbx, "b_h": dbh}
