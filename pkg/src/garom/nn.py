"""Dense feed-forward networks with hand-written reverse mode and Adam.

All parameters of an :class:`Mlp` live in one flat float64 vector
(``net.params``); each :class:`DenseLayer` holds reshaped views into it. This
keeps the optimizer a single fused pass and makes checkpointing trivial.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels


class Activation(str, Enum):
    SILU = "silu"
    RELU = "relu"
    IDENTITY = "identity"


@dataclass
class DenseLayer:
    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: Activation

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]


def xavier_init(in_dim, out_dim, rng):
    """Xavier/Glorot uniform weights in ``±sqrt(6 / (in_dim + out_dim))`` and zero bias."""
    if in_dim < 1 or out_dim < 1:
        raise ValueError(f"layer dims must be >= 1, got ({in_dim}, {out_dim})")
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    weight = rng.uniform(-bound, bound, size=(in_dim, out_dim))
    return weight, np.zeros(out_dim)


class Mlp:
    """Chain of dense layers, ``sizes[i] -> sizes[i+1]`` with ``activations[i]``."""

    def __init__(self, sizes, activations, rng=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ValueError("an Mlp needs at least one layer")
        if len(activations) != len(sizes) - 1:
            raise ValueError(
                f"{len(sizes) - 1} layers but {len(activations)} activations"
            )
        if min(sizes) < 1:
            raise ValueError(f"layer widths must be >= 1, got {sizes}")
        self.sizes = tuple(sizes)
        n_params = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        self.params = np.zeros(n_params)
        self.layers = self._bind(self.params, [Activation(a) for a in activations])
        # bumped by adam_step; guards against reusing a cache after an update
        self.version = 0
        if rng is not None:
            for layer in self.layers:
                w, b = xavier_init(layer.in_dim, layer.out_dim, rng)
                layer.weight[...] = w
                layer.bias[...] = b

    def _bind(self, flat, activations):
        layers = []
        offset = 0
        for (a, b), act in zip(zip(self.sizes[:-1], self.sizes[1:]), activations):
            w = flat[offset:offset + a * b].reshape(a, b)
            offset += a * b
            bias = flat[offset:offset + b]
            offset += b
            layers.append(DenseLayer(w, bias, act))
        return layers

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    @property
    def activations(self):
        return tuple(layer.activation for layer in self.layers)

    def offsets(self):
        """Start offset of each layer inside the flat vector, plus the total."""
        out = [0]
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            out.append(out[-1] + a * b + b)
        return out

    def _grad_buffer(self):
        buf = getattr(self, "_gbuf", None)
        if buf is None:
            buf = self._gbuf = np.empty_like(self.params)
        return buf

    def split(self, flat):
        """Views of a flat vector shaped like this net's (weight, bias) pairs."""
        return [(l.weight, l.bias) for l in self._bind(flat, self.activations)]

    def __call__(self, x):
        return forward(self, x)[0]

    def __repr__(self):
        acts = ",".join(a.value for a in self.activations)
        return f"Mlp({list(self.sizes)}, [{acts}])"


@dataclass
class ForwardCache:
    inputs: list  # input to each layer
    pre: list  # pre-activation of each layer
    net: Mlp = field(repr=False)
    version: int = 0

    def __len__(self):
        return len(self.pre)


def _activate(act, pre):
    if act is Activation.RELU:
        return np.maximum(pre, 0.0)
    if act is Activation.SILU:
        return kernels.silu_forward(pre)
    return pre


def _activate_backward(act, pre, grad):
    if act is Activation.RELU:
        # derivative at exactly 0 is taken as 0
        return grad * (pre > 0.0)
    if act is Activation.SILU:
        return kernels.silu_backward(pre, grad)
    return grad


def forward(net, x):
    """Apply ``net`` row-wise to the batch ``x``; returns ``(output, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"{net!r} expects (batch, {net.in_dim}) input, got {x.shape}")
    inputs, pre = [], []
    h = x
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.weight
        z += layer.bias
        pre.append(z)
        h = _activate(layer.activation, z)
    return h, ForwardCache(inputs, pre, net, net.version)


def backward(net, cache, output_grad, weight_grads=True, input_grad=True, adam=None):
    """Reverse-mode pass through ``net``.

    Parameters
    ----------
    net : Mlp
    cache : ForwardCache
        Produced by :func:`forward` on ``net`` with its current parameters.
    output_grad : ndarray
        Gradient of the scalar loss w.r.t. the network output.
    weight_grads, input_grad : bool
        Skip the parameter or the input gradient when the caller does not
        need it (frozen networks, data inputs).
    adam : AdamState, optional
        Apply one Adam step to each layer as soon as its gradient is known.
        Each layer's input gradient is taken before its own update, so the
        result is bit-identical to ``backward`` followed by ``adam_step``
        while the gradient is still hot in cache.

    Returns
    -------
    (grads, input_grad)
        ``grads`` is a flat vector aligned with ``net.params`` (or None);
        ``input_grad`` has the shape of the forward input (or None).
    """
    if cache.net is not net or len(cache) != len(net.layers):
        raise ValueError("forward cache does not belong to this network")
    if cache.version != net.version:
        raise ValueError("stale forward cache: parameters changed since forward()")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != cache.pre[-1].shape:
        raise ValueError(f"output_grad shape {g.shape} != output shape {cache.pre[-1].shape}")

    fused = adam is not None
    if fused:
        weight_grads = True
        grads = net._grad_buffer()
        step = _AdamStep(adam, net.params.shape)
    else:
        grads = np.empty_like(net.params) if weight_grads else None
    views = net.split(grads) if weight_grads else None
    offsets = net.offsets()
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        g = _activate_backward(layer.activation, cache.pre[i], g)
        if weight_grads:
            gw, gb = views[i]
            np.matmul(cache.inputs[i].T, g, out=gw)
            np.sum(g, axis=0, out=gb)
        if i > 0 or input_grad:
            g = g @ layer.weight.T
        if fused:
            step.apply(net.params, grads, offsets[i], offsets[i + 1])
    if fused:
        net.version += 1
        grads = None
    return grads, (g if input_grad else None)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    @classmethod
    def zeros(cls, n, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(np.zeros(n), np.zeros(n), float(learning_rate), float(beta1),
                   float(beta2), float(epsilon))


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place.

    ``params`` is a flat array or an :class:`Mlp` (whose ``params`` are
    updated and whose version is bumped). Returns ``state``.
    """
    net = params if isinstance(params, Mlp) else None
    p = net.params if net is not None else params
    g = np.ascontiguousarray(grads, dtype=np.float64)
    if not (p.shape == g.shape == state.first_moment.shape == state.second_moment.shape):
        raise ValueError(
            f"adam_step shape mismatch: params {p.shape}, grads {g.shape}, "
            f"state {state.first_moment.shape}"
        )
    _AdamStep(state, p.shape).apply(p, g, 0, p.size)
    if net is not None:
        net.version += 1
    return state


class _AdamStep:
    # Bumps the step counter once; ``apply`` may then run on disjoint slices.
    def __init__(self, state, shape):
        if not (shape == state.first_moment.shape == state.second_moment.shape):
            raise ValueError(f"Adam state shape {state.first_moment.shape} != params {shape}")
        state.step_count += 1
        t = state.step_count
        self.state = state
        self.bc1 = 1.0 - state.beta1**t
        self.bc2 = 1.0 - state.beta2**t

    def apply(self, p, g, lo, hi):
        st = self.state
        kernels.adam_update(p[lo:hi], g[lo:hi], st.first_moment[lo:hi], st.second_moment[lo:hi],
                            float(st.learning_rate), st.beta1, st.beta2, st.epsilon,
                            self.bc1, self.bc2)


def finite_diff_grad(loss_fn, params, h=1e-6):
    """Central-difference gradient of ``loss_fn(params)`` (test oracle)."""
    x = np.array(params, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = loss_fn(x)
        flat[i] = orig - h
        f_minus = loss_fn(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad
