"""Tanh multi-layer perceptron with explicit parameters.

The net alternates fully-connected and element-wise activation layers:
``linear -> act -> linear -> ... -> linear`` with a scalar output.  Weights
and biases are stored per linear layer; the activation is smooth and
exposes derivatives up to third order, which the differential-operator
propagation in :mod:`pinnopt.taylor` requires.

Parameter flattening convention (shared by the whole package): per linear
layer the weight and bias are joined into the augmented matrix ``[W | b]``
of shape ``h_out x (h_in + 1)`` and vectorized column-by-column (first
index varies fastest); layers are concatenated in order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Architecture",
    "ActivationDerivs",
    "Parameters",
    "ForwardTrace",
    "activation_derivs",
    "init_params",
    "forward",
    "forward_batch",
    "backward_batch",
    "weighted_param_grads",
    "augment_inputs",
    "params_to_vec",
    "vec_to_params",
    "mats_to_vec",
    "vec_to_mats",
    "add_scaled",
]


@dataclass(frozen=True)
class ActivationDerivs:
    """Element-wise activation value and first three derivatives.

    ``s3`` is None when only second-order information was requested.
    """

    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray


def tanh_derivs(z, order: int = 3) -> ActivationDerivs:
    """tanh and its derivatives, via the identities s1 = 1 - s0^2,
    s2 = -2 s0 s1, s3 = -2 s1^2 - 2 s0 s2."""
    z = np.asarray(z, dtype=np.float64)
    s0 = np.tanh(z)
    s1 = 1.0 - s0 * s0
    s2 = -2.0 * s0 * s1
    s3 = -2.0 * s1 * s1 - 2.0 * s0 * s2 if order >= 3 else None
    return ActivationDerivs(s0, s1, s2, s3)


ACTIVATIONS = {"tanh": tanh_derivs}


def activation_derivs(z, activation: str = "tanh", order: int = 3) -> ActivationDerivs:
    """Evaluate the named activation and its derivatives up to ``order``."""
    try:
        fn = ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None
    return fn(z, order)


@dataclass(frozen=True)
class Architecture:
    """Layer widths ``(d, h_1, ..., 1)`` plus the activation name."""

    widths: tuple
    activation: str = "tanh"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        if any(w < 1 for w in widths):
            raise ValueError(f"all widths must be >= 1, got {widths}")
        if widths[-1] != 1:
            raise ValueError(f"output width must be 1, got {widths[-1]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def n_linear(self) -> int:
        return len(self.widths) - 1


@dataclass
class Parameters:
    """Per-linear-layer weight matrices and bias vectors."""

    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input width does not match previous layer")

    @property
    def widths(self) -> tuple:
        return tuple([self.weights[0].shape[1]] + [w.shape[0] for w in self.weights])

    @property
    def n_linear(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def architecture(self) -> Architecture:
        return Architecture(self.widths, self.activation)

    def copy(self) -> "Parameters":
        return Parameters(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


def init_params(arch: Architecture, seed: int) -> Parameters:
    """Draw weights and biases i.i.d. uniform on (-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Deterministic given ``seed``; per layer the weight entries are drawn
    first (row-major), then the bias.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for h_in, h_out in zip(arch.widths[:-1], arch.widths[1:]):
        bound = 1.0 / np.sqrt(h_in)
        weights.append(rng.uniform(-bound, bound, size=(h_out, h_in)))
        biases.append(rng.uniform(-bound, bound, size=h_out))
    return Parameters(weights, biases, arch.activation)


def forward(params: Parameters, x) -> tuple:
    """Evaluate the net at a single point.

    Returns ``(u, zs)`` where ``zs`` lists the output of every sequential
    layer (linear and activation layers interleaved) in order.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise ValueError(f"expected input of shape ({params.input_dim},), got {x.shape}")
    zs = []
    z = x
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = w @ z + b
        zs.append(z)
        if l < params.n_linear - 1:
            z = activation_derivs(z, params.activation).s0
            zs.append(z)
    return float(z[0]), zs


@dataclass
class ForwardTrace:
    """Intermediates of a batched forward pass.

    ``linear_inputs[l]`` is the (N, h_in) input reaching linear layer l,
    ``pre_activations[l]`` its (N, h_out) output before any activation.
    """

    linear_inputs: list = field(default_factory=list)
    pre_activations: list = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.pre_activations[-1][:, 0]


def forward_batch(params: Parameters, x) -> tuple:
    """Vectorized forward pass over a batch of points (rows of ``x``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"expected (N, {params.input_dim}) inputs, got {x.shape}")
    trace = ForwardTrace()
    z = x
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        trace.linear_inputs.append(z)
        z = z @ w.T + b
        trace.pre_activations.append(z)
        if l < params.n_linear - 1:
            z = activation_derivs(z, params.activation).s0
    return trace.output, trace


def backward_batch(params: Parameters, trace: ForwardTrace, seed) -> list:
    """Per-sample gradients of ``seed_n * u_n`` w.r.t. each linear layer output.

    ``seed`` has shape (N,).  Returns one (N, h_out) array per linear
    layer; entry l is the gradient at the pre-activation output of layer l.
    """
    seed = np.asarray(seed, dtype=np.float64)
    n_lin = params.n_linear
    grads = [None] * n_lin
    g = seed[:, None]
    for l in reversed(range(n_lin)):
        grads[l] = g
        if l > 0:
            g = g @ params.weights[l]
            s1 = activation_derivs(trace.pre_activations[l - 1], params.activation, order=2).s1
            g = g * s1
    return grads


def augment_inputs(z) -> np.ndarray:
    """Append a trailing 1 to each input row (bias column of ``[W | b]``)."""
    z = np.asarray(z, dtype=np.float64)
    return np.concatenate([z, np.ones((z.shape[0], 1))], axis=1)


def weighted_param_grads(trace: ForwardTrace, grads: list, weights) -> list:
    """Contract per-sample layer-output gradients into parameter gradients.

    Returns one ``h_out x (h_in + 1)`` matrix ``[dW | db]`` per linear
    layer, equal to ``sum_n weights[n] * g_n zhat_n^T`` with bias-augmented
    inputs ``zhat``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    mats = []
    for z_in, g in zip(trace.linear_inputs, grads):
        zhat = augment_inputs(z_in)
        mats.append((g * weights[:, None]).T @ zhat)
    return mats


# ---------------------------------------------------------------------------
# flattening helpers (column-stacked [W | b] per layer, layers concatenated)

def _vec_of_mat(m) -> np.ndarray:
    return np.asarray(m, dtype=np.float64).flatten(order="F")


def mats_to_vec(mats: list) -> np.ndarray:
    """Flatten a list of per-layer ``[W | b]`` matrices into one vector."""
    return np.concatenate([_vec_of_mat(m) for m in mats])


def vec_to_mats(vec, params: Parameters) -> list:
    """Inverse of :func:`mats_to_vec` for the layer shapes of ``params``."""
    vec = np.asarray(vec, dtype=np.float64)
    mats, start = [], 0
    for w in params.weights:
        q, p = w.shape[0], w.shape[1] + 1
        seg = vec[start : start + p * q]
        mats.append(seg.reshape((q, p), order="F"))
        start += p * q
    if start != vec.size:
        raise ValueError(f"vector of length {vec.size} does not match parameter count {start}")
    return mats


def params_to_vec(params: Parameters) -> np.ndarray:
    """Flatten all parameters in the package-wide convention."""
    return mats_to_vec(
        [np.concatenate([w, b[:, None]], axis=1) for w, b in zip(params.weights, params.biases)]
    )


def vec_to_params(vec, template: Parameters) -> Parameters:
    """Rebuild :class:`Parameters` from a flat vector, shapes from ``template``."""
    mats = vec_to_mats(vec, template)
    return Parameters(
        [m[:, :-1].copy() for m in mats],
        [m[:, -1].copy() for m in mats],
        template.activation,
    )


def add_scaled(params: Parameters, mats: list, alpha: float) -> Parameters:
    """Return ``params + alpha * mats`` where ``mats`` are ``[dW | db]`` blocks."""
    weights, biases = [], []
    for w, b, m in zip(params.weights, params.biases, mats):
        weights.append(w + alpha * m[:, :-1])
        biases.append(b + alpha * m[:, -1])
    return Parameters(weights, biases, params.activation)
