"""Minimal dense feed-forward network engine with reverse-mode gradients.

Everything runs in float64 on numpy arrays shaped (batch, features). All
randomness flows through an explicit ``numpy.random.Generator`` so that a
fixed seed reproduces training bit for bit.
"""

import numpy as np

ACTIVATIONS = ("relu", "linear")


class ShapeError(ValueError):
    """Raised when tensor dimensions do not line up."""


class UsageError(RuntimeError):
    """Raised when forward/backward are called out of order."""


def _as_matrix(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-d array, got shape {x.shape}")
    return x


class DenseLayer:
    """One fully connected layer: y = act(x @ W.T + b).

    Weights are (out_dim, in_dim), initialised from a scaled uniform
    fan-in distribution. Gradients accumulate into ``grad_weights`` /
    ``grad_bias`` across backward calls until ``zero_grad``.
    """

    def __init__(self, in_dim, out_dim, activation="relu", rng=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}, expected one of {ACTIVATIONS}")
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"layer dimensions must be positive, got ({in_dim}, {out_dim})")
        rng = np.random.default_rng() if rng is None else rng
        limit = np.sqrt(6.0 / in_dim)
        self.weights = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        # small positive bias keeps freshly initialised ReLU units off the
        # kink (an exactly-zero pre-activation breaks finite-difference checks)
        self.bias = np.full(out_dim, 0.01 if activation == "relu" else 0.0)
        self.activation = activation
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None
        self._z = None

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    def forward(self, x):
        x = _as_matrix(x)
        if x.shape[1] != self.in_dim:
            raise ShapeError(
                f"input has {x.shape[1]} columns but layer expects {self.in_dim}"
            )
        z = x @ self.weights.T + self.bias
        self._x = x
        self._z = z
        if self.activation == "relu":
            return np.maximum(z, 0.0)
        return z

    def backward(self, grad_output):
        """Accumulate parameter gradients; return gradient w.r.t. the input."""
        if self._x is None:
            raise UsageError("backward called before forward")
        grad_output = _as_matrix(grad_output)
        if grad_output.shape != self._z.shape:
            raise ShapeError(
                f"gradient has shape {grad_output.shape} but forward produced {self._z.shape}"
            )
        if self.activation == "relu":
            dz = grad_output * (self._z > 0.0)
        else:
            dz = grad_output
        self.grad_weights += dz.T @ self._x
        self.grad_bias += dz.sum(axis=0)
        return dz @ self.weights

    def parameters(self):
        return [(self.weights, self.grad_weights), (self.bias, self.grad_bias)]

    def zero_grad(self):
        self.grad_weights.fill(0.0)
        self.grad_bias.fill(0.0)


def dropout_forward(x, drop_probability, rng, training=True):
    """Inverted dropout. Returns (output, mask) where mask already carries
    the 1/(1-p) rescaling so expectation is preserved; multiply the incoming
    gradient by the same mask in the backward pass.

    ``drop_probability`` is either a scalar or one probability per sample
    (row). Disabled (identity, mask=None) at inference or when every rate
    is zero.
    """
    x = _as_matrix(x)
    p = np.asarray(drop_probability, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p >= 1.0):
        raise ValueError(f"drop probabilities must lie in [0, 1), got {drop_probability!r}")
    if p.ndim == 1 and p.shape[0] != x.shape[0]:
        raise ShapeError(
            f"got {p.shape[0]} per-sample rates for {x.shape[0]} samples"
        )
    if not training or not np.any(p > 0.0):
        return x, None
    keep = 1.0 - (p if p.ndim == 0 else p[:, None])
    mask = (rng.random(x.shape) < keep) / keep
    return x * mask, mask


class LayerStack:
    """A sequential chain of DenseLayers with optional dropout.

    Dropout is applied after every layer; whether the final layer's output
    is included is controlled per call (stacks that feed other stacks drop
    their output too, prediction stacks do not).
    """

    def __init__(self, layers):
        self.layers = list(layers)
        if not self.layers:
            raise ValueError("a stack needs at least one layer")
        self._masks = None

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def forward(self, x, dropout=None, dropout_output=False, rng=None, training=False):
        h = _as_matrix(x)
        masks = []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer.forward(h)
            if training and dropout is not None and (i < last or dropout_output):
                h, mask = dropout_forward(h, dropout, rng, training=True)
            else:
                mask = None
            masks.append(mask)
        self._masks = masks
        return h

    def backward(self, grad_output):
        if self._masks is None:
            raise UsageError("backward called before forward")
        g = _as_matrix(grad_output)
        for layer, mask in zip(reversed(self.layers), reversed(self._masks)):
            if mask is not None:
                g = g * mask
            g = layer.backward(g)
        return g

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def parameter_count(self):
        return sum(p.size for p, _ in self.parameters())


def build_stack(in_dim, width, depth, out_dim=None, rng=None):
    """``depth`` ReLU layers of ``width`` units, plus a linear output layer
    when ``out_dim`` is given."""
    if depth < 1 and out_dim is None:
        raise ValueError("depth must be >= 1 for a stack without an output layer")
    layers = []
    d = in_dim
    for _ in range(depth):
        layers.append(DenseLayer(d, width, activation="relu", rng=rng))
        d = width
    if out_dim is not None:
        layers.append(DenseLayer(d, out_dim, activation="linear", rng=rng))
    return LayerStack(layers)


class Adam:
    """Adaptive-moment stochastic gradient rule.

    Moment buffers are keyed by parameter-array identity, so each array
    carries its own step counter and only the parameters passed to a given
    ``step`` call advance. Parameters with zero gradient and zero moments
    are left exactly unchanged.
    """

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate < 0.0:
            raise ValueError(f"learning rate must be nonnegative, got {learning_rate}")
        self.learning_rate = float(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._slots = {}

    def step(self, params_and_grads):
        """Update each (param, grad) pair in place."""
        for param, grad in params_and_grads:
            if param.shape != grad.shape:
                raise ShapeError(
                    f"parameter shape {param.shape} does not match gradient shape {grad.shape}"
                )
            slot = self._slots.get(id(param))
            if slot is None:
                slot = [np.zeros_like(param), np.zeros_like(param), 0]
                self._slots[id(param)] = slot
            m, v, t = slot
            t += 1
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            param -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
            slot[2] = t

    def step_count(self, param):
        slot = self._slots.get(id(param))
        return 0 if slot is None else slot[2]


def sgd_step(optimizer, params, grads):
    """Functional wrapper over Adam.step for (params, grads) lists."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    optimizer.step(list(zip(params, grads)))
    return params


def mse_loss(predictions, targets):
    """Mean squared error and its gradient w.r.t. predictions."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ShapeError(
            f"predictions {predictions.shape} and targets {targets.shape} differ"
        )
    diff = predictions - targets
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad
