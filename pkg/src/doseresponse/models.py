"""DRNet-family architectures for individual dose-response estimation.

A DRNet routes each sample through shared base layers, one of k treatment
layer stacks, and one of k*E dosage-stratum heads selected by the sample's
dosage. The dosage scalar is concatenated to the first head input and,
with ``repeat_dosage``, to every further head hidden layer. TARNET is the
E=1 / no-repeat degenerate case; the MLP baseline is a single stack that
receives (covariates, one-hot treatment, dosage) as input.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .nn import Adam, DenseLayer, LayerStack, dropout_forward, mse_loss

MODEL_FORMAT = "doseresponse-model/1"


class DosageError(ValueError):
    """Raised for dosages outside a treatment's valid range."""


@dataclass(frozen=True)
class DosageRange:
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"dosage range needs low < high, got [{self.low}, {self.high}]")

    @property
    def width(self):
        return self.high - self.low


@dataclass
class DRNetConfig:
    input_dim: int
    num_treatments: int
    num_strata: int = 5
    base_depth: int = 2
    base_width: int = 48
    treatment_depth: int = 1
    treatment_width: int = 48
    head_depth: int = 1
    head_width: int = 48
    repeat_dosage: bool = True
    dosage_ranges: list = field(default_factory=list)

    def __post_init__(self):
        if self.num_treatments < 2:
            raise ValueError(f"need at least 2 treatments, got {self.num_treatments}")
        if self.num_strata < 1:
            raise ValueError(f"need at least 1 dosage stratum, got {self.num_strata}")
        for name in ("base_depth", "treatment_depth", "head_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.dosage_ranges:
            self.dosage_ranges = [DosageRange(1e-3, 1.0) for _ in range(self.num_treatments)]
        if len(self.dosage_ranges) != self.num_treatments:
            raise ValueError(
                f"{len(self.dosage_ranges)} dosage ranges for {self.num_treatments} treatments"
            )
        self.dosage_ranges = [
            r if isinstance(r, DosageRange) else DosageRange(*r) for r in self.dosage_ranges
        ]


def stratum_index(s, dosage_range, num_strata):
    """Equal-width stratum of dosage ``s`` in [low, high]; s = high maps to the
    top stratum, interior boundaries belong to the higher stratum (floor rule)."""
    low, high = dosage_range.low, dosage_range.high
    if not (low <= s <= high):
        raise DosageError(f"dosage {s} outside [{low}, {high}]")
    if s == high:
        return num_strata - 1
    idx = int(np.floor(num_strata * (s - low) / (high - low)))
    return min(idx, num_strata - 1)


def stratum_indices(s, dosage_range, num_strata):
    """Vectorised stratum_index over an array of dosages."""
    s = np.asarray(s, dtype=np.float64)
    low, high = dosage_range.low, dosage_range.high
    if np.any(s < low) or np.any(s > high):
        bad = s[(s < low) | (s > high)][0]
        raise DosageError(f"dosage {bad} outside [{low}, {high}]")
    idx = np.floor(num_strata * (s - low) / (high - low)).astype(np.int64)
    return np.minimum(idx, num_strata - 1)


class DosageHead:
    """Head stack for one (treatment, stratum) cell.

    ``head_depth`` ReLU layers plus a linear output unit. The dosage column
    joins the first layer's input; with ``repeat_dosage`` it also joins the
    input of every subsequent hidden layer (the linear output layer never
    sees it directly).
    """

    def __init__(self, in_dim, width, depth, repeat_dosage, rng):
        self.repeat_dosage = repeat_dosage
        layers = [DenseLayer(in_dim + 1, width, activation="relu", rng=rng)]
        for _ in range(depth - 1):
            hidden_in = width + 1 if repeat_dosage else width
            layers.append(DenseLayer(hidden_in, width, activation="relu", rng=rng))
        layers.append(DenseLayer(width, 1, activation="linear", rng=rng))
        self.layers = layers
        self._cache = None

    def forward(self, h, s, dropout=None, rng=None, training=False):
        """h: (n, in_dim) representations, s: (n,) dosages -> (n,) outcomes."""
        s_col = np.asarray(s, dtype=np.float64).reshape(-1, 1)
        x = np.concatenate([h, s_col], axis=1)
        append_mask = []  # whether the dosage column was appended before each layer
        masks = []
        n_hidden = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            appended = i == 0 or (self.repeat_dosage and i < n_hidden)
            append_mask.append(appended)
            a = layer.forward(x)
            if training and dropout is not None and i < n_hidden:
                a, mask = dropout_forward(a, dropout, rng, training=True)
            else:
                mask = None
            masks.append(mask)
            if i + 1 < len(self.layers):
                nxt_appended = self.repeat_dosage and (i + 1) < n_hidden
                x = np.concatenate([a, s_col], axis=1) if nxt_appended else a
        self._cache = (append_mask, masks)
        return a[:, 0]

    def backward(self, grad_output):
        """grad_output: (n,) -> gradient w.r.t. the representation input h."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        append_mask, masks = self._cache
        g = np.asarray(grad_output, dtype=np.float64).reshape(-1, 1)
        for i in range(len(self.layers) - 1, -1, -1):
            if masks[i] is not None:
                g = g * masks[i]
            g = self.layers[i].backward(g)
            if append_mask[i]:
                g = g[:, :-1]  # drop the dosage column's gradient
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


class DRNet:
    """Shared base layers, k treatment stacks, k*E dosage heads."""

    kind = "drnet"

    def __init__(self, config: DRNetConfig, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.config = config
        c = config
        self.base = LayerStack(
            [
                DenseLayer(
                    c.input_dim if i == 0 else c.base_width,
                    c.base_width,
                    activation="relu",
                    rng=rng,
                )
                for i in range(c.base_depth)
            ]
        )
        self.treatments = [
            LayerStack(
                [
                    DenseLayer(
                        c.base_width if i == 0 else c.treatment_width,
                        c.treatment_width,
                        activation="relu",
                        rng=rng,
                    )
                    for i in range(c.treatment_depth)
                ]
            )
            for _ in range(c.num_treatments)
        ]
        self.heads = [
            [
                DosageHead(c.treatment_width, c.head_width, c.head_depth, c.repeat_dosage, rng)
                for _ in range(c.num_strata)
            ]
            for _ in range(c.num_treatments)
        ]

    # ------------------------------------------------------------------ predict

    def _check_treatment(self, t):
        if not 0 <= t < self.config.num_treatments:
            raise ValueError(f"treatment {t} outside [0, {self.config.num_treatments})")

    def predict(self, X, t, s):
        """Outcomes for all rows of X under treatment t at a single dosage s."""
        self._check_treatment(t)
        rng_t = self.config.dosage_ranges[t]
        e = stratum_index(float(s), rng_t, self.config.num_strata)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        h = self.base.forward(X)
        h = self.treatments[t].forward(h)
        return self.heads[t][e].forward(h, np.full(X.shape[0], float(s)))

    def predict_each(self, X, t, s):
        """Outcomes for rows of X under treatment t with per-row dosages s."""
        self._check_treatment(t)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        s = np.asarray(s, dtype=np.float64)
        strata = stratum_indices(s, self.config.dosage_ranges[t], self.config.num_strata)
        h = self.treatments[t].forward(self.base.forward(X))
        out = np.empty(X.shape[0])
        for e in np.unique(strata):
            idx = np.where(strata == e)[0]
            out[idx] = self.heads[t][int(e)].forward(h[idx], s[idx])
        return out

    def predict_factual(self, X, t, s):
        """Outcomes at per-row (treatment, dosage) pairs."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        t = np.asarray(t, dtype=np.int64)
        s = np.asarray(s, dtype=np.float64)
        h = self.base.forward(X)
        out = np.empty(X.shape[0])
        for tt in np.unique(t):
            self._check_treatment(int(tt))
            rows = np.where(t == tt)[0]
            ht = self.treatments[int(tt)].forward(h[rows])
            strata = stratum_indices(
                s[rows], self.config.dosage_ranges[int(tt)], self.config.num_strata
            )
            for e in np.unique(strata):
                sub = np.where(strata == e)[0]
                out[rows[sub]] = self.heads[int(tt)][int(e)].forward(ht[sub], s[rows[sub]])
        return out

    # ------------------------------------------------------------------ training

    def _route(self, t, s):
        """Group sample indices by (treatment, stratum), deterministic order."""
        groups = {}
        for tt in np.unique(t):
            rows = np.where(t == tt)[0]
            strata = stratum_indices(
                s[rows], self.config.dosage_ranges[int(tt)], self.config.num_strata
            )
            for e in np.unique(strata):
                groups[(int(tt), int(e))] = rows[strata == e]
        return dict(sorted(groups.items()))

    def train_step(self, batch, optimizer, rng, regularizer=None, dropout=None):
        """One optimisation step on a factual batch (X, t, s, y).

        Returns the factual MSE. Gradient reaches the base layers, plus only
        the treatment stacks and heads that received samples; every other
        parameter (and its optimiser state) is untouched.
        """
        X, t, s, y = batch
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        t = np.asarray(t, dtype=np.int64)
        s = np.asarray(s, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.shape[0] == 0:
            raise ValueError("empty training batch")

        rates = None
        if regularizer is not None:
            rates = regularizer.dropout_rates(X)
        base_drop = rates if rates is not None else dropout
        n = X.shape[0]

        groups = self._route(t, s)
        involved = {id(self.base): self.base}
        for tt, e in groups:
            involved[id(self.treatments[tt])] = self.treatments[tt]
            involved[id(self.heads[tt][e])] = self.heads[tt][e]
        for stack in involved.values():
            stack.zero_grad()

        base_out = self.base.forward(
            X, dropout=base_drop, dropout_output=base_drop is not None, rng=rng, training=True
        )
        preds = np.empty(n)
        d_base = np.zeros_like(base_out)
        for (tt, e), rows in groups.items():
            stack = self.treatments[tt]
            head = self.heads[tt][e]
            grp_drop = base_drop[rows] if isinstance(base_drop, np.ndarray) else base_drop
            h = stack.forward(
                base_out[rows],
                dropout=grp_drop,
                dropout_output=grp_drop is not None,
                rng=rng,
                training=True,
            )
            yhat = head.forward(h, s[rows], dropout=dropout, rng=rng, training=True)
            preds[rows] = yhat
            dpred = (2.0 / n) * (yhat - y[rows])
            dh = head.backward(dpred)
            d_base[rows] = stack.backward(dh)

        loss = float(np.mean((preds - y) ** 2))

        if regularizer is not None:
            pen_grad = regularizer.penalty_gradient(base_out, t)
            if pen_grad is not None:
                d_base += pen_grad

        self.base.backward(d_base)
        params = []
        for stack in involved.values():
            params.extend(stack.parameters())
        optimizer.step(params)
        return loss

    # ------------------------------------------------------------------ misc

    def stacks(self):
        yield self.base
        yield from self.treatments
        for per_t in self.heads:
            yield from per_t

    def parameters(self):
        out = []
        for stack in self.stacks():
            out.extend(stack.parameters())
        return out

    def parameter_count(self):
        return sum(p.size for p, _ in self.parameters())

    def parameter_arrays(self):
        return [p for p, _ in self.parameters()]

    def to_dict(self):
        cfg = asdict(self.config)
        cfg["dosage_ranges"] = [[r.low, r.high] for r in self.config.dosage_ranges]
        return {
            "format": MODEL_FORMAT,
            "kind": self.kind,
            "config": cfg,
            "params": [p.ravel().tolist() for p in self.parameter_arrays()],
        }

    @classmethod
    def from_dict(cls, payload):
        cfg = dict(payload["config"])
        cfg["dosage_ranges"] = [DosageRange(*r) for r in cfg["dosage_ranges"]]
        model = cls(DRNetConfig(**cfg), rng=np.random.default_rng(0))
        _load_params(model, payload["params"])
        return model


@dataclass
class MLPConfig:
    input_dim: int
    num_treatments: int
    depth: int = 3
    width: int = 48
    dosage_ranges: list = field(default_factory=list)

    def __post_init__(self):
        if self.num_treatments < 2:
            raise ValueError(f"need at least 2 treatments, got {self.num_treatments}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not self.dosage_ranges:
            self.dosage_ranges = [DosageRange(1e-3, 1.0) for _ in range(self.num_treatments)]
        self.dosage_ranges = [
            r if isinstance(r, DosageRange) else DosageRange(*r) for r in self.dosage_ranges
        ]


class MLPModel:
    """Plain multi-layer perceptron on (covariates, one-hot treatment, dosage)."""

    kind = "mlp"

    def __init__(self, config: MLPConfig, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.config = config
        c = config
        in_dim = c.input_dim + c.num_treatments + 1
        layers = [
            DenseLayer(in_dim if i == 0 else c.width, c.width, activation="relu", rng=rng)
            for i in range(c.depth)
        ]
        layers.append(DenseLayer(c.width, 1, activation="linear", rng=rng))
        self.stack = LayerStack(layers)

    def _inputs(self, X, t, s):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        onehot = np.zeros((n, self.config.num_treatments))
        t = np.asarray(t, dtype=np.int64)
        if t.ndim == 0:
            t = np.full(n, int(t))
        if np.any(t < 0) or np.any(t >= self.config.num_treatments):
            raise ValueError(f"treatment index outside [0, {self.config.num_treatments})")
        onehot[np.arange(n), t] = 1.0
        s = np.asarray(s, dtype=np.float64)
        s_col = np.full((n, 1), float(s)) if s.ndim == 0 else s.reshape(n, 1)
        return np.concatenate([X, onehot, s_col], axis=1)

    def predict(self, X, t, s):
        return self.stack.forward(self._inputs(X, t, s))[:, 0]

    predict_each = predict

    def predict_factual(self, X, t, s):
        return self.stack.forward(self._inputs(X, t, s))[:, 0]

    def train_step(self, batch, optimizer, rng, regularizer=None, dropout=None):
        X, t, s, y = batch
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] == 0:
            raise ValueError("empty training batch")
        rates = None
        if regularizer is not None:
            rates = regularizer.dropout_rates(X)
        drop = rates if rates is not None else dropout
        self.stack.zero_grad()
        pred = self.stack.forward(
            self._inputs(X, t, s), dropout=drop, rng=rng, training=True
        )[:, 0]
        loss, grad = mse_loss(pred, np.asarray(y, dtype=np.float64))
        self.stack.backward(grad[:, None])
        optimizer.step(self.stack.parameters())
        return loss

    def parameters(self):
        return self.stack.parameters()

    def parameter_count(self):
        return self.stack.parameter_count()

    def parameter_arrays(self):
        return [p for p, _ in self.parameters()]

    def to_dict(self):
        cfg = asdict(self.config)
        cfg["dosage_ranges"] = [[r.low, r.high] for r in self.config.dosage_ranges]
        return {
            "format": MODEL_FORMAT,
            "kind": self.kind,
            "config": cfg,
            "params": [p.ravel().tolist() for p in self.parameter_arrays()],
        }

    @classmethod
    def from_dict(cls, payload):
        cfg = dict(payload["config"])
        cfg["dosage_ranges"] = [DosageRange(*r) for r in cfg["dosage_ranges"]]
        model = cls(MLPConfig(**cfg), rng=np.random.default_rng(0))
        _load_params(model, payload["params"])
        return model


def build_tarnet(config: DRNetConfig, rng=None):
    """TARNET: the E=1, no-repeat degenerate DRNet (dosage fed once per head)."""
    import dataclasses

    cfg = dataclasses.replace(config, num_strata=1, repeat_dosage=False)
    model = DRNet(cfg, rng=rng)
    model.kind = "tarnet"
    return model


def build_baseline(kind, config, rng=None):
    """Baseline factory: ``mlp`` or ``tarnet`` sharing the predict interface."""
    if kind == "tarnet":
        return build_tarnet(config, rng=rng)
    if kind == "mlp":
        mlp_cfg = MLPConfig(
            input_dim=config.input_dim,
            num_treatments=config.num_treatments,
            depth=config.base_depth + config.treatment_depth + config.head_depth,
            width=config.base_width,
            dosage_ranges=list(config.dosage_ranges),
        )
        return MLPModel(mlp_cfg, rng=rng)
    raise ValueError(f"unknown baseline kind {kind!r}")


def _load_params(model, flats):
    arrays = model.parameter_arrays()
    if len(flats) != len(arrays):
        raise ValueError(f"payload has {len(flats)} arrays, model expects {len(arrays)}")
    for arr, flat in zip(arrays, flats):
        vals = np.asarray(flat, dtype=np.float64)
        if vals.size != arr.size:
            raise ValueError(f"array size {vals.size} does not match {arr.size}")
        arr[...] = vals.reshape(arr.shape)


def save_model(model, path):
    """Serialise config + flat parameter arrays as versioned JSON."""
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {payload.get('format')!r}")
    kind = payload["kind"]
    if kind in ("drnet", "tarnet"):
        model = DRNet.from_dict(payload)
        model.kind = kind
        return model
    if kind == "mlp":
        return MLPModel.from_dict(payload)
    raise ValueError(f"unknown model kind {kind!r}")


def copy_parameters(src, dst):
    """Copy parameter values between models of identical shape."""
    s_arrays, d_arrays = src.parameter_arrays(), dst.parameter_arrays()
    if len(s_arrays) != len(d_arrays):
        raise ValueError("models have different parameter structure")
    for a, b in zip(s_arrays, d_arrays):
        if a.shape != b.shape:
            raise ValueError(f"parameter shape mismatch: {a.shape} vs {b.shape}")
        b[...] = a


def fit(
    model,
    train_data,
    val_data=None,
    epochs=100,
    batch_size=64,
    learning_rate=1e-3,
    dropout=None,
    regularizer=None,
    seed=0,
    patience=15,
):
    """Minibatch training with optional early stopping on validation factual MSE.

    ``train_data``/``val_data`` are (X, t, s, y) tuples. Returns a history
    dict. When ``val_data`` is given, the parameters of the best validation
    epoch are restored at the end.
    """
    rng = np.random.default_rng(seed)
    opt = Adam(learning_rate=learning_rate)
    if regularizer is not None:
        train_data = regularizer.prepare_training_set(train_data)
    X, t, s, y = train_data
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    history = {"train_loss": [], "val_mse": []}
    best_val = np.inf
    best_params = None
    bad_epochs = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            rows = order[start : start + batch_size]
            batch = (X[rows], t[rows], s[rows], y[rows])
            if regularizer is not None:
                batch = regularizer.prepare_batch(batch)
            losses.append(
                model.train_step(batch, opt, rng, regularizer=regularizer, dropout=dropout)
            )
        history["train_loss"].append(float(np.mean(losses)))
        if val_data is not None:
            vX, vt, vs, vy = val_data
            val_pred = model.predict_factual(vX, vt, vs)
            val_mse = float(np.mean((val_pred - vy) ** 2))
            history["val_mse"].append(val_mse)
            if val_mse < best_val:
                best_val = val_mse
                best_params = [p.copy() for p in model.parameter_arrays()]
                bad_epochs = 0
            else:
                bad_epochs += 1
                if patience is not None and bad_epochs >= patience:
                    break
    if best_params is not None:
        for p, best in zip(model.parameter_arrays(), best_params):
            p[...] = best
    return history
