"""Detector networks: a layer stack, a sigmoid head and the n + 1 output
convention (per-node probabilities followed by the grid-level score)."""

from __future__ import annotations

import numpy as np

from .layers import ArmaLayer, ChebLayer, Layer, Linear, NodeDense, ReLU

P_CLAMP = 1e-7
FAMILIES = ("arma", "cheb", "mlp")


def sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(pred, label) -> float:
    """Mean binary cross-entropy over all n + 1 terms (and the batch)."""
    p = np.clip(np.asarray(pred, float), P_CLAMP, 1 - P_CLAMP)
    y = np.asarray(label, float)
    if p.shape != y.shape:
        raise ValueError(f"prediction shape {p.shape} does not match label shape {y.shape}")
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def bce_grad(pred, label) -> np.ndarray:
    """d bce_loss / d pred, zero where the clamp is active."""
    p = np.asarray(pred, float)
    y = np.asarray(label, float)
    inside = (p > P_CLAMP) & (p < 1 - P_CLAMP)
    pc = np.clip(p, P_CLAMP, 1 - P_CLAMP)
    g = (-y / pc + (1 - y) / (1 - pc)) / p.size
    return np.where(inside, g, 0.0)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class DetectorModel:
    """Layer stack plus output head.

    ``head="max"``: the last layer emits one logit per node; node
    probabilities are their sigmoids and the grid score is their maximum
    (ties go to the lowest node index).
    ``head="direct"``: the last layer emits n + 1 logits, all passed
    through the sigmoid.
    """

    def __init__(self, layers: list[Layer], n: int, head: str = "max", family: str = "", meta: dict | None = None):
        if head not in ("max", "direct"):
            raise ValueError(f"unknown head {head!r}")
        self.layers = list(layers)
        self.n = int(n)
        self.head = head
        self.family = family
        self.meta = dict(meta or {})

    # parameters ---------------------------------------------------------

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params().items():
                out[f"{i}.{layer.kind}.{k}"] = v
        return out

    def named_grads(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            params = layer.params()
            for k in params:
                out[f"{i}.{layer.kind}.{k}"] = layer.grads[k]
        return out

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in self.named_params().items():
            if name not in values:
                raise KeyError(f"missing parameter {name}")
            v = np.asarray(values[name], float)
            if v.shape != arr.shape:
                raise ValueError(f"{name}: shape {v.shape} != {arr.shape}")
            arr[...] = v

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_params().items()}

    def n_params(self) -> int:
        return int(sum(v.size for v in self.named_params().values()))

    def descriptor(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "head": self.head,
            "layers": [layer.config() for layer in self.layers],
            "meta": self.meta,
        }

    # computation --------------------------------------------------------

    def forward(self, x) -> np.ndarray:
        """Return (B, n + 1) probabilities for a (B, n, c) batch."""
        h = np.asarray(x, float)
        if h.ndim == 2:
            h = h[None]
        for layer in self.layers:
            h = layer.forward(h)
        if self.head == "max":
            self._h_ndim = h.ndim
            z = h[:, :, 0] if h.ndim == 3 else h
            if z.shape[1] != self.n:
                raise ValueError(f"head expects {self.n} node logits, got {z.shape[1]}")
            p = sigmoid(z)
            self._arg = np.argmax(p, axis=1)
            self._p = p
            return np.concatenate([p, p[np.arange(len(p)), self._arg][:, None]], axis=1)
        if h.shape[1] != self.n + 1:
            raise ValueError(f"head expects {self.n + 1} logits, got {h.shape[1]}")
        self._p = sigmoid(h)
        return self._p

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        """Back-propagate d loss / d output; fills every layer's ``grads``."""
        if self.head == "max":
            dp = d_out[:, : self.n].copy()
            dp[np.arange(len(dp)), self._arg] += d_out[:, self.n]
            g = dp * self._p * (1 - self._p)
            if self._h_ndim == 3:
                g = g[:, :, None]
        else:
            g = d_out * self._p * (1 - self._p)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def loss_and_grad(self, x, y):
        """Forward + backward on one batch; returns the mean BCE loss."""
        p = self.forward(x)
        loss = bce_loss(p, y)
        self.backward(bce_grad(p, y))
        return loss

    def predict_proba(self, x, batch_size: int = 1024) -> np.ndarray:
        x = np.asarray(x, float)
        if x.ndim == 2:
            x = x[None]
        return np.concatenate([self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)])


def model_forward(model: DetectorModel, x):
    """Single-sample convenience: ``(node probabilities, grid score)``."""
    p = model.forward(np.asarray(x, float)[None] if np.ndim(x) == 2 else x)
    return p[0, : model.n], float(p[0, model.n])


def hidden_widths(layers: int, units: int) -> list[int]:
    """Output widths of the graph layers; the last one has a single channel."""
    if layers < 1:
        raise ValueError("need at least one hidden layer")
    return [units] * (layers - 1) + [1]


def build_gnn(
    family: str,
    operator: np.ndarray,
    n: int,
    *,
    layers: int = 2,
    units: int = 16,
    K: int = 2,
    T: int = 4,
    c_in: int = 2,
    seed: int = 0,
    share_weights: bool = True,
    iter_activation: bool = False,
) -> DetectorModel:
    """Graph layers (ReLU after each) -> node-mixing dense layer -> max head.

    ``operator`` is the modified Laplacian for ``family="arma"`` and the
    scaled Laplacian for ``family="cheb"``.
    """
    rng = np.random.default_rng(seed)
    stack: list[Layer] = []
    c = c_in
    for w in hidden_widths(layers, units):
        if family == "arma":
            stack.append(
                ArmaLayer(operator, c, w, K, T, rng=rng, share_weights=share_weights, iter_activation=iter_activation)
            )
        elif family == "cheb":
            stack.append(ChebLayer(operator, c, w, K, rng=rng))
        else:
            raise ValueError(f"unknown graph family {family!r}")
        stack.append(ReLU())
        c = w
    stack.append(NodeDense(n, c, rng=rng))
    meta = {"layers": layers, "units": units, "K": K, "c_in": c_in, "seed": seed}
    if family == "arma":
        meta.update(T=T, share_weights=share_weights, iter_activation=iter_activation)
    return DetectorModel(stack, n, head="max", family=family, meta=meta)


def build_mlp(n: int, *, layers: int = 2, units: int = 32, c_in: int = 2, seed: int = 0) -> DetectorModel:
    """Flatten -> ``layers`` ReLU hidden layers of ``units`` -> n + 1 sigmoid outputs."""
    if layers < 1:
        raise ValueError("need at least one hidden layer")
    rng = np.random.default_rng(seed)
    stack: list[Layer] = [Flatten()]
    d = n * c_in
    for _ in range(layers):
        stack += [Linear(d, units, rng=rng), ReLU()]
        d = units
    stack.append(Linear(d, n + 1, rng=rng))
    return DetectorModel(stack, n, head="direct", family="mlp", meta={"layers": layers, "units": units, "c_in": c_in, "seed": seed})
