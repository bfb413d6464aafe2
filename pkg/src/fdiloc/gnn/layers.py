"""Graph-filter layers with explicit reverse-mode gradients.

All batched tensors are (B, n, c): samples, nodes, channels. Graph
operators are dense (n, n) matrices applied as ``L @ Y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, shape if shape is not None else (fan_in, fan_out))


def _check_x(x, n, c, who):
    if x.ndim != 3 or x.shape[1] != n or x.shape[2] != c:
        raise ValueError(f"{who}: expected input (B, {n}, {c}), got {x.shape}")


def _apply(op: np.ndarray, y: np.ndarray) -> np.ndarray:
    # one (n, n) @ (n, B*c) product instead of B small ones
    b, n, c = y.shape
    out = op @ y.transpose(1, 0, 2).reshape(n, b * c)
    return out.reshape(n, b, c).transpose(1, 0, 2)


# -- ARMA_1 -----------------------------------------------------------------


@dataclass(eq=False)
class Arma1Params:
    """One recursive block. Shared weights use 2-D ``alpha`` / ``beta`` and a
    1-D ``theta``; per-iteration weights add a leading axis (T for alpha,
    T + 1 for beta and theta)."""

    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    iterations: int

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("ARMA iterations must be >= 1")

    @property
    def shared(self) -> bool:
        return self.alpha.ndim == 2

    @property
    def c_in(self) -> int:
        return self.beta.shape[-2]

    @property
    def c_out(self) -> int:
        return self.beta.shape[-1]

    def _a(self, t):
        return self.alpha if self.shared else self.alpha[t]

    def _b(self, t):
        return (self.beta, self.theta) if self.shared else (self.beta[t], self.theta[t])


def arma1_forward(params: Arma1Params, l_mod: np.ndarray, x: np.ndarray, iter_activation: bool = False):
    """Unrolled ``Y0 = X beta + theta``, ``Y_{t+1} = L Y_t alpha + X beta + theta``.

    Returns ``(Y_T, cache)``. With ``iter_activation`` a ReLU follows every
    update.
    """
    _check_x(x, l_mod.shape[0], params.c_in, "arma1_forward")
    if params.shared:
        xb = x @ params.beta + params.theta
        drive = [xb] * (params.iterations + 1)
    else:
        drive = [x @ params.beta[t] + params.theta[t] for t in range(params.iterations + 1)]
    ys = [drive[0]]
    lys = []
    masks = []
    for t in range(params.iterations):
        ly = _apply(l_mod, ys[-1])
        z = ly @ params._a(t) + drive[t + 1]
        if iter_activation:
            m = z > 0
            z = z * m
            masks.append(m)
        lys.append(ly)
        ys.append(z)
    return ys[-1], (x, lys, masks)


def arma1_backward(params: Arma1Params, l_mod: np.ndarray, cache, dy: np.ndarray):
    """Gradients of a scalar loss through :func:`arma1_forward`.

    Returns ``(dx, {"alpha", "beta", "theta"})`` with shapes matching params.
    """
    x, lys, masks = cache
    T = params.iterations
    d_alpha = np.zeros_like(params.alpha)
    d_drive = [None] * (T + 1)
    g = dy
    lt = l_mod.T
    for t in range(T - 1, -1, -1):
        if masks:
            g = g * masks[t]
        d_drive[t + 1] = g
        ga = np.einsum("bnc,bnd->cd", lys[t], g)
        if params.shared:
            d_alpha += ga
        else:
            d_alpha[t] = ga
        g = _apply(lt, g @ params._a(t).T)
    d_drive[0] = g
    if params.shared:
        dxb = sum(d_drive[1:], d_drive[0])
        d_beta = np.einsum("bni,bno->io", x, dxb)
        d_theta = dxb.sum(axis=(0, 1))
        dx = dxb @ params.beta.T
    else:
        d_beta = np.stack([np.einsum("bni,bno->io", x, d) for d in d_drive])
        d_theta = np.stack([d.sum(axis=(0, 1)) for d in d_drive])
        dx = sum(d @ params.beta[t].T for t, d in enumerate(d_drive))
    return dx, {"alpha": d_alpha, "beta": d_beta, "theta": d_theta}


# -- ARMA_K -----------------------------------------------------------------


@dataclass(eq=False)
class ArmaKParams:
    stacks: list[Arma1Params]

    def __post_init__(self):
        if not self.stacks:
            raise ValueError("ARMA_K needs at least one stack")
        s0 = self.stacks[0]
        for s in self.stacks[1:]:
            if (s.c_in, s.c_out, s.iterations, s.shared) != (s0.c_in, s0.c_out, s0.iterations, s0.shared):
                raise ValueError("ARMA_K stacks must share (c_in, c_out, T)")

    @property
    def K(self) -> int:
        return len(self.stacks)


def armaK_forward(params: ArmaKParams, l_mod, x, iter_activation: bool = False):
    """Mean of the K parallel ARMA_1 outputs."""
    outs, caches = zip(*(arma1_forward(s, l_mod, x, iter_activation) for s in params.stacks))
    y = outs[0].copy()
    for o in outs[1:]:
        y += o
    return y / params.K, caches


def armaK_backward(params: ArmaKParams, l_mod, caches, dy):
    g = dy / params.K
    dx = None
    grads = []
    for s, c in zip(params.stacks, caches):
        d, gr = arma1_backward(s, l_mod, c, g)
        dx = d if dx is None else dx + d
        grads.append(gr)
    return dx, grads


# -- Chebyshev --------------------------------------------------------------


@dataclass(eq=False)
class ChebParams:
    coeffs: np.ndarray  # (K, c_in, c_out)
    bias: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.coeffs.shape[0]


def cheb_basis(l_scaled: np.ndarray, x: np.ndarray, K: int) -> list[np.ndarray]:
    """``[T_0(L) x, ..., T_{K-1}(L) x]`` by the three-term recursion."""
    terms = [x]
    if K > 1:
        terms.append(_apply(l_scaled, x))
    for _ in range(2, K):
        terms.append(2.0 * _apply(l_scaled, terms[-1]) - terms[-2])
    return terms


def cheb_forward(params: ChebParams, l_scaled: np.ndarray, x: np.ndarray):
    _check_x(x, l_scaled.shape[0], params.coeffs.shape[1], "cheb_forward")
    terms = cheb_basis(l_scaled, x, params.K)
    y = sum(t @ w for t, w in zip(terms, params.coeffs))
    if params.bias is not None:
        y = y + params.bias
    return y, terms


def cheb_backward(params: ChebParams, l_scaled: np.ndarray, terms, dy):
    K = params.K
    d_coeffs = np.stack([np.einsum("bni,bno->io", t, dy) for t in terms])
    dt = [dy @ w.T for w in params.coeffs]
    lt = l_scaled.T
    for k in range(K - 1, 1, -1):
        dt[k - 1] = dt[k - 1] + 2.0 * _apply(lt, dt[k])
        dt[k - 2] = dt[k - 2] - dt[k]
    if K > 1:
        dt[0] = dt[0] + _apply(lt, dt[1])
    grads = {"coeffs": d_coeffs}
    if params.bias is not None:
        grads["bias"] = dy.sum(axis=(0, 1))
    return dt[0], grads


# -- layer objects ------------------------------------------------------------


class Layer:
    """A differentiable stage with named parameters.

    ``forward`` caches what ``backward`` needs; ``backward`` returns the
    input gradient and stores parameter gradients in ``self.grads``.
    """

    kind = "layer"

    def __init__(self):
        self.grads: dict[str, np.ndarray] = {}

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def config(self) -> dict:
        return {"kind": self.kind}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class ArmaLayer(Layer):
    """ARMA_K graph filter on the modified Laplacian ``I - L``."""

    kind = "arma"

    def __init__(self, l_mod, c_in, c_out, K=1, T=1, *, rng=None, share_weights=True, iter_activation=False, bias=True):
        super().__init__()
        self.op = np.asarray(l_mod, float)
        self.c_in, self.c_out, self.K, self.T = int(c_in), int(c_out), int(K), int(T)
        self.share_weights = bool(share_weights)
        self.iter_activation = bool(iter_activation)
        self.bias = bool(bias)
        rng = rng if rng is not None else np.random.default_rng(0)
        lead_a = () if share_weights else (self.T,)
        lead_b = () if share_weights else (self.T + 1,)
        self.alpha = np.stack(
            [glorot(rng, c_out, c_out, lead_a + (c_out, c_out)) * (0.5 / self.T) for _ in range(self.K)]
        )
        self.beta = np.stack([glorot(rng, c_in, c_out, lead_b + (c_in, c_out)) for _ in range(self.K)])
        self.theta = np.zeros((self.K,) + lead_b + (self.c_out,))

    def params(self):
        p = {"alpha": self.alpha, "beta": self.beta}
        if self.bias:
            p["theta"] = self.theta
        return p

    def config(self):
        return {
            "kind": self.kind, "c_in": self.c_in, "c_out": self.c_out, "K": self.K, "T": self.T,
            "share_weights": self.share_weights, "iter_activation": self.iter_activation, "bias": self.bias,
        }

    def stack_params(self) -> ArmaKParams:
        return ArmaKParams(
            [Arma1Params(self.alpha[k], self.beta[k], self.theta[k], self.T) for k in range(self.K)]
        )

    def forward(self, x):
        self._params = self.stack_params()
        y, self._cache = armaK_forward(self._params, self.op, x, self.iter_activation)
        return y

    def backward(self, dy):
        dx, grads = armaK_backward(self._params, self.op, self._cache, dy)
        self.grads = {
            "alpha": np.stack([g["alpha"] for g in grads]),
            "beta": np.stack([g["beta"] for g in grads]),
        }
        if self.bias:
            self.grads["theta"] = np.stack([g["theta"] for g in grads])
        return dx


class ChebLayer(Layer):
    """Chebyshev polynomial filter of order ``K - 1`` on the scaled Laplacian."""

    kind = "cheb"

    def __init__(self, l_scaled, c_in, c_out, K=3, *, rng=None, bias=True):
        super().__init__()
        self.op = np.asarray(l_scaled, float)
        self.c_in, self.c_out, self.K = int(c_in), int(c_out), int(K)
        if self.K < 1:
            raise ValueError("Chebyshev order K must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.coeffs = np.stack([glorot(rng, c_in, c_out) for _ in range(self.K)])
        self.bias = np.zeros(self.c_out) if bias else None

    def params(self):
        p = {"coeffs": self.coeffs}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def config(self):
        return {"kind": self.kind, "c_in": self.c_in, "c_out": self.c_out, "K": self.K, "bias": self.bias is not None}

    def forward(self, x):
        self._p = ChebParams(self.coeffs, self.bias)
        y, self._terms = cheb_forward(self._p, self.op, x)
        return y

    def backward(self, dy):
        dx, self.grads = cheb_backward(self._p, self.op, self._terms, dy)
        return dx


class NodeDense(Layer):
    """Affine map from the flattened (n, c) node tensor to n logits."""

    kind = "node_dense"

    def __init__(self, n, c_in, *, rng=None):
        super().__init__()
        self.n, self.c_in = int(n), int(c_in)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = glorot(rng, n * c_in, n, (n, n * c_in))
        self.bias = np.zeros(n)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def config(self):
        return {"kind": self.kind, "n": self.n, "c_in": self.c_in}

    def forward(self, x):
        _check_x(x, self.n, self.c_in, "NodeDense")
        self._flat = x.reshape(x.shape[0], -1)
        return (self._flat @ self.weight.T + self.bias)[:, :, None]

    def backward(self, dy):
        g = dy[:, :, 0]
        self.grads = {"weight": g.T @ self._flat, "bias": g.sum(axis=0)}
        return (g @ self.weight).reshape(-1, self.n, self.c_in)


class Linear(Layer):
    """Plain affine layer on (B, d) inputs."""

    kind = "linear"

    def __init__(self, d_in, d_out, *, rng=None):
        super().__init__()
        self.d_in, self.d_out = int(d_in), int(d_out)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = glorot(rng, d_in, d_out)
        self.bias = np.zeros(d_out)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def config(self):
        return {"kind": self.kind, "d_in": self.d_in, "d_out": self.d_out}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ValueError(f"Linear: expected (B, {self.d_in}), got {x.shape}")
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, dy):
        self.grads = {"weight": self._x.T @ dy, "bias": dy.sum(axis=0)}
        return dy @ self.weight.T
