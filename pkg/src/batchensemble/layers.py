"""BatchEnsemble dense layer, plain dense and dropout layers, activations.

All layers share one calling convention used by :class:`batchensemble.training.Model`:

    Y, cache = layer.forward(X, assign, rng=None, stochastic=False)
    grads, dX = layer.backward(dY, cache)

``assign`` holds the ensemble member index of every row of ``X``; plain layers
ignore it. ``grads`` maps parameter names to arrays shaped like ``layer.params``.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import as_matrix, outer, sign_vector
from .errors import ArgumentError, MemberIndexError, ShapeError, StateError

ACTIVATIONS = ("relu", "identity")


def activate(A, kind):
    if kind == "relu":
        return np.maximum(A, 0.0)
    if kind == "identity":
        return A
    raise ArgumentError(f"unknown activation {kind!r}")


def activation_grad(dY, A, kind):
    if kind == "relu":
        return dY * (A > 0.0)
    if kind == "identity":
        return dY
    raise ArgumentError(f"unknown activation {kind!r}")


def slow_weight_init(m, n, rng):
    bound = np.sqrt(6.0 / m)
    return rng.uniform(-bound, bound, size=(m, n))


@dataclass
class ForwardCache:
    owner: int
    X: np.ndarray
    U: np.ndarray
    V: np.ndarray
    A: np.ndarray
    assign: np.ndarray


class BatchEnsembleLayer:
    """Shared slow weight ``W`` (m x n) modulated per member by ``outer(r[i], s[i])``.

    Parameters live in ``self.params``: ``W`` (m, n), ``r`` (M, m), ``s`` (M, n)
    and one bias row per member in ``bias`` (M, n).
    """

    kind = "batch_ensemble"

    def __init__(self, W, r, s, bias, activation="relu"):
        W = as_matrix(W, "W")
        r = as_matrix(r, "r")
        s = as_matrix(s, "s")
        bias = as_matrix(bias, "bias")
        m, n = W.shape
        M = r.shape[0]
        if M < 1:
            raise ShapeError("ensemble size must be >= 1")
        if r.shape != (M, m) or s.shape != (M, n) or bias.shape != (M, n):
            raise ShapeError(
                f"fast weights inconsistent with W {W.shape}: r {r.shape}, s {s.shape}, bias {bias.shape}")
        if activation not in ACTIVATIONS:
            raise ArgumentError(f"unknown activation {activation!r}")
        self.params = {"W": W.copy(), "r": r.copy(), "s": s.copy(), "bias": bias.copy()}
        self.activation = activation

    @classmethod
    def initialize(cls, m, n, M, rng, activation="relu", fast_init="sign", fast_std=0.5):
        """Fan-in uniform slow weight, zero biases, fast weights by ``fast_init``.

        ``fast_init`` is ``"sign"`` (random +-1), ``"gaussian"`` (mean 1, ``fast_std``)
        or ``"ones"``.
        """
        W = slow_weight_init(m, n, rng.child(0))
        if fast_init == "sign":
            r = np.stack([sign_vector(m, rng.child(1, i)) for i in range(M)])
            s = np.stack([sign_vector(n, rng.child(2, i)) for i in range(M)])
        elif fast_init == "gaussian":
            r = np.stack([rng.child(1, i).normal(1.0, fast_std, size=m) for i in range(M)])
            s = np.stack([rng.child(2, i).normal(1.0, fast_std, size=n) for i in range(M)])
        elif fast_init == "ones":
            r = np.ones((M, m))
            s = np.ones((M, n))
        else:
            raise ArgumentError(f"unknown fast_init {fast_init!r}")
        return cls(W, r, s, np.zeros((M, n)), activation)

    @property
    def W(self):
        return self.params["W"]

    @property
    def fast_r(self):
        return self.params["r"]

    @property
    def fast_s(self):
        return self.params["s"]

    @property
    def bias(self):
        return self.params["bias"]

    @property
    def in_dim(self):
        return self.W.shape[0]

    @property
    def out_dim(self):
        return self.W.shape[1]

    @property
    def ensemble_size(self):
        return self.fast_r.shape[0]

    @property
    def n_params(self):
        m, n = self.W.shape
        return m * n + self.ensemble_size * (m + 2 * n)

    def member_weight(self, i):
        """Explicit ``W o outer(r_i, s_i)``. Reference path only; training never calls it."""
        if not 0 <= i < self.ensemble_size:
            raise MemberIndexError(f"member {i} out of range for ensemble size {self.ensemble_size}")
        return self.W * outer(self.fast_r[i], self.fast_s[i])

    def forward(self, X, assign, rng=None, stochastic=False):
        Y, cache = be_forward(self, X, assign)
        return Y, cache

    def backward(self, dY, cache):
        G = activation_grad(dY, cache.A, self.activation)
        g = be_backward(self, G, cache)
        dX = g.pop("X")
        return g, dX


def _check_assign(assign, n_rows, M):
    assign = np.asarray(assign)
    if assign.shape != (n_rows,):
        raise ShapeError(f"assignment has shape {assign.shape}, expected ({n_rows},)")
    if n_rows and (assign.min() < 0 or assign.max() >= M):
        raise MemberIndexError(f"assignment indices must lie in [0, {M})")
    return assign.astype(np.int64)


def be_forward(layer, X, assign):
    """Vectorized forward ``act(((X o R) W) o S + bias)`` over member-assigned rows."""
    X = as_matrix(X, "X")
    if X.shape[1] != layer.in_dim:
        raise ShapeError(f"input has shape {X.shape}, layer expects {layer.in_dim} columns")
    assign = _check_assign(assign, X.shape[0], layer.ensemble_size)
    R = kernels.gather_rows(layer.fast_r, assign)
    S = kernels.gather_rows(layer.fast_s, assign)
    bias_rows = kernels.gather_rows(layer.bias, assign)
    U = X * R
    V = U @ layer.W
    A = V * S + bias_rows
    Y = activate(A, layer.activation)
    return Y, ForwardCache(owner=id(layer), X=X, U=U, V=V, A=A, assign=assign)


def be_backward(layer, G, cache):
    """Gradients of a loss w.r.t. W, r, s, bias and X given ``G`` = dL/dA (pre-activation)."""
    if not isinstance(cache, ForwardCache) or cache.owner != id(layer):
        raise StateError("forward cache was not produced by this layer")
    G = as_matrix(G, "G")
    B = cache.X.shape[0]
    if G.shape != (B, layer.out_dim) or cache.U.shape != (B, layer.in_dim):
        raise StateError(f"gradient {G.shape} does not match cached forward pass over {B} rows")
    M = layer.ensemble_size
    assign = cache.assign
    R = kernels.gather_rows(layer.fast_r, assign)
    S = kernels.gather_rows(layer.fast_s, assign)
    GS = G * S
    dU = GS @ layer.W.T
    return {
        "W": cache.U.T @ GS,
        "r": kernels.segment_sum(dU * cache.X, assign, M),
        "s": kernels.segment_sum(G * cache.V, assign, M),
        "bias": kernels.segment_sum(G, assign, M),
        "X": dU * R,
    }


class DenseLayer:
    """Plain affine layer ``act(X W + b)``."""

    kind = "dense"

    def __init__(self, W, b, activation="relu"):
        W = as_matrix(W, "W")
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (W.shape[1],):
            raise ShapeError(f"bias shape {b.shape} does not match W {W.shape}")
        if activation not in ACTIVATIONS:
            raise ArgumentError(f"unknown activation {activation!r}")
        self.params = {"W": W.copy(), "b": b.copy()}
        self.activation = activation

    @classmethod
    def initialize(cls, m, n, rng, activation="relu"):
        # child(0) matches BatchEnsembleLayer so equal seeds give equal slow weights
        return cls(slow_weight_init(m, n, rng.child(0)), np.zeros(n), activation)

    @property
    def in_dim(self):
        return self.params["W"].shape[0]

    @property
    def out_dim(self):
        return self.params["W"].shape[1]

    @property
    def n_params(self):
        m, n = self.params["W"].shape
        return m * n + n

    def forward(self, X, assign=None, rng=None, stochastic=False):
        X = as_matrix(X, "X")
        if X.shape[1] != self.in_dim:
            raise ShapeError(f"input has shape {X.shape}, layer expects {self.in_dim} columns")
        A = X @ self.params["W"] + self.params["b"]
        return activate(A, self.activation), ForwardCache(id(self), X, X, A, A, None)

    def backward(self, dY, cache):
        if cache.owner != id(self):
            raise StateError("forward cache was not produced by this layer")
        G = activation_grad(dY, cache.A, self.activation)
        return {"W": cache.X.T @ G, "b": G.sum(axis=0)}, G @ self.params["W"].T


class DropoutLayer:
    """Inverted dropout. Active when training or when ``stochastic`` sampling is requested."""

    kind = "dropout"

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ArgumentError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = float(rate)
        self.params = {}

    n_params = 0

    def forward(self, X, assign=None, rng=None, stochastic=False):
        X = as_matrix(X, "X")
        Y, mask = dropout_forward(self, X, rng, stochastic)
        return Y, mask

    def backward(self, dY, mask):
        if mask is None:
            return {}, dY
        return {}, dY * mask / (1.0 - self.rate)


def dropout_forward(layer, X, rng, training):
    """Returns ``(Y, mask)``; ``mask`` is None on the deterministic path."""
    if not training:
        return X, None
    if layer.rate == 0.0:
        return X, np.ones_like(X)
    if rng is None:
        raise ArgumentError("stochastic dropout needs an rng")
    mask = (rng.random(X.shape) >= layer.rate).astype(np.float64)
    return X * mask / (1.0 - layer.rate), mask
