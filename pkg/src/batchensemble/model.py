"""Layer stacks with an optional table of task heads."""
import copy

import numpy as np

from .core import SeededRng, as_matrix
from .errors import ArgumentError, ConfigError, ShapeError
from .layers import BatchEnsembleLayer, DenseLayer, DropoutLayer


class Model:
    """Ordered layers, optionally followed by one of several per-task heads.

    Parameter keys are ``("layer", index, name)`` for trunk parameters and
    ``("head", head_id, name)`` for head parameters.
    """

    def __init__(self, layers, heads=None):
        self.layers = list(layers)
        self.heads = dict(heads or {})
        self._check_dims()

    def _check_dims(self):
        width = None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, DropoutLayer):
                continue
            if width is not None and layer.in_dim != width:
                raise ShapeError(f"layer {i} expects {layer.in_dim} inputs but receives {width}")
            width = layer.out_dim
        for hid, head in self.heads.items():
            if width is not None and head.in_dim != width:
                raise ShapeError(f"head {hid} expects {head.in_dim} inputs but trunk emits {width}")

    @property
    def ensemble_size(self):
        sizes = {layer.ensemble_size for layer in self.layers if isinstance(layer, BatchEnsembleLayer)}
        if len(sizes) > 1:
            raise ShapeError(f"inconsistent ensemble sizes across layers: {sorted(sizes)}")
        return sizes.pop() if sizes else 1

    @property
    def is_batch_ensemble(self):
        return any(isinstance(layer, BatchEnsembleLayer) for layer in self.layers)

    @property
    def has_dropout(self):
        return any(isinstance(layer, DropoutLayer) for layer in self.layers)

    @property
    def in_dim(self):
        return next(layer.in_dim for layer in self.layers if not isinstance(layer, DropoutLayer))

    def _head(self, head):
        if not self.heads:
            if head is not None:
                raise ArgumentError(f"model has no heads, got head={head!r}")
            return None
        if head is None:
            raise ArgumentError("model has task heads; a head id is required")
        if head not in self.heads:
            raise ArgumentError(f"unknown head {head!r}")
        return self.heads[head]

    def forward(self, X, assign=None, head=None, rng=None, stochastic=False):
        """Returns ``(logits, caches)``. ``assign`` defaults to member 0 for every row."""
        X = as_matrix(X, "X")
        if assign is None:
            assign = np.zeros(X.shape[0], dtype=np.int64)
        caches = []
        h = X
        for i, layer in enumerate(self.layers):
            layer_rng = rng.child(i) if (rng is not None and isinstance(layer, DropoutLayer)) else None
            h, cache = layer.forward(h, assign, rng=layer_rng, stochastic=stochastic)
            caches.append(cache)
        head_layer = self._head(head)
        if head_layer is not None:
            h, cache = head_layer.forward(h)
            caches.append(cache)
        return h, caches

    def backward(self, dlogits, caches, head=None):
        """Gradients keyed like :meth:`param_keys`, plus the input gradient."""
        grads = {}
        d = dlogits
        head_layer = self._head(head)
        n_trunk = len(self.layers)
        if head_layer is not None:
            g, d = head_layer.backward(d, caches[n_trunk])
            for name, val in g.items():
                grads[("head", head, name)] = val
        for i in range(n_trunk - 1, -1, -1):
            g, d = self.layers[i].backward(d, caches[i])
            for name, val in g.items():
                grads[("layer", i, name)] = val
        return grads, d

    def get_layer(self, key):
        where, idx, _ = key
        return self.layers[idx] if where == "layer" else self.heads[idx]

    def param(self, key):
        return self.get_layer(key).params[key[2]]

    def param_keys(self, head=None):
        keys = []
        for i, layer in enumerate(self.layers):
            keys.extend(("layer", i, name) for name in layer.params)
        heads = self.heads if head is None else {head: self.heads[head]}
        for hid, layer in heads.items():
            keys.extend(("head", hid, name) for name in layer.params)
        return keys

    @property
    def n_params(self):
        return sum(layer.n_params for layer in self.layers) + sum(h.n_params for h in self.heads.values())

    def copy(self):
        return copy.deepcopy(self)

    def state(self):
        """Flat ``{key: array copy}`` snapshot of every parameter."""
        return {k: self.param(k).copy() for k in self.param_keys()}


def build_mlp(widths, kind="dense", ensemble_size=1, dropout=0.0, seed=0, rng=None,
              fast_init="sign", fast_std=0.5, head_classes=None, final_activation="identity"):
    """Multi-layer perceptron over ``widths = [in, h1, ..., out]``.

    ``kind`` is ``"dense"`` or ``"batch_ensemble"``. Hidden layers use ReLU; the
    last trunk layer uses ``final_activation``. Dropout (if ``dropout > 0``) follows
    every hidden activation. ``head_classes`` maps head ids to class counts; heads are
    dense layers reading the trunk's output.
    """
    if len(widths) < 2:
        raise ConfigError("an MLP needs at least input and output widths")
    if kind not in ("dense", "batch_ensemble"):
        raise ConfigError(f"unknown layer kind {kind!r}")
    if kind == "dense" and ensemble_size != 1:
        raise ConfigError("dense models have ensemble size 1")
    rng = rng if rng is not None else SeededRng(seed).child("init")
    layers = []
    n_affine = len(widths) - 1
    for j in range(n_affine):
        act = "relu" if j < n_affine - 1 else final_activation
        lrng = rng.child(j)
        if kind == "batch_ensemble":
            layers.append(BatchEnsembleLayer.initialize(widths[j], widths[j + 1], ensemble_size, lrng,
                                                        activation=act, fast_init=fast_init, fast_std=fast_std))
        else:
            layers.append(DenseLayer.initialize(widths[j], widths[j + 1], lrng, activation=act))
        if dropout > 0.0 and j < n_affine - 1:
            layers.append(DropoutLayer(dropout))
    heads = {}
    for hid, n_cls in (head_classes or {}).items():
        heads[hid] = DenseLayer.initialize(widths[-1], n_cls, rng.child(1000, hid), activation="identity")
    return Model(layers, heads)
