"""Central finite-difference checks of the analytic gradients."""
import numpy as np

from .core import SeededRng
from .layers import BatchEnsembleLayer, be_backward, be_forward
from .training import decay_gradient, mean_weight_penalty
from .model import Model

EPS = 1e-5
REL_TOL = 1e-6
ABS_FLOOR = 1e-8


def numeric_grad(f, x, eps=EPS):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel_error(analytic, numeric, floor=ABS_FLOOR, rel_tol=REL_TOL):
    """Max over entries of ``|a - n| / max(|a|, |n|, floor / rel_tol)``.

    A value <= ``rel_tol`` means every entry is within ``rel_tol`` relative error or
    within ``floor`` absolute error.
    """
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    if not a.size:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor / rel_tol)
    return float(np.max(np.abs(a - n) / scale))


def random_layer(m, n, M, rng, activation="identity"):
    return BatchEnsembleLayer(rng.child(0).normal(size=(m, n)), rng.child(1).normal(size=(M, m)),
                              rng.child(2).normal(size=(M, n)), rng.child(3).normal(size=(M, n)),
                              activation=activation)


def check_layer(m, n, B, M, seed):
    """Max relative error per gradient group of ``be_backward`` on a random instance.

    The scalar probed is ``sum(C * A)`` for a fixed random ``C``, so ``dL/dA = C``.
    """
    rng = SeededRng(seed)
    layer = random_layer(m, n, M, rng)
    X = rng.child(4).normal(size=(B, m))
    C = rng.child(5).normal(size=(B, n))
    assign = rng.child(6).integers(0, M, size=B)

    def loss():
        _, cache = be_forward(layer, X, assign)
        return float(np.sum(C * cache.A))

    _, cache = be_forward(layer, X, assign)
    g = be_backward(layer, C, cache)
    out = {name: rel_error(g[name], numeric_grad(loss, layer.params[name])) for name in ("W", "r", "s", "bias")}
    out["X"] = rel_error(g["X"], numeric_grad(loss, X))
    return out


def check_decay(m, n, M, lam, mode, seed):
    rng = SeededRng(seed)
    layer = random_layer(m, n, M, rng)
    model = Model([layer])
    g = decay_gradient(model, mode, lam)

    if mode == "mean_weight":
        def penalty():
            return lam * mean_weight_penalty(layer)
    else:
        def penalty():
            return 0.5 * lam * float(np.sum(layer.W ** 2))

    out = {}
    for name in ("W", "r", "s"):
        analytic = g.get(("layer", 0, name), np.zeros_like(layer.params[name]))
        out[name] = rel_error(analytic, numeric_grad(penalty, layer.params[name]))
    return out


def run_suite(n_instances=50, seed=0, max_dim=8, max_batch=8, max_members=4):
    """Random layer and decay checks; returns ``(max_error, per_group_max)``."""
    rng = SeededRng(seed).child(99)
    worst = {}
    for k in range(n_instances):
        r = rng.child(k)
        m, n = (int(v) for v in r.integers(1, max_dim + 1, size=2))
        B = int(r.integers(1, max_batch + 1))
        M = int(r.integers(1, max_members + 1))
        errs = check_layer(m, n, B, M, seed * 100003 + k)
        for mode in ("shared_only", "mean_weight"):
            for name, e in check_decay(m, n, M, 0.37, mode, seed * 100003 + k).items():
                errs[f"decay_{mode}_{name}"] = e
        for name, e in errs.items():
            worst[name] = max(worst.get(name, 0.0), e)
    return max(worst.values()), worst
