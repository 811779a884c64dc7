"""Loss, optimizer, learning-rate schedule, weight decay and the training loop."""
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import SeededRng, log_softmax_rows, softmax_rows
from .errors import ArgumentError, ConfigError, ShapeError, TrainingError
from .layers import BatchEnsembleLayer, DenseLayer

DECAY_MODES = ("shared_only", "mean_weight")


@dataclass
class TrainConfig:
    batch_size: int = 128
    ensemble_size: int = 1
    epochs: int = 10
    base_lr: float = 0.1
    lr_milestones: tuple = (0.5, 0.75)
    lr_factor: float = 0.1
    weight_decay: float = 1e-4
    decay_mode: str = "shared_only"
    momentum: float = 0.9
    seed: int = 0
    extra_iteration_factor: float = 1.5

    def __post_init__(self):
        self.lr_milestones = tuple(float(x) for x in self.lr_milestones)
        self.validate()

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.ensemble_size < 1:
            raise ConfigError(f"ensemble_size must be >= 1, got {self.ensemble_size}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.decay_mode not in DECAY_MODES:
            raise ConfigError(f"decay_mode must be one of {DECAY_MODES}, got {self.decay_mode!r}")
        ms = self.lr_milestones
        if any(not 0.0 < x < 1.0 for x in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"lr_milestones must be strictly increasing inside (0, 1), got {ms}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.extra_iteration_factor < 1.0:
            raise ConfigError("extra_iteration_factor must be >= 1")

    def fingerprint(self):
        return ";".join(f"{k}={v!r}" for k, v in sorted(asdict(self).items()))


def budget_epochs(config, batch_ensemble):
    """Epoch count after the extra-iteration allowance granted to BatchEnsemble runs."""
    if batch_ensemble:
        return int(math.ceil(config.epochs * config.extra_iteration_factor))
    return config.epochs


def assign_subbatches(B, M):
    """Member index per row: ``M`` contiguous blocks of ``B // M`` rows."""
    if M < 1 or B < 0:
        raise ConfigError(f"invalid batch/ensemble sizes B={B}, M={M}")
    if B % M:
        raise ConfigError(f"batch size {B} is not divisible by ensemble size {M}; "
                          f"adjust the batch size to a multiple of {M}")
    return np.repeat(np.arange(M, dtype=np.int64), B // M)


def softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if B and (labels.min() < 0 or labels.max() >= C):
        raise ArgumentError(f"labels must lie in [0, {C})")
    rows = np.arange(B)
    loss = -log_softmax_rows(logits)[rows, labels].mean()
    G = softmax_rows(logits)
    G[rows, labels] -= 1.0
    return float(loss), G / B


def mean_weight_penalty(layer):
    """``0.5 * ||W o mean_i(outer(r_i, s_i))||^2`` for one BatchEnsemble layer."""
    F = layer.fast_r.T @ layer.fast_s / layer.ensemble_size
    return 0.5 * float(np.sum((layer.W * F) ** 2))


def decay_gradient(model, mode, lam):
    """Additive weight-decay gradients keyed like ``model.param_keys()``.

    ``shared_only`` adds ``lam * W`` to every slow/dense weight matrix and leaves fast
    weights and biases alone. ``mean_weight`` differentiates
    ``lam/2 * ||W o (1/M) sum_i r_i s_i^T||^2`` for BatchEnsemble layers (reaching W, r
    and s) and falls back to ``lam * W`` for dense layers.
    """
    if mode not in DECAY_MODES:
        raise ConfigError(f"unknown decay mode {mode!r}")
    out = {}
    if lam == 0:
        return out
    layers = [(("layer", i), layer) for i, layer in enumerate(model.layers)]
    layers += [(("head", hid), layer) for hid, layer in model.heads.items()]
    for (where, idx), layer in layers:
        if isinstance(layer, BatchEnsembleLayer) and mode == "mean_weight":
            M = layer.ensemble_size
            F = layer.fast_r.T @ layer.fast_s / M
            P = lam * (layer.W * F)
            out[(where, idx, "W")] = P * F
            Q = P * layer.W
            out[(where, idx, "r")] = (Q @ layer.fast_s.T).T / M
            out[(where, idx, "s")] = (Q.T @ layer.fast_r.T).T / M
        elif isinstance(layer, (BatchEnsembleLayer, DenseLayer)):
            out[(where, idx, "W")] = lam * layer.params["W"]
    return out


def sgd_momentum_step(param, grad, velocity, lr, momentum):
    """In-place heavy-ball update; returns ``(param, velocity)``."""
    if param.shape != grad.shape or velocity.shape != grad.shape:
        raise ShapeError(f"param {param.shape}, grad {grad.shape}, velocity {velocity.shape} differ")
    if lr <= 0:
        raise ArgumentError("lr must be > 0")
    velocity *= momentum
    velocity += grad
    param -= lr * velocity
    return param, velocity


def lr_at(step, config, total_steps):
    """Piecewise-constant schedule: ``base_lr * factor ** (milestones passed)``."""
    if total_steps <= 0:
        return config.base_lr
    frac = step / total_steps
    passed = sum(1 for m in config.lr_milestones if frac >= m)
    return config.base_lr * config.lr_factor ** passed


class SGD:
    """Momentum SGD over a set of trainable parameter keys.

    ``trainable`` maps keys to ``None`` (whole array) or an integer row, which
    restricts the update to that row of a per-member parameter.
    """

    def __init__(self, model, trainable, momentum):
        self.model = model
        self.trainable = dict(trainable)
        self.momentum = momentum
        self.velocity = {}
        for key, row in self.trainable.items():
            p = model.param(key)
            self.velocity[key] = np.zeros_like(p if row is None else p[row])

    def step(self, grads, lr):
        for key, row in self.trainable.items():
            g = grads.get(key)
            if g is None:
                continue
            p = self.model.param(key)
            if row is None:
                sgd_momentum_step(p, g, self.velocity[key], lr, self.momentum)
            else:
                sub = p[row]
                sgd_momentum_step(sub, g[row], self.velocity[key], lr, self.momentum)
                p[row] = sub


def all_trainable(model, head=None):
    return {k: None for k in model.param_keys(head=head)}


def member_trainable(model, member, head=None, shared=False):
    """Trainable map for one member: its fast-weight and bias rows, plus its head.

    With ``shared=True`` the slow weights and all plain-layer parameters train too.
    """
    out = {}
    for key in model.param_keys(head=head):
        where, _, name = key
        layer = model.get_layer(key)
        if where == "head":
            out[key] = None
        elif isinstance(layer, BatchEnsembleLayer) and name in ("r", "s", "bias"):
            out[key] = member
        elif shared:
            out[key] = None
    return out


def _accuracy(logits, labels):
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def train(model, dataset, config, member=None, trainable=None, head=None, val=None, epochs=None,
          on_step=None):
    """Train ``model`` in place; returns ``(model, history)``.

    Rows of each mini-batch go to members through :func:`assign_subbatches`, unless
    ``member`` is given, in which case every row goes to that member. ``history`` holds
    one dict per epoch with ``epoch``, ``loss``, ``train_acc`` and ``val_acc`` (NaN
    without ``val``). ``epochs`` overrides ``config.epochs``. ``on_step(step, model)``
    is called after every update.
    """
    from .inference import predict_labels

    config.validate()
    n_epochs = config.epochs if epochs is None else epochs
    M = model.ensemble_size
    if member is None and M != config.ensemble_size:
        raise ConfigError(f"config ensemble_size {config.ensemble_size} does not match model ({M})")
    if member is None and config.batch_size % M:
        raise ConfigError(
            f"batch_size {config.batch_size} is not divisible by ensemble_size {M}; "
            f"use a multiple such as {M * max(1, config.batch_size // M)}")
    if member is not None and not 0 <= member < M:
        raise ConfigError(f"member {member} out of range for ensemble size {M}")
    X, y = dataset.features, dataset.labels
    N = X.shape[0]
    if X.shape[1] != model.in_dim:
        raise ShapeError(f"dataset has {X.shape[1]} features, model expects {model.in_dim}")
    group = 1 if member is not None else M
    B = config.batch_size
    steps_per_epoch = sum(1 for s in range(0, N, B) if (min(B, N - s) // group) * group > 0)
    total_steps = n_epochs * steps_per_epoch
    if trainable is None:
        trainable = all_trainable(model, head=head)
    opt = SGD(model, trainable, config.momentum)

    root = SeededRng(config.seed)
    shuffle_rng = root.child("shuffle")
    dropout_rng = root.child("dropout")
    history = []
    step = 0
    for epoch in range(n_epochs):
        perm = shuffle_rng.permutation(N)
        loss_sum = 0.0
        correct = 0
        seen = 0
        for start in range(0, N, B):
            idx = perm[start:start + B]
            # trailing partial batch is truncated to a multiple of the ensemble size
            idx = idx[:(idx.size // group) * group]
            if idx.size == 0:
                continue
            xb, yb = X[idx], y[idx]
            if member is None:
                assign = assign_subbatches(idx.size, M)
            else:
                assign = np.full(idx.size, member, dtype=np.int64)
            logits, caches = model.forward(xb, assign, head=head, rng=dropout_rng.child(step),
                                           stochastic=model.has_dropout)
            loss, G = softmax_xent(logits, yb)
            if not np.isfinite(loss):
                raise TrainingError(f"loss became non-finite at step {step} (epoch {epoch})")
            grads, _ = model.backward(G, caches, head=head)
            for key, extra in decay_gradient(model, config.decay_mode, config.weight_decay).items():
                if key in grads:
                    grads[key] = grads[key] + extra
            opt.step(grads, lr_at(step, config, total_steps))
            step += 1
            if on_step is not None:
                on_step(step, model)
            loss_sum += loss * idx.size
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
            seen += idx.size
        val_acc = float("nan")
        if val is not None:
            pred = predict_labels(model, val.features, member=member, head=head)
            val_acc = float(np.mean(pred == val.labels))
        history.append({"epoch": epoch + 1, "loss": loss_sum / max(seen, 1),
                        "train_acc": correct / max(seen, 1), "val_acc": val_acc})
    return model, history
