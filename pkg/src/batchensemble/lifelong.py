"""Sequential-task training with per-task members and heads, and its evaluation.

In BatchEnsemble mode task 0 trains the shared slow weights together with member 0's
fast weights, biases and head; every later task ``t`` trains only member ``t``'s
fast weights, biases and head, so earlier tasks' parameters never change.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StateError
from .inference import member_logits
from .layers import BatchEnsembleLayer, DenseLayer
from .model import build_mlp
from .training import member_trainable, train

METHODS = ("batch_ensemble", "vanilla", "naive")


@dataclass
class LifelongModel:
    method: str
    models: list                       # one model, or one per task for "naive"
    acc_after: list = field(default_factory=list)

    def model_for(self, t):
        return self.models[t] if self.method == "naive" else self.models[0]

    def member_for(self, t):
        return t if self.method == "batch_ensemble" else 0


@dataclass
class LifelongReport:
    method: str
    accuracy: list
    acc_after: list
    forgetting: list

    @property
    def avg_accuracy(self):
        return float(np.mean(self.accuracy))

    @property
    def avg_forgetting(self):
        return float(np.mean(self.forgetting))

    @property
    def total_forgetting(self):
        return float(np.sum(self.forgetting))

    def write_csv(self, path, extra=None):
        write_lifelong_csv(path, [self], extra=extra)


def _task_model(dim, hidden, n_classes_per_task, T, kind, M, seed, fast_init="sign"):
    heads = {t: n for t, n in enumerate(n_classes_per_task)}
    return build_mlp([dim] + list(hidden), kind=kind, ensemble_size=M, seed=seed,
                     head_classes=heads, final_activation="relu", fast_init=fast_init)


def task_accuracy(lm, task, t):
    logits = task_logits(lm, task, t)
    return float(np.mean(np.argmax(logits, axis=1) == task.test.labels))


def task_logits(lm, task, t):
    """Test-set logits for task ``t`` using the task descriptor to pick member and head."""
    return member_logits(lm.model_for(t), task.test.features, lm.member_for(t), head=t)


def train_sequence(tasks, config, hidden=(64,), method="batch_ensemble", seed=None, model=None,
                   on_task_end=None):
    """Train on ``tasks`` in order; each phase sees only its own task's data.

    ``config.ensemble_size`` is the member count for BatchEnsemble mode and must be at
    least the number of tasks. ``on_task_end(t, lifelong_model)`` runs after each task.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown lifelong method {method!r}")
    T = len(tasks)
    seed = config.seed if seed is None else seed
    dim = tasks[0].train.dim
    n_cls = [task.train.n_classes for task in tasks]
    if method == "batch_ensemble":
        M = model.ensemble_size if model is not None else config.ensemble_size
        if T > M:
            raise ConfigError(f"{T} tasks need at least {T} ensemble members, have {M}")
        if model is None:
            model = _task_model(dim, hidden, n_cls, T, "batch_ensemble", M, seed)
        lm = LifelongModel(method, [model])
    elif method == "vanilla":
        lm = LifelongModel(method, [model or _task_model(dim, hidden, n_cls, T, "dense", 1, seed)])
    else:
        lm = LifelongModel(method, [])

    for t, task in enumerate(tasks):
        if method == "batch_ensemble":
            net = lm.models[0]
            trainable = member_trainable(net, t, head=t, shared=(t == 0))
            member = t
        elif method == "vanilla":
            net = lm.models[0]
            trainable = member_trainable(net, 0, head=t, shared=True)
            member = 0
        else:
            net = _task_model(dim, hidden, n_cls, T, "dense", 1, seed + 7919 * t)
            lm.models.append(net)
            trainable = member_trainable(net, 0, head=t, shared=True)
            member = 0
        train(net, task.train, config, member=member, trainable=trainable, head=t)
        lm.acc_after.append(task_accuracy(lm, task, t))
        if on_task_end is not None:
            on_task_end(t, lm)
    return lm


def evaluate_lifelong(lm, tasks):
    if len(lm.acc_after) != len(tasks):
        raise StateError(f"have {len(lm.acc_after)} after-training snapshots for {len(tasks)} tasks")
    acc = [task_accuracy(lm, task, t) for t, task in enumerate(tasks)]
    forgetting = [a0 - a1 for a0, a1 in zip(lm.acc_after, acc)]
    return LifelongReport(lm.method, acc, list(lm.acc_after), forgetting)


LIFELONG_CSV_COLUMNS = ["task_id", "acc_after", "acc_final", "forgetting"]


def write_lifelong_csv(path, reports, extra=None):
    """One row per (report, task). ``extra`` adds leading constant columns."""
    extra = dict(extra or {})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(extra) + ["method"] + LIFELONG_CSV_COLUMNS)
        for rep in reports:
            for t, (a0, a1, f) in enumerate(zip(rep.acc_after, rep.accuracy, rep.forgetting)):
                w.writerow(list(extra.values()) + [rep.method, t, repr(a0), repr(a1), repr(f)])


def param_overhead(model, T=1, scheme="batch_ensemble"):
    """Exact parameter counts and overhead against a single network.

    The single-network reference is the slow/dense weight matrices, ``sum m*n``.
    BatchEnsemble adds ``M * (m + 2n)`` per layer (fast weights plus per-member bias);
    the naive scheme keeps ``T`` full copies. Heads are reported separately and left
    out of ``overhead_fraction``.
    """
    shared = 0
    member = 0
    other = 0
    for layer in model.layers:
        if isinstance(layer, BatchEnsembleLayer):
            m, n = layer.W.shape
            shared += m * n
            member += layer.ensemble_size * (m + 2 * n)
        elif isinstance(layer, DenseLayer):
            m, n = layer.params["W"].shape
            shared += m * n
            other += n
    heads = sum(h.n_params for h in model.heads.values())
    if scheme == "batch_ensemble":
        total_trunk = shared + member + other
        overhead = (member + other) / shared
    elif scheme == "naive":
        total_trunk = T * (shared + member + other)
        overhead = float(T - 1)
    else:
        raise ConfigError(f"unknown overhead scheme {scheme!r}")
    return {
        "total_params": total_trunk + heads,
        "shared_params": shared,
        "member_params": member,
        "head_params": heads,
        "single_params": shared,
        "overhead_fraction": overhead,
    }
