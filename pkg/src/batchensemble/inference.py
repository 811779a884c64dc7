"""Test-time ensembling: tiled single-pass prediction, per-member and MC-dropout paths."""
from dataclasses import dataclass

import numpy as np

from .core import SeededRng, as_matrix, softmax_rows
from .errors import ArgumentError, MemberIndexError


@dataclass
class PredictionBundle:
    mean_probs: np.ndarray     # (B, C)
    member_probs: np.ndarray   # (M, B, C)

    @property
    def mean_labels(self):
        return np.argmax(self.mean_probs, axis=1)

    @property
    def member_labels(self):
        return np.argmax(self.member_probs, axis=2)

    @property
    def ensemble_size(self):
        return self.member_probs.shape[0]


def ensemble_predict(model, X, head=None):
    """All members in one forward pass over the input tiled ``M`` times.

    Rows are laid out blockwise ``[member 0 | member 1 | ...]``; member softmax outputs
    are averaged in probability space.
    """
    X = as_matrix(X, "X")
    B = X.shape[0]
    M = model.ensemble_size
    tiled = np.tile(X, (M, 1))
    assign = np.repeat(np.arange(M, dtype=np.int64), B)
    logits, _ = model.forward(tiled, assign, head=head)
    probs = softmax_rows(logits).reshape(M, B, -1)
    return PredictionBundle(mean_probs=probs.mean(axis=0), member_probs=probs)


def member_predict(model, X, i, head=None):
    """Softmax output of member ``i`` alone."""
    X = as_matrix(X, "X")
    M = model.ensemble_size
    if not 0 <= i < M:
        raise MemberIndexError(f"member {i} out of range for ensemble size {M}")
    logits, _ = model.forward(X, np.full(X.shape[0], i, dtype=np.int64), head=head)
    return softmax_rows(logits)


def member_logits(model, X, i, head=None):
    X = as_matrix(X, "X")
    logits, _ = model.forward(X, np.full(X.shape[0], i, dtype=np.int64), head=head)
    return logits


def mc_dropout_samples(model, X, K, rng, head=None):
    """``K`` stochastic softmax passes stacked as (K, B, C)."""
    if K < 1:
        raise ArgumentError(f"sample count must be >= 1, got {K}")
    if not model.has_dropout:
        raise ArgumentError("MC-dropout prediction needs a model with a dropout layer")
    if isinstance(rng, int):
        rng = SeededRng(rng).child("mc")
    X = as_matrix(X, "X")
    out = []
    for k in range(K):
        logits, _ = model.forward(X, head=head, rng=rng.child(k), stochastic=True)
        out.append(softmax_rows(logits))
    return np.stack(out)


def mc_dropout_predict(model, X, K, rng, head=None):
    """Average of ``K`` dropout-sampled softmax passes."""
    return mc_dropout_samples(model, X, K, rng, head=head).mean(axis=0)


def mc_dropout_bundle(model, X, K, rng, head=None):
    samples = mc_dropout_samples(model, X, K, rng, head=head)
    return PredictionBundle(mean_probs=samples.mean(axis=0), member_probs=samples)


def naive_ensemble_predict(models, X, head=None):
    """Independent models, each contributing one member; probabilities averaged."""
    probs = np.stack([ensemble_predict(m, X, head=head).mean_probs for m in models])
    return PredictionBundle(mean_probs=probs.mean(axis=0), member_probs=probs)


def predict_labels(model, X, member=None, head=None):
    if member is not None:
        return np.argmax(member_logits(model, X, member, head=head), axis=1)
    return ensemble_predict(model, X, head=head).mean_labels
