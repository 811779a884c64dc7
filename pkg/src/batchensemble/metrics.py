"""Calibration, predictive entropy and disagreement diversity."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ArgumentError

DEFAULT_ECE_BINS = 15


@dataclass
class EceBreakdown:
    n_bins: int
    counts: np.ndarray
    confidence: np.ndarray   # mean confidence per bin, 0 for empty bins
    accuracy: np.ndarray     # mean accuracy per bin, 0 for empty bins
    ece: float

    def rows(self):
        """Per-bin rows ``(bin, lower, upper, count, confidence, accuracy)``."""
        for m in range(self.n_bins):
            yield (m + 1, m / self.n_bins, (m + 1) / self.n_bins, int(self.counts[m]),
                   float(self.confidence[m]), float(self.accuracy[m]))


def _check_simplex(probs, tol=1e-6):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ArgumentError(f"probabilities must be 2-D, got shape {probs.shape}")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > tol):
        raise ArgumentError("probability rows must be nonnegative and sum to 1")
    return probs


def ece(probs, labels, n_bins=DEFAULT_ECE_BINS):
    """Expected calibration error over equal-width confidence bins ``((m-1)/M, m/M]``."""
    probs = _check_simplex(probs)
    labels = np.asarray(labels)
    if n_bins < 1:
        raise ArgumentError("n_bins must be >= 1")
    if labels.shape != (probs.shape[0],):
        raise ArgumentError(f"labels shape {labels.shape} does not match {probs.shape[0]} rows")
    n = probs.shape[0]
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    counts, conf_sum, acc_sum = kernels.ece_bins(conf, correct, n_bins)
    nz = counts > 0
    mean_conf = np.zeros(n_bins)
    mean_acc = np.zeros(n_bins)
    mean_conf[nz] = conf_sum[nz] / counts[nz]
    mean_acc[nz] = acc_sum[nz] / counts[nz]
    value = float(np.sum(counts / n * np.abs(mean_acc - mean_conf))) if n else 0.0
    return EceBreakdown(n_bins, counts, mean_conf, mean_acc, value)


def predictive_entropy(probs):
    """Shannon entropy per row in nats, with ``0 log 0 = 0``."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0):
        raise ArgumentError("negative probability")
    logp = np.log(np.where(probs > 0, probs, 1.0))
    return -np.sum(probs * logp, axis=1)


def entropy_histogram(entropies, bin_width=0.1, max_value=None):
    """Counts over bins ``[k w, (k+1) w)`` starting at 0; returns ``(edges, counts)``."""
    if bin_width <= 0:
        raise ArgumentError("bin_width must be > 0")
    entropies = np.asarray(entropies, dtype=np.float64)
    top = max_value if max_value is not None else (entropies.max() if entropies.size else 0.0)
    n = max(1, int(np.floor(top / bin_width)) + 1)
    edges = np.arange(n + 1) * bin_width
    counts, _ = np.histogram(np.clip(entropies, 0.0, edges[-1]), bins=edges)
    return edges, counts


def disagreement(pred_a, pred_b):
    """Fraction of positions where two label vectors differ."""
    a = np.asarray(pred_a)
    b = np.asarray(pred_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ArgumentError(f"prediction vectors must have equal 1-D shapes, got {a.shape} and {b.shape}")
    if a.size == 0:
        raise ArgumentError("empty prediction vectors")
    return kernels.count_disagree(a, b) / a.size


@dataclass
class DiversityPoint:
    member: int
    accuracy: float
    raw: float
    normalized: float
    normalized_is_raw: bool = False


def diversity_profile(member_labels, labels):
    """Disagreement of every member against member 0 (the base).

    ``member_labels`` is (K, n) predicted labels; ``normalized`` divides the raw
    disagreement by the base model's error rate. When the base is error-free the raw
    value is reported and ``normalized_is_raw`` is set.
    """
    member_labels = np.asarray(member_labels)
    labels = np.asarray(labels)
    if member_labels.ndim != 2 or member_labels.shape[0] < 2:
        raise ArgumentError("diversity needs at least two member prediction sets")
    base = member_labels[0]
    base_err = 1.0 - float(np.mean(base == labels))
    points = []
    for k, pred in enumerate(member_labels):
        d = disagreement(base, pred)
        acc = float(np.mean(pred == labels))
        if base_err > 0:
            points.append(DiversityPoint(k, acc, d, d / base_err))
        else:
            points.append(DiversityPoint(k, acc, d, d, normalized_is_raw=True))
    return points


def accuracy(probs, labels):
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(labels)))
