"""Desk-scale experiment recipes shared by the CLI and the acceptance suite."""
from dataclasses import dataclass, replace

import numpy as np

from .core import SeededRng
from .data import gen_blobs, train_test_split, unit_box
from .errors import ConfigError
from .inference import ensemble_predict, mc_dropout_bundle, naive_ensemble_predict
from .metrics import accuracy, ece, predictive_entropy
from .model import build_mlp
from .training import budget_epochs, train

VARIANTS = ("single", "batch_ensemble", "mc_dropout", "naive_ensemble", "naive_small")


@dataclass
class BlobSpec:
    n_classes: int = 10
    train_per_class: int = 500
    test_per_class: int = 200
    dim: int = 50
    spread: float = 3.0
    center_scale: float = 1.0
    data_seed: int = 0


@dataclass
class VariantSpec:
    hidden: tuple = (128, 128)
    ensemble_size: int = 4
    dropout: float = 0.05
    mc_samples: int = 8
    fast_init: str = "sign"


def blob_splits(spec, seed=None):
    """Train/test blobs scaled into [0, 1] with the training set's range."""
    seed = spec.data_seed if seed is None else seed
    full = gen_blobs(spec.n_classes, spec.train_per_class + spec.test_per_class, spec.dim,
                     spec.spread, seed, center_scale=spec.center_scale)
    tr, te = train_test_split(full, spec.test_per_class, seed)
    return unit_box(tr, te)


def small_width(widths, M, hidden_count):
    """Largest hidden width whose M dense copies fit in a BatchEnsemble net's budget."""
    be = _count_be(widths, M)
    best = 1
    for h in range(1, max(widths) + 1):
        w = [widths[0]] + [h] * hidden_count + [widths[-1]]
        if M * _count_dense(w) <= be:
            best = h
    return best


def _count_be(widths, M):
    return sum(m * n + M * (m + 2 * n) for m, n in zip(widths, widths[1:]))


def _count_dense(widths):
    return sum(m * n + n for m, n in zip(widths, widths[1:]))


def train_variant(variant, train_set, config, vspec, seed, val=None, histories=None):
    """Trained models for ``variant`` (a list; naive variants hold one model per member).

    Per-model training histories are appended to ``histories`` when given.
    """

    def fit(model, data, cfg, **kw):
        _, hist = train(model, data, cfg, val=val, **kw)
        if histories is not None:
            histories.append(hist)
    widths = [train_set.dim] + list(vspec.hidden) + [train_set.n_classes]
    M = vspec.ensemble_size
    cfg = replace(config, seed=seed, ensemble_size=1)
    if variant == "single":
        model = build_mlp(widths, seed=seed)
        fit(model, train_set, cfg)
        return [model]
    if variant == "mc_dropout":
        model = build_mlp(widths, dropout=vspec.dropout, seed=seed)
        fit(model, train_set, cfg)
        return [model]
    if variant == "batch_ensemble":
        model = build_mlp(widths, kind="batch_ensemble", ensemble_size=M, seed=seed, fast_init=vspec.fast_init)
        be_cfg = replace(config, seed=seed, ensemble_size=M)
        fit(model, train_set, be_cfg, epochs=budget_epochs(be_cfg, M > 1))
        return [model]
    if variant in ("naive_ensemble", "naive_small"):
        if variant == "naive_small":
            h = small_width(widths, M, len(vspec.hidden))
            widths = [widths[0]] + [h] * len(vspec.hidden) + [widths[-1]]
        models = []
        for j in range(M):
            # member 0 shares the single model's seed so M=1 reduces to "single"
            member_seed = seed if j == 0 else int(SeededRng(seed).child("member", j).integers(0, 2**62))
            model = build_mlp(widths, seed=member_seed)
            fit(model, train_set, replace(cfg, seed=member_seed))
            models.append(model)
        return models
    raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")


def predict_variant(variant, models, X, vspec, seed):
    if variant in ("naive_ensemble", "naive_small"):
        return naive_ensemble_predict(models, X)
    if variant == "mc_dropout":
        return mc_dropout_bundle(models[0], X, vspec.mc_samples, SeededRng(seed).child("mc"))
    return ensemble_predict(models[0], X)


def summarize(bundle, labels, n_bins=15):
    probs = bundle.mean_probs
    return {
        "accuracy": accuracy(probs, labels),
        "ece": ece(probs, labels, n_bins).ece,
        "entropy": float(np.mean(predictive_entropy(probs))),
        "nll": float(-np.mean(np.log(np.maximum(probs[np.arange(len(labels)), labels], 1e-300)))),
    }
