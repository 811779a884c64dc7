"""Command-line experiment runner.

    batchensemble train|compare|lifelong|diversity|corrupt --config PATH [--seed LIST] [--out DIR]
    batchensemble gradcheck [--instances N] [--seed LIST]

Every command is a pure function of (config, seed): reruns write byte-identical files.
"""
import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .data import corrupt, load_idx, split_tasks, subsample
from .errors import BatchEnsembleError, ConfigError, StateError
from .experiments import VARIANTS, BlobSpec, VariantSpec, blob_splits, predict_variant, summarize, train_variant
from .lifelong import METHODS as LIFELONG_METHODS
from .lifelong import evaluate_lifelong, train_sequence
from .metrics import diversity_profile, ece, entropy_histogram, predictive_entropy
from .training import TrainConfig

SCHEMA_VERSION = "v1"
DIVERSITY_METHODS = ("batch_ensemble", "naive_ensemble", "mc_dropout")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class CsvOut:
    """CSV writer with a fixed header; the first column carries the schema version."""

    def __init__(self, path, columns):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(["schema"] + list(columns))

    def row(self, *values):
        self.w.writerow([SCHEMA_VERSION] + [_fmt(v) for v in values])

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def train_config(cfg, seed, ensemble_size=1):
    t = cfg["train"]
    return TrainConfig(batch_size=t["batch_size"], ensemble_size=ensemble_size, epochs=t["epochs"],
                       base_lr=t["base_lr"], lr_milestones=t["lr_milestones"], lr_factor=t["lr_factor"],
                       weight_decay=t["weight_decay"], decay_mode=t["decay_mode"], momentum=t["momentum"],
                       seed=seed, extra_iteration_factor=t["extra_iteration_factor"])


def variant_spec(cfg):
    m = cfg["model"]
    return VariantSpec(hidden=tuple(m["hidden"]), ensemble_size=m["ensemble_size"], dropout=m["dropout"],
                       mc_samples=m["mc_samples"], fast_init=m["fast_init"])


def load_data(cfg, seed):
    """Train/test datasets for ``seed``. Blob data is regenerated per seed."""
    d = cfg["data"]
    if d["kind"] == "blobs":
        spec = BlobSpec(n_classes=d["n_classes"], train_per_class=d["train_per_class"],
                        test_per_class=d["test_per_class"], dim=d["dim"], spread=d["spread"],
                        center_scale=d["center_scale"])
        return blob_splits(spec, seed)
    if d["kind"] == "idx":
        for key in ("images", "labels", "test_images", "test_labels"):
            if not d[key]:
                raise ConfigError(f"missing required key data.{key} for data.kind = idx")
        train = load_idx(d["images"], d["labels"], n_classes=d["n_classes"], name="idx-train")
        test = load_idx(d["test_images"], d["test_labels"], n_classes=d["n_classes"], name="idx-test")
        return train, test
    raise ConfigError(f"data.kind must be 'blobs' or 'idx', got {d['kind']!r}")


def _validate(cfg, command):
    """Cross-field checks, run before any computation."""
    t = cfg["train"]
    m = cfg["model"]
    if m["variant"] not in VARIANTS:
        raise ConfigError(f"model.variant: unknown variant {m['variant']!r}; choose from {VARIANTS}")
    # lifelong phases feed one member at a time, so only sub-batched commands need this
    if command != "lifelong" and t["batch_size"] % max(m["ensemble_size"], 1):
        raise ConfigError(f"train.batch_size {t['batch_size']} is not divisible by "
                          f"model.ensemble_size {m['ensemble_size']}")
    train_config(cfg, 0, m["ensemble_size"])
    if command == "compare":
        for v in cfg["compare"]["variants"]:
            if v not in VARIANTS:
                raise ConfigError(f"compare.variants: unknown variant {v!r}; choose from {VARIANTS}")
    if command == "lifelong":
        L = cfg["lifelong"]
        for meth in L["methods"]:
            if meth not in LIFELONG_METHODS:
                raise ConfigError(f"lifelong.methods: unknown method {meth!r}")
        if "batch_ensemble" in L["methods"] and L["tasks"] > m["ensemble_size"]:
            raise ConfigError(f"lifelong.tasks {L['tasks']} exceeds model.ensemble_size {m['ensemble_size']}")
        if cfg["data"]["n_classes"] % L["tasks"]:
            raise ConfigError(f"lifelong.tasks {L['tasks']} does not divide data.n_classes {cfg['data']['n_classes']}")
    if command == "diversity":
        D = cfg["diversity"]
        if not D["fractions"] or any(not 0 < f <= 1 for f in D["fractions"]):
            raise ConfigError("diversity.fractions must be a nonempty list in (0, 1]")
        for meth in D["methods"]:
            if meth not in DIVERSITY_METHODS:
                raise ConfigError(f"diversity.methods: unknown method {meth!r}")
    if command == "corrupt":
        C = cfg["corrupt"]
        if not C["levels"]:
            raise ConfigError("corrupt.levels must list at least one level")
        if any(lv not in (1, 2, 3, 4, 5) for lv in C["levels"]):
            raise ConfigError("corrupt.levels entries must lie in 1..5")
        for v in C["variants"]:
            if v not in VARIANTS:
                raise ConfigError(f"corrupt.variants: unknown variant {v!r}")


def checkpoint_name(variant, seed):
    return f"{variant}_seed{seed}.ckpt"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def run_train(cfg, seeds, out):
    vspec = variant_spec(cfg)
    variant = cfg["model"]["variant"]
    paths = []
    for seed in seeds:
        train_set, test_set = load_data(cfg, seed)
        tcfg = train_config(cfg, seed)
        histories = []
        models = train_variant(variant, train_set, tcfg, vspec, seed, val=test_set, histories=histories)
        ckpt = os.path.join(out, f"train_{checkpoint_name(variant, seed)}")
        save_checkpoint(ckpt, models, {"variant": variant, "seed": seed, "config": tcfg.fingerprint()})
        with CsvOut(os.path.join(out, f"history_{variant}_seed{seed}.csv"),
                    ["member", "epoch", "loss", "train_acc", "val_acc"]) as w:
            for j, hist in enumerate(histories):
                for h in hist:
                    w.row(j, h["epoch"], h["loss"], h["train_acc"], h["val_acc"])
        paths.append(ckpt)
    return paths


def run_compare(cfg, seeds, out):
    vspec = variant_spec(cfg)
    bins = cfg["metrics"]["ece_bins"]
    width = cfg["metrics"]["entropy_bin_width"]
    ckdir = os.path.join(out, "checkpoints")
    os.makedirs(ckdir, exist_ok=True)
    variants = cfg["compare"]["variants"]
    path = os.path.join(out, "compare.csv")
    with CsvOut(path, ["variant", "seed", "accuracy", "ece", "entropy", "nll", "n_params"]) as wide, \
            CsvOut(os.path.join(out, "metrics.csv"), ["metric", "model", "dataset", "seed", "value"]) as long_, \
            CsvOut(os.path.join(out, "ece_bins.csv"),
                   ["model", "seed", "bin", "lower", "upper", "count", "confidence", "accuracy"]) as eb, \
            CsvOut(os.path.join(out, "entropy_hist.csv"), ["model", "seed", "lower", "upper", "count"]) as eh:
        for seed in seeds:
            train_set, test_set = load_data(cfg, seed)
            tcfg = train_config(cfg, seed)
            for variant in variants:
                models = train_variant(variant, train_set, tcfg, vspec, seed)
                save_checkpoint(os.path.join(ckdir, checkpoint_name(variant, seed)), models,
                                {"variant": variant, "seed": seed, "config": tcfg.fingerprint()})
                bundle = predict_variant(variant, models, test_set.features, vspec, seed)
                s = summarize(bundle, test_set.labels, bins)
                n_params = sum(m.n_params for m in models)
                wide.row(variant, seed, s["accuracy"], s["ece"], s["entropy"], s["nll"], n_params)
                for metric in ("accuracy", "ece", "entropy", "nll"):
                    long_.row(metric, variant, test_set.name, seed, s[metric])
                for row in ece(bundle.mean_probs, test_set.labels, bins).rows():
                    eb.row(variant, seed, *row)
                edges, counts = entropy_histogram(predictive_entropy(bundle.mean_probs), width,
                                                  max_value=np.log(test_set.n_classes))
                for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                    eh.row(variant, seed, lo, hi, int(c))
    return path


def run_lifelong(cfg, seeds, out):
    L = cfg["lifelong"]
    T = L["tasks"]
    reports = []
    for seed in seeds:
        train_set, test_set = load_data(cfg, seed)
        tasks = split_tasks(train_set, T, seed, test=test_set)
        for method in L["methods"]:
            M = cfg["model"]["ensemble_size"] if method == "batch_ensemble" else 1
            tcfg = train_config(cfg, seed, ensemble_size=1)
            lm = train_sequence(tasks, replace(tcfg, ensemble_size=M), hidden=L["hidden"], method=method, seed=seed)
            rep = evaluate_lifelong(lm, tasks)
            reports.append((seed, rep))
    path = os.path.join(out, "lifelong.csv")
    with CsvOut(path, ["seed", "method", "task_id", "acc_after", "acc_final", "forgetting"]) as w:
        for seed, rep in reports:
            for t, (a0, a1, f) in enumerate(zip(rep.acc_after, rep.accuracy, rep.forgetting)):
                w.row(seed, rep.method, t, a0, a1, f)
    return path


def run_diversity(cfg, seeds, out):
    vspec = variant_spec(cfg)
    D = cfg["diversity"]
    path = os.path.join(out, "diversity.csv")
    with CsvOut(path, ["fraction", "method", "seed", "member", "accuracy", "raw_d", "normalized_d",
                       "normalized_is_raw"]) as w, \
            CsvOut(os.path.join(out, "member_predictions.csv"),
                   ["fraction", "method", "seed", "member", "labels"]) as mp:
        for seed in seeds:
            train_set, test_set = load_data(cfg, seed)
            tcfg = train_config(cfg, seed)
            for fraction in D["fractions"]:
                part = subsample(train_set, fraction, seed)
                for method in D["methods"]:
                    models = train_variant(method, part, tcfg, vspec, seed)
                    bundle = predict_variant(method, models, test_set.features, vspec, seed)
                    labels = bundle.member_labels
                    for k, row in enumerate(labels):
                        mp.row(fraction, method, seed, k, " ".join(str(int(v)) for v in row))
                    mp.row(fraction, method, seed, "truth", " ".join(str(int(v)) for v in test_set.labels))
                    for p in diversity_profile(labels, test_set.labels):
                        w.row(fraction, method, seed, p.member, p.accuracy, p.raw, p.normalized,
                              int(p.normalized_is_raw))
    return path


def run_corruption(cfg, seeds, out):
    vspec = variant_spec(cfg)
    C = cfg["corrupt"]
    bins = cfg["metrics"]["ece_bins"]
    ckdir = C["checkpoint_dir"]
    loaded = {}
    for seed in seeds:
        for variant in C["variants"]:
            p = os.path.join(ckdir, checkpoint_name(variant, seed))
            if not os.path.exists(p):
                raise StateError(f"missing checkpoint {p}; run 'compare' for variant {variant} seed {seed} first")
            loaded[(variant, seed)] = load_checkpoint(p)[0]
    prob_dir = os.path.join(out, "probs")
    if C["export_probs"]:
        os.makedirs(prob_dir, exist_ok=True)
    path = os.path.join(out, "corruption.csv")
    with CsvOut(path, ["variant", "seed", "level", "accuracy", "ece"]) as w:
        for seed in seeds:
            _, test_set = load_data(cfg, seed)
            for variant in C["variants"]:
                models = loaded[(variant, seed)]
                for level in [0] + sorted(set(C["levels"])):
                    ds = test_set if level == 0 else corrupt(test_set, level, seed)
                    bundle = predict_variant(variant, models, ds.features, vspec, seed)
                    s = summarize(bundle, ds.labels, bins)
                    w.row(variant, seed, level, s["accuracy"], s["ece"])
                    if C["export_probs"]:
                        _write_probs(os.path.join(prob_dir, f"{variant}_seed{seed}_level{level}.csv"),
                                     bundle.mean_probs, ds.labels)
    return path


def _write_probs(path, probs, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"p{c}" for c in range(probs.shape[1])])
        for lab, row in zip(labels, probs):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])


def run_gradcheck(n_instances, seeds):
    from .gradcheck import REL_TOL, run_suite

    worst_all = 0.0
    for seed in seeds:
        worst, groups = run_suite(n_instances, seed=seed)
        for name in sorted(groups):
            print(f"seed {seed} {name:24s} max rel err {groups[name]:.3e}")
        worst_all = max(worst_all, worst)
    print(f"max relative error {worst_all:.3e} (tolerance {REL_TOL:.0e})")
    return worst_all <= REL_TOL


COMMANDS = {
    "train": run_train,
    "compare": run_compare,
    "lifelong": run_lifelong,
    "diversity": run_diversity,
    "corrupt": run_corruption,
}


def _seed_list(text):
    try:
        seeds = [int(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed list must be comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def build_parser():
    p = argparse.ArgumentParser(prog="batchensemble", description=__doc__.splitlines()[0] if __doc__ else None)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="INI experiment configuration")
        sp.add_argument("--seed", type=_seed_list, default=None, help="comma-separated seeds (overrides run.seeds)")
        sp.add_argument("--out", default=None, help="output directory (overrides run.out)")
    gp = sub.add_parser("gradcheck")
    gp.add_argument("--instances", type=int, default=50)
    gp.add_argument("--seed", type=_seed_list, default=[0])
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            return 0 if run_gradcheck(args.instances, args.seed) else 1
        cfg = load_config(args.config, args.command)
        _validate(cfg, args.command)
        seeds = args.seed if args.seed is not None else list(cfg["run"]["seeds"])
        out = args.out if args.out is not None else cfg["run"]["out"]
        os.makedirs(out, exist_ok=True)
        result = COMMANDS[args.command](cfg, seeds, out)
        print(result if isinstance(result, str) else "\n".join(result))
        return 0
    except BatchEnsembleError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
