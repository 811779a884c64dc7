"""INI-style experiment configuration with full up-front validation."""
import configparser
from dataclasses import dataclass

from .errors import ConfigError

REQUIRED = object()


def _intlist(text):
    return tuple(int(x) for x in _split(text))


def _floatlist(text):
    return tuple(float(x) for x in _split(text))


def _strlist(text):
    return tuple(_split(text))


def _split(text):
    return [x.strip() for x in text.replace(";", ",").split(",") if x.strip()]


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "seeds": (_intlist, (0,)),
        "out": (str, "results"),
    },
    "data": {
        "kind": (str, REQUIRED),
        "n_classes": (int, 10),
        "train_per_class": (int, 500),
        "test_per_class": (int, 200),
        "dim": (int, 50),
        "spread": (float, 3.0),
        "center_scale": (float, 1.0),
        "images": (str, ""),
        "labels": (str, ""),
        "test_images": (str, ""),
        "test_labels": (str, ""),
    },
    "model": {
        "variant": (str, "batch_ensemble"),
        "hidden": (_intlist, (128, 128)),
        "ensemble_size": (int, 4),
        "dropout": (float, 0.05),
        "mc_samples": (int, 8),
        "fast_init": (str, "sign"),
    },
    "train": {
        "batch_size": (int, 128),
        "epochs": (int, 40),
        "base_lr": (float, 0.1),
        "lr_milestones": (_floatlist, (0.5, 0.75)),
        "lr_factor": (float, 0.1),
        "weight_decay": (float, 1e-4),
        "decay_mode": (str, "shared_only"),
        "momentum": (float, 0.9),
        "extra_iteration_factor": (float, 1.5),
    },
    "metrics": {
        "ece_bins": (int, 15),
        "entropy_bin_width": (float, 0.1),
    },
    "compare": {
        "variants": (_strlist, REQUIRED),
    },
    "lifelong": {
        "tasks": (int, REQUIRED),
        "hidden": (_intlist, (64,)),
        "methods": (_strlist, ("batch_ensemble", "vanilla")),
    },
    "diversity": {
        "fractions": (_floatlist, REQUIRED),
        "methods": (_strlist, ("batch_ensemble", "naive_ensemble", "mc_dropout")),
    },
    "corrupt": {
        "levels": (_intlist, REQUIRED),
        "checkpoint_dir": (str, REQUIRED),
        "variants": (_strlist, ("single", "batch_ensemble", "mc_dropout", "naive_ensemble")),
        "export_probs": (_bool, False),
    },
}

# sections each command needs present
COMMAND_SECTIONS = {
    "train": ("data", "model"),
    "compare": ("data", "compare"),
    "lifelong": ("data", "lifelong"),
    "diversity": ("data", "diversity"),
    "corrupt": ("data", "corrupt"),
    "gradcheck": (),
}


@dataclass
class ExperimentConfig:
    sections: dict

    def __getitem__(self, section):
        return self.sections[section]

    def get(self, section, key):
        return self.sections[section][key]


def parse_config(text, command, source="<config>"):
    """Parse and validate; every problem raises ConfigError naming ``section.key``."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
    for section in COMMAND_SECTIONS[command]:
        if not cp.has_section(section):
            raise ConfigError(f"missing required section [{section}] for command {command!r}")
    out = {}
    for section, keys in SCHEMA.items():
        present = cp.has_section(section)
        vals = {}
        for key, (parse, default) in keys.items():
            if present and key in cp[section]:
                raw = cp[section][key]
                try:
                    vals[key] = parse(raw)
                except ValueError as exc:
                    raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from None
            elif default is REQUIRED:
                if present:
                    raise ConfigError(f"missing required key {section}.{key}")
                vals[key] = None
            else:
                vals[key] = default
        out[section] = vals
    return ExperimentConfig(out)


def load_config(path, command):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, command, source=str(path))
