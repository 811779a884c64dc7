"""Exception hierarchy. Every error carries a category used by the CLI exit path."""


class BatchEnsembleError(Exception):
    category = "error"


class ShapeError(BatchEnsembleError, ValueError):
    category = "shape"


class ArgumentError(BatchEnsembleError, ValueError):
    category = "argument"


class MemberIndexError(BatchEnsembleError, IndexError):
    category = "index"


class ConfigError(BatchEnsembleError, ValueError):
    category = "config"


class StateError(BatchEnsembleError, RuntimeError):
    category = "state"


class TrainingError(BatchEnsembleError, RuntimeError):
    category = "training"


class FormatError(BatchEnsembleError, ValueError):
    category = "format"
