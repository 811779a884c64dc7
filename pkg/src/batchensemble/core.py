"""Dense float64 matrix helpers and the seeded random stream.

Matrices are plain 2-D ``numpy.ndarray`` objects in float64, rows are examples.
The helpers validate shapes and finiteness so failures name the offending shapes
instead of surfacing as broadcasting accidents deep inside a training step.
"""
import numpy as np

from .errors import ArgumentError, ShapeError

# Sub-stream offsets. A stream for purpose P under seed s is Philox keyed by
# SeedSequence(s, spawn_key=(offset(P), *extra)).
STREAM_OFFSETS = {
    "init": 1,
    "shuffle": 2,
    "dropout": 3,
    "data": 4,
    "split": 5,
    "subsample": 6,
    "corrupt": 7,
    "tasks": 8,
    "mc": 9,
    "member": 10,
}


class SeededRng:
    """Counter-based (Philox) generator with named, reproducible sub-streams.

    >>> a = SeededRng(7).child("init", 0)
    >>> b = SeededRng(7).child("init", 0)
    >>> bool((a.normal(size=3) == b.normal(size=3)).all())
    True
    """

    def __init__(self, seed, key=()):
        if not isinstance(seed, (int, np.integer)) or seed < 0 or seed >= 2**64:
            raise ArgumentError(f"seed must be an integer in [0, 2**64), got {seed!r}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, *keys):
        """Independent stream derived from this one's seed and key path."""
        resolved = []
        for k in keys:
            if isinstance(k, str):
                if k not in STREAM_OFFSETS:
                    raise ArgumentError(f"unknown stream purpose {k!r}")
                resolved.append(STREAM_OFFSETS[k])
            else:
                resolved.append(int(k))
        return SeededRng(self.seed, self.key + tuple(resolved))

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, key={self.key})"

    # thin pass-throughs
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def check_finite(a, name="matrix"):
    if not np.all(np.isfinite(a)):
        raise ArgumentError(f"{name} contains NaN or Inf")
    return a


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def hadamard(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def outer(r, s):
    r = np.asarray(r, dtype=np.float64).ravel()
    s = np.asarray(s, dtype=np.float64).ravel()
    if r.size == 0 or s.size == 0:
        raise ArgumentError("outer product of an empty vector")
    return np.outer(r, s)


def softmax_rows(logits):
    """Row-wise softmax with max subtraction."""
    z = as_matrix(logits, "logits")
    if np.isnan(z).any():
        raise ArgumentError("softmax_rows input contains NaN")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(logits):
    z = as_matrix(logits, "logits")
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def sign_vector(dim, rng):
    """Vector of independent fair +1/-1 draws."""
    if dim < 1:
        raise ArgumentError(f"sign_vector needs dim >= 1, got {dim}")
    bits = rng.integers(0, 2, size=dim)
    return (2 * bits - 1).astype(np.float64)
