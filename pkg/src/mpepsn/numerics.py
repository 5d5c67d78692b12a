"""Dense tensor arithmetic, deterministic RNG, and the worker pool.

Everything downstream (neuron dynamics, training, benchmarking) is built on
the operations in this module.  Two contracts matter throughout:

* determinism: the same inputs and seed produce bit-identical outputs,
  regardless of how many workers the pool uses;
* tensors are immutable by convention: no operation mutates its inputs.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import expit

Array = np.ndarray

WORKERS_ENV_VAR = "MPE_PSN_WORKERS"


class ShapeMismatchError(ValueError):
    """Raised when operand shapes are incompatible."""


def _as_tensor(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def _require_same_shape(a: Array, b: Array, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: shapes {a.shape} and {b.shape} differ")


def resolve_workers(workers: int | None = None) -> int:
    """Worker count to use, falling back to the MPE_PSN_WORKERS env var."""
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV_VAR, "1"))
    if workers < 1:
        raise ValueError(f"worker count must be >= 1, got {workers}")
    return workers


class WorkerPool:
    """Thread pool that partitions flat index ranges across workers.

    Partitioning is purely a performance measure: every operation routed
    through the pool is elementwise (or chunk-keyed for RNG), so results are
    bit-identical for any worker count.  numpy ufuncs release the GIL on
    large blocks, which is where the concurrency comes from.
    """

    def __init__(self, workers: int | None = None):
        self.workers = resolve_workers(workers)
        self._executor = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def map_ranges(self, n: int, fn, align: int = 1) -> None:
        """Call ``fn(lo, hi)`` over a partition of ``range(n)``.

        Range boundaries are multiples of ``align`` (except the last), so
        chunk-keyed RNG fills stay aligned to their chunks.
        """
        if n <= 0:
            return
        if self._executor is None or self.workers == 1:
            fn(0, n)
            return
        per = -(-n // self.workers)  # ceil
        per = -(-per // align) * align
        bounds = list(range(0, n, per)) + [n]
        futures = [
            self._executor.submit(fn, lo, hi)
            for lo, hi in zip(bounds[:-1], bounds[1:])
        ]
        for f in futures:
            f.result()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


class Rng:
    """Counter-based random stream built on Philox.

    Output position ``i`` of draw number ``c`` depends only on
    ``(seed, stream, c, i)``, never on thread scheduling: the flat output is
    generated in fixed-size chunks, each keyed by its chunk index, so a pool
    may fill chunks in any order (or in parallel) with identical results.
    """

    CHUNK = 1 << 14

    def __init__(self, seed: int, stream: int = 0):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        self.seed = seed
        self.stream = stream & 0xFFFFFFFFFFFFFFFF
        self._calls = 0

    def spawn(self, child_id: int) -> "Rng":
        """Independent child stream keyed by (this stream, child_id)."""
        return Rng(self.seed, _splitmix64(self.stream ^ _splitmix64(child_id + 1)))

    def _chunk_generator(self, call: int, chunk: int) -> np.random.Generator:
        counter = np.array([0, chunk, call, 0], dtype=np.uint64)
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=key))

    def _fill(self, n: int, draw, pool: WorkerPool | None) -> Array:
        out = np.empty(n, dtype=np.float64)
        call = self._calls
        self._calls += 1
        nchunks = -(-n // self.CHUNK)

        def work(lo: int, hi: int) -> None:
            for c in range(lo, hi):
                start = c * self.CHUNK
                stop = min(start + self.CHUNK, n)
                draw(self._chunk_generator(call, c), out[start:stop])

        if pool is None:
            work(0, nchunks)
        else:
            pool.map_ranges(nchunks, work)
        return out

    def uniforms(self, n: int, pool: WorkerPool | None = None) -> Array:
        """n doubles uniform on [0, 1)."""
        return self._fill(n, lambda g, view: g.random(out=view), pool)

    def normals(self, n: int, pool: WorkerPool | None = None) -> Array:
        """n standard-normal doubles."""
        return self._fill(n, lambda g, view: g.standard_normal(out=view), pool)

    def uniform_tensor(self, shape, low: float, high: float) -> Array:
        """Tensor with entries uniform on [low, high)."""
        n = int(np.prod(shape))
        return (low + (high - low) * self.uniforms(n)).reshape(shape)


_BINARY_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a, b) -> Array:
    """Elementwise combine of two equal-shape tensors, or tensor and scalar."""
    if op == "scale-by-scalar":
        return scale(a, b)
    if op not in _BINARY_OPS:
        raise ValueError(f"unknown elementwise op {op!r}")
    a = _as_tensor(a)
    if np.isscalar(b) or np.ndim(b) == 0:
        return _BINARY_OPS[op](a, float(b))
    b = _as_tensor(b)
    _require_same_shape(a, b, f"elementwise {op}")
    return _BINARY_OPS[op](a, b)


def add(a, b) -> Array:
    return elementwise("add", a, b)


def sub(a, b) -> Array:
    return elementwise("sub", a, b)


def mul(a, b) -> Array:
    return elementwise("mul", a, b)


def scale(a, c: float) -> Array:
    return _as_tensor(a) * float(c)


def matmul(a, b) -> Array:
    """Matrix product with a fixed left-to-right summation order over K.

    Accumulating K rank-1 updates in index order keeps the result
    bit-identical to the naive triple loop and independent of worker count
    (BLAS would reassociate the sum under threading).  The leading operand
    may carry extra leading axes, which are flattened into rows.
    """
    a = _as_tensor(a)
    b = _as_tensor(b)
    if b.ndim != 2:
        raise ShapeMismatchError(f"matmul: right operand must be 2-D, got {b.shape}")
    lead = a.shape[:-1]
    k = a.shape[-1]
    if k != b.shape[0]:
        raise ShapeMismatchError(
            f"matmul: inner extents {a.shape} x {b.shape} do not agree"
        )
    rows = a.reshape(-1, k)
    out = np.zeros((rows.shape[0], b.shape[1]), dtype=np.float64)
    for i in range(k):
        out += rows[:, i : i + 1] * b[i : i + 1, :]
    return out.reshape(*lead, b.shape[1])


def sigmoid(x) -> Array:
    """Logistic function 1 / (1 + exp(-x)), saturation-safe."""
    return expit(_as_tensor(x))


def bernoulli_sample(p, rng: Rng, pool: WorkerPool | None = None) -> Array:
    """0/1 tensor, each element 1 with its probability in ``p``."""
    p = _as_tensor(p)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("bernoulli_sample: probabilities must lie in [0, 1]")
    u = rng.uniforms(p.size, pool).reshape(p.shape)
    return (u < p).astype(np.float64)


def reduce(op: str, x, axes=None):
    """sum / mean / l2_norm over the given axes (all axes when None)."""
    x = _as_tensor(x)
    if axes is not None:
        axes = tuple(np.atleast_1d(axes).tolist())
        for ax in axes:
            if not -x.ndim <= ax < x.ndim:
                raise ValueError(f"reduce: axis {ax} invalid for shape {x.shape}")
    if op == "sum":
        return np.sum(x, axis=axes)
    if op == "mean":
        count = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
        if count == 0:
            raise ValueError("reduce: mean over an empty axis is undefined")
        return np.mean(x, axis=axes)
    if op == "l2_norm":
        return np.sqrt(np.sum(x * x, axis=axes))
    raise ValueError(f"unknown reduction {op!r}")


def save_tensor(x, path) -> None:
    """Write a tensor as CSV: one row per leading slice, 17 significant digits."""
    x = _as_tensor(x)
    rows = x.reshape(-1, x.shape[-1]) if x.ndim > 1 else x.reshape(1, -1)
    with open(path, "w") as fh:
        fh.write("# shape: " + ",".join(str(d) for d in x.shape) + "\n")
        for row in rows:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def load_tensor(path) -> Array:
    """Inverse of :func:`save_tensor`; round-trips bit-exactly."""
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# shape:"):
            raise ValueError(f"{path}:1: missing '# shape:' header")
        shape = tuple(int(s) for s in header.split(":", 1)[1].split(","))
        values = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                values.extend(float(v) for v in line.split(","))
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: {err}") from None
    n = int(np.prod(shape))
    if len(values) != n:
        raise ValueError(f"{path}: expected {n} values for shape {shape}, got {len(values)}")
    return np.array(values, dtype=np.float64).reshape(shape)
