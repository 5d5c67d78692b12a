"""Spiking neuron dynamics: sequential LIF oracle and the parallel estimator.

The sequential path is the ground truth: a hard-reset LIF recurrence that
must walk time step by step.  The parallel path replaces the unavailable
membrane history with a Bernoulli estimate derived from the input current,
which makes every time step computable at once; step 0 needs no history and
is always exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scipy.special import expit

from . import numerics
from .numerics import Array, Rng, ShapeMismatchError, WorkerPool

MODES = ("sampled", "expectation")


@dataclass
class NeuronParams:
    """Per-layer neuron constants; v_th is the learnable one."""

    tau_m: float = 0.25
    v_th: float = 1.0
    v_r: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.tau_m <= 1.0:
            raise ValueError(f"tau_m must lie in (0, 1], got {self.tau_m}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.v_r != 0.0:
            raise ValueError("hard reset to v_r = 0 is the only supported reset")


@dataclass
class ParallelTrace:
    """All intermediates of one parallel forward pass, shape [T, B, N] each."""

    I: Array
    P: Array
    b: Array
    u_hat: Array
    h: Array
    u: Array
    o: Array

    def __iter__(self):
        return iter((self.I, self.P, self.b, self.u_hat, self.h, self.u, self.o))


def heaviside(h, v_th: float) -> Array:
    """Spike indicator: 1.0 where h >= v_th, else 0.0 (ties fire)."""
    return (np.asarray(h, dtype=np.float64) >= v_th).astype(np.float64)


def _check_3d(I: Array) -> Array:
    I = np.asarray(I, dtype=np.float64)
    if I.ndim != 3:
        raise ShapeMismatchError(f"expected [T, B, N] input, got shape {I.shape}")
    if I.shape[0] < 1:
        raise ValueError("need at least one time step")
    return I


def lif_sequential(I, params: NeuronParams) -> tuple[Array, Array]:
    """Ground-truth hard-reset LIF recurrence, O(T) along time.

    u_t = (tau_m * u_{t-1} + I_t) * (1 - spike_t), with u_{-1} = 0 and
    spike_t = heaviside(tau_m * u_{t-1} + I_t, v_th).
    """
    I = _check_3d(I)
    T = I.shape[0]
    u = np.empty_like(I)
    o = np.empty_like(I)
    u_prev = np.zeros(I.shape[1:], dtype=np.float64)
    for t in range(T):
        h = params.tau_m * u_prev + I[t]
        o[t] = heaviside(h, params.v_th)
        u[t] = h * (1.0 - o[t])
        u_prev = u[t]
    return u, o


def estimate_u_hat(
    I,
    mode: str = "sampled",
    rng: Rng | None = None,
    pool: WorkerPool | None = None,
) -> tuple[Array, Array, Array]:
    """Estimate the membrane potential from the input current alone.

    Spike probability P = sigmoid(I); the estimate is (1 - b) * I where b is
    a Bernoulli(P) draw (an estimated spike resets the potential to zero).
    Expectation mode substitutes b := P for a deterministic, seed-free path.
    """
    I = np.asarray(I, dtype=np.float64)
    P = numerics.sigmoid(I)
    if mode == "sampled":
        if rng is None:
            raise ValueError("sampled mode requires an Rng")
        b = numerics.bernoulli_sample(P, rng, pool)
    elif mode == "expectation":
        b = P
    else:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    u_hat = (1.0 - b) * I
    return P, b, u_hat


def parallel_update(I: Array, u_hist: Array, params: NeuronParams) -> tuple[Array, Array, Array]:
    """One-shot update for all time steps given a (shifted) membrane history.

    ``u_hist[t]`` stands in for the membrane potential at t-1; every row is
    independent of the others, so depth along T is constant.
    Returns (h, u, o).
    """
    if u_hist.shape != I.shape:
        raise ShapeMismatchError(
            f"history shape {u_hist.shape} does not match input {I.shape}"
        )
    h = params.tau_m * u_hist + I
    o = heaviside(h, params.v_th)
    u = h * (1.0 - o)
    return h, u, o


def shift_time(x: Array) -> Array:
    """Delay by one step along T: out[0] = 0, out[t] = x[t-1]."""
    out = np.zeros_like(x)
    out[1:] = x[:-1]
    return out


def mpe_psn_forward(
    I,
    params: NeuronParams,
    mode: str = "sampled",
    rng: Rng | None = None,
    pool: WorkerPool | None = None,
) -> ParallelTrace:
    """Parallel forward pass over all T time steps at once.

    The estimate for step t-1 feeds step t; step 0 consumes no history
    (zero), so its output coincides with the sequential oracle exactly.
    """
    I = _check_3d(I)
    if pool is not None and pool.workers > 1:
        return _mpe_psn_forward_pooled(I, params, mode, rng, pool)
    P, b, u_hat = estimate_u_hat(I, mode, rng)
    h, u, o = parallel_update(I, shift_time(u_hat), params)
    return ParallelTrace(I=I, P=P, b=b, u_hat=u_hat, h=h, u=u, o=o)


def _mpe_psn_forward_pooled(
    I: Array, params: NeuronParams, mode: str, rng: Rng | None, pool: WorkerPool
) -> ParallelTrace:
    """Pool-partitioned variant; bit-identical to the single-worker path."""
    if mode == "sampled" and rng is None:
        raise ValueError("sampled mode requires an Rng")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    n = I.size
    flat_I = I.reshape(-1)
    P = np.empty(n)
    b = np.empty(n)
    u_hat = np.empty(n)
    uniforms = rng.uniforms(n, pool) if mode == "sampled" else None

    def estimate_range(lo: int, hi: int) -> None:
        sl = slice(lo, hi)
        expit(flat_I[sl], out=P[sl])
        if mode == "sampled":
            b[sl] = (uniforms[sl] < P[sl]).astype(np.float64)
        else:
            b[sl] = P[sl]
        np.subtract(1.0, b[sl], out=u_hat[sl])
        np.multiply(u_hat[sl], flat_I[sl], out=u_hat[sl])

    pool.map_ranges(n, estimate_range)

    stride = I.shape[1] * I.shape[2]
    h = np.empty(n)
    u = np.empty(n)
    o = np.empty(n)

    def update_range(lo: int, hi: int) -> None:
        sl = slice(lo, hi)
        if lo < stride:
            head = slice(lo, min(hi, stride))
            h[head] = flat_I[head]
        if hi > stride:
            tail = slice(max(lo, stride), hi)
            shifted = slice(max(lo, stride) - stride, hi - stride)
            np.multiply(u_hat[shifted], params.tau_m, out=h[tail])
            np.add(h[tail], flat_I[tail], out=h[tail])
        o[sl] = (h[sl] >= params.v_th).astype(np.float64)
        np.subtract(1.0, o[sl], out=u[sl])
        np.multiply(u[sl], h[sl], out=u[sl])

    pool.map_ranges(n, update_range)
    shape = I.shape
    return ParallelTrace(
        I=I,
        P=P.reshape(shape),
        b=b.reshape(shape),
        u_hat=u_hat.reshape(shape),
        h=h.reshape(shape),
        u=u.reshape(shape),
        o=o.reshape(shape),
    )


def teacher_forced_forward(I, u_true, params: NeuronParams) -> tuple[Array, Array]:
    """Parallel update fed with the exact membrane history instead of the estimate.

    With the true history substituted, the parallel update reproduces the
    sequential oracle exactly at every time step; this isolates the error
    contributed by the estimator alone.
    """
    I = _check_3d(I)
    u_true = np.asarray(u_true, dtype=np.float64)
    if u_true.shape != I.shape:
        raise ShapeMismatchError(
            f"oracle membrane shape {u_true.shape} does not match input {I.shape}"
        )
    _, u, o = parallel_update(I, shift_time(u_true), params)
    return u, o


def estimation_error(u_hat, u) -> Array:
    """Per-element squared difference between estimate and corrected value."""
    u_hat = np.asarray(u_hat, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if u_hat.shape != u.shape:
        raise ShapeMismatchError(f"shapes {u_hat.shape} and {u.shape} differ")
    d = u_hat - u
    return d * d
