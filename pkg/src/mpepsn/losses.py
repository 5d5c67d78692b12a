"""Training losses: membrane-approximation term, time-mean cross-entropy, blend.

The membrane term weights the estimate/true mismatch with a learnable
non-negative vector kappa along a configurable axis (per time step by
default), then sums across spiking layers.  The classification term is
cross-entropy applied at every time step and averaged over T.  The two are
blended as (1 - lambda) * L_cls + lambda * L_mem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd
from .autograd import Var, as_var
from .numerics import Array, ShapeMismatchError

KAPPA_AXES = ("time", "neuron")


@dataclass
class MemLossConfig:
    """Configuration of the membrane-approximation loss."""

    lam: float = 0.01
    kappa_axis: str = "time"
    kappa_init: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.kappa_axis not in KAPPA_AXES:
            raise ValueError(f"kappa_axis must be one of {KAPPA_AXES}")

    def kappa_length(self, T: int, N: int) -> int:
        return T if self.kappa_axis == "time" else N

    def init_kappa(self, T: int, N: int) -> Array:
        return np.full(self.kappa_length(T, N), float(self.kappa_init))


def mem_loss(u_hat, u_target, kappa, cfg: MemLossConfig) -> Var:
    """Kappa-weighted MSE between estimated and corrected membrane potential.

    The MSE is a mean over every axis not indexed by kappa, so the magnitude
    is insensitive to batch size and width; kappa then weights and sums.
    Gradient flows into both arguments: through the estimate directly, and
    through the corrected potential via the reset product's surrogate (a
    detached target chases its own tail, since moving the estimate moves the
    corrected value with it; pass an explicitly detached Var to freeze it).
    """
    u_hat, u_target, kappa = as_var(u_hat), as_var(u_target), as_var(kappa)
    if u_hat.shape != u_target.shape:
        raise ShapeMismatchError(
            f"mem_loss: shapes {u_hat.shape} and {u_target.shape} differ"
        )
    T, _, N = u_hat.shape
    expected = cfg.kappa_length(T, N)
    if kappa.shape != (expected,):
        raise ShapeMismatchError(
            f"mem_loss: kappa length {kappa.shape} does not match "
            f"{cfg.kappa_axis} extent {expected}"
        )
    d = u_hat - u_target
    mse_axes = (1, 2) if cfg.kappa_axis == "time" else (0, 1)
    per_index = autograd.vmean(d * d, axis=mse_axes)
    return autograd.vsum(kappa * per_index)


def cls_loss(logits, labels) -> Var:
    """Cross-entropy at every time step, averaged over T (and the batch)."""
    logits = as_var(logits)
    if logits.value.ndim != 3:
        raise ShapeMismatchError(f"cls_loss: expected [T, B, K] logits, got {logits.shape}")
    T, B, K = logits.shape
    if K < 2:
        raise ValueError(f"cls_loss: need at least 2 classes, got {K}")
    labels = np.asarray(labels)
    if labels.shape != (B,):
        raise ShapeMismatchError(f"cls_loss: expected {B} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"cls_loss: labels must lie in [0, {K})")
    labels = labels.astype(np.int64)

    z = logits.value
    zmax = z.max(axis=2, keepdims=True)
    ez = np.exp(z - zmax)
    softmax = ez / ez.sum(axis=2, keepdims=True)
    log_probs = (z - zmax) - np.log(ez.sum(axis=2, keepdims=True))
    picked = log_probs[:, np.arange(B), labels]
    value = -picked.mean()

    def backward(g):
        onehot = np.zeros_like(z)
        onehot[:, np.arange(B), labels] = 1.0
        return (g * (softmax - onehot) / (T * B),)

    return Var(value, parents=(logits,), backward=backward)


def total_loss(l_cls, l_mem, lam: float):
    """(1 - lambda) * classification + lambda * membrane approximation."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if lam == 0.0:
        return l_cls
    if lam == 1.0:
        return l_mem
    return (1.0 - lam) * l_cls + lam * l_mem
