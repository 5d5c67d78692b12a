"""Parallel spiking neurons via membrane-potential estimation.

Public surface: tensor/RNG primitives (:mod:`mpepsn.numerics`), neuron
dynamics (:mod:`mpepsn.neuron`), the reverse-mode tape
(:mod:`mpepsn.autograd`), losses, the :class:`SpikingClassifier` estimator,
synthetic datasets, and the speed benchmark.
"""

from .autograd import ParamRegistry, Var, backward, finite_diff_check, sgd_step, surrogate_grad
from .datagen import DatasetSpec, LabeledBatch, generate
from .losses import MemLossConfig, cls_loss, mem_loss, total_loss
from .network import EpochDiagnostics, LinearSynapse, SpikingClassifier, train
from .neuron import (
    NeuronParams,
    ParallelTrace,
    estimate_u_hat,
    estimation_error,
    heaviside,
    lif_sequential,
    mpe_psn_forward,
    teacher_forced_forward,
)
from .numerics import Rng, WorkerPool, bernoulli_sample, matmul, reduce, sigmoid

__all__ = [
    "ParamRegistry", "Var", "backward", "finite_diff_check", "sgd_step",
    "surrogate_grad", "DatasetSpec", "LabeledBatch", "generate",
    "MemLossConfig", "cls_loss", "mem_loss", "total_loss",
    "EpochDiagnostics", "LinearSynapse", "SpikingClassifier", "train",
    "NeuronParams", "ParallelTrace", "estimate_u_hat", "estimation_error",
    "heaviside", "lif_sequential", "mpe_psn_forward", "teacher_forced_forward",
    "Rng", "WorkerPool", "bernoulli_sample", "matmul", "reduce", "sigmoid",
]

__version__ = "0.1.0"
