"""Spiking layers and a small sklearn-style temporal classifier.

A model is a chain of (linear synapse, spiking neuron) pairs followed by a
non-spiking linear readout that emits logits per time step.  The neuron in
each pair is either the parallel estimator or the sequential LIF oracle;
both are differentiated with the same triangular surrogate.  Training is
full-batch SGD with momentum on the blended loss, deterministic per seed.

``SpikingClassifier`` follows scikit-learn conventions (constructor stores
hyperparameters verbatim, ``fit``/``predict``/``score``, ``get_params``),
except that inputs are [T, B, N] temporal tensors rather than 2-D matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd, losses, neuron, numerics
from .autograd import ParamRegistry, Var
from .losses import MemLossConfig
from .numerics import Array, Rng, ShapeMismatchError

NEURON_KINDS = ("mpe_psn", "lif_sequential")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the diagnostics gathered so far."""

    def __init__(self, epoch: int, history):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch
        self.history = list(history)


@dataclass
class LinearSynapse:
    """Dense synaptic weights (and optional bias) as tape parameters."""

    W: Var
    bias: Var | None = None

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]


def synapse_forward(o_prev: Var, syn: LinearSynapse, delay: int = 0) -> Var:
    """Input current from presynaptic spikes: I = W . o (same step or delayed).

    delay=1 uses the previous step's spikes with an empty history at t = 0.
    """
    if delay not in (0, 1):
        raise ValueError(f"synaptic delay must be 0 or 1, got {delay}")
    o_prev = autograd.as_var(o_prev)
    if o_prev.shape[-1] != syn.n_in:
        raise ShapeMismatchError(
            f"synapse expects {syn.n_in} inputs, got {o_prev.shape[-1]}"
        )
    if delay == 1:
        o_prev = autograd.shift_time(o_prev)
    I = autograd.matmul(o_prev, syn.W)
    if syn.bias is not None:
        I = I + syn.bias
    return I


@dataclass
class TapeTrace:
    """Tape handles plus raw values for one spiking layer's forward pass."""

    u_hat: Var
    h: Var
    u: Var
    o: Var
    P: Array
    b: Array

    def values(self, I: Array) -> neuron.ParallelTrace:
        return neuron.ParallelTrace(
            I=I,
            P=self.P,
            b=self.b,
            u_hat=self.u_hat.value,
            h=self.h.value,
            u=self.u.value,
            o=self.o.value,
        )


def mpe_psn_tape_forward(
    I: Var, v_th: Var, tau_m: float, alpha: float, mode: str, rng: Rng | None
) -> TapeTrace:
    """Differentiable parallel forward pass.

    Sampled mode treats the Bernoulli draw as a constant (straight-through);
    expectation mode is fully differentiable through the spike probability.
    """
    if mode == "sampled":
        P = numerics.sigmoid(I.value)
        b = numerics.bernoulli_sample(P, rng)
        u_hat = autograd.straight_through(I, b)
    elif mode == "expectation":
        P_var = autograd.sigmoid(I)
        P = P_var.value
        b = P
        u_hat = (1.0 - P_var) * I
    else:
        raise ValueError(f"unknown mode {mode!r}")
    h = tau_m * autograd.shift_time(u_hat) + I
    o = autograd.spike(h, v_th, alpha)
    u = h * (1.0 - o)
    return TapeTrace(u_hat=u_hat, h=h, u=u, o=o, P=P, b=b)


def lif_tape_forward(I: Var, v_th: Var, tau_m: float, alpha: float) -> tuple[Var, Var]:
    """Differentiable sequential LIF recurrence (backprop through time)."""
    T = I.shape[0]
    u_prev = Var(np.zeros(I.shape[1:], dtype=np.float64))
    us, os_ = [], []
    for t in range(T):
        h = tau_m * u_prev + autograd.slice_time(I, t)
        o = autograd.spike(h, v_th, alpha)
        u = h * (1.0 - o)
        us.append(u)
        os_.append(o)
        u_prev = u
    return autograd.stack_time(us), autograd.stack_time(os_)


@dataclass
class EpochDiagnostics:
    """Per-epoch training record mirrored into the training-log CSV."""

    epoch: int
    loss_cls: float
    loss_mem: float
    loss_total: float
    train_acc: float
    test_acc: float
    l2_norms: list[float] = field(default_factory=list)
    spike_rates: list[float] = field(default_factory=list)

    @staticmethod
    def csv_header(n_layers: int) -> str:
        cols = ["epoch", "loss_cls", "loss_mem", "loss_total", "train_acc", "test_acc"]
        cols += [f"l2_norm_layer_{i}" for i in range(n_layers)]
        cols += [f"spike_rate_layer_{i}" for i in range(n_layers)]
        return ",".join(cols)

    def csv_row(self) -> str:
        vals = [self.loss_cls, self.loss_mem, self.loss_total, self.train_acc, self.test_acc]
        vals += self.l2_norms + self.spike_rates
        return ",".join([str(self.epoch)] + [format(v, ".17g") for v in vals])


def diagnostics(traces, logits: Array, labels) -> tuple[list[float], list[float], float]:
    """Per-layer estimation L2 norm, per-layer spike rate (%), and accuracy.

    The L2 norm is over all elements of (u_hat - u); the spike rate is
    100 * mean(o); accuracy comes from the argmax of time-averaged logits.
    """
    l2_norms = [float(numerics.reduce("l2_norm", tr.u_hat - tr.u)) for tr in traces]
    rates = [100.0 * float(np.mean(tr.o)) for tr in traces]
    acc = accuracy(logits, labels)
    return l2_norms, rates, acc


def accuracy(logits: Array, labels) -> float:
    preds = np.argmax(np.mean(logits, axis=0), axis=1)
    return float(np.mean(preds == np.asarray(labels)))


class SpikingClassifier:
    """Temporal classifier built from spiking layers, sklearn-style.

    Parameters
    ----------
    hidden_sizes : tuple of int
        Width of each spiking layer.
    neuron_kind : {"mpe_psn", "lif_sequential"}
        Forward dynamics of every spiking layer.
    mode : {"sampled", "expectation"}
        Estimator mode used during training (evaluation always runs in
        expectation mode so predictions are seed-free).
    lam : float
        Blend weight of the membrane-approximation loss; 0 disables it.
    synaptic_delay : {0, 1}
        0 couples layers within the same time step; 1 delays spikes one step.
    """

    def __init__(
        self,
        hidden_sizes=(32,),
        neuron_kind: str = "mpe_psn",
        tau_m: float = 0.25,
        v_th_init: float = 1.0,
        alpha: float = 1.0,
        mode: str = "sampled",
        synaptic_delay: int = 0,
        lam: float = 0.01,
        kappa_axis: str = "time",
        kappa_init: float = 1.0,
        epochs: int = 200,
        lr: float = 0.1,
        momentum: float = 0.9,
        seed: int = 0,
    ):
        self.hidden_sizes = tuple(hidden_sizes)
        self.neuron_kind = neuron_kind
        self.tau_m = tau_m
        self.v_th_init = v_th_init
        self.alpha = alpha
        self.mode = mode
        self.synaptic_delay = synaptic_delay
        self.lam = lam
        self.kappa_axis = kappa_axis
        self.kappa_init = kappa_init
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.seed = seed

    _PARAM_NAMES = (
        "hidden_sizes", "neuron_kind", "tau_m", "v_th_init", "alpha", "mode",
        "synaptic_delay", "lam", "kappa_axis", "kappa_init", "epochs", "lr",
        "momentum", "seed",
    )

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "SpikingClassifier":
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ValueError(f"invalid parameter {name!r} for SpikingClassifier")
            setattr(self, name, value)
        return self

    # -- model construction -------------------------------------------------

    def _build(self, T: int, n_in: int, n_classes: int) -> None:
        if self.neuron_kind not in NEURON_KINDS:
            raise ValueError(f"neuron_kind must be one of {NEURON_KINDS}")
        neuron.NeuronParams(tau_m=self.tau_m, v_th=self.v_th_init, alpha=self.alpha)
        self.mem_cfg_ = MemLossConfig(
            lam=self.lam, kappa_axis=self.kappa_axis, kappa_init=self.kappa_init
        )
        self.registry_ = ParamRegistry()
        self.n_classes_ = n_classes
        self.n_in_ = n_in
        init_rng = Rng(self.seed).spawn(0)
        widths = [n_in, *self.hidden_sizes]
        self.synapses_ = []
        self.v_ths_ = []
        self.kappas_ = []
        for i, (np_, n) in enumerate(zip(widths[:-1], widths[1:])):
            bound = float(np.sqrt(1.0 / np_))
            W = Var(init_rng.spawn(2 * i + 1).uniform_tensor((np_, n), -bound, bound))
            self.registry_.register(f"w_{i}", W)
            syn = LinearSynapse(W=W)
            self.synapses_.append(syn)
            v_th = Var(np.asarray(float(self.v_th_init)))
            self.registry_.register(f"v_th_{i}", v_th)
            self.v_ths_.append(v_th)
            kappa = Var(self.mem_cfg_.init_kappa(T, n))
            self.registry_.register(f"kappa_{i}", kappa, clamp_min=0.0)
            self.kappas_.append(kappa)
        bound = float(np.sqrt(1.0 / widths[-1]))
        W_out = Var(init_rng.spawn(999).uniform_tensor((widths[-1], n_classes), -bound, bound))
        self.registry_.register("w_out", W_out)
        self.readout_ = LinearSynapse(W=W_out)

    # -- forward ------------------------------------------------------------

    def model_forward(self, x, mode: str | None = None, rng: Rng | None = None):
        """Logits Var [T, B, K] and the tape trace of every spiking layer."""
        x = autograd.as_var(np.asarray(x, dtype=np.float64))
        mode = self.mode if mode is None else mode
        traces: list[TapeTrace] = []
        currents: list[Var] = []
        o_prev = x
        for i, syn in enumerate(self.synapses_):
            I = synapse_forward(o_prev, syn, self.synaptic_delay)
            currents.append(I)
            if self.neuron_kind == "mpe_psn":
                layer_rng = rng.spawn(i) if rng is not None else None
                tr = mpe_psn_tape_forward(
                    I, self.v_ths_[i], self.tau_m, self.alpha, mode, layer_rng
                )
                traces.append(tr)
                o_prev = tr.o
            else:
                u, o = lif_tape_forward(I, self.v_ths_[i], self.tau_m, self.alpha)
                traces.append(TapeTrace(u_hat=u, h=u, u=u, o=o, P=o.value, b=o.value))
                o_prev = o
        logits = synapse_forward(o_prev, self.readout_, delay=0)
        return logits, traces, currents

    # -- training -----------------------------------------------------------

    def fit(self, x, y, x_test=None, y_test=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ShapeMismatchError(f"expected [T, B, N] input, got shape {x.shape}")
        y = np.asarray(y, dtype=np.int64)
        n_classes = int(y.max()) + 1 if y.size else 2
        n_classes = max(n_classes, 2)
        self._build(x.shape[0], x.shape[2], n_classes)
        sample_rng = Rng(self.seed).spawn(1)
        self.history_ = []
        use_mem = self.lam > 0.0 and self.neuron_kind == "mpe_psn"
        for epoch in range(1, self.epochs + 1):
            logits, traces, currents = self.model_forward(x, self.mode, sample_rng)
            l_cls = losses.cls_loss(logits, y)
            l_mem = Var(np.asarray(0.0))
            if self.neuron_kind == "mpe_psn":
                for tr, kappa in zip(traces, self.kappas_):
                    l_mem = l_mem + losses.mem_loss(tr.u_hat, tr.u, kappa, self.mem_cfg_)
            loss = losses.total_loss(l_cls, l_mem if use_mem else autograd.detach(l_mem), self.lam)
            l2_norms, rates, train_acc = diagnostics(
                [tr.values(I.value) for tr, I in zip(traces, currents)], logits.value, y
            )
            test_acc = self.score(x_test, y_test) if x_test is not None else float("nan")
            diag = EpochDiagnostics(
                epoch=epoch,
                loss_cls=float(l_cls.value),
                loss_mem=float(l_mem.value),
                loss_total=float(loss.value),
                train_acc=train_acc,
                test_acc=test_acc,
                l2_norms=l2_norms,
                spike_rates=rates,
            )
            if not np.isfinite(diag.loss_total):
                raise TrainingDivergedError(epoch, self.history_)
            self.history_.append(diag)
            self.registry_.zero_grad()
            autograd.backward(loss)
            self.registry_.sgd_step(self.lr, self.momentum)
        return self

    # -- inference ----------------------------------------------------------

    def predict_logits(self, x) -> Array:
        self._check_fitted()
        logits, _, _ = self.model_forward(x, mode="expectation")
        return logits.value

    def predict(self, x) -> Array:
        logits = self.predict_logits(x)
        return np.argmax(np.mean(logits, axis=0), axis=1)

    def score(self, x, y) -> float:
        return float(np.mean(self.predict(x) == np.asarray(y)))

    def _check_fitted(self) -> None:
        if not hasattr(self, "registry_"):
            raise RuntimeError("this SpikingClassifier instance is not fitted yet")


def train(model: SpikingClassifier, train_batch, test_batch=None):
    """Fit ``model`` on a labeled batch and return the per-epoch diagnostics."""
    if test_batch is not None:
        model.fit(train_batch.x, train_batch.y, test_batch.x, test_batch.y)
    else:
        model.fit(train_batch.x, train_batch.y)
    return model.history_


def write_training_log(history, n_layers: int, path) -> None:
    lines = [EpochDiagnostics.csv_header(n_layers)]
    lines += [d.csv_row() for d in history]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
