"""Property suites behind the `verify` subcommand (and the test suite).

Each check runs many randomized trials against an independent oracle (the
sequential recurrence, or central finite differences) and reports failures
with enough context to reproduce them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd, neuron
from .autograd import Var
from .numerics import Rng

FAULTS = ("u0-shift",)


@dataclass
class CheckResult:
    name: str
    trials: int
    failures: int
    max_err: float = 0.0
    details: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        out = f"{status} {self.name}: {self.trials} trials, {self.failures} failures"
        if self.max_err:
            out += f", max_err={self.max_err:.3g}"
        return out

    def csv_row(self) -> str:
        return f"{self.name},{self.trials},{self.failures},{format(self.max_err, '.17g')},{'pass' if self.passed else 'fail'}"


CSV_HEADER = "check,trials,failures,max_err,status"


def _random_case(rng: Rng, trial: int):
    """Random (I, params) from the acceptance input family."""
    r = rng.spawn(trial)
    dims = r.uniforms(3)
    T = 1 + int(dims[0] * 8)
    B = 1 + int(dims[1] * 4)
    N = 1 + int(dims[2] * 64)
    I = r.spawn(1).uniform_tensor((T, B, N), -2.0, 2.0)
    return I, neuron.NeuronParams()


def check_t0_exactness(trials: int = 1000, seed: int = 0, inject_fault: str | None = None) -> CheckResult:
    """Row 0 of the parallel pass must equal the sequential oracle exactly."""
    if inject_fault is not None and inject_fault not in FAULTS:
        raise ValueError(f"unknown fault {inject_fault!r}")
    rng = Rng(seed, stream=101)
    res = CheckResult("t0_exactness", trials, 0)
    for trial in range(trials):
        I, params = _random_case(rng, trial)
        u_seq, o_seq = neuron.lif_sequential(I, params)
        sample_rng = rng.spawn(10_000 + trial)
        if inject_fault == "u0-shift":
            # test hook: mis-set the t=0 history to the estimate instead of 0
            _, _, u_hat = neuron.estimate_u_hat(I, "sampled", sample_rng)
            hist = neuron.shift_time(u_hat)
            hist[0] = u_hat[0]
            _, u, o = neuron.parallel_update(I, hist, params)
        else:
            tr = neuron.mpe_psn_forward(I, params, "sampled", sample_rng)
            u, o = tr.u, tr.o
        if not (np.array_equal(u[0], u_seq[0]) and np.array_equal(o[0], o_seq[0])):
            res.failures += 1
            if len(res.details) < 5:
                res.details.append(f"trial {trial}: shape {I.shape}, seed {seed}")
    return res


def check_teacher_forced(trials: int = 1000, seed: int = 0) -> CheckResult:
    """Teacher forcing must reproduce the sequential oracle at every step."""
    rng = Rng(seed, stream=102)
    res = CheckResult("teacher_forced_equivalence", trials, 0)
    for trial in range(trials):
        I, params = _random_case(rng, trial)
        u_seq, o_seq = neuron.lif_sequential(I, params)
        u, o = neuron.teacher_forced_forward(I, u_seq, params)
        if not (np.array_equal(u, u_seq) and np.array_equal(o, o_seq)):
            res.failures += 1
            if len(res.details) < 5:
                res.details.append(f"trial {trial}: shape {I.shape}, seed {seed}")
    return res


def check_reset_law(trials: int = 200, seed: int = 0) -> CheckResult:
    """Fired positions reset to 0, silent ones keep h; spikes are binary."""
    rng = Rng(seed, stream=103)
    res = CheckResult("reset_law_and_binary_spikes", trials, 0)
    for trial in range(trials):
        I, params = _random_case(rng, trial)
        tr = neuron.mpe_psn_forward(I, params, "sampled", rng.spawn(20_000 + trial))
        u_seq, o_seq = neuron.lif_sequential(I, params)
        ok = (
            np.all(np.isin(tr.o, (0.0, 1.0)))
            and np.all(np.isin(tr.b, (0.0, 1.0)))
            and np.all(tr.u[tr.o == 1.0] == 0.0)
            and np.array_equal(tr.u[tr.o == 0.0], tr.h[tr.o == 0.0])
            and np.all(np.isin(o_seq, (0.0, 1.0)))
        )
        if not ok:
            res.failures += 1
            if len(res.details) < 5:
                res.details.append(f"trial {trial}: shape {I.shape}, seed {seed}")
    return res


def _random_smooth_graph(r: Rng):
    """Scalar-valued smooth composite (matmul / sigmoid / products / means)."""
    dims = r.uniforms(3)
    m = 1 + int(dims[0] * 4)
    k = 1 + int(dims[1] * 4)
    p = 1 + int(dims[2] * 4)
    x = autograd.parameter(r.spawn(1).uniform_tensor((m, k), -1.0, 1.0), "x")
    w = autograd.parameter(r.spawn(2).uniform_tensor((k, p), -1.0, 1.0), "w")
    target = r.spawn(3).uniform_tensor((m, p), -1.0, 1.0)

    def fn() -> Var:
        y = autograd.sigmoid(autograd.matmul(x, w))
        d = y - target
        return autograd.vmean(d * d)

    return fn, [x, w]


def check_gradients(graphs: int = 100, seed: int = 0, step: float = 1e-5, tol: float = 1e-4) -> CheckResult:
    """Tape gradients vs central finite differences on smooth graphs."""
    rng = Rng(seed, stream=104)
    res = CheckResult("gradient_vs_finite_difference", graphs, 0)
    for trial in range(graphs):
        fn, params = _random_smooth_graph(rng.spawn(trial))
        rel, skipped = autograd.finite_diff_check(fn, params, step)
        res.max_err = max(res.max_err, rel)
        if rel >= tol or skipped:
            res.failures += 1
            if len(res.details) < 5:
                res.details.append(f"graph {trial}: rel={rel:.3g}, skipped={skipped}")
    return res


def check_surrogate_chain() -> CheckResult:
    """One-neuron, one-step chain has gradient surrogate(w*x) * x = 0.8 exactly."""
    w = autograd.parameter(np.asarray(1.2), "w")
    v_th = Var(np.asarray(1.0))
    x = 1.0
    o = autograd.spike(w * x, v_th, alpha=1.0)
    autograd.backward(o)
    got = float(np.asarray(w.grad))
    res = CheckResult("surrogate_chain_hand_value", 1, 0 if got == 0.8 else 1)
    if res.failures:
        res.details.append(f"expected 0.8, got {got!r}")
    res.max_err = abs(got - 0.8)
    return res


def run_all(trials: int = 1000, seed: int = 0, inject_fault: str | None = None) -> list[CheckResult]:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return [
        check_t0_exactness(trials, seed, inject_fault),
        check_teacher_forced(trials, seed),
        check_reset_law(min(trials, 200), seed),
        check_gradients(100, seed),
        check_surrogate_chain(),
    ]
