import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpepsn import numerics
from mpepsn.numerics import (
    Rng,
    ShapeMismatchError,
    WorkerPool,
    bernoulli_sample,
    elementwise,
    load_tensor,
    matmul,
    reduce,
    save_tensor,
    sigmoid,
)


def naive_matmul(a, b):
    """Independent triple-loop oracle with left-to-right summation over K."""
    m, k = a.shape
    k2, p = b.shape
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            acc = 0.0
            for kk in range(k):
                acc += a[i, kk] * b[kk, j]
            out[i, j] = acc
    return out


class TestElementwise:
    def test_mul(self):
        np.testing.assert_array_equal(
            elementwise("mul", [1.0, 2.0, 3.0], [4.0, 5.0, 6.0]), [4.0, 10.0, 18.0]
        )

    def test_add_zero_identity(self):
        x = Rng(0).uniform_tensor((3, 4), -1, 1)
        np.testing.assert_array_equal(elementwise("add", x, 0.0), x)

    def test_scale(self):
        np.testing.assert_array_equal(elementwise("scale-by-scalar", [0.5], 2.0), [1.0])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            elementwise("add", np.zeros(3), np.zeros(4))

    def test_unknown_op_rejected(self):
        with pytest.raises(ValueError):
            elementwise("div", [1.0], [2.0])


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), a), a)

    def test_direct(self):
        out = matmul([[1.0, 0.0], [0.0, 0.0]], [[5.0], [7.0]])
        np.testing.assert_array_equal(out, [[5.0], [0.0]])

    def test_random_8x8_vs_oracle_exact(self):
        r = Rng(3)
        a = r.spawn(0).uniform_tensor((8, 8), -2, 2)
        b = r.spawn(1).uniform_tensor((8, 8), -2, 2)
        np.testing.assert_array_equal(matmul(a, b), naive_matmul(a, b))

    @settings(max_examples=25, deadline=None)
    @given(
        m=st.integers(1, 16), k=st.integers(1, 16), p=st.integers(1, 16),
        seed=st.integers(0, 2**32),
    )
    def test_oracle_equivalence_up_to_16(self, m, k, p, seed):
        r = Rng(seed)
        a = r.spawn(0).uniform_tensor((m, k), -2, 2)
        b = r.spawn(1).uniform_tensor((k, p), -2, 2)
        np.testing.assert_array_equal(matmul(a, b), naive_matmul(a, b))

    def test_inner_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            matmul(np.zeros((2, 3)), np.zeros((4, 2)))

    def test_leading_axes_flattened(self):
        a = Rng(4).uniform_tensor((5, 2, 3), -1, 1)
        w = Rng(5).uniform_tensor((3, 4), -1, 1)
        out = matmul(a, w)
        assert out.shape == (5, 2, 4)
        np.testing.assert_array_equal(out[2], matmul(a[2], w))


class TestSigmoid:
    def test_zero(self):
        assert sigmoid(0.0) == 0.5

    def test_saturation(self):
        assert abs(sigmoid(50.0) - 1.0) < 1e-15
        assert sigmoid(-50.0) < 1e-15

    def test_symmetry(self):
        x = Rng(7).uniform_tensor((100,), -5, 5)
        np.testing.assert_allclose(sigmoid(-x), 1.0 - sigmoid(x), atol=1e-15)

    def test_range(self):
        y = sigmoid(Rng(8).uniform_tensor((1000,), -700, 700))
        assert np.all((y >= 0.0) & (y <= 1.0)) and np.all(np.isfinite(y))


class TestBernoulli:
    def test_degenerate(self):
        rng = Rng(1)
        np.testing.assert_array_equal(bernoulli_sample(np.zeros(100), rng), np.zeros(100))
        np.testing.assert_array_equal(bernoulli_sample(np.ones(100), rng), np.ones(100))

    def test_empirical_mean(self):
        # 4-sigma Monte-Carlo bound: 4 * sqrt(0.3 * 0.7 / 1e6) ~ 0.0018
        b = bernoulli_sample(np.full(10**6, 0.3), Rng(42))
        assert abs(b.mean() - 0.3) < 0.002

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            bernoulli_sample(np.array([1.5]), Rng(0))

    def test_worker_count_invariance(self):
        p = numerics.sigmoid(Rng(9).uniform_tensor((100_000,), -2, 2))
        ref = bernoulli_sample(p, Rng(5))
        for workers in (1, 2, 4):
            with WorkerPool(workers) as pool:
                np.testing.assert_array_equal(bernoulli_sample(p, Rng(5), pool), ref)


class TestRng:
    def test_repeatable(self):
        np.testing.assert_array_equal(Rng(1).uniforms(1000), Rng(1).uniforms(1000))

    def test_calls_advance(self):
        r = Rng(1)
        assert not np.array_equal(r.uniforms(10), r.uniforms(10))

    def test_spawn_independent(self):
        a = Rng(1).spawn(0).uniforms(1000)
        b = Rng(1).spawn(1).uniforms(1000)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.1

    def test_seed_bounds(self):
        with pytest.raises(ValueError):
            Rng(-1)


class TestReduce:
    def test_sum(self):
        assert reduce("sum", [1.0, 2.0, 3.0]) == 6.0

    def test_l2_norm(self):
        assert reduce("l2_norm", [3.0, 4.0]) == 5.0

    def test_mean_empty_axis_rejected(self):
        with pytest.raises(ValueError):
            reduce("mean", np.zeros((0, 3)), axes=0)

    def test_invalid_axis_rejected(self):
        with pytest.raises(ValueError):
            reduce("sum", np.zeros((2, 3)), axes=5)

    def test_axis_reduction(self):
        x = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(reduce("sum", x, axes=0), [3.0, 5.0, 7.0])
        np.testing.assert_array_equal(reduce("mean", x, axes=1), [1.0, 4.0])


class TestTensorCsv:
    def test_round_trip_bit_exact(self, tmp_path):
        x = Rng(11).uniform_tensor((4, 2, 3), -1e3, 1e3)
        path = tmp_path / "t.csv"
        save_tensor(x, path)
        np.testing.assert_array_equal(load_tensor(path), x)

    def test_header(self, tmp_path):
        path = tmp_path / "t.csv"
        save_tensor(np.zeros((2, 1, 3)), path)
        assert path.read_text().splitlines()[0] == "# shape: 2,1,3"

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            load_tensor(path)

    def test_bad_value_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# shape: 1,1,2\n1.0,oops\n")
        with pytest.raises(ValueError, match=":2"):
            load_tensor(path)


def test_resolve_workers_env(monkeypatch):
    monkeypatch.setenv(numerics.WORKERS_ENV_VAR, "3")
    assert numerics.resolve_workers(None) == 3
    assert numerics.resolve_workers(2) == 2
    with pytest.raises(ValueError):
        numerics.resolve_workers(0)
