import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpcsvrg.datasets import load_libsvm, write_libsvm
from lpcsvrg.errors import EmptyDataset, IndexOutOfRange, ParseError
from lpcsvrg.problem import (LeastSquaresProblem, LogisticProblem, NonsmoothTerm, batch_grad_diff,
                             gradient_mapping, make_synthetic, prox, sample_batch)

TERMS = [NonsmoothTerm.zero(), NonsmoothTerm.l1(0.3), NonsmoothTerm.l2sq(0.7), NonsmoothTerm.box(-0.5, 1.0)]


# -- prox ---------------------------------------------------------------------------


def test_prox_zero_is_identity():
    v = np.array([1.5, -2.0, 0.0])
    assert np.array_equal(prox(NonsmoothTerm.zero(), 0.3, v), v)


def test_prox_l1_soft_threshold():
    assert prox(NonsmoothTerm.l1(1.0), 1.0, [3.0, -0.5]).tolist() == [2.0, 0.0]


def test_prox_l2sq_scaling():
    assert prox(NonsmoothTerm.l2sq(1.0), 1.0, [2.0]).tolist() == [1.0]


def test_prox_box_clamps():
    assert prox(NonsmoothTerm.box(-1, 1), 0.5, [-3.0, 0.2, 9.0]).tolist() == [-1.0, 0.2, 1.0]


def test_prox_requires_positive_eta():
    with pytest.raises(ValueError):
        prox(NonsmoothTerm.l1(1.0), 0.0, [1.0])


def test_nonsmooth_term_roundtrip():
    for h in TERMS:
        assert NonsmoothTerm.from_dict(h.to_dict()) == h


vecs = arrays(np.float64, 6, elements=st.floats(-50, 50, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(vecs, vecs, st.floats(0.01, 5.0), st.sampled_from(range(len(TERMS))))
def test_prox_nonexpansive(a, b, eta, k):
    h = TERMS[k]
    pa, pb = prox(h, eta, a), prox(h, eta, b)
    assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-9


@settings(max_examples=60, deadline=None)
@given(vecs, vecs, st.floats(0.01, 5.0), st.sampled_from(range(len(TERMS))))
def test_prox_optimality(v, y, eta, k):
    h = TERMS[k]
    p = prox(h, eta, v)
    if h.kind == "box":
        y = np.clip(y, h.lo, h.hi)

    def obj(z):
        return h.value(z) + 0.5 / eta * float((z - v) @ (z - v))

    assert obj(p) <= obj(y) + 1e-9 * max(1.0, abs(obj(y)))


# -- gradients ----------------------------------------------------------------------


def problems():
    r = np.random.default_rng(0)
    A = r.standard_normal((30, 5))
    b = r.standard_normal(30)
    return [LeastSquaresProblem(A, b), LogisticProblem(A, np.sign(b))]


@pytest.mark.parametrize("p", problems(), ids=["least_squares", "logistic"])
def test_gradient_matches_finite_differences(p):
    r = np.random.default_rng(1)
    for _ in range(5):
        x = r.standard_normal(p.d)
        g = p.full_grad(x)
        h = 1e-6
        fd = np.array([(p.smooth_loss(x + h * e) - p.smooth_loss(x - h * e)) / (2 * h) for e in np.eye(p.d)])
        assert np.linalg.norm(fd - g) <= 1e-6 * max(1.0, np.linalg.norm(g))


@pytest.mark.parametrize("p", problems(), ids=["least_squares", "logistic"])
def test_per_sample_smoothness(p):
    r = np.random.default_rng(2)
    for _ in range(50):
        i = r.integers(p.n)
        x, y = r.standard_normal(p.d) * 3, r.standard_normal(p.d) * 3
        gx, gy = p.grad_sum([i], x), p.grad_sum([i], y)
        assert np.linalg.norm(gx - gy) <= p.L * np.linalg.norm(x - y) * (1 + 1e-12)


@pytest.mark.parametrize("p", problems(), ids=["least_squares", "logistic"])
def test_full_index_set_equals_full_grad(p):
    x = np.random.default_rng(3).standard_normal(p.d)
    assert np.allclose(p.batch_grad(np.arange(p.n), x), p.full_grad(x), rtol=1e-12, atol=1e-14)
    assert np.allclose(p.shard_grad_sum(0, p.n, x) / p.n, p.full_grad(x), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("p", problems(), ids=["least_squares", "logistic"])
def test_sample_grads_rows(p):
    x = np.random.default_rng(4).standard_normal(p.d)
    idx = np.array([[0, 3], [3, 7]])
    G = p.sample_grads(idx, x)
    assert G.shape == (2, 2, p.d)
    assert np.allclose(G[1, 0], p.grad_sum([3], x))


def test_least_squares_constant():
    A = np.array([[1.0, 2.0], [3.0, 0.0]])
    assert LeastSquaresProblem(A, [0.0, 0.0]).L == 9.0


def test_unbiased_sampling():
    _, p = make_synthetic(4, 50, seed=0)
    r = np.random.default_rng(5)
    x, xr = r.standard_normal(4), r.standard_normal(4)
    M = 100_000
    idx = r.integers(0, p.n, size=M)
    G = p.sample_grads(idx, x) - p.sample_grads(idx, xr)
    target = p.full_grad(x) - p.full_grad(xr)
    se = G.std(axis=0) / np.sqrt(M)
    assert np.all(np.abs(G.mean(axis=0) - target) <= 4.5 * se)


def test_batch_index_out_of_range():
    _, p = make_synthetic(3, 10, seed=0)
    with pytest.raises(IndexOutOfRange):
        p.batch_grad([0, 10], np.zeros(3))
    with pytest.raises(IndexOutOfRange):
        batch_grad_diff(p, [-1], np.zeros(3), np.ones(3))


# -- gradient mapping ---------------------------------------------------------------


def test_gradient_mapping_zero_h_is_gradient():
    _, p = make_synthetic(4, 20, seed=1)
    x = np.ones(4)
    assert np.array_equal(gradient_mapping(p, x, 0.3), p.full_grad(x))


@pytest.mark.parametrize("h", TERMS[1:], ids=["l1", "l2sq", "box"])
def test_gradient_mapping_vanishes_at_minimizer(h):
    data, _ = make_synthetic(5, 40, seed=2)
    p = LeastSquaresProblem(data.features, data.targets, h)
    x = p.minimizer(tol=1e-15)
    for eta in (0.01, 0.1, 1.0):
        assert np.linalg.norm(gradient_mapping(p, x, eta)) <= 1e-10


def test_gradient_mapping_hand_example():
    # f = x^2 / 2, h = |x|, x = 3, eta = 1: prox of 0 is 0, so G = 3
    p = LeastSquaresProblem([[1.0]], [0.0], NonsmoothTerm.l1(1.0))
    assert gradient_mapping(p, [3.0], 1.0).tolist() == [3.0]


# -- batch differences --------------------------------------------------------------


def test_batch_grad_diff_zero_at_reference():
    _, p = make_synthetic(3, 10, seed=0)
    x = np.array([0.1, 0.2, 0.3])
    assert np.array_equal(batch_grad_diff(p, [1, 1, 4], x, x), np.zeros(3))


def test_batch_grad_diff_full_batch():
    _, p = make_synthetic(3, 10, seed=0)
    x, xr = np.ones(3), np.zeros(3)
    assert np.allclose(batch_grad_diff(p, np.arange(10), x, xr), p.full_grad(x) - p.full_grad(xr))


def test_batch_grad_diff_hand_example():
    p = LeastSquaresProblem([[1.0]], [0.0])
    assert batch_grad_diff(p, [0], [2.0], [1.0]).tolist() == [1.0]


def test_sample_batch_with_replacement():
    b = sample_batch(np.random.default_rng(0), 3, 50)
    assert b.shape == (50,) and b.min() >= 0 and b.max() < 3
    assert len(np.unique(b)) < 50


# -- datasets -----------------------------------------------------------------------


def test_synthetic_noiseless_recovers_truth():
    data, p = make_synthetic(8, 40, noise=0.0, seed=3)
    x = p.minimizer()
    assert p.loss(x) <= 1e-8
    assert np.allclose(x, data.x_star, atol=1e-8)


def test_synthetic_deterministic():
    a, _ = make_synthetic(6, 30, seed=11)
    b, _ = make_synthetic(6, 30, seed=11)
    assert a.content_hash() == b.content_hash()
    assert np.array_equal(a.features, b.features)


def test_synthetic_shapes():
    data, p = make_synthetic(512, 10_000, seed=0)
    assert data.features.shape == (10_000, 512)
    assert p.L == pytest.approx(np.max((data.features**2).sum(1)))


def test_synthetic_rejects_empty():
    with pytest.raises(ValueError):
        make_synthetic(0, 5)


def test_libsvm_line(tmp_path):
    f = tmp_path / "a.txt"
    f.write_text("3.5 1:1.0 3:-2.0\n")
    data = load_libsvm(f)
    assert data.targets.tolist() == [3.5]
    assert data.features.tolist() == [[1.0, 0.0, -2.0]]


def test_libsvm_out_of_order(tmp_path):
    f = tmp_path / "a.txt"
    f.write_text("0 3:1 1:2\n")
    assert load_libsvm(f).features.tolist() == [[2.0, 0.0, 1.0]]


def test_libsvm_empty(tmp_path):
    f = tmp_path / "a.txt"
    f.write_text("")
    with pytest.raises(EmptyDataset):
        load_libsvm(f)


def test_libsvm_malformed_line_number(tmp_path):
    f = tmp_path / "a.txt"
    f.write_text("1 1:0.5\n# comment\n2 2:oops\n")
    with pytest.raises(ParseError) as info:
        load_libsvm(f)
    assert info.value.line == 3


def test_libsvm_write_roundtrip(tmp_path):
    data, _ = make_synthetic(5, 12, seed=4)
    f = tmp_path / "syn.txt"
    write_libsvm(data, f)
    back = load_libsvm(f)
    assert back.content_hash() == data.content_hash()
