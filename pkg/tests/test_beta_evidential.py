import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from evidential_osr.beta_evidential import (
    beta_loss,
    beta_loss_grad,
    beta_loss_terms,
    check_labels,
    dirichlet_binary_loss,
)

evidence = st.floats(1.0, 100.0)


def test_loss_examples():
    assert beta_loss([[1.0]], [[1.0]], [[1]]).total == pytest.approx(1.0, abs=1e-12)
    assert beta_loss([[1.0]], [[1.0]], [[0]]).total == pytest.approx(1.0, abs=1e-12)
    assert beta_loss([[9.0]], [[1.0]], [[1]]).total == pytest.approx(1 / 9, abs=1e-12)


def test_grad_examples():
    da, db = beta_loss_grad([[1.0]], [[1.0]], [[1]])
    assert da[0, 0] == pytest.approx(-1.0, abs=1e-12)
    assert db[0, 0] == pytest.approx(np.pi**2 / 6 - 1, abs=1e-12)


def test_loss_matches_scipy_digamma_formula():
    rng = np.random.default_rng(0)
    a = rng.uniform(1, 30, (20, 4))
    b = rng.uniform(1, 30, (20, 4))
    y = rng.integers(0, 2, (20, 4))
    ref = y * (special.digamma(a + b) - special.digamma(a)) + (1 - y) * (special.digamma(a + b) - special.digamma(b))
    assert np.allclose(beta_loss_terms(a, b, y), ref, atol=1e-12)


def test_total_equals_sum_of_per_actor_and_mean_reduction():
    rng = np.random.default_rng(1)
    a = rng.uniform(1, 10, (50, 3))
    b = rng.uniform(1, 10, (50, 3))
    y = rng.integers(0, 2, (50, 3))
    rep = beta_loss(a, b, y)
    assert rep.total == pytest.approx(rep.per_actor.sum(), rel=1e-9)
    assert np.all(rep.per_actor >= 0)
    assert beta_loss(a, b, y, reduction="mean").total == pytest.approx(rep.total / 50, rel=1e-12)
    da, _ = beta_loss_grad(a, b, y)
    dam, _ = beta_loss_grad(a, b, y, reduction="mean")
    assert np.allclose(dam * 50, da)


def test_terms_nonnegative_random():
    rng = np.random.default_rng(2)
    a = rng.uniform(1, 1000, (500, 5))
    b = rng.uniform(1, 1000, (500, 5))
    y = rng.integers(0, 2, (500, 5))
    assert np.all(beta_loss_terms(a, b, y) >= 0)


def _central_diff(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        a, b, y = rng.uniform(1.05, 50), rng.uniform(1.05, 50), int(rng.integers(0, 2))
        da, db = beta_loss_grad([[a]], [[b]], [[y]])
        fa = _central_diff(lambda t: beta_loss([[t]], [[b]], [[y]]).total, a)
        fb = _central_diff(lambda t: beta_loss([[a]], [[t]], [[y]]).total, b)
        worst = max(worst, abs(fa - da[0, 0]) / abs(da[0, 0]), abs(fb - db[0, 0]) / abs(db[0, 0]))
    assert worst < 1e-6


@given(evidence, evidence)
def test_monotone_fit_for_positive_label(a, b):
    da, db = beta_loss_grad([[a]], [[b]], [[1]])
    assert da[0, 0] < 0 < db[0, 0]


def test_dirichlet_form_examples():
    assert dirichlet_binary_loss(1.0, 1.0, 1) == pytest.approx(1.0, abs=1e-12)
    assert dirichlet_binary_loss(9.0, 1.0, 1) == pytest.approx(1 / 9, abs=1e-12)


def test_dirichlet_form_equivalence_sweep():
    rng = np.random.default_rng(4)
    a = rng.uniform(1, 100, 1000)
    b = rng.uniform(1, 100, 1000)
    y = rng.integers(0, 2, 1000)
    beta_side = beta_loss_terms(a[:, None], b[:, None], y[:, None])[:, 0]
    assert np.max(np.abs(dirichlet_binary_loss(a, b, y) - beta_side)) < 1e-12


def test_dirichlet_scalar_returns_float():
    assert isinstance(dirichlet_binary_loss(2.0, 3.0, 0), float)


@pytest.mark.parametrize(
    "alpha, beta, y",
    [
        ([[1.0, 2.0]], [[1.0]], [[1]]),
        ([[0.5]], [[1.0]], [[1]]),
        ([[1.0]], [[1.0]], [[2]]),
    ],
)
def test_validation_errors(alpha, beta, y):
    with pytest.raises(ValueError):
        beta_loss(alpha, beta, y)


def test_label_and_reduction_errors():
    with pytest.raises(ValueError):
        check_labels([0.5])
    with pytest.raises(ValueError):
        dirichlet_binary_loss(1.0, 1.0, 3)
    with pytest.raises(ValueError):
        dirichlet_binary_loss(0.9, 1.0, 1)
    with pytest.raises(ValueError):
        beta_loss([[1.0]], [[1.0]], [[1]], reduction="max")
