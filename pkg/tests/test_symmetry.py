import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, loop_symmetry_loss, random_row_stochastic, rel_error
from syfar.confusion import ConfusionMatrix, hard_confusion
from syfar.exceptions import DomainError, KindError
from syfar.symmetry import SymmetryConfig, pair_penalty, symmetry_loss, symmetry_loss_gradient


def test_pair_penalty_values():
    assert pair_penalty(0.3, 0.3, 0.7) == 0.0
    assert pair_penalty(0.2, 0.1, 0.1) == pytest.approx(0.075, abs=1e-15)
    assert pair_penalty(0.5, 0.0, 0.5) == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(DomainError):
        pair_penalty(-0.1, 0.2, 0.1)
    with pytest.raises(DomainError):
        pair_penalty(0.1, 0.2, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 1))
def test_pair_penalty_scaling_nondecreasing(a, b, eps):
    vals = [pair_penalty(t * a, t * b, eps) for t in (0.0, 0.5, 1.0, 2.0, 4.0)]
    assert all(x <= y + 1e-15 for x, y in zip(vals, vals[1:]))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 1), st.floats(0, 0.99), st.floats(1e-3, 1))
def test_pair_penalty_increasing_in_gap(s, frac, eps):
    # fixed a+b = s, gap grows
    lo = pair_penalty(s * (1 + frac / 2) / 2, s * (1 - frac / 2) / 2, eps)
    hi = pair_penalty(s * (1 + frac) / 2, s * (1 - frac) / 2, eps)
    assert hi >= lo


def test_default_epsilon_and_hand_value():
    c = np.array([[0.8, 0.2], [0.6, 0.4]])
    assert symmetry_loss(c, 0.5) == pytest.approx(0.246154, abs=1e-6)
    assert symmetry_loss(c) == symmetry_loss(c, SymmetryConfig())
    assert SymmetryConfig().resolve(10) == 0.1
    assert SymmetryConfig(0.3, "fixed").resolve(10) == 0.3


def test_zero_on_symmetric(rng):
    a = rng.random((6, 6))
    assert symmetry_loss(a + a.T) == 0.0


def test_matches_double_loop(rng):
    for _ in range(10):
        m = random_row_stochastic(rng, 10)
        assert abs(symmetry_loss(m, 0.1) - loop_symmetry_loss(m, 0.1)) < 1e-12


def test_transpose_and_permutation_invariance(rng):
    for _ in range(100):
        k = int(rng.integers(2, 9))
        m = random_row_stochastic(rng, k)
        base = symmetry_loss(m)
        assert abs(symmetry_loss(m.T) - base) <= 1e-12
        perm = rng.permutation(k)
        assert abs(symmetry_loss(m[np.ix_(perm, perm)]) - base) <= 1e-12


def test_zero_iff_symmetric_on_positive_masses(rng):
    a = rng.random((5, 5)) + 0.01
    sym = (a + a.T) / 2
    assert symmetry_loss(sym) == 0.0
    sym[1, 3] += 1e-6
    assert symmetry_loss(sym) > 0.0


def test_domain_errors():
    with pytest.raises(DomainError):
        symmetry_loss([[1.0]])
    with pytest.raises(DomainError):
        symmetry_loss([[0.5, -0.1], [0.2, 0.8]])


def test_gradient_fd_2x2():
    c = np.array([[0.8, 0.2], [0.6, 0.4]])
    g = symmetry_loss_gradient(c, 0.5)
    fd = central_difference(lambda m: symmetry_loss(m, 0.5), c)
    assert rel_error(g, fd) < 1e-4
    assert g[0, 0] == 0.0 and g[1, 1] == 0.0


def test_gradient_fd_random(rng):
    for _ in range(10):
        m = random_row_stochastic(rng, 5)
        g = symmetry_loss_gradient(m)
        fd = central_difference(lambda x: symmetry_loss(x), m, h=1e-7)
        assert rel_error(g, fd) < 1e-4
        assert not np.any(np.diag(g))


def test_gradient_zero_at_kink():
    a = np.array([[0.0, 0.3, 0.2], [0.3, 0.0, 0.1], [0.2, 0.1, 0.0]])
    assert not np.any(symmetry_loss_gradient(a))


def test_gradient_rejects_hard_matrix():
    hc = hard_confusion(np.eye(2)[[0, 1]], [0, 1])
    with pytest.raises(KindError):
        symmetry_loss_gradient(hc)
    soft = ConfusionMatrix(2, [[0.8, 0.2], [0.6, 0.4]], "soft", [1, 1])
    assert symmetry_loss_gradient(soft).shape == (2, 2)
