import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wsal.losses import (
    BatchLayout,
    LossError,
    NonFiniteLossError,
    margin_loss,
    noise_loss,
    objective,
    pseudo_location_loss,
    sparsity_penalty,
    total_objective,
)
from wsal.model import ScoreTriple
from wsal.numeric import numerical_gradient

unit = st.floats(0, 1, allow_nan=False)


def test_margin_perfect_separation():
    loss, _ = margin_loss([1.0, 1.0, 0.0, 0.0], [1, 1, 0, 0])
    assert loss == 0.0


def test_margin_all_equal_is_one():
    loss, _ = margin_loss([0.37] * 6, [1, 1, 1, 0, 0, 0])
    assert loss == 1.0


def test_margin_hand_value():
    loss, _ = margin_loss([0.8, 0.6, 0.1, 0.3], [1, 1, 0, 0])
    assert loss == pytest.approx(0.5, abs=1e-15)


def test_margin_missing_class():
    with pytest.raises(LossError):
        margin_loss([0.1, 0.2], [1, 1])


@given(arrays(np.float64, 6, elements=unit))
def test_margin_bounded(S):
    loss, _ = margin_loss(S, [1, 1, 1, 0, 0, 0])
    assert 0.0 <= loss <= 2.0


def test_margin_decreases_when_positive_rises():
    S = np.array([0.3, 0.2, 0.4, 0.1])
    labels = [1, 1, 0, 0]
    before, _ = margin_loss(S, labels)
    S[0] += 0.05
    after, _ = margin_loss(S, labels)
    assert after < before


def test_sparsity_examples():
    assert sparsity_penalty(np.zeros((2, 4)), np.zeros((2, 4)), 0.5)[0] == 0.0
    assert sparsity_penalty(np.ones((2, 4)), np.ones((2, 4)), 0.0)[0] == 0.0
    val, _, _ = sparsity_penalty(np.array([[0.5, 0.5]]), np.array([[0.25, 0.25]]), 0.00008)
    assert val == pytest.approx(1.2e-4, rel=1e-12)


def test_noise_loss_examples():
    assert noise_loss(np.zeros((3, 5)))[0] == 0.0
    assert noise_loss(np.array([[1.0, 1.0]]))[0] == 2.0


def test_noise_loss_permutation_invariant():
    f = np.random.default_rng(0).random((2, 9))
    perm = np.random.default_rng(1).permutation(9)
    assert noise_loss(f)[0] == pytest.approx(noise_loss(f[:, perm])[0], rel=1e-14)


def test_pseudo_location_readings():
    fused = np.array([0.1, 0.9, 0.05, 0.1])
    mask = np.array([False, True, False, False])
    assert pseudo_location_loss(fused, mask)[0] == 0.0
    assert pseudo_location_loss(fused, mask, literal=True)[0] == pytest.approx(0.8)


def test_pseudo_location_boundary_and_flat():
    mask = np.array([True, False, False])
    assert pseudo_location_loss(np.array([0.4, 0.4, 0.1]), mask)[0] == 0.0
    assert pseudo_location_loss(np.array([0.4, 0.4, 0.1]), mask, literal=True)[0] == 0.0
    assert pseudo_location_loss(np.full(3, 0.7), mask)[0] == 0.0


def test_pseudo_location_penalises_low_pseudo():
    loss, grad = pseudo_location_loss(np.array([0.2, 0.6, 0.1]), np.array([True, False, False]))
    assert loss == pytest.approx(0.4)
    np.testing.assert_allclose(grad, [[-1.0, 1.0, 0.0]])


def test_pseudo_location_bad_index_sets():
    with pytest.raises(LossError):
        pseudo_location_loss(np.ones(3), np.zeros(3, bool))
    with pytest.raises(LossError):
        pseudo_location_loss(np.ones(3), np.ones(3, bool))


def test_total_objective_examples():
    assert total_objective(0, 0, 0, 0, 0, 1.0).total == 0.0
    assert total_objective(0.3, 0.2, 0.0, 0.7, 0.9, 0.0).total == 0.5
    rep = total_objective(0.25, 0.25, 0.0, 0.2, 0.1, 1.0)
    assert rep.total == pytest.approx(0.8)


def test_total_objective_non_finite():
    with pytest.raises(NonFiniteLossError):
        total_objective(float("nan"), 0, 0, 0, 0, 1.0)


def _random_batch(rng, n_pos=3, n_neg=3, n_noise=2, n_pseudo=2, m=6):
    B = n_pos + n_neg + n_noise + n_pseudo
    sem = rng.uniform(0.05, 0.95, (B, m))
    var = rng.uniform(0.0, 0.5, (B, m))
    masks = np.zeros((n_pseudo, m), bool)
    for i in range(n_pseudo):
        s = rng.integers(0, m - 2)
        masks[i, s : s + 2] = True
    layout = BatchLayout(labels=np.array([1] * n_pos + [0] * n_neg), n_noise=n_noise, pseudo_masks=masks)
    return sem, var, layout


@pytest.mark.parametrize("literal", [False, True])
def test_objective_gradients_match_finite_differences(literal):
    rng = np.random.default_rng(3)
    for _ in range(20):
        sem, var, layout = _random_batch(rng)

        def total(s, v):
            return objective(ScoreTriple(s, v, (s + v) / 2), layout, 0.00008, 1.0, literal)[0].total

        _, dsem, dvar = objective(ScoreTriple(sem, var, (sem + var) / 2), layout, 0.00008, 1.0, literal)
        nsem = numerical_gradient(lambda s: total(s, var), sem)
        nvar = numerical_gradient(lambda v: total(sem, v), var)
        for a, n in ((dsem, nsem), (dvar, nvar)):
            assert np.max(np.abs(a - n) / np.maximum(np.abs(n), 1e-6)) < 1e-4


def test_objective_terms_non_negative():
    rng = np.random.default_rng(4)
    for _ in range(50):
        sem, var, layout = _random_batch(rng)
        rep, _, _ = objective(ScoreTriple(sem, var, (sem + var) / 2), layout, 0.00008, 1.0)
        assert all(v >= 0 for v in rep.as_dict().values())
        expected = rep.zeta_sem + rep.zeta_var + rep.sparsity + rep.zeta_nse + rep.zeta_loc
        assert rep.total == pytest.approx(expected, rel=1e-14)
