import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import logit_vectors, states
from logitdyn import oracle as orc
from logitdyn.errors import InvalidInputError
from logitdyn.objectives import (
    DPOConfig,
    DPOObjective,
    PreferencePair,
    Sign,
    dpo_loss,
    dpo_parameter_gradient,
    implicit_reward_margin,
    signed_logit_gradient,
    signed_objective,
)


def _pair_at_reference(phi, ref, yp=0, ym=1):
    """A pair whose reference logits the model with W = outer(ref, phi)/mu reproduces."""
    w = np.outer(ref, phi) / (phi @ phi)
    return w, PreferencePair(phi, yp, ym, w @ phi)


def test_margin_zero_at_reference():
    w, pair = _pair_at_reference(np.array([1.0, -2.0]), np.array([0.3, -1.0, 2.0]))
    assert implicit_reward_margin(w, pair, DPOConfig()) == pytest.approx(0.0, abs=1e-15)


def test_margin_linear_in_beta(rng):
    w = rng.standard_normal((3, 2))
    pair = PreferencePair(rng.standard_normal(2), 2, 0, rng.standard_normal(3))
    m1 = implicit_reward_margin(w, pair, DPOConfig(beta=0.2))
    m2 = implicit_reward_margin(w, pair, DPOConfig(beta=0.4))
    assert m2 == pytest.approx(2 * m1, rel=1e-14)


def test_margin_and_loss_match_extended_precision():
    w = np.array([[0.5, -1.0], [2.0, 0.25], [-0.75, 1.5]])
    phi = np.array([1.2, -0.4])
    ref = np.array([0.1, -0.3, 0.7])
    pair = PreferencePair(phi, 1, 2, ref)
    cfg = DPOConfig(beta=0.3)
    z = w @ phi
    assert implicit_reward_margin(w, pair, cfg) == pytest.approx(float(orc.mp_dpo_margin(z, ref, 1, 2, 0.3)), rel=1e-14)
    assert dpo_loss(w, pair, cfg) == pytest.approx(orc.mp_dpo_loss(z, ref, 1, 2, 0.3), rel=1e-14)


def test_loss_at_zero_margin_is_log2():
    w, pair = _pair_at_reference(np.array([1.0]), np.array([0.0, 1.0, -1.0]))
    assert dpo_loss(w, pair, DPOConfig()) == pytest.approx(math.log(2), abs=1e-15)


def test_loss_vanishes_at_large_margin():
    # beta * ((z+ - ref+) - (z- - ref-)) = 50
    pair = PreferencePair(np.array([1.0]), 0, 1, np.zeros(2))
    w = np.array([[250.0], [-250.0]])
    assert implicit_reward_margin(w, pair, DPOConfig(beta=0.1)) == pytest.approx(50.0)
    assert dpo_loss(w, pair, DPOConfig(beta=0.1)) < 1e-20


def test_gradient_at_reference_matches_finite_differences():
    w, pair = _pair_at_reference(np.array([0.7, -1.1, 0.4]), np.array([0.5, 0.5, 0.0]))
    cfg = DPOConfig()
    fd = orc.fd_checked(orc.fd_gradient, lambda x: dpo_loss(x, pair, cfg), w, 1e-6)
    main = dpo_parameter_gradient(w, pair, cfg)
    assert abs(np.linalg.norm(main) - np.linalg.norm(fd)) <= 1e-6 * np.linalg.norm(fd)


def test_gradient_vanishes_as_beta_goes_to_zero(rng):
    w = rng.standard_normal((3, 2))
    pair = PreferencePair(rng.standard_normal(2), 0, 2, rng.standard_normal(3))
    assert np.max(np.abs(dpo_parameter_gradient(w, pair, DPOConfig(beta=1e-12)))) < 1e-11


def test_gradient_matches_finite_differences(rng):
    for _ in range(20):
        v, d = 4, 3
        w = rng.standard_normal((v, d))
        pair = PreferencePair(rng.standard_normal(d), 3, 1, rng.standard_normal(v))
        cfg = DPOConfig(beta=0.5)
        fd = orc.fd_checked(orc.fd_gradient, lambda x: dpo_loss(x, pair, cfg), w, 1e-6)
        assert orc.compare("dpo", dpo_parameter_gradient(w, pair, cfg), fd, 1e-6, "rel").passed


def test_gradient_direction_raises_preferred_logit(rng):
    # a small descent step must raise the margin
    w = rng.standard_normal((3, 2))
    pair = PreferencePair(rng.standard_normal(2), 0, 1, rng.standard_normal(3))
    cfg = DPOConfig()
    w2 = w - 1e-3 * dpo_parameter_gradient(w, pair, cfg)
    assert implicit_reward_margin(w2, pair, cfg) > implicit_reward_margin(w, pair, cfg)


def test_signed_objective_two_class_uniform():
    assert signed_objective(np.zeros(2), 0, Sign.POSITIVE) == pytest.approx(math.log(2))
    assert signed_objective(np.zeros(2), 0, Sign.NEGATIVE) == pytest.approx(-math.log(2))


def test_negative_gradient_via_finite_differences(rng):
    z = rng.standard_normal(4)
    fd = orc.fd_checked(orc.fd_gradient, lambda x: signed_objective(x, 2, Sign.NEGATIVE), z, 1e-6)
    np.testing.assert_allclose(signed_logit_gradient(z, 2, Sign.NEGATIVE), fd, rtol=1e-6, atol=1e-10)
    np.testing.assert_array_equal(signed_logit_gradient(z, 2, Sign.NEGATIVE), -signed_logit_gradient(z, 2))


def test_pair_validation():
    with pytest.raises(InvalidInputError):
        PreferencePair(np.ones(2), 1, 1, np.zeros(3))
    with pytest.raises(InvalidInputError):
        PreferencePair(np.ones(2), 0, 3, np.zeros(3))
    with pytest.raises(InvalidInputError):
        PreferencePair(np.ones(2), 0, 1, np.array([0.0, np.nan]))
    with pytest.raises(InvalidInputError):
        DPOConfig(beta=0.0)


def test_pair_is_immutable():
    pair = PreferencePair(np.ones(2), 0, 1, np.zeros(3))
    with pytest.raises(ValueError):
        pair.ref_logits[0] = 1.0


def test_model_reference_size_mismatch():
    pair = PreferencePair(np.ones(2), 0, 1, np.zeros(3))
    with pytest.raises(InvalidInputError):
        dpo_loss(np.zeros((4, 2)), pair, DPOConfig())


@given(states(), st.floats(-20, 20))
def test_reference_shift_invariance(state, c):
    w, phi, y = state
    v = w.shape[0]
    ref = np.linspace(-1, 1, v)
    cfg = DPOConfig(beta=0.7)
    a = PreferencePair(phi, y, (y + 1) % v, ref)
    b = PreferencePair(phi, y, (y + 1) % v, ref + c)
    assert abs(implicit_reward_margin(w, a, cfg) - implicit_reward_margin(w, b, cfg)) <= 1e-10
    assert abs(dpo_loss(w, a, cfg) - dpo_loss(w, b, cfg)) <= 1e-10
    np.testing.assert_allclose(dpo_parameter_gradient(w, a, cfg), dpo_parameter_gradient(w, b, cfg), atol=1e-10)


@given(logit_vectors(), st.data())
def test_loss_decreases_in_preferred_logit(z, data):
    v = len(z)
    yp = data.draw(st.integers(0, v - 1))
    ym = (yp + 1) % v
    obj = DPOObjective(PreferencePair(np.ones(1), yp, ym, np.zeros(v)), DPOConfig(beta=0.5))
    bump = np.zeros(v)
    bump[yp] = 0.5
    assert obj.loss_at_logits(z + bump) < obj.loss_at_logits(z)


@given(logit_vectors(), st.data())
def test_negative_objective_is_exact_negation(z, data):
    y = data.draw(st.integers(0, len(z) - 1))
    assert signed_objective(z, y, Sign.NEGATIVE) == -signed_objective(z, y, Sign.POSITIVE)
