import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbinfluence.loss import LossSpec, derivatives, get_loss

STEP = 1e-5


def central(f, z, h=STEP):
    return (f(z + h) - f(z - h)) / (2 * h)


class TestExamples:
    def test_logloss_at_zero(self):
        L, g, h, k = derivatives("logloss", 1.0, 0.0)
        assert L == pytest.approx(math.log(2), rel=1e-15)
        assert (g, h, k) == (-0.5, 0.25, 0.0)

    def test_squared_closed_form(self):
        assert derivatives("squared", 2.0, 5.0) == (4.5, 3.0, 1.0, 0.0)

    def test_logloss_y0_z2_against_fd(self):
        loss = LossSpec("logloss")
        s = 1 / (1 + math.exp(-2.0))
        L, g, h, k = derivatives(loss, 0.0, 2.0)
        assert g == pytest.approx(s, rel=1e-15)
        assert h == pytest.approx(s * (1 - s), rel=1e-15)
        assert k == pytest.approx(h * (1 - 2 * s), rel=1e-14)
        assert g == pytest.approx(central(lambda z: loss.value(0.0, z), 2.0), rel=1e-6)
        assert h == pytest.approx(central(lambda z: loss.grad(0.0, z), 2.0), rel=1e-6)
        assert k == pytest.approx(central(lambda z: loss.hess(0.0, z), 2.0), rel=1e-6)


class TestErrors:
    def test_non_finite_z(self):
        with pytest.raises(ValueError):
            derivatives("logloss", 1.0, float("nan"))
        with pytest.raises(ValueError):
            derivatives("squared", 1.0, float("inf"))

    def test_bad_label_and_kind(self):
        with pytest.raises(ValueError):
            derivatives("logloss", 0.5, 0.0)
        with pytest.raises(ValueError):
            get_loss("hinge")


class TestProperties:
    def test_fd_consistency_random(self):
        rng = np.random.default_rng(0)
        for kind in ("logloss", "squared"):
            loss = LossSpec(kind)
            z = rng.uniform(-6, 6, size=1000)
            y = rng.integers(0, 2, size=1000).astype(float) if kind == "logloss" else rng.normal(size=1000)
            for lo, hi in ((loss.value, loss.grad), (loss.grad, loss.hess), (loss.hess, loss.third)):
                fd = central(lambda zz: lo(y, zz), z)
                exact = hi(y, z)
                np.testing.assert_allclose(fd, exact, rtol=1e-5, atol=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-700, 700), st.sampled_from([0.0, 1.0]))
    def test_logloss_hessian_range(self, z, y):
        _, g, h, _ = derivatives("logloss", y, z)
        assert 0.0 <= h <= 0.25
        assert -1.0 <= g <= 1.0

    def test_third_zero_at_origin(self):
        assert derivatives("logloss", 0.0, 0.0)[3] == 0.0

    def test_stable_for_large_scores(self):
        L, g, h, k = derivatives("logloss", 0.0, np.array([800.0, -800.0]))
        assert np.all(np.isfinite(L)) and np.all(np.isfinite(g)) and np.all(h >= 0)
        np.testing.assert_allclose(L, [800.0, 0.0])

    def test_grad_hess_matches_separate_calls(self):
        z = np.linspace(-5, 5, 11)
        y = (z > 0).astype(float)
        for kind in ("logloss", "squared"):
            loss = LossSpec(kind)
            g, h = loss.grad_hess(y, z)
            np.testing.assert_array_equal(g, loss.grad(y, z))
            np.testing.assert_array_equal(h, loss.hess(y, z))
