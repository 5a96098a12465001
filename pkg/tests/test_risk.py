import numpy as np
import pytest

from ris_lab.errors import RiskException
from ris_lab.risk import evar_literal, surrogate_return, gradient_weight


def test_evar_literal():
    assert evar_literal([1.5, 1.5, 1.5], 0.3) == pytest.approx(-1.5, abs=1e-12)
    # high-precision reference: (1/mu) log((1 + e^{-2 mu}) / 2)
    mu = 0.01
    expected = np.log((1 + np.exp(-2 * mu)) / 2) / mu
    assert evar_literal([0.0, 2.0], mu) == pytest.approx(expected, rel=1e-12)
    assert evar_literal([0.0, 2.0], mu) == pytest.approx(-0.995, abs=1e-4)

    returns = np.random.default_rng(3).uniform(0, 5, 50)
    assert evar_literal(returns, 1e-8) == pytest.approx(-returns.mean(), abs=1e-6)


def test_evar_literal_rejects_bad_input():
    with pytest.raises(RiskException):
        evar_literal([1.0], 0.0)
    with pytest.raises(RiskException):
        evar_literal([], 0.5)


def test_evar_literal_is_stable_for_large_returns():
    assert np.isfinite(evar_literal([1e4, 2e4], 0.9))


def test_surrogate_return():
    assert surrogate_return([2.5] * 4, 0.7) == pytest.approx(2.5)
    assert surrogate_return([0.0, 1.0, 5.0], 0.0) == pytest.approx(2.0)
    assert surrogate_return([0.0, 2.0], 0.8) == pytest.approx(0.6)

    with pytest.raises(RiskException):
        surrogate_return([], 0.1)


def test_surrogate_slope_in_mu_is_minus_half_variance():
    returns = [0.0, 1.0, 4.0]
    var = np.var(returns)
    slope = surrogate_return(returns, 0.6) - surrogate_return(returns, 0.5)
    assert slope / 0.1 == pytest.approx(-var / 2)


@pytest.mark.parametrize("flipped_weight", [False, True])
def test_gradient_weight_at_zero_mu(flipped_weight):
    assert gradient_weight(3.2, 1.0, 0.0, flipped_weight) == pytest.approx(3.2)


def test_gradient_weight():
    assert gradient_weight(1.0, 1.0, 0.8) == pytest.approx(1.4)
    assert gradient_weight(1.0, 1.0, 0.8, flipped_weight=True) == pytest.approx(0.2 + 0.4)


def test_surrogate_is_second_order_consistent_with_evar():
    rng = np.random.default_rng(11)
    for _ in range(20):
        # one outlier keeps the third moment away from zero
        returns = np.append(rng.uniform(0, 1, 29), 4.0)
        err = [abs(-evar_literal(returns, mu) - surrogate_return(returns, mu)) for mu in (0.02, 0.01)]
        assert 3.0 < err[0] / err[1] < 5.0
