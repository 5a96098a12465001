import math
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ris_lab.errors import RiskException


def _as_returns(returns: Sequence[float]) -> np.ndarray:
    values = np.asarray(returns, dtype=float)
    if values.size == 0:
        raise RiskException("Need at least one episodic return")
    return values


def evar_literal(returns: Sequence[float], mu: float) -> float:
    """
    (1/mu) log mean exp(-mu R), evaluated with log-sum-exp.

    Diagnostic only: this literal form grows as returns shrink, so training maximizes
    surrogate_return, for which -evar_literal is the second-order expansion.
    """
    if mu <= 0:
        raise RiskException(f"Literal EVaR needs mu > 0, got {mu}; use surrogate_return")
    values = _as_returns(returns)
    return float((logsumexp(-mu * values) - math.log(values.size)) / mu)


def surrogate_return(returns: Sequence[float], mu: float) -> float:
    """
    Mean minus (mu / 2) times the population variance.
    """
    values = _as_returns(returns)
    return float(values.mean() - mu / 2 * values.var())


def gradient_weight(R: float, R_bar: float, mu: float, flipped_weight: bool = False) -> float:
    """
    Per-sample weight of the score-function gradient of surrogate_return.

    R_bar is the mean return of the batch. flipped_weight selects the sign-flipped
    variant (1 - mu R_bar) R + (mu / 2) R^2.
    """
    if flipped_weight:
        return (1 - mu * R_bar) * R + mu / 2 * R * R
    return (1 + mu * R_bar) * R - mu / 2 * R * R
