"""Uncertainty regression losses with closed-form gradients.

All functions broadcast over numpy arrays. ``LossEval.grad`` maps each input
name to the partial derivative of the loss with respect to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveUncertainty

KLD_PLUS_BETA2 = 0.1
KLD_PLUS_LAMBDA = 0.25
GRAD_CLIP = 100.0


@dataclass
class LossEval:
    value: np.ndarray | float
    grad: dict[str, np.ndarray | float] = field(default_factory=dict)


def _scalarize(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _check_positive(name, x):
    if np.any(np.asarray(x) <= 0):
        raise NonPositiveUncertainty(f"{name} must be > 0")


def _x_minus_log1p(d):
    """``d - log(1 + d)`` for d > -1, accurate near 0."""
    d = np.asarray(d, dtype=float)
    small = np.abs(d) < 1e-3
    ds = np.where(small, d, 0.0)
    series = ds**2 * (0.5 - ds / 3.0 + ds**2 / 4.0 - ds**3 / 5.0)
    with np.errstate(invalid="ignore"):
        direct = d - np.log1p(d)
    return np.where(small, series, direct)


def _x_plus_expm1_neg(x):
    """``x + exp(-x) - 1`` for x >= 0, accurate near 0."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, x, 0.0)
    series = xs**2 * (0.5 - xs / 6.0 + xs**2 / 24.0 - xs**3 / 120.0)
    return np.where(small, series, x + np.expm1(-x))


def nll(y, y_hat, b_hat) -> LossEval:
    """Laplace negative log-likelihood ``log(2 b) + |y - y_hat| / b``.

    Unbounded below as ``b -> 0`` with zero residual. The subgradient at
    ``y == y_hat`` is taken as 0.
    """
    _check_positive("b_hat", b_hat)
    y, y_hat, b = (np.asarray(v, dtype=float) for v in (y, y_hat, b_hat))
    r = y - y_hat
    a = np.abs(r)
    sgn = np.sign(r)
    value = np.log(2.0 * b) + a / b
    grad = {
        "y": sgn / b,
        "y_hat": -sgn / b,
        "b_hat": 1.0 / b - a / b**2,
    }
    return LossEval(_scalarize(value), {k: _scalarize(v) for k, v in grad.items()})


def kld(y, y_hat, b_hat, beta) -> LossEval:
    """KL divergence between a Laplace label of scale ``beta`` and the prediction."""
    _check_positive("b_hat", b_hat)
    _check_positive("beta", beta)
    y, y_hat, b, beta = (np.asarray(v, dtype=float) for v in (y, y_hat, b_hat, beta))
    r = y - y_hat
    a = np.abs(r)
    e = np.exp(-a / beta)
    num = beta * e + a
    # value = (w - 1 - log w) + (beta / b) * (x + expm1(-x)),  w = beta / b,  x = |r| / beta;
    # both brackets are >= 0 and evaluated without cancellation
    value = _x_minus_log1p(beta / b - 1.0) + (beta / b) * _x_plus_expm1_neg(a / beta)
    d_r = np.sign(r) * (1.0 - e) / b
    grad = {
        "y": d_r,
        "y_hat": -d_r,
        "b_hat": 1.0 / b - num / b**2,
        "beta": -1.0 / beta + e * (1.0 + a / beta) / b,
    }
    return LossEval(_scalarize(value), {k: _scalarize(v) for k, v in grad.items()})


def kld_plus(y, y_hat, log_lambda_sigma2, beta2=KLD_PLUS_BETA2, clip=GRAD_CLIP) -> LossEval:
    """Squared-residual KL loss parameterized by ``s = log(lambda * sigma²)``.

    value = s - log(beta2) + (beta2 * exp(-r²/beta2) + r²) / exp(s) - 1 + exp(s) / 2

    Gradient components are clipped to ``[-clip, clip]``.
    """
    _check_positive("beta2", beta2)
    y, y_hat, s, beta2 = (np.asarray(v, dtype=float) for v in (y, y_hat, log_lambda_sigma2, beta2))
    r = y - y_hat
    q = r * r
    v = np.exp(s)
    e = np.exp(-q / beta2)
    num = beta2 * e + q
    value = s - np.log(beta2) + num / v - 1.0 + 0.5 * v
    d_r = 2.0 * r * (1.0 - e) / v
    grad = {
        "y": d_r,
        "y_hat": -d_r,
        "log_lambda_sigma2": 1.0 - num / v + 0.5 * v,
        "beta2": -1.0 / beta2 + e * (1.0 + q / beta2) / v,
    }
    if clip is not None:
        grad = {k: np.clip(g, -clip, clip) for k, g in grad.items()}
    return LossEval(_scalarize(value), {k: _scalarize(g) for k, g in grad.items()})


def sigma2_from_log_param(log_lambda_sigma2, lam: float = KLD_PLUS_LAMBDA):
    """Predicted variance from the network's ``log(lambda * sigma²)`` output."""
    return _scalarize(np.exp(np.asarray(log_lambda_sigma2, dtype=float)) / lam)


def log_param_from_sigma2(sigma2, lam: float = KLD_PLUS_LAMBDA):
    _check_positive("sigma2", sigma2)
    return _scalarize(np.log(lam * np.asarray(sigma2, dtype=float)))
