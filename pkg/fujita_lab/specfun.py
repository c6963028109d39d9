import logging
import math
from typing import Sequence

import numpy as np
from pydantic import BaseModel, validator
from scipy.special import beta, gamma, gammaln

from fujita_lab.shared import DomainError, FlexiModel

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

SERIES_EPS = 1e-16
MAX_TERMS = 100000
# Leading asymptotic term is used only once z^(1/rho) exceeds this
ASYMPTOTIC_ARG = 25.0
LOG_MAX = math.log(np.finfo(float).max)


def z_switch(rho: float) -> float:
    """Point beyond which the exponential asymptotic replaces the series."""
    ratio_rule = 0.5 * math.exp(gammaln(61 * rho + 1) - gammaln(60 * rho + 1))
    return max(ratio_rule, ASYMPTOTIC_ARG ** rho)


def mittag_leffler_series(rho: float, z: float) -> float:
    if z == 0:
        return 1.0
    log_abs = math.log(abs(z))
    sign = -1.0 if z < 0 else 1.0
    total = 1.0
    previous = 1.0
    for n in range(1, MAX_TERMS):
        log_term = n * log_abs - gammaln(n * rho + 1)
        if log_term > LOG_MAX:
            logger.warning(dict(event="mittag_leffler_overflow", rho=rho, z=z, n=n))
            return math.inf
        term = sign ** n * math.exp(log_term)
        total += term
        if abs(term) < SERIES_EPS * abs(total) and abs(term) <= previous:
            return total
        previous = abs(term)
    logger.warning(dict(event="mittag_leffler_no_convergence", rho=rho, z=z))
    return total


def mittag_leffler(rho: float, z: float) -> float:
    """E_rho(z) = sum z^n / Gamma(n rho + 1) for real z."""
    if rho <= 0:
        raise DomainError(f"Mittag-Leffler needs rho > 0: {dict(rho=rho)}")
    if rho < 2 and z > z_switch(rho):
        exponent = z ** (1 / rho)
        if exponent - math.log(rho) > LOG_MAX:
            logger.warning(dict(event="mittag_leffler_overflow", rho=rho, z=z, exponent=exponent / rho))
            return math.inf
        return math.exp(exponent) / rho
    return mittag_leffler_series(rho, z)


def beta_fn(a: float, b: float) -> float:
    if a <= 0 or b <= 0:
        raise DomainError(f"Beta function needs positive arguments: {dict(a=a, b=b)}")
    return float(beta(a, b))


class GronwallData(BaseModel):
    A: float
    M: float
    theta: float
    T: float

    @validator("A", "M")
    def check_nonnegative(cls, v):
        if v < 0:
            raise ValueError(f"Gronwall constants must be nonnegative: {dict(value=v)}")
        return v

    @validator("theta")
    def check_theta(cls, v):
        if not 0 <= v < 1:
            raise ValueError(f"Need 0 <= theta < 1: {dict(theta=v)}")
        return v

    @validator("T")
    def check_horizon(cls, v):
        if v <= 0:
            raise ValueError(f"Need T > 0: {dict(T=v)}")
        return v


def gronwall_bound(data: GronwallData, t: float) -> float:
    if not 0 <= t <= data.T * (1 + 1e-12):
        raise DomainError(f"Need 0 <= t <= T: {dict(t=t, T=data.T)}")
    if data.A == 0:
        return 0.0
    rho = 1 - data.theta
    return data.A * mittag_leffler(rho, data.M * gamma(rho) * t ** rho)


def volterra_weights(times: np.ndarray, n: int, theta: float) -> np.ndarray:
    """
    Product-quadrature weights w_j with
    int_0^{t_n} psi(s) (t_n - s)^-theta ds = sum_j w_j psi(t_j)
    exact for psi piecewise linear on `times`.
    """
    weights = np.zeros(n + 1)
    if n == 0:
        return weights
    beta_ = 1 - theta
    t_n = times[n]
    left = times[:n]
    right = times[1: n + 1]
    width = right - left
    b = t_n - left
    a = np.maximum(t_n - right, 0.0)
    plain = (b ** beta_ - a ** beta_) / beta_
    ramp = (b * plain - (b ** (beta_ + 1) - a ** (beta_ + 1)) / (beta_ + 1)) / width
    weights[:n] += plain - ramp
    weights[1:] += ramp
    return weights


def graded_times(T: float, n_points: int, grading: float = 2.0) -> np.ndarray:
    return T * (np.arange(n_points) / (n_points - 1)) ** grading


class Trajectory(FlexiModel):
    times: np.ndarray
    values: np.ndarray


def volterra_equality_trajectory(data: GronwallData, n_points: int = 10000, grading: float = 2.0) -> Trajectory:
    """Solves psi = A + M int_0^t psi(s)(t - s)^-theta ds by implicit product quadrature."""
    times = graded_times(data.T, n_points, grading)
    psi = np.empty(n_points)
    psi[0] = data.A
    for n in range(1, n_points):
        w = volterra_weights(times, n, data.theta)
        history = np.dot(w[:n], psi[:n])
        psi[n] = (data.A + data.M * history) / (1 - data.M * w[n])
    return Trajectory(times=times, values=psi)


class GronwallReport(BaseModel):
    applicable: bool
    max_excess: float
    residual: float
    tolerance: float
    passed: bool


def check_gronwall_on_trajectory(
    times: Sequence[float],
    psi: Sequence[float],
    data: GronwallData,
    tolerance: float = 1e-6,
) -> GronwallReport:
    times = np.asarray(times, dtype=float)
    psi = np.asarray(psi, dtype=float)
    assert times.shape == psi.shape, dict(times=times.shape, psi=psi.shape)
    assert times[0] == 0 and np.all(np.diff(times) > 0), "times must start at 0 and increase"

    residual = 0.0
    for n in range(len(times)):
        integral = np.dot(volterra_weights(times, n, data.theta), psi[: n + 1])
        residual = max(residual, psi[n] - (data.A + data.M * integral))
    applicable = residual <= tolerance
    if not applicable:
        logger.warning(dict(event="gronwall_hypothesis_violated", residual=residual))
        return GronwallReport(
            applicable=False, max_excess=math.nan, residual=residual, tolerance=tolerance, passed=False
        )

    bound = np.array([gronwall_bound(data, t) for t in times])
    max_excess = float(np.max(psi - bound))
    return GronwallReport(
        applicable=True,
        max_excess=max_excess,
        residual=residual,
        tolerance=tolerance,
        passed=max_excess <= tolerance,
    )
