import logging
import math
from enum import Enum
from typing import Optional

from pydantic import BaseModel, validator
from scipy.optimize import brentq

from fujita_lab.shared import DomainError, InapplicableError

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name


class ExponentKind(str, Enum):
    finite = "finite"
    infinite = "infinite"
    not_covered = "not_covered"


class Exponent(BaseModel):
    """A critical exponent that may be +infinity or outside every known result."""

    kind: ExponentKind
    value: Optional[float]
    note: str = ""

    @classmethod
    def finite(cls, value: float, note: str = ""):
        return cls(kind=ExponentKind.finite, value=value, note=note)

    @classmethod
    def infinity(cls, note: str = ""):
        return cls(kind=ExponentKind.infinite, value=None, note=note)

    @classmethod
    def not_covered(cls, note: str):
        return cls(kind=ExponentKind.not_covered, value=None, note=note)

    @property
    def is_finite(self) -> bool:
        return self.kind == ExponentKind.finite

    @property
    def is_infinite(self) -> bool:
        return self.kind == ExponentKind.infinite

    @property
    def is_covered(self) -> bool:
        return self.kind != ExponentKind.not_covered

    def as_float(self) -> float:
        if self.is_finite:
            return self.value
        if self.is_infinite:
            return math.inf
        return math.nan

    def __str__(self) -> str:
        if self.is_finite:
            return repr(self.value)
        return self.kind.value


class Side(str, Enum):
    below = "below"
    critical = "critical, undecided"
    above = "above"
    undecided = "undecided"


class LocalRegime(str, Enum):
    bounded = "C_B"
    weighted = "C_nu"


class Parameters(BaseModel):
    """
    Parameters
    ----------
    N: spatial dimension, real so the radial solver can treat it as a coefficient
    alpha: exponent of the weight |x|^alpha in front of |u|^p
    p: power of the nonlinearity
    sigma: behaviour t^sigma of the forcing near t = 0
    m: behaviour t^m of the forcing for t >= 1
    c0, c_inf: scales of the forcing near 0 and near infinity
    """

    N: float
    alpha: float
    p: float
    sigma: float = 0.0
    m: float = 0.0
    c0: float = 1.0
    c_inf: float = 1.0

    @validator("N")
    def check_dimension(cls, v):
        if v < 1:
            raise ValueError(f"Dimension must be >= 1: {dict(N=v)}")
        return v

    @validator("alpha")
    def check_alpha(cls, v):
        if v <= -2:
            raise ValueError(f"Need alpha > -2: {dict(alpha=v)}")
        return v

    @validator("p")
    def check_p(cls, v):
        if v <= 1:
            raise ValueError(f"Need p > 1: {dict(p=v)}")
        return v

    @validator("sigma")
    def check_sigma(cls, v):
        if v <= -1:
            raise ValueError(f"Need sigma > -1: {dict(sigma=v)}")
        return v

    @validator("c0", "c_inf")
    def check_scale(cls, v):
        if v <= 0:
            raise ValueError(f"Forcing scales must be positive: {dict(scale=v)}")
        return v

    @property
    def p_dual(self) -> float:
        return self.p / (self.p - 1)

    @property
    def p_crit_lebesgue(self) -> float:
        return self.N * (self.p - 1) / (2 + self.alpha)

    @property
    def nu_exponent(self) -> float:
        return self.alpha / (self.p - 1)


class ExponentReport(BaseModel):
    p_fujita: float
    p_jks: Exponent
    p_blow_threshold: Exponent
    p_global_min: float
    p_crit_lebesgue: float
    ell_lebesgue: float
    above_global_min: bool


def fujita_exponent(N: float, alpha: float) -> float:
    if N < 1:
        raise DomainError(f"Dimension must be >= 1: {dict(N=N)}")
    if alpha <= -2:
        raise DomainError(f"Fujita exponent needs alpha > -2: {dict(alpha=alpha)}")
    return (N + 2 + alpha) / N


def jks_exponent(N: float, sigma: float) -> Exponent:
    if N < 1:
        raise DomainError(f"Dimension must be >= 1: {dict(N=N)}")
    if sigma <= -1:
        raise DomainError(f"Need sigma > -1: {dict(sigma=sigma)}")
    if sigma == 0:
        return Exponent.not_covered("sigma = 0 is not covered by the piecewise formula")
    if sigma > 0:
        return Exponent.infinity()
    denom = N - 2 * sigma - 2
    if denom <= 0:
        raise DomainError(f"Degenerate formula, N - 2 sigma - 2 <= 0: {dict(N=N, sigma=sigma)}")
    return Exponent.finite((N - 2 * sigma) / denom)


def blowup_threshold(N: float, alpha: float, m: float) -> Exponent:
    """Largest p below which no global solution exists for forcing with int w > 0."""
    if N < 1:
        raise DomainError(f"Dimension must be >= 1: {dict(N=N)}")
    if alpha <= -2:
        raise DomainError(f"Need alpha > -2: {dict(alpha=alpha)}")
    if m > 0:
        return Exponent.infinity("every p > 1 blows up when m > 0")
    if (N >= 3 and m <= 0) or (N < 3 and m < N / 2 - 1):
        return Exponent.finite((N - 2 * m + alpha) / (N - 2 * m - 2))
    return Exponent.not_covered(f"no result for N <= 2 with {N / 2 - 1} <= m <= 0")


def classify_p(p: float, threshold: Exponent) -> Side:
    if not threshold.is_covered:
        return Side.undecided
    if threshold.is_infinite or p < threshold.value:
        return Side.below
    if p == threshold.value:
        return Side.critical
    return Side.above


def global_existence_exponents(params: Parameters) -> ExponentReport:
    N, alpha, sigma, p = params.N, params.alpha, params.sigma, params.p
    if not (-2 < alpha < 0 and -1 < sigma < 0 and N >= 2):
        raise InapplicableError(
            f"Need -2 < alpha < 0, -1 < sigma < 0, N >= 2: {dict(N=N, alpha=alpha, sigma=sigma)}"
        )
    reduced = N - 2 * (sigma + 1)
    if reduced <= 0:
        raise DomainError(f"N - 2(sigma + 1) <= 0: {dict(N=N, sigma=sigma)}")

    p_global_min = (reduced + 2 + alpha) / reduced
    p_c = N * (p - 1) / (2 + alpha)
    ell = N * p_c / (N + 2 * (sigma + 1) * p_c)
    return ExponentReport(
        p_fujita=fujita_exponent(N, alpha),
        p_jks=jks_exponent(N, sigma),
        p_blow_threshold=blowup_threshold(N, alpha, params.m),
        p_global_min=p_global_min,
        p_crit_lebesgue=p_c,
        ell_lebesgue=ell,
        above_global_min=p >= p_global_min,
    )


def local_existence_regime(params: Parameters) -> LocalRegime:
    """Function space in which the local theory is set up for these parameters."""
    if params.alpha > 0:
        return LocalRegime.weighted
    if params.N < 3:
        logger.info(dict(event="local_regime_low_dimension", N=params.N))
    return LocalRegime.bounded


def local_time_estimate(
    params: Parameters, u0_norm: float, w_norm: float, constant: float = 1.0
) -> float:
    """
    Existence time of the contraction argument, for times T <= 1 where zeta = c0 t^sigma.
    The ball radius is 2 * u0_norm and `constant` is the smoothing constant of the
    weighted heat semigroup (measured, not known in closed form).
    """
    assert u0_norm >= 0 and w_norm >= 0 and constant > 0, dict(
        u0_norm=u0_norm, w_norm=w_norm, constant=constant
    )
    if params.alpha > 0:
        raise InapplicableError(f"Bounded-data estimate needs alpha <= 0: {dict(alpha=params.alpha)}")
    radius = 2 * u0_norm if u0_norm > 0 else 1.0
    a = 1 + params.alpha / 2
    b = params.sigma + 1

    def excess(t: float) -> float:
        return (
            u0_norm
            + constant * radius ** params.p * t ** a / a
            + params.c0 * t ** b / b * w_norm
            - radius
        )

    if excess(1.0) <= 0:
        return 1.0
    return brentq(excess, 0.0, 1.0, xtol=1e-14)
