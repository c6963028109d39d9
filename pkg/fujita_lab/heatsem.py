"""
Heat kernel, the heat semigroup on radial fields and the weighted smoothing operator
S_gamma(t) phi = exp(t Laplacian)(|x|^-gamma phi), together with numerical checks of
the smoothing estimate and of the kernel-weight bound.
"""
import logging
import math
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, validator
from scipy.signal import fftconvolve
from scipy.special import erf

from fujita_lab.grid import RadialField, RadialGrid
from fujita_lab.shared import DomainError, HypothesisError, UnsupportedDimensionError

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

EXACT_DIMENSIONS = (1, 3)


class KernelSpec(BaseModel):
    N: float
    t: float

    @validator("t")
    def check_time(cls, v):
        if v <= 0:
            raise ValueError(f"Heat kernel needs t > 0: {dict(t=v)}")
        return v

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return (4 * math.pi * self.t) ** (-self.N / 2) * np.exp(-(r ** 2) / (4 * self.t))

    def line_weights(self, offsets: np.ndarray, h: float) -> np.ndarray:
        """
        Quadrature weights of the 1D kernel at node offsets with spacing h, not renormalized,
        so mass carried past the truncation radius is lost. Sampled kernel values once the
        kernel is resolved (their sum differs from 1 by about exp(-4 pi^2 t / h^2)), exact
        cell masses below that.
        """
        assert float(self.N) == 1, dict(N=self.N)
        if self.t >= h ** 2:
            return h * self(offsets)
        scale = math.sqrt(4 * self.t)
        return (erf((offsets + h / 2) / scale) - erf((offsets - h / 2) / scale)) / 2


def has_exact_path(N: float) -> bool:
    return float(N) in EXACT_DIMENSIONS


def _line_convolve(full: np.ndarray, t: float, h: float) -> np.ndarray:
    # full is sampled at x_k = (k - n/2 + 1/2) h; kernel offsets cover every pair of nodes
    n = len(full)
    offsets = np.arange(-(n - 1), n) * h
    kernel = KernelSpec(N=1, t=t).line_weights(offsets, h)
    return fftconvolve(full, kernel, mode="full")[n - 1: 2 * n - 1]


def semigroup_apply(field: RadialField, t: float) -> RadialField:
    """exp(t Laplacian) applied to a radial field, treating it as zero beyond R."""
    if t < 0:
        raise DomainError(f"Semigroup needs t >= 0: {dict(t=t)}")
    if t == 0:
        return field.with_values(field.values.copy())
    grid = field.grid
    if not has_exact_path(grid.N):
        raise UnsupportedDimensionError(
            f"No exact semigroup path, use the MOL solver instead: {dict(N=grid.N)}"
        )

    M = grid.M
    if float(grid.N) == 1:
        full = np.concatenate([field.values[::-1], field.values])
        values = _line_convolve(full, t, grid.h)[M:]
    else:
        # r u solves the 1D heat equation on (0, inf) with odd extension
        v = grid.nodes * field.values
        full = np.concatenate([-v[::-1], v])
        values = _line_convolve(full, t, grid.h)[M:] / grid.nodes
    if np.all(field.values >= 0):
        # the kernel is positive; only FFT roundoff goes below zero
        values = np.maximum(values, 0.0)
    return field.with_values(values)


def smoothing_apply(field: RadialField, gamma: float, t: float) -> RadialField:
    N = field.grid.N
    if not 0 <= gamma < N:
        raise DomainError(f"Smoothing operator needs 0 <= gamma < N: {dict(gamma=gamma, N=N)}")
    if t <= 0:
        raise DomainError(f"Smoothing operator needs t > 0: {dict(t=t)}")
    weighted = field.with_values(field.grid.nodes ** (-gamma) * field.values)
    return semigroup_apply(weighted, t)


def check_smoothing_exponents(
    gamma: float, q1: float, q2: float, N: float, allow_endpoint: bool = False
) -> bool:
    """Raises HypothesisError naming the failing inequality; returns True at the endpoint."""
    if not 0 <= gamma < N:
        raise DomainError(f"Need 0 <= gamma < N: {dict(gamma=gamma, N=N)}")
    if gamma == 0:
        if not 1 <= q1 <= q2:
            raise HypothesisError(f"Violated 1 <= q1 <= q2 <= inf: {dict(q1=q1, q2=q2)}")
        return False
    if q1 <= 1:
        raise HypothesisError(f"Violated 1 < q1: {dict(q1=q1)}")
    if q2 <= 1:
        raise HypothesisError(f"Violated 1 < q2: {dict(q2=q2)}")
    middle = gamma / N + 1 / q1
    if middle >= 1:
        raise HypothesisError(f"Violated gamma/N + 1/q1 < 1: {dict(value=middle)}")
    if math.isclose(1 / q2, middle, rel_tol=1e-12):
        if allow_endpoint and not (math.isinf(q1) or math.isinf(q2)):
            logger.warning(dict(event="smoothing_endpoint", gamma=gamma, q1=q1, q2=q2))
            return True
        raise HypothesisError(f"Endpoint 1/q2 = gamma/N + 1/q1 not allowed: {dict(q1=q1, q2=q2)}")
    if 1 / q2 > middle:
        raise HypothesisError(
            f"Violated 1/q2 < gamma/N + 1/q1: {dict(inv_q2=1 / q2, value=middle)}"
        )
    return False


def power_law_fields(
    grid: RadialGrid, center: float, offsets: Sequence[float] = (-0.1, -0.05, 0.0, 0.05, 0.1)
) -> List[RadialField]:
    """Profiles r^-a with a near the scale-invariant exponent N/q1."""
    return [RadialField.from_function(grid, lambda r, a=center + o: r ** (-a)) for o in offsets]


class SmoothingRow(BaseModel):
    gamma: float
    q1: float
    q2: float
    t: float
    field: int
    ratio: float


class SmoothingReport(BaseModel):
    gamma: float
    q1: float
    q2: float
    N: float
    endpoint: bool
    sup_ratio: float
    variation: List[float]
    rows: List[SmoothingRow]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame([r.dict() for r in self.rows])
        return df[["gamma", "q1", "q2", "t", "ratio"]]


def verify_smoothing_estimate(
    gamma: float,
    q1: float,
    q2: float,
    N: float,
    t_grid: Sequence[float],
    test_fields: Optional[List[RadialField]] = None,
    allow_endpoint: bool = False,
) -> SmoothingReport:
    endpoint = check_smoothing_exponents(gamma, q1, q2, N, allow_endpoint=allow_endpoint)
    if test_fields is None:
        grid = RadialGrid(R=200.0, M=10000, N=N)
        center = 0.0 if math.isinf(q1) else N / q1
        test_fields = power_law_fields(grid, center)
    exponent = (N / 2) * (1 / q1 - 1 / q2) + gamma / 2

    rows = []
    variation = []
    for i, phi in enumerate(test_fields):
        assert phi.grid.N == N, dict(field_N=phi.grid.N, N=N)
        norm_in = phi.lq_norm(q1)
        ratios = []
        for t in t_grid:
            out = smoothing_apply(phi, gamma, t) if gamma > 0 else semigroup_apply(phi, t)
            ratio = out.lq_norm(q2) * t ** exponent / norm_in
            ratios.append(ratio)
            rows.append(SmoothingRow(gamma=gamma, q1=q1, q2=q2, t=t, field=i, ratio=ratio))
        variation.append(max(ratios) / min(ratios) if min(ratios) > 0 else math.inf)

    report = SmoothingReport(
        gamma=gamma,
        q1=q1,
        q2=q2,
        N=N,
        endpoint=endpoint,
        sup_ratio=max(r.ratio for r in rows),
        variation=variation,
        rows=rows,
    )
    logger.info(dict(event="smoothing_estimate", sup_ratio=report.sup_ratio, variation=variation))
    return report


class KernelWeightReport(BaseModel):
    gamma: float
    kappa: float
    N: float
    sup_ratio: float
    ratios: List[List[float]]


def _kernel_weight_lhs(gamma: float, N: float, x: float, lambdas: np.ndarray) -> np.ndarray:
    # int exp(-|z|^2) (1 + |x - lambda z|)^-gamma dz with x on the first axis
    lam = lambdas[:, None]
    if float(N) == 1:
        dz = 16.0 / 8000
        z = -8.0 + (np.arange(8000) + 0.5) * dz
        integrand = np.exp(-(z ** 2)) * (1 + np.abs(x - lam * z)) ** (-gamma)
        return integrand.sum(axis=1) * dz
    if float(N) == 3:
        d_rho = 8.0 / 800
        rho = (np.arange(800) + 0.5) * d_rho
        c, c_weights = np.polynomial.legendre.leggauss(64)
        dist = np.sqrt(
            np.maximum(
                x ** 2 - 2 * x * lam[..., None] * rho[:, None] * c + (lam[..., None] * rho[:, None]) ** 2,
                0.0,
            )
        )
        inner = ((1 + dist) ** (-gamma) * c_weights).sum(axis=-1)
        return 2 * math.pi * (rho ** 2 * np.exp(-(rho ** 2)) * inner).sum(axis=-1) * d_rho
    raise UnsupportedDimensionError(f"Kernel weight bound only for N in {EXACT_DIMENSIONS}: {dict(N=N)}")


def verify_kernel_weight_bound(
    gamma: float,
    kappa: float,
    x_grid: Sequence[float],
    lambda_grid: Sequence[float],
    N: float = 1,
) -> KernelWeightReport:
    if gamma <= 0 or kappa <= 0:
        raise DomainError(f"Need gamma, kappa > 0: {dict(gamma=gamma, kappa=kappa)}")
    lambdas = np.asarray(lambda_grid, dtype=float)
    if np.any(lambdas > kappa) or np.any(lambdas < 0):
        raise DomainError(f"Need 0 <= lambda <= kappa: {dict(kappa=kappa, lambdas=lambdas.tolist())}")

    ratios = []
    for x in x_grid:
        lhs = _kernel_weight_lhs(gamma, N, float(x), lambdas)
        ratios.append((lhs * (1 + abs(x)) ** gamma).tolist())
    sup_ratio = float(np.max(ratios))
    logger.info(dict(event="kernel_weight_bound", N=N, gamma=gamma, sup_ratio=sup_ratio))
    return KernelWeightReport(gamma=gamma, kappa=kappa, N=N, sup_ratio=sup_ratio, ratios=ratios)
