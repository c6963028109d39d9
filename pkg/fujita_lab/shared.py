"""
Short utility functions and the error classes shared by every module.
"""
import hashlib
from typing import Sequence

import numpy as np
from pydantic import BaseModel


class FlexiModel(BaseModel):
    class Config:
        arbitrary_types_allowed = True


class LabError(Exception):
    pass


class DomainError(LabError, ValueError):
    pass


class UnsupportedDimensionError(DomainError):
    pass


class InapplicableError(LabError):
    pass


class HypothesisError(InapplicableError, ValueError):
    pass


class StoreError(LabError):
    pass


def safe_div(num, denom):
    if denom > 0:
        return num / denom
    else:
        return 0


def fit_line(x: Sequence[float], y: Sequence[float]):
    """Least-squares line y = a*x + b. Returns (a, b, relative rms residual)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    assert len(x) == len(y) and len(x) >= 2, dict(n_x=len(x), n_y=len(y))
    slope, intercept = np.polyfit(x, y, deg=1)
    residual = y - (slope * x + intercept)
    scale = max(float(np.ptp(y)), float(np.max(np.abs(y))), 1e-300)
    rms = float(np.sqrt(np.mean(residual ** 2))) / scale
    return float(slope), float(intercept), rms


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = (x > 0) & (y > 0)
    assert mask.sum() >= 2, dict(x=x.tolist(), y=y.tolist())
    slope, _, _ = fit_line(np.log(x[mask]), np.log(y[mask]))
    return slope


def hash_text(x: str) -> str:
    return hashlib.md5(x.encode()).hexdigest()
