import itertools
import math
import re
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, validator

from fujita_lab.evolve import ForcingShape, OutcomeKind, SolverConfig
from fujita_lab.grid import RadialField, RadialGrid
from fujita_lab.params import Parameters
from lab.evaluation import Agreement


class ProfileKind(str, Enum):
    gaussian = "gaussian"
    bump = "bump"
    signchanging = "signchanging"
    zero = "zero"


class DataProfile(BaseModel):
    """
    Named radial data families:
    gaussian(a) = a exp(-r^2)
    bump(a, R0) = a exp(1 - 1/(1 - (r/R0)^2)) on r < R0
    signchanging(a) = a (1 - r^2) exp(-r^2)
    zero
    """

    kind: ProfileKind
    a: float = 1.0
    R0: float = 1.0

    @validator("R0")
    def check_support(cls, v):
        if v <= 0:
            raise ValueError(f"Bump support must be positive: {dict(R0=v)}")
        return v

    @classmethod
    def from_string(cls, text: str):
        match = re.fullmatch(r"\s*(\w+)\s*(?:\((.*)\))?\s*", str(text))
        if match is None:
            raise ValueError(f"Cannot parse profile: {dict(text=text)}")
        name, args = match.groups()
        kind = ProfileKind(name)
        values = [float(x) for x in args.split(",")] if args else []
        if kind == ProfileKind.zero:
            assert not values, dict(text=text)
            return cls(kind=kind, a=0.0)
        if kind == ProfileKind.bump:
            assert len(values) in {1, 2}, dict(text=text)
            return cls(kind=kind, a=values[0], R0=values[1] if len(values) == 2 else 1.0)
        assert len(values) <= 1, dict(text=text)
        return cls(kind=kind, a=values[0] if values else 1.0)

    def __str__(self) -> str:
        if self.kind == ProfileKind.zero:
            return "zero"
        if self.kind == ProfileKind.bump:
            return f"bump({self.a!r},{self.R0!r})"
        return f"{self.kind.value}({self.a!r})"

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == ProfileKind.gaussian:
            return self.a * np.exp(-(r ** 2))
        if self.kind == ProfileKind.signchanging:
            return self.a * (1 - r ** 2) * np.exp(-(r ** 2))
        if self.kind == ProfileKind.bump:
            x = np.minimum(r / self.R0, 1.0)
            with np.errstate(divide="ignore", over="ignore"):
                inner = np.where(x < 1, 1 - 1 / (1 - x ** 2), -np.inf)
            return self.a * np.exp(inner)
        return np.zeros_like(r)

    def sample(self, grid: RadialGrid) -> RadialField:
        return RadialField.from_function(grid, self)


class AxisName(str, Enum):
    p = "p"
    alpha = "alpha"
    sigma = "sigma"
    m = "m"
    N = "N"


class Axis(BaseModel):
    name: AxisName
    lo: float
    hi: float
    step: float

    @validator("step")
    def check_step(cls, v):
        if v <= 0:
            raise ValueError(f"Axis step must be positive: {dict(step=v)}")
        return v

    @validator("hi")
    def check_range(cls, v, values):
        if "lo" in values and v < values["lo"]:
            raise ValueError(f"Axis needs lo <= hi: {dict(lo=values['lo'], hi=v)}")
        return v

    @classmethod
    def from_string(cls, text: str):
        """`p:1.2:2.2:0.1` is p from 1.2 to 2.2 inclusive in steps of 0.1."""
        parts = str(text).split(":")
        if len(parts) != 4:
            raise ValueError(f"Axis must be name:lo:hi:step: {dict(text=text)}")
        name, lo, hi, step = parts
        return cls(name=name, lo=float(lo), hi=float(hi), step=float(step))

    @property
    def values(self) -> List[float]:
        n = int(math.floor((self.hi - self.lo) / self.step + 1e-9)) + 1
        return [round(self.lo + i * self.step, 12) for i in range(n)]


class SweepSpec(BaseModel):
    axes: List[Axis] = []
    base: Parameters
    u0: DataProfile
    w: DataProfile
    shape: ForcingShape = ForcingShape.spliced
    solver: SolverConfig = SolverConfig()
    output: Path = Path("phase.csv")
    gate_inconsistent: bool = True

    @validator("axes")
    def check_axes(cls, v):
        if len(v) > 2:
            raise ValueError(f"At most 2 sweep axes: {dict(n_axes=len(v))}")
        names = [a.name for a in v]
        if len(set(names)) != len(names):
            raise ValueError(f"Repeated sweep axis: {dict(names=names)}")
        return v

    def points(self) -> List[Dict[str, float]]:
        """Parameter dicts in row-major axis order; an empty axis list gives the base point."""
        base = self.base.dict()
        grids = [[(axis.name.value, x) for x in axis.values] for axis in self.axes]
        out = []
        for combo in itertools.product(*grids):
            raw = dict(base)
            raw.update(dict(combo))
            out.append(raw)
        return out


class PhasePoint(BaseModel):
    N: float
    alpha: float
    p: float
    sigma: float
    m: float
    u0_profile: str
    w_profile: str
    outcome: OutcomeKind
    t_star: Optional[float]
    horizon: float
    predicted_threshold: Optional[float]
    agreement: Agreement
    diagnostic: str = ""
