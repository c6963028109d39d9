import math
from pathlib import Path
from typing import Callable, Union

import numpy as np
from pydantic import BaseModel, validator
from scipy.special import gamma as gamma_fn

from fujita_lab.shared import DomainError, FlexiModel, hash_text


class RadialGrid(BaseModel):
    """Cell-centered grid on [0, R]: r_j = (j + 1/2) h, so r = 0 is never a node."""

    R: float
    M: int
    N: float

    @validator("R")
    def check_radius(cls, v):
        if v <= 0:
            raise ValueError(f"Truncation radius must be positive: {dict(R=v)}")
        return v

    @validator("M")
    def check_cells(cls, v):
        if v < 16:
            raise ValueError(f"Need at least 16 cells: {dict(M=v)}")
        return v

    @property
    def h(self) -> float:
        return self.R / self.M

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) * self.h

    @property
    def faces(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.h

    @property
    def sphere_area(self) -> float:
        # Surface measure of the unit sphere in R^N, equal to 2 for N = 1
        return 2 * math.pi ** (self.N / 2) / gamma_fn(self.N / 2)

    @property
    def weights(self) -> np.ndarray:
        """Midpoint weights of the radial integral: int f dx ~ sum f_j * weights_j."""
        return self.sphere_area * self.nodes ** (self.N - 1) * self.h

    @property
    def volumes(self) -> np.ndarray:
        """Exact r^{N-1} dr measure of each cell (without the sphere area)."""
        faces = self.faces
        return (faces[1:] ** self.N - faces[:-1] ** self.N) / self.N

    def refined(self, factor: int = 2) -> "RadialGrid":
        return RadialGrid(R=self.R, M=self.M * factor, N=self.N)

    def extended(self, factor: int = 2) -> "RadialGrid":
        return RadialGrid(R=self.R * factor, M=self.M * factor, N=self.N)


class NuWeight(BaseModel):
    alpha: float
    p: float

    @validator("alpha")
    def check_alpha(cls, v):
        if v <= 0:
            raise ValueError(f"Weight needs alpha > 0: {dict(alpha=v)}")
        return v

    @validator("p")
    def check_p(cls, v):
        if v <= 1:
            raise ValueError(f"Weight needs p > 1: {dict(p=v)}")
        return v

    @property
    def exponent(self) -> float:
        return self.alpha / (self.p - 1)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return (1 + r) ** self.exponent


class RadialField(FlexiModel):
    grid: RadialGrid
    values: np.ndarray
    overflowed: bool = False

    @validator("values", pre=True)
    def check_values(cls, v, values):
        v = np.asarray(v, dtype=float)
        grid = values.get("grid")
        if grid is not None and v.shape != (grid.M,):
            raise ValueError(f"Shape mismatch: {dict(shape=v.shape, M=grid.M)}")
        return v

    @classmethod
    def from_function(cls, grid: RadialGrid, fn: Callable[[np.ndarray], np.ndarray]):
        values = np.broadcast_to(np.asarray(fn(grid.nodes), dtype=float), (grid.M,))
        return cls(grid=grid, values=values.copy())

    @classmethod
    def zeros(cls, grid: RadialGrid):
        return cls(grid=grid, values=np.zeros(grid.M))

    def with_values(self, values: np.ndarray, overflowed: bool = False) -> "RadialField":
        return RadialField(grid=self.grid, values=values, overflowed=overflowed)

    def __mul__(self, c: float) -> "RadialField":
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def lq_norm(self, q: float) -> float:
        if q < 1:
            raise DomainError(f"L^q norm needs q >= 1: {dict(q=q)}")
        if math.isinf(q):
            return self.sup
        total = np.sum(np.abs(self.values) ** q * self.grid.weights)
        return float(total ** (1 / q))

    def nu_norm(self, weight: NuWeight) -> float:
        return float(np.max(weight(self.grid.nodes) * np.abs(self.values)))

    @property
    def digest(self) -> str:
        return hash_text(self.grid.json(sort_keys=True) + self.values.tobytes().hex())

    def integral(self) -> float:
        return float(np.sum(self.values * self.grid.weights))

    def weighted_power(self, alpha: float, p: float, cap: float = 1e300) -> "RadialField":
        """Pointwise r^alpha |u|^p, flagged as overflowed when a value exceeds the cap or is not finite."""
        with np.errstate(over="ignore", invalid="ignore"):
            values = self.grid.nodes ** alpha * np.abs(self.values) ** p
        overflowed = bool(np.any(~np.isfinite(values)) or np.any(values > cap))
        return self.with_values(values, overflowed=overflowed)

    def resample(self, grid: RadialGrid) -> "RadialField":
        """Linear interpolation onto another grid; zero beyond the old radius."""
        values = np.interp(
            grid.nodes, self.grid.nodes, self.values, left=self.values[0], right=0.0
        )
        values[grid.nodes > self.grid.R] = 0.0
        return RadialField(grid=grid, values=values)

    def dump(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(exist_ok=True, parents=True)
        header = f"# N={self.grid.N!r} R={self.grid.R!r} M={self.grid.M}"
        lines = [header] + [f"{float(r)!r} {float(v)!r}" for r, v in zip(self.grid.nodes, self.values)]
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path: Union[str, Path]) -> "RadialField":
        with open(path) as f:
            lines = [line.strip() for line in f if line.strip()]
        header = dict(item.split("=") for item in lines[0].lstrip("#").split())
        grid = RadialGrid(N=float(header["N"]), R=float(header["R"]), M=int(header["M"]))
        values = np.array([float(line.split()[1]) for line in lines[1:]])
        return cls(grid=grid, values=values)
