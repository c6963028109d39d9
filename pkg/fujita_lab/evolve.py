"""
Time evolution of u_t - Laplacian u = |x|^alpha |u|^p + zeta(t) w(x) for radial data.

`run` drives a method-of-lines solver (conservative finite volumes in r, IMEX-theta
in time) with blow-up detection. `picard_iterate` is an independent mild-solution
integrator built on the exact heat semigroup, used as an oracle for small data.
"""
import logging
import math
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, validator
from scipy.linalg import LinAlgError, solve_banded

from fujita_lab.grid import RadialField, RadialGrid
from fujita_lab.heatsem import semigroup_apply
from fujita_lab.params import Parameters
from fujita_lab.shared import DomainError, FlexiModel, fit_line, hash_text, safe_div

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name


class ForcingShape(str, Enum):
    pure = "pure"
    spliced = "spliced"


def _power_integral(scale: float, exponent: float, t0: float, t1: float) -> float:
    if exponent == -1:
        return scale * math.log(t1 / t0)
    return scale * (t1 ** (exponent + 1) - t0 ** (exponent + 1)) / (exponent + 1)


class ForcingProfile(BaseModel):
    """zeta(t) = c0 t^sigma for t < 1 and c_inf t^m for t >= 1, or c0 t^sigma throughout."""

    sigma: float = 0.0
    m: float = 0.0
    c0: float = 1.0
    c_inf: float = 1.0
    shape: ForcingShape = ForcingShape.spliced

    @validator("sigma")
    def check_sigma(cls, v):
        if v <= -1:
            raise ValueError(f"Forcing must be integrable at 0, need sigma > -1: {dict(sigma=v)}")
        return v

    @validator("c0", "c_inf")
    def check_scale(cls, v):
        if v <= 0:
            raise ValueError(f"Forcing scales must be positive: {dict(scale=v)}")
        return v

    @validator("shape", always=True)
    def check_splice(cls, v, values):
        if v == ForcingShape.spliced and values.get("c0") != values.get("c_inf"):
            logger.warning(dict(event="forcing_splice_mismatch", c0=values.get("c0"), c_inf=values.get("c_inf")))
        return v

    @classmethod
    def from_params(cls, params: Parameters, shape: ForcingShape = ForcingShape.spliced):
        return cls(sigma=params.sigma, m=params.m, c0=params.c0, c_inf=params.c_inf, shape=shape)

    def zeta(self, t: float) -> float:
        if t <= 0:
            raise DomainError(f"Forcing is evaluated only for t > 0: {dict(t=t)}")
        if self.shape == ForcingShape.pure or t < 1:
            return self.c0 * t ** self.sigma
        return self.c_inf * t ** self.m

    def zeta_integral(self, t0: float, t1: float) -> float:
        """Exact int_{t0}^{t1} zeta, split at t = 1 for the spliced shape."""
        assert 0 <= t0 <= t1, dict(t0=t0, t1=t1)
        if self.shape == ForcingShape.pure:
            return _power_integral(self.c0, self.sigma, t0, t1)
        total = 0.0
        if t0 < 1:
            total += _power_integral(self.c0, self.sigma, t0, min(t1, 1.0))
        if t1 > 1:
            total += _power_integral(self.c_inf, self.m, max(t0, 1.0), t1)
        return total


class Scheme(str, Enum):
    imex_theta = "imex_theta"
    explicit_rk = "explicit_rk"


class SolverConfig(BaseModel):
    R: float = 20.0
    M: int = 400
    dt_init: float = 1e-2
    dt_min: float = 1e-14
    safety: float = 0.2
    blow_cap: float = 1e8
    horizon: float = 10.0
    scheme: Scheme = Scheme.imex_theta
    theta: float = 1.0
    grow_halve: float = 0.10
    grow_double: float = 0.01
    growth_floor: float = 1e-3
    fit_window: int = 20
    fit_rtol: float = 0.05
    max_steps: int = 2000000
    convergence_gate: bool = True
    gate_rtol: float = 0.01

    @validator("theta")
    def check_theta(cls, v):
        if not 0.5 <= v <= 1:
            raise ValueError(f"Need 1/2 <= theta <= 1: {dict(theta=v)}")
        return v

    @validator("dt_min", "dt_init", "horizon", "blow_cap", "safety")
    def check_positive(cls, v):
        if v <= 0:
            raise ValueError(f"Must be positive: {dict(value=v)}")
        return v

    def make_grid(self, N: float) -> RadialGrid:
        return RadialGrid(R=self.R, M=self.M, N=N)


class OutcomeKind(str, Enum):
    blew_up = "BlewUp"
    global_candidate = "GlobalCandidate"
    inconclusive = "Inconclusive"


class TracePoint(BaseModel):
    t: float
    dt: float
    sup_norm: float
    lpc_norm: float
    extra_norm: Optional[float]


class Snapshot(BaseModel):
    t: float
    values: List[float]


class RunInputs(BaseModel):
    """Everything a run depends on; the outcome id is the hash of this record."""

    params: Parameters
    forcing: ForcingProfile
    solver: SolverConfig
    grid: RadialGrid
    u0_digest: str
    w_digest: str
    u0_profile: str = ""
    w_profile: str = ""


class SimulationOutcome(BaseModel):
    kind: OutcomeKind
    inputs: Optional[RunInputs]
    horizon: float
    t_end: float
    t_star: Optional[float]
    t_star_method: Optional[str]
    terminal_sup: Optional[float]
    norm_trend: Optional[str]
    reason: Optional[str]
    config_hash: str = ""
    trace: List[TracePoint] = []
    snapshots: List[Snapshot] = []
    gate_report: Optional[dict]

    def trace_frame(self) -> pd.DataFrame:
        df = pd.DataFrame([x.dict() for x in self.trace])
        return df[["t", "dt", "sup_norm", "lpc_norm"]]

    def summary(self) -> dict:
        return self.dict(exclude={"trace", "snapshots"})


def radial_laplacian(grid: RadialGrid) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Conservative cell-centered Laplacian (1/r^{N-1})(r^{N-1} u_r)_r as (lower, diag, upper).
    Zero flux at r = 0, homogeneous Dirichlet at r = R through an antisymmetric ghost cell.
    """
    faces = grid.faces
    h = grid.h
    conductance = faces ** (grid.N - 1) / h
    conductance[0] = 0.0
    conductance[-1] = 2 * grid.R ** (grid.N - 1) / h
    volumes = grid.volumes
    lower = conductance[:-1] / volumes
    upper = conductance[1:] / volumes
    diag = -(lower + upper)
    lower[0] = 0.0
    upper[-1] = 0.0
    return lower, diag, upper


def apply_laplacian(stencil, u: np.ndarray) -> np.ndarray:
    lower, diag, upper = stencil
    out = diag * u
    out[1:] += lower[1:] * u[:-1]
    out[:-1] += upper[:-1] * u[1:]
    return out


def reaction_flow(u: np.ndarray, weight: np.ndarray, p: float, dt: float) -> np.ndarray:
    """Exact flow over dt of the pointwise ODE u' = weight |u|^p."""
    k = (p - 1) * dt * weight
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        grow = np.abs(u) ** (p - 1)
        positive = u / (1 - k * grow) ** (1 / (p - 1))
        negative = u / (1 + k * grow) ** (1 / (p - 1))
    out = np.where(u >= 0, positive, negative)
    out[(u > 0) & (k * grow >= 1)] = np.inf
    return out


def stability_bound(rate: RadialField, params: Parameters, config: SolverConfig, stencil) -> float:
    """rate holds r^alpha |u|^(p-1), so p * rate is the Lipschitz constant of the reaction."""
    lipschitz = float(np.max(params.p * rate.values))
    bound = config.safety / lipschitz if lipschitz > 0 else math.inf
    if config.scheme == Scheme.explicit_rk:
        bound = min(bound, config.safety / float(np.max(np.abs(stencil[1]))))
    return bound


def mol_step(
    u: RadialField,
    t: float,
    dt: float,
    params: Parameters,
    profile: ForcingProfile,
    w: RadialField,
    config: SolverConfig,
    stencil=None,
) -> RadialField:
    grid = u.grid
    if stencil is None:
        stencil = radial_laplacian(grid)
    forcing = w.values * profile.zeta_integral(t, t + dt)

    if config.scheme == Scheme.explicit_rk:
        def rhs(v: RadialField):
            source = v.weighted_power(params.alpha, params.p)
            return apply_laplacian(stencil, v.values) + source.values, source.overflowed

        k1, first = rhs(u)
        k2, second = rhs(u.with_values(u.values + dt * k1))
        return u.with_values(u.values + dt / 2 * (k1 + k2) + forcing, overflowed=first or second)

    reacted = reaction_flow(u.values, grid.nodes ** params.alpha, params.p, dt)
    if not np.all(np.isfinite(reacted)):
        # the pointwise ODE blows up inside this step
        return u.with_values(reacted, overflowed=True)
    lower, diag, upper = stencil
    theta = config.theta
    rhs = reacted
    if theta < 1:
        rhs = reacted + (1 - theta) * dt * apply_laplacian(stencil, reacted)
    banded = np.zeros((3, grid.M))
    banded[0, 1:] = -theta * dt * upper[:-1]
    banded[1, :] = 1 - theta * dt * diag
    banded[2, :-1] = -theta * dt * lower[1:]
    diffused = solve_banded((1, 1), banded, rhs)
    return u.with_values(diffused + forcing)


def extrapolate_blowup(times: Sequence[float], sups: Sequence[float], p: float, rtol: float) -> Optional[float]:
    """Zero of the linear fit of sup^(1-p) against t, or None when the fit is not convincing."""
    times = np.asarray(times, dtype=float)
    y = np.asarray(sups, dtype=float) ** (1 - p)
    if len(times) < 3 or np.ptp(times) <= 0:
        return None
    slope, intercept, rms = fit_line(times, y)
    if slope >= 0 or rms > rtol:
        return None
    t_star = -intercept / slope
    if t_star < times[0]:
        return None
    return float(t_star)


def _norm_trend(trace: List[TracePoint]) -> str:
    half = next(x.sup_norm for x in trace if x.t >= trace[-1].t / 2)
    last = trace[-1].sup_norm
    if last < half * (1 - 1e-9):
        return "decreasing"
    if last > half * (1 + 1e-9):
        return "increasing"
    return "flat"


def run(
    params: Parameters,
    profile: ForcingProfile,
    u0: RadialField,
    w: RadialField,
    config: SolverConfig,
    snapshot_times: Sequence[float] = (),
    extra_q: Optional[float] = None,
    u0_profile: str = "",
    w_profile: str = "",
) -> SimulationOutcome:
    grid = u0.grid
    assert w.grid == grid, dict(u0_grid=grid, w_grid=w.grid)
    if u0.sup >= config.blow_cap:
        raise DomainError(f"Blow-up cap must exceed the initial sup norm: {dict(sup=u0.sup, cap=config.blow_cap)}")

    stencil = radial_laplacian(grid)
    p_c = params.p_crit_lebesgue
    pending = sorted(set(float(s) for s in snapshot_times if 0 < s <= config.horizon))
    inputs = RunInputs(
        params=params,
        forcing=profile,
        solver=config,
        grid=grid,
        u0_digest=u0.digest,
        w_digest=w.digest,
        u0_profile=u0_profile,
        w_profile=w_profile,
    )
    config_hash = hash_text(inputs.json(sort_keys=True))

    def observe(field: RadialField, t: float, dt: float) -> TracePoint:
        return TracePoint(
            t=t,
            dt=dt,
            sup_norm=field.sup,
            lpc_norm=field.lq_norm(p_c) if p_c >= 1 else math.nan,
            extra_norm=field.lq_norm(extra_q) if extra_q is not None else None,
        )

    t = 0.0
    dt = config.dt_init
    u = u0
    trace = [observe(u, t, 0.0)]
    snapshots = []
    outcome = dict(horizon=config.horizon, config_hash=config_hash, inputs=inputs)

    def finish(kind: OutcomeKind, **kwargs) -> SimulationOutcome:
        result = SimulationOutcome(
            kind=kind, t_end=t, trace=trace, snapshots=snapshots, **outcome, **kwargs
        )
        logger.info(dict(event="run_finished", **result.summary()))
        return result

    def confirm_blowup() -> Optional[float]:
        window = trace[-config.fit_window:]
        t_star = extrapolate_blowup(
            [x.t for x in window], [x.sup_norm for x in window], params.p, config.fit_rtol
        )
        if t_star is not None and t_star <= config.horizon:
            return t_star
        return None

    steps = 0
    while t < config.horizon:
        steps += 1
        if steps > config.max_steps:
            return finish(OutcomeKind.inconclusive, reason="step budget exhausted")
        limit = config.horizon - t
        if pending:
            limit = min(limit, pending[0] - t)
        rate = u.weighted_power(params.alpha, params.p - 1)
        step = min(dt, stability_bound(rate, params, config, stencil), limit)
        if step < config.dt_min and limit >= config.dt_min:
            t_star = confirm_blowup()
            if t_star is not None:
                return finish(OutcomeKind.blew_up, t_star=t_star, t_star_method="dt collapse, sup^(1-p) fit")
            return finish(OutcomeKind.inconclusive, reason="time step collapsed below dt_min")

        try:
            new = mol_step(u, t, step, params, profile, w, config, stencil=stencil)
        except (LinAlgError, ValueError) as e:
            return finish(OutcomeKind.inconclusive, reason=f"tridiagonal solve failed: {e}")
        if new.overflowed or not new.is_finite:
            if step / 2 >= config.dt_min:
                dt = step / 2
                continue
            return finish(OutcomeKind.inconclusive, reason="numerical overflow")

        sup_old = u.sup
        growth = (new.sup - sup_old) / max(sup_old, config.growth_floor)
        if growth > config.grow_halve and step / 2 >= config.dt_min:
            dt = step / 2
            continue

        t += step
        u = new
        trace.append(observe(u, t, step))
        if pending and math.isclose(t, pending[0], rel_tol=1e-12, abs_tol=1e-14):
            snapshots.append(Snapshot(t=pending.pop(0), values=u.values.tolist()))
        if growth < config.grow_double:
            dt = min(2 * dt, config.dt_init)

        if u.sup >= config.blow_cap:
            t_star = confirm_blowup()
            if t_star is not None:
                return finish(OutcomeKind.blew_up, t_star=t_star, t_star_method="cap crossing, sup^(1-p) fit")
            return finish(OutcomeKind.inconclusive, reason="cap crossed without confirming extrapolation")

    result = finish(
        OutcomeKind.global_candidate,
        terminal_sup=u.sup,
        norm_trend=_norm_trend(trace),
    )
    if config.convergence_gate:
        result = convergence_gate(params, profile, u0, w, config, result)
    return result


def convergence_gate(
    params: Parameters,
    profile: ForcingProfile,
    u0: RadialField,
    w: RadialField,
    config: SolverConfig,
    result: SimulationOutcome,
) -> SimulationOutcome:
    """Re-runs with halved h and with doubled R; downgrades on disagreement."""
    report = {}
    base = config.copy(update=dict(convergence_gate=False))
    variants = dict(
        refined=(u0.grid.refined(), base.copy(update=dict(M=base.M * 2))),
        extended=(u0.grid.extended(), base.copy(update=dict(R=base.R * 2, M=base.M * 2))),
    )
    passed = True
    for name, (grid, cfg) in variants.items():
        other = run(params, profile, u0.resample(grid), w.resample(grid), cfg)
        change = math.inf
        if other.kind == OutcomeKind.global_candidate:
            change = abs(other.terminal_sup - result.terminal_sup) / max(result.terminal_sup, 1e-300)
        report[name] = dict(kind=other.kind.value, relative_change=change)
        passed = passed and change < config.gate_rtol

    update = dict(gate_report=report)
    if not passed:
        update.update(kind=OutcomeKind.inconclusive, reason="grid or domain convergence gate failed")
    logger.info(dict(event="convergence_gate", passed=passed, **report))
    return result.copy(update=update)


class PicardResult(FlexiModel):
    times: np.ndarray
    iterates: List[np.ndarray]
    ratios: List[float]
    diverged_at: Optional[int]

    @property
    def terminal(self) -> np.ndarray:
        return self.iterates[-1][-1]


def picard_iterate(
    params: Parameters,
    profile: ForcingProfile,
    u0: RadialField,
    w: RadialField,
    T: float,
    iterations: int = 8,
    n_steps: int = 50,
    nonlinear: bool = True,
    cap: float = 1e8,
) -> PicardResult:
    """
    Fixed-point iteration of the mild formulation
    u(t) = e^{t Lap} u0 + int_0^t e^{(t-s) Lap}(|x|^alpha |u|^p + zeta(s) w) ds
    on a uniform coarse time grid. Each Duhamel integral is advanced one step at a time
    through the semigroup property; the forcing weights are exact integrals of zeta.
    """
    assert w.grid == u0.grid, dict(u0_grid=u0.grid, w_grid=w.grid)
    times = np.linspace(0.0, T, n_steps + 1)
    dt = times[1] - times[0]

    def propagate(values: np.ndarray, s: float) -> np.ndarray:
        return semigroup_apply(u0.with_values(values), s).values

    linear = np.empty((n_steps + 1, u0.grid.M))
    linear[0] = u0.values
    forced = np.zeros(u0.grid.M)
    w_half = propagate(w.values, dt / 2)
    for n in range(n_steps):
        forced = propagate(forced, dt) + profile.zeta_integral(times[n], times[n + 1]) * w_half
        linear[n + 1] = propagate(u0.values, times[n + 1]) + forced

    current = np.zeros_like(linear)
    iterates = [current]
    ratios = []
    previous_distance = None
    diverged_at = None
    for k in range(1, iterations + 1):
        new = linear.copy()
        if nonlinear:
            powered = [u0.with_values(row).weighted_power(params.alpha, params.p) for row in current]
            if any(x.overflowed for x in powered):
                diverged_at = k
                logger.warning(dict(event="picard_diverged", k=k, reason="source overflow"))
                break
            source = np.array([x.values for x in powered])
            duhamel = np.zeros(u0.grid.M)
            for n in range(n_steps):
                duhamel = propagate(duhamel + dt / 2 * source[n], dt) + dt / 2 * source[n + 1]
                new[n + 1] += duhamel
        distance = float(np.max(np.abs(new - current)))
        if previous_distance is not None:
            ratios.append(safe_div(distance, previous_distance))
        previous_distance = distance
        current = new
        iterates.append(current)
        if not np.all(np.isfinite(current)) or np.max(np.abs(current)) > cap:
            diverged_at = k
            logger.warning(dict(event="picard_diverged", k=k))
            break
    return PicardResult(times=times, iterates=iterates, ratios=ratios, diverged_at=diverged_at)


class ComparisonReport(BaseModel):
    order_violation: float
    t_end: float
    advisory: bool
    tolerance: float
    passed: bool


def comparison_check(
    params: Parameters,
    profile: ForcingProfile,
    u0_low: RadialField,
    u0_high: RadialField,
    w: RadialField,
    config: SolverConfig,
    n_snapshots: int = 20,
    tolerance: float = 1e-6,
) -> ComparisonReport:
    assert np.all(u0_low.values <= u0_high.values), "u0_low must lie below u0_high"
    advisory = bool(np.any(u0_low.values < 0) or np.any(w.values < 0))
    if advisory:
        logger.warning(dict(event="comparison_advisory", reason="sign-changing data"))
    times = np.linspace(0, config.horizon, n_snapshots + 1)[1:]
    low = run(params, profile, u0_low, w, config, snapshot_times=times)
    high = run(params, profile, u0_high, w, config, snapshot_times=times)

    violation = float(np.max(u0_low.values - u0_high.values).clip(min=0))
    for a, b in zip(low.snapshots, high.snapshots):
        assert math.isclose(a.t, b.t), dict(t_low=a.t, t_high=b.t)
        gap = np.asarray(a.values) - np.asarray(b.values)
        violation = max(violation, float(np.max(gap).clip(min=0)))
    t_end = min(low.t_end, high.t_end)
    return ComparisonReport(
        order_violation=violation,
        t_end=t_end,
        advisory=advisory,
        tolerance=tolerance,
        passed=violation <= tolerance,
    )
