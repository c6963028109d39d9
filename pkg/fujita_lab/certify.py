"""
Blow-up certificates from the test-function method and exponent witnesses for
small-data global existence.

A certificate multiplies the equation by a space-time cut-off, bounds the diffusion
terms with Young's inequality and checks numerically that the forcing contribution
L(T) strictly exceeds the Young-bounded right side Rhs(T). The test functions are
products f(t/T)^a g(.)^b, so every space-time integral factors into a time integral
times a radial integral.
"""
import logging
import math
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel
from scipy.special import gamma

from fujita_lab.evolve import ForcingProfile, OutcomeKind, SolverConfig, run
from fujita_lab.grid import RadialField, RadialGrid
from fujita_lab.heatsem import has_exact_path
from fujita_lab.params import Parameters
from fujita_lab.shared import loglog_slope
from fujita_lab.specfun import beta_fn

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

RESIDUAL_TOL = 1e-9


def smooth_step(s: np.ndarray):
    """
    S(s) = e^{-1/s} / (e^{-1/s} + e^{-1/(1-s)}) on (0, 1), 0 below and 1 above.
    Returns S, S' and S''.
    """
    s = np.asarray(s, dtype=float)
    inside = (s > 0) & (s < 1)
    x = np.where(inside, s, 0.5)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        a = np.exp(-1 / x)
        b = np.exp(-1 / (1 - x))
        d = a + b
        prod = a * b
        q = 1 / x ** 2 + 1 / (1 - x) ** 2
        dq = -2 / x ** 3 + 2 / (1 - x) ** 3
        dd = a / x ** 2 - b / (1 - x) ** 2
        dprod = prod * (1 / x ** 2 - 1 / (1 - x) ** 2)
        first = prod * q / d ** 2
        second = (dprod * q + prod * dq) / d ** 2 - 2 * prod * q * dd / d ** 3

    # a * b underflows to 0 next to the end points, where both derivatives vanish
    first = np.nan_to_num(first, nan=0.0, posinf=0.0, neginf=0.0)
    second = np.nan_to_num(second, nan=0.0, posinf=0.0, neginf=0.0)
    value = np.where(inside, a / d, (s >= 1).astype(float))
    return value, np.where(inside, first, 0.0), np.where(inside, second, 0.0)


class CutoffPair(BaseModel):
    """
    f(tau) = S(4 tau - 1) S(9 - 12 tau): zero off (1/4, 3/4), one on [1/2, 2/3].
    g(s) = S(2 - s): one on [0, 1], zero on [2, inf).
    """

    def f(self, tau: np.ndarray):
        rise, rise_d, _ = smooth_step(4 * np.asarray(tau) - 1)
        fall, fall_d, _ = smooth_step(9 - 12 * np.asarray(tau))
        return rise * fall, 4 * rise_d * fall - 12 * rise * fall_d

    def g(self, s: np.ndarray):
        value, first, second = smooth_step(2 - np.asarray(s))
        return value, -first, second


CUTOFFS = CutoffPair()


class PsiSample(BaseModel):
    psi: List[List[float]]
    dpsi_dt: List[List[float]]
    lap_psi: List[List[float]]


def _psi_space_factor(s: np.ndarray, k: float, N: float):
    # Laplacian of g(r^2/T)^k is g^{k-2} k H / T
    g, dg, d2g = CUTOFFS.g(s)
    H = g * (4 * s * d2g + 2 * N * dg) + (k - 1) * 4 * s * dg ** 2
    return g, H


def test_function_psi(T: float, params: Parameters, t: Sequence[float], r: Sequence[float]) -> PsiSample:
    """psi_T = f(t/T)^{p'} g(|x|^2/T)^{2p'} and its analytic derivatives on a (t, r) grid."""
    assert T > 0, dict(T=T)
    p_dual = params.p_dual
    k = 2 * p_dual
    t = np.asarray(t, dtype=float)[:, None]
    r = np.asarray(r, dtype=float)[None, :]
    f, df = CUTOFFS.f(t / T)
    s = r ** 2 / T
    g, H = _psi_space_factor(s, k, params.N)
    with np.errstate(divide="ignore", invalid="ignore"):
        g_lower = np.where(g > 0, g ** (k - 2), 0.0)
    psi = f ** p_dual * g ** k
    dpsi_dt = p_dual * f ** (p_dual - 1) * df / T * g ** k
    lap_psi = f ** p_dual * k * g_lower * H / T
    return PsiSample(psi=psi.tolist(), dpsi_dt=dpsi_dt.tolist(), lap_psi=lap_psi.tolist())


class Variant(str, Enum):
    psi = "psi_T"
    phi = "phi_T_eps"


class EpsilonRule(str, Enum):
    inverse_t = "1/T"
    inverse_sqrt_t = "1/sqrt(T)"
    fixed = "fixed"


class Verdict(str, Enum):
    certified = "certified"
    not_at_this_t = "not-at-this-T"
    inapplicable = "inapplicable"
    inconclusive = "inconclusive"


class CertifyConfig(BaseModel):
    ladder_min_exp: int = 0
    ladder_max_exp: int = 16
    n_time: int = 400
    n_space: int = 2000
    max_refinements: int = 4
    rtol: float = 1e-3
    young_delta: float = 0.5
    epsilon_rule: EpsilonRule = EpsilonRule.inverse_t
    epsilon_fixed: float = 0.01

    @property
    def ladder(self) -> List[float]:
        return [10.0 ** k for k in range(self.ladder_min_exp, self.ladder_max_exp + 1)]

    def epsilon(self, T: float) -> float:
        if self.epsilon_rule == EpsilonRule.inverse_t:
            return 1 / T
        if self.epsilon_rule == EpsilonRule.inverse_sqrt_t:
            return 1 / math.sqrt(T)
        return self.epsilon_fixed


def young_constant(p: float, delta: float = 0.5) -> float:
    """C_delta in ab <= delta a^p + C_delta b^{p'}."""
    p_dual = p / (p - 1)
    return (1 / p_dual) * (delta * p) ** (-p_dual / p)


class LadderPoint(BaseModel):
    T: float
    epsilon: Optional[float]
    L: float
    rhs: float
    n_time: int
    n_space: int
    converged: bool


class BlowupCertificate(BaseModel):
    params: Parameters
    forcing: ForcingProfile
    w_grid: RadialGrid
    w_values: List[float]
    w_integral: float
    variant: Variant
    certify_config: CertifyConfig
    young_delta: float
    young_const: float
    verdict: Verdict
    T: Optional[float]
    L: Optional[float]
    rhs: Optional[float]
    t_star_upper: Optional[float]
    ladder: List[LadderPoint] = []
    slope_L: Optional[float]
    slope_rhs: Optional[float]
    expected_slope_L: float
    expected_slope_rhs: Optional[float]
    note: str = ""

    @property
    def w(self) -> RadialField:
        return RadialField(grid=self.w_grid, values=np.asarray(self.w_values))

    def recheck(self) -> "BlowupCertificate":
        return certify_blowup(self.params, self.forcing, self.w, self.certify_config, variant=self.variant)


def _time_factors(T: float, params: Parameters, profile: ForcingProfile, n: int):
    # f vanishes off (1/4, 3/4)
    dtau = 0.5 / n
    tau = 0.25 + (np.arange(n) + 0.5) * dtau
    p_dual = params.p_dual
    f, df = CUTOFFS.f(tau)
    zeta = np.array([profile.zeta(T * x) for x in tau])
    lower = T * np.sum(f ** p_dual) * dtau
    forcing = T * np.sum(zeta * f ** p_dual) * dtau
    derivative = T * np.sum((p_dual * np.abs(df) / T) ** p_dual) * dtau
    return lower, derivative, forcing


def _space_factors(T: float, eps: Optional[float], params: Parameters, n: int):
    N, p_dual = params.N, params.p_dual
    r_max = math.sqrt(2 * T) if eps is None else math.sqrt(2 / eps)
    dr = r_max / n
    r = (np.arange(n) + 0.5) * dr
    measure = 2 * math.pi ** (N / 2) / gamma(N / 2) * r ** (N - 1) * dr * r ** (-params.nu_exponent)
    if eps is None:
        k = 2 * p_dual
        s = r ** 2 / T
        g, H = _psi_space_factor(s, k, N)
        lap = np.sum(measure * (k * np.abs(H) / T) ** p_dual)
        mass = np.sum(measure * g ** k)
    else:
        s = eps * r ** 2
        g, dg, d2g = CUTOFFS.g(s)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            term = eps ** p_dual * np.abs(4 * s * d2g + 2 * N * dg) ** p_dual * g ** (1 - p_dual)
        term = np.where(g > 1e-300, term, 0.0)
        lap = np.sum(measure * np.nan_to_num(term, nan=0.0, posinf=0.0))
        mass = np.sum(measure * g)
    return lap, mass


def _forcing_space_factor(T: float, eps: Optional[float], w: RadialField, params: Parameters) -> float:
    r = w.grid.nodes
    if eps is None:
        g, _, _ = CUTOFFS.g(r ** 2 / T)
        return float(np.sum(w.values * g ** (2 * params.p_dual) * w.grid.weights))
    g, _, _ = CUTOFFS.g(eps * r ** 2)
    return float(np.sum(w.values * g * w.grid.weights))


def evaluate_ladder_point(
    T: float,
    params: Parameters,
    profile: ForcingProfile,
    w: RadialField,
    config: CertifyConfig,
    variant: Variant,
) -> LadderPoint:
    eps = config.epsilon(T) if variant == Variant.phi else None
    c_delta = young_constant(params.p, config.young_delta)
    w_factor = _forcing_space_factor(T, eps, w, params)

    def evaluate(n_time: int, n_space: int):
        lower, derivative, forcing = _time_factors(T, params, profile, n_time)
        lap, mass = _space_factors(T, eps, params, n_space)
        return forcing * w_factor, c_delta * (lower * lap + derivative * mass)

    n_time, n_space = config.n_time, config.n_space
    L, rhs = evaluate(n_time, n_space)
    for _ in range(config.max_refinements):
        n_time, n_space = 2 * n_time, 2 * n_space
        L_fine, rhs_fine = evaluate(n_time, n_space)
        change = max(
            abs(L_fine - L) / max(abs(L_fine), 1e-300),
            abs(rhs_fine - rhs) / max(abs(rhs_fine), 1e-300),
        )
        L, rhs = L_fine, rhs_fine
        if change < config.rtol:
            return LadderPoint(T=T, epsilon=eps, L=L, rhs=rhs, n_time=n_time, n_space=n_space, converged=True)
    return LadderPoint(T=T, epsilon=eps, L=L, rhs=rhs, n_time=n_time, n_space=n_space, converged=False)


def expected_rhs_slope(params: Parameters) -> float:
    return 1 + params.N / 2 - params.p_dual - params.alpha / (2 * (params.p - 1))


def certify_blowup(
    params: Parameters,
    profile: ForcingProfile,
    w: RadialField,
    config: Optional[CertifyConfig] = None,
    variant: Variant = Variant.psi,
) -> BlowupCertificate:
    config = config or CertifyConfig()
    record = dict(
        params=params,
        forcing=profile,
        w_grid=w.grid,
        w_values=w.values.tolist(),
        w_integral=w.integral(),
        variant=variant,
        certify_config=config,
        young_delta=config.young_delta,
        young_const=young_constant(params.p, config.young_delta),
        expected_slope_L=params.m + 1,
        expected_slope_rhs=(
            expected_rhs_slope(params)
            if variant == Variant.psi or config.epsilon_rule == EpsilonRule.inverse_t
            else None
        ),
    )
    if record["w_integral"] <= 0:
        return BlowupCertificate(verdict=Verdict.inapplicable, note="forcing profile w needs int w > 0", **record)
    if params.nu_exponent >= params.N:
        logger.warning(dict(event="weight_not_integrable", nu_exponent=params.nu_exponent, N=params.N))

    ladder = []
    certified = None
    unconverged = False
    for T in config.ladder:
        point = evaluate_ladder_point(T, params, profile, w, config, variant)
        ladder.append(point)
        if not point.converged:
            unconverged = True
            continue
        if certified is None and point.L > point.rhs:
            certified = point

    top = [x for x in ladder if x.T >= config.ladder[-1] / 10]
    slope_L = slope_rhs = None
    if len(top) >= 2:
        slope_L = loglog_slope([x.T for x in top], [x.L for x in top])
        slope_rhs = loglog_slope([x.T for x in top], [x.rhs for x in top])

    if certified is not None:
        verdict = Verdict.certified
        found = dict(T=certified.T, L=certified.L, rhs=certified.rhs, t_star_upper=0.75 * certified.T)
    else:
        verdict = Verdict.inconclusive if unconverged else Verdict.not_at_this_t
        found = {}
    cert = BlowupCertificate(
        verdict=verdict, ladder=ladder, slope_L=slope_L, slope_rhs=slope_rhs, **found, **record
    )
    logger.info(dict(event="certify_blowup", verdict=verdict.value, T=cert.T, slope_L=slope_L, slope_rhs=slope_rhs))
    return cert


def epsilon_scan(
    params: Parameters,
    profile: ForcingProfile,
    w: RadialField,
    config: Optional[CertifyConfig] = None,
) -> Dict[str, BlowupCertificate]:
    config = config or CertifyConfig()
    return {
        rule.value: certify_blowup(
            params, profile, w, config.copy(update=dict(epsilon_rule=rule)), variant=Variant.phi
        )
        for rule in EpsilonRule
    }


class WitnessStatus(str, Enum):
    ok = "ok"
    inapplicable = "inapplicable"
    failure = "failure"


class BetaArg(BaseModel):
    name: str
    a: float
    b: float
    positive: bool
    value: Optional[float]


class ExponentWitness(BaseModel):
    params: dict
    status: WitnessStatus
    regime: Optional[str]
    inv_r_lower: Optional[float]
    inv_r_upper: Optional[float]
    r: Optional[float]
    mu: Optional[float]
    p_c: Optional[float]
    ell: Optional[float]
    conditions: Dict[str, bool] = {}
    beta_args: List[BetaArg] = []
    residuals: Dict[str, float] = {}
    note: str = ""

    @property
    def all_positive(self) -> bool:
        return all(b.positive for b in self.beta_args)


def _beta_arg(name: str, a: float, b: float) -> BetaArg:
    positive = a > 0 and b > 0
    return BetaArg(name=name, a=a, b=b, positive=positive, value=beta_fn(a, b) if positive else None)


def ge_exponent_witness(params: Parameters) -> ExponentWitness:
    N, alpha, sigma, p = params.N, params.alpha, params.sigma, params.p
    raw = params.dict()
    if not (N >= 2 and -2 < alpha < 0 and -1 < sigma < 0 and p > 1 and N - 2 * (sigma + 1) > 0):
        return ExponentWitness(params=raw, status=WitnessStatus.inapplicable, note="hypotheses on N, alpha, sigma fail")
    p_min = 1 + (2 + alpha) / (N - 2 * (sigma + 1))
    if p < p_min:
        return ExponentWitness(params=raw, status=WitnessStatus.inapplicable, note=f"p below {p_min!r}")

    p_c = N * (p - 1) / (2 + alpha)
    ell = N * p_c / (N + 2 * (sigma + 1) * p_c)
    nonlinear_side = (alpha * p + 2) / (N * p * (p - 1))
    forcing_side = 1 / p_c + 2 * sigma / N
    decay_side = (N + alpha) / (N * p)

    def theta(tau: float) -> float:
        return 2 * sigma * p ** 2 + alpha - 2 * (sigma - 1) * p + (1 - p) * tau

    tau_star = 2 * sigma + (alpha + 2 * p) / (p - 1)
    conditions = dict(
        nonlinear_below_pc=nonlinear_side < 1 / p_c,
        nonlinear_below_decay=nonlinear_side < decay_side,
        forcing_below_pc=forcing_side < 1 / p_c,
        forcing_below_decay=forcing_side < decay_side,
        quadratic_negative=2 * sigma * p ** 2 - (N - 2 + 2 * sigma) * p + N + alpha < 0,
        theta_identity=math.isclose(theta(tau_star), 2 * sigma * (p - 1) ** 2, rel_tol=1e-9, abs_tol=1e-12),
        tau_star_below_N=tau_star <= N * (1 + 1e-12),
        ell_at_least_one=ell >= 1 - 1e-12,
        ell_identity=math.isclose(1 / ell - 1 / p_c, 2 * (sigma + 1) / N, rel_tol=1e-9),
    )
    lower = max(nonlinear_side, forcing_side)
    upper = min(1 / p_c, decay_side, 1 / p)
    regime = "direct_lpc" if N > 2 and p > (N + alpha) / (N - 2) else "weighted_lr"
    common = dict(params=raw, regime=regime, inv_r_lower=lower, inv_r_upper=upper, p_c=p_c, ell=ell)
    if not lower < upper:
        logger.error(dict(event="empty_exponent_interval", lower=lower, upper=upper, **raw))
        return ExponentWitness(status=WitnessStatus.failure, conditions=conditions, note="empty interval for 1/r", **common)

    inv_r = (lower + upper) / 2
    r = 1 / inv_r
    mu = (N / 2) * (1 / p_c - inv_r)
    conditions.update(
        mu_range=0 < mu < 1 / p,
        ell_below_pc_below_r=ell < p_c < r,
        r_above_p=r > p,
    )
    nonlinear_time = 1 - N * (p - 1) / (2 * r) + alpha / 2
    forcing_time = 1 - (N / 2) * (1 / ell - inv_r)
    beta_args = [
        _beta_arg("forcing_lpc", sigma + 1, -sigma),
        _beta_arg("nonlinear_lr", 1 - p * mu, nonlinear_time),
        _beta_arg("forcing_lr", sigma + 1, forcing_time),
    ]
    # time exponents of both Duhamel terms must balance the decay rate mu exactly
    residuals = dict(
        nonlinear=(nonlinear_time - p * mu) + mu,
        forcing=(forcing_time + sigma) + mu,
    )
    conditions.update(residuals_vanish=all(abs(x) < RESIDUAL_TOL for x in residuals.values()))
    status = WitnessStatus.ok if all(conditions.values()) and all(b.positive for b in beta_args) else WitnessStatus.failure
    if status == WitnessStatus.failure:
        logger.error(dict(event="witness_failure", conditions=conditions, **raw))
    return ExponentWitness(
        status=status,
        r=r,
        mu=mu,
        conditions=conditions,
        beta_args=beta_args,
        residuals=residuals,
        **common,
    )


class ProbeRow(BaseModel):
    scale: float
    kind: OutcomeKind
    t_star: Optional[float]
    diagnostic_max: Optional[float]
    diagnostic_bounded: Optional[bool]


class SmallnessReport(BaseModel):
    witness_status: WitnessStatus
    exact_path_available: bool
    rows: List[ProbeRow] = []
    largest_global_scale: Optional[float]
    smallest_blowup_scale: Optional[float]
    resolved: bool
    note: str = ""


def _decay_diagnostic(outcome, mu: float):
    points = [(x.t, x.t ** mu * x.extra_norm) for x in outcome.trace if x.t > 0 and x.extra_norm is not None]
    if not points:
        return 0.0, True
    half = outcome.t_end / 2
    early = max([v for t, v in points if t <= half], default=0.0)
    late = max([v for t, v in points if t > half], default=0.0)
    return max(early, late), late <= 1.05 * early or late == 0.0


def ge_smallness_probe(
    params: Parameters,
    profile: ForcingProfile,
    u0: RadialField,
    w: RadialField,
    config: SolverConfig,
    scales: Optional[Sequence[float]] = None,
    stop_at_first_global: bool = True,
) -> SmallnessReport:
    """Runs the solver on lambda * (u0, w) for a descending ladder of lambda."""
    witness = ge_exponent_witness(params)
    exact = has_exact_path(params.N)
    if not exact:
        logger.info(dict(event="smallness_probe_mol_only", N=params.N))
    if witness.status != WitnessStatus.ok:
        return SmallnessReport(
            witness_status=witness.status, exact_path_available=exact, resolved=False, note="no exponent witness"
        )

    scales = sorted(scales if scales is not None else [2.0 ** -k for k in range(9)], reverse=True)
    rows = []
    for scale in scales:
        outcome = run(params, profile, u0 * scale, w * scale, config, extra_q=witness.r)
        diagnostic, bounded = None, None
        if outcome.kind == OutcomeKind.global_candidate:
            diagnostic, bounded = _decay_diagnostic(outcome, witness.mu)
        rows.append(
            ProbeRow(
                scale=scale,
                kind=outcome.kind,
                t_star=outcome.t_star,
                diagnostic_max=diagnostic,
                diagnostic_bounded=bounded,
            )
        )
        if stop_at_first_global and bounded:
            break

    globals_ = [x.scale for x in rows if x.kind == OutcomeKind.global_candidate and x.diagnostic_bounded]
    blowups = [x.scale for x in rows if x.kind == OutcomeKind.blew_up]
    report = SmallnessReport(
        witness_status=witness.status,
        exact_path_available=exact,
        rows=rows,
        largest_global_scale=max(globals_) if globals_ else None,
        smallest_blowup_scale=min(blowups) if blowups else None,
        resolved=bool(globals_ or blowups),
        note="" if exact else "no exact semigroup path for this N, MOL solver only",
    )
    logger.info(dict(event="smallness_probe", **report.dict(exclude={"rows"})))
    return report
