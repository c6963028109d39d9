import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from fire import Fire
from fire.core import FireExit
from pydantic import ValidationError
from tqdm import tqdm

from fujita_lab.certify import (
    Variant,
    Verdict,
    WitnessStatus,
    certify_blowup,
    epsilon_scan,
    ge_exponent_witness,
)
from fujita_lab.evolve import (
    ForcingProfile,
    ForcingShape,
    OutcomeKind,
    picard_iterate,
    run,
)
from fujita_lab.heatsem import verify_smoothing_estimate
from fujita_lab.params import (
    Parameters,
    blowup_threshold,
    classify_p,
    fujita_exponent,
    global_existence_exponents,
    jks_exponent,
)
from fujita_lab.shared import DomainError, InapplicableError, LabError
from fujita_lab.specfun import GronwallData, check_gronwall_on_trajectory, volterra_equality_trajectory
from lab.data_utils import Axis, DataProfile, PhasePoint, SweepSpec
from lab.evaluation import Agreement, agreement, predict
from lab.utils import LabConfig, RecordStore, Timer, UsageError

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INAPPLICABLE = 2
EXIT_USAGE = 64

CSV_HEADER = "# fujita-lab phase table v1"
CSV_COLUMNS = [
    "N",
    "alpha",
    "p",
    "sigma",
    "m",
    "u0_profile",
    "w_profile",
    "outcome",
    "t_star",
    "horizon",
    "predicted_threshold",
    "agreement",
    "diagnostic",
]


def as_list(x, sep=",") -> List[str]:
    items = x if type(x) in {tuple, list} else str(x).split(sep)
    return [str(i).strip() for i in items if str(i).strip()]


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_phase_table(rows: List[PhasePoint], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(exist_ok=True, parents=True)
    records = [{k: format_cell(v) for k, v in r.dict().items()} for r in rows]
    df = pd.DataFrame(records, columns=CSV_COLUMNS)
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        df.to_csv(f, index=False)
    return path


def read_phase_table(path: Union[str, Path]) -> pd.DataFrame:
    with open(path) as f:
        header = f.readline().strip()
    assert header == CSV_HEADER, dict(header=header)
    return pd.read_csv(path, skiprows=1, dtype=str, keep_default_na=False)


def _phase_point(raw: dict, spec: SweepSpec, **kwargs) -> PhasePoint:
    fields = {k: raw[k] for k in ["N", "alpha", "p", "sigma", "m"]}
    return PhasePoint(u0_profile=str(spec.u0), w_profile=str(spec.w), **fields, **kwargs)


def run_point(task: Tuple[dict, SweepSpec]) -> PhasePoint:
    raw, spec = task
    try:
        params = Parameters(**raw)
        grid = spec.solver.make_grid(params.N)
        u0, w = spec.u0.sample(grid), spec.w.sample(grid)
        profile = ForcingProfile.from_params(params, shape=spec.shape)
        outcome = run(params, profile, u0, w, spec.solver, u0_profile=str(spec.u0), w_profile=str(spec.w))
    except Exception as e:  # noqa
        logger.warning(dict(event="sweep_point_failed", error=str(e), **raw))
        return _phase_point(
            raw,
            spec,
            outcome=OutcomeKind.inconclusive,
            t_star=None,
            horizon=spec.solver.horizon,
            predicted_threshold=None,
            agreement=Agreement.undecided,
            diagnostic=f"failed: {type(e).__name__}: {e}",
        )

    prediction = predict(params, u0, w)
    kind = outcome.kind
    verdict = agreement(prediction, kind)
    diagnostic = outcome.reason or ""
    if verdict == Agreement.inconsistent and spec.gate_inconsistent:
        config = spec.solver.copy(update=dict(M=spec.solver.M * 2, dt_init=spec.solver.dt_init / 2))
        fine = config.make_grid(params.N)
        other = run(
            params, profile, spec.u0.sample(fine), spec.w.sample(fine), config,
            u0_profile=str(spec.u0), w_profile=str(spec.w),
        )
        if other.kind != kind:
            diagnostic = f"convergence gate failed: M={config.M} gives {other.kind.value}"
            kind = OutcomeKind.inconclusive
            verdict = agreement(prediction, kind)
        else:
            diagnostic = f"convergence gate passed: M={config.M} gives {other.kind.value}"
            logger.error(dict(event="inconsistent_phase_point", **raw))

    return _phase_point(
        raw,
        spec,
        outcome=kind,
        t_star=outcome.t_star if kind == OutcomeKind.blew_up else None,
        horizon=outcome.horizon,
        predicted_threshold=prediction.threshold_value,
        agreement=verdict,
        diagnostic=diagnostic,
    )


def run_sweep(spec: SweepSpec, workers: int = 1) -> List[PhasePoint]:
    tasks = [(raw, spec) for raw in spec.points()]
    print(dict(sweep_points=len(tasks), workers=workers, output=str(spec.output)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(tqdm(pool.map(run_point, tasks), total=len(tasks)))
    else:
        rows = [run_point(t) for t in tqdm(tasks)]
    path = write_phase_table(rows, spec.output)
    print(dict(path_results=path))
    return rows


def exponents(N: float, alpha: float, p: Optional[float] = None, sigma: float = 0.0, m: float = 0.0):
    threshold = blowup_threshold(N, alpha, m)
    record = dict(p_fujita=fujita_exponent(N, alpha), p_blow_threshold=str(threshold), threshold_note=threshold.note)
    try:
        record.update(p_jks=str(jks_exponent(N, sigma)))
    except DomainError as e:
        record.update(p_jks=f"undefined: {e}")
    if p is not None:
        record.update(side=classify_p(p, threshold).value)
        params = Parameters(N=N, alpha=alpha, p=p, sigma=sigma, m=m)
        try:
            report = global_existence_exponents(params)
            record.update(
                p_global_min=report.p_global_min,
                p_crit_lebesgue=report.p_crit_lebesgue,
                ell_lebesgue=report.ell_lebesgue,
                above_global_min=report.above_global_min,
            )
        except (InapplicableError, DomainError) as e:
            record.update(global_existence=f"inapplicable: {e}")
    print(json.dumps(record, indent=2))


def simulate(
    N: float,
    alpha: float,
    p: float,
    sigma: float = 0.0,
    m: float = 0.0,
    c0: float = 1.0,
    c_inf: float = 1.0,
    u0: str = "gaussian(1.0)",
    w: str = "zero",
    shape: str = "spliced",
    extra_q: Optional[float] = None,
    config: Optional[str] = None,
    **overrides,
):
    cfg = LabConfig.build(config, **overrides)
    params = Parameters(N=N, alpha=alpha, p=p, sigma=sigma, m=m, c0=c0, c_inf=c_inf)
    grid = cfg.solver.make_grid(params.N)
    profile = ForcingProfile.from_params(params, shape=ForcingShape(shape))
    u0_profile, w_profile = DataProfile.from_string(u0), DataProfile.from_string(w)
    with Timer(name="simulate"):
        outcome = run(
            params,
            profile,
            u0_profile.sample(grid),
            w_profile.sample(grid),
            cfg.solver,
            extra_q=extra_q,
            u0_profile=str(u0_profile),
            w_profile=str(w_profile),
        )
    store = RecordStore.from_config(cfg.store)
    record_id = store.put(outcome, "outcomes")
    store.put_frame(outcome.trace_frame(), "traces", record_id)
    print(json.dumps(outcome.summary(), indent=2, default=str))


def picard_check(
    N: float,
    alpha: float,
    p: float,
    sigma: float = 0.0,
    m: float = 0.0,
    c0: float = 1.0,
    c_inf: float = 1.0,
    u0: str = "gaussian(0.1)",
    w: str = "zero",
    shape: str = "spliced",
    T: float = 0.25,
    iterations: int = 8,
    n_steps: int = 50,
    config: Optional[str] = None,
    **overrides,
):
    cfg = LabConfig.build(config, **overrides)
    params = Parameters(N=N, alpha=alpha, p=p, sigma=sigma, m=m, c0=c0, c_inf=c_inf)
    grid = cfg.solver.make_grid(params.N)
    profile = ForcingProfile.from_params(params, shape=ForcingShape(shape))
    u0_field = DataProfile.from_string(u0).sample(grid)
    w_field = DataProfile.from_string(w).sample(grid)
    with Timer(name="picard"):
        picard = picard_iterate(params, profile, u0_field, w_field, T, iterations=iterations, n_steps=n_steps)
    with Timer(name="mol"):
        outcome = run(params, profile, u0_field, w_field, cfg.solver.copy(update=dict(horizon=T)))
    picard_sup = float(np.max(np.abs(picard.terminal)))
    record = dict(
        picard_terminal_sup=picard_sup,
        picard_ratios=picard.ratios,
        picard_diverged_at=picard.diverged_at,
        mol_kind=outcome.kind.value,
        mol_terminal_sup=outcome.terminal_sup,
    )
    if outcome.terminal_sup is not None:
        record.update(relative_difference=abs(outcome.terminal_sup - picard_sup) / max(picard_sup, 1e-300))
    print(json.dumps(record, indent=2))


def certify(
    N: float,
    alpha: float,
    p: float,
    sigma: float = 0.0,
    m: float = 0.0,
    c0: float = 1.0,
    c_inf: float = 1.0,
    w: str = "bump(1.0,1.0)",
    shape: str = "spliced",
    variant: str = "psi_T",
    scan: bool = False,
    config: Optional[str] = None,
    **overrides,
):
    cfg = LabConfig.build(config, **overrides)
    params = Parameters(N=N, alpha=alpha, p=p, sigma=sigma, m=m, c0=c0, c_inf=c_inf)
    profile = ForcingProfile.from_params(params, shape=ForcingShape(shape))
    w_field = DataProfile.from_string(w).sample(cfg.solver.make_grid(params.N))
    store = RecordStore.from_config(cfg.store)
    if scan:
        certificates = epsilon_scan(params, profile, w_field, cfg.certify)
    else:
        certificates = {cfg.certify.epsilon_rule.value: certify_blowup(params, profile, w_field, cfg.certify, Variant(variant))}

    for rule, cert in certificates.items():
        record_id = store.put(cert, "certificates")
        summary = cert.dict(include={"variant", "verdict", "T", "L", "rhs", "t_star_upper", "slope_L", "slope_rhs"})
        summary.update(
            record_id=record_id,
            epsilon_rule=rule if cert.variant == Variant.phi else None,
            expected_slope_L=cert.expected_slope_L,
            expected_slope_rhs=cert.expected_slope_rhs,
        )
        print(json.dumps(summary, indent=2, default=str))
    if all(c.verdict == Verdict.inapplicable for c in certificates.values()):
        raise InapplicableError("Certificate needs int w > 0")


def witness(N: float, alpha: float, p: float, sigma: float, m: float = 0.0, config: Optional[str] = None, **overrides):
    cfg = LabConfig.build(config, **overrides)
    # sigma <= -1 is rejected by Parameters; the witness reports it as inapplicable
    params = Parameters.construct(N=float(N), alpha=float(alpha), p=float(p), sigma=float(sigma), m=float(m))
    result = ge_exponent_witness(params)
    RecordStore.from_config(cfg.store).put(result, "witnesses")
    print(json.dumps(json.loads(result.json()), indent=2))
    if result.status == WitnessStatus.inapplicable:
        raise InapplicableError(result.note)
    if result.status == WitnessStatus.failure:
        raise LabError(f"Exponent witness failed: {dict(conditions=result.conditions)}")


def sweep(
    axis=(),
    N: float = 3,
    alpha: float = 0.0,
    p: float = 2.0,
    sigma: float = 0.0,
    m: float = 0.0,
    c0: float = 1.0,
    c_inf: float = 1.0,
    u0: str = "gaussian(1.0)",
    w: str = "zero",
    shape: str = "spliced",
    output: str = "phase.csv",
    workers: int = 1,
    gate: bool = True,
    config: Optional[str] = None,
    **overrides,
):
    print(json.dumps(locals(), indent=2, default=str))
    cfg = LabConfig.build(config, **overrides)
    spec = SweepSpec(
        axes=[Axis.from_string(a) for a in as_list(axis)],
        base=Parameters(N=N, alpha=alpha, p=p, sigma=sigma, m=m, c0=c0, c_inf=c_inf),
        u0=DataProfile.from_string(u0),
        w=DataProfile.from_string(w),
        shape=ForcingShape(shape),
        solver=cfg.solver,
        output=Path(cfg.store.root) / output,
        gate_inconsistent=gate,
    )
    with Timer(name="sweep"):
        rows = run_sweep(spec, workers=workers)
    RecordStore.from_config(cfg.store).put(spec, "sweeps")
    df = pd.DataFrame([r.dict() for r in rows])
    print(df[["p", "alpha", "N", "outcome", "agreement"]])


def verify_smoothing(
    N: float,
    gamma: float,
    q1,
    q2,
    t_min: float = 1e-2,
    t_max: float = 1e2,
    n_t: int = 9,
    allow_endpoint: bool = False,
    config: Optional[str] = None,
    **overrides,
):
    cfg = LabConfig.build(config, **overrides)
    t_grid = np.geomspace(t_min, t_max, n_t).tolist()
    with Timer(name="verify_smoothing"):
        report = verify_smoothing_estimate(
            gamma, float(q1), float(q2), N, t_grid, allow_endpoint=allow_endpoint
        )
    store = RecordStore.from_config(cfg.store)
    record_id = store.put(report, "smoothing")
    store.put_frame(report.to_frame(), "smoothing", record_id)
    print(dict(sup_ratio=report.sup_ratio, variation=report.variation, endpoint=report.endpoint))


def verify_gronwall(
    A: float = 1.0,
    M: float = 1.0,
    theta: float = 0.5,
    T: float = 1.0,
    n_points: int = 10000,
    tolerance: float = 1e-6,
    config: Optional[str] = None,
    **overrides,
):
    cfg = LabConfig.build(config, **overrides)
    data = GronwallData(A=A, M=M, theta=theta, T=T)
    with Timer(name="verify_gronwall"):
        trajectory = volterra_equality_trajectory(data, n_points=n_points)
        report = check_gronwall_on_trajectory(trajectory.times, trajectory.values, data, tolerance=tolerance)
    RecordStore.from_config(cfg.store).put(report, "gronwall")
    print(report.json(indent=2))
    if not report.applicable:
        raise InapplicableError(f"Trajectory violates the integral inequality: {dict(residual=report.residual)}")
    if not report.passed:
        raise LabError(f"Gronwall bound exceeded: {dict(max_excess=report.max_excess)}")


COMMANDS = {
    "exponents": exponents,
    "simulate": simulate,
    "picard-check": picard_check,
    "certify": certify,
    "witness": witness,
    "sweep": sweep,
    "verify-smoothing": verify_smoothing,
    "verify-gronwall": verify_gronwall,
}


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        Fire(COMMANDS, command=argv, name="fujita-lab")
    except FireExit as e:
        return EXIT_OK if not e.code else EXIT_USAGE
    except UsageError as e:
        print(dict(usage_error=str(e)), file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, InapplicableError, ValidationError) as e:
        print(dict(inapplicable=str(e)), file=sys.stderr)
        return EXIT_INAPPLICABLE
    except Exception as e:  # noqa
        logger.exception(dict(event="internal_error", error=str(e)))
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    sys.exit(cli_dispatch())
