import logging
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fujita_lab.evolve import (
    ForcingProfile,
    ForcingShape,
    OutcomeKind,
    Scheme,
    SolverConfig,
    apply_laplacian,
    comparison_check,
    extrapolate_blowup,
    mol_step,
    picard_iterate,
    radial_laplacian,
    reaction_flow,
    run,
)
from fujita_lab.grid import RadialField, RadialGrid
from fujita_lab.heatsem import semigroup_apply
from fujita_lab.params import Parameters
from fujita_lab.shared import DomainError
from lab.data_utils import DataProfile


def fields(grid, u0: str, w: str):
    return DataProfile.from_string(u0).sample(grid), DataProfile.from_string(w).sample(grid)


def test_forcing_profile():
    profile = ForcingProfile(sigma=-0.5, m=-1.0, c0=1.0, c_inf=1.0)
    assert profile.zeta(0.25) == pytest.approx(2.0)
    assert profile.zeta(4.0) == pytest.approx(0.25)
    assert profile.zeta_integral(0.0, 4.0) == pytest.approx(2.0 + math.log(4.0))
    assert profile.zeta_integral(2.0, 4.0) == pytest.approx(math.log(2.0))
    pure = ForcingProfile(sigma=-0.5, m=-1.0, shape=ForcingShape.pure)
    assert pure.zeta_integral(0.0, 4.0) == pytest.approx(4.0)
    with pytest.raises(DomainError):
        profile.zeta(0.0)
    params = Parameters(N=3, alpha=0, p=2, sigma=0.5, m=1.0, c0=2.0, c_inf=3.0)
    profile = ForcingProfile.from_params(params)
    assert profile.zeta(4.0) == pytest.approx(12.0)


def test_forcing_splice_mismatch_warns(caplog):
    with caplog.at_level(logging.WARNING):
        ForcingProfile(c0=1.0, c_inf=2.0)
    assert "forcing_splice_mismatch" in caplog.text


@pytest.mark.parametrize("N", [1, 2, 3, 4.5])
def test_laplacian_exact_on_quadratics(N):
    grid = RadialGrid(R=5.0, M=64, N=N)
    stencil = radial_laplacian(grid)
    out = apply_laplacian(stencil, grid.nodes ** 2)
    assert_allclose(out[:-1], 2 * N, rtol=1e-9)


def test_laplacian_conserves_mass_away_from_boundary():
    grid = RadialGrid(R=20.0, M=400, N=3)
    u = np.exp(-(grid.nodes ** 2))
    out = apply_laplacian(radial_laplacian(grid), u)
    assert abs(np.sum(out * grid.volumes)) < 1e-10


def test_reaction_flow():
    u = np.array([-1.0, 0.0, 0.5, 1.0])
    out = reaction_flow(u, np.ones(4), 2.0, 1.0)
    assert_allclose(out[1:3], [0.0, 1.0])
    assert out[3] == np.inf
    # u' = |u|^2 from -1 over dt = 1
    assert out[0] == pytest.approx(-0.5)
    half = reaction_flow(u, np.ones(4), 2.0, 0.5)
    assert half[3] == pytest.approx(2.0)


def test_mol_step_from_zero_is_forcing_integral():
    params = Parameters(N=3, alpha=-0.5, p=2, sigma=-0.5)
    profile = ForcingProfile.from_params(params)
    grid = RadialGrid(R=10.0, M=100, N=3)
    u0, w = fields(grid, "zero", "bump(1.0,2.0)")
    out = mol_step(u0, 0.0, 0.04, params, profile, w, SolverConfig())
    assert_allclose(out.values, w.values * 0.4, rtol=1e-14)


def test_extrapolate_blowup():
    t = np.linspace(0.0, 0.99, 30)
    sup = 1 / (1.0 - t)
    assert extrapolate_blowup(t, sup, 2.0, 0.05) == pytest.approx(1.0, rel=1e-9)
    assert extrapolate_blowup(t, np.ones_like(t), 2.0, 0.05) is None
    assert extrapolate_blowup(t[:2], sup[:2], 2.0, 0.05) is None


def test_zero_data_is_global():
    params = Parameters(N=3, alpha=0, p=2)
    config = SolverConfig(R=10.0, M=64, horizon=1.0)
    grid = config.make_grid(3)
    outcome = run(params, ForcingProfile.from_params(params), RadialField.zeros(grid), RadialField.zeros(grid), config)
    assert outcome.kind == OutcomeKind.global_candidate
    assert outcome.terminal_sup == 0.0
    assert outcome.norm_trend == "flat"
    assert len(outcome.config_hash) == 32
    assert set(outcome.gate_report) == {"refined", "extended"}


def test_constant_data_blows_up_at_ode_time():
    # u' = u^2 from 1 blows up at t = 1 wherever diffusion has not arrived
    params = Parameters(N=1, alpha=0, p=2)
    config = SolverConfig(R=40.0, M=400, horizon=2.0, dt_init=1e-2)
    grid = config.make_grid(1)
    u0 = RadialField.from_function(grid, lambda r: np.ones_like(r))
    outcome = run(params, ForcingProfile.from_params(params), u0, RadialField.zeros(grid), config)
    assert outcome.kind == OutcomeKind.blew_up
    assert outcome.t_star == pytest.approx(1.0, rel=0.05)
    assert "cap crossing" in outcome.t_star_method


def test_run_rejects_data_above_cap():
    params = Parameters(N=1, alpha=0, p=2)
    config = SolverConfig(R=10.0, M=64, blow_cap=10.0)
    grid = config.make_grid(1)
    u0 = RadialField.from_function(grid, lambda r: 20 * np.ones_like(r))
    with pytest.raises(DomainError):
        run(params, ForcingProfile.from_params(params), u0, RadialField.zeros(grid), config)


def test_snapshots_and_extra_norm():
    params = Parameters(N=3, alpha=0, p=3)
    config = SolverConfig(R=10.0, M=100, horizon=1.0)
    grid = config.make_grid(3)
    u0, w = fields(grid, "gaussian(0.1)", "zero")
    outcome = run(params, ForcingProfile.from_params(params), u0, w, config, snapshot_times=[0.5, 0.25, 0.5, 3.0], extra_q=2.0)
    assert [s.t for s in outcome.snapshots] == [0.25, 0.5]
    assert all(x.extra_norm is not None for x in outcome.trace)
    assert outcome.trace[0].extra_norm == pytest.approx(u0.lq_norm(2.0))
    assert list(outcome.trace_frame().columns) == ["t", "dt", "sup_norm", "lpc_norm"]


def test_config_hash_depends_on_config():
    params = Parameters(N=3, alpha=0, p=3)
    a = SolverConfig(R=10.0, M=64, horizon=0.1)
    b = a.copy(update=dict(dt_init=5e-3))
    grid = a.make_grid(3)
    u0, w = fields(grid, "gaussian(0.1)", "zero")
    profile = ForcingProfile.from_params(params)
    assert run(params, profile, u0, w, a).config_hash != run(params, profile, u0, w, b).config_hash


def test_fujita_subcritical_blows_up():
    params = Parameters(N=3, alpha=0, p=1.5)
    profile = ForcingProfile.from_params(params)
    base = SolverConfig(R=100.0, M=400, horizon=500.0, dt_init=0.05)
    variants = [
        base,
        base.copy(update=dict(M=800, dt_init=0.025)),
        base.copy(update=dict(R=200.0, M=800)),
    ]
    for config in variants:
        grid = config.make_grid(3)
        u0, w = fields(grid, "gaussian(1.0)", "zero")
        outcome = run(params, profile, u0, w, config)
        assert outcome.kind == OutcomeKind.blew_up, outcome.summary()


def test_fujita_supercritical_small_data_is_global():
    params = Parameters(N=3, alpha=0, p=3)
    config = SolverConfig(R=60.0, M=800, horizon=50.0, dt_init=0.01, convergence_gate=True)
    grid = config.make_grid(3)
    u0, w = fields(grid, "gaussian(0.01)", "zero")
    outcome = run(params, ForcingProfile.from_params(params), u0, w, config)
    assert outcome.kind == OutcomeKind.global_candidate, outcome.summary()
    assert outcome.norm_trend == "decreasing"
    assert set(outcome.gate_report) == {"refined", "extended"}


@pytest.mark.parametrize("p", [1.2, 1.4, 1.6])
@pytest.mark.parametrize("u0", ["gaussian(0.5)", "gaussian(2.0)", "signchanging(1.0)"])
def test_forced_blowup_below_threshold(p, u0):
    params = Parameters(N=3, alpha=0, p=p, m=-1)
    config = SolverConfig(R=30.0, M=300, horizon=100.0, dt_init=0.05)
    grid = config.make_grid(3)
    u0_field, w = fields(grid, u0, "bump(5.0,3.0)")
    assert w.integral() > 0
    outcome = run(params, ForcingProfile.from_params(params), u0_field, w, config)
    assert outcome.kind == OutcomeKind.blew_up, outcome.summary()


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_growing_forcing_blows_up(p):
    params = Parameters(N=1, alpha=0, p=p, m=0.5)
    config = SolverConfig(R=60.0, M=600, horizon=100.0, dt_init=0.05)
    grid = config.make_grid(1)
    u0, w = fields(grid, "gaussian(0.01)", "bump(1.0,1.0)")
    outcome = run(params, ForcingProfile.from_params(params), u0, w, config)
    assert outcome.kind == OutcomeKind.blew_up, outcome.summary()


@pytest.mark.parametrize(
    "N, alpha, p, sigma, u0, w",
    [
        (1, 0.0, 2.0, 0.0, "gaussian(0.1)", "zero"),
        (3, 0.0, 2.0, 0.0, "gaussian(0.1)", "zero"),
        (3, -0.5, 3.0, -0.5, "gaussian(0.05)", "gaussian(0.1)"),
        (1, 0.5, 2.0, 0.5, "gaussian(0.1)", "gaussian(0.1)"),
        (3, 1.0, 2.0, 0.0, "signchanging(0.1)", "gaussian(0.05)"),
    ],
)
def test_mol_agrees_with_picard(N, alpha, p, sigma, u0, w):
    params = Parameters(N=N, alpha=alpha, p=p, sigma=sigma)
    profile = ForcingProfile.from_params(params)
    config = SolverConfig(R=10.0, M=1000, horizon=0.25, dt_init=1e-4, theta=0.5)
    grid = config.make_grid(N)
    u0_field, w_field = fields(grid, u0, w)
    picard = picard_iterate(params, profile, u0_field, w_field, 0.25, iterations=8, n_steps=50)
    assert picard.diverged_at is None
    assert picard.ratios[0] < 0.1
    outcome = run(params, profile, u0_field, w_field, config)
    assert outcome.kind == OutcomeKind.global_candidate
    picard_sup = float(np.max(np.abs(picard.terminal)))
    assert outcome.terminal_sup == pytest.approx(picard_sup, rel=1e-3)


def test_picard_linear_part_is_heat_flow():
    params = Parameters(N=3, alpha=0, p=2)
    grid = RadialGrid(R=25.0, M=2000, N=3)
    u0 = RadialField.from_function(grid, lambda r: np.exp(-(r ** 2)))
    result = picard_iterate(params, ForcingProfile.from_params(params), u0, RadialField.zeros(grid), 1.0, iterations=1, n_steps=10, nonlinear=False)
    assert_allclose(result.terminal, 5 ** -1.5 * np.exp(-(grid.nodes ** 2) / 5), atol=1e-6)


@pytest.mark.parametrize(
    "N, alpha, p, sigma, m, w",
    [
        (3, 0.0, 2.0, 0.0, 0.0, "zero"),
        (3, -1.0, 2.0, -0.5, 0.0, "bump(0.1,1.0)"),
        (1, 0.0, 3.0, -0.5, 0.0, "gaussian(0.05)"),
        (2, 0.5, 2.0, 0.0, 0.0, "zero"),
        (3, 0.0, 1.5, 0.0, -1.0, "bump(0.1,1.0)"),
    ],
)
def test_comparison_principle(N, alpha, p, sigma, m, w):
    params = Parameters(N=N, alpha=alpha, p=p, sigma=sigma, m=m)
    config = SolverConfig(R=10.0, M=200, horizon=2.0, dt_init=0.01)
    grid = config.make_grid(N)
    low, w_field = fields(grid, "gaussian(0.05)", w)
    high = DataProfile.from_string("gaussian(0.1)").sample(grid)
    report = comparison_check(params, ForcingProfile.from_params(params), low, high, w_field, config)
    assert not report.advisory
    assert report.order_violation <= 1e-6
    assert report.passed


def test_comparison_advisory_for_sign_changing_data():
    params = Parameters(N=3, alpha=0, p=2)
    config = SolverConfig(R=10.0, M=100, horizon=0.5)
    grid = config.make_grid(3)
    low, w = fields(grid, "signchanging(0.05)", "zero")
    high = DataProfile.from_string("gaussian(0.1)").sample(grid)
    report = comparison_check(params, ForcingProfile.from_params(params), low, high, w, config, n_snapshots=5)
    assert report.advisory


def test_explicit_scheme_matches_imex_on_small_data():
    params = Parameters(N=3, alpha=0, p=2)
    profile = ForcingProfile.from_params(params)
    imex = SolverConfig(R=10.0, M=100, horizon=0.5, dt_init=1e-3, theta=0.5)
    explicit = imex.copy(update=dict(scheme=Scheme.explicit_rk))
    grid = imex.make_grid(3)
    u0, w = fields(grid, "gaussian(0.1)", "zero")
    a = run(params, profile, u0, w, imex)
    b = run(params, profile, u0, w, explicit)
    assert b.kind == OutcomeKind.global_candidate
    assert b.terminal_sup == pytest.approx(a.terminal_sup, rel=1e-2)


def test_mol_step_follows_heat_semigroup():
    # data small enough that the reaction is below the comparison tolerance
    params = Parameters(N=3, alpha=0, p=3)
    profile = ForcingProfile.from_params(params)
    config = SolverConfig(R=20.0, M=1600, theta=0.5)
    grid = config.make_grid(3)
    u0 = RadialField.from_function(grid, lambda r: 1e-3 * np.exp(-(r ** 2)))
    zero = RadialField.zeros(grid)
    u = u0
    for n in range(100):
        u = mol_step(u, n * 1e-3, 1e-3, params, profile, zero, config)
    exact = semigroup_apply(u0, 0.1)
    assert np.max(np.abs(u.values - exact.values)) < 1e-3 * u0.sup


def test_run_preserves_positivity():
    params = Parameters(N=3, alpha=-0.5, p=2, sigma=-0.5)
    config = SolverConfig(R=10.0, M=100, horizon=1.0, convergence_gate=False)
    grid = config.make_grid(3)
    u0, w = fields(grid, "gaussian(0.05)", "bump(0.1,2.0)")
    outcome = run(params, ForcingProfile.from_params(params), u0, w, config, snapshot_times=np.linspace(0.1, 1.0, 10))
    assert len(outcome.snapshots) == 10
    for snapshot in outcome.snapshots:
        assert min(snapshot.values) >= 0


def test_steps_flag_overflow():
    params = Parameters(N=1, alpha=0, p=2)
    profile = ForcingProfile.from_params(params)
    grid = RadialGrid(R=1.0, M=16, N=1)
    zero = RadialField.zeros(grid)
    ones = RadialField.from_function(grid, lambda r: np.ones_like(r))
    # u' = u^2 from 1 has no solution past t = 1
    assert mol_step(ones, 0.0, 1.0, params, profile, zero, SolverConfig()).overflowed
    assert not mol_step(ones, 0.0, 0.5, params, profile, zero, SolverConfig()).overflowed
    huge = ones * 1e200
    explicit = SolverConfig(scheme=Scheme.explicit_rk)
    with np.errstate(invalid="ignore", over="ignore"):
        assert mol_step(huge, 0.0, 1e-3, params, profile, zero, explicit).overflowed
    assert not mol_step(ones, 0.0, 1e-3, params, profile, zero, explicit).overflowed


def test_overflowing_step_is_halved():
    params = Parameters(N=3, alpha=0, p=2)
    config = SolverConfig(R=20.0, M=64, horizon=2.0, dt_init=1.0, safety=50.0, grow_halve=1e9)
    grid = config.make_grid(3)
    u0 = RadialField.from_function(grid, lambda r: np.ones_like(r))
    outcome = run(params, ForcingProfile.from_params(params), u0, RadialField.zeros(grid), config)
    assert outcome.trace[1].dt == 0.5
    assert outcome.kind == OutcomeKind.blew_up, outcome.summary()
    assert outcome.t_star == pytest.approx(1.0, rel=1e-2)


def test_outcome_records_its_inputs():
    config = SolverConfig(R=10.0, M=64, horizon=0.1)
    grid = config.make_grid(3)
    zero = RadialField.zeros(grid)
    outcomes = {}
    for p in [2.0, 5.0]:
        params = Parameters(N=3, alpha=0, p=p)
        profile = ForcingProfile.from_params(params)
        outcomes[p] = run(params, profile, zero, zero, config, u0_profile="zero", w_profile="zero")
    inputs = outcomes[2.0].inputs
    assert inputs.params.p == 2.0
    assert inputs.solver == config
    assert inputs.grid == grid
    assert (inputs.u0_profile, inputs.w_profile) == ("zero", "zero")
    assert inputs.u0_digest == zero.digest
    assert outcomes[2.0].config_hash != outcomes[5.0].config_hash
    assert outcomes[2.0].json(sort_keys=True) != outcomes[5.0].json(sort_keys=True)

    gaussian = DataProfile.from_string("gaussian(0.01)").sample(grid)
    params = Parameters(N=3, alpha=0, p=2.0)
    other = run(params, ForcingProfile.from_params(params), gaussian, zero, config)
    assert other.inputs.u0_digest != inputs.u0_digest
    assert other.config_hash != outcomes[2.0].config_hash


def test_convergence_gate_is_on_by_default():
    assert SolverConfig().convergence_gate
    params = Parameters(N=3, alpha=0, p=3)
    # a Dirichlet wall at R = 2 is felt by the unit Gaussian well before t = 0.5
    config = SolverConfig(R=2.0, M=16, horizon=0.5)
    grid = config.make_grid(3)
    u0, w = fields(grid, "gaussian(0.01)", "zero")
    profile = ForcingProfile.from_params(params)
    outcome = run(params, profile, u0, w, config)
    assert outcome.kind == OutcomeKind.inconclusive
    assert outcome.reason == "grid or domain convergence gate failed"
    assert outcome.gate_report["extended"]["relative_change"] > 0.01
    ungated = run(params, profile, u0, w, config.copy(update=dict(convergence_gate=False)))
    assert ungated.kind == OutcomeKind.global_candidate
    assert ungated.gate_report is None
