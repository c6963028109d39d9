import json
import logging

import numpy as np
import pytest

from fujita_lab.certify import BlowupCertificate
from fujita_lab.evolve import OutcomeKind, SimulationOutcome, SolverConfig
from fujita_lab.grid import RadialGrid
from fujita_lab.params import Parameters, fujita_exponent
from fujita_lab.shared import StoreError
from lab.data_utils import Axis, DataProfile, ProfileKind, SweepSpec
from lab.evaluation import Agreement, agreement, predict
from lab.main import (
    CSV_COLUMNS,
    CSV_HEADER,
    EXIT_INAPPLICABLE,
    EXIT_INTERNAL,
    EXIT_OK,
    EXIT_USAGE,
    cli_dispatch,
    read_phase_table,
    run_point,
)
from lab.utils import ENV_OUT, LabConfig, RecordStore, UsageError, read_config, update_nested_dict

SMALL_SOLVER = ["--solver__R", "5.0", "--solver__M", "32", "--solver__horizon", "0.1"]


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_OUT, str(tmp_path))
    return tmp_path


def test_exponents_command(out_dir, capsys):
    assert cli_dispatch(["exponents", "--N", "3", "--alpha", "0", "--m=-1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "1.6666666666666667" in out
    assert cli_dispatch(["exponents", "--N", "2", "--alpha", "0", "--p", "1.5"]) == EXIT_OK
    assert "not_covered" in capsys.readouterr().out


def test_simulate_command_stores_outcome(out_dir):
    argv = ["simulate", "--N", "3", "--alpha", "0", "--p", "2", "--u0", "zero"] + SMALL_SOLVER
    assert cli_dispatch(argv) == EXIT_OK
    records = list((out_dir / "outcomes").glob("*.json"))
    assert len(records) == 1
    with open(records[0]) as f:
        record = json.load(f)
    assert record["kind"] == "GlobalCandidate"
    assert (out_dir / "traces" / records[0].name.replace(".json", ".csv")).exists()
    # same inputs give the same record id
    assert cli_dispatch(argv) == EXIT_OK
    assert len(list((out_dir / "outcomes").glob("*.json"))) == 1


def test_exit_codes(out_dir):
    assert cli_dispatch(["simulate", "--N", "3", "--alpha", "0", "--p", "2", "--solver__nope", "1"]) == EXIT_USAGE
    assert cli_dispatch(["no-such-command"]) == EXIT_USAGE
    assert cli_dispatch(["witness", "--N", "3", "--alpha", "0.5", "--p", "2", "--sigma=-0.5"]) == EXIT_INAPPLICABLE
    assert cli_dispatch(["simulate", "--N", "3", "--alpha", "0", "--p", "0.5"]) == EXIT_INAPPLICABLE
    assert cli_dispatch(["witness", "--N", "4", "--alpha=-1", "--p", "2", "--sigma=-0.5"]) == EXIT_OK


def test_store_failure_is_internal_error(tmp_path, monkeypatch):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    monkeypatch.setenv(ENV_OUT, str(blocker / "out"))
    assert cli_dispatch(["witness", "--N", "4", "--alpha=-1", "--p", "2", "--sigma=-0.5"]) == EXIT_INTERNAL


def test_certificate_round_trip(out_dir):
    argv = ["certify", "--N", "1", "--alpha", "0", "--p", "2", "--m", "0.5", "--certify__ladder_max_exp", "4"]
    assert cli_dispatch(argv + SMALL_SOLVER) == EXIT_OK
    records = list((out_dir / "certificates").glob("*.json"))
    assert len(records) == 1
    store = RecordStore(root=out_dir)
    cert = BlowupCertificate.parse_obj(store.get("certificates", records[0].stem))
    assert cert.recheck().verdict == cert.verdict
    assert cli_dispatch(argv + ["--w", "zero"] + SMALL_SOLVER) == EXIT_INAPPLICABLE


def test_sweep_is_deterministic(out_dir):
    argv = ["sweep", "--axis", "p:2.5:3.0:0.5", "--N", "3", "--u0", "gaussian(0.01)"] + SMALL_SOLVER
    assert cli_dispatch(argv + ["--output", "a.csv"]) == EXIT_OK
    assert cli_dispatch(argv + ["--output", "b.csv"]) == EXIT_OK
    assert (out_dir / "a.csv").read_bytes() == (out_dir / "b.csv").read_bytes()
    with open(out_dir / "a.csv") as f:
        assert f.readline().strip() == CSV_HEADER
    df = read_phase_table(out_dir / "a.csv")
    assert list(df.columns) == CSV_COLUMNS
    assert df["p"].tolist() == ["2.5", "3.0"]
    assert df["outcome"].tolist() == ["GlobalCandidate"] * 2
    assert df["agreement"].tolist() == ["undecided"] * 2
    assert df["predicted_threshold"].tolist() == ["1.6666666666666667"] * 2
    assert df["t_star"].tolist() == ["", ""]


def small_spec(**kwargs) -> SweepSpec:
    fields = dict(
        base=Parameters(N=3, alpha=0, p=1.4, m=-1),
        u0=DataProfile.from_string("gaussian(0.1)"),
        w=DataProfile.from_string("bump(5.0,3.0)"),
        solver=SolverConfig(R=5.0, M=32, horizon=0.1),
    )
    fields.update(kwargs)
    return SweepSpec(**fields)


def test_sweep_points():
    assert len(Axis.from_string("p:1.2:2.2:0.1").values) == 11
    assert Axis.from_string("p:1.2:2.2:0.1").values[-1] == 2.2
    assert small_spec().points() == [small_spec().base.dict()]
    spec = small_spec(axes=[Axis.from_string("p:1.2:1.4:0.1"), Axis.from_string("alpha:0:1:1")])
    points = spec.points()
    assert len(points) == 6
    assert [(x["p"], x["alpha"]) for x in points[:3]] == [(1.2, 0.0), (1.2, 1.0), (1.3, 0.0)]
    with pytest.raises(ValueError):
        small_spec(axes=[Axis.from_string("p:1:2:1")] * 2)
    with pytest.raises(ValueError):
        Axis.from_string("p:2:1:0.1")
    with pytest.raises(ValueError):
        Axis.from_string("p:1:2")


def test_inconsistent_point_goes_through_gate(caplog):
    # a forced run below the threshold cannot blow up in so short a horizon
    spec = small_spec()
    with caplog.at_level(logging.ERROR):
        row = run_point((spec.points()[0], spec))
    assert row.outcome == OutcomeKind.global_candidate
    assert row.agreement == Agreement.inconsistent
    assert row.diagnostic.startswith("convergence gate passed")
    assert "inconsistent_phase_point" in caplog.text

    row = run_point((spec.points()[0], small_spec(gate_inconsistent=False)))
    assert row.agreement == Agreement.inconsistent
    assert row.diagnostic == ""


def test_failed_point_is_inconclusive():
    spec = small_spec()
    raw = dict(spec.points()[0], p=0.5)
    row = run_point((raw, spec))
    assert row.outcome == OutcomeKind.inconclusive
    assert row.agreement == Agreement.undecided
    assert row.diagnostic.startswith("failed: ValidationError")


def test_agreement_rules():
    grid = RadialGrid(R=10.0, M=100, N=3)
    gaussian = DataProfile.from_string("gaussian(1.0)").sample(grid)
    zero = DataProfile.from_string("zero").sample(grid)

    forced = predict(Parameters(N=3, alpha=0, p=1.4, m=-1), zero, DataProfile.from_string("bump(5.0,3.0)").sample(grid))
    assert forced.expected == OutcomeKind.blew_up
    assert agreement(forced, OutcomeKind.blew_up) == Agreement.consistent
    assert agreement(forced, OutcomeKind.global_candidate) == Agreement.inconsistent
    assert agreement(forced, OutcomeKind.inconclusive) == Agreement.undecided

    above = predict(Parameters(N=3, alpha=0, p=2, m=-1), zero, gaussian)
    assert above.expected is None
    assert agreement(above, OutcomeKind.global_candidate) == Agreement.undecided

    growing = predict(Parameters(N=3, alpha=0, p=4, m=0.5), zero, gaussian)
    assert growing.threshold_value == np.inf
    assert agreement(growing, OutcomeKind.blew_up) == Agreement.undecided

    negative_mass = predict(Parameters(N=3, alpha=0, p=1.4, m=-1), zero, DataProfile.from_string("signchanging(1.0)").sample(grid))
    assert negative_mass.expected is None

    critical = predict(Parameters(N=3, alpha=0, p=fujita_exponent(3, 0)), gaussian, zero)
    assert critical.expected == OutcomeKind.blew_up
    assert agreement(critical, OutcomeKind.global_candidate) == Agreement.inconsistent
    signed = predict(Parameters(N=3, alpha=0, p=1.5), DataProfile.from_string("signchanging(1.0)").sample(grid), zero)
    assert signed.expected is None


def test_data_profiles():
    bump = DataProfile.from_string("bump(5.0,3.0)")
    assert (bump.kind, bump.a, bump.R0) == (ProfileKind.bump, 5.0, 3.0)
    assert str(bump) == "bump(5.0,3.0)"
    assert str(DataProfile.from_string("gaussian")) == "gaussian(1.0)"
    assert str(DataProfile.from_string(" zero ")) == "zero"
    r = np.array([0.0, 1.0, 3.0, 4.0])
    assert bump(r).tolist()[2:] == [0.0, 0.0]
    assert bump(r)[0] == pytest.approx(5.0)
    assert DataProfile.from_string("signchanging(2.0)")(r)[1] == 0.0
    with pytest.raises(ValueError):
        DataProfile.from_string("nope(1.0)")
    with pytest.raises(ValueError):
        DataProfile.from_string("bump(1.0,-1.0)")


def test_config_layering(tmp_path, monkeypatch):
    monkeypatch.delenv(ENV_OUT, raising=False)
    path = tmp_path / "lab.cfg"
    path.write_text("# solver settings\nsolver__M = 64  # cells\ncertify__epsilon_rule = '1/sqrt(T)'\n\nstore__root = 'here'\n")
    assert read_config(path) == dict(solver__M=64, certify__epsilon_rule="1/sqrt(T)", store__root="here")
    cfg = LabConfig.build(path, solver__R=5.0)
    assert (cfg.solver.M, cfg.solver.R) == (64, 5.0)
    assert cfg.certify.epsilon_rule.value == "1/sqrt(T)"
    assert str(cfg.store.root) == "here"
    monkeypatch.setenv(ENV_OUT, str(tmp_path))
    assert LabConfig.build(path).store.root == tmp_path

    bad = tmp_path / "bad.cfg"
    bad.write_text("solver__M 64\n")
    with pytest.raises(UsageError):
        read_config(bad)


def test_update_nested_dict():
    raw = dict(solver=dict(M=400, R=20.0), store=dict(root="outputs"))
    out = update_nested_dict(raw, "solver__M", 800)
    assert out["solver"]["M"] == 800 and raw["solver"]["M"] == 400
    with pytest.raises(UsageError):
        update_nested_dict(raw, "solver__nope", 1)
    with pytest.raises(UsageError):
        update_nested_dict(raw, "solver", 1)
    with pytest.raises(UsageError):
        update_nested_dict(raw, "solver__M__x", 1)


def test_record_store(tmp_path):
    store = RecordStore(root=tmp_path)
    a = store.put(SolverConfig(), "configs")
    assert store.put(SolverConfig(), "configs") == a
    assert store.put(SolverConfig(dt_init=5e-3), "configs") != a
    assert SolverConfig.parse_obj(store.get("configs", a)) == SolverConfig()
    with pytest.raises(StoreError):
        store.get("configs", "missing")
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    with pytest.raises(StoreError):
        RecordStore(root=blocker).put(SolverConfig(), "configs")


def test_simulate_records_identify_their_run(out_dir):
    argv = ["simulate", "--N", "3", "--alpha", "0", "--u0", "zero"] + SMALL_SOLVER
    assert cli_dispatch(argv + ["--p", "2"]) == EXIT_OK
    assert cli_dispatch(argv + ["--p", "5"]) == EXIT_OK
    records = sorted((out_dir / "outcomes").glob("*.json"))
    assert len(records) == 2
    loaded = [SimulationOutcome.parse_file(path) for path in records]
    assert sorted(x.inputs.params.p for x in loaded) == [2.0, 5.0]
    for outcome in loaded:
        assert (outcome.inputs.u0_profile, outcome.inputs.w_profile) == ("zero", "zero")
        assert (outcome.inputs.solver.R, outcome.inputs.solver.M) == (5.0, 32)


def test_agreement_stable_under_refinement():
    fields = dict(
        axes=[Axis.from_string("p:1.2:1.6:0.4")],
        base=Parameters(N=3, alpha=0, p=1.2, m=-1),
        u0=DataProfile.from_string("gaussian(0.5)"),
        w=DataProfile.from_string("bump(5.0,3.0)"),
    )
    flags = []
    for M in [300, 600]:
        spec = SweepSpec(solver=SolverConfig(R=30.0, M=M, horizon=100.0, dt_init=0.05), **fields)
        flags.append([run_point((raw, spec)).agreement for raw in spec.points()])
    assert flags[0] == flags[1] == [Agreement.consistent] * 2
