import json
import warnings

import numpy as np
import pytest

from conftest import tiny_config
from tfpsp import cli
from tfpsp.channel import SystemConfig, TBGrid, synthesize_scenario
from tfpsp.estimator import EstimatorConfig
from tfpsp.harness import (
    CSV_COLUMNS,
    NMSE_FLOOR_DB,
    ScenarioSpec,
    SpecError,
    aggregate,
    desk_spec,
    nmse,
    read_csv,
    rows_to_csv,
    run_trial,
    run_trials,
    snr_to_sigma_z,
    sweep,
    table1_system,
    to_db,
    trial_channels,
    trial_seeds,
)
from tfpsp.io import (
    assignment_from_dict,
    assignment_to_dict,
    estimate_from_dict,
    estimate_to_dict,
    load_spec,
    scenario_from_dict,
    scenario_to_dict,
    spec_to_dict,
    write_json,
)
from tfpsp.pilots import PilotAssignment, supports_disjoint_after_shift
from tfpsp.scheduler import schedule


def test_nmse_cases():
    H = [np.ones((2, 2)), 2 * np.ones(3)]
    assert nmse(H, H) == 0 and to_db(nmse(H, H)) == NMSE_FLOOR_DB
    assert nmse([0 * h for h in H], H) == 1 and to_db(1.0) == 0
    truths = [np.array([2.0, 0.0]), np.array([0.0, 2.0j])]
    ests = [np.array([1.0, 0.0]), np.array([0.0, 1.0j])]
    assert nmse(ests, truths) == pytest.approx(0.25)
    with pytest.warns(RuntimeWarning):
        assert nmse([np.ones(2), np.ones(2)], [np.zeros(2), 2 * np.ones(2)]) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        nmse([np.ones(2)], [np.ones(3)])
    with pytest.raises(ValueError), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        nmse([np.ones(2)], [np.zeros(2)])
    assert to_db(1e-30) == NMSE_FLOOR_DB


def test_snr_and_seeds():
    assert snr_to_sigma_z(20.0) == pytest.approx(0.01)
    assert snr_to_sigma_z(0.0, 2.0) == pytest.approx(2.0)
    a, b = trial_seeds(5, 3)
    a2, b2 = trial_seeds(5, 3)
    r = lambda s: np.random.default_rng(s).random(4)
    np.testing.assert_array_equal(r(a), r(a2))
    assert not np.array_equal(r(a), r(b))
    assert not np.array_equal(r(a), r(trial_seeds(5, 4)[0]))


def test_spec_validation_and_roundtrip():
    s = desk_spec(snr_db=[0, 10], trials=2, estimator_config=EstimatorConfig(damping=None, damping_product=0.3))
    d = s.to_dict()
    assert d["schema_version"] == 1
    assert ScenarioSpec.from_dict(json.loads(json.dumps(d))) == s
    for bad in (dict(scheme="x"), dict(estimator="x"), dict(gamma=1.0), dict(n_paths=0),
                dict(power_model="x"), dict(F_theta=0)):
        with pytest.raises(SpecError):
            desk_spec(**bad)
    with pytest.raises(SpecError):
        desk_spec(system=table1_system(), estimator="mmse")
    with pytest.raises(SpecError):
        ScenarioSpec.from_dict({**d, "schema_version": 2})
    with pytest.raises(SpecError):
        ScenarioSpec.from_dict({**d, "colour": 1})
    with pytest.raises(SpecError):
        ScenarioSpec.from_dict({**d, "system": {"M": -1}})


def test_run_trial_deterministic():
    spec = desk_spec(trials=1, snr_db=(10, 20))
    a, b = run_trial(spec, 0), run_trial(spec, 0)
    for x, y in zip(a, b):
        assert (x.nmse, x.iterations, x.objective, x.groups) == (y.nmse, y.iterations, y.objective, y.groups)
    assert a[0].nmse >= a[1].nmse * 0.5


def test_noiseless_oracle_pipeline():
    cfg = SystemConfig(M=8, U=3, N_c=64, N_g=4, K=16, k0=8, N_b=4, N_p=4)
    spec = ScenarioSpec(system=cfg, n_paths=2, on_grid=True, power_model="snapped", gamma=0.0,
                        estimator="mmse", snr_db=(100.0,), trials=2)
    for t in range(spec.trials):
        chans = trial_channels(spec, t)
        W = [c.W for c in chans]
        asg, _, _ = schedule(W, spec.grid(), 0.0)
        assert supports_disjoint_after_shift(W, asg, spec.grid())[0]
        [rec] = run_trial(spec, t)
        assert rec.error is None and to_db(rec.nmse) < -80


def test_tfpsp_not_worse_than_fpsp_when_crowded():
    base = dict(system=SystemConfig(N_g=64), n_paths=16, decay=0.1, on_grid=True, power_model="snapped",
                gamma=0.0, trials=3)
    t = np.mean([r.nmse for r in run_trials(desk_spec(scheme="tfpsp", **base))])
    f = np.mean([r.nmse for r in run_trials(desk_spec(scheme="fpsp", **base))])
    assert t <= f


def test_sweep_empty_and_monotone():
    assert sweep(desk_spec(snr_db=())) == ([], [])
    cfg = tiny_config(U=3, N_c=32, K=16)
    spec = ScenarioSpec(system=cfg, on_grid=True, power_model="snapped", gamma=0.0,
                        estimator="mmse", snr_db=(0.0, 10.0, 20.0, 30.0), trials=8)
    rows, recs = sweep(spec)
    assert [r.snr_db for r in rows] == [0.0, 10.0, 20.0, 30.0]
    assert all(r.trials == 8 for r in rows)
    per = np.array([[r.nmse for r in recs if r.snr_db == s] for s in spec.snr_db])
    for lo, hi in zip(per[:-1], per[1:]):
        d = hi - lo  # paired: same channels and noise
        assert d.mean() <= 2 * d.std(ddof=1) / np.sqrt(d.size)


def test_divergence_recorded_not_fatal():
    spec = desk_spec(trials=2, snr_db=(20.0,), gamma=0.0, estimator_config=EstimatorConfig(damping=1.0))
    rows, recs = sweep(spec)
    assert all(r.error and r.error.startswith("DivergenceError") for r in recs)
    assert rows[0].trials == 0 and np.isnan(rows[0].mean_nmse_db)


def test_csv_roundtrip():
    spec = desk_spec(trials=2, snr_db=(10.0, 20.0))
    rows, _ = sweep(spec)
    text = rows_to_csv(rows)
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    back = read_csv(text)
    assert back == rows
    assert rows_to_csv(back) == text
    with pytest.raises(ValueError):
        read_csv("a,b\n1,2\n")


def test_aggregate_is_order_independent():
    spec = desk_spec(trials=3, snr_db=(20.0,))
    recs = run_trials(spec)
    assert aggregate(recs, spec) == aggregate(recs[::-1], spec)


def test_scenario_json_lossless(tmp_path):
    cfg = tiny_config(U=3)
    grid = TBGrid(cfg, 2, 2, 2)
    chans = synthesize_scenario(cfg, grid, 4, False, 11, power_model="leakage")
    p = tmp_path / "s.json"
    write_json(p, scenario_to_dict(chans, grid, "leakage"))
    back, g2 = scenario_from_dict(json.loads(p.read_text()))
    assert g2 == grid
    for a, b in zip(chans, back):
        for f in ("gains", "theta", "tau", "nu", "powers"):
            np.testing.assert_array_equal(getattr(a.paths, f), getattr(b.paths, f))
        np.testing.assert_array_equal(a.W, b.W)
        np.testing.assert_array_equal(a.H_tb, b.H_tb)
    bad = scenario_to_dict(chans, grid)
    bad["users"].pop()
    with pytest.raises(SpecError):
        scenario_from_dict(bad)
    with pytest.raises(SpecError):
        scenario_from_dict({**bad, "schema_version": 0})


def test_assignment_and_estimate_json():
    asg = PilotAssignment([0, 3, 6], [1, 0, 2])
    doc = json.loads(json.dumps(assignment_to_dict(asg, "tfpsp", {"groups": 2})))
    back, scheme = assignment_from_dict(doc)
    assert scheme == "tfpsp" and back.phi.tolist() == [0, 3, 6] and back.varphi.tolist() == [1, 0, 2]
    doc["users"][1]["ut"] = 7
    with pytest.raises(SpecError):
        assignment_from_dict(doc)
    H = np.zeros((2, 3, 4), complex)
    H[1, 0, 0] = 1 + 2j
    H[0, 2, 3] = -0.5j
    d = json.loads(json.dumps(estimate_to_dict([H, 0 * H], estimator="iga", iterations=5, converged=False,
                                               final_residual=0.1, support_size=2)))
    assert d["order"] == "F" and d["users"][0]["index"] == [1, 0 + 2 * 2 + 6 * 3]
    out = estimate_from_dict(d)
    np.testing.assert_array_equal(out[0], H)
    assert not out[1].any()


def _write_spec(path, **kw):
    write_json(path, spec_to_dict(desk_spec(**kw)))


def test_cli_pipeline(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    _write_spec(spec, trials=1, snr_db=(20.0,), gamma=0.0)
    assert load_spec(spec).trials == 1
    out = tmp_path / "run"
    assert cli.main(["simulate", "--spec", str(spec), "--out", str(out)]) == 0
    assert (out / "sweep.csv").exists() and (out / "trials.json").exists()
    scen = out / "scenario.json"
    assert cli.main(["schedule", "--scenario", str(scen), "--gamma", "0.0"]) == 0
    asg = out / "assignment.json"
    report = json.loads(asg.read_text())["report"]
    assert report["groups"] >= 1
    assert cli.main(["estimate", "--scenario", str(scen), "--assignment", str(asg),
                     "--estimator", "iga", "--out", str(tmp_path / "e.json")]) == 0
    est = json.loads((tmp_path / "e.json").read_text())
    assert est["kind"] == "estimate" and len(est["users"]) == 24 and est["nmse_db"] < -10
    csv_path = tmp_path / "s.csv"
    assert cli.main(["sweep", "--spec", str(spec), "--out", str(csv_path)]) == 0
    assert csv_path.read_text() == (out / "sweep.csv").read_text()


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 99}))
    assert cli.main(["sweep", "--spec", str(bad), "--out", str(tmp_path / "x.csv")]) == 2
    bad.write_text("{not json")
    assert cli.main(["simulate", "--spec", str(bad)]) == 2
    assert cli.main(["simulate", "--spec", str(tmp_path / "missing.json")]) == 2
    spec = tmp_path / "div.json"
    _write_spec(spec, trials=1, gamma=0.0, estimator_config=EstimatorConfig(damping=1.0))
    assert cli.main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "d.csv")]) == 3
    good = tmp_path / "g.json"
    _write_spec(good, trials=1)
    out = tmp_path / "run"
    assert cli.main(["simulate", "--spec", str(good), "--out", str(out)]) == 0
    scen = out / "scenario.json"
    assert cli.main(["schedule", "--scenario", str(scen), "--gamma", "1.5"]) == 2
    cli.main(["schedule", "--scenario", str(scen), "--gamma", "0.0"])
    asg = out / "assignment.json"
    assert cli.main(["estimate", "--scenario", str(scen), "--assignment", str(asg),
                     "--estimator", "iga", "--damping", "1.0"]) == 3
    assert cli.main(["estimate", "--scenario", str(scen), "--assignment", str(asg),
                     "--estimator", "mmse", "--mmse-cap", "10"]) == 2
    assert cli.main(["estimate", "--scenario", str(scen), "--assignment", str(asg),
                     "--estimator", "iga", "--damping", "3"]) == 2
