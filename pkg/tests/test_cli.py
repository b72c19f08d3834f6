import json
import re
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochprox import cli
from stochprox import operators as ops
from stochprox.cli import ConfigError, ExperimentConfig, format_config, parse_config, parse_set

DEMOS = Path(__file__).resolve().parents[1] / "demos"

FEAS = """[problem]
kind = feasibility
constraint = whole(1)
sets = box([-2.0], [-1.0]); box([1.0], [2.0])

[solver]
schedule = power
gamma0 = 1.0
p = {p}
budget = {budget}
record_every = {every}
x0 = [5.0]
seed = 3
replications = {reps}
"""


def _write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _feas(tmp_path, p=1.0, budget=2000, every=500, reps=5):
    return _write(tmp_path, FEAS.format(p=p, budget=budget, every=every, reps=reps))


# ---------------------------------------------------------------------------
# Config parsing

def test_set_expressions():
    assert parse_set("box([-2], [-1])").describe() == "box([-2.0], [-1.0])"
    assert parse_set(" whole(3) ").dim == 3
    assert parse_set("box([0.5], [inf])").hi[0] == np.inf
    assert parse_set("ball([0, 0], 2)").radius == 2.0
    for bad in ("cube([1])", "box([1], [0])", "__import__('os')", "box(lo=[0], hi=[1])"):
        with pytest.raises((ValueError, ops.ValidationError)):
            parse_set(bad)


def test_describe_round_trips_through_parser():
    for s in (ops.ConvexSet.box([0.5, -np.inf], [np.inf, 2.0]), ops.ConvexSet.ball([1, 2], 0.5),
              ops.ConvexSet.halfspace([1, -1], 0.25), ops.ConvexSet.hyperplane([0, 2], -1),
              ops.ConvexSet.singleton([3.0]), ops.ConvexSet.whole_space(2)):
        assert parse_set(s.describe()).describe() == s.describe()


def test_unknown_key_names_key_and_line():
    text = FEAS.format(p=1.0, budget=10, every=1, reps=1) + "stepsize = 3\n"
    with pytest.raises(ConfigError, match=r"stepsize, line 15"):
        parse_config(text)


def test_unknown_section():
    with pytest.raises(ConfigError, match=r"\[extras\], line 1"):
        parse_config("[extras]\na = 1\n[problem]\nkind = feasibility\n")


def test_bad_value_names_line():
    text = FEAS.format(p=1.0, budget="many", every=1, reps=1)
    with pytest.raises(ConfigError, match=r"budget, line 10"):
        parse_config(text)


def test_range_errors_name_key():
    with pytest.raises(ConfigError, match=r"\[solver\] p, line 9.*square_sum_diverges"):
        parse_config(FEAS.format(p=0.4, budget=10, every=1, reps=1))
    with pytest.raises(ConfigError, match="replications"):
        parse_config(FEAS.format(p=1.0, budget=10, every=1, reps=0))


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError):
        parse_config("[problem]\nkind = feasibility\nkind = classification\n")


def test_override_flag_in_config():
    text = FEAS.format(p=1.5, budget=10, every=1, reps=1) + "allow_invalid_schedule = true\n"
    assert parse_config(text).allow_invalid_schedule


@settings(max_examples=60)
@given(gamma0=st.floats(1e-3, 1e3), p=st.floats(0.51, 1.0), budget=st.integers(1, 10 ** 7),
       every=st.integers(1, 1000), seed=st.integers(0, 2 ** 63), reps=st.integers(1, 10 ** 4),
       x0=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=3),
       algorithm=st.sampled_from(["spg", "fb"]))
def test_config_round_trip(gamma0, p, budget, every, seed, reps, x0, algorithm):
    cfg = ExperimentConfig(kind="custom-quadratic", centers=[[1.0] * len(x0), [0.5] * len(x0)],
                           weights=[1.0, 3.0], algorithm=algorithm, gamma0=gamma0, p=p,
                           budget=budget, record_every=every, seed=seed, replications=reps,
                           x0=list(x0))
    assert parse_config(format_config(cfg)) == cfg


def test_feasibility_config_round_trip(tmp_path):
    cfg = cli.load_config(DEMOS / "feasibility_1d.cfg")
    again = parse_config(format_config(cfg), base_dir=cfg.base_dir)
    assert again == cfg


# ---------------------------------------------------------------------------
# run

def test_bundled_feasibility_config(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", str(DEMOS / "feasibility_1d.cfg"), "--output", str(out)]) == 0
    meta = json.loads((out / "meta.json").read_text())
    finals = np.array(meta["final_iterates"])
    assert len(finals) == 100
    assert np.median(np.abs(finals[:, 0])) <= 0.05
    assert meta["seed"] == 0 and meta["stream_ids"] == list(range(100))
    assert meta["reference"]["point"] == [0.0]


def test_trace_format_and_determinism(tmp_path):
    cfg = _feas(tmp_path)
    assert cli.main(["run", str(cfg), "--output", str(tmp_path / "a")]) == 0
    assert cli.main(["run", str(cfg), "--output", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "trace.csv").read_bytes()
    assert a == (tmp_path / "b" / "trace.csv").read_bytes()
    assert b"\r" not in a
    lines = a.decode().splitlines()
    assert lines[0] == "replication,n,gamma_n,k_n,dist_to_ref,objective_gap,running_min_gap"
    first = lines[1].split(",")
    assert first[:3] == ["0", "0", "1.0"] and first[4] == "5.0" and first[5] == "10.75"
    last = lines[-1].split(",")
    assert last[0] == "4" and last[1] == "2000" and last[2] == "" and last[3] == ""
    ens = (tmp_path / "a" / "ensemble.csv").read_text().splitlines()
    assert ens[0].startswith("n,gamma_n,replications,dist_mean,dist_q05")
    assert len(ens) == len(lines[1:]) // 5 + 1


def test_meta_allows_replay(tmp_path):
    from stochprox.apps import FeasibilitySpec, make_feasibility_problem
    from stochprox.core import RngStream, StepSchedule
    from stochprox.solvers import SolverConfig, spg_run
    cfg = _feas(tmp_path)
    assert cli.main(["run", str(cfg), "--output", str(tmp_path / "o"), "--seed", "99"]) == 0
    meta = json.loads((tmp_path / "o" / "meta.json").read_text())
    assert meta["seed"] == 99
    d = make_feasibility_problem(FeasibilitySpec(
        parse_set(meta["config"]["constraint"]),
        [parse_set(s) for s in meta["config"]["sets"].split(";")]))
    rec = spg_run(d, SolverConfig(schedule=StepSchedule.power(1.0, 1.0), budget=2000,
                                  x0=meta["config"]["x0"], rng=RngStream(meta["seed"], 3)))
    assert rec.final.tolist() == meta["final_iterates"][3]


def test_jobs_do_not_change_output(tmp_path, monkeypatch):
    cfg = _feas(tmp_path, reps=6)
    assert cli.main(["run", str(cfg), "--output", str(tmp_path / "a"), "--jobs", "1"]) == 0
    monkeypatch.setenv("STOCHPROX_JOBS", "2")
    assert cli.main(["run", str(cfg), "--output", str(tmp_path / "b")]) == 0
    a, b = (tmp_path / d / "trace.csv" for d in "ab")
    assert a.read_bytes() == b.read_bytes()


def test_invalid_schedule_exit_2(tmp_path, capsys):
    assert cli.main(["run", str(_feas(tmp_path, p=0.4))]) == 2
    assert "Robbins-Monro" in capsys.readouterr().err


def test_override_runs_invalid_schedule(tmp_path):
    cfg = _feas(tmp_path, p=1.5)
    out = tmp_path / "o"
    assert cli.main(["run", str(cfg), "--output", str(out), "--allow-invalid-schedule"]) == 0
    meta = json.loads((out / "meta.json").read_text())
    assert meta["schedule_overridden"] and meta["schedule_class"] == "sum_converges"


def test_missing_dataset_exit_2(tmp_path, capsys):
    cfg = _write(tmp_path, "[problem]\nkind = classification\ndataset = nowhere.csv\nalpha = 0.5\n")
    assert cli.main(["run", str(cfg)]) == 2
    assert "not found" in capsys.readouterr().err


def test_nan_abort_exit_3(tmp_path, capsys):
    cfg = _write(tmp_path, "[problem]\nkind = custom-quadratic\ncenters = [[0.0]]\n"
                           "[solver]\nalgorithm = sgd\ngamma0 = 1e300\nbudget = 10\nx0 = [1.0]\n"
                           f"[output]\ndirectory = {tmp_path / 'o'}\n")
    assert cli.main(["run", str(cfg)]) == 3
    assert "non-finite" in capsys.readouterr().err


def test_reference_failure_exit_4(tmp_path, monkeypatch):
    def fail(cfg, dist):
        raise cli.apps.ReferenceError("no bounded reference found")
    monkeypatch.setattr(cli, "compute_reference", fail)
    assert cli.main(["run", str(_feas(tmp_path))]) == 4


def test_classification_run(tmp_path):
    shutil.copy(DEMOS / "data" / "desk4.csv", tmp_path / "desk4.csv")
    cfg = _write(tmp_path, "[problem]\nkind = classification\ndataset = desk4.csv\nalpha = 0.5\n"
                           "[solver]\ngamma0 = 10\nbudget = 500\nrecord_every = 100\n"
                           "replications = 3\n[output]\ndirectory = o\n")
    assert cli.main(["run", str(cfg)]) == 0
    meta = json.loads((tmp_path / "o" / "meta.json").read_text())
    assert meta["reference"]["unique"]
    assert meta["beta"] == pytest.approx(0.15625)


def test_fb_algorithm(tmp_path):
    cfg = _write(tmp_path, "[problem]\nkind = custom-quadratic\ncenters = [[1.0, 2.0], [3.0, 0.0]]\n"
                           "[solver]\nalgorithm = fb\nschedule = constant\ngamma0 = 0.5\n"
                           "budget = 60\n[output]\ndirectory = o\n")
    assert cli.main(["run", str(cfg)]) == 0
    meta = json.loads((tmp_path / "o" / "meta.json").read_text())
    np.testing.assert_allclose(meta["final_iterates"][0], [2.0, 1.0], atol=1e-12)


# ---------------------------------------------------------------------------
# validate

def test_validate_feasibility(capsys):
    assert cli.main(["validate", str(DEMOS / "feasibility_1d.cfg")]) == 0
    out = capsys.readouterr().out
    assert "beta = 1\n" in out
    assert "second moment of residual = 1\n" in out
    assert "psi bound: 0 violation(s)" in out


def test_validate_alpha_out_of_range(tmp_path, capsys):
    cfg = _write(tmp_path, (DEMOS / "classification_desk.cfg").read_text()
                 .replace("alpha = 0.5", "alpha = 1.2"))
    assert cli.main(["validate", str(cfg)]) == 2
    assert "alpha" in capsys.readouterr().err


def test_validate_summable_schedule(tmp_path, capsys):
    assert cli.main(["validate", str(_feas(tmp_path, p=1.5))]) == 2
    assert "sum_converges" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# selftest

def test_selftest_passes_and_is_deterministic(capsys):
    assert cli.main(["selftest"]) == 0
    first = capsys.readouterr().out
    assert cli.main(["selftest"]) == 0
    second = capsys.readouterr().out
    digest = re.search(r"digest ([0-9a-f]{64})", first).group(1)
    assert digest in second


def test_selftest_catches_hinge_sign_fault(monkeypatch, capsys):
    good = ops.hinge_prox

    def flipped(alpha, u, xi, gamma, x):
        return good(alpha, u, -xi, gamma, x)

    monkeypatch.setattr(ops, "hinge_prox", flipped)
    assert cli.main(["selftest"]) == 1
    out = capsys.readouterr().out
    assert "FAIL hinge prox" in out


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "stochprox.cli", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and r.stdout.strip() == cli.__version__
