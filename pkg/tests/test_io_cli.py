import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evohom import io
from evohom.cli import GConvReport, RunConfig, export_kernel, main, run_gconv, run_selftest
from evohom.errors import (Aborted, ConfigInvalid, DeserializationError, NoKernelAvailable, ScheduleTooShort,
                           UnsupportedKind)
from evohom.operators import (Integration, SpatialOp, compose, constant_op, convolution_op, invert,
                              multiplication_op, scale, shift_op, sum_ops)
from evohom.weighted_space import SpaceModel, TimeGrid, WeightedSignal


def random_signal(grid, space, seed):
    rng = np.random.default_rng(seed)
    shape = (grid.n_steps, space.n_dof)
    return WeightedSignal(grid, space, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


# ---------------------------------------------------------------- round trips

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_signal_round_trip_is_bit_exact(tmp_path_factory, seed):
    path = tmp_path_factory.mktemp("sig") / "u.csv"
    u = random_signal(TimeGrid(0.01, 17, 1.5), SpaceModel.torus_grid(1, 3, 2), seed)
    io.write_signal(u, path)
    v = io.read_signal(path)
    assert np.array_equal(v.values, u.values) and v.grid == u.grid and v.space == u.space


def test_kernel_and_pairings_round_trip(tmp_path):
    g = TimeGrid(0.01, 50, 1.0)
    K = np.exp(-g.times) * (1 + 1j / 3)
    io.write_kernel(K, g, tmp_path / "k.csv")
    t, K2 = io.read_kernel(tmp_path / "k.csv")
    assert np.array_equal(t, g.times) and np.array_equal(K2, K)
    table = np.random.default_rng(0).standard_normal((4, 6)) / 7 + 1j
    io.write_pairings(table, (1, 2, 4, 8), tmp_path / "p.csv")
    sched, tab = io.read_pairings(tmp_path / "p.csv")
    assert sched == (1, 2, 4, 8) and np.array_equal(tab, table)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "n,pair_id,re,im"
    assert (tmp_path / "k.csv").read_text().splitlines()[0] == "t,K_re,K_im"


def test_operator_round_trip(tmp_path):
    g, s = TimeGrid(2 ** -6, 64, 2.0), SpaceModel.finite_dim(2)
    rng = np.random.default_rng(3)
    M = multiplication_op(rng.standard_normal((64, 1, 2, 2)), g, s)
    C = convolution_op(np.exp(-g.times), g, s)
    op = sum_ops([compose([M, Integration(g, s), C]), scale(0.5 - 1j, shift_op(0.125, g, s)),
                  invert(constant_op(np.array([[2.0, 1.0], [0.0, 3.0]]), g, s))])
    io.write_operator(op, tmp_path / "op.json")
    back = io.read_operator(tmp_path / "op.json")
    x = random_signal(g, s, 1)
    assert np.array_equal(back.apply(x).values, op.apply(x).values)
    assert back.describe() == op.describe()


def test_spatial_operators_are_not_serializable(tmp_path):
    g, s = TimeGrid(0.1, 4, 1.0), SpaceModel.finite_dim(1)
    op = SpatialOp(lambda x: x, lambda y: y, 1.0, g, s)
    with pytest.raises(UnsupportedKind):
        io.write_operator(op, tmp_path / "op.json")


def test_corrupted_files_report_their_path(tmp_path):
    bad = tmp_path / "kernel.csv"
    bad.write_text("t,K_re,K_im\n0.0,1.0,zero\n")
    with pytest.raises(DeserializationError, match=str(bad)):
        io.read_kernel(bad)
    bad.write_text("x,y\n1,2\n")
    with pytest.raises(DeserializationError, match=str(bad)):
        io.read_kernel(bad)
    with pytest.raises(DeserializationError, match="missing"):
        io.read_kernel(tmp_path / "missing.csv")
    js = tmp_path / "cfg.json"
    js.write_text("{not json")
    with pytest.raises(DeserializationError, match=str(js)):
        io.read_json(js)


def test_signal_with_mismatched_sidecar(tmp_path):
    g, s = TimeGrid(0.1, 5, 1.0), SpaceModel.finite_dim(1)
    io.write_signal(random_signal(g, s, 0), tmp_path / "u.csv")
    io.write_json({**TimeGrid(0.1, 6, 1.0).to_dict(), "space": s.to_dict()}, tmp_path / "u.json")
    with pytest.raises(DeserializationError, match="sidecar"):
        io.read_signal(tmp_path / "u.csv")


# ---------------------------------------------------------------- run configuration

def test_run_config_validation_and_round_trip(tmp_path):
    with pytest.raises(ConfigInvalid):
        RunConfig("periodic_ode", schedule=(1, 4, 2))
    with pytest.raises(ConfigInvalid):
        RunConfig("periodic_ode", nu_policy={"initial": 0.0})
    with pytest.raises(ConfigInvalid):
        RunConfig("periodic_ode", dict_size=0)
    with pytest.raises(ConfigInvalid):
        RunConfig.from_dict({"scenario": "tartar", "colour": "red"})
    cfg = RunConfig("tartar", params={"lambda2": 1.0}, schedule=(1, 2, 4), seed=5)
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    (tmp_path / "c.json").write_text("[")
    with pytest.raises(ConfigInvalid):
        RunConfig.load(tmp_path / "c.json")


def test_config_overrides_reach_the_scenario():
    sc = RunConfig("periodic_ode", grid={"dt": 2 ** -8, "T": 1.0}, nu_policy={"initial": 8.0},
                   schedule=(2, 4, 8)).build_scenario()
    assert sc.grid.dt == 2 ** -8 and sc.grid.n_steps == 256 and sc.grid.nu == 8.0
    assert sc.schedule == (2, 4, 8)


# ---------------------------------------------------------------- g-convergence runs

def test_memoryless_tartar_run_converges_at_every_k():
    rep = run_gconv(RunConfig("tartar", params={"lambda1": 1.0, "lambda2": 1.0}, schedule=(1, 2, 4, 8)),
                    write=False)
    assert rep.converged and np.all(rep.gap_curve <= 1e-9)


def test_periodic_run_converges():
    rep = run_gconv(RunConfig("periodic_ode"), write=False)
    assert isinstance(rep, GConvReport) and rep.converged
    assert rep.gap_curve[-1] <= 5e-3 and rep.schedule[-1] == 64
    json.dumps(rep.to_dict())


def test_short_schedule_is_rejected():
    with pytest.raises(ScheduleTooShort):
        run_gconv(RunConfig("periodic_ode", schedule=(1,)), write=False)


def test_nu_escalation_and_abort():
    cfg = RunConfig("periodic_ode", params={"b": (0.0, 20.0)}, schedule=(1, 2, 4),
                    nu_policy={"initial": 1.0, "max_retries": 1})
    with pytest.raises(Aborted):
        run_gconv(cfg, write=False)
    rep = run_gconv(RunConfig("periodic_ode", params={"b": (0.0, 20.0)}, schedule=(1, 2, 4),
                              nu_policy={"initial": 1.0, "max_retries": 6}), write=False)
    assert rep.runtime["nu_escalated"] and rep.nu > 1.0


def test_runs_are_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        cfg = RunConfig("periodic_ode", schedule=(4, 8, 16, 32), seed=7, output_dir=str(tmp_path / name))
        run_gconv(cfg)
        outs.append({f: (tmp_path / name / f).read_bytes() for f in ("pairings.csv", "gaps.csv")})
    assert outs[0] == outs[1]


def test_kernel_export(tmp_path):
    rep = run_gconv(RunConfig("tartar", schedule=(16, 32, 64)), write=False)
    path = export_kernel(rep, tmp_path / "kernel.csv")
    t, K = io.read_kernel(path)
    assert np.array_equal(K, rep.kernel) and np.max(np.abs(K)) > 1e-2
    rep = run_gconv(RunConfig("periodic_ode", schedule=(16, 32, 64)), write=False)
    with pytest.raises(NoKernelAvailable):
        export_kernel(rep, tmp_path / "none.csv")


def test_selftest_reports_every_check():
    import io as _io
    buf = _io.StringIO()
    res = run_selftest(["periodic_ode"], stream=buf)
    assert all(r["passed"] for r in res.values())
    lines = buf.getvalue().splitlines()
    assert len(lines) == len(res) and all(line.startswith("[PASS]") for line in lines)
    assert {"bad_grid_rejected", "corrupt_kernel_reported", "nu_escalation"} <= set(res)


# ---------------------------------------------------------------- command line

def test_cli_exit_codes(tmp_path, capsys):
    assert main(["list-scenarios"]) == 0
    assert "tartar" in capsys.readouterr().out
    assert main(["gconv", "--scenario", "periodic_ode", "--out", str(tmp_path / "ok")]) == 0
    assert (tmp_path / "ok" / "report.json").exists()
    assert main(["gconv", "--scenario", "periodic_ode", "--schedule", "1,2,4"]) == 2
    assert main(["gconv", "--scenario", "periodic_ode", "--schedule", "1"]) == 3
    assert main(["gconv", "--scenario", "nope"]) == 3
    assert main(["kernel", "--scenario", "periodic_ode", "--out", str(tmp_path)]) == 3
    assert main(["kernel", "--out", str(tmp_path)]) == 0
    assert io.read_kernel(tmp_path / "kernel.csv")[1].size == 1024
    assert main(["selftest", "--scenarios", "periodic_ode"]) == 0


def test_cli_solve_and_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": {"name": "periodic_ode", "params": {"a": [1.0, 3.0]}},
                               "schedule": [1, 2, 4]}))
    assert main(["solve", "--config", str(cfg), "--k", "4", "--out", str(tmp_path)]) == 0
    u = io.read_signal(tmp_path / "u.csv")
    assert u.values.shape == (1024, 128)
    cfg.write_text("{")
    assert main(["solve", "--config", str(cfg)]) == 3


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "evohom", "list-scenarios"], capture_output=True, text=True)
    assert out.returncode == 0 and "periodic_ode" in out.stdout
