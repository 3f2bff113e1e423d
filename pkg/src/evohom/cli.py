"""Command-line harness: scenario sweeps, single solves, kernel export and self-tests.

Exit codes: 0 converged / pass, 2 not converged / failed checks,
3 aborted runs and configuration errors.
"""

from __future__ import annotations

import argparse
import inspect
import json
import logging
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .errors import (Aborted, ConfigInvalid, DeserializationError, EvoError, NoKernelAvailable, NotContractive,
                     ScheduleTooShort)
from .homogenizer import extrapolate_columns
from .scenarios import REGISTRY, Scenario, list_scenarios, make_scenario
from .solver import escalate_nu
from .weighted_space import TimeGrid, make_test_dictionary, weak_pairings

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_ABORTED = 0, 2, 3


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run; identical configs give byte-identical CSV output."""

    scenario: str
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    schedule: tuple | None = None
    dict_size: int = 8
    seed: int = 0
    truncation: dict = field(default_factory=dict)
    nu_policy: dict = field(default_factory=dict)
    output_dir: str | None = None
    k: int = 1

    def __post_init__(self):
        if self.schedule is not None:
            s = tuple(int(k) for k in self.schedule)
            if any(b <= a for a, b in zip(s, s[1:])) or (s and s[0] < 1):
                raise ConfigInvalid(f"schedule must be strictly increasing positive integers, got {list(s)}")
            object.__setattr__(self, "schedule", s)
        if int(self.dict_size) < 1:
            raise ConfigInvalid("dict_size must be at least 1")
        nu0 = self.nu_policy.get("initial")
        if nu0 is not None and not float(nu0) > 0:
            raise ConfigInvalid("nu_policy.initial must be positive")
        if float(self.nu_policy.get("factor", 2.0)) <= 1.0:
            raise ConfigInvalid("nu_policy.factor must exceed one")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        scen = data.pop("scenario", None)
        if isinstance(scen, dict):
            name, params = scen.get("name"), dict(scen.get("params", {}))
        else:
            name, params = scen, dict(data.pop("params", {}))
        if not name:
            raise ConfigInvalid("config needs a scenario name")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        return cls(scenario=name, params=params, **data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(io.read_json(path))
        except DeserializationError as exc:
            raise ConfigInvalid(str(exc)) from exc

    def to_dict(self) -> dict:
        return {"scenario": {"name": self.scenario, "params": self.params}, "grid": self.grid,
                "schedule": list(self.schedule) if self.schedule else None, "dict_size": self.dict_size,
                "seed": self.seed, "truncation": self.truncation, "nu_policy": self.nu_policy,
                "output_dir": self.output_dir, "k": self.k}

    def build_scenario(self) -> Scenario:
        """Scenario with grid, schedule and truncation overrides applied."""
        params = dict(self.params)
        factory = REGISTRY.get(self.scenario)
        if factory is not None:
            accepted = inspect.signature(factory).parameters
            for key in ("L", "J", "tol"):
                if key in self.truncation and key in accepted:
                    params.setdefault(key, self.truncation[key])
            for key in ("dt", "T"):
                if key in self.grid and key in accepted:
                    params.setdefault(key, self.grid[key])
        sc = make_scenario(self.scenario, params)
        if "n_steps" in self.grid or "dt" in self.grid:
            g = sc.grid
            sc = replace(sc, grid=TimeGrid(self.grid.get("dt", g.dt), self.grid.get("n_steps", g.n_steps), g.nu))
        nu = self.nu_policy.get("initial", self.grid.get("nu"))
        if nu is not None:
            sc = sc.with_nu(float(nu))
        if self.schedule is not None:
            sc = sc.with_schedule(self.schedule)
        return sc


@dataclass(eq=False)
class GConvReport:
    """Outcome of a G-convergence sweep.

    ``gap_curve[i]`` is the largest pairing gap at ``schedule[i]``, relative to
    the largest reference pairing.  Without a closed-form or brute-force
    reference it is the relative increment to the previous schedule point.
    """

    scenario: dict
    schedule: tuple
    nu: float
    pairings: np.ndarray
    reference_pairings: np.ndarray | None
    gap_curve: np.ndarray
    diagnostics: list
    verdict: str
    reason: str = ""
    homogenized: dict = field(default_factory=dict)
    extrapolated: np.ndarray | None = None
    kernel: np.ndarray | None = None
    grid: TimeGrid | None = None
    runtime: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.verdict == "converged"

    def to_dict(self) -> dict:
        def cvec(a):
            return None if a is None else [[float(v.real), float(v.imag)] for v in np.asarray(a).ravel()]

        return {"scenario": self.scenario, "schedule": list(self.schedule), "nu": self.nu,
                "gap_curve": [None if not np.isfinite(g) else float(g) for g in self.gap_curve],
                "verdict": self.verdict, "reason": self.reason, "per_k": [
                    {"k": int(k), "diagnostics": d} for k, d in zip(self.schedule, self.diagnostics)],
                "reference_pairings": cvec(self.reference_pairings), "extrapolated": cvec(self.extrapolated),
                "homogenized": self.homogenized, "kernel_available": self.kernel is not None,
                "runtime": self.runtime}


def _monotone_tail(gaps, n=3, rel=1e-6, floor=1e-12) -> bool:
    """Non-increasing over the last ``n`` points (up to a round-off slack)."""
    tail = np.asarray(gaps[-n:], dtype=float)
    return bool(np.all(tail[1:] <= tail[:-1] * (1 + rel) + floor))


def _summary(info: dict) -> dict:
    out = {}
    for key, val in info.items():
        if hasattr(val, "to_dict"):
            out[key] = val.to_dict()
        elif hasattr(val, "describe"):
            out[key] = val.describe()
        elif isinstance(val, (str, int, float, bool)) or val is None:
            out[key] = val
    return json.loads(json.dumps(out, default=io._json_default))


def _clean_diag(diag: dict) -> dict:
    return {k: v for k, v in diag.items() if isinstance(v, (str, int, float, bool)) or v is None}


def run_gconv(config: RunConfig, write: bool = True) -> GConvReport:
    """Sweep the oscillation schedule of a scenario and judge weak convergence.

    Solves escalate ``nu`` according to ``config.nu_policy`` whenever the
    series would not contract; after ``max_retries`` the run is aborted.
    """
    t_start = time.perf_counter()
    sc = config.build_scenario()
    if len(sc.schedule) < 3:
        raise ScheduleTooShort(f"schedule {list(sc.schedule)} has fewer than three points")
    policy = config.nu_policy
    factor, retries = float(policy.get("factor", 2.0)), int(policy.get("max_retries", 3))

    def attempt(nu):
        s = sc.with_nu(nu)
        dic = make_test_dictionary(s.grid, s.space, config.dict_size, config.seed)
        rows, diags = [], []
        for k in s.schedule:
            u, diag = s.solve(k)
            rows.append(weak_pairings(u, dic))
            diags.append(_clean_diag(diag))
        ref, info = s.reference()
        ref_pairs = None if ref is None else weak_pairings(ref, dic)
        return s, np.array(rows), diags, ref_pairs, info

    try:
        (s, table, diags, ref_pairs, info), nu = escalate_nu(attempt, sc.grid.nu, factor, retries)
    except NotContractive as exc:
        raise Aborted(f"not contractive after {retries} escalations (q={exc.q:.4g})") from exc
    except ConfigInvalid as exc:
        raise Aborted(f"escalation left the admissible grid range: {exc}") from exc

    extrap = None
    if ref_pairs is not None:
        scale_ = np.max(np.abs(ref_pairs))
        scale_ = scale_ if scale_ > 0 else 1.0
        gaps = np.max(np.abs(table - ref_pairs), axis=1) / scale_
        ok = gaps[-1] <= s.tolerance and _monotone_tail(gaps)
        reason = "" if ok else (f"final gap {gaps[-1]:.3g} > tol {s.tolerance:g}" if gaps[-1] > s.tolerance
                                else "gap not monotone over the last three schedule points")
    else:
        scale_ = np.max(np.abs(table))
        scale_ = scale_ if scale_ > 0 else 1.0
        gaps = np.concatenate([[np.nan], np.max(np.abs(np.diff(table, axis=0)), axis=1) / scale_])
        extrap, cauchy, rate, _ = extrapolate_columns(table)
        ok = bool(np.all(cauchy)) and rate < 1.0 and gaps[-1] <= s.tolerance
        reason = "" if ok else f"empirical pairings not Cauchy (rate {rate:.3g}, increment {gaps[-1]:.3g})"

    kernel = None
    if callable(s.meta.get("kernel")):
        kernel = np.asarray(s.meta["kernel"](s.grid))
    report = GConvReport(s.to_dict(), s.schedule, nu, table, ref_pairs, gaps, diags,
                         "converged" if ok else "not_converged", reason, _summary(info), extrap, kernel, s.grid,
                         {"seconds": time.perf_counter() - t_start, "nu_escalated": nu != sc.grid.nu})
    if write and config.output_dir:
        write_report(report, config.output_dir)
    return report


def write_report(report: GConvReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(report, out / "report.json")
    io.write_pairings(report.pairings, report.schedule, out / "pairings.csv")
    with (out / "gaps.csv").open("w") as fh:
        fh.write("k,gap\n")
        for k, g in zip(report.schedule, report.gap_curve):
            fh.write(f"{int(k)},{float(g)!r}\n")
    return out


def export_kernel(report: GConvReport, path) -> Path:
    """Write the memory kernel of ``report`` as CSV ``t,K_re,K_im``."""
    if report.kernel is None or report.grid is None:
        raise NoKernelAvailable(f"scenario {report.scenario.get('name')!r} produced no memory kernel")
    return io.write_kernel(report.kernel, report.grid, path)


# ---------------------------------------------------------------- self-test

def _check_inverse_pair():
    from .operators import Derivative, Integration, compose
    from .weighted_space import SpaceModel
    grid, space = TimeGrid(1e-3, 1024, 1.0), SpaceModel.finite_dim(2)
    x = np.random.default_rng(0).standard_normal((1024, 2)) + 0j
    err = np.max(np.abs(compose([Derivative(grid, space), Integration(grid, space)]).apply_array(x) - x))
    return err == 0.0, f"max |D I x - x| = {err:.1e}"


def _check_norm_bound():
    from .operators import Integration, operator_norm_estimate
    from .weighted_space import SpaceModel
    nu, dt = 16.0, 1e-3
    grid = TimeGrid(dt, 1500, nu)
    est = operator_norm_estimate(Integration(grid, SpaceModel.finite_dim(1)))
    hi = dt / (1 - np.exp(-nu * dt))
    return 0.98 / nu <= est <= hi, f"estimate {est:.6f} in [{0.98 / nu:.6f}, {hi:.6f}]"


def _check_solvers():
    from .operators import multiplication_op
    from .solver import EvoProblem, solve_neumann, solve_stepping
    from .weighted_space import SpaceModel, WeightedSignal, relative_error
    rng = np.random.default_rng(1)
    grid, space = TimeGrid(1e-3, 400, 4.0), SpaceModel.finite_dim(3)
    A = rng.standard_normal((3, 3))
    Mb = np.broadcast_to(A @ A.T / 3 + np.eye(3), (1, 1, 3, 3))
    Nb = 0.5 * rng.standard_normal((grid.n_steps, 1, 3, 3))
    f = WeightedSignal(grid, space, rng.standard_normal((grid.n_steps, 3)))
    p = EvoProblem(multiplication_op(Mb, grid, space), multiplication_op(Nb, grid, space), f)
    err = relative_error(solve_neumann(p).u, solve_stepping(p))
    return err <= 1e-10, f"Neumann vs stepping rel err {err:.1e}"


def _check_posdef():
    from .operators import (block_inv, block_norms, coercivity_estimate, hermitian_min_eig, multiplication_op)
    from .weighted_space import SpaceModel
    rng = np.random.default_rng(2)
    grid, space = TimeGrid(1e-2, 16, 1.0), SpaceModel.finite_dim(3)
    G = rng.standard_normal((16, 1, 3, 3))
    S = rng.standard_normal((16, 1, 3, 3))
    T = G @ np.swapaxes(G, -1, -2) / 3 + 0.5 * np.eye(3) + (S - np.swapaxes(S, -1, -2))
    op = multiplication_op(T, grid, space)
    c = coercivity_estimate(op)
    inv = block_inv(T)
    ok1 = np.max(block_norms(inv)) <= 1 / c * (1 + 1e-9)
    ok2 = np.min(hermitian_min_eig(inv)) >= c / np.max(block_norms(T)) ** 2 * (1 - 1e-6)
    return bool(ok1 and ok2), f"c = {c:.4f}, inverse bounds hold: {bool(ok1)}/{bool(ok2)}"


def _check_time_periodic():
    from .homogenizer import CellFunction, time_periodic_limit, time_periodic_series
    A, B = CellFunction.two_valued(1.0, 3.0), CellFunction.constant(1.0)
    series = time_periodic_series(A, B, L=40)
    closed = time_periodic_limit(A, B)
    M0, M1 = (complex(np.asarray(m).ravel()[0]) for m in series.M_hom[:2])
    M_eff, N_eff = (complex(np.asarray(closed.extra[k]).ravel()[0]) for k in ("M_eff", "N_eff"))
    err = max(abs(1 / M0 - 1.5), abs(M1 / M0 ** 2 - 1.0), abs(M_eff - 1.5), abs(N_eff - 1.0))
    return err <= 1e-7, f"limit coefficients vs (3/2, 1): {err:.1e}"


def _check_bad_grid():
    try:
        TimeGrid(0.1, 10, 20.0)
    except ConfigInvalid as exc:
        return True, f"rejected: {exc}"
    return False, "grid with nu*dt >= 1 was accepted"


def _check_corrupt_kernel():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "kernel.csv"
        path.write_text("t,K_re,K_im\n0.0,1.0,zero\n")
        try:
            io.read_kernel(path)
        except DeserializationError as exc:
            return str(path) in str(exc), f"reported: {exc}"
    return False, "corrupted kernel CSV was accepted"


def _check_escalation(names):
    msgs, ok = [], True
    for name in names:
        sc = make_scenario(name)
        try:
            _, nu = escalate_nu(lambda v: sc.with_nu(v).solve(sc.schedule[0]), sc.grid.nu, 2.0, 3)
            msgs.append(f"{name}@{nu:g}")
        except (NotContractive, ConfigInvalid) as exc:
            ok = False
            msgs.append(f"{name}: {exc}")
    return ok, "contractive: " + ", ".join(msgs)


SELFTEST_CHECKS = {
    "inverse_pair": _check_inverse_pair,
    "norm_bound": _check_norm_bound,
    "solver_equivalence": _check_solvers,
    "posdef_inverse_bounds": _check_posdef,
    "time_periodic_series": _check_time_periodic,
    "bad_grid_rejected": _check_bad_grid,
    "corrupt_kernel_reported": _check_corrupt_kernel,
}


def run_selftest(scenarios=None, stream=None) -> dict:
    """Run the invariant checks and print one pass/fail line per check.

    ``scenarios`` limits the nu-escalation check (default: every built-in
    scenario).  Failures are reported, never raised.
    """
    stream = sys.stdout if stream is None else stream
    checks = dict(SELFTEST_CHECKS)
    names = list_scenarios() if scenarios is None else list(scenarios)
    checks["nu_escalation"] = lambda: _check_escalation(names)
    results = {}
    for name, fn in checks.items():
        try:
            ok, msg = fn()
        except Exception as exc:  # reported, not thrown
            ok, msg = False, f"{type(exc).__name__}: {exc}"
        results[name] = {"passed": bool(ok), "detail": msg}
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {msg}", file=stream)
    return results


# ---------------------------------------------------------------- entry point

def _parser():
    ap = argparse.ArgumentParser(prog="evohom", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "gconv", "kernel"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--scenario", help="scenario name (when no config is given)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--nu", type=float)
        p.add_argument("--schedule", help="comma-separated oscillation indices")
        if name == "solve":
            p.add_argument("--k", type=int, help="oscillation index to solve")
    st = sub.add_parser("selftest")
    st.add_argument("--scenarios", help="comma-separated scenarios for the escalation check")
    sub.add_parser("list-scenarios")
    return ap


def _config_from_args(args, default_scenario=None) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config)
    else:
        name = args.scenario or default_scenario
        if not name:
            raise ConfigInvalid("give --config or --scenario")
        cfg = RunConfig(scenario=name)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.nu is not None:
        over["nu_policy"] = {**cfg.nu_policy, "initial": args.nu}
    if args.schedule:
        try:
            over["schedule"] = tuple(int(v) for v in args.schedule.split(","))
        except ValueError:
            raise ConfigInvalid(f"bad --schedule {args.schedule!r}") from None
    if args.out:
        over["output_dir"] = args.out
    if getattr(args, "k", None) is not None:
        over["k"] = args.k
    return replace(cfg, **over)


def _cmd_solve(cfg: RunConfig) -> int:
    sc = cfg.build_scenario()
    policy = cfg.nu_policy
    try:
        (u, diag), nu = escalate_nu(lambda v: sc.with_nu(v).solve(cfg.k), sc.grid.nu,
                                    float(policy.get("factor", 2.0)), int(policy.get("max_retries", 3)))
    except NotContractive as exc:
        raise Aborted(f"not contractive (q={exc.q:.4g})") from exc
    out = Path(cfg.output_dir or ".")
    io.write_signal(u, out / "u.csv")
    io.write_json({"k": cfg.k, "nu": nu, **_clean_diag(diag)}, out / "solve_report.json")
    print(f"solved {sc.name} at k={cfg.k}, nu={nu:g}: {_clean_diag(diag)}")
    return EXIT_OK


def _cmd_gconv(cfg: RunConfig) -> int:
    rep = run_gconv(cfg)
    for k, g in zip(rep.schedule, rep.gap_curve):
        print(f"k={k:5d}  gap={g:.3e}")
    print(f"verdict: {rep.verdict}{' (' + rep.reason + ')' if rep.reason else ''}")
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def _cmd_kernel(cfg: RunConfig) -> int:
    sc = cfg.build_scenario()
    if not callable(sc.meta.get("kernel")):
        raise NoKernelAvailable(f"scenario {sc.name!r} has no memory kernel")
    K = np.asarray(sc.meta["kernel"](sc.grid))
    path = Path(cfg.output_dir or ".") / "kernel.csv"
    io.write_kernel(K, sc.grid, path)
    print(f"wrote {path} ({K.size} samples, max |K| = {np.max(np.abs(K)):.4g})")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-scenarios":
            for name in list_scenarios():
                doc = (REGISTRY[name].__doc__ or "").strip().splitlines()
                print(f"{name:14s} {doc[0] if doc else ''}")
            return EXIT_OK
        if args.command == "selftest":
            names = args.scenarios.split(",") if args.scenarios else None
            res = run_selftest(names)
            return EXIT_OK if all(r["passed"] for r in res.values()) else EXIT_NOT_CONVERGED
        if args.command == "solve":
            return _cmd_solve(_config_from_args(args))
        if args.command == "gconv":
            return _cmd_gconv(_config_from_args(args))
        if args.command == "kernel":
            return _cmd_kernel(_config_from_args(args, default_scenario="tartar"))
    except EvoError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
