"""Parameterized oscillation experiments with exact or brute-force references.

Each scenario bundles a time grid, a space, an oscillation schedule, a
family of problems indexed by ``k`` and a reference for the limit.  The
G-convergence metric of a run is ``max_j |<phi_j, u_k - u_ref>|`` over a
test dictionary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.fft as sfft

from .errors import (AlphaOutOfRange, ConfigInvalid, EtaOnSpectrum, NegativeDelay, NotCoercive, NotCoerciveOnCell,
                     NotContractive,
                     ScenarioUnknown)
from .homogenizer import (CellFunction, assemble_block, assemble_symbol_valued, assemble_time_independent,
                          block_cell_averages, extract_memory_kernel, homogenize_time_independent,
                          join_signals, join_spaces, time_periodic_limit, time_periodic_series)
from .operators import (Integration, PointwiseOp, SpatialOp, compose, constant_op, convolution_op,
                        fractional_power_op, identity, laplace_variable, shift_op, sum_ops)
from .solver import BlockEvoProblem, EvoProblem, solve_block, solve_neumann
from .weighted_space import SpaceModel, TimeGrid, WeightedSignal, raised_cosine, smooth_bump_signal

logger = logging.getLogger(__name__)

DEFAULT_TOL = 5e-3


@dataclass(frozen=True, eq=False)
class Scenario:
    """A family of oscillating problems with a limit reference.

    Attributes
    ----------
    solve_fn : callable ``(k, grid) -> (WeightedSignal, dict)``
        Solution ``u_k`` and solver diagnostics.
    reference_fn : callable ``grid -> (WeightedSignal, dict)``
        Limit solution and extra information (e.g. the limit operator).
    reference_kind : str
        ``closed_form``, ``oracle`` (brute force / empirical WOT) or ``none``.
    """

    name: str
    params: dict
    grid: TimeGrid
    space: SpaceModel
    schedule: tuple
    tolerance: float
    reference_kind: str
    solve_fn: Callable
    reference_fn: Callable | None = None
    meta: dict = field(default_factory=dict)

    def solve(self, k: int, grid: TimeGrid | None = None):
        return self.solve_fn(int(k), grid or self.grid)

    def reference(self, grid: TimeGrid | None = None):
        if self.reference_fn is None:
            return None, {}
        return self.reference_fn(grid or self.grid)

    def with_nu(self, nu: float) -> "Scenario":
        return replace(self, grid=self.grid.with_nu(nu))

    def with_schedule(self, schedule) -> "Scenario":
        return replace(self, schedule=tuple(int(k) for k in schedule))

    def to_dict(self) -> dict:
        return {"name": self.name, "params": _jsonable(self.params), "grid": self.grid.to_dict(),
                "space": self.space.to_dict(), "schedule": list(self.schedule), "tolerance": self.tolerance,
                "reference": self.reference_kind}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dyadic_schedule(k_max: int, k_min: int = 1) -> tuple:
    out, k = [], k_min
    while k <= k_max:
        out.append(k)
        k *= 2
    return tuple(out)


def _cell(value, name, d=1):
    """Promote numbers / pairs to cell functions: scalar -> constant, (v1, v2) -> two-valued."""
    if isinstance(value, CellFunction):
        return value
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return CellFunction.two_valued(value[0], value[1], d=d)
    return CellFunction.constant(value, d=d)


def _torus_rhs(grid, space):
    """Smooth right-hand side: bump on [T/8, T/2] times (1 + cos(2 pi x_1)/2) in every component."""
    x = space.points()
    prof = 1.0 + 0.5 * np.cos(2 * np.pi * x[:, 0]) if space.kind == "torus_grid" else np.ones(1)
    spatial = np.repeat(prof[:, None], space.m, axis=1).ravel()
    return smooth_bump_signal(grid, space, spatial)


# ---------------------------------------------------------------- time-independent periodic ODE

def scenario_periodic_ode(a=(1.0, 3.0), b=0.0, d: int = 1, m: int = 1, R: int = 128, T: float = 2.0,
                          dt: float = 2.0 ** -9, nu: float = 4.0, schedule=None, tolerance=DEFAULT_TOL,
                          name="periodic_ode", L: int = 60) -> Scenario:
    """``dt0 a(k x) u + b(k x) u = f`` on a periodic grid; the limit follows from cell averages."""
    a_c, b_c = _cell(a, "a", d), _cell(b, "b", d)
    if not a_c.coercivity() > 0:
        raise NotCoerciveOnCell(f"a is not coercive on the cell (min Hermitian part {a_c.coercivity():.3g})")
    space = SpaceModel.torus_grid(d, R, m)
    grid = TimeGrid(dt, int(round(T / dt)), nu)
    schedule = dyadic_schedule(R // 2) if schedule is None else tuple(schedule)
    b_zero = np.allclose(b_c.samples(8), 0)

    def problem(k, grid):
        M = PointwiseOp(a_c.on_space(space, k), grid, space)
        N = None if b_zero else PointwiseOp(b_c.on_space(space, k), grid, space)
        return EvoProblem(M, N, _torus_rhs(grid, space))

    def solve(k, grid):
        rep = solve_neumann(problem(k, grid))
        return rep.u, rep.to_dict()

    def reference(grid, tol=1e-10):
        model = homogenize_time_independent(a_c, b_c, L=L, nu=grid.nu)
        lim = assemble_time_independent(model.M_hom, grid=grid, space=space, growth=model.growth, tol=tol,
                                        model=model)
        return lim.solve(_torus_rhs(grid, space)), {"limit": lim, "model": model}

    return Scenario(name, {"a": _desc(a), "b": _desc(b), "d": d, "m": m, "R": R, "T": T}, grid, space,
                    schedule, tolerance, "closed_form", solve, reference,
                    {"a": a_c, "b": b_c, "problem": problem, "rhs": lambda grid: _torus_rhs(grid, space)})


def _desc(v):
    return v if not isinstance(v, CellFunction) else v.name


def scenario_tartar_memory(lambda1: float = 0.0, lambda2: float = 2.0, R: int = 128, T: float = 2.0,
                           dt: float = 2.0 ** -9, nu: float = 4.0, schedule=None,
                           tolerance=DEFAULT_TOL) -> Scenario:
    """``(dt0 + b(k x)) u = f`` with two-valued ``b``; the limit carries a memory kernel.

    The reference is the brute-force sweep itself; the meta entries hold the
    series limit (for the kernel) and the memoryless surrogate ``dt0 + b0``.
    """
    sc = scenario_periodic_ode(1.0, (lambda1, lambda2), R=R, T=T, dt=dt, nu=nu, schedule=schedule,
                               tolerance=tolerance, name="tartar")
    b0 = 0.5 * (lambda1 + lambda2)

    def surrogate(grid):
        space = sc.space
        rep = solve_neumann(EvoProblem(identity(grid, space), constant_op(b0, grid, space), _torus_rhs(grid, space)))
        return rep.u

    def kernel(grid, tol=1e-15):
        s1 = SpaceModel.finite_dim(1)
        model = homogenize_time_independent(CellFunction.constant(1.0), CellFunction.two_valued(lambda1, lambda2),
                                            L=200, nu=grid.nu)
        lim = assemble_time_independent(model.M_hom, grid=grid, space=s1, growth=model.growth, tol=tol)
        return extract_memory_kernel(lim)

    meta = dict(sc.meta, b0=b0, surrogate=surrogate, kernel=kernel)
    return replace(sc, params={"lambda1": lambda1, "lambda2": lambda2, "R": R, "T": T},
                   reference_kind="oracle", meta=meta)


# ---------------------------------------------------------------- time-periodic coefficients

def scenario_time_periodic(A=(1.0, 3.0), B=1.0, T: float = 2.0, dt: float = 2.0 ** -10, nu: float = 4.0,
                           schedule=None, tolerance=DEFAULT_TOL) -> Scenario:
    """``(dt0 A(n t) + B(n t)) u = f`` with closed-form limit ``dt0 M_eff + N_eff``."""
    A_c, B_c = _cell(A, "A"), _cell(B, "B")
    space = SpaceModel.finite_dim(1)
    grid0 = TimeGrid(dt, int(round(T / dt)), nu)
    schedule = dyadic_schedule(128, 8) if schedule is None else tuple(schedule)

    def rhs(grid):
        return smooth_bump_signal(grid, space)

    def solve(n, grid):
        M = PointwiseOp(A_c.in_time(grid, n), grid, space)
        N = PointwiseOp(B_c.in_time(grid, n), grid, space)
        rep = solve_neumann(EvoProblem(M, N, rhs(grid)))
        return rep.u, rep.to_dict()

    def reference(grid):
        model = time_periodic_limit(A_c, B_c)
        M = constant_op(model.extra["M_eff"], grid, space)
        N = constant_op(model.extra["N_eff"], grid, space)
        rep = solve_neumann(EvoProblem(M, N, rhs(grid)))
        return rep.u, {"model": model}

    def series_limit(grid, tol=1e-12):
        model = time_periodic_series(A_c, B_c, L=80)
        return assemble_time_independent(model.M_hom, grid=grid, space=space, growth=model.growth, tol=tol)

    return Scenario("time_periodic", {"A": _desc(A), "B": _desc(B), "T": T}, grid0, space, schedule, tolerance,
                    "closed_form", solve, reference, {"A": A_c, "B": B_c, "series_limit": series_limit,
                                                               "rhs": rhs})


# ---------------------------------------------------------------- translation-invariant (symbol) scenarios

def _exp_kernel_symbol(grid, z):
    """Discrete transform of the kernel ``exp(-t)`` sampled on the grid: ``dt/(1 - e^{-dt} zeta)``."""
    zeta = 1.0 - grid.dt / z
    return grid.dt / (1.0 - np.exp(-grid.dt) * zeta)


def scenario_convolution(gamma=0.5, gamma_prime=None, T: float = 2.0, dt: float = 2.0 ** -9, nu: float = 1.0,
                         R: int = 64, schedule=None, tolerance=DEFAULT_TOL) -> Scenario:
    """Integral equation ``u + g_k * u = f`` with ``g_k(t, x) = gamma(k x) exp(-t)``.

    With ``gamma_prime`` given, ``gamma`` alternates between the two values
    across the periodicity cell; the limit symbol is the cell mean of the
    resolvent symbols ``1/(1 + gamma g(z))``.
    """
    two = gamma_prime is not None
    if max(abs(gamma), abs(gamma_prime or 0.0)) >= 1.0 + nu:
        raise NotContractive(max(abs(gamma), abs(gamma_prime or 0.0)) / (1.0 + nu))
    space = SpaceModel.torus_grid(1, R, 1) if two else SpaceModel.finite_dim(1)
    h0 = SpaceModel.torus_grid(1, R, 0) if two else SpaceModel.finite_dim(0)
    cell = CellFunction.two_valued(gamma, gamma_prime) if two else CellFunction.constant(gamma)
    grid0 = TimeGrid(dt, int(round(T / dt)), nu)
    schedule = (dyadic_schedule(R // 2) if two else (1, 2, 4)) if schedule is None else tuple(schedule)

    def rhs(grid):
        return _torus_rhs(grid, space) if two else smooth_bump_signal(grid, space)

    def n11(k, grid):
        gam = cell.on_space(space, k) if two else np.full((1, 1, 1, 1), gamma, dtype=complex)
        kern = np.exp(-grid.times)[:, None, None, None] * gam
        return sum_ops([identity(grid, space), convolution_op(kern, grid, space)])

    def solve(k, grid):
        f1 = rhs(grid)
        p = BlockEvoProblem(None, None, None, None, n11(k, grid), WeightedSignal.zeros(grid, h0), f1)
        rep = solve_block(p)
        return rep.u1, {"terms_used": 0}

    def limit_symbol(z, grid):
        g = _exp_kernel_symbol(grid, z)
        vals = cell.samples(2)[:, 0, 0] if two else np.array([gamma])
        return np.mean(1.0 / (1.0 + vals[None, :] * g[:, None]), axis=1)

    def reference(grid):
        lim = {"N_hom": lambda z: limit_symbol(z, grid)[:, None, None]}
        B, S = assemble_symbol_valued(lim, grid, h0, space)
        return S.apply(rhs(grid)), {"limit": B, "solution": S}

    return Scenario("convolution", {"gamma": gamma, "gamma_prime": gamma_prime, "T": T}, grid0, space, schedule,
                    tolerance, "closed_form", solve, reference, {"n11": n11, "rhs": rhs, "h0": h0})


def resolvent_kernel_discrete(gamma: float, grid: TimeGrid) -> np.ndarray:
    """Samples ``r_k`` with ``(1 + g*)^{-1} = 1 - r*`` for the discrete kernel ``g_k = gamma e^{-t_k}``."""
    c = 1.0 + grid.dt * gamma
    return gamma / c * (np.exp(-grid.dt) / c) ** np.arange(grid.n_steps)


def scenario_delay(h: float = 0.1, a=(1.0, 3.0), b=(0.0, 2.0), R: int = 128, T: float = 2.0, dt: float = 2.0 ** -9,
                   nu: float = 4.0, schedule=None, tolerance=DEFAULT_TOL, h0_offset: float = 0.05) -> Scenario:
    """``dt0 a(k x) u + tau_{h_k} b(k x) u = f`` with grid-aligned delays ``h_k -> h``."""
    if h < 0 or h0_offset < 0:
        raise NegativeDelay(f"delays must be non-negative, got h={h}, offset={h0_offset}")
    a_c, b_c = _cell(a, "a"), _cell(b, "b")
    space = SpaceModel.torus_grid(1, R, 1)
    grid0 = TimeGrid(dt, int(round(T / dt)), nu)
    schedule = dyadic_schedule(R // 2) if schedule is None else tuple(schedule)

    def delay(k, grid):
        # grid-aligned delays that reach the (grid-rounded) limit delay exactly for large k
        return (round(h / grid.dt) + int(np.floor(h0_offset / (k * grid.dt)))) * grid.dt

    def solve(k, grid):
        M = PointwiseOp(a_c.on_space(space, k), grid, space)
        N = compose([shift_op(delay(k, grid), grid, space), PointwiseOp(b_c.on_space(space, k), grid, space)])
        rep = solve_neumann(EvoProblem(M, N, _torus_rhs(grid, space)))
        return rep.u, rep.to_dict()

    def reference(grid, L=80):
        model = homogenize_time_independent(a_c, b_c, L=L)
        hh = round(h / grid.dt) * grid.dt

        def term(ell):
            return lambda z: model.M_hom[ell][None] * ((-(1.0 - grid.dt / z) ** (hh / grid.dt)) ** ell)[:, None, None]

        lim = {"A00": [term(ell) for ell in range(L + 1)], "N_hom": np.zeros((0, 0))}
        B, S = assemble_symbol_valued(lim, grid, space, SpaceModel.torus_grid(1, R, 0))
        return S.apply(_torus_rhs(grid, space)), {"limit": B, "solution": S, "model": model}

    return Scenario("delay", {"h": h, "a": _desc(a), "b": _desc(b), "R": R, "T": T}, grid0, space, schedule,
                    tolerance, "closed_form", solve, reference,
                    {"a": a_c, "b": b_c, "rhs": lambda grid: _torus_rhs(grid, space)})


def scenario_fractional(alpha: float = 0.5, beta: float = 0.0, a=(1.0, 3.0), b=0.0, R: int = 128, T: float = 2.0,
                        dt: float = 2.0 ** -9, nu: float = 4.0, schedule=None, tolerance=DEFAULT_TOL,
                        alpha_seq: Callable | None = None, beta_seq: Callable | None = None) -> Scenario:
    """``dt0^alpha a(k x) u + dt0^beta b(k x) u = f`` written as ``dt0 (dt0^{alpha-1} a) u + ...``.

    ``alpha_seq(k)`` / ``beta_seq(k)`` optionally give convergent exponent
    sequences; by default the exponents are fixed.
    """
    if not (0.0 < alpha <= 1.0):
        raise AlphaOutOfRange(f"alpha must lie in ]0, 1], got {alpha}")
    if not (-1.0 <= beta <= 0.0):
        raise AlphaOutOfRange(f"beta must lie in [-1, 0], got {beta}")
    a_c, b_c = _cell(a, "a"), _cell(b, "b")
    space = SpaceModel.torus_grid(1, R, 1)
    grid0 = TimeGrid(dt, int(round(T / dt)), nu)
    schedule = dyadic_schedule(R // 2) if schedule is None else tuple(schedule)
    b_zero = np.allclose(b_c.samples(8), 0)
    aseq = alpha_seq or (lambda k: alpha)
    bseq = beta_seq or (lambda k: beta)

    def solve(k, grid):
        ak, bk = aseq(k), bseq(k)
        M = compose([fractional_power_op(ak - 1.0, grid, space), PointwiseOp(a_c.on_space(space, k), grid, space)])
        N = None if b_zero else compose([fractional_power_op(bk, grid, space),
                                         PointwiseOp(b_c.on_space(space, k), grid, space)])
        rep = solve_neumann(EvoProblem(M, N, _torus_rhs(grid, space)))
        return rep.u, rep.to_dict()

    def reference(grid, L=80):
        model = homogenize_time_independent(a_c, b_c, L=L)

        def term(ell):
            def f(z):
                s = 1.0 / z
                return model.M_hom[ell][None] * (s ** (1.0 - alpha) * (-(s ** (1.0 - alpha + beta))) ** ell)[:, None, None]
            return f

        lim = {"A00": [term(ell) for ell in range(L + 1)], "N_hom": np.zeros((0, 0))}
        B, S = assemble_symbol_valued(lim, grid, space, SpaceModel.torus_grid(1, R, 0))
        return S.apply(_torus_rhs(grid, space)), {"limit": B, "solution": S, "model": model}

    return Scenario("fractional", {"alpha": alpha, "beta": beta, "a": _desc(a), "b": _desc(b), "R": R, "T": T},
                    grid0, space, schedule, tolerance, "closed_form", solve, reference,
                    {"a": a_c, "b": b_c, "rhs": lambda grid: _torus_rhs(grid, space)})


def scenario_higher_order(coeffs=(1.0, 1.0, 1.0), order: int | None = None, R: int = 128, T: float = 4.0,
                          dt: float = 2.0 ** -9, nu: float = 4.0, schedule=None, tolerance=DEFAULT_TOL) -> Scenario:
    """``sum_k a_k dt0^k u = f`` rewritten as ``dt0 a_n u + sum_{k<n} a_k dt0^{1+k-n} u = dt0^{1-n} f``.

    ``coeffs = (a_0, ..., a_n)``; each entry is a number or a two-valued pair
    oscillating in space.  Solved by the Neumann series; the limit comes from
    per-frequency cell averages.
    """
    n = len(coeffs) - 1 if order is None else int(order)
    if n < 1 or len(coeffs) != n + 1:
        raise ConfigInvalid("coeffs must list a_0 .. a_n")
    cells = [_cell(c, f"a{k}") for k, c in enumerate(coeffs)]
    oscillating = any(c.name == "two_valued" for c in cells)
    space = SpaceModel.torus_grid(1, R, 1) if oscillating else SpaceModel.finite_dim(1)
    grid0 = TimeGrid(dt, int(round(T / dt)), nu)
    schedule = (dyadic_schedule(R // 2) if oscillating else (1, 2, 4)) if schedule is None else tuple(schedule)
    if cells[n].coercivity() <= 0:
        raise NotCoercive("leading coefficient is not coercive")

    def coef(c, k, grid):
        return PointwiseOp(c.on_space(space, k) if oscillating else c.samples(2)[:1][None], grid, space)

    def rhs(grid):
        f = _torus_rhs(grid, space) if oscillating else smooth_bump_signal(grid, space)
        I = Integration(grid, space)
        vals = f.values
        for _ in range(n - 1):
            vals = I.apply_array(vals)
        return f.with_values(vals)

    def operators(k, grid):
        I = Integration(grid, space)
        M = coef(cells[n], k, grid)
        parts = []
        for j in range(n):
            ops = [I] * (n - 1 - j) + [coef(cells[j], k, grid)]
            parts.append(compose(ops))
        return M, sum_ops(parts)

    def solve(k, grid):
        M, N = operators(k, grid)
        rep = solve_neumann(EvoProblem(M, N, rhs(grid)))
        return rep.u, rep.to_dict()

    def reference(grid, L=80):
        pts = cells[n].points(2 * max(1, R))
        vals = [c.values_at(pts)[:, 0, 0] for c in cells]

        def moment(ell):
            def f(z):
                Nz = sum(vals[j][None, :] * (z[:, None] ** (n - 1 - j)) for j in range(n))
                an = vals[n][None, :]
                return np.mean((1.0 / an) * (-(Nz / an)) ** ell, axis=1)[:, None, None]
            return f

        lim = {"A00": [moment(ell) for ell in range(L + 1)], "N_hom": np.zeros((0, 0))}
        h1 = SpaceModel.torus_grid(1, R, 0) if oscillating else SpaceModel.finite_dim(0)
        B, S = assemble_symbol_valued(lim, grid, space, h1)
        return S.apply(rhs(grid)), {"limit": B, "solution": S}

    return Scenario("higher_order", {"coeffs": [_desc(c) for c in coeffs], "order": n, "T": T}, grid0, space,
                    schedule, tolerance, "closed_form", solve, reference,
                    {"cells": cells, "rhs": rhs, "operators": operators})


# ---------------------------------------------------------------- differential-algebraic block

def scenario_dae_block(M=1.0, N00=(0.5, 1.5), N01=(0.3, -0.2), N10=(-0.3, 0.2), N11=(1.0, 3.0), R: int = 128,
                       T: float = 2.0, dt: float = 2.0 ** -9, nu: float = 4.0, schedule=None,
                       tolerance=DEFAULT_TOL, L: int = 60) -> Scenario:
    """``dt0 diag(M, 0) u + [[N00, N01], [N10, N11]] u = f`` with periodic scalar blocks."""
    cM, c00, c01, c10, c11 = (_cell(v, n) for v, n in ((M, "M"), (N00, "N00"), (N01, "N01"), (N10, "N10"),
                                                       (N11, "N11")))
    h0 = SpaceModel.torus_grid(1, R, 1)
    h1 = SpaceModel.torus_grid(1, R, 1)
    space = join_spaces(h0, h1)
    grid0 = TimeGrid(dt, int(round(T / dt)), nu)
    schedule = dyadic_schedule(R // 2) if schedule is None else tuple(schedule)

    def rhs(grid):
        f0 = _torus_rhs(grid, h0)
        x = h1.points()[:, 0]
        env = raised_cosine(grid.times, 5 * grid.horizon / 16, 3 * grid.horizon / 16)
        f1 = WeightedSignal(grid, h1, np.outer(env, 0.5 + 0.25 * np.sin(2 * np.pi * x)))
        return f0, f1

    def problem(k, grid):
        op = lambda c, si, so: PointwiseOp(c.on_space(h0, k), grid, si, so)
        f0, f1 = rhs(grid)
        return BlockEvoProblem(op(cM, h0, h0), op(c00, h0, h0), op(c01, h1, h0), op(c10, h0, h1),
                               op(c11, h1, h1), f0, f1)

    def solve(k, grid):
        rep = solve_block(problem(k, grid))
        return join_signals(rep.u0, rep.u1), rep.to_dict()

    def reference(grid):
        lim = block_cell_averages(cM, c00, c01, c10, c11, L=L)
        B, S = assemble_block(lim, grid, h0, h1)
        f0, f1 = rhs(grid)
        return S.apply(join_signals(f0, f1)), {"limit": B, "solution": S, "averages": lim}

    return Scenario("dae_block", {"M": _desc(M), "N00": _desc(N00), "N01": _desc(N01), "N10": _desc(N10),
                                  "N11": _desc(N11), "R": R, "T": T}, grid0, space, schedule, tolerance,
                    "closed_form", solve, reference, {"cells": (cM, c00, c01, c10, c11), "problem": problem,
                                                      "h0": h0, "h1": h1, "rhs": rhs})


# ---------------------------------------------------------------- chiral Maxwell surrogate

def curl_symbols(R, spacing: float) -> np.ndarray:
    """Per-wavevector ``3x3`` Hermitian symbols of the central-difference curl on a periodic grid.

    Returns an array of shape ``(R1, R2, R3, 3, 3)``; the symbol is
    ``i [s]_x`` with ``s_j = sin(2 pi kappa_j / R_j) / spacing``.
    """
    R1, R2, R3 = R
    s = [np.sin(2 * np.pi * np.arange(r) / r) / spacing for r in R]
    S1, S2, S3 = np.meshgrid(*s, indexing="ij")
    out = np.zeros((R1, R2, R3, 3, 3), dtype=complex)
    out[..., 0, 1], out[..., 0, 2] = -S3, S2
    out[..., 1, 0], out[..., 1, 2] = S3, -S1
    out[..., 2, 0], out[..., 2, 1] = -S2, S1
    return 1j * out


class FourierBlockOp(SpatialOp):
    """Constant spatial operator diagonalized by the 3-d DFT: per-wavevector matrices on the components."""

    def __init__(self, symbols, grid, space, name="fourier"):
        self.symbols = symbols
        R = space.R
        m = space.m
        bound = float(np.max(np.linalg.norm(symbols.reshape(-1, m, m), ord=2, axis=(-2, -1))))

        def apply(x, mats):
            n = x.shape[0]
            X = sfft.fftn(x.reshape(n, *R, m), axes=(1, 2, 3))
            Y = np.einsum("...ab,n...b->n...a", mats, X)
            return sfft.ifftn(Y, axes=(1, 2, 3)).reshape(n, -1)

        herm = np.conj(np.swapaxes(symbols, -1, -2))
        super().__init__(lambda x: apply(x, symbols), lambda y: apply(y, herm), bound, grid, space, name=name)


def scenario_dbf_surrogate(q: int = 6, eta: float = 0.1, eps_cell=(1.0, 2.0), mu_cell=1.0, seed: int = 0,
                           refine: int = 16, spacing: float = 0.0005, T: float = 0.5, dt: float = 2.0 ** -8,
                           nu: float = 32.0, schedule=None, tolerance=1e-3) -> Scenario:
    """Chiral Maxwell surrogate ``dt0 diag(eps_k, mu_k) + [[0, -K], [K, 0]]`` with ``K = C (1 + eta C)^{-1}``.

    ``C`` is the central-difference curl on a periodic ``(q*refine, q, q)``
    grid (the laminate axis is refined so that the oscillation schedule
    stays resolved).  The small default ``spacing`` puts every nonzero symbol
    eigenvalue above ``2/eta``, where ``K`` saturates near ``1/eta`` and the
    coupling stays bounded uniformly in the grid.  ``eps_cell``/``mu_cell`` oscillate along the first
    axis.  The reference is the empirical weak-operator limit.
    """
    R = (q * refine, q, q)
    space = SpaceModel.torus_grid(3, R, 6)
    field_space = SpaceModel.torus_grid(3, R, 3)
    grid0 = TimeGrid(dt, int(round(T / dt)), nu)
    schedule = dyadic_schedule(max(refine // 2, 1)) if schedule is None else tuple(schedule)
    C = curl_symbols(R, spacing)
    Cf = C.reshape(-1, 3, 3)
    if np.max(np.abs(Cf - np.conj(np.swapaxes(Cf, -1, -2)))) > 1e-12 * np.max(np.abs(Cf)):
        raise ConfigInvalid("surrogate curl symbol is not Hermitian")
    lam = np.linalg.eigvalsh(Cf)
    if eta != 0 and np.min(np.abs(1.0 + eta * lam)) < 1e-8:
        raise EtaOnSpectrum(f"-1/eta = {-1 / eta:.4g} lies on the spectrum of the surrogate curl")
    K = C @ np.linalg.inv(np.eye(3) + eta * C)
    Z = np.zeros_like(K)
    Nsym = np.concatenate([np.concatenate([Z, -K], axis=-1), np.concatenate([K, Z], axis=-1)], axis=-2)
    pre = np.linalg.inv(np.eye(3) + eta * C)
    eps_c, mu_c = _cell(eps_cell, "eps"), _cell(mu_cell, "mu")
    rng = np.random.default_rng(seed)
    pol = rng.standard_normal(3)
    pol /= np.linalg.norm(pol)

    def rhs(grid):
        x = field_space.points()
        prof = np.cos(2 * np.pi * x[:, 1]) + 0.5 * np.sin(2 * np.pi * x[:, 2]) + 0.25
        J = np.outer(prof, pol)                                     # (P, 3)
        Jh = sfft.fftn(J.reshape(*R, 3), axes=(0, 1, 2))
        Jp = sfft.ifftn(np.einsum("...ab,...b->...a", pre, Jh), axes=(0, 1, 2)).reshape(-1, 3)
        full = np.concatenate([Jp, np.zeros_like(Jp)], axis=1).ravel()
        env = raised_cosine(grid.times, 5 * grid.horizon / 16, 3 * grid.horizon / 16)
        return WeightedSignal(grid, space, np.outer(env, full))

    def coefficient(k):
        x1 = space.points()[:, :1] * k
        e = eps_c.values_at(x1)[:, 0, 0]
        mu = mu_c.values_at(x1)[:, 0, 0]
        diag = np.concatenate([np.repeat(e[:, None], 3, 1), np.repeat(mu[:, None], 3, 1)], axis=1)
        return diag[None, :, :, None] * np.eye(6)[None, None]

    def operators(k, grid):
        return PointwiseOp(coefficient(k), grid, space), FourierBlockOp(Nsym, grid, space, name="dbf_curl")

    def solve(k, grid):
        M, N = operators(k, grid)
        rep = solve_neumann(EvoProblem(M, N, rhs(grid)))
        return rep.u, rep.to_dict()

    def reference(grid):
        constant = np.allclose(eps_c.samples(8), eps_c.samples(8)[0]) and np.allclose(mu_c.samples(8), mu_c.samples(8)[0])
        if not constant:
            return None, {}
        return solve(1, grid)[0], {"note": "fixed-coefficient problem"}

    return Scenario("dbf", {"q": q, "eta": eta, "eps": _desc(eps_cell), "mu": _desc(mu_cell), "refine": refine,
                            "seed": seed, "T": T}, grid0, space, schedule, tolerance, "oracle", solve, reference,
                    {"operators": operators, "rhs": rhs, "curl": C, "K": K})


# ---------------------------------------------------------------- registry

REGISTRY = {
    "periodic_ode": scenario_periodic_ode,
    "tartar": scenario_tartar_memory,
    "time_periodic": scenario_time_periodic,
    "convolution": scenario_convolution,
    "delay": scenario_delay,
    "fractional": scenario_fractional,
    "higher_order": scenario_higher_order,
    "dae_block": scenario_dae_block,
    "dbf": scenario_dbf_surrogate,
}


def list_scenarios() -> list:
    return sorted(REGISTRY)


def make_scenario(name: str, params: dict | None = None) -> Scenario:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ScenarioUnknown(f"unknown scenario {name!r}; available: {', '.join(list_scenarios())}") from None
    params = dict(params or {})
    try:
        return factory(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in params.items()})
    except TypeError as exc:
        raise ConfigInvalid(f"bad parameters for scenario {name!r}: {exc}") from exc
