"""Solvers for ``dt0(M u) + N u = f`` and its differential-algebraic block form.

Two independent routes are provided:

* :func:`solve_neumann` sums the series
  ``u = sum_l (-M^{-1} dt0^{-1} N)^l M^{-1} dt0^{-1} f`` with a certified
  geometric tail bound;
* :func:`solve_stepping` runs implicit Euler on ``v = M u``.

Both discretize the same grid equation (backward difference is the exact
inverse of the rectangle integrator), so on their common domain they agree
up to the series truncation and round-off.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (GridMismatch, NotCoercive, NotContractive, SingularAlgebraicBlock,
                     SingularStep, UnsupportedKind)
from .operators import (Convolution, EvolutionaryOp, Integration, PointwiseOp, Scale, Sum,
                        block_add, coercivity_estimate, coercivity_probe, compose, invert,
                        pointwise_blocks, scale, sum_ops)
from .weighted_space import WeightedSignal, check_compatible

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EvoProblem:
    """Problem ``dt0(M u) + N u = f``.

    ``M`` may be ``None`` for a pure (Volterra-type) equation ``N u = f``,
    which only :func:`solve_stepping` accepts.  ``N`` may be ``None`` (zero).
    """

    M: EvolutionaryOp | None
    N: EvolutionaryOp | None
    f: WeightedSignal

    def __post_init__(self):
        for op in (self.M, self.N):
            if op is None:
                continue
            if op.grid != self.f.grid or op.space_in != self.f.space or op.space_out != self.f.space:
                raise GridMismatch("operator does not act on the space of the right-hand side")

    @property
    def grid(self):
        return self.f.grid

    @property
    def nu(self) -> float:
        return self.f.grid.nu


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Result of a series solve.

    ``tail_bound = q**(L+1)/(1-q) * ||first term||`` bounds the weighted
    norm of the neglected terms, with ``q = contraction_q`` and
    ``L = terms_used - 1``.
    """

    u: WeightedSignal
    terms_used: int
    tail_bound: float
    contraction_q: float
    first_term_norm: float = 0.0
    converged: bool = True
    term_norms: tuple = field(default=())

    def to_dict(self) -> dict:
        return {"terms_used": self.terms_used, "tail_bound": self.tail_bound,
                "contraction_q": self.contraction_q, "first_term_norm": self.first_term_norm,
                "converged": self.converged}


def invert_pointwise(op: EvolutionaryOp) -> EvolutionaryOp:
    """Node-wise inverse of a coercive pointwise operator.

    For coercivity constant ``c`` the result has norm at most ``1/c``
    and the Hermitian part of the inverse is at least ``c/||op||^2``.
    """
    if not op.is_pointwise:
        raise UnsupportedKind(f"invert_pointwise needs a pointwise kind, got {op.kind}")
    c = coercivity_estimate(op)
    if not c > 0:
        raise NotCoercive(f"pointwise operator is not coercive (c_est={c:.3g})")
    return invert(op)


def contraction_factor(Minv: EvolutionaryOp, N: EvolutionaryOp) -> float:
    """Certified bound of ``||M^{-1} dt0^{-1} N||``.

    The smaller of the product of the three factor bounds and the bound of
    the composite (sharper for translation-invariant operators).
    """
    I = Integration(N.grid, N.space_in)
    product = Minv.norm_bound() * I.norm_bound() * N.norm_bound()
    composite = compose([Minv, I, N]).norm_bound()
    return float(min(product, composite))


def solve_neumann(p: EvoProblem, max_terms: int = 500, tol: float = 1e-10) -> SolveReport:
    """Neumann-series solve with a geometric truncation criterion.

    Terms ``t_0 = M^{-1} dt0^{-1} f`` and ``t_{l+1} = -M^{-1} dt0^{-1} N t_l``
    are summed until ``q**(L+1)/(1-q) <= tol`` (the tail bound relative to
    ``||t_0||``).

    Raises
    ------
    NotContractive
        If the certified contraction factor ``q`` is not below one; the
        caller should increase ``nu``.
    """
    if p.M is None:
        raise UnsupportedKind("solve_neumann needs a differential part M")
    grid, space = p.grid, p.f.space
    Minv = invert(p.M)
    I = Integration(grid, space)
    t = Minv.apply_array(I.apply_array(p.f.values))
    t0 = WeightedSignal(grid, space, t).norm()
    if p.N is None:
        return SolveReport(WeightedSignal(grid, space, t), 1, 0.0, 0.0, t0, True, (t0,))
    q = contraction_factor(Minv, p.N)
    if not q < 1.0:
        raise NotContractive(q)
    step = compose([scale(-1.0, Minv), I, p.N])
    u = t.copy()
    norms = [t0]
    L = 0
    converged = True
    while q ** (L + 1) / (1.0 - q) > tol:
        if L + 1 >= max_terms:
            converged = False
            break
        t = step.apply_array(t)
        u += t
        L += 1
        norms.append(WeightedSignal(grid, space, t).norm())
        if norms[-1] == 0.0:
            break
    tail = q ** (L + 1) / (1.0 - q) * t0
    return SolveReport(WeightedSignal(grid, space, u), L + 1, float(tail), float(q), float(t0), converged,
                       tuple(norms))


def _split_stepping(N):
    """Split ``N`` into a pointwise block field and a summed convolution kernel."""
    pointwise, kernels = [], []

    def visit(op, alpha):
        if op is None:
            return
        if isinstance(op, Scale):
            visit(op.op, alpha * op.alpha)
        elif isinstance(op, Sum):
            for o in op.ops:
                visit(o, alpha)
        elif op.is_pointwise:
            pointwise.append(alpha * pointwise_blocks(op))
        elif isinstance(op, Convolution):
            kernels.append(alpha * op.kernel)
        else:
            raise UnsupportedKind(f"solve_stepping cannot split operator kind {op.kind}")

    visit(N, 1.0)
    field_ = None
    for b in pointwise:
        field_ = b if field_ is None else block_add(field_, b)
    kernel = None
    for k in kernels:
        if kernel is None:
            kernel = k
        else:
            K = max(kernel.shape[0], k.shape[0])
            pad = lambda a: np.concatenate([a, np.zeros((K - a.shape[0],) + a.shape[1:], dtype=a.dtype)])
            kernel = block_add(pad(kernel), pad(k))
    return field_, kernel


def _full(a, n_steps, P, m):
    """Broadcast a block field to shape ``(n_steps or 1, P, m, m)``."""
    if a is None:
        return None
    if a.shape[-2:] == (1, 1) and m != 1:
        a = a * np.eye(m)
    return np.broadcast_to(a, (a.shape[0], P, m, m))


def solve_stepping(p: EvoProblem, cond_limit: float = 1e12) -> WeightedSignal:
    """Implicit Euler oracle for ``dt0(M u) + N u = f``.

    Each step solves ``(M_i + dt N_i + dt^2 g_0) u_i = M_{i-1} u_{i-1} +
    dt (f_i - dt sum_{j<i} g_{i-j} u_j)`` pointwise, where ``N_i`` is the
    pointwise part of ``N`` and ``g`` its convolution kernel.  With
    ``M = None`` the equation ``N u = f`` is solved by the same recursion.
    """
    grid, space = p.grid, p.f.space
    if p.M is not None and not p.M.is_pointwise:
        raise UnsupportedKind(f"solve_stepping needs a pointwise M, got {p.M.kind}")
    n, P, m, dt = grid.n_steps, space.n_points, space.m, grid.dt
    Mb = _full(pointwise_blocks(p.M), n, P, m) if p.M is not None else None
    Nb, kern = _split_stepping(p.N)
    Nb = _full(Nb, n, P, m)
    kern = _full(kern, n, P, m)
    f = p.f.blocks
    zero = np.zeros((1, P, m, m), dtype=complex)

    def step_matrix(i):
        A = zero[0].copy()
        if Mb is not None:
            A = A + Mb[min(i, Mb.shape[0] - 1)]
        scale_n = dt if Mb is not None else 1.0
        if Nb is not None:
            A = A + scale_n * Nb[min(i, Nb.shape[0] - 1)]
        if kern is not None:
            A = A + scale_n * dt * kern[0]
        return A

    const = (Mb is None or Mb.shape[0] == 1) and (Nb is None or Nb.shape[0] == 1)
    inv_cache = None
    u = np.zeros((n, P, m), dtype=complex)
    for i in range(n):
        if inv_cache is None or not const:
            A = step_matrix(i)
            with np.errstate(divide="ignore", invalid="ignore"):
                cond = np.linalg.cond(A) if np.all(np.isfinite(A)) else np.inf
            if not np.all(np.isfinite(cond)) or np.max(cond) > cond_limit:
                raise SingularStep(f"step matrix singular at index {i} (cond={np.max(cond):.3g})")
            inv_cache = np.linalg.inv(A)
        if Mb is not None:
            rhs = dt * f[i]
            if i > 0:
                rhs = rhs + np.matmul(Mb[min(i - 1, Mb.shape[0] - 1)], u[i - 1][..., None])[..., 0]
            lag_scale = dt * dt
        else:
            rhs = f[i].copy()
            lag_scale = dt
        if kern is not None and i > 0:
            K = min(i, kern.shape[0] - 1)
            if K > 0:
                lags = kern[1:K + 1]                       # g_1 .. g_K
                hist = u[i - 1:i - 1 - K:-1] if i - 1 - K >= 0 else u[i - 1::-1][:K]
                rhs = rhs - lag_scale * np.einsum("kpab,kpb->pa", np.broadcast_to(lags, (K, P, m, m)), hist)
        u[i] = np.matmul(inv_cache, rhs[..., None])[..., 0]
    return WeightedSignal(grid, space, u.reshape(n, -1))


def residual(p: EvoProblem, u: WeightedSignal) -> float:
    """Relative weighted residual ``||dt0(M u) + N u - f|| / ||f||`` (M given)."""
    from .operators import Derivative

    D = Derivative(p.grid, p.f.space)
    r = D.apply_array(p.M.apply_array(u.values))
    if p.N is not None:
        r = r + p.N.apply_array(u.values)
    res = WeightedSignal(p.grid, p.f.space, r - p.f.values)
    fn = p.f.norm()
    return res.norm() / fn if fn > 0 else res.norm()


# ---------------------------------------------------------------- block systems

@dataclass(frozen=True, eq=False)
class BlockEvoProblem:
    """Differential-algebraic system

    ``dt0 diag(M, 0) (u0, u1) + [[N00, N01], [N10, N11]] (u0, u1) = (f0, f1)``

    on ``H0 x H1``.  Off-diagonal blocks may be ``None`` (zero).
    """

    M: EvolutionaryOp | None
    N00: EvolutionaryOp | None
    N01: EvolutionaryOp | None
    N10: EvolutionaryOp | None
    N11: EvolutionaryOp
    f0: WeightedSignal
    f1: WeightedSignal

    def __post_init__(self):
        h0, h1 = self.f0.space, self.f1.space
        if self.f0.grid != self.f1.grid:
            raise GridMismatch("block right-hand sides use different grids")
        checks = [(self.M, h0, h0), (self.N00, h0, h0), (self.N01, h1, h0), (self.N10, h0, h1),
                  (self.N11, h1, h1)]
        for op, sin, sout in checks:
            if op is not None and (op.space_in != sin or op.space_out != sout or op.grid != self.f0.grid):
                raise GridMismatch("block operator does not match the block spaces")

    @property
    def grid(self):
        return self.f0.grid


@dataclass(frozen=True, eq=False)
class BlockSolveReport:
    u0: WeightedSignal
    u1: WeightedSignal
    reduced: SolveReport | None
    schur: EvolutionaryOp | None = None

    @property
    def terms_used(self):
        return self.reduced.terms_used if self.reduced else 0

    @property
    def tail_bound(self):
        return self.reduced.tail_bound if self.reduced else 0.0

    @property
    def contraction_q(self):
        return self.reduced.contraction_q if self.reduced else 0.0

    def to_dict(self):
        d = self.reduced.to_dict() if self.reduced else {"terms_used": 0, "tail_bound": 0.0, "contraction_q": 0.0}
        d["blocks"] = 2
        return d


def _algebraic_coercivity(N11) -> float:
    try:
        return coercivity_estimate(N11)
    except UnsupportedKind:
        return coercivity_probe(N11)


def solve_block(p: BlockEvoProblem, max_terms: int = 500, tol: float = 1e-10) -> BlockSolveReport:
    """Schur-complement solve of the block system.

    The algebraic block is eliminated with ``N = N00 - N01 N11^{-1} N10``;
    the reduced problem ``dt0(M u0) + N u0 = f0 - N01 N11^{-1} f1`` is solved
    by :func:`solve_neumann` and ``u1 = N11^{-1}(f1 - N10 u0)``.
    """
    c11 = _algebraic_coercivity(p.N11)
    if not c11 > 0:
        raise SingularAlgebraicBlock(f"N11 is not coercive (c={c11:.3g})")
    N11inv = invert(p.N11)
    grid = p.grid
    h0 = p.f0.space
    f1 = p.f1.values
    if h0.n_dof == 0:
        u1 = N11inv.apply_array(f1)
        return BlockSolveReport(p.f0, WeightedSignal(grid, p.f1.space, u1), None, None)
    parts = [] if p.N00 is None else [p.N00]
    if p.N01 is not None and p.N10 is not None:
        parts.append(scale(-1.0, compose([p.N01, N11inv, p.N10])))
    schur = sum_ops(parts) if parts else None
    g0 = p.f0.values
    if p.N01 is not None:
        g0 = g0 - p.N01.apply_array(N11inv.apply_array(f1))
    reduced = solve_neumann(EvoProblem(p.M, schur, WeightedSignal(grid, h0, g0)), max_terms, tol)
    rhs1 = f1 if p.N10 is None else f1 - p.N10.apply_array(reduced.u.values)
    u1 = N11inv.apply_array(rhs1)
    return BlockSolveReport(reduced.u, WeightedSignal(grid, p.f1.space, u1), reduced, schur)


def escalate_nu(build, nu0: float, factor: float = 2.0, max_retries: int = 4):
    """Call ``build(nu)`` with ``nu = nu0 * factor**r`` until it stops raising NotContractive.

    Returns ``(result, nu)``; re-raises the last :class:`NotContractive`
    after ``max_retries`` escalations.
    """
    nu = float(nu0)
    for attempt in range(int(max_retries) + 1):
        try:
            return build(nu), nu
        except NotContractive as exc:
            logger.info("not contractive at nu=%g (q=%.3g); escalating", nu, exc.q)
            if attempt == max_retries:
                raise
            nu *= factor
    raise AssertionError("unreachable")
