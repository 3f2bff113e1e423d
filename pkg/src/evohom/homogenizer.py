"""Homogenized limits of oscillating evolutionary equations.

Three ingredients:

* periodic cell functions and their exact cell averages;
* a finite-probe estimate of weak-operator-topology limits along an
  oscillation schedule (pairing tables with Aitken extrapolation);
* assembly of the limit operators from averaged coefficients.  For a
  family ``dt0 a_n + b_n`` with time-independent coefficients the limit of
  the solution operators is

  .. math::

      S = \\sum_{l\\ge 0} M_l (-\\partial_0^{-1})^l \\partial_0^{-1},
      \\qquad M_l = \\lim a_n^{-1} (b_n a_n^{-1})^l ,

  and the limit operator is ``B = S^{-1} = dt0 sum_j X^j M_0^{-1}`` with
  ``X = -sum_{l>=1} M_0^{-1} M_l (-dt0^{-1})^l``.  Whenever the
  ``M_l`` are not the powers ``M_0 (M_1 M_0^{-1}... )`` of a memoryless
  equation, ``B`` contains a convolution tail (memory effect).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (ConfigInvalid, GridMismatch, NotCoercive, NotCoerciveOnCell, NotContractive,
                     NotContractiveAtFrequency, NotTranslationInvariant, ScheduleTooShort,
                     UnsupportedKind)
from .operators import (Derivative, EvolutionaryOp, HInfSymbol, Integration, PointwiseOp,
                        as_blocks, block_inv, block_matmul, block_norms, compose, constant_op,
                        fft_length, hermitian_min_eig, identity, laplace_variable, scale,
                        sum_ops, symbol_samples)
from .weighted_space import SpaceModel, TestDictionary, TimeGrid, WeightedSignal, weak_pairings

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- cell functions

@dataclass(frozen=True, eq=False)
class CellFunction:
    """``[0,1)^d``-periodic matrix-valued coefficient.

    Parameters
    ----------
    d, m : int
        Cell dimension and matrix size.
    eval : callable
        Maps points ``y`` of shape ``(Q, d)`` in ``[0,1)^d`` to values of shape
        ``(Q,)`` (scalar) or ``(Q, m, m)``.
    R : int
        Midpoint quadrature points per dimension.  Piecewise-constant cells on
        dyadic sub-cells are integrated exactly when ``R`` is a multiple of the
        dyadic resolution.
    """

    d: int
    m: int
    eval: Callable
    R: int = 1024
    name: str = "cell"

    def points(self, R: int | None = None) -> np.ndarray:
        R = self.R if R is None else int(R)
        axes = [(np.arange(R) + 0.5) / R] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def values_at(self, y) -> np.ndarray:
        """Values at cell points ``y`` as blocks of shape ``(Q, m, m)`` (or ``(Q, 1, 1)`` for scalars)."""
        y = np.mod(np.asarray(y, dtype=float).reshape(-1, self.d), 1.0)
        v = np.asarray(self.eval(y), dtype=complex)
        if v.ndim == 1:
            return v.reshape(-1, 1, 1)
        return v.reshape(-1, v.shape[-2], v.shape[-1])

    def samples(self, R: int | None = None) -> np.ndarray:
        return self.values_at(self.points(R))

    @property
    def is_scalar(self) -> bool:
        return self.samples(2).shape[-1] == 1

    def sup_norm(self) -> float:
        return float(np.max(block_norms(self.samples())))

    def coercivity(self) -> float:
        return float(np.min(hermitian_min_eig(self.samples())))

    def mean(self) -> np.ndarray:
        return np.mean(self.samples(), axis=0)

    def on_space(self, space: SpaceModel, k: int = 1) -> np.ndarray:
        """Block field ``a(k x)`` sampled at the points of a torus grid, shape ``(1, P, m, m)``."""
        if space.kind != "torus_grid" or space.d < self.d:
            raise GridMismatch("cell function needs a torus grid of matching dimension")
        y = k * space.points()[:, : self.d]
        return self.values_at(y)[None]

    def in_time(self, grid: TimeGrid, n: int = 1) -> np.ndarray:
        """Block field ``a(n t)`` on the time grid (1-d cells), shape ``(N, 1, m, m)``."""
        if self.d != 1:
            raise GridMismatch("time oscillation needs a 1-d cell")
        return self.values_at(n * grid.times[:, None])[:, None]

    # constructors
    @classmethod
    def constant(cls, value, d: int = 1, R: int = 2) -> "CellFunction":
        v = np.asarray(value, dtype=complex)
        m = 1 if v.ndim == 0 else v.shape[-1]

        def ev(y):
            if v.ndim == 0:
                return np.full(len(y), v)
            return np.broadcast_to(v, (len(y),) + v.shape)

        return cls(d, m, ev, R, name="constant")

    @classmethod
    def two_valued(cls, v1, v2, d: int = 1, axis: int = 0, R: int = 1024) -> "CellFunction":
        """Value ``v1`` on ``y[axis] < 1/2`` and ``v2`` elsewhere."""
        a1, a2 = np.asarray(v1, dtype=complex), np.asarray(v2, dtype=complex)
        m = 1 if a1.ndim == 0 else a1.shape[-1]

        def ev(y):
            mask = y[:, axis] < 0.5
            if a1.ndim == 0:
                return np.where(mask, a1, a2)
            return np.where(mask[:, None, None], a1, a2)

        return cls(d, m, ev, R, name="two_valued")


def _pointwise_inv(samples, name="a"):
    c = float(np.min(hermitian_min_eig(samples)))
    if not c > 0:
        raise NotCoerciveOnCell(f"{name} is not coercive on the cell (min Hermitian part {c:.3g})")
    return block_inv(samples[:, None])[:, 0]


def cell_average_product(a: CellFunction, b: CellFunction | None, ell: int, R: int | None = None) -> np.ndarray:
    """Cell average of ``a^{-1} (b a^{-1})^ell`` by tensor midpoint quadrature.

    Returns an ``(m, m)`` matrix (``(1, 1)`` for scalar cells).
    """
    R = a.R if R is None else R
    pts = a.points(R)
    ainv = _pointwise_inv(a.values_at(pts))
    prod = ainv
    if ell > 0:
        bv = np.zeros_like(ainv) if b is None else b.values_at(pts)
        ba = block_matmul(bv[:, None], ainv[:, None])[:, 0]
        for _ in range(int(ell)):
            prod = block_matmul(prod[:, None], ba[:, None])[:, 0]
    return np.mean(prod, axis=0)


def cell_moments(a: CellFunction, b: CellFunction | None, L: int, R: int | None = None) -> list:
    """``[cell_average_product(a, b, l) for l in 0..L]`` computed in one sweep."""
    R = a.R if R is None else R
    pts = a.points(R)
    ainv = _pointwise_inv(a.values_at(pts))
    bv = np.zeros_like(ainv) if b is None else b.values_at(pts)
    ba = block_matmul(bv[:, None], ainv[:, None])[:, 0]
    out, prod = [], ainv
    for ell in range(int(L) + 1):
        out.append(np.mean(prod, axis=0))
        prod = block_matmul(prod[:, None], ba[:, None])[:, 0]
    return out


# ---------------------------------------------------------------- sequences and WOT

@dataclass(frozen=True, eq=False)
class OperatorSequence:
    """Family ``n -> Op_n`` sampled along an oscillation schedule."""

    generator: Callable
    schedule: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        sched = tuple(int(k) for k in self.schedule)
        if any(b <= a for a, b in zip(sched[:-1], sched[1:])):
            raise ConfigInvalid("schedule must be strictly increasing")
        object.__setattr__(self, "schedule", sched)

    def __call__(self, n):
        return self.generator(n)


@dataclass(frozen=True, eq=False)
class WotEstimate:
    """Pairing table along a schedule and its extrapolated limit.

    Attributes
    ----------
    pairing_table : ndarray, shape (len(schedule), n_pairs)
    pairs : list of (i, j)
        Dictionary index pairs: column ``c`` holds ``<phi_i, Op_n phi_j>``.
    extrapolated : ndarray, shape (n_pairs,)
        Aitken limit of each Cauchy column; NaN for non-Cauchy columns.
    cauchy : ndarray of bool
    convergence_rate : float
        Largest ratio of successive increments over the last three points.
    final_increment : float
        Largest ``|p_K - p_{K-1}|``.
    """

    schedule: tuple
    pairs: list
    pairing_table: np.ndarray
    extrapolated: np.ndarray
    cauchy: np.ndarray
    convergence_rate: float
    final_increment: float
    converged: bool
    rate_flag: bool

    @property
    def matrix(self) -> np.ndarray:
        """Extrapolated pairings arranged as a matrix (NaN where no pair was probed)."""
        n = 1 + max(max(p) for p in self.pairs)
        out = np.full((n, n), np.nan, dtype=complex)
        for c, (i, j) in enumerate(self.pairs):
            out[i, j] = self.extrapolated[c]
        return out

    def rows(self):
        """Rows ``(n, pair_id, re, im)`` of the pairing table."""
        for s, n in enumerate(self.schedule):
            for c in range(len(self.pairs)):
                v = self.pairing_table[s, c]
                yield n, c, float(v.real), float(v.imag)

    def to_dict(self):
        return {"schedule": list(self.schedule), "pairs": [list(p) for p in self.pairs],
                "extrapolated": [[float(v.real), float(v.imag)] for v in self.extrapolated],
                "cauchy": [bool(c) for c in self.cauchy], "convergence_rate": self.convergence_rate,
                "final_increment": self.final_increment, "converged": self.converged,
                "rate_flag": self.rate_flag}


def extrapolate_columns(table: np.ndarray, floor: float = 1e-12, slack: float = 1.05):
    """Aitken extrapolation on the last three rows of a pairing table.

    A column is Cauchy when its last increment is below ``floor`` (scaled by
    the column magnitude) or when the increments contract
    (``|d_K| <= slack*|d_{K-1}|`` with ratio below one).  Returns
    ``(limits, cauchy, rate, final_increment)``.
    """
    table = np.asarray(table)
    if table.shape[0] < 3:
        raise ScheduleTooShort("at least three schedule points are needed")
    p1, p2, p3 = table[-3], table[-2], table[-1]
    d2, d3 = p2 - p1, p3 - p2
    scale_ = np.maximum(np.abs(table).max(axis=0), 1.0)
    tiny = np.abs(d3) <= floor * scale_
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(np.abs(d2) > 0, d3 / d2, 0.0)
    contracting = (np.abs(r) < 1.0) & (np.abs(d3) <= slack * np.abs(d2))
    cauchy = tiny | contracting
    limits = np.where(tiny, p3, p3 + d3 * r / (1.0 - r))
    limits = np.where(cauchy, limits, np.nan + 0j)
    active = ~tiny
    rate = float(np.max(np.abs(r[active]))) if np.any(active) else 0.0
    return limits, cauchy, rate, float(np.max(np.abs(d3)))


def wot_limit_estimate(seq: OperatorSequence, dictionary: TestDictionary, pairs: str | Sequence = "all",
                       floor: float = 1e-12) -> WotEstimate:
    """Finite-probe estimate of the weak-operator limit of ``seq``.

    For every scheduled ``n`` and every dictionary pair ``(i, j)`` computes
    ``<phi_i, Op_n phi_j>``, then extrapolates the last three points.

    Parameters
    ----------
    pairs : "all", "diag" or list of (i, j)
    """
    if len(seq.schedule) < 3:
        raise ScheduleTooShort(f"schedule {seq.schedule} has fewer than three points")
    size = dictionary.size
    if isinstance(pairs, str):
        if pairs == "all":
            pairs = [(i, j) for i in range(size) for j in range(size)]
        elif pairs == "diag":
            pairs = [(i, i) for i in range(size)]
        else:
            raise ConfigInvalid(f"unknown pair selection {pairs!r}")
    pairs = [tuple(p) for p in pairs]
    cols = sorted({j for _, j in pairs})
    table = np.zeros((len(seq.schedule), len(pairs)), dtype=complex)
    for s, n in enumerate(seq.schedule):
        op = seq(n)
        images = {j: weak_pairings(op.apply(dictionary[j]), dictionary) for j in cols}
        for c, (i, j) in enumerate(pairs):
            table[s, c] = images[j][i]
    limits, cauchy, rate, inc = extrapolate_columns(table, floor)
    converged = bool(np.all(cauchy))
    if not converged:
        logger.warning("%d of %d pairing columns are not Cauchy", int(np.sum(~cauchy)), len(pairs))
    return WotEstimate(seq.schedule, pairs, table, limits, cauchy, rate, inc, converged, rate < 1.0)


# ---------------------------------------------------------------- models and assembly

@dataclass(frozen=True, eq=False)
class HomogenizedModel:
    """Averaged coefficient family of a limit equation.

    ``M_hom[l]`` is the ``l``-th averaged coefficient (an ``(m, m)`` matrix or
    block array).  ``growth = (C, rho)`` certifies ``||M_hom[l]|| <= C rho**l``
    for every ``l`` (also beyond the stored terms); it drives the tail bounds.
    """

    M_hom: tuple
    kind: str
    nu: float | None = None
    J: int | None = None
    L: int | None = None
    growth: tuple | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        def enc(a):
            a = np.asarray(a, dtype=complex)
            return {"re": a.real.tolist(), "im": a.imag.tolist()}

        out = {"kind": self.kind, "nu": self.nu, "J": self.J, "L": self.L,
               "growth": list(self.growth) if self.growth else None,
               "M_hom": [enc(m) for m in self.M_hom]}
        for k, v in self.extra.items():
            out[k] = enc(v) if isinstance(v, (np.ndarray, complex, float, int)) else v
        return out


def homogenize_time_independent(a: CellFunction, b: CellFunction | None, L: int = 40, R: int | None = None,
                                nu: float | None = None) -> HomogenizedModel:
    """Averaged coefficients ``M_l = <a^{-1} (b a^{-1})^l>`` for ``dt0 a(k.) + b(k.)``."""
    Ms = cell_moments(a, b, L, R)
    ainv = a.samples(R)
    C = float(np.max(block_norms(_pointwise_inv(ainv))))
    bs = 0.0 if b is None else b.sup_norm()
    return HomogenizedModel(tuple(Ms), "time_independent", nu=nu, L=L, growth=(C, C * bs))


class LimitOperator(EvolutionaryOp):
    """Assembled limit operator with its solution operator and tail bounds.

    ``apply`` evaluates the limit operator ``B``; :meth:`solve` evaluates
    the limit solution operator ``S``, the weak limit of the inverses.
    """

    kind = "Limit"

    def __init__(self, op, solution, model, tails, memory=None, zeroth=None):
        super().__init__(op.grid, op.space_in, op.space_out)
        self.op = op
        self.solution = solution
        self.model = model
        self.tails = dict(tails)
        self.memory = memory
        self.zeroth = zeroth
        self.translation_invariant = op.translation_invariant

    def _apply(self, x):
        return self.op._apply(x)

    def _adjoint(self, y):
        return self.op._adjoint(y)

    def norm_bound(self):
        raise NotImplementedError("limit operators contain dt0 and are unbounded")

    def solve(self, f: WeightedSignal) -> WeightedSignal:
        return self.solution.apply(f)

    def describe(self):
        return {"kind": "Limit", "model": self.model.kind, "tails": self.tails}


def _growth(M_hom, growth):
    if growth is not None:
        return float(growth[0]), float(growth[1])
    n0 = float(np.max(block_norms(np.asarray(M_hom[0])[None])))
    rho = 0.0
    for ell, M in enumerate(M_hom[1:], start=1):
        rho = max(rho, (float(np.max(block_norms(np.asarray(M)[None]))) / max(n0, 1e-300)) ** (1.0 / ell))
    return n0, rho


def _first_depth(q, tol, start=1, cap=10_000):
    """Smallest L >= start with q**(L+1)/(1-q) <= tol."""
    if q <= 0:
        return start
    L = start
    while q ** (L + 1) / (1.0 - q) > tol and L < cap:
        L += 1
    return L


def assemble_time_independent(M_hom, nu=None, J=None, L=None, grid: TimeGrid | None = None,
                              space: SpaceModel | None = None, growth=None, tol: float = 1e-8,
                              model: HomogenizedModel | None = None) -> LimitOperator:
    """Limit operator ``dt0 sum_{j<=J} X^j M_0^{-1}`` with ``X = -sum_{l=1}^{L} M_0^{-1} M_l (-dt0^{-1})^l``.

    The operator tree is built in Horner form.  The returned operator also
    carries the truncated solution operator ``sum_{l<=L} M_l (-dt0^{-1})^l
    dt0^{-1}`` and certified tail bounds for all three series.

    Raises
    ------
    NotCoercive
        If ``M_0`` is not coercive.
    NotContractive
        If the certified norm of ``X`` is not below one; increase ``nu``.
    """
    if grid is None or space is None:
        raise ConfigInvalid("assembly needs a grid and a space")
    if nu is not None and abs(nu - grid.nu) > 1e-12 * nu:
        grid = grid.with_nu(nu)
    M_hom = [np.asarray(M, dtype=complex) for M in M_hom]
    M0 = constant_op(M_hom[0], grid, space)
    c0 = float(np.min(hermitian_min_eig(M0.blocks)))
    if not c0 > 0:
        raise NotCoercive(f"M_hom,0 is not coercive (c={c0:.3g})")
    M0inv = constant_op(block_inv(M0.blocks), grid, space)
    I = Integration(grid, space)
    i_norm = I.norm_bound()
    C, rho = _growth(M_hom, growth)
    m0inv_norm = M0inv.norm_bound()
    avail = len(M_hom) - 1
    q_inner = rho * i_norm
    if L is None:
        L = min(avail, _first_depth(q_inner, tol / max(C, 1e-300), 1)) if q_inner < 1 else avail
    L = int(min(L, avail))
    x_norm = m0inv_norm * sum(float(np.max(block_norms(M[None]))) * i_norm ** ell
                              for ell, M in enumerate(M_hom[1:L + 1], start=1))
    if q_inner < 1:
        inner_tail = m0inv_norm * C * (q_inner ** (L + 1)) / (1.0 - q_inner)
    else:
        inner_tail = np.inf
    x_bound = x_norm + (inner_tail if np.isfinite(inner_tail) else 0.0)
    if L >= 1 and not x_bound < 1.0:
        raise NotContractive(x_bound, f"inner series norm {x_bound:.4g} >= 1; increase nu")
    if J is None:
        J = _first_depth(x_bound, tol, 1) if L >= 1 else 0
    J = int(J)

    # Horner forms: Q = sum_{l>=1} M_l (-I)^{l-1}, Q2 = sum_{l>=2} M_l (-I)^{l-2}
    negI = scale(-1.0, I)

    def horner(start):
        if L < start:
            return None
        acc = constant_op(M_hom[L], grid, space)
        for ell in range(L - 1, start - 1, -1):
            acc = sum_ops([constant_op(M_hom[ell], grid, space), compose([negI, acc])])
        return acc

    Q = horner(1)
    Q2 = horner(2)
    D = Derivative(grid, space)
    if Q is None:
        B = compose([D, M0inv])
        memory = None
        zeroth = None
        X = None
    else:
        X = compose([I, M0inv, Q])  # M0^{-1} is time independent, so it commutes with I
        # sum_{j=0}^{J} X^j M0^{-1} in Horner form
        acc = M0inv
        for _ in range(J):
            acc = sum_ops([M0inv, compose([X, acc])])
        B = compose([D, acc])
        # memory part: limit - dt0 M0^{-1} - M0^{-1} M1 M0^{-1}, built without cancellation
        terms = []
        if Q2 is not None:
            terms.append(compose([M0inv, negI, Q2, M0inv]))
        if J >= 2:
            inner = M0inv
            for _ in range(J - 2):
                inner = sum_ops([M0inv, compose([X, inner])])
            terms.append(compose([M0inv, Q, X, inner]))
        memory = sum_ops(terms) if terms else None
        zeroth = constant_op(block_matmul(block_matmul(M0inv.blocks, as_blocks(M_hom[1])), M0inv.blocks),
                             grid, space)
    # solution operator S = sum_{l<=L} M_l (-I)^l I
    S_acc = constant_op(M_hom[L], grid, space)
    for ell in range(L - 1, -1, -1):
        S_acc = sum_ops([constant_op(M_hom[ell], grid, space), compose([negI, S_acc])])
    S = compose([S_acc, I])
    sol_tail = C * i_norm * (q_inner ** (L + 1)) / (1.0 - q_inner) if q_inner < 1 else np.inf
    outer_tail = (x_bound ** (J + 1)) / (1.0 - x_bound) * m0inv_norm if L >= 1 else 0.0
    tails = {"inner": float(inner_tail) if L >= 1 else 0.0, "outer": float(outer_tail),
             "solution": float(sol_tail), "x_norm": float(x_bound), "q_inner": float(q_inner), "J": J, "L": L}
    mdl = model or HomogenizedModel(tuple(M_hom), "time_independent", grid.nu, J, L, (C, rho))
    return LimitOperator(B, S, mdl, tails, memory, zeroth)


# ---------------------------------------------------------------- memory kernel

def extract_memory_kernel(limit: LimitOperator, grid: TimeGrid | None = None, index_shift: int = 7,
                          tol: float = 1e-9) -> np.ndarray:
    """Convolution kernel of the memory part of a scalar limit operator.

    The limit is split as ``dt0 M_0^{-1} + M_0^{-1} M_1 M_0^{-1} - K*``.  The
    remainder is applied to the discrete impulse ``e_0/dt`` (whose
    convolution with ``K`` returns the samples of ``K``) and to a shifted
    impulse; disagreement of the two responses signals a time-dependent
    limit.

    Returns
    -------
    ndarray, shape (N,)
        Kernel samples ``K(t_i)`` such that the limit contains ``-K*``.
    """
    grid = limit.grid if grid is None else grid
    space = limit.space_in
    if space.n_dof != 1:
        raise UnsupportedKind("kernel extraction works on scalar H-slices (one dof)")
    if limit.memory is None:
        return np.zeros(grid.n_steps, dtype=complex)
    imp = np.zeros((grid.n_steps, 1), dtype=complex)
    imp[0, 0] = 1.0 / grid.dt
    K = -limit.memory.apply_array(imp)[:, 0]
    s = int(index_shift)
    imp2 = np.zeros_like(imp)
    imp2[s, 0] = 1.0 / grid.dt
    K2 = -limit.memory.apply_array(imp2)[:, 0]
    defect = np.max(np.abs(K2[s:] - K[: grid.n_steps - s])) + np.max(np.abs(K2[:s]))
    scale_ = max(np.max(np.abs(K)), 1.0)
    if defect > tol * scale_:
        raise NotTranslationInvariant(f"shifted impulse responses differ by {defect:.3g}")
    return K


def kernel_mass(K: np.ndarray, grid: TimeGrid) -> float:
    """Weighted L1 mass ``dt sum_i |K_i| exp(-nu t_i)``."""
    return float(grid.dt * np.sum(np.abs(K) * np.exp(-grid.nu * grid.times)))


def deconvolve_kernel(G: np.ndarray, grid: TimeGrid, M0: complex, M1: complex) -> np.ndarray:
    """Memory kernel from a scalar impulse response ``G`` of the limit solution operator.

    The limit solution operator is the convolution with ``G``; its inverse
    is ``dt0 M0^{-1} + M0^{-1} M1 M0^{-1} - K*``.  The kernel is recovered per
    frequency, ``K(z) = 1/(M0 z) + M1/M0^2 - 1/G(z)``, and transformed back.
    """
    L = fft_length(grid)
    z = laplace_variable(grid, L)
    w = grid.decay ** np.arange(grid.n_steps)
    Ghat = grid.dt * np.fft.fft(G * w, n=L)
    Khat = 1.0 / (M0 * z) + M1 / M0 ** 2 - 1.0 / Ghat
    k = np.fft.ifft(Khat)[: grid.n_steps] / grid.dt
    return k / w


# ---------------------------------------------------------------- coercivity chain

def coercivity_chain_bound(M_samples: np.ndarray) -> float:
    """Lower bound ``c^3/sup||M||^2`` for the Hermitian part of ``(avg M^{-1})^{-1}``.

    ``c`` is the pointwise coercivity of the coefficient samples.
    """
    c = float(np.min(hermitian_min_eig(M_samples)))
    s = float(np.max(block_norms(M_samples)))
    return c ** 3 / s ** 2


# ---------------------------------------------------------------- block and symbol-valued limits

def join_spaces(h0: SpaceModel, h1: SpaceModel) -> SpaceModel:
    """Product space ``H0 x H1`` as one space with ``m0 + m1`` components per point."""
    if h0.n_points != h1.n_points or h0.kind != h1.kind or h0.R != h1.R:
        raise GridMismatch("block spaces must share the spatial grid")
    if h0.kind == "finite_dim":
        return SpaceModel.finite_dim(h0.m + h1.m)
    return SpaceModel.torus_grid(h0.d, h0.R, h0.m + h1.m)


def join_signals(u0: WeightedSignal, u1: WeightedSignal) -> WeightedSignal:
    sp = join_spaces(u0.space, u1.space)
    vals = np.concatenate([u0.blocks, u1.blocks], axis=2).reshape(u0.grid.n_steps, -1)
    return WeightedSignal(u0.grid, sp, vals)


def split_signal(u: WeightedSignal, m0: int):
    h = u.space
    b = u.blocks
    if h.kind == "finite_dim":
        s0, s1 = SpaceModel.finite_dim(m0), SpaceModel.finite_dim(h.m - m0)
    else:
        s0, s1 = SpaceModel.torus_grid(h.d, h.R, m0), SpaceModel.torus_grid(h.d, h.R, h.m - m0)
    n = u.grid.n_steps
    return (WeightedSignal(u.grid, s0, b[:, :, :m0].reshape(n, -1)),
            WeightedSignal(u.grid, s1, b[:, :, m0:].reshape(n, -1)))


def _block_matrix(b00, b01, b10, b11, m0, m1, lead=1):
    """Assemble ``(lead, 1, m0+m1, m0+m1)`` block arrays from four sub-blocks (None = zero)."""
    out = np.zeros((lead, 1, m0 + m1, m0 + m1), dtype=complex)
    for blk, rs, cs in ((b00, slice(0, m0), slice(0, m0)), (b01, slice(0, m0), slice(m0, None)),
                        (b10, slice(m0, None), slice(0, m0)), (b11, slice(m0, None), slice(m0, None))):
        if blk is None:
            continue
        a = np.asarray(blk, dtype=complex)
        if a.ndim == 2:
            a = a[None, None]
        elif a.ndim == 3:
            a = a[:, None]
        out[:, :, rs, cs] = a
    return out


def block_limit_symbols(limits: dict, z: np.ndarray, m0: int, m1: int):
    """Per-frequency ``D0(z)`` and ``M1(z)`` of the block limit.

    ``limits`` holds the averaged families ``A00``, ``A01``, ``A10``,
    ``A11`` (lists indexed by ``l``, each entry an ``(m_i, m_j)`` matrix or
    an array of per-frequency matrices) and ``N_hom`` (the average of
    ``N11^{-1}``):

    * ``A00[l] = <M^{-1} (-N M^{-1})^l>``
    * ``A01[l] = -<M^{-1} (-N M^{-1})^l N01 N11^{-1}>``
    * ``A10[l] = -<N11^{-1} N10 M^{-1} (-N M^{-1})^l>``
    * ``A11[l] = <N11^{-1} N10 M^{-1} (-N M^{-1})^l N01 N11^{-1}>``

    with ``N = N00 - N01 N11^{-1} N10`` the Schur complement.  Then
    ``D0 = diag(A00[0], N_hom)`` and

    ``M1 = [[sum_{l>=1} A00[l] z^l, sum_l A01[l] z^{l+1}], [sum_l A10[l] z^l, sum_l A11[l] z^{l+1}]]``.
    """
    F = len(z)
    zz = z.reshape(F, 1, 1)

    def series(terms, shift, start=0):
        acc = None
        if not terms:
            return None
        for ell, A in enumerate(terms):
            if ell < start:
                continue
            a = np.asarray(A, dtype=complex)
            a = a if a.ndim == 3 else a[None]
            t = a * zz ** (ell + shift)
            acc = t if acc is None else acc + t
        return acc

    def lead(A):
        a = np.asarray(A, dtype=complex)
        return a if a.ndim == 3 else np.broadcast_to(a[None], (F,) + a.shape)

    A00 = limits.get("A00") or []
    D0 = _block_matrix(lead(A00[0]) if m0 else None, None, None,
                       lead(limits["N_hom"]) if m1 else None, m0, m1, F)[:, 0]
    M1 = _block_matrix(series(A00, 0, 1) if m0 else None,
                       series(limits.get("A01") or [], 1) if m0 and m1 else None,
                       series(limits.get("A10") or [], 0) if m0 and m1 else None,
                       series(limits.get("A11") or [], 1) if m1 else None, m0, m1, F)[:, 0]
    return D0, M1


def assemble_symbol_valued(limits: dict, grid: TimeGrid, h0: SpaceModel, h1: SpaceModel, J: int | None = None,
                           tol: float = 1e-10, n_fft: int | None = None):
    """Block limit evaluated frequency by frequency.

    At every sampled ``z_k`` computes ``S(z) = (D0 + M1) diag(z, 1)`` and
    ``B(z) = diag(1/z, 1) sum_{j<=J} (-D0^{-1} M1)^j D0^{-1}``; entries of
    ``limits`` may be constant matrices or callables of ``z``.

    Returns
    -------
    (B, S) : tuple of HInfSymbol
        Operators on the product space ``H0 x H1``.

    Raises
    ------
    NotCoercive
        If the Hermitian part of ``D0(z)`` is not positive at some frequency.
    NotContractiveAtFrequency
        If ``||D0^{-1} M1|| >= 1`` at some frequency.
    """
    L = fft_length(grid) if n_fft is None else n_fft
    z = laplace_variable(grid, L)
    m0, m1 = h0.m, h1.m
    evald = {}
    for key, val in limits.items():
        if callable(val):
            evald[key] = val(z)
        elif isinstance(val, (list, tuple)):
            evald[key] = [v(z) if callable(v) else v for v in val]
        else:
            evald[key] = val
    D0, M1 = block_limit_symbols(evald, z, m0, m1)
    c = hermitian_min_eig(D0)
    if not np.all(c > 0):
        raise NotCoercive(f"D0(z) not coercive at frequency {int(np.argmin(c))}")
    D0inv = np.linalg.inv(D0)
    T = -np.matmul(D0inv, M1)
    tn = np.linalg.norm(T, ord=2, axis=(-2, -1))
    if np.any(tn >= 1.0):
        k = int(np.argmax(tn))
        raise NotContractiveAtFrequency(k, float(tn[k]))
    qmax = float(np.max(tn))
    if J is None:
        J = _first_depth(qmax, tol, 0)
    acc = D0inv.copy()
    for _ in range(int(J)):
        acc = D0inv + np.matmul(T, acc)
    left = np.ones((L, m0 + m1), dtype=complex)
    left[:, :m0] = 1.0 / z[:, None]
    Bs = left[:, :, None] * acc
    right = np.ones((L, m0 + m1), dtype=complex)
    right[:, :m0] = z[:, None]
    Ss = (D0 + M1) * right[:, None, :]
    sp = join_spaces(h0, h1) if m0 and m1 else (h0 if m0 else h1)
    tail = qmax ** (J + 1) / (1.0 - qmax) * float(np.max(np.linalg.norm(D0inv, ord=2, axis=(-2, -1))))
    meta = {"J": int(J), "q": qmax, "outer_tail": tail}
    B = HInfSymbol(None, grid, sp, samples=Bs[:, None], n_fft=L, name="block_limit", meta=meta)
    S = HInfSymbol(None, grid, sp, samples=Ss[:, None], n_fft=L, name="block_solution", meta=meta)
    return B, S


def assemble_block(limits: dict, grid: TimeGrid, h0: SpaceModel, h1: SpaceModel, J: int | None = None,
                   tol: float = 1e-10):
    """Block limit ``diag(dt0, 1) sum_j (-D0^{-1} M1)^j D0^{-1}`` for constant averaged blocks.

    The entries of ``limits`` are described in :func:`block_limit_symbols`.
    Returns ``(B, S)`` as operator trees on the product space; ``S`` is the
    limit solution operator ``(D0 + M1) diag(dt0^{-1}, 1)``.
    """
    m0, m1 = h0.m, h1.m
    sp = join_spaces(h0, h1) if m0 and m1 else (h0 if m0 else h1)
    I = Integration(grid, sp)

    def cm(mat):
        return constant_op(mat, grid, sp)

    def blk(b00=None, b01=None, b10=None, b11=None):
        return _block_matrix(b00, b01, b10, b11, m0, m1)

    A00 = limits.get("A00") or []
    A01 = limits.get("A01") or []
    A10 = limits.get("A10") or []
    A11 = limits.get("A11") or []
    N_hom = limits.get("N_hom")
    D0 = blk(A00[0] if m0 else None, None, None, N_hom if m1 else None)
    if np.min(hermitian_min_eig(D0)) <= 0:
        raise NotCoercive("D0 = diag(M_hom,0,00, N_hom,-1,11) is not coercive")
    D0inv = np.linalg.inv(D0)
    # M1 = sum_l I^l C_l with C_l collecting the blocks that carry z^l
    depth = max(len(A00) - 1, len(A01), len(A10) - 1, len(A11), 0)
    coeffs = []
    for ell in range(depth + 1):
        c00 = A00[ell] if m0 and 1 <= ell < len(A00) else None
        c01 = A01[ell - 1] if m0 and m1 and 1 <= ell <= len(A01) else None
        c10 = A10[ell] if m0 and m1 and ell < len(A10) else None
        c11 = A11[ell - 1] if m1 and 1 <= ell <= len(A11) else None
        coeffs.append(blk(c00, c01, c10, c11))
    # Horner in I: M1 = C_0 + I(C_1 + I(C_2 + ...))
    acc = cm(coeffs[-1])
    for C in reversed(coeffs[:-1]):
        acc = sum_ops([cm(C), compose([I, acc])])
    M1 = acc
    i_norm = I.norm_bound()
    m1_norm = sum(float(np.max(block_norms(C))) * i_norm ** ell for ell, C in enumerate(coeffs))
    q = float(np.max(block_norms(D0inv))) * m1_norm
    if not q < 1.0:
        raise NotContractive(q)
    if J is None:
        J = _first_depth(q, tol, 0)
    T = compose([cm(-D0inv), M1])
    acc = cm(D0inv)
    for _ in range(int(J)):
        acc = sum_ops([cm(D0inv), compose([T, acc])])
    P0 = cm(blk(np.eye(m0) if m0 else None))
    P1 = cm(blk(None, None, None, np.eye(m1) if m1 else None))
    D = Derivative(grid, sp)
    left = sum_ops([compose([P0, D]), P1]) if m0 and m1 else (D if m0 else P1)
    B = compose([left, acc])
    right = sum_ops([compose([P0, I]), P1]) if m0 and m1 else (I if m0 else P1)
    S = compose([sum_ops([cm(D0), M1]), right])
    B.meta = {"J": int(J), "q": q}
    return B, S


# ---------------------------------------------------------------- time-periodic limits

def time_periodic_limit(A: CellFunction, B: CellFunction | None = None) -> HomogenizedModel:
    """Closed-form limit of ``dt0 A(n t) + B(n t)``: ``dt0 M_eff + N_eff``.

    ``M_eff = (int A^{-1})^{-1}`` and ``N_eff = (int A^{-1})^{-1} int A^{-1} B``.
    """
    if A.d != 1:
        raise GridMismatch("time-periodic coefficients live on a 1-d cell")
    pts = A.points()
    Ainv = _pointwise_inv(A.values_at(pts), "A")
    mean_inv = np.mean(Ainv, axis=0)
    M_eff = np.linalg.inv(mean_inv) if mean_inv.shape[-1] > 1 else 1.0 / mean_inv
    if B is None:
        N_eff = np.zeros_like(M_eff)
        BA = None
    else:
        Bv = B.values_at(pts)
        AinvB = block_matmul(Ainv[:, None], Bv[:, None])[:, 0]
        N_eff = block_matmul(M_eff[None, None], np.mean(AinvB, axis=0)[None, None])[0, 0]
    return HomogenizedModel((mean_inv,), "time_periodic_closed_form", extra={"M_eff": M_eff, "N_eff": N_eff})


def time_periodic_series(A: CellFunction, B: CellFunction | None, L: int = 40) -> HomogenizedModel:
    """Averaged coefficients ``M_l = int A^{-1} (int B A^{-1})^l`` from the time-product rule."""
    pts = A.points()
    Ainv = _pointwise_inv(A.values_at(pts), "A")
    m_inv = np.mean(Ainv, axis=0)
    if B is None:
        ba = np.zeros_like(m_inv)
    else:
        ba = np.mean(block_matmul(B.values_at(pts)[:, None], Ainv[:, None])[:, 0], axis=0)
    Ms, cur = [], m_inv
    for _ in range(L + 1):
        Ms.append(cur)
        cur = block_matmul(cur[None, None], ba[None, None])[0, 0]
    C = float(np.max(block_norms(m_inv[None])))
    rho = float(np.max(block_norms(ba[None])))
    return HomogenizedModel(tuple(Ms), "time_independent", L=L, growth=(C, rho),
                            extra={"source": "time_product"})


def time_product_limit(A_list: Sequence[CellFunction], k: int | None = None) -> np.ndarray:
    """``prod_j int_0^1 A_j`` -- the factor of ``(dt0^{-1})^{k-1}`` in the limit of
    ``A_1(n.) dt0^{-1} A_2(n.) ... dt0^{-1} A_k(n.)``."""
    A_list = list(A_list)
    if k is not None:
        A_list = A_list[:k]
    if not A_list:
        raise ConfigInvalid("need at least one factor")
    out = None
    for A in A_list:
        mean = np.mean(A.samples(), axis=0)
        out = mean if out is None else block_matmul(out[None, None], mean[None, None])[0, 0]
    return out


def time_product_sequence(A_list: Sequence[CellFunction], grid: TimeGrid, space: SpaceModel,
                          schedule) -> OperatorSequence:
    """Operator sequence ``n -> A_1(n.) I A_2(n.) ... I A_k(n.)`` for WOT probing."""
    I = Integration(grid, space)

    def gen(n):
        ops = []
        for j, A in enumerate(A_list):
            if j > 0:
                ops.append(I)
            ops.append(PointwiseOp(A.in_time(grid, n), grid, space))
        return compose(ops)

    return OperatorSequence(gen, tuple(schedule), {"kind": "time_product"})


def time_product_reference(A_list: Sequence[CellFunction], grid: TimeGrid, space: SpaceModel):
    """Limit operator ``(prod int A_j) (dt0^{-1})^{k-1}``."""
    c = time_product_limit(A_list)
    I = Integration(grid, space)
    return compose([constant_op(c, grid, space)] + [I] * (len(A_list) - 1))


def block_cell_averages(M: CellFunction | None, N00: CellFunction | None, N01: CellFunction | None,
                        N10: CellFunction | None, N11: CellFunction, L: int = 40, R: int | None = None) -> dict:
    """Cell averages driving :func:`assemble_block` for periodic block coefficients.

    With ``N = N00 - N01 N11^{-1} N10`` evaluated pointwise on the cell,
    returns the families ``A00, A01, A10, A11`` (lists of length ``L+1``)
    and ``N_hom = <N11^{-1}>``; see :func:`block_limit_symbols`.
    """
    R = N11.R if R is None else R
    pts = N11.points(R)
    n11inv = _pointwise_inv(N11.values_at(pts), "N11")
    Q = len(pts)
    m1 = n11inv.shape[-1]
    out = {"N_hom": np.mean(n11inv, axis=0)}
    if M is None:
        return out
    minv = _pointwise_inv(M.values_at(pts), "M")
    m0 = minv.shape[-1]

    def vals(c, shape):
        if c is None:
            return np.zeros((Q,) + shape, dtype=complex)
        v = c.values_at(pts)
        return np.broadcast_to(v, (Q,) + shape) if v.shape[-2:] == shape else v

    n00 = vals(N00, (m0, m0))
    n01 = vals(N01, (m0, m1))
    n10 = vals(N10, (m1, m0))
    schur = n00 - n01 @ n11inv @ n10
    X = -schur @ minv
    right = n01 @ n11inv          # (Q, m0, m1)
    left = n11inv @ n10           # (Q, m1, m0)
    A00, A01, A10, A11 = [], [], [], []
    P = minv
    for _ in range(int(L) + 1):
        A00.append(np.mean(P, axis=0))
        A01.append(-np.mean(P @ right, axis=0))
        A10.append(-np.mean(left @ P, axis=0))
        A11.append(np.mean(left @ P @ right, axis=0))
        P = P @ X
    out.update(A00=A00, A01=A01, A10=A10, A11=A11)
    return out
