"""Algebra of causal (evolutionary) operators on weighted signals.

Every operator is bound to a :class:`~evohom.weighted_space.TimeGrid` and
maps signals on ``space_in`` to signals on ``space_out``.  Pointwise and
kernel data use one block layout: arrays of shape ``(T, P, m_out, m_in)``
where ``T`` is 1 (time independent) or the number of time nodes / kernel
lags / frequencies, ``P`` is 1 (space independent) or the number of grid
points, and a trailing ``(1, 1)`` block stands for a scalar multiple of the
identity.

Translation-invariant operators are realized through the discrete
Fourier-Laplace pipeline: weight by ``exp(-nu t)``, zero-pad, DFT, multiply
by the symbol, invert, unweight, truncate.  Symbols are functions of the
discrete Laplace variable

.. math::

    z_k = \\frac{\\Delta t}{1 - e^{-\\nu\\Delta t} e^{-i\\omega_k}},
    \\qquad \\omega_k = 2\\pi k / L,

the exact transfer function of the rectangle-rule integrator, so that the
symbol ``z`` reproduces :class:`Integration` and ``1/z`` reproduces
:class:`Derivative` up to round-off.  As ``dt -> 0`` it tends to the
continuum variable ``1/(i xi + nu)``.
"""

from __future__ import annotations

import logging
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy.signal import lfilter

from .errors import (AlphaOutOfRange, GridMismatch, NegativeDelay, NotCoercive,
                     SingularStep, UnboundedKind, UnsupportedKind)
from .weighted_space import SpaceModel, TimeGrid, WeightedSignal, inner_product

logger = logging.getLogger(__name__)

CAUSALITY_TOL = 1e-8


# ---------------------------------------------------------------- block helpers

def as_blocks(arr, lead: int | None = None) -> np.ndarray:
    """Normalize coefficient data to the 4-d block layout.

    Accepted shapes: scalar, ``(m, m)``, ``(T,)`` scalars, ``(T, m, m)`` and
    ``(T, P, m, m)``.  ``lead`` disambiguates a 1-d input (always leading).
    """
    a = np.asarray(arr, dtype=complex)
    if a.ndim == 0:
        return a.reshape(1, 1, 1, 1)
    if a.ndim == 1:
        return a.reshape(-1, 1, 1, 1)
    if a.ndim == 2:
        if lead is not None and a.shape[0] == lead and a.shape[0] != a.shape[1]:
            return a.reshape(a.shape[0], a.shape[1], 1, 1)
        return a.reshape(1, 1, *a.shape)
    if a.ndim == 3:
        return a.reshape(a.shape[0], 1, a.shape[1], a.shape[2])
    if a.ndim == 4:
        return a
    raise ValueError(f"cannot interpret coefficient array of shape {a.shape}")


def _is_scalar_block(a) -> bool:
    return a.shape[-2:] == (1, 1)


def _expand(a: np.ndarray, m: int) -> np.ndarray:
    """Turn a scalar block ``(..., 1, 1)`` into ``(..., m, m)`` identity multiples."""
    if _is_scalar_block(a) and m != 1:
        return a * np.eye(m)
    return a


def block_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if _is_scalar_block(a) or _is_scalar_block(b):
        return a * b
    return np.matmul(a, b)


def block_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if _is_scalar_block(a) != _is_scalar_block(b):
        m = max(a.shape[-1], b.shape[-1])
        a, b = _expand(a, m), _expand(b, m)
    return a + b


def block_inv(a: np.ndarray) -> np.ndarray:
    if _is_scalar_block(a):
        return 1.0 / a
    return np.linalg.inv(a)


def block_apply(blocks: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply blocks ``(T, P, mo, mi)`` to ``x`` of shape ``(N, P, mi)``."""
    if _is_scalar_block(blocks):
        return blocks[..., 0] * x
    return np.matmul(blocks, x[..., None])[..., 0]


def block_conj_t(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def block_norms(a: np.ndarray) -> np.ndarray:
    """Spectral norm of every block."""
    if _is_scalar_block(a):
        return np.abs(a[..., 0, 0])
    return np.linalg.norm(a, ord=2, axis=(-2, -1))


def hermitian_min_eig(a: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of the Hermitian part of every block."""
    if _is_scalar_block(a):
        return a[..., 0, 0].real
    h = 0.5 * (a + block_conj_t(a))
    return np.linalg.eigvalsh(h)[..., 0]


# ---------------------------------------------------------------- frequency grid

def fft_length(grid: TimeGrid, pad: int | None = None) -> int:
    """Padded DFT length: at least ``2N`` and enough for the weighted kernel to decay."""
    if pad is not None:
        return int(pad)
    n_decay = grid.n_steps + int(np.ceil(40.0 / (grid.nu * grid.dt)))
    return sfft.next_fast_len(max(2 * grid.n_steps, n_decay))


def laplace_variable(grid: TimeGrid, n_fft: int) -> np.ndarray:
    """Discrete Laplace variable ``z_k`` on the padded DFT frequency grid."""
    omega = 2.0 * np.pi * np.fft.fftfreq(n_fft)
    zeta = grid.decay * np.exp(-1j * omega)
    return grid.dt / (1.0 - zeta)


def symbol_radius(grid: TimeGrid) -> float:
    """Radius ``r`` of the disc ``B(r, r)`` containing all discrete ``z_k``."""
    return grid.dt / (2.0 * (1.0 - grid.decay))


# ---------------------------------------------------------------- base class

class EvolutionaryOp:
    """Causal bounded linear operator between weighted signal spaces.

    Subclasses implement ``_apply`` and ``_adjoint`` on raw arrays of shape
    ``(N, n_dof)``; the adjoint is taken with respect to the weighted inner
    product.
    """

    kind = "abstract"
    translation_invariant = False

    def __init__(self, grid: TimeGrid, space_in: SpaceModel, space_out: SpaceModel | None = None):
        self.grid = grid
        self.space_in = space_in
        self.space_out = space_in if space_out is None else space_out
        if self.space_in.n_points != self.space_out.n_points:
            raise GridMismatch("input and output spaces must share the spatial grid")

    # --- application
    def apply(self, f: WeightedSignal) -> WeightedSignal:
        self._check_input(f)
        return WeightedSignal(self.grid, self.space_out, self.apply_array(np.asarray(f.values)))

    __call__ = apply

    def apply_adjoint(self, g: WeightedSignal) -> WeightedSignal:
        if g.grid != self.grid or g.space != self.space_out:
            raise GridMismatch("signal does not match operator codomain")
        return WeightedSignal(self.grid, self.space_in, self.adjoint_array(np.asarray(g.values)))

    def apply_array(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        return self._apply(x.reshape(self.grid.n_steps, -1)).reshape(self.grid.n_steps, -1)

    def adjoint_array(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=complex)
        return self._adjoint(y.reshape(self.grid.n_steps, -1)).reshape(self.grid.n_steps, -1)

    def _check_input(self, f):
        if f.grid != self.grid or f.space != self.space_in:
            raise GridMismatch(f"{self.kind}: signal does not match operator domain")

    def _shape_in(self, x):
        return x.reshape(self.grid.n_steps, self.space_in.n_points, self.space_in.m)

    def _apply(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def _adjoint(self, y):  # pragma: no cover - abstract
        raise NotImplementedError

    # --- algebra sugar
    def __add__(self, other):
        return sum_ops([self, other])

    def __sub__(self, other):
        return sum_ops([self, scale(-1.0, other)])

    def __matmul__(self, other):
        return compose([self, other])

    def __neg__(self):
        return scale(-1.0, self)

    def __rmul__(self, alpha):
        return scale(alpha, self)

    # --- estimates
    def norm_bound(self) -> float:
        """Certified upper bound of the weighted operator norm."""
        raise UnboundedKind(self.kind)

    @property
    def is_pointwise(self) -> bool:
        return False

    def describe(self) -> dict:
        return {"kind": self.kind}

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r}, grid={self.grid})"


# ---------------------------------------------------------------- pointwise kinds

class PointwiseOp(EvolutionaryOp):
    """Multiplication by a (possibly time and space dependent) matrix field.

    Parameters
    ----------
    blocks : ndarray, shape (T, P, m_out, m_in)
        ``T`` is 1 for a time-independent coefficient (kind ``ConstantMatrix``)
        or ``n_steps`` (kind ``Multiplication``).
    """

    def __init__(self, blocks, grid, space_in, space_out=None):
        super().__init__(grid, space_in, space_out)
        b = as_blocks(blocks, lead=grid.n_steps)
        if b.shape[0] not in (1, grid.n_steps):
            raise GridMismatch(f"field has {b.shape[0]} time samples, grid has {grid.n_steps}")
        if b.shape[1] not in (1, self.space_in.n_points):
            raise GridMismatch(f"field has {b.shape[1]} points, space has {self.space_in.n_points}")
        if _is_scalar_block(b):
            if self.space_in.m != self.space_out.m:
                raise GridMismatch("scalar field needs equal input/output dimension")
        elif b.shape[-2:] != (self.space_out.m, self.space_in.m):
            raise GridMismatch(f"block shape {b.shape[-2:]} vs spaces ({self.space_out.m}, {self.space_in.m})")
        b.setflags(write=False)
        self.blocks = b

    @property
    def kind(self):
        return "ConstantMatrix" if self.blocks.shape[0] == 1 else "Multiplication"

    @property
    def translation_invariant(self):
        return self.blocks.shape[0] == 1

    @property
    def is_pointwise(self) -> bool:
        return True

    def _apply(self, x):
        y = block_apply(self.blocks, self._shape_in(x))
        return y.reshape(self.grid.n_steps, -1)

    def _adjoint(self, y):
        yy = y.reshape(self.grid.n_steps, self.space_out.n_points, self.space_out.m)
        return block_apply(block_conj_t(self.blocks), yy).reshape(self.grid.n_steps, -1)

    def norm_bound(self) -> float:
        return float(np.max(block_norms(self.blocks)))

    def describe(self):
        return {"kind": self.kind, "shape": list(self.blocks.shape)}


def constant_op(matrix, grid: TimeGrid, space_in: SpaceModel, space_out: SpaceModel | None = None) -> PointwiseOp:
    """Time-independent pointwise operator from a scalar, ``(m, m)`` matrix or ``(1, P, m, m)`` field."""
    b = as_blocks(matrix)
    return PointwiseOp(b, grid, space_in, space_out)


def multiplication_op(field, grid: TimeGrid, space_in: SpaceModel, space_out: SpaceModel | None = None) -> PointwiseOp:
    """Pointwise operator from a field of shape ``(T, P, m_out, m_in)``."""
    return PointwiseOp(as_blocks(field, lead=grid.n_steps), grid, space_in, space_out)


def identity(grid: TimeGrid, space: SpaceModel) -> PointwiseOp:
    return constant_op(1.0, grid, space)


class SpatialOp(EvolutionaryOp):
    """Time-independent operator acting on the spatial dofs by a user map.

    Used for non-local spatial operators (e.g. a discrete curl).  The map
    acts row-wise on arrays of shape ``(N, n_dof)``.  ``bound`` must be a
    certified upper bound of its norm on ``H``.
    """

    kind = "ConstantMatrix"
    translation_invariant = True

    def __init__(self, matvec, rmatvec, bound: float, grid, space_in, space_out=None, name="spatial"):
        super().__init__(grid, space_in, space_out)
        self._matvec, self._rmatvec = matvec, rmatvec
        self.bound = float(bound)
        self.name = name

    def _apply(self, x):
        return self._matvec(x)

    def _adjoint(self, y):
        return self._rmatvec(y)

    def norm_bound(self) -> float:
        return self.bound

    def describe(self):
        return {"kind": self.kind, "name": self.name, "bound": self.bound}


# ---------------------------------------------------------------- calculus kinds

class Integration(EvolutionaryOp):
    """Causal rectangle rule ``(If)_i = dt * sum_{j<=i} f_j``."""

    kind = "Integration"
    translation_invariant = True

    def _apply(self, x):
        return self.grid.dt * np.cumsum(x, axis=0)

    def _adjoint(self, y):
        r2 = self.grid.decay ** 2
        s = lfilter([1.0], [1.0, -r2], y[::-1], axis=0)[::-1]
        return self.grid.dt * s

    def norm_bound(self) -> float:
        # Schur test on the weighted kernel dt*exp(-nu dt k)
        return self.grid.dt / (1.0 - self.grid.decay)


class Derivative(EvolutionaryOp):
    """Backward difference ``(Df)_i = (f_i - f_{i-1})/dt`` with ``f_{-1} = 0``."""

    kind = "Derivative"
    translation_invariant = True

    def _apply(self, x):
        return np.diff(x, axis=0, prepend=np.zeros((1, x.shape[1]), dtype=x.dtype)) / self.grid.dt

    def _adjoint(self, y):
        r2 = self.grid.decay ** 2
        nxt = np.concatenate([y[1:], np.zeros((1, y.shape[1]), dtype=y.dtype)])
        return (y - r2 * nxt) / self.grid.dt

    def grid_norm_bound(self) -> float:
        """Norm on the grid (finite, but of order 1/dt: the operator is unbounded as dt -> 0)."""
        return (1.0 + self.grid.decay) / self.grid.dt


def integration_op(grid, space) -> Integration:
    return Integration(grid, space)


def derivative_op(grid, space) -> Derivative:
    return Derivative(grid, space)


class Convolution(EvolutionaryOp):
    """Discrete causal convolution ``(g*f)_i = dt * sum_{j<=i} g_{i-j} f_j``.

    Parameters
    ----------
    kernel : ndarray, shape (K, P, m_out, m_in) or (K,)
        Kernel samples ``g_k = g(k dt)``; lags beyond ``K`` are zero.
    """

    kind = "Convolution"
    translation_invariant = True

    def __init__(self, kernel, grid, space_in, space_out=None):
        super().__init__(grid, space_in, space_out)
        k = as_blocks(kernel)
        k = k[: grid.n_steps]
        if k.shape[1] not in (1, self.space_in.n_points):
            raise GridMismatch("kernel point count does not match space")
        k.setflags(write=False)
        self.kernel = k

    @cached_property
    def weighted_young_bound(self) -> float:
        lags = np.arange(self.kernel.shape[0])
        per_lag = np.max(block_norms(self.kernel).reshape(self.kernel.shape[0], -1), axis=1)
        return float(self.grid.dt * np.sum(per_lag * self.grid.decay ** lags))

    def norm_bound(self) -> float:
        return self.weighted_young_bound

    def _conv(self, kernel, x):
        N = self.grid.n_steps
        K = kernel.shape[0]
        n = sfft.next_fast_len(N + K - 1)
        X = sfft.fft(x, n=n, axis=0)
        G = sfft.fft(kernel, n=n, axis=0)
        Y = block_apply(G, X)
        y = sfft.ifft(Y, axis=0)[:N]
        return self.grid.dt * y

    def _apply(self, x):
        y = self._conv(self.kernel, self._shape_in(x))
        return y.reshape(self.grid.n_steps, -1)

    def _adjoint(self, y):
        r2 = self.grid.decay ** (2 * np.arange(self.kernel.shape[0]))
        kern = block_conj_t(self.kernel) * r2[:, None, None, None]
        yy = y.reshape(self.grid.n_steps, self.space_out.n_points, self.space_out.m)[::-1]
        return self._conv(kern, yy)[::-1].reshape(self.grid.n_steps, -1)

    def describe(self):
        return {"kind": self.kind, "lags": int(self.kernel.shape[0]), "bound": self.weighted_young_bound}


def convolution_op(g, grid, space_in, space_out=None) -> Convolution:
    """Causal convolution with kernel samples ``g_k`` (see :class:`Convolution`)."""
    return Convolution(g, grid, space_in, space_out)


class HInfSymbol(EvolutionaryOp):
    """Operator ``M(dt0^{-1})`` given by a bounded analytic symbol ``z -> M(z)``.

    Parameters
    ----------
    func : callable or None
        Maps an array of ``z`` values of shape ``(L,)`` to symbol values of
        shape ``(L,)``, ``(L, m, m)`` or ``(L, P, m_out, m_in)``.
    samples : ndarray, optional
        Precomputed samples on the padded frequency grid instead of ``func``.
    n_fft : int, optional
        Padded DFT length (default :func:`fft_length`).
    """

    kind = "HInfSymbol"
    translation_invariant = True

    def __init__(self, func, grid, space_in, space_out=None, samples=None, n_fft=None, name="symbol", meta=None):
        super().__init__(grid, space_in, space_out)
        self.n_fft = fft_length(grid) if n_fft is None else int(n_fft)
        if self.n_fft < 2 * grid.n_steps:
            raise GridMismatch("zero padding must be at least 2N")
        self.func = func
        self.name = name
        self.meta = dict(meta or {})
        self.r = symbol_radius(grid)
        if samples is None:
            samples = func(self.z)
        s = as_blocks(samples)
        if s.shape[0] == 1:
            s = np.broadcast_to(s, (self.n_fft,) + s.shape[1:])
        if s.shape[0] != self.n_fft:
            raise GridMismatch(f"{s.shape[0]} symbol samples for DFT length {self.n_fft}")
        s = np.ascontiguousarray(s)
        s.setflags(write=False)
        self.samples = s

    @cached_property
    def z(self) -> np.ndarray:
        return laplace_variable(self.grid, self.n_fft)

    def _pipeline(self, samples, x, space_out_m):
        N = self.grid.n_steps
        w = self.grid.decay ** np.arange(N)
        xx = self._shape_like(x) * w[:, None, None]
        X = sfft.fft(xx, n=self.n_fft, axis=0)
        Y = block_apply(samples, X)
        y = sfft.ifft(Y, axis=0)[:N] / w[:, None, None]
        return y.reshape(N, -1)

    def _shape_like(self, x):
        return x.reshape(self.grid.n_steps, self.space_in.n_points, -1)

    def _apply(self, x):
        return self._pipeline(self.samples, x, self.space_out.m)

    def _adjoint(self, y):
        return self._pipeline(block_conj_t(self.samples), y, self.space_in.m)

    def norm_bound(self) -> float:
        return float(np.max(block_norms(self.samples)))

    @cached_property
    def causality_defect(self) -> float:
        """Relative energy of the impulse response at negative lags (second half of the DFT window)."""
        h = sfft.ifft(self.samples, axis=0)
        e = np.sum(np.abs(h) ** 2, axis=(1, 2, 3))
        half = self.n_fft // 2
        total = float(np.sum(e))
        return float(np.sum(e[half:]) / total) if total > 0 else 0.0

    def describe(self):
        return {"kind": self.kind, "name": self.name, "n_fft": self.n_fft, "meta": self.meta}


def symbol_op(func, grid, space_in, space_out=None, **kw) -> HInfSymbol:
    return HInfSymbol(func, grid, space_in, space_out, **kw)


def shift_op(h: float, grid: TimeGrid, space: SpaceModel, n_fft=None) -> HInfSymbol:
    """Delay ``(tau_h f)(t) = f(t - h)`` as the symbol ``(1 - dt/z)^{h/dt}``.

    For ``h`` a multiple of ``dt`` this is the exact index shift; in general
    it is the discrete analogue of ``exp(-h/z)``.  Its norm is ``exp(-nu h)``.
    """
    if h < 0:
        raise NegativeDelay(f"delay must be non-negative, got {h}")
    s = h / grid.dt

    def func(z):
        zeta = 1.0 - grid.dt / z
        return zeta ** s

    return HInfSymbol(func, grid, space, n_fft=n_fft, name="shift", meta={"h": float(h)})


def fractional_power_op(alpha: float, grid: TimeGrid, space: SpaceModel, n_fft=None) -> HInfSymbol:
    """``dt0^alpha`` as the symbol ``(1/z)^alpha`` (principal branch, ``Re(1/z) > 0``)."""
    if not (-1.0 <= alpha <= 1.0):
        raise AlphaOutOfRange(f"alpha must lie in [-1, 1], got {alpha}")

    def func(z):
        return np.power(1.0 / z, alpha)

    return HInfSymbol(func, grid, space, n_fft=n_fft, name="fractional_power", meta={"alpha": float(alpha)})


# ---------------------------------------------------------------- combinators

class Sum(EvolutionaryOp):
    kind = "Sum"

    def __init__(self, ops):
        ops = list(ops)
        if not ops:
            raise ValueError("Sum needs at least one operand")
        super().__init__(ops[0].grid, ops[0].space_in, ops[0].space_out)
        for op in ops:
            if op.grid != self.grid or op.space_in != self.space_in or op.space_out != self.space_out:
                raise GridMismatch("Sum operands live on different spaces")
        self.ops = tuple(ops)
        self.translation_invariant = all(op.translation_invariant for op in ops)

    @property
    def is_pointwise(self):
        return all(op.is_pointwise for op in self.ops)

    def _apply(self, x):
        out = self.ops[0]._apply(x)
        for op in self.ops[1:]:
            out = out + op._apply(x)
        return out

    def _adjoint(self, y):
        out = self.ops[0]._adjoint(y)
        for op in self.ops[1:]:
            out = out + op._adjoint(y)
        return out

    def norm_bound(self) -> float:
        crude = sum(op.norm_bound() for op in self.ops)
        return min(crude, _symbol_norm_or_inf(self))

    def describe(self):
        return {"kind": self.kind, "ops": [op.describe() for op in self.ops]}


class Compose(EvolutionaryOp):
    """Composition ``ops[0] o ops[1] o ...`` (the last operand acts first)."""

    kind = "Compose"

    def __init__(self, ops):
        ops = list(ops)
        if not ops:
            raise ValueError("Compose needs at least one operand")
        super().__init__(ops[0].grid, ops[-1].space_in, ops[0].space_out)
        for left, right in zip(ops[:-1], ops[1:]):
            if left.grid != right.grid or left.space_in != right.space_out:
                raise GridMismatch("Compose operands do not chain")
        self.ops = tuple(ops)
        self.translation_invariant = all(op.translation_invariant for op in ops)

    def _apply(self, x):
        for op in reversed(self.ops):
            x = op._apply(x)
        return x

    def _adjoint(self, y):
        for op in self.ops:
            y = op._adjoint(y)
        return y

    def norm_bound(self) -> float:
        crude = 1.0
        for op in self.ops:
            crude *= _norm_bound_for_product(op)
        return min(crude, _symbol_norm_or_inf(self))

    def describe(self):
        return {"kind": self.kind, "ops": [op.describe() for op in self.ops]}


class Scale(EvolutionaryOp):
    kind = "Scale"

    def __init__(self, alpha, op):
        super().__init__(op.grid, op.space_in, op.space_out)
        self.alpha = complex(alpha)
        self.op = op
        self.translation_invariant = op.translation_invariant

    @property
    def is_pointwise(self):
        return self.op.is_pointwise

    def _apply(self, x):
        return self.alpha * self.op._apply(x)

    def _adjoint(self, y):
        return np.conj(self.alpha) * self.op._adjoint(y)

    def norm_bound(self) -> float:
        return abs(self.alpha) * _norm_bound_for_product(self.op)

    def describe(self):
        return {"kind": self.kind, "alpha": [self.alpha.real, self.alpha.imag], "op": self.op.describe()}


class Inverse(EvolutionaryOp):
    """Inverse of ``op`` realized by a structured operator ``realized``.

    ``method`` records how the inverse was obtained (``pointwise``,
    ``symbol``, ``inverse_pair``, ``scalar`` or ``product``).
    """

    kind = "Inverse"

    def __init__(self, op, method, realized):
        super().__init__(op.grid, op.space_out, op.space_in)
        self.op, self.method, self.realized = op, method, realized
        self.translation_invariant = realized.translation_invariant

    @property
    def is_pointwise(self):
        return self.realized.is_pointwise

    def _apply(self, x):
        return self.realized._apply(x)

    def _adjoint(self, y):
        return self.realized._adjoint(y)

    def norm_bound(self) -> float:
        return _norm_bound_for_product(self.realized)

    def describe(self):
        return {"kind": self.kind, "method": self.method, "op": self.op.describe()}


def _norm_bound_for_product(op) -> float:
    if isinstance(op, Derivative):
        return op.grid_norm_bound()
    return op.norm_bound()


def _symbol_norm_or_inf(op) -> float:
    if not op.translation_invariant or _contains_spatial(op):
        return np.inf
    try:
        return float(np.max(block_norms(symbol_samples(op))))
    except (UnsupportedKind, MemoryError):
        return np.inf


def _contains_spatial(op) -> bool:
    if isinstance(op, SpatialOp):
        return True
    if isinstance(op, (Sum, Compose)):
        return any(_contains_spatial(o) for o in op.ops)
    if isinstance(op, Scale):
        return _contains_spatial(op.op)
    if isinstance(op, Inverse):
        return _contains_spatial(op.realized)
    return False


def _flatten(ops, cls):
    out = []
    for op in ops:
        if isinstance(op, cls):
            out.extend(op.ops)
        else:
            out.append(op)
    return out


def compose(ops) -> EvolutionaryOp:
    """Compose operators right-to-left; adjacent Derivative/Integration pairs cancel exactly."""
    flat = _flatten(list(ops), Compose)
    stack = []
    for op in flat:
        if stack and _is_inverse_pair(stack[-1], op):
            stack.pop()
            continue
        stack.append(op)
    if not stack:
        return identity(flat[0].grid, flat[-1].space_in)
    if len(stack) == 1:
        return stack[0]
    return Compose(stack)


def _is_inverse_pair(a, b) -> bool:
    pair = {type(a), type(b)}
    return pair == {Integration, Derivative} and a.space_in == b.space_out


def sum_ops(ops) -> EvolutionaryOp:
    flat = _flatten(list(ops), Sum)
    return flat[0] if len(flat) == 1 else Sum(flat)


def scale(alpha, op) -> EvolutionaryOp:
    if isinstance(op, Scale):
        return Scale(complex(alpha) * op.alpha, op.op)
    return Scale(alpha, op)


# ---------------------------------------------------------------- symbols

def symbol_samples(op, n_fft: int | None = None) -> np.ndarray:
    """Samples of the symbol of a translation-invariant operator on the padded DFT grid.

    Raises
    ------
    UnsupportedKind
        For time-dependent or non-local spatial operators.
    """
    grid = op.grid
    L = fft_length(grid) if n_fft is None else n_fft
    if isinstance(op, HInfSymbol):
        if op.n_fft == L:
            return op.samples
        return as_blocks(op.func(laplace_variable(grid, L))) if op.func is not None else _raise_len(op)
    if isinstance(op, PointwiseOp):
        if op.blocks.shape[0] != 1:
            raise UnsupportedKind("time-dependent multiplication has no symbol")
        return op.blocks
    z = laplace_variable(grid, L)
    if isinstance(op, Integration):
        return z.reshape(-1, 1, 1, 1)
    if isinstance(op, Derivative):
        return (1.0 / z).reshape(-1, 1, 1, 1)
    if isinstance(op, Convolution):
        lags = np.arange(op.kernel.shape[0])
        weighted = op.kernel * (grid.decay ** lags)[:, None, None, None]
        return grid.dt * sfft.fft(weighted, n=L, axis=0)
    if isinstance(op, Scale):
        return op.alpha * symbol_samples(op.op, L)
    if isinstance(op, Inverse):
        return symbol_samples(op.realized, L)
    if isinstance(op, Sum):
        out = symbol_samples(op.ops[0], L)
        for o in op.ops[1:]:
            out = block_add(out, symbol_samples(o, L))
        return out
    if isinstance(op, Compose):
        out = symbol_samples(op.ops[-1], L)
        for o in reversed(op.ops[:-1]):
            out = block_matmul(symbol_samples(o, L), out)
        return out
    raise UnsupportedKind(f"{op.kind} has no symbol representation")


def _raise_len(op):
    raise UnsupportedKind("symbol samples exist only on the operator's own DFT grid")


def to_symbol_op(op, n_fft: int | None = None) -> HInfSymbol:
    """Realize a translation-invariant operator tree as a single :class:`HInfSymbol`."""
    L = fft_length(op.grid) if n_fft is None else n_fft
    return HInfSymbol(None, op.grid, op.space_in, op.space_out, samples=symbol_samples(op, L), n_fft=L,
                      name="resolved")


# ---------------------------------------------------------------- inversion

def invert(op) -> EvolutionaryOp:
    """Structured inverse of ``op``.

    Pointwise kinds invert node by node, Integration and Derivative are
    exchanged, symbols invert per frequency, scalings and compositions
    recurse.  Other kinds raise :class:`UnsupportedKind`.
    """
    if isinstance(op, Inverse):
        return op.op
    if isinstance(op, PointwiseOp):
        try:
            inv = block_inv(op.blocks)
        except np.linalg.LinAlgError as exc:
            raise SingularStep(f"pointwise block is singular: {exc}") from exc
        if not np.all(np.isfinite(inv)):
            raise SingularStep("pointwise block is singular")
        return Inverse(op, "pointwise", PointwiseOp(inv, op.grid, op.space_out, op.space_in))
    if isinstance(op, Integration):
        return Inverse(op, "inverse_pair", Derivative(op.grid, op.space_in))
    if isinstance(op, Derivative):
        return Inverse(op, "inverse_pair", Integration(op.grid, op.space_in))
    if isinstance(op, Scale):
        if op.alpha == 0:
            raise SingularStep("cannot invert a zero scaling")
        return Inverse(op, "scalar", scale(1.0 / op.alpha, invert(op.op)))
    if isinstance(op, Compose):
        return Inverse(op, "product", compose([invert(o) for o in reversed(op.ops)]))
    if isinstance(op, Sum) and op.is_pointwise:
        return invert(PointwiseOp(pointwise_blocks(op), op.grid, op.space_in, op.space_out))
    if op.translation_invariant and not _contains_spatial(op):
        s = symbol_samples(op)
        try:
            inv = block_inv(s)
        except np.linalg.LinAlgError as exc:
            raise SingularStep(f"symbol is singular at some frequency: {exc}") from exc
        if not np.all(np.isfinite(inv)):
            raise SingularStep("symbol is singular at some frequency")
        real = HInfSymbol(None, op.grid, op.space_out, op.space_in, samples=inv, n_fft=s.shape[0], name="inverse")
        return Inverse(op, "symbol", real)
    raise UnsupportedKind(f"no structured inverse for kind {op.kind}")


def pointwise_blocks(op) -> np.ndarray:
    """Combined block field of a pointwise operator (PointwiseOp, or Sum/Scale/Inverse thereof)."""
    if isinstance(op, PointwiseOp):
        return op.blocks
    if isinstance(op, Scale):
        return op.alpha * pointwise_blocks(op.op)
    if isinstance(op, Inverse) and op.realized.is_pointwise:
        return pointwise_blocks(op.realized)
    if isinstance(op, Sum) and op.is_pointwise:
        out = pointwise_blocks(op.ops[0])
        for o in op.ops[1:]:
            out = block_add(out, pointwise_blocks(o))
        return out
    raise UnsupportedKind(f"{op.kind} has no pointwise representation")


# ---------------------------------------------------------------- estimates

def operator_norm_estimate(op, trials: int = 1, seed: int = 0, max_iter: int = 500, rtol: float = 1e-10,
                           return_residual: bool = False):
    """Power-iteration estimate of the weighted operator norm.

    Iterates ``v <- A* A v`` with the weighted adjoint and returns the
    square root of the Rayleigh quotient, which never exceeds the true norm
    of the discrete operator.  With ``return_residual`` the relative
    eigen-residual ``||A*Av - lam v|| / lam`` is returned as well.

    Raises
    ------
    UnboundedKind
        For :class:`Derivative`, whose norm blows up as ``dt -> 0``.
    """
    if _contains_derivative(op):
        raise UnboundedKind("Derivative is unbounded; no norm estimate")
    rng = np.random.default_rng(seed)
    grid, space = op.grid, op.space_in
    best, best_res = 0.0, np.inf
    for _ in range(max(int(trials), 1)):
        v = rng.standard_normal((grid.n_steps, space.n_dof)) + 1j * rng.standard_normal((grid.n_steps, space.n_dof))
        v = WeightedSignal(grid, space, v)
        v = v * (1.0 / v.norm())
        lam_old = 0.0
        lam, res = 0.0, np.inf
        for _ in range(max_iter):
            w = op.apply_adjoint(op.apply(v))
            lam = inner_product(v, w).real
            wn = w.norm()
            if wn == 0.0:
                lam, res = 0.0, 0.0
                break
            res = (w - lam * v).norm() / max(lam, 1e-300)
            v = w * (1.0 / wn)
            if abs(lam - lam_old) <= rtol * lam:
                break
            lam_old = lam
        est = float(np.sqrt(max(lam, 0.0)))
        if est > best:
            best, best_res = est, res
    return (best, best_res) if return_residual else best


def _contains_derivative(op) -> bool:
    if isinstance(op, Derivative):
        return True
    if isinstance(op, (Sum, Compose)):
        return any(_contains_derivative(o) for o in op.ops)
    if isinstance(op, Scale):
        return _contains_derivative(op.op)
    if isinstance(op, Inverse):
        return _contains_derivative(op.realized)
    return False


def coercivity_estimate(op) -> float:
    """Certified lower bound ``c`` with ``Re <f, op f> >= c ||f||^2``.

    Pointwise kinds use the smallest eigenvalue of the Hermitian part over
    all nodes; translation-invariant kinds use the same bound per sampled
    frequency, which is exact for the realized DFT pipeline by Parseval.
    """
    if op.space_in != op.space_out:
        raise UnsupportedKind("coercivity needs equal input and output spaces")
    if op.is_pointwise:
        return float(np.min(hermitian_min_eig(pointwise_blocks(op))))
    if op.translation_invariant and not _contains_spatial(op):
        return float(np.min(hermitian_min_eig(symbol_samples(op))))
    raise UnsupportedKind(f"coercivity of kind {op.kind} is not certified; use coercivity_probe")


def coercivity_probe(op, trials: int = 16, seed: int = 0) -> float:
    """Non-certified probe: smallest ``Re <f, op f>/||f||^2`` over random smooth signals."""
    rng = np.random.default_rng(seed)
    grid, space = op.grid, op.space_in
    best = np.inf
    for _ in range(trials):
        raw = rng.standard_normal((grid.n_steps, space.n_dof)) + 1j * rng.standard_normal((grid.n_steps, space.n_dof))
        raw = np.cumsum(raw, axis=0)  # smoother probes
        f = WeightedSignal(grid, space, raw)
        val = inner_product(f, op.apply(f)).real / inner_product(f, f).real
        best = min(best, val)
    return float(best)


def check_causality(op, index: int | None = None, seed: int = 0) -> float:
    """Relative output energy before an impulse placed at ``index``."""
    grid, space = op.grid, op.space_in
    i = grid.n_steps // 2 if index is None else int(index)
    rng = np.random.default_rng(seed)
    x = np.zeros((grid.n_steps, space.n_dof), dtype=complex)
    x[i] = rng.standard_normal(space.n_dof)
    y = op.apply_array(x)
    total = np.sum(np.abs(y) ** 2)
    return float(np.sum(np.abs(y[:i]) ** 2) / total) if total > 0 else 0.0


def require_coercive(op, what="operator") -> float:
    c = coercivity_estimate(op)
    if not c > 0:
        raise NotCoercive(f"{what} is not coercive (c_est={c:.3g})")
    return c
