"""Discrete model of the exponentially weighted space L2_nu(R; H).

A signal is a complex array of shape ``(n_steps, n_dof)`` sampled at
``t_i = i*dt`` and implicitly zero for ``t < 0``.  The inner product is
the left-endpoint quadrature

.. math::

    \\langle f, g \\rangle_\\nu = \\Delta t \\sum_i e^{-2\\nu t_i}
        \\langle f_i, g_i \\rangle_H ,

conjugate-linear in the first argument.  ``H`` is either ``C^m`` with the
Euclidean product or a periodic grid on ``[0, 1)^d`` carrying ``m``
components per point, with midpoint weights ``1/R^d``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigInvalid, GridMismatch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform causal time grid with exponential weight rate ``nu``.

    Parameters
    ----------
    dt : float
        Step size, ``dt > 0``.
    n_steps : int
        Number of nodes ``N >= 2``; nodes are ``t_i = i*dt``.
    nu : float
        Weight rate, ``nu > 0``.  ``nu*dt < 1`` is enforced so that the
        weight does not vary by more than a factor ``e`` across one step.
    """

    dt: float
    n_steps: int
    nu: float

    def __post_init__(self):
        dt, n, nu = float(self.dt), int(self.n_steps), float(self.nu)
        if not (np.isfinite(dt) and dt > 0):
            raise ConfigInvalid(f"dt must be positive, got {self.dt}")
        if n < 2 or n != self.n_steps:
            raise ConfigInvalid(f"n_steps must be an integer >= 2, got {self.n_steps}")
        if not (np.isfinite(nu) and nu > 0):
            raise ConfigInvalid(f"nu must be positive, got {self.nu}")
        if nu * dt >= 1.0:
            raise ConfigInvalid(f"resolution guard violated: nu*dt = {nu * dt:.6g} >= 1")
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "n_steps", n)
        object.__setattr__(self, "nu", nu)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps)

    @property
    def horizon(self) -> float:
        """Length ``N*dt`` of the window covered by the grid."""
        return self.dt * self.n_steps

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights ``dt*exp(-2 nu t_i)``."""
        return self.dt * np.exp(-2.0 * self.nu * self.times)

    @property
    def decay(self) -> float:
        """One-step weight factor ``exp(-nu*dt)``."""
        return float(np.exp(-self.nu * self.dt))

    def with_nu(self, nu: float) -> "TimeGrid":
        return TimeGrid(self.dt, self.n_steps, nu)

    def to_dict(self) -> dict:
        return {"dt": self.dt, "n_steps": self.n_steps, "nu": self.nu}


@dataclass(frozen=True)
class SpaceModel:
    """Discrete model of the spatial Hilbert space ``H``.

    Use the constructors :meth:`finite_dim` and :meth:`torus_grid`.
    Degrees of freedom are ordered point-major: ``dof = p*m + c``.
    """

    kind: str
    m: int
    d: int = 0
    R: tuple = ()

    def __post_init__(self):
        if self.kind not in ("finite_dim", "torus_grid"):
            raise ConfigInvalid(f"unknown space kind {self.kind!r}")
        if int(self.m) < 0:
            raise ConfigInvalid("m must be non-negative")
        object.__setattr__(self, "m", int(self.m))
        if self.kind == "torus_grid":
            R = tuple(int(r) for r in np.broadcast_to(np.asarray(self.R), (int(self.d),)))
            if int(self.d) < 1 or any(r < 1 for r in R):
                raise ConfigInvalid("torus_grid needs d >= 1 and R >= 1")
            object.__setattr__(self, "d", int(self.d))
            object.__setattr__(self, "R", R)
        else:
            object.__setattr__(self, "d", 0)
            object.__setattr__(self, "R", ())

    @classmethod
    def finite_dim(cls, m: int) -> "SpaceModel":
        return cls("finite_dim", m)

    @classmethod
    def torus_grid(cls, d: int, R, m: int = 1) -> "SpaceModel":
        """Periodic midpoint grid on ``[0,1)^d``; ``R`` is an int or one int per axis."""
        return cls("torus_grid", m, d, tuple(np.broadcast_to(np.asarray(R), (int(d),)).tolist()))

    @property
    def n_points(self) -> int:
        return int(np.prod(self.R)) if self.kind == "torus_grid" else 1

    @property
    def n_dof(self) -> int:
        return self.n_points * self.m

    @property
    def quad_weight(self) -> float:
        return 1.0 / self.n_points

    def points(self) -> np.ndarray:
        """Cell midpoints, shape ``(n_points, d)`` (empty columns for ``finite_dim``)."""
        if self.kind == "finite_dim":
            return np.zeros((1, 0))
        axes = [(np.arange(r) + 0.5) / r for r in self.R]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def to_dict(self) -> dict:
        if self.kind == "finite_dim":
            return {"kind": "finite_dim", "m": self.m}
        return {"kind": "torus_grid", "d": self.d, "R": list(self.R), "m": self.m}

    @classmethod
    def from_dict(cls, data: dict) -> "SpaceModel":
        if data["kind"] == "finite_dim":
            return cls.finite_dim(data["m"])
        return cls.torus_grid(data["d"], data["R"], data.get("m", 1))


def check_compatible(*objs) -> None:
    """Raise :class:`GridMismatch` unless all objects share grid and space."""
    first = objs[0]
    for other in objs[1:]:
        if other.grid != first.grid or other.space != first.space:
            raise GridMismatch(
                f"incompatible operands: {first.grid}/{first.space} vs {other.grid}/{other.space}"
            )


@dataclass(frozen=True, eq=False)
class WeightedSignal:
    """Causal vector-valued time series, an element of L2_nu(R; H)."""

    grid: TimeGrid
    space: SpaceModel
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex)
        shape = (self.grid.n_steps, self.space.n_dof)
        if vals.shape != shape:
            try:
                vals = vals.reshape(shape)
            except ValueError:
                raise GridMismatch(f"values of shape {vals.shape} do not fit grid/space {shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid, space) -> "WeightedSignal":
        return cls(grid, space, np.zeros((grid.n_steps, space.n_dof), dtype=complex))

    @classmethod
    def from_function(cls, grid, space, fun: Callable) -> "WeightedSignal":
        """Sample ``fun(t, x)`` returning shape ``(N, P, m)`` (or broadcastable).

        ``t`` has shape ``(N, 1, 1)`` and ``x`` has shape ``(1, P, d)``.
        """
        t = grid.times[:, None, None]
        x = space.points()[None, :, :]
        vals = np.broadcast_to(fun(t, x), (grid.n_steps, space.n_points, space.m))
        return cls(grid, space, vals.reshape(grid.n_steps, -1))

    @property
    def blocks(self) -> np.ndarray:
        """Values reshaped to ``(N, P, m)``."""
        return self.values.reshape(self.grid.n_steps, self.space.n_points, self.space.m)

    def with_values(self, values) -> "WeightedSignal":
        return WeightedSignal(self.grid, self.space, values)

    def norm(self) -> float:
        return float(np.sqrt(max(inner_product(self, self).real, 0.0)))

    def __add__(self, other):
        check_compatible(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        check_compatible(self, other)
        return self.with_values(self.values - other.values)

    def __neg__(self):
        return self.with_values(-self.values)

    def __mul__(self, alpha):
        return self.with_values(complex(alpha) * self.values)

    __rmul__ = __mul__


def _weighted_vdot(grid, space, a: np.ndarray, b: np.ndarray) -> complex:
    w = grid.weights * space.quad_weight
    return complex(np.einsum("i,ij,ij->", w, a.conj(), b))


def inner_product(f: WeightedSignal, g: WeightedSignal) -> complex:
    """Weighted inner product, conjugate-linear in ``f``."""
    check_compatible(f, g)
    return _weighted_vdot(f.grid, f.space, f.values, g.values)


def norm(f: WeightedSignal) -> float:
    return f.norm()


def relative_error(u: WeightedSignal, ref: WeightedSignal) -> float:
    """``||u - ref||_nu / ||ref||_nu`` (absolute error when ``ref`` vanishes)."""
    den = ref.norm()
    err = (u - ref).norm()
    return err / den if den > 0 else err


@dataclass(frozen=True, eq=False)
class TestDictionary:
    """Finite orthonormal probe set used to measure weak convergence."""

    __test__ = False  # keep pytest from collecting this class

    members: tuple
    gram_cond: float = field(default=1.0)

    @property
    def size(self) -> int:
        return len(self.members)

    def __len__(self):
        return len(self.members)

    def __getitem__(self, j):
        return self.members[j]

    @property
    def matrix(self) -> np.ndarray:
        """Member values stacked to shape ``(size, N, n_dof)``."""
        return np.stack([m.values for m in self.members])


def weak_pairings(u: WeightedSignal, dictionary: TestDictionary) -> np.ndarray:
    """Vector of ``<phi_j, u>_nu`` over the dictionary members ``phi_j``."""
    if dictionary.size == 0:
        return np.zeros(0, dtype=complex)
    check_compatible(u, dictionary.members[0])
    w = u.grid.weights * u.space.quad_weight
    return np.einsum("i,kij,ij->k", w, dictionary.matrix.conj(), u.values)


def raised_cosine(t: np.ndarray, center: float, half_width: float) -> np.ndarray:
    """Smooth bump ``(1 + cos(pi (t-c)/w))/2`` supported on ``|t-c| < w``."""
    s = (np.asarray(t, dtype=float) - center) / half_width
    return np.where(np.abs(s) < 1.0, 0.5 * (1.0 + np.cos(np.pi * s)), 0.0)


def _space_directions(space: SpaceModel) -> list:
    """Smooth spatial directions times component unit vectors.

    On a torus these are localized periodic bumps along the first axis (broad
    Fourier content, so oscillating coefficients are probed at all scales)
    plus the constant and first cosine modes of the remaining axes.
    """
    m = space.m
    if space.kind == "finite_dim":
        return [np.eye(m)[c] for c in range(m)]
    x = space.points()
    profiles = [np.ones(len(x))]
    for center in (0.3, 0.7, 0.5):
        dist = (x[:, 0] - center + 0.5) % 1.0 - 0.5
        profiles.append(raised_cosine(dist, 0.0, 0.25))
    for axis in range(1, space.d):
        if space.R[axis] > 2:
            profiles.append(np.cos(2 * np.pi * x[:, axis]))
    dirs = []
    for prof in profiles:
        for c in range(m):
            v = np.zeros((len(x), m))
            v[:, c] = prof
            dirs.append(v.ravel())
    return dirs


def make_test_dictionary(grid: TimeGrid, space: SpaceModel, size: int, seed: int = 0) -> TestDictionary:
    """Seeded, orthonormalized dictionary of smooth space-time bumps.

    Member ``j`` starts as a raised-cosine time envelope centred at a
    staggered (seed-jittered) time, times a smooth spatial direction.  The
    family is orthonormalized by modified Gram-Schmidt in the weighted inner
    product, so member 0 is the normalized first bump.  The condition number
    of the Gram matrix before orthonormalization is logged and stored.
    """
    size = int(size)
    if size < 1:
        raise ConfigInvalid("dictionary size must be >= 1")
    if space.n_dof == 0:
        raise ConfigInvalid("cannot build probes on a zero-dimensional space")
    rng = np.random.default_rng(seed)
    T = grid.horizon
    t = grid.times
    dirs = _space_directions(space)
    golden = 0.5 * (np.sqrt(5.0) - 1.0)
    half_width = T / 6.0
    raw = []
    j = 0
    while len(raw) < size and j < 50 * size + 50:
        frac = (0.5 + j * golden) % 1.0
        center = T * (0.2 + 0.6 * frac) + rng.uniform(-0.02, 0.02) * T
        env = raised_cosine(t, center, half_width)
        vec = dirs[j % len(dirs)]
        raw.append(np.outer(env, vec).astype(complex))
        j += 1
    gram = np.array([[_weighted_vdot(grid, space, a, b) for b in raw] for a in raw])
    gram_cond = float(np.linalg.cond(gram))
    logger.info("test dictionary size=%d gram condition number %.3e", size, gram_cond)
    members = []
    for vec in raw:
        v = vec.copy()
        for _ in range(2):  # re-orthogonalize once for stability
            for q in members:
                v -= _weighted_vdot(grid, space, q, v) * q
        nrm = np.sqrt(_weighted_vdot(grid, space, v, v).real)
        if nrm <= 1e-10 * np.sqrt(_weighted_vdot(grid, space, vec, vec).real):
            continue
        members.append(v / nrm)
    return TestDictionary(tuple(WeightedSignal(grid, space, v) for v in members), gram_cond)


def smooth_bump_signal(grid: TimeGrid, space: SpaceModel, spatial: Sequence | np.ndarray | None = None,
                       start: float | None = None, stop: float | None = None) -> WeightedSignal:
    """Right-hand side ``raised_cosine`` bump on ``[start, stop]`` times a spatial profile.

    Defaults to the window ``[T/8, T/2]``.  ``spatial`` is an array of
    length ``n_dof`` (default: all ones).
    """
    T = grid.horizon
    start = T / 8 if start is None else start
    stop = T / 2 if stop is None else stop
    env = raised_cosine(grid.times, 0.5 * (start + stop), 0.5 * (stop - start))
    prof = np.ones(space.n_dof) if spatial is None else np.asarray(spatial, dtype=complex).ravel()
    return WeightedSignal(grid, space, np.outer(env, prof))
