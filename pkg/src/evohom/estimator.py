"""scikit-learn style front end for cell homogenization and weak-limit probing.

These wrappers only adapt the functional API to ``fit``/``predict``
conventions (hyper-parameters in ``__init__``, learned state in trailing
underscore attributes), so they compose with ``clone`` and ``get_params``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigInvalid
from .homogenizer import (CellFunction, OperatorSequence, assemble_time_independent, homogenize_time_independent,
                          wot_limit_estimate)
from .weighted_space import WeightedSignal, make_test_dictionary


def cell_from_samples(samples, name="cell") -> CellFunction:
    """Piecewise-constant 1-d cell function from values on ``R`` equal sub-cells.

    ``samples`` has shape ``(R,)`` (scalar) or ``(R, m, m)``.  Cell averages
    over the returned function are exact at quadrature resolution ``R``.
    """
    v = np.asarray(samples, dtype=complex)
    if v.ndim not in (1, 3) or (v.ndim == 3 and v.shape[1] != v.shape[2]):
        raise ConfigInvalid(f"cell samples must have shape (R,) or (R, m, m), got {v.shape}")
    R = v.shape[0]

    def ev(y):
        return v[np.minimum((y[:, 0] * R).astype(int), R - 1)]

    return CellFunction(1, 1 if v.ndim == 1 else v.shape[-1], ev, R, name=name)


class CellHomogenizer(BaseEstimator):
    """Limit equation of ``dt0 a(k x) + b(k x)`` as ``k`` grows.

    Parameters
    ----------
    L : int
        Number of averaged coefficients kept.
    tol : float
        Tail tolerance of the assembled limit solution operator.

    Attributes
    ----------
    model_ : HomogenizedModel
    M_hom_ : list of ndarray
        Averaged coefficients ``<a^{-1} (b a^{-1})^l>``.
    effective_coefficient_ : ndarray
        ``M_hom_[0]^{-1}``, e.g. the harmonic mean for scalar ``a``.
    """

    def __init__(self, L: int = 40, tol: float = 1e-8):
        self.L = L
        self.tol = tol

    def fit(self, X, y=None):
        """``X`` holds the samples of ``a`` on the cell, ``y`` those of ``b`` (optional)."""
        a = cell_from_samples(X, "a")
        b = None if y is None else cell_from_samples(y, "b")
        if b is not None and b.R != a.R:
            raise ConfigInvalid("a and b must be sampled on the same cell grid")
        self.model_ = homogenize_time_independent(a, b, L=int(self.L))
        self.M_hom_ = [np.asarray(M) for M in self.model_.M_hom]
        self.effective_coefficient_ = np.linalg.inv(np.atleast_2d(self.M_hom_[0]))
        return self

    def limit_operator(self, grid, space):
        check_is_fitted(self, "model_")
        return assemble_time_independent(self.model_.M_hom, grid=grid, space=space, growth=self.model_.growth,
                                         tol=self.tol, model=self.model_)

    def predict(self, X: WeightedSignal) -> WeightedSignal:
        """Solution of the limit equation for the right-hand side ``X``."""
        return self.limit_operator(X.grid, X.space).solve(X)


class GConvergenceProbe(BaseEstimator):
    """Empirical weak-operator limit of an operator sequence on a probe dictionary.

    Parameters
    ----------
    dict_size, seed : int
        Size and seed of the orthonormal probe dictionary.
    pairs : "all", "diag" or list of (i, j)
    floor : float
        Relative increment below which a pairing column counts as settled.
    """

    def __init__(self, dict_size: int = 4, seed: int = 0, pairs="all", floor: float = 1e-12):
        self.dict_size = dict_size
        self.seed = seed
        self.pairs = pairs
        self.floor = floor

    def fit(self, X: OperatorSequence, y=None):
        op = X(X.schedule[0])
        self.dictionary_ = make_test_dictionary(op.grid, op.space_in, int(self.dict_size), int(self.seed))
        self.estimate_ = wot_limit_estimate(X, self.dictionary_, self.pairs, self.floor)
        self.limit_matrix_ = self.estimate_.matrix
        self.converged_ = self.estimate_.converged
        return self

    def score(self, X=None, y=None) -> float:
        """Negative final pairing increment (larger is better, zero for a settled sequence)."""
        check_is_fitted(self, "estimate_")
        return -float(self.estimate_.final_increment)
