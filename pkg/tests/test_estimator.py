import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from evohom.errors import ConfigInvalid
from evohom.estimator import CellHomogenizer, GConvergenceProbe, cell_from_samples
from evohom.homogenizer import CellFunction, OperatorSequence
from evohom.operators import PointwiseOp, constant_op
from evohom.solver import EvoProblem, solve_neumann
from evohom.weighted_space import SpaceModel, TimeGrid, relative_error, smooth_bump_signal


def test_params_and_clone():
    est = CellHomogenizer(L=12, tol=1e-6)
    assert est.get_params() == {"L": 12, "tol": 1e-6}
    c = clone(est.set_params(L=5))
    assert c.L == 5 and not hasattr(c, "model_")
    assert GConvergenceProbe(dict_size=3).get_params()["dict_size"] == 3


def test_unfitted_estimator_raises():
    g, s = TimeGrid(0.01, 10, 1.0), SpaceModel.finite_dim(1)
    with pytest.raises(NotFittedError):
        CellHomogenizer().predict(smooth_bump_signal(g, s))
    with pytest.raises(NotFittedError):
        GConvergenceProbe().score()


def test_harmonic_mean_and_prediction():
    est = CellHomogenizer().fit([1.0, 3.0])
    assert est.effective_coefficient_[0, 0] == pytest.approx(1.5, rel=1e-14)
    g, s = TimeGrid(1e-2, 100, 2.0), SpaceModel.finite_dim(1)
    f = smooth_bump_signal(g, s)
    ref = solve_neumann(EvoProblem(constant_op(1.5, g, s), None, f)).u
    assert relative_error(est.predict(f), ref) <= 1e-13


def test_fit_with_zeroth_order_samples():
    est = CellHomogenizer(L=3).fit([1.0, 1.0], [0.0, 2.0])
    assert [m[0, 0].real for m in est.M_hom_] == pytest.approx([1.0, 1.0, 2.0, 4.0])
    with pytest.raises(ConfigInvalid):
        CellHomogenizer().fit([1.0, 2.0], [0.0, 1.0, 2.0])


def test_cell_from_samples_shapes():
    c = cell_from_samples(np.array([[[2.0]], [[4.0]]]))
    assert c.m == 1 and np.allclose(c.samples(4)[:, 0, 0], [2, 2, 4, 4])
    with pytest.raises(ConfigInvalid):
        cell_from_samples(np.ones((2, 2)))


def test_probe_recovers_cell_mean():
    g, s = TimeGrid(2 ** -7, 128, 1.0), SpaceModel.torus_grid(1, 128, 1)
    a = CellFunction.two_valued(1.0, 3.0)
    seq = OperatorSequence(lambda n: PointwiseOp(a.on_space(s, n), g, s), (8, 16, 32, 64))
    probe = GConvergenceProbe(dict_size=3).fit(seq)
    assert probe.converged_
    assert probe.score() <= 0 and probe.score() > -1e-2
    d = probe.dictionary_
    direct = np.array([[np.vdot(d[i].values * g.weights[:, None], 2.0 * d[j].values).real * s.quad_weight
                        for j in range(3)] for i in range(3)])
    assert np.max(np.abs(probe.limit_matrix_ - direct)) <= 1e-3
