import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evohom.errors import (ConfigInvalid, NotCoercive, NotCoerciveOnCell, NotContractive, NotTranslationInvariant,
                           ScheduleTooShort)
from evohom.homogenizer import (CellFunction, OperatorSequence, assemble_block, assemble_symbol_valued,
                                assemble_time_independent, block_cell_averages, cell_average_product, cell_moments,
                                coercivity_chain_bound, deconvolve_kernel, extract_memory_kernel,
                                extrapolate_columns, homogenize_time_independent, join_signals, kernel_mass,
                                split_signal, time_periodic_limit, time_periodic_series, time_product_limit,
                                time_product_reference, time_product_sequence, wot_limit_estimate)
from evohom.operators import (Derivative, PointwiseOp, block_inv, compose, constant_op, hermitian_min_eig,
                              identity, multiplication_op, sum_ops)
from evohom.solver import EvoProblem, solve_neumann
from evohom.weighted_space import (SpaceModel, TimeGrid, WeightedSignal, make_test_dictionary, relative_error,
                                   smooth_bump_signal, weak_pairings)
from oracles import dense_block_solve

S1 = SpaceModel.finite_dim(1)


def pairing_matrix(op, d):
    return np.array([weak_pairings(op.apply(phi), d) for phi in d.members]).T


def bump(grid, space):
    return smooth_bump_signal(grid, space)


# ---------------------------------------------------------------- cell averages

@pytest.mark.parametrize("alpha,beta", [(1.0, 3.0), (2.0, 5.0), (0.5, 0.5)])
def test_inverse_average_gives_harmonic_mean(alpha, beta):
    a = CellFunction.two_valued(alpha, beta)
    avg = cell_average_product(a, None, 0)
    assert avg[0, 0] == pytest.approx((1 / alpha + 1 / beta) / 2, rel=1e-15)
    assert 1 / avg[0, 0].real == pytest.approx(2 * alpha * beta / (alpha + beta), rel=1e-14)


def test_first_and_second_moments_and_jensen_gap():
    a, b = CellFunction.constant(1.0), CellFunction.two_valued(0.0, 2.0)
    m = cell_moments(a, b, 3)
    assert m[1][0, 0] == pytest.approx(1.0)
    assert m[2][0, 0] == pytest.approx((0 + 4) / 2)
    assert m[2][0, 0].real - m[1][0, 0].real ** 2 == pytest.approx(1.0)
    assert cell_average_product(a, b, 2)[0, 0] == m[2][0, 0]


def test_moments_of_matrix_cell():
    A1 = np.array([[2.0, 0.5], [-0.5, 1.0]])
    A2 = np.array([[3.0, 0.0], [0.2, 2.0]])
    a = CellFunction.two_valued(A1, A2)
    expect = (np.linalg.inv(A1) + np.linalg.inv(A2)) / 2
    assert np.allclose(cell_average_product(a, None, 0), expect, rtol=1e-14)


def test_cell_average_rejects_non_coercive_cell():
    with pytest.raises(NotCoerciveOnCell):
        cell_average_product(CellFunction.two_valued(1.0, -1.0), None, 0)


def test_two_dimensional_cell_quadrature():
    a = CellFunction(2, 1, lambda y: 1.0 + (y[:, 0] < 0.5) + 2.0 * (y[:, 1] < 0.25), R=16)
    vals = np.array([1 + i + 2 * j for i in (0, 1) for j in (0, 0, 0, 1)], dtype=float)
    assert cell_average_product(a, None, 0)[0, 0] == pytest.approx(np.mean(1 / vals), rel=1e-14)


# ---------------------------------------------------------------- weak-operator limits

def test_wot_constant_sequence_is_exact():
    g, s = TimeGrid(2 ** -8, 256, 2.0), SpaceModel.finite_dim(2)
    A = constant_op(np.array([[1.0, 2.0], [0.0, 3.0]]), g, s)
    d = make_test_dictionary(g, s, 4)
    est = wot_limit_estimate(OperatorSequence(lambda n: A, (1, 2, 4)), d)
    assert est.converged and np.all(est.cauchy)
    assert np.array_equal(est.matrix, pairing_matrix(A, d))
    assert est.final_increment == 0.0


def test_wot_riemann_lebesgue_decay():
    g = TimeGrid(2 ** -10, 1024, 1.0)
    d = make_test_dictionary(g, S1, 3)
    seq = OperatorSequence(lambda n: multiplication_op(np.sin(2 * np.pi * n * g.times), g, S1), (8, 16, 32, 64, 128))
    est = wot_limit_estimate(seq, d)
    peak = np.max(np.abs(est.pairing_table), axis=1)
    assert np.all(np.diff(peak) < 0)
    assert peak[-1] <= 1e-3 * peak[0]
    assert np.max(np.abs(est.extrapolated[est.cauchy])) <= 1e-5


def test_wot_time_oscillation_tends_to_cell_mean():
    g = TimeGrid(2 ** -10, 1024, 1.0)
    d = make_test_dictionary(g, S1, 3)
    a = CellFunction.two_valued(1.0, 3.0)
    seq = OperatorSequence(lambda n: PointwiseOp(a.in_time(g, n), g, S1), (16, 32, 64, 128))
    est = wot_limit_estimate(seq, d)
    assert est.converged
    assert np.max(np.abs(est.matrix - 2.0 * np.eye(3))) <= 1e-3


def test_cell_average_fast_path_matches_wot_in_space():
    g, s = TimeGrid(2 ** -7, 128, 1.0), SpaceModel.torus_grid(1, 128, 1)
    a = CellFunction.two_valued(1.0, 3.0)
    d = make_test_dictionary(g, s, 3)
    seq = OperatorSequence(lambda n: PointwiseOp(a.on_space(s, n), g, s), (4, 8, 16, 32, 64))
    est = wot_limit_estimate(seq, d)
    fast = pairing_matrix(constant_op(a.mean(), g, s), d)
    assert est.converged
    assert np.max(np.abs(est.matrix - fast)) <= 1e-3


def test_wot_requires_three_points_and_valid_pairs():
    g = TimeGrid(0.05, 20, 1.0)
    d = make_test_dictionary(g, S1, 1)
    with pytest.raises(ScheduleTooShort):
        wot_limit_estimate(OperatorSequence(lambda n: identity(g, S1), (1, 2)), d)
    with pytest.raises(ConfigInvalid):
        wot_limit_estimate(OperatorSequence(lambda n: identity(g, S1), (1, 2, 4)), d, pairs="upper")
    with pytest.raises(ConfigInvalid):
        OperatorSequence(lambda n: None, (1, 4, 2))


def test_extrapolation_of_geometric_column():
    # p_n = 1 + 0.5**n: Aitken recovers the limit exactly for a geometric error
    table = (1.0 + 0.5 ** np.arange(1, 6))[:, None].astype(complex)
    lim, cauchy, rate, inc = extrapolate_columns(table)
    assert cauchy[0] and rate == pytest.approx(0.5)
    assert lim[0] == pytest.approx(1.0, abs=1e-15)
    growing = (2.0 ** np.arange(5))[:, None].astype(complex)
    lim, cauchy, _, _ = extrapolate_columns(growing)
    assert not cauchy[0] and np.isnan(lim[0])


# ---------------------------------------------------------------- time-independent assembly

def test_zero_corrections_give_plain_derivative():
    g, s = TimeGrid(1e-2, 100, 2.0), SpaceModel.finite_dim(2)
    M0 = np.array([[2.0, 0.3], [0.3, 1.0]])
    lim = assemble_time_independent([M0, np.zeros((2, 2))], grid=g, space=s)
    f = WeightedSignal.from_function(g, s, lambda t, x: np.concatenate([np.sin(t), t ** 2], axis=-1))
    expect = Derivative(g, s).apply(constant_op(np.linalg.inv(M0), g, s).apply(f))
    assert relative_error(lim.apply(f), expect) <= 1e-14
    assert lim.memory is None


def test_norm_convergent_coefficients_give_naive_limit():
    # M_n = M + E/n and N_n = N + F/n converge in norm: the limit is dt0 M + N
    g, s = TimeGrid(1e-3, 500, 4.0), SpaceModel.finite_dim(2)
    rng = np.random.default_rng(1)
    A = rng.standard_normal((2, 2))
    M = A @ A.T / 2 + np.eye(2)
    N = 0.5 * rng.standard_normal((2, 2))
    E, F = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
    n = 1e9
    model = homogenize_time_independent(CellFunction.constant(M + E / n), CellFunction.constant(N + F / n), L=60)
    lim = assemble_time_independent(model.M_hom, grid=g, space=s, growth=model.growth, tol=1e-12)
    d = make_test_dictionary(g, s, 4)
    naive = sum_ops([compose([Derivative(g, s), constant_op(M, g, s)]), constant_op(N, g, s)])
    P, Q = pairing_matrix(lim, d), pairing_matrix(naive, d)
    assert np.max(np.abs(P - Q)) <= 1e-6 * np.max(np.abs(Q))


def test_two_valued_a_gives_harmonic_mean_equation():
    g = TimeGrid(1e-2, 100, 2.0)
    model = homogenize_time_independent(CellFunction.two_valued(1.0, 3.0), None, L=4)
    lim = assemble_time_independent(model.M_hom, grid=g, space=S1)
    f = bump(g, S1)
    assert relative_error(lim.apply(f), Derivative(g, S1).apply(f * 1.5)) <= 1e-14
    u = lim.solve(f)
    ref = solve_neumann(EvoProblem(constant_op(1.5, g, S1), None, f)).u
    assert relative_error(u, ref) <= 1e-14


def test_assembly_guards():
    g = TimeGrid(1e-2, 50, 1.0)
    with pytest.raises(NotCoercive):
        assemble_time_independent([np.array([[-1.0]])], grid=g, space=S1)
    # ||M0^{-1} M1|| ||dt0^{-1}|| is about 2 at nu = 1: not contractive
    with pytest.raises(NotContractive):
        assemble_time_independent([np.array([[1.0]]), np.array([[2.0]])], grid=g, space=S1, growth=(1.0, 2.0))
    with pytest.raises(ConfigInvalid):
        assemble_time_independent([np.array([[1.0]])])


def test_tail_bounds_and_depths_recorded():
    g = TimeGrid(1e-3, 400, 4.0)
    model = homogenize_time_independent(CellFunction.constant(1.0), CellFunction.two_valued(0.0, 2.0), L=80)
    lim = assemble_time_independent(model.M_hom, grid=g, space=S1, growth=model.growth, tol=1e-10)
    t = lim.tails
    assert t["q_inner"] < 1 and t["x_norm"] < 1
    assert t["inner"] <= 1e-10 * model.growth[0] * 2 and t["outer"] <= 1e-10 * 2
    assert t["L"] <= 80 and t["J"] >= 1


def test_solution_operator_inverts_limit():
    g = TimeGrid(1e-3, 400, 4.0)
    model = homogenize_time_independent(CellFunction.constant(1.0), CellFunction.two_valued(0.0, 2.0), L=80)
    lim = assemble_time_independent(model.M_hom, grid=g, space=S1, growth=model.growth, tol=1e-12)
    f = bump(g, S1)
    assert relative_error(lim.apply(lim.solve(f)), f) <= 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_coercivity_chain(seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((16, 3, 3))
    K = rng.standard_normal((16, 3, 3))
    samples = B @ np.swapaxes(B, -1, -2) / 3 + 0.2 * np.eye(3) + 0.5 * (K - np.swapaxes(K, -1, -2))
    a = CellFunction(1, 3, lambda y: samples[np.minimum((y[:, 0] * 16).astype(int), 15)], R=16)
    M0 = cell_average_product(a, None, 0)
    eff = np.linalg.inv(M0)
    assert hermitian_min_eig(eff[None])[0] >= coercivity_chain_bound(a.samples()) * (1 - 1e-9)


# ---------------------------------------------------------------- memory kernels

def test_kernel_vanishes_without_zeroth_order_term():
    g = TimeGrid(2 ** -9, 1024, 4.0)
    model = homogenize_time_independent(CellFunction.two_valued(1.0, 3.0), None, L=10)
    lim = assemble_time_independent(model.M_hom, grid=g, space=S1)
    assert np.all(extract_memory_kernel(lim) == 0)


def test_kernel_vanishes_for_equal_values():
    g = TimeGrid(2 ** -9, 1024, 4.0)
    model = homogenize_time_independent(CellFunction.constant(1.0), CellFunction.two_valued(1.0, 1.0), L=200)
    lim = assemble_time_independent(model.M_hom, grid=g, space=S1, growth=model.growth, tol=1e-15)
    assert np.max(np.abs(extract_memory_kernel(lim))) <= 1e-9


def tartar_kernel(g, l1, l2):
    model = homogenize_time_independent(CellFunction.constant(1.0), CellFunction.two_valued(l1, l2), L=200)
    lim = assemble_time_independent(model.M_hom, grid=g, space=S1, growth=model.growth, tol=1e-15)
    return extract_memory_kernel(lim)


def test_kernel_mass_matches_brute_force_oscillating_solves():
    # brute force: impulse response of u_k' + b(k x) u_k = delta, averaged over the cell at large k,
    # then the kernel is read off per frequency from the averaged response
    g = TimeGrid(2 ** -9, 1024, 4.0)
    l1, l2 = 0.0, 2.0
    K = tartar_kernel(g, l1, l2)
    s = SpaceModel.torus_grid(1, 64, 1)
    b = CellFunction.two_valued(l1, l2)
    imp = np.zeros((g.n_steps, s.n_dof))
    imp[0] = 1.0 / g.dt
    u = solve_neumann(EvoProblem(identity(g, s), PointwiseOp(b.on_space(s, 32), g, s),
                                 WeightedSignal(g, s, imp)), tol=1e-13).u
    G = u.values.mean(axis=1)
    K_bf = deconvolve_kernel(G, g, 1.0, 0.5 * (l1 + l2))
    assert np.max(np.abs(K)) > 1e-2
    assert kernel_mass(K, g) == pytest.approx(kernel_mass(K_bf, g), rel=0.05)
    assert np.max(np.abs(K - K_bf)) <= 1e-6 * np.max(np.abs(K))


@settings(max_examples=5, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.3, 1.0))
def test_memory_dichotomy(l1, gap):
    g = TimeGrid(2 ** -8, 256, 4.0)
    assert np.max(np.abs(tartar_kernel(g, l1, l1))) <= 1e-9
    assert np.max(np.abs(tartar_kernel(g, l1, l1 + gap))) > 1e-3


def test_time_dependent_limit_has_no_kernel():
    g = TimeGrid(2 ** -6, 64, 4.0)
    model = homogenize_time_independent(CellFunction.constant(1.0), CellFunction.two_valued(0.0, 2.0), L=40)
    lim = assemble_time_independent(model.M_hom, grid=g, space=S1, growth=model.growth)
    ramp = multiplication_op(1.0 + g.times, g, S1)
    lim.memory = compose([ramp, lim.memory])
    with pytest.raises(NotTranslationInvariant):
        extract_memory_kernel(lim)


# ---------------------------------------------------------------- block assembly

def block_limits(M, N00, N01, N10, N11, L=40):
    c = CellFunction.constant
    return block_cell_averages(c(M), c(N00), c(N01), c(N10), c(N11), L=L)


def test_block_with_trivial_algebraic_part_reduces_to_time_independent():
    g, h0, h1 = TimeGrid(1e-2, 80, 4.0), SpaceModel.finite_dim(2), SpaceModel.finite_dim(0)
    M = np.array([[2.0, 0.2], [0.2, 1.0]])
    N = np.array([[0.5, 0.1], [0.0, 0.3]])
    model = homogenize_time_independent(CellFunction.constant(M), CellFunction.constant(N), L=40)
    lim = assemble_time_independent(model.M_hom, grid=g, space=h0, growth=model.growth, tol=1e-12)
    # the block families carry the sign: A00[l] = <M^{-1} (-N M^{-1})^l>
    A00 = [(-1) ** ell * M_l for ell, M_l in enumerate(model.M_hom)]
    B, S = assemble_block({"A00": A00, "N_hom": np.zeros((0, 0))}, g, h0, h1, tol=1e-12)
    f = WeightedSignal.from_function(g, h0, lambda t, x: np.concatenate([np.sin(3 * t), np.cos(t)], axis=-1))
    assert relative_error(B.apply(f), lim.apply(f)) <= 1e-9
    assert relative_error(S.apply(f), lim.solve(f)) <= 1e-9


def test_block_without_cross_terms_is_diagonal():
    g, h0, h1 = TimeGrid(1e-2, 80, 4.0), SpaceModel.finite_dim(1), SpaceModel.finite_dim(1)
    lim = block_cell_averages(CellFunction.constant(2.0), CellFunction.constant(0.5), None, None,
                              CellFunction.two_valued(1.0, 3.0), L=40)
    B, S = assemble_block(lim, g, h0, h1, tol=1e-12)
    f = bump(g, S1)
    u0, u1 = split_signal(S.apply(join_signals(f, WeightedSignal.zeros(g, S1))), 1)
    ref0 = solve_neumann(EvoProblem(constant_op(2.0, g, S1), constant_op(0.5, g, S1), f)).u
    assert relative_error(u0, ref0) <= 1e-9 and np.all(u1.values == 0)
    u0, u1 = split_signal(S.apply(join_signals(WeightedSignal.zeros(g, S1), f)), 1)
    assert np.all(u0.values == 0)
    assert relative_error(u1, f * (2.0 / 3.0)) <= 1e-14


@pytest.mark.parametrize("seed", range(3))
def test_block_limit_solution_matches_dense_limit_problem(seed):
    g, h0, h1 = TimeGrid(1e-2, 60, 4.0), SpaceModel.finite_dim(2), SpaceModel.finite_dim(1)
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2, 2))
    M = A @ A.T / 2 + np.eye(2)
    N11 = np.array([[1.5 + rng.random()]])
    N00, N01, N10 = 0.3 * rng.standard_normal((2, 2)), 0.3 * rng.standard_normal((2, 1)), 0.3 * rng.standard_normal((1, 2))
    # entries converge in norm, so the G-limit is the limit problem itself
    n = 1e9
    E = rng.standard_normal((2, 2)) / n
    lim = block_limits(M + E, N00, N01, N10, N11, L=60)
    _, S = assemble_block(lim, g, h0, h1, tol=1e-14)
    f0, f1 = rng.standard_normal((60, 2)), rng.standard_normal((60, 1))
    u = S.apply(join_signals(WeightedSignal(g, h0, f0), WeightedSignal(g, h1, f1)))
    d0, d1 = dense_block_solve(g, M, N00, N01, N10, N11, f0, f1)
    ref = join_signals(WeightedSignal(g, h0, d0), WeightedSignal(g, h1, d1))
    assert relative_error(u, ref) <= 1e-8


def test_block_guards():
    g, h0, h1 = TimeGrid(1e-2, 20, 1.0), SpaceModel.finite_dim(1), SpaceModel.finite_dim(1)
    with pytest.raises(NotCoercive):
        assemble_block({"A00": [np.eye(1)], "N_hom": -np.eye(1)}, g, h0, h1)
    with pytest.raises(NotContractive):
        assemble_block({"A00": [np.eye(1), 5 * np.eye(1)], "N_hom": np.eye(1)}, g, h0, h1)


def test_block_n11_average_is_mean_of_inverses():
    lim = block_cell_averages(None, None, None, None, CellFunction.two_valued(1.0, 3.0))
    assert lim["N_hom"][0, 0] == pytest.approx(2.0 / 3.0, rel=1e-15)
    assert abs(lim["N_hom"][0, 0] - 1 / 2.0) == pytest.approx(1.0 / 6.0)


# ---------------------------------------------------------------- symbol-valued assembly

def test_symbol_path_agrees_with_time_independent_path():
    g = TimeGrid(2 ** -9, 1024, 4.0)
    model = homogenize_time_independent(CellFunction.constant(1.0), CellFunction.two_valued(0.0, 2.0), L=80)
    lim = assemble_time_independent(model.M_hom, grid=g, space=S1, growth=model.growth, tol=1e-13)
    A00 = [(-1) ** ell * M_l for ell, M_l in enumerate(model.M_hom)]
    B, S = assemble_symbol_valued({"A00": A00, "N_hom": np.zeros((0, 0))}, g, S1, SpaceModel.finite_dim(0), tol=1e-13)
    d = make_test_dictionary(g, S1, 4)
    P = np.array([weak_pairings(S.apply(phi), d) for phi in d.members])
    Q = np.array([weak_pairings(lim.solve(phi), d) for phi in d.members])
    assert np.max(np.abs(P - Q)) <= 1e-8 * np.max(np.abs(Q))
    P = pairing_matrix(B, d)
    Q = pairing_matrix(lim, d)
    assert np.max(np.abs(P - Q)) <= 1e-8 * np.max(np.abs(Q))


def test_zero_kernel_symbol_is_identity():
    g = TimeGrid(2 ** -8, 256, 1.0)
    h0 = SpaceModel.finite_dim(0)
    B, S = assemble_symbol_valued({"N_hom": lambda z: np.ones((len(z), 1, 1))}, g, h0, S1)
    f = bump(g, S1)
    assert relative_error(S.apply(f), f) <= 1e-12
    assert relative_error(B.apply(f), f) <= 1e-12


def test_symbol_path_rejects_non_contractive_frequency():
    from evohom.errors import NotContractiveAtFrequency
    g = TimeGrid(2 ** -6, 64, 1.0)
    lim = {"A00": [np.eye(1), 5 * np.eye(1)], "N_hom": np.zeros((0, 0))}
    with pytest.raises(NotContractiveAtFrequency) as info:
        assemble_symbol_valued(lim, g, S1, SpaceModel.finite_dim(0))
    assert info.value.q >= 1


# ---------------------------------------------------------------- time-periodic limits

def test_time_periodic_closed_form_values():
    m = time_periodic_limit(CellFunction.two_valued(1.0, 3.0), CellFunction.constant(1.0))
    assert m.extra["M_eff"][0, 0] == pytest.approx(1.5, rel=1e-15)
    assert m.extra["N_eff"][0, 0] == pytest.approx(1.0, rel=1e-15)
    assert m.kind == "time_periodic_closed_form"
    m = time_periodic_limit(CellFunction.constant(2.0), CellFunction.constant(0.7))
    assert m.extra["M_eff"][0, 0] == pytest.approx(2.0) and m.extra["N_eff"][0, 0] == pytest.approx(0.7)
    m = time_periodic_limit(CellFunction.two_valued(1.0, 3.0), None)
    assert m.extra["N_eff"][0, 0] == 0
    with pytest.raises(NotCoerciveOnCell):
        time_periodic_limit(CellFunction.two_valued(1.0, -3.0))


def test_time_periodic_series_resums_to_closed_form():
    g = TimeGrid(2 ** -9, 1024, 4.0)
    model = time_periodic_series(CellFunction.two_valued(1.0, 3.0), CellFunction.constant(1.0), L=80)
    lim = assemble_time_independent(model.M_hom, grid=g, space=S1, growth=model.growth, tol=1e-12)
    closed = sum_ops([compose([Derivative(g, S1), constant_op(1.5, g, S1)]), identity(g, S1)])
    d = make_test_dictionary(g, S1, 4)
    P, Q = pairing_matrix(lim, d), pairing_matrix(closed, d)
    assert np.max(np.abs(P - Q)) <= 1e-7 * np.max(np.abs(Q))


def test_time_product_limits():
    c = CellFunction.constant(3.0)
    assert time_product_limit([c], 1)[0, 0] == 3.0
    wave = CellFunction(1, 1, lambda y: 2.0 + np.sin(2 * np.pi * y[:, 0]), R=64)
    assert time_product_limit([wave, wave])[0, 0] == pytest.approx(4.0, rel=1e-14)


def test_time_product_probe_converges():
    g = TimeGrid(2 ** -10, 1024, 2.0)
    wave = CellFunction(1, 1, lambda y: 2.0 + np.sin(2 * np.pi * y[:, 0]), R=64)
    seq = time_product_sequence([wave, wave], g, S1, (8, 16, 32, 64, 128))
    d = make_test_dictionary(g, S1, 3)
    est = wot_limit_estimate(seq, d)
    ref = pairing_matrix(time_product_reference([wave, wave], g, S1), d)
    err = np.max(np.abs(est.pairing_table - ref.ravel()[None, :]), axis=1)
    assert np.all(np.diff(err) < 0)
    assert err[-1] <= 1e-2


def test_homogenized_model_serializes():
    import json
    model = homogenize_time_independent(CellFunction.two_valued(1.0, 3.0), CellFunction.constant(0.5), L=3)
    data = json.loads(json.dumps(model.to_dict()))
    assert data["kind"] == "time_independent" and len(data["M_hom"]) == 4
    assert data["M_hom"][0]["re"][0][0] == pytest.approx(2 / 3)


def test_tartar_kernel_is_variance_weighted_exponential():
    # b in {b0 - delta, b0 + delta}: averaging the resolvents gives the kernel delta^2 exp(-b0 t);
    # the cell average of exp(-b t) (the averaged impulse response) is a different function
    l1, l2 = 0.0, 2.0
    b0, delta = 1.0, 1.0
    errs = []
    for n in (1024, 2048):
        g = TimeGrid(2.0 / n, n, 4.0)
        K = tartar_kernel(g, l1, l2)
        errs.append(np.max(np.abs(K - delta ** 2 * np.exp(-b0 * g.times))))
        averaged_response = 0.5 * (np.exp(-l1 * g.times) + np.exp(-l2 * g.times))
        assert np.max(np.abs(K - averaged_response)) > 0.3
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)
    assert errs[1] <= 1e-3


def test_limit_impulse_response_is_the_averaged_exponential():
    # the solution operator of the limit (not its memory kernel) reproduces the cell average of exp(-b t)
    errs = []
    for n in (512, 1024):
        g = TimeGrid(2.0 / n, n, 4.0)
        model = homogenize_time_independent(CellFunction.constant(1.0), CellFunction.two_valued(0.0, 2.0), L=200,
                                            nu=g.nu)
        lim = assemble_time_independent(model.M_hom, grid=g, space=S1, growth=model.growth, tol=1e-14)
        delta = np.zeros((n, 1))
        delta[0] = 1 / g.dt
        u = lim.solve(WeightedSignal(g, S1, delta)).values[:, 0]
        errs.append(np.max(np.abs(u - 0.5 * (1 + np.exp(-2 * g.times)))))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)
    assert errs[1] <= 2.5e-3
