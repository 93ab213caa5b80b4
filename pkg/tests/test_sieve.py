import numpy as np
import pytest
from scipy import stats

from sievemle.exceptions import ConvergenceError, FeasibilityError, SupportError
from sievemle.sieve import (
    SieveCopula,
    bernstein_basis,
    bernstein_basis_derivative,
    cell_index,
    check_feasible,
    empirical_init,
    free_parameter_count,
    project_feasible,
    uniform_weights,
)


def random_feasible(order, dim, seed):
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.05, 2.0, size=(order,) * dim)
    return project_feasible(raw)


# --- basis --------------------------------------------------------------


@pytest.mark.parametrize("degree", [0, 1, 2, 5, 12])
def test_basis_partition_of_unity(degree):
    u = np.linspace(0.0, 1.0, 37)
    b = bernstein_basis(u, degree)
    assert b.shape == (37, degree + 1)
    np.testing.assert_allclose(b.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(b >= 0.0)


@pytest.mark.parametrize("degree", [1, 3, 8, 20])
def test_basis_matches_binomial_pmf(degree):
    u = np.array([0.0, 0.013, 0.3, 0.5, 0.87, 1.0])
    b = bernstein_basis(u, degree)
    for i, ui in enumerate(u):
        np.testing.assert_allclose(
            b[i], stats.binom.pmf(np.arange(degree + 1), degree, ui), rtol=1e-12, atol=1e-15
        )


def test_basis_exact_at_boundaries():
    b = bernstein_basis(np.array([0.0, 1.0]), 6)
    expected0 = np.zeros(7)
    expected0[0] = 1.0
    expected1 = np.zeros(7)
    expected1[6] = 1.0
    np.testing.assert_array_equal(b[0], expected0)
    np.testing.assert_array_equal(b[1], expected1)


@pytest.mark.parametrize("degree", [1, 2, 4, 9])
def test_basis_derivative_matches_finite_differences(degree):
    u = np.linspace(0.05, 0.95, 11)
    h = 1e-6
    fd = (bernstein_basis(u + h, degree) - bernstein_basis(u - h, degree)) / (2 * h)
    np.testing.assert_allclose(bernstein_basis_derivative(u, degree), fd, rtol=1e-6, atol=1e-7)


def test_basis_derivative_degree_zero_is_flat():
    np.testing.assert_array_equal(
        bernstein_basis_derivative(np.array([0.2, 0.9]), 0), np.zeros((2, 1))
    )


# --- polytope -----------------------------------------------------------


def test_free_parameter_count():
    assert free_parameter_count(2, 2) == 1
    assert free_parameter_count(5, 2) == 16
    assert free_parameter_count(9, 2) == 64
    assert free_parameter_count(5, 3) == 112
    for order in range(2, 12):
        assert free_parameter_count(order, 2) == (order - 1) ** 2


def test_uniform_weights_are_feasible():
    for order, dim in [(2, 2), (7, 2), (4, 3)]:
        check_feasible(uniform_weights(order, dim))


def test_check_feasible_rejects_bad_tensors():
    with pytest.raises(FeasibilityError):
        check_feasible(np.array([[0.6, -0.1], [-0.1, 0.6]]))
    with pytest.raises(FeasibilityError):
        check_feasible(np.array([[0.5, 0.1], [0.1, 0.3]]))
    with pytest.raises(FeasibilityError):
        check_feasible(np.ones((2, 3)) / 6)


def test_project_feasible_frozen_two_by_two():
    # floored identity: cross-ratio 1e12 is preserved, so the limit solves
    # a/b = 1e6 with a + b = 1/2
    out = project_feasible(np.eye(2))
    a = 0.4999995000005
    b = 4.999995000005e-07
    np.testing.assert_allclose(out, [[a, b], [b, a]], rtol=1e-9)


def test_project_feasible_preserves_cross_ratios():
    rng = np.random.default_rng(7)
    t = rng.uniform(0.1, 2.0, size=(3, 3))
    r = project_feasible(t)
    before = t[0, 0] * t[1, 1] / (t[0, 1] * t[1, 0])
    after = r[0, 0] * r[1, 1] / (r[0, 1] * r[1, 0])
    np.testing.assert_allclose(after, before, rtol=1e-8)


def test_project_feasible_idempotent():
    w = random_feasible(5, 2, seed=3)
    again = project_feasible(w, floor=0.0)
    np.testing.assert_allclose(again, w, atol=1e-12)


def test_project_feasible_keeps_weights_positive():
    raw = np.zeros((4, 4))
    raw[0, 0] = 1.0
    out = project_feasible(raw)
    assert np.all(out > 0.0)
    check_feasible(out, tol=1e-9)


def test_project_feasible_warm_start_matches_cold():
    rng = np.random.default_rng(11)
    raw = rng.uniform(0.1, 1.0, size=(6, 6))
    cold, scalings = project_feasible(raw, return_scalings=True)
    bumped = raw.copy()
    bumped[2, 3] *= 1.01
    warm = project_feasible(bumped, scalings=scalings)
    ref = project_feasible(bumped)
    np.testing.assert_allclose(warm, ref, atol=1e-9)


def test_project_feasible_rejects_negative_input():
    with pytest.raises(FeasibilityError):
        project_feasible(np.array([[0.5, -0.2], [0.1, 0.6]]))


def test_project_feasible_reports_non_convergence():
    rng = np.random.default_rng(0)
    raw = rng.uniform(0.1, 1.0, size=(8, 8))
    with pytest.raises(ConvergenceError):
        project_feasible(raw, max_sweeps=1, tol=1e-15)


def test_project_feasible_three_dimensional():
    w = random_feasible(4, 3, seed=21)
    check_feasible(w, tol=1e-9)
    assert w.shape == (4, 4, 4)


# --- density ------------------------------------------------------------


def test_uniform_weights_give_flat_density():
    for order, dim in [(2, 2), (6, 2), (3, 3)]:
        cop = SieveCopula(uniform_weights(order, dim))
        rng = np.random.default_rng(5)
        pts = rng.uniform(size=(40, dim))
        pts[0] = 0.0
        pts[1] = 1.0
        np.testing.assert_allclose(cop.density(pts), 1.0, atol=1e-12)


def test_order_two_hand_case():
    # c(u, v) = 4 * (0.5 b0(u) b0(v) + 0.5 b1(u) b1(v)) = 2(1-u)(1-v) + 2uv
    cop = SieveCopula(np.array([[0.5, 0.0], [0.0, 0.5]]))
    assert cop.density(np.array([0.0, 0.0])) == pytest.approx(2.0, abs=1e-14)
    assert cop.density(np.array([1.0, 0.0])) == pytest.approx(0.0, abs=1e-14)
    assert cop.density(np.array([0.5, 0.5])) == pytest.approx(1.0, abs=1e-14)
    grad = cop.dlogdensity_du(np.array([0.5, 0.5]))
    np.testing.assert_allclose(grad, [0.0, 0.0], atol=1e-14)


def test_density_matches_brute_force_sum():
    w = random_feasible(4, 2, seed=9)
    cop = SieveCopula(w)
    rng = np.random.default_rng(2)
    pts = rng.uniform(size=(10, 2))
    b1 = bernstein_basis(pts[:, 0], 3)
    b2 = bernstein_basis(pts[:, 1], 3)
    brute = np.zeros(10)
    for v1 in range(4):
        for v2 in range(4):
            brute += w[v1, v2] * b1[:, v1] * b2[:, v2]
    brute *= 16.0
    np.testing.assert_allclose(cop.density(pts), brute, rtol=1e-12)


def test_density_integrates_to_one():
    w = random_feasible(5, 2, seed=13)
    cop = SieveCopula(w)
    nodes, wts = np.polynomial.legendre.leggauss(48)
    nodes = 0.5 * (nodes + 1.0)
    wts = 0.5 * wts
    uu, vv = np.meshgrid(nodes, nodes, indexing="ij")
    grid = np.column_stack([uu.ravel(), vv.ravel()])
    total = np.sum(cop.density(grid) * np.outer(wts, wts).ravel())
    assert total == pytest.approx(1.0, abs=1e-10)


def test_density_has_uniform_margins():
    # slice-sum feasibility is exactly marginal uniformity
    w = random_feasible(6, 2, seed=17)
    cop = SieveCopula(w)
    nodes, wts = np.polynomial.legendre.leggauss(48)
    nodes = 0.5 * (nodes + 1.0)
    wts = 0.5 * wts
    for u1 in [0.08, 0.35, 0.62, 0.91]:
        pts = np.column_stack([np.full(nodes.size, u1), nodes])
        assert np.sum(cop.density(pts) * wts) == pytest.approx(1.0, abs=1e-10)


def test_density_permutation_symmetry():
    w = random_feasible(4, 2, seed=23)
    sym = 0.5 * (w + w.T)
    cop = SieveCopula(sym)
    rng = np.random.default_rng(3)
    pts = rng.uniform(size=(20, 2))
    np.testing.assert_allclose(cop.density(pts), cop.density(pts[:, ::-1]), rtol=1e-12)


def test_density_rejects_points_outside_cube():
    cop = SieveCopula(uniform_weights(3, 2))
    with pytest.raises(SupportError):
        cop.density(np.array([1.2, 0.5]))
    with pytest.raises(SupportError):
        cop.density(np.array([-0.1, 0.5]))


def test_gradient_matches_finite_differences():
    for order, dim, seed in [(5, 2, 31), (3, 3, 32)]:
        cop = SieveCopula(random_feasible(order, dim, seed))
        rng = np.random.default_rng(seed + 100)
        pts = rng.uniform(0.05, 0.95, size=(15, dim))
        grad = cop.dlogdensity_du(pts)
        h = 1e-6
        for l in range(dim):
            up = pts.copy()
            up[:, l] += h
            dn = pts.copy()
            dn[:, l] -= h
            fd = (np.log(cop.density(up)) - np.log(cop.density(dn))) / (2 * h)
            np.testing.assert_allclose(grad[:, l], fd, rtol=1e-6, atol=1e-7)


def test_gradient_requires_interior_points():
    cop = SieveCopula(uniform_weights(3, 2))
    with pytest.raises(SupportError):
        cop.dlogdensity_du(np.array([0.0, 0.5]))


# --- empirical initialisation -------------------------------------------


def test_cell_index_boundary_rules():
    idx = cell_index(np.array([0.0, 0.1, 0.25, 0.2500001, 0.9999, 1.0]), 4)
    np.testing.assert_array_equal(idx, [0, 0, 0, 1, 3, 3])


def test_cell_index_rejects_outside_cube():
    with pytest.raises(SupportError):
        cell_index(np.array([1.0001]), 4)


def test_empirical_init_balanced_lattice_is_uniform():
    order = 4
    centers = (np.arange(order) + 0.5) / order
    uu, vv = np.meshgrid(centers, centers, indexing="ij")
    pts = np.column_stack([uu.ravel(), vv.ravel()])
    cop = empirical_init(pts, order)
    np.testing.assert_allclose(cop.weights, uniform_weights(order, 2), atol=1e-9)


def test_empirical_init_output_is_feasible():
    rng = np.random.default_rng(41)
    pts = rng.uniform(size=(500, 2))
    cop = empirical_init(pts, 9)
    check_feasible(cop.weights, tol=1e-9)
    assert np.all(cop.weights > 0.0)


def test_empirical_init_tracks_concentration():
    # points piled on the diagonal put most mass on diagonal cells
    rng = np.random.default_rng(43)
    base = rng.uniform(size=(2000, 1))
    pts = np.hstack([base, np.clip(base + rng.normal(0, 0.01, size=base.shape), 0, 1)])
    cop = empirical_init(pts, 5)
    diag = np.trace(cop.weights)
    assert diag > 0.8


def test_empirical_init_rejects_empty_input():
    with pytest.raises(ValueError):
        empirical_init(np.empty((0, 2)), 3)


# --- sampling -----------------------------------------------------------


def test_sample_margins_and_rank_correlation():
    w = random_feasible(3, 2, seed=51)
    cop = SieveCopula(w)
    pts = cop.sample(200_000, seed=7)
    assert pts.shape == (200_000, 2)
    assert np.all((pts > 0.0) & (pts < 1.0))
    for l in range(2):
        srt = np.sort(pts[:, l])
        ks = np.abs(srt - (np.arange(1, srt.size + 1) - 0.5) / srt.size).max()
        assert ks < 0.01
    # grade correlation in closed form: coordinate l of cell v is Beta(v_l+1, J-v_l)
    j = 3
    means = (np.arange(j) + 1.0) / (j + 1.0)
    expected = 12.0 * np.einsum("ab,a,b->", w, means, means) - 3.0
    observed = 12.0 * np.mean(pts[:, 0] * pts[:, 1]) - 3.0
    assert observed == pytest.approx(expected, abs=0.02)


def test_sample_deterministic_given_seed():
    cop = SieveCopula(uniform_weights(4, 2))
    np.testing.assert_array_equal(cop.sample(50, seed=3), cop.sample(50, seed=3))


# --- serialization ------------------------------------------------------


def test_csv_round_trip(tmp_path):
    w = random_feasible(4, 2, seed=61)
    cop = SieveCopula(w)
    path = tmp_path / "weights.csv"
    cop.to_csv(path)
    text = path.read_text().splitlines()
    assert text[0] == "v1,v2,weight"
    back = SieveCopula.from_csv(path)
    np.testing.assert_array_equal(back.weights, cop.weights)


def test_csv_round_trip_three_dims(tmp_path):
    cop = SieveCopula(random_feasible(3, 3, seed=67))
    path = tmp_path / "weights3.csv"
    cop.to_csv(path)
    back = SieveCopula.from_csv(path)
    np.testing.assert_array_equal(back.weights, cop.weights)
    assert back.dim == 3


def test_dict_round_trip():
    cop = SieveCopula(random_feasible(5, 2, seed=71))
    back = SieveCopula.from_dict(cop.to_dict())
    np.testing.assert_array_equal(back.weights, cop.weights)
    assert back.order == 5 and back.dim == 2
