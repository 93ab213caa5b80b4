import json

import numpy as np
import pytest
from scipy import optimize

from sievemle.copulas import GaussianCopula, IndependenceCopula, PlackettCopula
from sievemle.estimate import (
    FitResult,
    IndependenceAssumed,
    JointModelSpec,
    ParametricDependence,
    SieveDependence,
    _phi_gradient,
    fit_fmle,
    fit_qmle,
    fit_smle,
    pseudo_observations,
    select_order,
    spec_from_dict,
    spec_to_dict,
)
from sievemle.exceptions import DataError
from sievemle.marginals import Exponential, Gaussian, GaussianFixedVariance, StudentT
from sievemle.sieve import check_feasible, project_feasible, uniform_weights


def exp_pair_spec(dependence=None):
    return JointModelSpec(
        (Exponential(1.0), Exponential(1.0)),
        dependence if dependence is not None else IndependenceAssumed(),
    )


# --- QMLE -----------------------------------------------------------------


def test_qmle_exponential_closed_form():
    data = np.array([[1.0], [2.0], [3.0]])
    spec = JointModelSpec((Exponential(1.0),), IndependenceAssumed())
    fit = fit_qmle(data, spec)
    assert fit.beta_hat[0] == 2.0
    assert fit.loglik == pytest.approx(-3.0 * np.log(2.0) - 3.0, abs=1e-12)
    assert fit.converged and fit.n_iter == 0
    assert fit.beta_names == ("m1.mu",)


def test_qmle_two_columns_are_column_means():
    rng = np.random.default_rng(1)
    data = rng.exponential([0.5, 2.0], size=(400, 2))
    fit = fit_qmle(data, exp_pair_spec())
    np.testing.assert_allclose(fit.beta_hat, data.mean(axis=0), rtol=1e-12)


def test_qmle_gaussian_closed_form():
    rng = np.random.default_rng(2)
    data = rng.normal(1.5, 0.7, size=(300, 1))
    fit = fit_qmle(data, JointModelSpec((Gaussian(0.0, 1.0),), IndependenceAssumed()))
    assert fit.beta_hat[0] == pytest.approx(data.mean(), abs=1e-12)
    assert fit.beta_hat[1] == pytest.approx(data.std(), abs=1e-12)


def test_qmle_numeric_student_t():
    rng = np.random.default_rng(3)
    data = (0.3 + 0.8 * rng.standard_t(6, size=4000))[:, None]
    spec = JointModelSpec((StudentT(0.0, 1.0, 8.0),), IndependenceAssumed())
    fit = fit_qmle(data, spec)
    mu, sigma, nu = fit.beta_hat
    assert mu == pytest.approx(0.3, abs=0.06)
    assert sigma == pytest.approx(0.8, abs=0.06)
    assert 3.5 < nu < 12.0
    # stationarity of the average score at the optimum
    score_sum = fit.marginals_hat[0].score(data[:, 0]).sum(axis=0)
    assert np.max(np.abs(score_sum)) / data.shape[0] < 1e-5


def test_qmle_shared_mean_matches_direct_optimizer():
    rng = np.random.default_rng(4)
    y1 = rng.normal(0.7, 0.5, size=500)
    y2 = rng.normal(0.7, 2.0, size=500)
    data = np.column_stack([y1, y2])
    spec = JointModelSpec(
        (Gaussian(0.0, 1.0), Gaussian(0.0, 1.0)),
        IndependenceAssumed(),
        shared=(((0, 0), (1, 0)),),
    )
    fit = fit_qmle(data, spec)
    assert fit.beta_names == ("m1.mu&m2.mu", "m1.sigma", "m2.sigma")

    def negloglik(theta):
        mu, ls1, ls2 = theta
        s1, s2 = np.exp(ls1), np.exp(ls2)
        t1 = -0.5 * np.sum(((y1 - mu) / s1) ** 2) - y1.size * np.log(s1)
        t2 = -0.5 * np.sum(((y2 - mu) / s2) ** 2) - y2.size * np.log(s2)
        return -(t1 + t2)

    ref = optimize.minimize(negloglik, [0.0, 0.0, 0.0], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 5000})
    mu_ref, s1_ref, s2_ref = ref.x[0], np.exp(ref.x[1]), np.exp(ref.x[2])
    np.testing.assert_allclose(fit.beta_hat, [mu_ref, s1_ref, s2_ref], rtol=1e-5)
    # shared slot: both fitted marginals carry the same mean
    assert fit.marginals_hat[0].mu == fit.marginals_hat[1].mu


def test_qmle_rejects_bad_data():
    spec = exp_pair_spec()
    with pytest.raises(DataError):
        fit_qmle(np.ones((5, 3)), spec)
    with pytest.raises(DataError):
        fit_qmle(np.array([[1.0, np.nan]]), spec)
    with pytest.raises(ValueError):
        fit_qmle(np.ones((5, 2)), exp_pair_spec(SieveDependence(3)))


def test_spec_rejects_invalid_sharing():
    margs = (Gaussian(0.0, 1.0), Gaussian(0.0, 1.0), Exponential(1.0))
    with pytest.raises(ValueError):
        JointModelSpec(margs, IndependenceAssumed(), shared=(((0, 0),),))
    with pytest.raises(ValueError):
        JointModelSpec(
            margs, IndependenceAssumed(), shared=(((0, 0), (1, 0)), ((1, 0), (2, 0)))
        )
    with pytest.raises(ValueError):
        JointModelSpec(margs, IndependenceAssumed(), shared=(((0, 0), (2, 0)),))


# --- FMLE -----------------------------------------------------------------


def test_fmle_independence_family_equals_qmle():
    rng = np.random.default_rng(5)
    data = rng.exponential([0.5, 1.0], size=(600, 2))
    qmle = fit_qmle(data, exp_pair_spec())
    fmle = fit_fmle(data, exp_pair_spec(ParametricDependence(IndependenceCopula(2))))
    np.testing.assert_allclose(fmle.beta_hat, qmle.beta_hat, atol=1e-8)
    assert fmle.loglik == pytest.approx(qmle.loglik, abs=1e-8)


def test_fmle_gaussian_equals_bivariate_normal_mle():
    # with Gaussian margins and a Gaussian copula, the joint model is exactly
    # the bivariate normal, whose MLE is the sample moments
    rng = np.random.default_rng(6)
    cov = np.array([[1.0, 0.9], [0.9, 2.25]])
    data = rng.multivariate_normal([1.0, -2.0], cov, size=2500)
    spec = JointModelSpec(
        (Gaussian(0.0, 1.0), Gaussian(0.0, 1.0)),
        ParametricDependence(GaussianCopula(0.0)),
    )
    fit = fit_fmle(data, spec)
    np.testing.assert_allclose(
        fit.beta_hat,
        [data[:, 0].mean(), data[:, 0].std(), data[:, 1].mean(), data[:, 1].std()],
        rtol=1e-6,
    )
    rho_hat = np.corrcoef(data.T)[0, 1]
    assert fit.dependence_hat.rho == pytest.approx(rho_hat, abs=1e-6)
    assert fit.converged


def test_fmle_recovers_plackett_dependence():
    rng_seed = 7
    cop = PlackettCopula(0.05)
    u = cop.sample(4000, seed=rng_seed)
    data = np.column_stack(
        [Exponential(0.5).quantile(u[:, 0]), Exponential(1.0).quantile(u[:, 1])]
    )
    fit = fit_fmle(data, exp_pair_spec(ParametricDependence(PlackettCopula(1.5))))
    assert fit.beta_hat[0] == pytest.approx(0.5, abs=0.05)
    assert fit.beta_hat[1] == pytest.approx(1.0, abs=0.1)
    assert np.log(fit.dependence_hat.gamma) == pytest.approx(np.log(0.05), abs=0.35)
    qmle = fit_qmle(data, exp_pair_spec())
    assert fit.loglik > qmle.loglik + 100.0


def test_fmle_fix_dependence_keeps_copula():
    rng = np.random.default_rng(8)
    data = rng.exponential(1.0, size=(300, 2))
    cop = GaussianCopula(0.4)
    fit = fit_fmle(data, exp_pair_spec(ParametricDependence(cop)), fix_dependence=True)
    assert fit.dependence_hat.rho == 0.4


def test_fmle_student_t_margin_fd_gradient_path():
    # a marginal without closed-form cdf parameter gradients exercises the
    # finite-difference branch
    rng = np.random.default_rng(9)
    cop = GaussianCopula(0.5)
    u = cop.sample(800, seed=10)
    data = np.column_stack(
        [Exponential(1.0).quantile(u[:, 0]), StudentT(0.0, 1.0, 6.0).quantile(u[:, 1])]
    )
    spec = JointModelSpec(
        (Exponential(1.0), StudentT(0.0, 1.2, 8.0)),
        ParametricDependence(GaussianCopula(0.0)),
    )
    fit = fit_fmle(data, spec)
    assert fit.dependence_hat.rho == pytest.approx(0.5, abs=0.08)
    assert fit.beta_hat[0] == pytest.approx(1.0, abs=0.12)


# --- SMLE -----------------------------------------------------------------


def test_phi_gradient_matches_finite_differences():
    # the analytic derivative through the Sinkhorn projection is the pillar
    # of SMLE performance; verify it against brute-force differences
    for dim, order, seed in [(2, 4, 11), (3, 3, 12)]:
        rng = np.random.default_rng(seed)
        phi = rng.normal(-np.log(order**dim), 0.4, size=(order,) * dim)
        mat = rng.uniform(0.2, 2.0, size=(50, order**dim))

        def value(p):
            w = project_feasible(np.exp(p), floor=1e-6, tol=1e-13)
            return float(np.sum(np.log(mat @ w.ravel())))

        w0 = project_feasible(np.exp(phi), floor=1e-6, tol=1e-13)
        dens = mat @ w0.ravel()
        q = (mat.T @ (1.0 / dens)).reshape(w0.shape)
        active = np.exp(phi) > 1e-6
        grad = _phi_gradient(w0, q, active)
        h = 1e-6
        for idx in [(0,) * dim, (1,) * dim, (order - 1,) * dim, (0, 1) + (0,) * (dim - 2)]:
            pp = phi.copy()
            pp[idx] += h
            pm = phi.copy()
            pm[idx] -= h
            fd = (value(pp) - value(pm)) / (2 * h)
            assert grad[idx] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_phi_gradient_zero_along_rescaling():
    # adding a constant to every phi entry leaves the projection unchanged,
    # so the gradient must sum to zero
    rng = np.random.default_rng(13)
    phi = rng.normal(-2.5, 0.3, size=(4, 4))
    mat = rng.uniform(0.2, 2.0, size=(30, 16))
    w = project_feasible(np.exp(phi), floor=1e-6, tol=1e-13)
    q = (mat.T @ (1.0 / (mat @ w.ravel()))).reshape(4, 4)
    grad = _phi_gradient(w, q, np.ones((4, 4), dtype=bool))
    assert abs(grad.sum()) < 1e-8


def test_smle_independence_dgp_stays_near_uniform():
    rng = np.random.default_rng(14)
    data = rng.exponential([1.0, 2.0], size=(2000, 2))
    spec = exp_pair_spec(SieveDependence(5))
    fit = fit_smle(data, spec)
    qmle = fit_qmle(data, exp_pair_spec())
    np.testing.assert_allclose(fit.beta_hat, qmle.beta_hat, rtol=0.02)
    # the weight tensor itself is only set-identified (overlapping basis);
    # what converges to uniformity is the density it induces
    grid = np.linspace(0.05, 0.95, 13)
    uu, vv = np.meshgrid(grid, grid)
    dens = fit.dependence_hat.density(np.column_stack([uu.ravel(), vv.ravel()]))
    assert np.max(np.abs(dens - 1.0)) < 0.35
    # never below the feasible baseline (QMLE marginals, uniform weights)
    assert fit.loglik >= qmle.loglik - 1e-9
    check_feasible(fit.dependence_hat.weights, tol=1e-6)


def test_smle_dependent_dgp_beats_qmle():
    cop = PlackettCopula(0.05)
    u = cop.sample(1000, seed=15)
    data = np.column_stack(
        [Exponential(0.5).quantile(u[:, 0]), Exponential(1.0).quantile(u[:, 1])]
    )
    fit = fit_smle(data, exp_pair_spec(SieveDependence(9)))
    qmle = fit_qmle(data, exp_pair_spec())
    assert fit.loglik > qmle.loglik + 50.0
    assert fit.beta_hat[0] == pytest.approx(0.5, abs=0.08)
    assert fit.beta_hat[1] == pytest.approx(1.0, abs=0.15)
    assert fit.method == "smle"
    assert fit.criterion_values["aic"] == pytest.approx(
        2 * (64 + 2) - 2 * fit.loglik, abs=1e-9
    )


def test_smle_is_bitwise_reproducible():
    u = PlackettCopula(0.2).sample(400, seed=16)
    data = np.column_stack(
        [Exponential(1.0).quantile(u[:, 0]), Exponential(1.0).quantile(u[:, 1])]
    )
    spec = exp_pair_spec(SieveDependence(4))
    a = fit_smle(data, spec)
    b = fit_smle(data, spec)
    np.testing.assert_array_equal(a.beta_hat, b.beta_hat)
    np.testing.assert_array_equal(a.dependence_hat.weights, b.dependence_hat.weights)
    assert a.loglik == b.loglik


def test_smle_warns_when_histogram_underpopulated():
    rng = np.random.default_rng(17)
    data = rng.exponential(1.0, size=(20, 2))
    with pytest.warns(RuntimeWarning):
        fit_smle(data, exp_pair_spec(SieveDependence(5)))


# --- order selection --------------------------------------------------------


def test_select_order_single_element_grid():
    rng = np.random.default_rng(18)
    data = rng.exponential(1.0, size=(300, 2))
    sel = select_order(data, exp_pair_spec(), [3])
    assert sel.j_star == 3
    assert len(sel.rows) == 1
    assert sel.rows[0]["order"] == 3


def test_select_order_criterion_arithmetic():
    rng = np.random.default_rng(19)
    data = rng.exponential(1.0, size=(400, 2))
    sel = select_order(data, exp_pair_spec(), [2, 3], criterion="bic")
    n = 400
    for row in sel.rows:
        j = row["order"]
        k = (j - 1) ** 2 + 2
        assert row["aic"] == pytest.approx(2 * k - 2 * row["loglik"], abs=1e-9)
        assert row["bic"] == pytest.approx(k * np.log(n) - 2 * row["loglik"], abs=1e-9)
    assert sel.j_star in (2, 3)
    assert sel.fits[sel.j_star].method == "smle"


def test_select_order_loglik_nondecreasing_in_order():
    u = PlackettCopula(0.1).sample(800, seed=20)
    data = np.column_stack(
        [Exponential(1.0).quantile(u[:, 0]), Exponential(1.0).quantile(u[:, 1])]
    )
    sel = select_order(data, exp_pair_spec(), [2, 4, 6])
    logliks = [r["loglik"] for r in sel.rows]
    assert logliks[0] <= logliks[1] + 1e-6 and logliks[1] <= logliks[2] + 1e-6


def test_select_order_rejects_bad_input():
    rng = np.random.default_rng(21)
    data = rng.exponential(1.0, size=(100, 2))
    with pytest.raises(ValueError):
        select_order(data, exp_pair_spec(), [])
    with pytest.raises(ValueError):
        select_order(data, exp_pair_spec(), [3], criterion="hqc")


# --- serialization -----------------------------------------------------------


def test_fit_result_json_round_trip():
    rng = np.random.default_rng(22)
    data = rng.exponential([1.0, 0.5], size=(200, 2))
    fit = fit_smle(data, exp_pair_spec(SieveDependence(3)))
    payload = json.loads(json.dumps(fit.to_dict()))
    back = FitResult.from_dict(payload)
    np.testing.assert_array_equal(back.beta_hat, fit.beta_hat)
    np.testing.assert_array_equal(back.dependence_hat.weights, fit.dependence_hat.weights)
    assert back.loglik == fit.loglik
    assert back.method == fit.method
    assert back.criterion_values == fit.criterion_values


def test_spec_dict_round_trip():
    spec = JointModelSpec(
        (Gaussian(0.1, 2.0), Gaussian(0.1, 1.0)),
        ParametricDependence(GaussianCopula(0.3)),
        shared=(((0, 0), (1, 0)),),
    )
    back = spec_from_dict(json.loads(json.dumps(spec_to_dict(spec))))
    assert back.shared == spec.shared
    assert isinstance(back.dependence, ParametricDependence)
    assert back.dependence.copula.rho == pytest.approx(0.3)
    sieve_spec = exp_pair_spec(SieveDependence(7))
    back2 = spec_from_dict(spec_to_dict(sieve_spec))
    assert isinstance(back2.dependence, SieveDependence) and back2.dependence.order == 7
    indep = spec_from_dict(spec_to_dict(exp_pair_spec()))
    assert isinstance(indep.dependence, IndependenceAssumed)


def test_pseudo_observations_are_clamped():
    marg = Exponential(1.0)
    u = pseudo_observations([marg, marg], np.array([[1e-18, 50.0]]))
    assert u[0, 0] >= 1e-10
    assert u[0, 1] <= 1.0 - 1e-10


# --- weights-only sieve fit ------------------------------------------------


def test_fit_sieve_density_recovers_dependence():
    from sievemle.estimate import fit_sieve_density

    cop = PlackettCopula(0.05)
    u = cop.sample(5000, seed=6)
    fitted = fit_sieve_density(u, 4)
    check_feasible(fitted.weights)
    # the fitted density must explain the sample far better than uniform
    gain = float(np.sum(np.log(fitted.density(u))))
    assert gain > 500.0
    # and track the true density where mass concentrates
    grid = np.column_stack([np.linspace(0.05, 0.95, 19), np.linspace(0.95, 0.05, 19)])
    corr = np.corrcoef(fitted.density(grid), cop.density(grid))[0, 1]
    assert corr > 0.9


def test_fit_sieve_density_stays_uniform_under_independence():
    from sievemle.estimate import fit_sieve_density

    rng = np.random.default_rng(8)
    u = rng.uniform(size=(4000, 2))
    fitted = fit_sieve_density(u, 3)
    grid = np.column_stack([np.linspace(0.1, 0.9, 9), np.linspace(0.1, 0.9, 9)])
    np.testing.assert_allclose(fitted.density(grid), 1.0, atol=0.15)


def test_fit_sieve_density_never_loses_to_uniform():
    from sievemle.estimate import fit_sieve_density

    u = np.array([[0.01, 0.99], [0.99, 0.01]])
    fitted = fit_sieve_density(u, 3)
    assert float(np.sum(np.log(fitted.density(u)))) >= 0.0


def test_fit_sieve_density_validates_input():
    from sievemle.estimate import fit_sieve_density

    with pytest.raises(DataError):
        fit_sieve_density(np.array([0.5, 0.5]), 3)
    with pytest.raises(DataError):
        fit_sieve_density(np.array([[0.0, 0.5], [0.5, 0.5]]), 3)
