"""Univariate marginal families with analytic scores and cdf parameter gradients.

Each family exposes the pieces the joint likelihood machinery needs:
``log_pdf``/``cdf``/``quantile`` for evaluation and simulation, ``score`` for
the gradient of the marginal log-likelihood, and ``cdf_param_grad`` for the
chain-rule term that propagates marginal parameters through a copula density.

Where a parameter derivative of the cdf has no closed form (Student-t degrees
of freedom, both Beta shapes) it is computed by differentiating under the
integral sign: dF/dtheta = integral of pdf * score_theta over the lower tail.
The mask ``cdf_grad_analytic`` tells optimizers which coordinates are cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate, special

from .exceptions import RangeError, SupportError

__all__ = [
    "Marginal",
    "Exponential",
    "Gaussian",
    "GaussianFixedVariance",
    "StudentT",
    "Beta",
    "marginal_from_dict",
]


def _prepare(y):
    """Coerce to float array, remembering whether the input was scalar."""
    arr = np.asarray(y, dtype=float)
    return arr, arr.ndim == 0


def _finish(values, scalar):
    if scalar:
        return float(values)
    return values


def _finish_grad(grad_columns, scalar):
    """Stack per-parameter columns into (..., p); scalar input gives (p,)."""
    stacked = np.stack([np.asarray(g, dtype=float) for g in grad_columns], axis=-1)
    if scalar:
        return stacked.reshape(-1)
    return stacked


class Marginal:
    """Base class; subclasses are small frozen dataclasses."""

    param_names: tuple[str, ...] = ()
    # True where d cdf / d param has a closed form (cheap inside optimizers).
    cdf_grad_analytic: tuple[bool, ...] = ()
    support: tuple[float, float] = (-np.inf, np.inf)

    @property
    def params(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in self.param_names])

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def with_params(self, params) -> "Marginal":
        params = np.asarray(params, dtype=float)
        return replace(self, **dict(zip(self.param_names, params.tolist())))

    def _check_support(self, y: np.ndarray, open_interval: bool) -> None:
        lo, hi = self.support
        if open_interval:
            bad = (y <= lo) | (y >= hi)
        else:
            bad = (y < lo) | (y > hi)
        if np.any(bad):
            raise SupportError(
                f"{type(self).__name__}: value outside support "
                f"{'(' if open_interval else '['}{lo}, {hi}{')' if open_interval else ']'}"
            )

    def _check_prob(self, p: np.ndarray) -> None:
        if np.any((p <= 0.0) | (p >= 1.0)):
            raise RangeError(f"{type(self).__name__}: probability outside (0, 1)")

    # --- interface -------------------------------------------------------

    def log_pdf(self, y):
        raise NotImplementedError

    def pdf(self, y):
        y_arr, scalar = _prepare(y)
        return _finish(np.exp(self.log_pdf(y_arr)), scalar)

    def cdf(self, y):
        raise NotImplementedError

    def quantile(self, p):
        raise NotImplementedError

    def score(self, y):
        """Gradient of log_pdf with respect to the parameter vector."""
        raise NotImplementedError

    def cdf_param_grad(self, y):
        """Gradient of cdf with respect to the parameter vector."""
        raise NotImplementedError

    def cdf_param_grad_cheap(self, y):
        """Like cdf_param_grad, with quadrature-priced columns zeroed.

        Safe inside per-observation optimizer loops; coordinates whose
        cdf_grad_analytic flag is False get finite differences elsewhere.
        """
        if all(self.cdf_grad_analytic):
            return self.cdf_param_grad(y)
        raise NotImplementedError

    def fisher_information(self) -> np.ndarray:
        """E[score score'] at the current parameters."""
        raise NotImplementedError

    # --- optimizer plumbing ---------------------------------------------

    def to_unconstrained(self) -> np.ndarray:
        raise NotImplementedError

    def from_unconstrained(self, x) -> np.ndarray:
        """Map unconstrained coordinates back to the parameter vector."""
        raise NotImplementedError

    def unconstrained_jacobian(self, x) -> np.ndarray:
        """Diagonal of d(params)/d(x) at unconstrained coordinates x."""
        raise NotImplementedError

    def unconstrained_bounds(self) -> list[tuple[float | None, float | None]]:
        return [(None, None)] * self.n_params

    def to_dict(self) -> dict:
        return {"family": FAMILY_NAMES[type(self)], "params": self.params.tolist()}


def _tail_integral_grad(model: Marginal, y: np.ndarray, param_index: int) -> np.ndarray:
    """dF(y)/dtheta = integral over (lo, y] of pdf * score_theta, by quadrature.

    Differentiation under the integral sign; valid because the integrand is
    dominated near the boundary for every family used here.
    """
    lo = model.support[0]

    def integrand(s):
        return model.pdf(s) * model.score(s)[param_index]

    out = np.empty(y.shape, dtype=float)
    for i, yi in np.ndenumerate(y):
        val, _ = integrate.quad(integrand, lo, yi, epsabs=1e-12, epsrel=1e-10, limit=200)
        out[i] = val
    return out


@dataclass(frozen=True)
class Exponential(Marginal):
    """Exponential with mean mu; pdf (1/mu) exp(-y/mu) on [0, inf)."""

    mu: float

    param_names = ("mu",)
    cdf_grad_analytic = (True,)
    support = (0.0, np.inf)

    def log_pdf(self, y):
        y_arr, scalar = _prepare(y)
        self._check_support(y_arr, open_interval=False)
        return _finish(-np.log(self.mu) - y_arr / self.mu, scalar)

    def cdf(self, y):
        y_arr, scalar = _prepare(y)
        return _finish(-np.expm1(-np.maximum(y_arr, 0.0) / self.mu), scalar)

    def quantile(self, p):
        p_arr, scalar = _prepare(p)
        self._check_prob(p_arr)
        return _finish(-self.mu * np.log1p(-p_arr), scalar)

    def score(self, y):
        y_arr, scalar = _prepare(y)
        self._check_support(y_arr, open_interval=True)
        return _finish_grad([(y_arr - self.mu) / self.mu**2], scalar)

    def cdf_param_grad(self, y):
        y_arr, scalar = _prepare(y)
        self._check_support(y_arr, open_interval=True)
        return _finish_grad([-np.exp(-y_arr / self.mu) * y_arr / self.mu**2], scalar)

    def fisher_information(self):
        return np.array([[1.0 / self.mu**2]])

    def to_unconstrained(self):
        return np.array([np.log(self.mu)])

    def from_unconstrained(self, x):
        return np.exp(np.asarray(x, dtype=float))

    def unconstrained_jacobian(self, x):
        return np.exp(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Gaussian(Marginal):
    """Normal with mean mu and standard deviation sigma."""

    mu: float
    sigma: float

    param_names = ("mu", "sigma")
    cdf_grad_analytic = (True, True)

    def log_pdf(self, y):
        y_arr, scalar = _prepare(y)
        z = (y_arr - self.mu) / self.sigma
        return _finish(-0.5 * np.log(2.0 * np.pi) - np.log(self.sigma) - 0.5 * z**2, scalar)

    def cdf(self, y):
        y_arr, scalar = _prepare(y)
        return _finish(special.ndtr((y_arr - self.mu) / self.sigma), scalar)

    def quantile(self, p):
        p_arr, scalar = _prepare(p)
        self._check_prob(p_arr)
        return _finish(self.mu + self.sigma * special.ndtri(p_arr), scalar)

    def score(self, y):
        y_arr, scalar = _prepare(y)
        z = (y_arr - self.mu) / self.sigma
        return _finish_grad([z / self.sigma, (z**2 - 1.0) / self.sigma], scalar)

    def cdf_param_grad(self, y):
        y_arr, scalar = _prepare(y)
        z = (y_arr - self.mu) / self.sigma
        dens = np.exp(self.log_pdf(y_arr))
        return _finish_grad([-dens, -z * dens], scalar)

    def fisher_information(self):
        return np.diag([1.0 / self.sigma**2, 2.0 / self.sigma**2])

    def to_unconstrained(self):
        return np.array([self.mu, np.log(self.sigma)])

    def from_unconstrained(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([x[0], np.exp(x[1])])

    def unconstrained_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([1.0, np.exp(x[1])])


@dataclass(frozen=True)
class GaussianFixedVariance(Marginal):
    """Normal with unknown mean and a variance pinned at a known constant."""

    mu: float
    sigma2: float = 1.0

    param_names = ("mu",)
    cdf_grad_analytic = (True,)

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))

    def with_params(self, params):
        params = np.asarray(params, dtype=float)
        return replace(self, mu=float(params[0]))

    def log_pdf(self, y):
        y_arr, scalar = _prepare(y)
        z = (y_arr - self.mu) / self.sigma
        return _finish(-0.5 * np.log(2.0 * np.pi * self.sigma2) - 0.5 * z**2, scalar)

    def cdf(self, y):
        y_arr, scalar = _prepare(y)
        return _finish(special.ndtr((y_arr - self.mu) / self.sigma), scalar)

    def quantile(self, p):
        p_arr, scalar = _prepare(p)
        self._check_prob(p_arr)
        return _finish(self.mu + self.sigma * special.ndtri(p_arr), scalar)

    def score(self, y):
        y_arr, scalar = _prepare(y)
        return _finish_grad([(y_arr - self.mu) / self.sigma2], scalar)

    def cdf_param_grad(self, y):
        y_arr, scalar = _prepare(y)
        return _finish_grad([-np.exp(self.log_pdf(y_arr))], scalar)

    def fisher_information(self):
        return np.array([[1.0 / self.sigma2]])

    def to_unconstrained(self):
        return np.array([self.mu])

    def from_unconstrained(self, x):
        return np.asarray(x, dtype=float).copy()

    def unconstrained_jacobian(self, x):
        return np.ones(1)


@dataclass(frozen=True)
class StudentT(Marginal):
    """Location-scale Student-t with nu > 2 degrees of freedom.

    Density Gamma((nu+1)/2) / (Gamma(nu/2) sqrt(pi nu) sigma)
    * (1 + ((y-mu)/sigma)^2 / nu)^(-(nu+1)/2).
    """

    mu: float
    sigma: float
    nu: float

    param_names = ("mu", "sigma", "nu")
    cdf_grad_analytic = (True, True, False)
    # degrees of freedom capped during fitting; nu beyond this is numerically
    # indistinguishable from Gaussian for our window sizes, and floored just
    # above 2 so exp underflow in the unconstrained map cannot produce nu == 2
    NU_MAX = 200.0
    NU_MIN = 2.05

    def __post_init__(self):
        if self.nu <= 2.0:
            raise ValueError("StudentT requires nu > 2")

    def log_pdf(self, y):
        y_arr, scalar = _prepare(y)
        z = (y_arr - self.mu) / self.sigma
        nu = self.nu
        const = (
            special.gammaln((nu + 1.0) / 2.0)
            - special.gammaln(nu / 2.0)
            - 0.5 * np.log(np.pi * nu)
            - np.log(self.sigma)
        )
        return _finish(const - 0.5 * (nu + 1.0) * np.log1p(z**2 / nu), scalar)

    def cdf(self, y):
        y_arr, scalar = _prepare(y)
        return _finish(special.stdtr(self.nu, (y_arr - self.mu) / self.sigma), scalar)

    def quantile(self, p):
        p_arr, scalar = _prepare(p)
        self._check_prob(p_arr)
        return _finish(self.mu + self.sigma * special.stdtrit(self.nu, p_arr), scalar)

    def _nu_score_standard(self, z):
        """d log t_nu(z) / d nu for the standard (mu=0, sigma=1) density."""
        nu = self.nu
        return 0.5 * (
            special.psi((nu + 1.0) / 2.0)
            - special.psi(nu / 2.0)
            - 1.0 / nu
            - np.log1p(z**2 / nu)
            + (nu + 1.0) * z**2 / (nu * (nu + z**2))
        )

    def score(self, y):
        y_arr, scalar = _prepare(y)
        z = (y_arr - self.mu) / self.sigma
        nu = self.nu
        d_mu = (nu + 1.0) * z / (self.sigma * (nu + z**2))
        d_sigma = ((nu + 1.0) * z**2 / (nu + z**2) - 1.0) / self.sigma
        return _finish_grad([d_mu, d_sigma, self._nu_score_standard(z)], scalar)

    def cdf_param_grad(self, y):
        y_arr, scalar = _prepare(y)
        z = (y_arr - self.mu) / self.sigma
        dens = np.exp(self.log_pdf(y_arr))
        # dF/dnu by quadrature of the standard density times its nu-score
        standard = StudentT(0.0, 1.0, self.nu)

        def integrand(s):
            return standard.pdf(s) * self._nu_score_standard(s)

        d_nu = np.empty(z.shape, dtype=float)
        for i, zi in np.ndenumerate(z):
            val, _ = integrate.quad(
                integrand, -np.inf, zi, epsabs=1e-12, epsrel=1e-10, limit=200
            )
            d_nu[i] = val
        return _finish_grad([-dens, -z * dens, d_nu], scalar)

    def cdf_param_grad_cheap(self, y):
        y_arr, scalar = _prepare(y)
        z = (y_arr - self.mu) / self.sigma
        dens = np.exp(self.log_pdf(y_arr))
        return _finish_grad([-dens, -z * dens, np.zeros_like(dens)], scalar)

    def fisher_information(self):
        nu, sigma = self.nu, self.sigma
        info = np.zeros((3, 3))
        info[0, 0] = (nu + 1.0) / ((nu + 3.0) * sigma**2)
        info[1, 1] = 2.0 * nu / ((nu + 3.0) * sigma**2)
        standard = StudentT(0.0, 1.0, nu)

        def w(s):
            return standard.pdf(s) * self._nu_score_standard(s) ** 2

        info[2, 2], _ = integrate.quad(w, -np.inf, np.inf, epsabs=1e-12, limit=200)

        def w_sn(s):
            sc = standard.score(s)
            return standard.pdf(s) * sc[1] * sc[2]

        cross, _ = integrate.quad(w_sn, -np.inf, np.inf, epsabs=1e-12, limit=200)
        # the standard-score cross moment picks up 1/sigma from the scale score
        info[1, 2] = info[2, 1] = cross / sigma
        return info

    def to_unconstrained(self):
        return np.array([self.mu, np.log(self.sigma), np.log(self.nu - 2.0)])

    def from_unconstrained(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([x[0], np.exp(x[1]), 2.0 + np.exp(x[2])])

    def unconstrained_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([1.0, np.exp(x[1]), np.exp(x[2])])

    def unconstrained_bounds(self):
        return [
            (None, None),
            (None, None),
            (float(np.log(self.NU_MIN - 2.0)), float(np.log(self.NU_MAX - 2.0))),
        ]


@dataclass(frozen=True)
class Beta(Marginal):
    """Beta distribution on (0, 1) with shape parameters a, b."""

    a: float
    b: float

    param_names = ("a", "b")
    cdf_grad_analytic = (False, False)
    support = (0.0, 1.0)

    def cdf_param_grad_cheap(self, y):
        y_arr, scalar = _prepare(y)
        zeros = np.zeros_like(y_arr)
        return _finish_grad([zeros, zeros], scalar)

    def log_pdf(self, y):
        y_arr, scalar = _prepare(y)
        self._check_support(y_arr, open_interval=True)
        return _finish(
            (self.a - 1.0) * np.log(y_arr)
            + (self.b - 1.0) * np.log1p(-y_arr)
            - special.betaln(self.a, self.b),
            scalar,
        )

    def cdf(self, y):
        y_arr, scalar = _prepare(y)
        clipped = np.clip(y_arr, 0.0, 1.0)
        return _finish(special.betainc(self.a, self.b, clipped), scalar)

    def quantile(self, p):
        p_arr, scalar = _prepare(p)
        self._check_prob(p_arr)
        return _finish(special.betaincinv(self.a, self.b, p_arr), scalar)

    def score(self, y):
        y_arr, scalar = _prepare(y)
        self._check_support(y_arr, open_interval=True)
        common = special.psi(self.a + self.b)
        return _finish_grad(
            [
                np.log(y_arr) - special.psi(self.a) + common,
                np.log1p(-y_arr) - special.psi(self.b) + common,
            ],
            scalar,
        )

    def cdf_param_grad(self, y):
        y_arr, scalar = _prepare(y)
        self._check_support(y_arr, open_interval=True)
        return _finish_grad(
            [_tail_integral_grad(self, y_arr, 0), _tail_integral_grad(self, y_arr, 1)],
            scalar,
        )

    def fisher_information(self):
        pg_ab = special.polygamma(1, self.a + self.b)
        return np.array(
            [
                [special.polygamma(1, self.a) - pg_ab, -pg_ab],
                [-pg_ab, special.polygamma(1, self.b) - pg_ab],
            ]
        )

    def to_unconstrained(self):
        return np.log(self.params)

    def from_unconstrained(self, x):
        return np.exp(np.asarray(x, dtype=float))

    def unconstrained_jacobian(self, x):
        return np.exp(np.asarray(x, dtype=float))


FAMILY_NAMES: dict[type, str] = {
    Exponential: "exponential",
    Gaussian: "gaussian",
    GaussianFixedVariance: "gaussian_fixed_variance",
    StudentT: "student_t",
    Beta: "beta",
}

_FAMILIES_BY_NAME = {name: cls for cls, name in FAMILY_NAMES.items()}


def marginal_from_dict(payload: dict) -> Marginal:
    """Rebuild a marginal from {"family": ..., "params": [...]} (JSON specs)."""
    try:
        cls = _FAMILIES_BY_NAME[payload["family"]]
    except KeyError as exc:
        raise ValueError(f"unknown marginal family {payload.get('family')!r}") from exc
    params = payload["params"]
    if cls is GaussianFixedVariance and "sigma2" in payload:
        return GaussianFixedVariance(float(params[0]), float(payload["sigma2"]))
    return cls(*[float(v) for v in params])
