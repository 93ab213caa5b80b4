"""Parametric copula families: densities, u-gradients, samplers, calibration.

All densities are evaluated on the open unit cube; estimation code clamps
pseudo-observations away from the boundary before calling in here. Samplers
accept an integer seed, a ``SeedSequence`` or a ``Generator`` so replication
studies can hand out independent streams.

Spearman's rho is the dependence scale used throughout. Families with a
closed-form cdf get rho by tensor Gauss-Legendre quadrature of
``12 * int C(u,v) du dv - 3``; the Student-t family uses the equivalent
identity ``12 * int (1-s) C(v|s) ds dv - 3`` built on its closed-form
conditional cdf, which keeps the computation deterministic and fast.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, special

from .exceptions import RangeError, SupportError

__all__ = [
    "Copula",
    "IndependenceCopula",
    "GaussianCopula",
    "StudentTCopula",
    "ClaytonCopula",
    "ClaytonRotated90",
    "PlackettCopula",
    "FrankCopula",
    "calibrate_to_spearman",
    "copula_from_dict",
]

_LEGENDRE_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def unit_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights rescaled to [0, 1]."""
    if n not in _LEGENDRE_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _LEGENDRE_CACHE[n] = ((x + 1.0) / 2.0, w / 2.0)
    return _LEGENDRE_CACHE[n]


def _prepare_u(u, dim):
    arr = np.asarray(u, dtype=float)
    scalar = arr.ndim == 1
    if scalar:
        arr = arr[None, :]
    if arr.shape[-1] != dim:
        raise ValueError(f"expected points with {dim} coordinates, got shape {arr.shape}")
    if np.any((arr <= 0.0) | (arr >= 1.0)):
        raise SupportError("copula evaluated on or outside the unit-cube boundary")
    return arr, scalar


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class Copula:
    """Base class: bivariate by default, some families support any dimension."""

    dim: int = 2
    param_names: tuple[str, ...] = ()

    @property
    def params(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in self.param_names])

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def with_params(self, params) -> "Copula":
        params = np.asarray(params, dtype=float)
        return replace(self, **dict(zip(self.param_names, params.tolist())))

    def log_density(self, u):
        raise NotImplementedError

    def density(self, u):
        return np.exp(self.log_density(u))

    def dlogdensity_du(self, u):
        """Gradient of log density in each u coordinate, same shape as u."""
        raise NotImplementedError

    def sample(self, n: int, seed=None) -> np.ndarray:
        raise NotImplementedError

    def cdf(self, u):
        raise NotImplementedError

    def spearman_rho(self) -> float:
        """Population Spearman's rho (bivariate families)."""
        if self.dim != 2:
            raise NotImplementedError("spearman_rho is defined for bivariate copulas")
        nodes, weights = unit_legendre(96)
        grid_u, grid_v = np.meshgrid(nodes, nodes, indexing="ij")
        pts = np.column_stack([grid_u.ravel(), grid_v.ravel()])
        vals = self.cdf(pts).reshape(grid_u.shape)
        integral = weights @ vals @ weights
        return float(12.0 * integral - 3.0)

    # optimizer plumbing; identity by default (no parameters)

    def to_unconstrained(self) -> np.ndarray:
        return np.array([])

    def from_unconstrained(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float).copy()

    def unconstrained_bounds(self) -> list[tuple[float | None, float | None]]:
        return [(None, None)] * self.n_params

    def to_dict(self) -> dict:
        return {
            "family": COPULA_NAMES[type(self)],
            "dim": self.dim,
            "params": self.params.tolist(),
        }


@dataclass(frozen=True)
class IndependenceCopula(Copula):
    dim: int = 2

    def log_density(self, u):
        arr, scalar = _prepare_u(u, self.dim)
        out = np.zeros(arr.shape[0])
        return float(out[0]) if scalar else out

    def dlogdensity_du(self, u):
        arr, scalar = _prepare_u(u, self.dim)
        out = np.zeros_like(arr)
        return out[0] if scalar else out

    def sample(self, n, seed=None):
        return _rng(seed).uniform(size=(n, self.dim))

    def cdf(self, u):
        arr, scalar = _prepare_u(u, self.dim)
        out = np.prod(arr, axis=1)
        return float(out[0]) if scalar else out

    def spearman_rho(self):
        return 0.0


def _check_correlation(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim == 0:
        matrix = np.array([[1.0, float(matrix)], [float(matrix), 1.0]])
    if matrix.shape[0] != matrix.shape[1]:
        raise ValueError("correlation matrix must be square")
    if not np.allclose(np.diag(matrix), 1.0, atol=1e-12):
        raise ValueError("correlation matrix needs unit diagonal")
    if not np.allclose(matrix, matrix.T, atol=1e-12):
        raise ValueError("correlation matrix must be symmetric")
    eigvals = np.linalg.eigvalsh(matrix)
    if eigvals.min() <= 1e-12:
        raise ValueError("correlation matrix must be positive definite")
    return matrix


def _corr_to_partial(matrix: np.ndarray) -> np.ndarray:
    """(rho12, rho13, partial rho23|1) for 3x3; (rho,) for 2x2.

    The partial-correlation coordinates form a bijection onto positive
    definite correlation matrices, so line searches can never leave the
    feasible set.
    """
    m = matrix.shape[0]
    if m == 2:
        return np.array([matrix[0, 1]])
    if m == 3:
        r12, r13, r23 = matrix[0, 1], matrix[0, 2], matrix[1, 2]
        partial = (r23 - r12 * r13) / np.sqrt((1 - r12**2) * (1 - r13**2))
        return np.array([r12, r13, partial])
    raise NotImplementedError("parameter transforms implemented for dim <= 3")


def _partial_to_corr(vec: np.ndarray) -> np.ndarray:
    if len(vec) == 1:
        r = float(vec[0])
        return np.array([[1.0, r], [r, 1.0]])
    if len(vec) == 3:
        r12, r13, partial = vec
        r23 = r12 * r13 + partial * np.sqrt((1 - r12**2) * (1 - r13**2))
        return np.array([[1.0, r12, r13], [r12, 1.0, r23], [r13, r23, 1.0]])
    raise NotImplementedError("parameter transforms implemented for dim <= 3")


class _EllipticalBase(Copula):
    """Shared parameter plumbing for Gaussian and Student-t copulas."""

    @property
    def corr(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def rho(self) -> float:
        if self.dim != 2:
            raise AttributeError("rho is only defined for bivariate copulas")
        return float(self.corr[0, 1])

    @property
    def param_names(self):
        m = self.corr.shape[0]
        names = [f"rho{i + 1}{j + 1}" for i in range(m) for j in range(i + 1, m)]
        return tuple(names)

    @property
    def params(self):
        m = self.corr.shape[0]
        return np.array([self.corr[i, j] for i in range(m) for j in range(i + 1, m)])


@dataclass(frozen=True, eq=False)
class GaussianCopula(_EllipticalBase):
    """Gaussian copula with correlation matrix Omega (a float means 2x2)."""

    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", _check_correlation(self.omega))
        object.__setattr__(self, "dim", self.omega.shape[0])

    @property
    def corr(self):
        return self.omega

    def with_params(self, params):
        params = np.asarray(params, dtype=float)
        m = self.dim
        out = np.eye(m)
        k = 0
        for i in range(m):
            for j in range(i + 1, m):
                out[i, j] = out[j, i] = params[k]
                k += 1
        return GaussianCopula(out)

    def log_density(self, u):
        arr, scalar = _prepare_u(u, self.dim)
        z = special.ndtri(arr)
        prec = np.linalg.inv(self.omega)
        _, logdet = np.linalg.slogdet(self.omega)
        quad = np.einsum("ni,ij,nj->n", z, prec - np.eye(self.dim), z)
        out = -0.5 * logdet - 0.5 * quad
        return float(out[0]) if scalar else out

    def dlogdensity_du(self, u):
        arr, scalar = _prepare_u(u, self.dim)
        z = special.ndtri(arr)
        prec = np.linalg.inv(self.omega)
        inner = -z @ (prec - np.eye(self.dim)).T
        phi = np.exp(-0.5 * z**2) / np.sqrt(2.0 * np.pi)
        out = inner / phi
        return out[0] if scalar else out

    def sample(self, n, seed=None):
        rng = _rng(seed)
        chol = np.linalg.cholesky(self.omega)
        z = rng.standard_normal((n, self.dim)) @ chol.T
        return special.ndtr(z)

    def conditional_cdf(self, v, u):
        """P(V <= v | U = u) for the bivariate case."""
        x = special.ndtri(u)
        y = special.ndtri(v)
        s = np.sqrt(1.0 - self.rho**2)
        return special.ndtr((y - self.rho * x) / s)

    def cdf(self, u):
        if self.dim != 2:
            raise NotImplementedError("cdf provided for bivariate copulas")
        arr, scalar = _prepare_u(u, self.dim)
        nodes, weights = unit_legendre(160)
        # C(u,v) = int_0^u P(V <= v | U = s) ds, scaled Gauss-Legendre in s
        s = arr[:, :1] * nodes[None, :]
        cond = self.conditional_cdf(arr[:, 1:2], s)
        out = arr[:, 0] * (cond @ weights)
        return float(out[0]) if scalar else out

    def spearman_rho(self):
        if self.dim != 2:
            raise NotImplementedError("spearman_rho is defined for bivariate copulas")
        return float(6.0 / np.pi * np.arcsin(self.rho / 2.0))

    def to_unconstrained(self):
        return np.arctanh(_corr_to_partial(self.omega))

    def from_unconstrained(self, x):
        partial = np.tanh(np.asarray(x, dtype=float))
        corr = _partial_to_corr(partial)
        m = self.dim
        return np.array([corr[i, j] for i in range(m) for j in range(i + 1, m)])


@dataclass(frozen=True, eq=False)
class StudentTCopula(_EllipticalBase):
    """Student-t copula with correlation matrix Omega and tail parameter tau > 2."""

    omega: np.ndarray
    tau: float

    TAU_MAX = 500.0

    def __post_init__(self):
        object.__setattr__(self, "omega", _check_correlation(self.omega))
        object.__setattr__(self, "dim", self.omega.shape[0])
        if self.tau <= 2.0:
            raise ValueError("StudentTCopula requires tau > 2")

    @property
    def corr(self):
        return self.omega

    @property
    def param_names(self):
        return super().param_names + ("tau",)

    @property
    def params(self):
        return np.append(super().params, self.tau)

    def with_params(self, params):
        params = np.asarray(params, dtype=float)
        m = self.dim
        out = np.eye(m)
        k = 0
        for i in range(m):
            for j in range(i + 1, m):
                out[i, j] = out[j, i] = params[k]
                k += 1
        return StudentTCopula(out, float(params[-1]))

    def _quantiles(self, arr):
        return special.stdtrit(self.tau, arr)

    def log_density(self, u):
        arr, scalar = _prepare_u(u, self.dim)
        x = self._quantiles(arr)
        tau, m = self.tau, self.dim
        prec = np.linalg.inv(self.omega)
        _, logdet = np.linalg.slogdet(self.omega)
        quad = np.einsum("ni,ij,nj->n", x, prec, x)
        out = (
            special.gammaln((tau + m) / 2.0)
            + (m - 1.0) * special.gammaln(tau / 2.0)
            - m * special.gammaln((tau + 1.0) / 2.0)
            - 0.5 * logdet
            - 0.5 * (tau + m) * np.log1p(quad / tau)
            + 0.5 * (tau + 1.0) * np.log1p(x**2 / tau).sum(axis=1)
        )
        return float(out[0]) if scalar else out

    def dlogdensity_du(self, u):
        arr, scalar = _prepare_u(u, self.dim)
        x = self._quantiles(arr)
        tau, m = self.tau, self.dim
        prec = np.linalg.inv(self.omega)
        quad = np.einsum("ni,ij,nj->n", x, prec, x)
        dlog_dx = -(tau + m) * (x @ prec.T) / (tau + quad)[:, None] + (tau + 1.0) * x / (
            tau + x**2
        )
        # standard t density at the quantiles
        log_t = (
            special.gammaln((tau + 1.0) / 2.0)
            - special.gammaln(tau / 2.0)
            - 0.5 * np.log(np.pi * tau)
            - 0.5 * (tau + 1.0) * np.log1p(x**2 / tau)
        )
        out = dlog_dx / np.exp(log_t)
        return out[0] if scalar else out

    def sample(self, n, seed=None):
        rng = _rng(seed)
        chol = np.linalg.cholesky(self.omega)
        z = rng.standard_normal((n, self.dim)) @ chol.T
        w = rng.chisquare(self.tau, size=n) / self.tau
        x = z / np.sqrt(w)[:, None]
        return special.stdtr(self.tau, x)

    def conditional_cdf(self, v, u):
        """P(V <= v | U = u), bivariate; closed form via the t(tau+1) cdf."""
        tau, rho = self.tau, self.rho
        x = special.stdtrit(tau, u)
        y = special.stdtrit(tau, v)
        scale = np.sqrt((tau + x**2) * (1.0 - rho**2) / (tau + 1.0))
        return special.stdtr(tau + 1.0, (y - rho * x) / scale)

    def cdf(self, u):
        if self.dim != 2:
            raise NotImplementedError("cdf provided for bivariate copulas")
        arr, scalar = _prepare_u(u, self.dim)
        nodes, weights = unit_legendre(160)
        s = arr[:, :1] * nodes[None, :]
        cond = self.conditional_cdf(arr[:, 1:2], s)
        out = arr[:, 0] * (cond @ weights)
        return float(out[0]) if scalar else out

    def spearman_rho(self):
        if self.dim != 2:
            raise NotImplementedError("spearman_rho is defined for bivariate copulas")
        # 12 * int (1-s) C(v|s) ds dv - 3, smooth closed-form integrand
        nodes, weights = unit_legendre(96)
        s_grid, v_grid = np.meshgrid(nodes, nodes, indexing="ij")
        cond = self.conditional_cdf(v_grid, s_grid)
        integral = weights @ ((1.0 - nodes)[:, None] * cond) @ weights
        return float(12.0 * integral - 3.0)

    def to_unconstrained(self):
        return np.append(np.arctanh(_corr_to_partial(self.omega)), np.log(self.tau - 2.0))

    def from_unconstrained(self, x):
        x = np.asarray(x, dtype=float)
        partial = np.tanh(x[:-1])
        corr = _partial_to_corr(partial)
        m = self.dim
        flat = [corr[i, j] for i in range(m) for j in range(i + 1, m)]
        return np.array(flat + [2.0 + np.exp(x[-1])])

    def unconstrained_bounds(self):
        n_corr = len(self.param_names) - 1
        return [(None, None)] * n_corr + [(None, float(np.log(self.TAU_MAX - 2.0)))]


@dataclass(frozen=True)
class ClaytonCopula(Copula):
    """Clayton copula, theta > 0 (positive dependence only)."""

    theta: float
    dim: int = 2

    param_names = ("theta",)

    def __post_init__(self):
        if self.theta <= 0.0:
            raise ValueError("ClaytonCopula requires theta > 0")

    def with_params(self, params):
        return ClaytonCopula(float(np.asarray(params, dtype=float)[0]), self.dim)

    def _log_s(self, arr):
        """log(sum u_j^(-theta) - (m-1)) without overflowing the powers."""
        t = -self.theta * np.log(arr)
        peak = t.max(axis=1)
        inner = np.exp(t - peak[:, None]).sum(axis=1) - (self.dim - 1.0) * np.exp(-peak)
        return peak + np.log(inner)

    def log_density(self, u):
        arr, scalar = _prepare_u(u, self.dim)
        th, m = self.theta, self.dim
        const = np.sum(np.log1p(th * np.arange(1, m)))
        out = (
            const
            - (th + 1.0) * np.log(arr).sum(axis=1)
            - (1.0 / th + m) * self._log_s(arr)
        )
        return float(out[0]) if scalar else out

    def dlogdensity_du(self, u):
        arr, scalar = _prepare_u(u, self.dim)
        th, m = self.theta, self.dim
        ratio = np.exp(-(th + 1.0) * np.log(arr) - self._log_s(arr)[:, None])
        out = -(th + 1.0) / arr + (1.0 + th * m) * ratio
        return out[0] if scalar else out

    def sample(self, n, seed=None):
        # Marshall-Olkin: gamma frailty with Laplace transform (1+t)^(-1/theta)
        rng = _rng(seed)
        frailty = rng.gamma(1.0 / self.theta, 1.0, size=n)
        e = rng.exponential(1.0, size=(n, self.dim))
        return (1.0 + e / frailty[:, None]) ** (-1.0 / self.theta)

    def cdf(self, u):
        arr, scalar = _prepare_u(u, self.dim)
        out = np.exp(-self._log_s(arr) / self.theta)
        return float(out[0]) if scalar else out

    def to_unconstrained(self):
        return np.array([np.log(self.theta)])

    def from_unconstrained(self, x):
        return np.exp(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ClaytonRotated90(Copula):
    """Clayton rotated 90 degrees: density(u1, u2) = clayton(1 - u1, u2).

    Covers negative dependence, mirroring the Clayton tail into the
    (high u1, low u2) corner.
    """

    theta: float
    dim: int = field(default=2, init=False)

    param_names = ("theta",)

    def __post_init__(self):
        if self.theta <= 0.0:
            raise ValueError("ClaytonRotated90 requires theta > 0")

    @property
    def base(self) -> ClaytonCopula:
        return ClaytonCopula(self.theta)

    def with_params(self, params):
        return ClaytonRotated90(float(np.asarray(params, dtype=float)[0]))

    def _reflect(self, arr):
        out = arr.copy()
        out[:, 0] = 1.0 - out[:, 0]
        return out

    def log_density(self, u):
        arr, scalar = _prepare_u(u, 2)
        out = self.base.log_density(self._reflect(arr))
        return out if not scalar else float(np.asarray(out))

    def dlogdensity_du(self, u):
        arr, scalar = _prepare_u(u, 2)
        grad = self.base.dlogdensity_du(self._reflect(arr))
        grad = np.atleast_2d(grad)
        grad[:, 0] = -grad[:, 0]
        return grad[0] if scalar else grad

    def sample(self, n, seed=None):
        base = self.base.sample(n, seed)
        base[:, 0] = 1.0 - base[:, 0]
        return base

    def cdf(self, u):
        arr, scalar = _prepare_u(u, 2)
        reflected = self._reflect(arr)
        out = arr[:, 1] - self.base.cdf(reflected)
        return float(out[0]) if scalar else out

    def spearman_rho(self):
        return -self.base.spearman_rho()

    def to_unconstrained(self):
        return np.array([np.log(self.theta)])

    def from_unconstrained(self, x):
        return np.exp(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class PlackettCopula(Copula):
    """Plackett copula with odds-ratio parameter gamma > 0 (gamma=1: independence)."""

    gamma: float
    dim: int = field(default=2, init=False)

    param_names = ("gamma",)

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ValueError("PlackettCopula requires gamma > 0")

    def with_params(self, params):
        return PlackettCopula(float(np.asarray(params, dtype=float)[0]))

    def log_density(self, u):
        arr, scalar = _prepare_u(u, 2)
        g = self.gamma
        a, b = arr[:, 0], arr[:, 1]
        s = 1.0 + (g - 1.0) * (a + b)
        disc = s**2 - 4.0 * g * (g - 1.0) * a * b
        out = np.log(g) + np.log1p((g - 1.0) * (a + b - 2.0 * a * b)) - 1.5 * np.log(disc)
        return float(out[0]) if scalar else out

    def dlogdensity_du(self, u):
        arr, scalar = _prepare_u(u, 2)
        g = self.gamma
        a, b = arr[:, 0], arr[:, 1]
        s = 1.0 + (g - 1.0) * (a + b)
        disc = s**2 - 4.0 * g * (g - 1.0) * a * b
        num = 1.0 + (g - 1.0) * (a + b - 2.0 * a * b)
        da = (g - 1.0) * (1.0 - 2.0 * b) / num - 1.5 * (
            2.0 * s * (g - 1.0) - 4.0 * g * (g - 1.0) * b
        ) / disc
        db = (g - 1.0) * (1.0 - 2.0 * a) / num - 1.5 * (
            2.0 * s * (g - 1.0) - 4.0 * g * (g - 1.0) * a
        ) / disc
        out = np.column_stack([da, db])
        return out[0] if scalar else out

    def conditional_cdf(self, v, u):
        g = self.gamma
        s = 1.0 + (g - 1.0) * (u + v)
        disc = s**2 - 4.0 * g * (g - 1.0) * u * v
        return 0.5 * (1.0 - (s - 2.0 * g * v) / np.sqrt(disc))

    def sample(self, n, seed=None):
        rng = _rng(seed)
        u = rng.uniform(size=n)
        t = rng.uniform(size=n)
        g = self.gamma
        if abs(g - 1.0) < 1e-10:
            return np.column_stack([u, t])
        # invert t = C(v|u): squaring gives a quadratic in v; keep the root
        # that reproduces the conditional probability
        a0 = 1.0 + (g - 1.0) * u
        b0 = g - 1.0
        q = (1.0 - 2.0 * t) ** 2
        c2 = (b0 - 2.0 * g) ** 2 - q * b0**2
        c1 = 2.0 * a0 * (b0 - 2.0 * g) - 2.0 * q * a0 * b0 + 4.0 * q * g * b0 * u
        c0 = a0**2 * (1.0 - q)
        disc = np.maximum(c1**2 - 4.0 * c2 * c0, 0.0)
        eps = 1e-12
        roots = np.stack(
            [
                (-c1 + np.sqrt(disc)) / (2.0 * c2),
                (-c1 - np.sqrt(disc)) / (2.0 * c2),
            ]
        ).clip(eps, 1.0 - eps)
        err = np.abs(self.conditional_cdf(roots, u[None, :]) - t[None, :])
        v = roots[np.argmin(err, axis=0), np.arange(n)]
        return np.column_stack([u, v])

    def cdf(self, u):
        arr, scalar = _prepare_u(u, 2)
        g = self.gamma
        a, b = arr[:, 0], arr[:, 1]
        if abs(g - 1.0) < 1e-6:
            # second-order expansion around independence
            out = a * b * (1.0 + (g - 1.0) * (1.0 - a) * (1.0 - b))
        else:
            s = 1.0 + (g - 1.0) * (a + b)
            disc = s**2 - 4.0 * g * (g - 1.0) * a * b
            out = (s - np.sqrt(disc)) / (2.0 * (g - 1.0))
        return float(out[0]) if scalar else out

    def to_unconstrained(self):
        return np.array([np.log(self.gamma)])

    def from_unconstrained(self, x):
        return np.exp(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class FrankCopula(Copula):
    """Frank copula, theta != 0; symmetric dependence in both tails."""

    theta: float
    dim: int = field(default=2, init=False)

    param_names = ("theta",)

    THETA_MAX = 50.0

    def __post_init__(self):
        if self.theta == 0.0:
            raise ValueError("FrankCopula requires theta != 0 (use IndependenceCopula)")
        if abs(self.theta) > self.THETA_MAX:
            raise ValueError(f"FrankCopula |theta| capped at {self.THETA_MAX}")

    def with_params(self, params):
        return FrankCopula(float(np.asarray(params, dtype=float)[0]))

    def _denom(self, a, b):
        th = self.theta
        eta = -np.expm1(-th)
        return eta - np.expm1(-th * a) * np.expm1(-th * b)

    def log_density(self, u):
        arr, scalar = _prepare_u(u, 2)
        th = self.theta
        a, b = arr[:, 0], arr[:, 1]
        eta = -np.expm1(-th)
        out = np.log(th * eta) - th * (a + b) - 2.0 * np.log(np.abs(self._denom(a, b)))
        return float(out[0]) if scalar else out

    def dlogdensity_du(self, u):
        arr, scalar = _prepare_u(u, 2)
        th = self.theta
        a, b = arr[:, 0], arr[:, 1]
        denom = self._denom(a, b)
        da = -th + 2.0 * th * np.exp(-th * a) * (-np.expm1(-th * b)) / denom
        db = -th + 2.0 * th * np.exp(-th * b) * (-np.expm1(-th * a)) / denom
        out = np.column_stack([da, db])
        return out[0] if scalar else out

    def sample(self, n, seed=None):
        rng = _rng(seed)
        u = rng.uniform(size=n)
        t = rng.uniform(size=n)
        th = self.theta
        # closed-form conditional quantile
        p = np.expm1(-th * u)
        k = np.expm1(-th)
        v = -np.log1p(t * k / (np.exp(-th * u) - t * p)) / th
        return np.column_stack([u, v])

    def cdf(self, u):
        arr, scalar = _prepare_u(u, 2)
        th = self.theta
        a, b = arr[:, 0], arr[:, 1]
        # 1 + g factored to avoid cancellation when exp(-th) underflows:
        # numerator exp(-th b) expm1(-th a) + exp(-th a) expm1(-th (1-a))
        num = np.exp(-th * b) * np.expm1(-th * a) + np.exp(-th * a) * np.expm1(
            -th * (1.0 - a)
        )
        out = -(np.log(np.abs(num)) - np.log(np.abs(np.expm1(-th)))) / th
        return float(out[0]) if scalar else out

    def to_unconstrained(self):
        # sign is fixed at construction; optimize the magnitude on a log scale
        return np.array([np.log(abs(self.theta))])

    def from_unconstrained(self, x):
        return np.sign(self.theta) * np.exp(np.asarray(x, dtype=float))

    def unconstrained_bounds(self):
        return [(None, float(np.log(self.THETA_MAX)))]


COPULA_NAMES: dict[type, str] = {
    IndependenceCopula: "independence",
    GaussianCopula: "gaussian",
    StudentTCopula: "student_t",
    ClaytonCopula: "clayton",
    ClaytonRotated90: "clayton_rot90",
    PlackettCopula: "plackett",
    FrankCopula: "frank",
}


def copula_from_dict(payload: dict) -> Copula:
    family = payload["family"]
    params = payload.get("params", [])
    dim = int(payload.get("dim", 2))
    if family == "independence":
        return IndependenceCopula(dim)
    if family == "gaussian":
        return GaussianCopula(_params_to_corr(params, dim))
    if family == "student_t":
        return StudentTCopula(_params_to_corr(params[:-1], dim), float(params[-1]))
    if family == "clayton":
        return ClaytonCopula(float(params[0]), dim)
    if family == "clayton_rot90":
        return ClaytonRotated90(float(params[0]))
    if family == "plackett":
        return PlackettCopula(float(params[0]))
    if family == "frank":
        return FrankCopula(float(params[0]))
    raise ValueError(f"unknown copula family {family!r}")


def _params_to_corr(flat, dim):
    out = np.eye(dim)
    k = 0
    for i in range(dim):
        for j in range(i + 1, dim):
            out[i, j] = out[j, i] = float(flat[k])
            k += 1
    return out


_CALIBRATION_RANGES = {
    # attainable Spearman range used for bracket construction
    "gaussian": (-1.0, 1.0),
    "student_t": (-1.0, 1.0),
    "clayton": (0.0, 0.99),
    "clayton_rot90": (-0.99, 0.0),
    "plackett": (-0.995, 0.995),
    "frank": (-0.995, 0.995),
}


def calibrate_to_spearman(family: str, target: float, *, tau: float = 4.0, tol: float = 1e-4):
    """Construct a copula of the given family with Spearman's rho = target.

    Bisection on the family's monotone parameter-to-rho map; Gaussian uses
    the closed form rho = 2 sin(pi * rho_s / 6).
    """
    if family == "independence":
        if abs(target) > tol:
            raise RangeError("independence copula only attains rho = 0")
        return IndependenceCopula()
    lo, hi = _CALIBRATION_RANGES[family]
    if not (lo <= target <= hi):
        raise RangeError(f"{family} cannot attain Spearman rho = {target}")

    if family == "gaussian":
        return GaussianCopula(2.0 * np.sin(np.pi * target / 6.0))

    if abs(target) < 5e-5 and family in ("plackett", "frank"):
        return PlackettCopula(1.0) if family == "plackett" else FrankCopula(1e-6)

    def make(param: float) -> Copula:
        if family == "student_t":
            return StudentTCopula(np.array([[1.0, param], [param, 1.0]]), tau)
        if family == "clayton":
            return ClaytonCopula(param)
        if family == "clayton_rot90":
            return ClaytonRotated90(param)
        if family == "plackett":
            return PlackettCopula(param)
        if family == "frank":
            return FrankCopula(param)
        raise ValueError(f"unknown copula family {family!r}")

    if family == "student_t":
        bracket = (-1.0 + 1e-9, 1.0 - 1e-9)
    elif family == "clayton":
        bracket = (1e-6, 200.0)
    elif family == "clayton_rot90":
        bracket = (1e-6, 200.0)
    elif family == "plackett":
        bracket = (1e-8, 1e8)
    else:  # frank
        mag = (1e-6, FrankCopula.THETA_MAX)
        bracket = mag if target > 0 else (-FrankCopula.THETA_MAX, -1e-6)

    def objective(param):
        return make(param).spearman_rho() - target

    if family == "clayton_rot90":
        # rho(theta) is decreasing for the rotated family; flip the target
        def objective(param):
            return -make(param).spearman_rho() - abs(target)

        result = optimize.brentq(objective, *bracket, xtol=1e-12, rtol=1e-14)
        copula = make(result)
    elif family == "plackett":
        # bisect on log gamma: rho is increasing in gamma
        def log_objective(x):
            return make(np.exp(x)).spearman_rho() - target

        result = optimize.brentq(
            log_objective, np.log(bracket[0]), np.log(bracket[1]), xtol=1e-12, rtol=1e-14
        )
        copula = make(float(np.exp(result)))
    else:
        result = optimize.brentq(objective, *bracket, xtol=1e-12, rtol=1e-14)
        copula = make(float(result))

    achieved = copula.spearman_rho()
    if abs(achieved - target) > tol:
        raise RangeError(
            f"calibration for {family} reached rho={achieved:.6f}, target {target:.6f}"
        )
    return copula
