"""Bernstein-Kantorovich copula sieve.

The density of order J in dimension m is

    c(u) = J^m * sum_v w_v * prod_l binom(J-1, v_l) u_l^{v_l} (1-u_l)^{J-1-v_l}

with a weight tensor w of shape (J,)*m constrained to the scaled
doubly-stochastic polytope: every entry in [0, 1], total mass 1, and each
axis slice summing to 1/J. The slice constraints are exactly uniformity of
the margins, so any feasible weight tensor is a genuine copula density.

Feasibility is restored by iterative proportional fitting (IPF): sweep the
axes, rescaling each slice to mass 1/J, until every slice sum is within
tolerance. For strictly positive tensors this converges; an all-zero slice
is a pathological pattern and is reported as non-convergence.
"""

from __future__ import annotations

import io
from dataclasses import InitVar, dataclass

import numpy as np

from .exceptions import ConvergenceError, FeasibilityError, SupportError

__all__ = [
    "SieveCopula",
    "bernstein_basis",
    "bernstein_basis_derivative",
    "cell_index",
    "empirical_init",
    "project_feasible",
    "free_parameter_count",
    "uniform_weights",
]

MAX_ORDER = 64
WEIGHT_FLOOR = 1e-6
IPF_TOL = 1e-10
IPF_MAX_SWEEPS = 10_000
FEASIBILITY_TOL = 1e-8

_BINOM_ROWS: dict[int, np.ndarray] = {}


def _binom_row(degree: int) -> np.ndarray:
    """Binomial coefficients C(degree, 0..degree); exact in float for degree < 64."""
    if degree not in _BINOM_ROWS:
        if degree >= MAX_ORDER:
            raise ValueError(f"sieve order capped at {MAX_ORDER}")
        row = np.ones(degree + 1)
        for v in range(1, degree + 1):
            row[v] = row[v - 1] * (degree - v + 1) / v
        _BINOM_ROWS[degree] = row
    return _BINOM_ROWS[degree]


def _power_table(x: np.ndarray, top: int) -> np.ndarray:
    """Columns 1, x, x^2, ..., x^top by running products (fast, exact at 0)."""
    out = np.empty((x.shape[0], top + 1))
    out[:, 0] = 1.0
    for v in range(1, top + 1):
        out[:, v] = out[:, v - 1] * x
    return out


def bernstein_basis(u: np.ndarray, degree: int) -> np.ndarray:
    """Matrix of binom(degree, v) u^v (1-u)^(degree-v) for v = 0..degree.

    Rows are binomial(degree, u) pmfs, so each row sums to one exactly up
    to rounding; evaluation is exact at u = 0 and u = 1.
    """
    u = np.asarray(u, dtype=float)
    up = _power_table(u, degree)
    down = _power_table(1.0 - u, degree)[:, ::-1]
    return _binom_row(degree) * up * down


def bernstein_basis_derivative(u: np.ndarray, degree: int) -> np.ndarray:
    """d/du of each bernstein_basis column, via the degree-lowering identity."""
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    if degree == 0:
        return np.zeros((n, 1))
    lower = bernstein_basis(u, degree - 1)
    out = np.zeros((n, degree + 1))
    out[:, 1:] += lower
    out[:, :-1] -= lower
    return degree * out


def free_parameter_count(order: int, dim: int) -> int:
    """Dimension of the feasible polytope: J^m - m(J-1) - 1.

    For m = 2 this is (J-1)^2; the m*J slice constraints overlap in the
    total-mass constraint, leaving m(J-1)+1 independent ones.
    """
    if order < 1 or dim < 1:
        raise ValueError("order and dim must be positive")
    return order**dim - dim * (order - 1) - 1


def uniform_weights(order: int, dim: int) -> np.ndarray:
    return np.full((order,) * dim, 1.0 / order**dim)


def _slice_sums(weights: np.ndarray, axis: int) -> np.ndarray:
    other = tuple(k for k in range(weights.ndim) if k != axis)
    return weights.sum(axis=other)


def _pairwise_marginals(w: np.ndarray) -> np.ndarray:
    """Stacked two-axis marginals of w: block (l, l') sums over other axes.

    Diagonal blocks are diag of the axis-l slice sums. Symmetric, rank
    mJ - (m - 1). This is both the Hessian of the Sinkhorn dual and the
    constraint Gram matrix used to differentiate through the projection.
    """
    m = w.ndim
    j = w.shape[0]
    big = np.zeros((m * j, m * j))
    for l in range(m):
        for lp in range(m):
            if l == lp:
                block = np.diag(_slice_sums(w, l))
            else:
                axes = tuple(k for k in range(m) if k not in (l, lp))
                pair = w.sum(axis=axes)
                if l > lp:
                    pair = pair.T
                block = pair
            big[l * j : (l + 1) * j, lp * j : (lp + 1) * j] = block
    return big


def check_feasible(weights: np.ndarray, tol: float = FEASIBILITY_TOL) -> None:
    """Raise FeasibilityError unless weights lie in the scaled polytope."""
    order = weights.shape[0]
    if any(s != order for s in weights.shape):
        raise FeasibilityError("weight tensor must be square in every axis")
    if np.any(weights < -tol) or np.any(weights > 1.0 + tol):
        raise FeasibilityError("weights must lie in [0, 1]")
    target = 1.0 / order
    for axis in range(weights.ndim):
        gap = np.abs(_slice_sums(weights, axis) - target).max()
        if gap > tol:
            raise FeasibilityError(
                f"axis-{axis} slice sums deviate from 1/J by {gap:.2e} (tol {tol:.0e})"
            )


def project_feasible(
    weights: np.ndarray,
    *,
    floor: float = WEIGHT_FLOOR,
    tol: float = IPF_TOL,
    max_sweeps: int = IPF_MAX_SWEEPS,
    scalings: list[np.ndarray] | None = None,
    return_scalings: bool = False,
):
    """IPF projection of a nonnegative tensor onto the feasible polytope.

    Entries below ``floor`` are raised to it first, which keeps the
    log-likelihood finite and guarantees convergence (no zero slices).
    ``scalings`` warm-starts the per-axis multipliers; optimizers that
    perturb one entry at a time converge in a sweep or two from the
    previous solution.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0.0):
        raise FeasibilityError("weights must be nonnegative before projection")
    order = w.shape[0]
    if any(s != order for s in w.shape):
        raise FeasibilityError("weight tensor must be square in every axis")
    w = np.maximum(w, floor)
    dim = w.ndim
    if scalings is not None:
        for axis, s in enumerate(scalings):
            w = w * s.reshape([-1 if k == axis else 1 for k in range(dim)])
        totals = [s.copy() for s in scalings]
    else:
        totals = [np.ones(order) for _ in range(dim)]
    target = 1.0 / order

    def apply_axis(tensor, axis, factor):
        return tensor * factor.reshape([-1 if k == axis else 1 for k in range(dim)])

    def max_gap(tensor):
        return max(np.abs(_slice_sums(tensor, axis) - target).max() for axis in range(dim))

    for sweep in range(max_sweeps):
        for axis in range(dim):
            sums = _slice_sums(w, axis)
            if np.any(sums <= 0.0):
                raise ConvergenceError("IPF hit an all-zero slice")
            factor = target / sums
            w = apply_axis(w, axis, factor)
            totals[axis] *= factor
        gap = max_gap(w)
        if gap < tol:
            if return_scalings:
                return w, totals
            return w
        # plain IPF contracts slowly when mass concentrates on a thin
        # support; polish with a Newton step on the Sinkhorn dual (the
        # Hessian is the pairwise-marginal matrix), which is quadratically
        # convergent regardless of conditioning
        if sweep >= 1:
            grad = np.concatenate([_slice_sums(w, axis) - target for axis in range(dim)])
            hess = _pairwise_marginals(w)
            delta, *_ = np.linalg.lstsq(hess, -grad, rcond=None)
            np.clip(delta, -30.0, 30.0, out=delta)
            w_try = w
            for axis in range(dim):
                w_try = apply_axis(w_try, axis, np.exp(delta[axis * order : (axis + 1) * order]))
            if max_gap(w_try) < gap:
                w = w_try
                for axis in range(dim):
                    totals[axis] *= np.exp(delta[axis * order : (axis + 1) * order])
    raise ConvergenceError(f"IPF did not reach tolerance {tol:.0e} in {max_sweeps} sweeps")


@dataclass(frozen=True, eq=False)
class SieveCopula:
    """Copula density defined by a feasible Bernstein weight tensor."""

    weights: np.ndarray
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.ndim < 1:
            raise FeasibilityError("weight tensor needs at least one axis")
        if validate:
            check_feasible(w)

    @property
    def order(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.ndim

    @property
    def free_parameters(self) -> int:
        return free_parameter_count(self.order, self.dim)

    def _prepare(self, u, *, interior: bool) -> tuple[np.ndarray, bool]:
        arr = np.asarray(u, dtype=float)
        scalar = arr.ndim == 1
        if scalar:
            arr = arr[None, :]
        if arr.shape[-1] != self.dim:
            raise ValueError(f"expected points with {self.dim} coordinates")
        if interior:
            if np.any((arr <= 0.0) | (arr >= 1.0)):
                raise SupportError("gradient requires interior points of the cube")
        elif np.any((arr < 0.0) | (arr > 1.0)):
            raise SupportError("sieve density is defined on the closed unit cube")
        return arr, scalar

    def _basis_matrices(self, arr: np.ndarray) -> list[np.ndarray]:
        degree = self.order - 1
        return [bernstein_basis(arr[:, l], degree) for l in range(self.dim)]

    def density(self, u):
        arr, scalar = self._prepare(u, interior=False)
        mats = self._basis_matrices(arr)
        out = self.order**self.dim * _tensor_contract(mats, self.weights)
        return float(out[0]) if scalar else out

    def log_density(self, u):
        dens = self.density(u)
        return np.log(np.maximum(dens, 1e-300))

    def dlogdensity_du(self, u):
        arr, scalar = self._prepare(u, interior=True)
        mats = self._basis_matrices(arr)
        degree = self.order - 1
        dens = _tensor_contract(mats, self.weights)
        out = np.empty_like(arr)
        for l in range(self.dim):
            deriv = bernstein_basis_derivative(arr[:, l], degree)
            swapped = mats[:l] + [deriv] + mats[l + 1 :]
            out[:, l] = _tensor_contract(swapped, self.weights) / dens
        return out[0] if scalar else out

    def sample(self, n: int, seed=None) -> np.ndarray:
        """Draw from the mixture: pick a cell by weight, then Beta coordinates."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        flat = self.weights.ravel()
        cells = rng.choice(flat.size, size=n, p=flat / flat.sum())
        idx = np.column_stack(np.unravel_index(cells, self.weights.shape))
        # coordinate l | cell v is Beta(v_l + 1, J - v_l)
        return rng.beta(idx + 1.0, self.order - idx)

    # --- serialization ----------------------------------------------------

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self._csv_text())

    def _csv_text(self) -> str:
        buf = io.StringIO()
        cols = ",".join(f"v{l + 1}" for l in range(self.dim))
        buf.write(f"{cols},weight\n")
        for index in np.ndindex(self.weights.shape):
            idx_txt = ",".join(str(i) for i in index)
            buf.write(f"{idx_txt},{float(self.weights[index])!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path) -> "SieveCopula":
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            if header[-1] != "weight" or len(header) < 2:
                raise FeasibilityError(f"unrecognized sieve csv header: {header}")
            dim = len(header) - 1
            rows = []
            for line in fh:
                parts = line.strip().split(",")
                rows.append(([int(p) for p in parts[:dim]], float(parts[dim])))
        order = max(max(idx) for idx, _ in rows) + 1
        weights = np.zeros((order,) * dim)
        for idx, value in rows:
            weights[tuple(idx)] = value
        return cls(weights)

    def to_dict(self) -> dict:
        return {
            "family": "sieve",
            "order": self.order,
            "dim": self.dim,
            "weights": self.weights.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SieveCopula":
        order, dim = int(payload["order"]), int(payload["dim"])
        weights = np.asarray(payload["weights"], dtype=float).reshape((order,) * dim)
        return cls(weights)


_EINSUM_LETTERS = "abcdefgh"


def _tensor_contract(mats: list[np.ndarray], weights: np.ndarray) -> np.ndarray:
    dim = len(mats)
    terms = ",".join(f"n{_EINSUM_LETTERS[l]}" for l in range(dim))
    spec = f"{terms},{_EINSUM_LETTERS[:dim]}->n"
    return np.einsum(spec, *mats, weights, optimize=dim > 2)


def cell_index(u, order: int) -> np.ndarray:
    """Grid cell of each coordinate: ceil(u*J) - 1, clipped into 0..J-1.

    Cell v covers (v/J, (v+1)/J]; a coordinate on an internal boundary goes
    to the lower cell, 0 goes to cell 0 and 1 to the top cell.
    """
    arr = np.asarray(u, dtype=float)
    if np.any((arr < 0.0) | (arr > 1.0)):
        raise SupportError("pseudo-observations must lie in the closed unit cube")
    idx = np.ceil(arr * order).astype(int) - 1
    return np.clip(idx, 0, order - 1)


def empirical_init(u: np.ndarray, order: int) -> SieveCopula:
    """Histogram the pseudo-observations on the J^m grid, floor, project."""
    arr = np.asarray(u, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValueError("need a nonempty (n, m) array of pseudo-observations")
    dim = arr.shape[1]
    idx = cell_index(arr, order)
    flat = np.ravel_multi_index(tuple(idx.T), (order,) * dim)
    counts = np.bincount(flat, minlength=order**dim).astype(float)
    weights = counts.reshape((order,) * dim) / arr.shape[0]
    return SieveCopula(project_feasible(weights))
