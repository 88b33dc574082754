"""Optimal discriminator and optimal generator on a finite set of cells.

For fixed encoder the generator mass that minimizes the discriminator-optimal
objective is ``p = max(0, beta*q - t)`` where ``beta`` in [1, 2] makes ``p``
sum to one. Everything here works on flat arrays; 2-D grids are flattened
row-major by the callers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import rel_entr

from .distributions import DistSpec, Grid2D, density_on_grid

LOG_27_4 = np.log(27.0 / 4.0)
MASS_TOL = 1e-12


class InfeasibleGridError(ValueError):
    pass


class OracleNotConverged(RuntimeError):
    def __init__(self, message: str, last_iterate: np.ndarray):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass
class JointGrid:
    """Normal mass ``q`` and penalty mass ``t`` over the same cells."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).ravel()
        self.t = np.asarray(self.t, dtype=np.float64).ravel()
        if self.q.shape != self.t.shape:
            raise ValueError("q and t must cover the same cells")
        for name, arr in (("q", self.q), ("t", self.t)):
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite and nonnegative")
        if not np.any(self.q > 0):
            raise InfeasibleGridError("q has no mass; no generator solution exists")
        for name, arr in (("q", self.q), ("t", self.t)):
            if abs(arr.sum() - 1.0) > MASS_TOL:
                raise ValueError(f"{name} sums to {arr.sum():.15g}, not 1")

    @classmethod
    def normalized(cls, q, t) -> JointGrid:
        q = np.asarray(q, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if q.sum() <= 0:
            raise InfeasibleGridError("q has no mass; no generator solution exists")
        return cls(q / q.sum(), t / t.sum())

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> JointGrid:
        return cls.normalized(rng.uniform(size=n), rng.uniform(size=n))

    @property
    def size(self) -> int:
        return self.q.size


@dataclass
class BetaSolution:
    beta: float
    support: np.ndarray
    p: np.ndarray
    lam: float
    mu: np.ndarray
    method: str

    @property
    def stationarity_residual(self) -> float:
        """Largest |mu| on the support; zero at an exact KKT point."""
        on = self.support & np.isfinite(self.mu)
        return float(np.abs(self.mu[on]).max()) if on.any() else 0.0


def _check_masses(*arrays):
    for arr in arrays:
        if np.any(np.asarray(arr) < 0):
            raise ValueError("probability masses must be nonnegative")


def optimal_discriminator(q, t, p) -> np.ndarray:
    """``q / (q + t + p)`` per cell; NaN where all three masses vanish."""
    q, t, p = (np.asarray(a, dtype=np.float64) for a in (q, t, p))
    _check_masses(q, t, p)
    s = q + t + p
    out = np.full(np.broadcast(q, s).shape, np.nan)
    np.divide(q, s, out=out, where=s > 0)
    return out


def objective_C(q, t, p) -> float:
    """Discriminator-optimal value of the penalized joint-matching objective.

    ``2 KL((t+p)/2 || s/3) + KL(q || s/3) - log(27/4)`` with ``s = q+t+p``
    and ``0 log 0 = 0``.
    """
    q, t, p = (np.asarray(a, dtype=np.float64).ravel() for a in (q, t, p))
    _check_masses(q, t, p)
    s3 = (q + t + p) / 3.0
    return float(
        2.0 * rel_entr(0.5 * (t + p), s3).sum() + rel_entr(q, s3).sum() - LOG_27_4
    )


def objective_C_grad(q, t, p, floor: float = 1e-300) -> np.ndarray:
    """Gradient of :func:`objective_C` in ``p``: ``log(3(t+p) / 2s)``."""
    a = np.maximum(t + p, floor)
    return np.log(1.5 * a / (a + q))


def S_p_mass(q, t, beta: float) -> float:
    """Total positive-part mass ``sum(max(0, beta*q - t))``."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return float(np.maximum(0.0, beta * np.asarray(q) - np.asarray(t)).sum())


def _beta_bisection(q, t, tol):
    lo, hi = 1.0, 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if S_p_mass(q, t, mid) < 1.0:
            lo = mid
        else:
            hi = mid
    # the endpoint with the smaller mass error
    return min((lo, hi), key=lambda b: abs(S_p_mass(q, t, b) - 1.0))


def _beta_breakpoints(q, t):
    # S_p is linear between consecutive ratios t/q; find the segment hitting 1
    pos = q > 0
    qs, ts = q[pos], t[pos]
    with np.errstate(over="ignore"):
        ratio = ts / qs
    order = np.argsort(ratio, kind="stable")
    r, qc, tc = ratio[order], np.cumsum(qs[order]), np.cumsum(ts[order])
    mass_at_r = r * qc - tc
    k = int(np.searchsorted(mass_at_r, 1.0, side="right")) - 1
    k = max(k, 0)
    # ties share one breakpoint; use the cumulative sums past the whole tie block
    while k + 1 < r.size and r[k + 1] == r[k]:
        k += 1
    beta = (1.0 + tc[k]) / qc[k]
    return float(min(max(beta, 1.0), 2.0))


def solve_beta(grid: JointGrid, tol: float = 1e-12, method: str = "bisection") -> BetaSolution:
    """Unique ``beta`` in [1, 2] with ``S_p_mass(q, t, beta) == 1``.

    ``method`` is ``"bisection"`` (on the monotone mass curve) or
    ``"breakpoint"`` (exact, by sorting the ratios ``t/q``).
    """
    q, t = grid.q, grid.t
    if not np.any(q > 0):
        raise InfeasibleGridError("q has no mass")
    if method == "bisection":
        beta = _beta_bisection(q, t, tol)
    elif method == "breakpoint":
        beta = _beta_breakpoints(q, t)
    else:
        raise ValueError(f"unknown method {method!r}")
    gap = beta * q - t
    p = np.maximum(0.0, gap)
    active = (q > 0) | (t > 0)
    support = (gap >= 0) & active
    lam = float(np.log1p(1.0 / beta))
    mu = np.full(q.shape, np.nan)
    a = t + p
    with np.errstate(divide="ignore"):
        mu[active] = np.log(a[active] / (a[active] + q[active])) + lam
    return BetaSolution(beta, support, p, lam, mu, method)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def oracle_minimize_C(
    grid: JointGrid,
    iters: int = 20000,
    step: float = 1e-2,
    gtol: float = 1e-7,
    xtol: float = 1e-14,
    min_step: float = 1e-12,
) -> np.ndarray:
    """Projected gradient descent on :func:`objective_C` over the simplex.

    Backtracking halves the step until the projected step satisfies the
    sufficient-decrease test; the step grows again after each accepted move.
    Stops on a small gradient mapping, or when roundoff blocks any decrease.
    Independent of :func:`solve_beta`: it never uses the closed form.
    """
    q, t = grid.q, grid.t
    p = np.full(q.size, 1.0 / q.size)
    f = objective_C(q, t, p)
    eta = step
    for _ in range(iters):
        g = objective_C_grad(q, t, p)
        while True:
            cand = project_simplex(p - eta * g)
            d = cand - p
            f_new = objective_C(q, t, cand)
            if f_new <= f + g @ d + 0.5 / eta * (d @ d):
                break
            eta *= 0.5
            if eta < min_step:
                # no step is measurable above roundoff: we are at the floor
                return p
        moved = np.abs(d).sum()
        if moved < xtol or moved / eta < gtol:
            return cand
        p, f = cand, f_new
        eta *= 2.0
    raise OracleNotConverged(f"projected gradient did not converge in {iters} iterations", p)


@dataclass
class GridSolution:
    q: np.ndarray
    t: np.ndarray
    p: np.ndarray
    beta: float
    grid: Grid2D


def fig2_demo(qspec: DistSpec, tspec: DistSpec, grid: Grid2D, method: str = "bisection") -> GridSolution:
    """Discretize ``q`` and ``t`` on ``grid`` and solve for the optimal generator."""
    if qspec.dim != 2 or tspec.dim != 2:
        raise ValueError("both distributions must be 2-D")
    q = density_on_grid(qspec, grid)
    t = density_on_grid(tspec, grid)
    sol = solve_beta(JointGrid(q, t), method=method)
    return GridSolution(q, t, sol.p.reshape(grid.shape), sol.beta, grid)
