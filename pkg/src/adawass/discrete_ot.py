"""Exact optimal transport between finite discrete laws.

The solver is a dense two-phase primal simplex.  Problem sizes here are
small (nodewise couplings on scenario trees and path-pair oracles), so
determinism and exactness matter far more than speed: entering columns take
the largest reduced cost with index tie-breaking, leaving rows follow the
lexicographic ratio test, so the iteration cannot cycle even on the heavily
degenerate causality polytopes.  Together with a fixed atom ordering the
solver always returns the same optimal vertex for the same input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "DiscreteLaw",
    "TransportPlan",
    "InfeasibleError",
    "UnboundedError",
    "lp_solve",
    "solve_transport",
    "w_distance",
]

MASS_TOL = 1e-12
MARGINAL_TOL = 1e-10
_MIN_ATOM = 1e-14


class InfeasibleError(ValueError):
    """The constraint system admits no feasible point."""


class UnboundedError(ValueError):
    """The objective is unbounded below on the feasible set."""


@dataclass(frozen=True)
class DiscreteLaw:
    """Finitely supported law: an array of points and positive masses summing to one."""

    points: tuple[tuple[float, ...], ...]
    masses: tuple[float, ...]

    def __post_init__(self):
        if len(self.points) != len(self.masses):
            raise ValueError("points and masses differ in length")
        if not self.points:
            raise ValueError("empty law")
        if any(m < _MIN_ATOM for m in self.masses):
            raise ValueError("degenerate atom mass below 1e-14")
        if abs(sum(self.masses) - 1.0) > MASS_TOL * max(1.0, len(self.masses)):
            raise ValueError(f"masses sum to {sum(self.masses)!r}, expected 1")

    @classmethod
    def from_arrays(cls, points, masses) -> "DiscreteLaw":
        pts = tuple(tuple(float(x) for x in np.atleast_1d(p)) for p in points)
        return cls(points=pts, masses=tuple(float(m) for m in masses))

    def __len__(self) -> int:
        return len(self.masses)


@dataclass(frozen=True)
class TransportPlan:
    """Coupling matrix between two discrete laws."""

    matrix: tuple[tuple[float, ...], ...]
    source_masses: tuple[float, ...]
    target_masses: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.array(self.matrix, dtype=float)

    def marginal_errors(self) -> tuple[float, float]:
        m = self.as_array()
        row = float(np.abs(m.sum(axis=1) - np.asarray(self.source_masses)).max())
        col = float(np.abs(m.sum(axis=0) - np.asarray(self.target_masses)).max())
        return row, col

    def is_feasible(self, tol: float = MARGINAL_TOL) -> bool:
        row, col = self.marginal_errors()
        return row <= tol and col <= tol and self.as_array().min() >= -tol


def _pivot(tableau: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])
    basis[row] = col


def _leaving_row(tableau: np.ndarray, col: int, m: int, tol: float) -> int:
    """Lexicographic ratio test: anti-cycling and fully deterministic."""
    colvals = tableau[:m, col]
    pos = np.nonzero(colvals > tol)[0]
    if pos.size == 0:
        raise UnboundedError("objective unbounded along a simplex ray")
    ratios = tableau[pos, -1] / colvals[pos]
    best = ratios.min()
    active = pos[np.nonzero(ratios <= best + 1e-12 * (1.0 + abs(best)))[0]]
    if active.size > 1:
        for c in range(tableau.shape[1] - 1):
            vals = tableau[active, c] / colvals[active]
            low = vals.min()
            active = active[np.nonzero(vals <= low + 1e-12 * (1.0 + abs(low)))[0]]
            if active.size == 1:
                break
    return int(active[0])


def _simplex_iterate(tableau: np.ndarray, basis: np.ndarray, allowed: int,
                     tol: float, max_iter: int) -> None:
    """Run simplex iterations on a tableau whose last row holds z_j - c_j.

    Columns with index >= ``allowed`` may never enter the basis (used to
    keep artificial variables out in phase two).  Entering columns take the
    largest reduced cost with smallest-index tie-breaking; leaving rows use
    the lexicographic ratio test, so the pivot sequence cannot cycle and is
    identical on every run for the same input.
    """
    m = tableau.shape[0] - 1
    for _ in range(max_iter):
        reduced = tableau[m, :allowed]
        candidates = np.nonzero(reduced > tol)[0]
        if candidates.size == 0:
            return
        col = int(candidates[np.argmax(reduced[candidates])])
        row = _leaving_row(tableau, col, m, tol)
        _pivot(tableau, basis, row, col)
    raise RuntimeError("simplex iteration limit exceeded")


def lp_solve(c: Sequence[float], a_mat, b: Sequence[float],
             equality: Sequence[bool] | None = None,
             tol: float = 1e-10) -> tuple[float, np.ndarray]:
    """Minimize c.x subject to A x (=|<=) b and x >= 0.

    ``equality`` flags each row as an equality (default: all rows).  Returns
    the optimal value and a basic optimal solution; raises InfeasibleError or
    UnboundedError otherwise.  Pivoting is deterministic, so repeated calls
    return the same optimal vertex.
    """
    a = np.array(a_mat, dtype=float)
    if a.ndim != 2:
        raise ValueError("constraint matrix must be two-dimensional")
    m, n = a.shape
    cost = np.asarray(c, dtype=float)
    rhs = np.array(b, dtype=float)
    if cost.shape != (n,) or rhs.shape != (m,):
        raise ValueError("inconsistent LP shapes")
    eq = np.ones(m, dtype=bool) if equality is None else np.asarray(equality, dtype=bool)
    if eq.shape != (m,):
        raise ValueError("equality flags must match the number of rows")

    slack_rows = np.nonzero(~eq)[0]
    n_slack = slack_rows.size
    n_art = m
    total = n + n_slack + n_art

    ext = np.zeros((m, total))
    ext[:, :n] = a
    for k, i in enumerate(slack_rows):
        ext[i, n + k] = 1.0
    neg = rhs < 0
    ext[neg] *= -1.0
    rhs = np.where(neg, -rhs, rhs)
    ext[:, n + n_slack:] = np.eye(m)

    tableau = np.zeros((m + 1, total + 1))
    tableau[:m, :total] = ext
    tableau[:m, -1] = rhs
    basis = np.arange(n + n_slack, total)

    # phase one: z_j - c_j for the artificial cost is the column sum
    tableau[m, :] = tableau[:m, :].sum(axis=0)
    tableau[m, n + n_slack:total] = 0.0
    _simplex_iterate(tableau, basis, allowed=n + n_slack, tol=tol, max_iter=200 * (m + total))
    if tableau[m, -1] > 1e-8 * max(1.0, float(rhs.max()) if m else 1.0):
        raise InfeasibleError(f"phase-one residual {tableau[m, -1]!r}")

    # drive artificial variables out of the basis where possible
    for i in range(m):
        if basis[i] >= n + n_slack:
            cols = np.nonzero(np.abs(tableau[i, : n + n_slack]) > tol)[0]
            if cols.size:
                _pivot(tableau, basis, i, int(cols[0]))

    # phase two objective row for the true cost
    cost_ext = np.zeros(total)
    cost_ext[:n] = cost
    tableau[m, :] = cost_ext[basis] @ tableau[:m, :]
    tableau[m, :total] -= cost_ext
    scale = max(1.0, float(np.abs(cost).max()) if cost.size else 1.0)
    _simplex_iterate(tableau, basis, allowed=n + n_slack, tol=tol * scale, max_iter=200 * (m + total))

    x = np.zeros(total)
    x[basis] = tableau[:m, -1]
    solution = x[:n]
    value = float(cost @ solution)
    return value, solution


def _transport_simplex(mu: np.ndarray, nu: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Solve the transport LP through the generic simplex; returns the plan."""
    n, m = cost.shape
    a = np.zeros((n + m, n * m))
    for i in range(n):
        a[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        a[n + j, j::m] = 1.0
    rhs = np.concatenate([mu, nu])
    _, x = lp_solve(cost.ravel(), a, rhs)
    return x.reshape(n, m)


def _transport_2x2(mu: np.ndarray, nu: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Closed form for the one-parameter 2x2 polytope; endpoint chosen by the cost gap."""
    lo = max(0.0, mu[0] + nu[0] - 1.0)
    hi = min(mu[0], nu[0])
    gap = cost[0, 0] - cost[0, 1] - cost[1, 0] + cost[1, 1]
    theta = lo if gap > 1e-14 else hi
    plan = np.array([
        [theta, mu[0] - theta],
        [nu[0] - theta, mu[1] - nu[0] + theta],
    ])
    return np.maximum(plan, 0.0)


def solve_transport(mu_masses, nu_masses, cost) -> tuple[float, np.ndarray]:
    """Optimal plan between raw mass vectors; no atom-size restrictions.

    Internal workhorse behind :func:`w_distance` and the nodewise solves of
    the bicausal induction, where machine-epsilon atoms can legitimately
    appear on product trees.
    """
    mu_m = np.asarray(mu_masses, dtype=float)
    nu_m = np.asarray(nu_masses, dtype=float)
    cmat = np.array(cost, dtype=float)
    n, m = mu_m.size, nu_m.size
    if cmat.shape != (n, m):
        raise ValueError(f"cost has shape {cmat.shape}, expected {(n, m)}")
    if not np.isfinite(cmat).all():
        raise ValueError("cost entries must be finite")
    if abs(mu_m.sum() - nu_m.sum()) > 1e-9:
        raise InfeasibleError(
            f"marginal masses {mu_m.sum()!r} and {nu_m.sum()!r} do not balance"
        )
    if n == 1:
        plan = nu_m[None, :].copy()
    elif m == 1:
        plan = mu_m[:, None].copy()
    elif n == 2 and m == 2:
        plan = _transport_2x2(mu_m, nu_m, cmat)
    else:
        plan = _transport_simplex(mu_m, nu_m, cmat)
    plan[plan < 0.0] = 0.0
    value = float((plan * cmat).sum())
    return value, plan


def w_distance(mu: DiscreteLaw, nu: DiscreteLaw, cost) -> tuple[float, TransportPlan]:
    """Minimal total transport cost between two discrete laws.

    ``cost`` is the ground-cost matrix (typically a p-th power of distances);
    the returned value is ``sum_ij plan_ij cost_ij`` and the caller takes the
    1/p root.  Marginals that do not balance are rejected.
    """
    value, plan = solve_transport(mu.masses, nu.masses, cost)
    tp = TransportPlan(
        matrix=tuple(tuple(float(v) for v in row) for row in plan),
        source_masses=mu.masses,
        target_masses=nu.masses,
    )
    return value, tp
