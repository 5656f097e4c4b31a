"""Stein equation solver for the centered Gamma target.

The ODE 2(x+nu) f'(x) - x f(x) = h(x) - E[h(G(nu))] has a bounded solution
S(h) with an explicit density-weighted integral representation. Everything
here works on the shifted axis y = (x+nu)/2 where G(nu) becomes a plain
Gamma(r,1) variable with shape r = nu/2: cell integrals of piecewise-linear
integrands against the Gamma density are exact incomplete-gamma differences,
so the only approximation is the piecewise-linear reading of h itself.

For x > -nu the upper-tail form is used:
    S(h)(x) = -(2(x+nu) p(x))^{-1} * int_x^inf (h(t) - E[h]) p(t) dt.
At x = -nu the value is (h(-nu) - E[h]) / nu. For x < -nu the solution is
    (1/2) u^{-r} e^{-u/2} * int_0^u s^{r-1} e^{s/2} (h(-nu-s) - E[h]) ds
with u = -(x+nu), integrated by per-cell Gauss-Legendre rules (the s^{r-1}
endpoint singularity for r < 1 is removed by the substitution s = w^{1/r}).
"""

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.linalg import get_lapack_funcs, lu_factor, lu_solve
from scipy.special import gammainc, gammaincc, gammainccinv, gammaln

from .chaos import GammaTarget
from .errors import (DomainError, NumericalError, TailMassError,
                     ValidationError)
from .grids import GridFunction, GridSpec

_Y_BOUNDARY = 1e-8          # |y| below this uses the boundary-value formula
_TAIL_MASS_TOL = 1e-8
# The discrete operator keeps O(1) self-weights at the first nodes left of
# -nu (forced by the boundary value (h(-nu) - E)/nu), which plants a spurious
# real eigenvalue family near (1/nu)(1/k) that no grid refinement removes.
# lambda = -10 on nu = 2 sits within 1e-10 of one, inflating the condition
# estimate to ~1e13 even though the zero right-hand side still solves
# exactly; the gate must sit above that artifact yet catch true blowups.
_COND_LIMIT = 1e14

_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)

_LOCK = threading.Lock()
_CACHES = {"tables": {}, "matrix": {}, "lu": {}}


def _cache_get(name, key, builder):
    # read-mostly: lookups never take the lock, inserts replace the dict
    hit = _CACHES[name].get(key)
    if hit is not None:
        return hit
    val = builder()
    with _LOCK:
        cur = dict(_CACHES[name])
        if key not in cur:
            cur[key] = val
        _CACHES[name] = cur
        return cur[key]


class _GammaTables:
    """Incomplete-gamma lookups for shape r at fixed y nodes.

    cell_mass[i] and cell_ymom[i] are the exact integrals of gamma_r(y) dy
    and y gamma_r(y) dy over cell i intersected with y > 0, switching between
    P and Q differences around y = r to avoid cancellation.
    """

    def __init__(self, r: float, y: np.ndarray):
        self.r = r
        self.y = y
        yc = np.maximum(y, 0.0)
        self.P = gammainc(r, yc)
        self.Q = gammaincc(r, yc)
        self.P1 = gammainc(r + 1.0, yc)
        self.Q1 = gammaincc(r + 1.0, yc)
        pdf = np.zeros_like(y)
        pos = y > 0.0
        pdf[pos] = np.exp((r - 1.0) * np.log(y[pos]) - y[pos] - gammaln(r))
        self.pdf = pdf
        left = y[:-1]
        use_q = left >= r
        dP = np.where(use_q, self.Q[:-1] - self.Q[1:], self.P[1:] - self.P[:-1])
        dP1 = np.where(use_q, self.Q1[:-1] - self.Q1[1:],
                       self.P1[1:] - self.P1[:-1])
        self.cell_mass = dP
        self.cell_ymom = r * dP1
        self.lower_mass = self.P[0] if y[0] > 0.0 else 0.0
        self.upper_mass = self.Q[-1]


def _tables_for(r: float, grid: GridSpec, shift: float) -> _GammaTables:
    """Cached tables; y = (x + shift)/2 node image of the grid (shift = nu),
    or the grid itself when shift is None-like (classical, y = x)."""
    key = (r, grid.lo, grid.hi, grid.n_points, shift)
    def build():
        x = grid.nodes()
        y = (x + shift) / 2.0 if shift is not None else x
        return _GammaTables(r, y)
    return _cache_get("tables", key, build)


def _cell_coeffs(y: np.ndarray, values: np.ndarray):
    """Per-cell slope b and intercept a of the linear interpolant in y."""
    dy = np.diff(y)
    b = np.diff(values) / dy
    a = values[:-1] - b * y[:-1]
    return a, b


def _tail_integral(tab: _GammaTables, values: np.ndarray, E: float,
                   slope: float) -> float:
    """int over y > y_last of (h_ext - E) gamma_r with linear extension."""
    yN = tab.y[-1]
    aN = values[-1] - slope * yN
    return (aN - E) * tab.upper_mass + slope * tab.r * tab.Q1[-1]


def _expectation(tab: _GammaTables, values: np.ndarray,
                 linear_tail: bool) -> float:
    """E[h_tilde(Y)] for Y ~ Gamma(r,1) with h_tilde the interpolant,
    clamped on the left and either clamped or linearly extended on the
    right."""
    a, b = _cell_coeffs(tab.y, values)
    cells = a * tab.cell_mass + b * tab.cell_ymom
    total = math.fsum(cells.tolist())
    total += float(values[0]) * tab.lower_mass
    if linear_tail:
        slope = float(b[-1])
        total += _tail_integral(tab, values, 0.0, slope)
    else:
        total += float(values[-1]) * tab.upper_mass
    return total


def target_expectation(h: GridFunction, target: GammaTarget) -> float:
    """E[h(G(nu))] by exact cellwise quadrature of the interpolant.

    The grid must carry all but 1e-8 of the Gamma mass.
    """
    nu = target.nu_float
    r = nu / 2.0
    tab = _tables_for(r, h.grid, nu)
    if tab.y[-1] <= 0.0:
        raise ValidationError("grid must extend beyond -nu")
    outside = tab.lower_mass + tab.upper_mass
    if outside > _TAIL_MASS_TOL:
        raise TailMassError(
            f"grid [{h.grid.lo}, {h.grid.hi}] leaves {outside:.3e} of the "
            f"G({nu}) mass outside (tolerance {_TAIL_MASS_TOL})")
    return _expectation(tab, h.values, linear_tail=False)


def _gamma_tail_solution(tab: _GammaTables, values: np.ndarray, E: float):
    """f(y) = -(y gamma_r(y))^{-1} int_y^inf (h - E) gamma_r dt at the
    y nodes with y > 0; boundary value (h - E)/r where y ~ 0; NaN on y < 0
    (callers fill the left branch). Returns (f, near_zero_mask)."""
    y = tab.y
    a, b = _cell_coeffs(y, values)
    cells = (a - E) * tab.cell_mass + b * tab.cell_ymom
    tail = _tail_integral(tab, values, E, float(b[-1]))
    # suffix sums: I[i] = tail + sum of cells i..end
    I = np.empty(len(y))
    I[:-1] = np.cumsum(cells[::-1])[::-1]
    I[-1] = 0.0
    I += tail
    f = np.full(len(y), np.nan)
    near = np.abs(y) < _Y_BOUNDARY
    pos = (y > 0.0) & ~near
    denom = np.exp(tab.r * np.log(y[pos]) - y[pos] - gammaln(tab.r))
    f[pos] = -I[pos] / denom
    f[near] = (values[near] - E) / tab.r
    return f, near


def _exp_moment(p: float, u: float) -> float:
    """int_0^u s^(p-1) e^(s/2) ds by the (entire) series in u/2."""
    term = u ** p
    total = term / p
    half_u = 0.5 * u
    for k in range(1, 120):
        term *= half_u / k
        prev = total
        total += term / (p + k)
        if total == prev:
            break
    return total


def _left_branch(r: float, nu: float, x_nodes: np.ndarray,
                 h_nodes: np.ndarray, x_left: np.ndarray, E: float):
    """Solution at nodes x_left < -nu via the lower-branch integral."""
    u_nodes = -(x_left + nu)          # ascending as x descends
    order = np.argsort(u_nodes)
    u_sorted = u_nodes[order]
    edges = np.concatenate(([0.0], u_sorted))

    def integrand(s):
        hv = np.interp(-nu - s, x_nodes, h_nodes)
        return np.exp(0.5 * s) * (hv - E)

    segs = len(u_sorted)
    seg_vals = np.zeros(segs)
    # the first segment holds the s^(r-1) endpoint singularity; h is linear
    # there (single grid cell), so integrate it in closed series form
    u1 = edges[1]
    if u1 > 0.0:
        j = int(np.searchsorted(x_nodes, -nu - 0.5 * u1)) - 1
        j = min(max(j, 0), len(x_nodes) - 2)
        bx = (h_nodes[j + 1] - h_nodes[j]) / (x_nodes[j + 1] - x_nodes[j])
        A = h_nodes[j] + bx * (-nu - x_nodes[j]) - E
        seg_vals[0] = A * _exp_moment(r, u1) - bx * _exp_moment(r + 1.0, u1)
    if segs > 1:
        lo = edges[1:-1]
        hi = edges[2:]
        mid = 0.5 * (lo + hi)[:, None]
        half = 0.5 * (hi - lo)[:, None]
        sg = mid + half * _GL_X[None, :]
        vals = sg ** (r - 1.0) * integrand(sg.ravel()).reshape(sg.shape)
        seg_vals[1:] = (vals @ _GL_W) * half[:, 0]
    J = np.cumsum(seg_vals)
    f_sorted = 0.5 * np.exp(-r * np.log(u_sorted) - 0.5 * u_sorted) * J
    out = np.empty(segs)
    out[order] = f_sorted
    return out


def _solve_values(grid: GridSpec, values: np.ndarray, nu: float,
                  tab: _GammaTables):
    """S(h) node values plus the expectation used, sharing one table set."""
    y = tab.y
    if y[-1] <= 0.0:
        raise ValidationError("grid must extend beyond -nu")
    E = _expectation(tab, values, linear_tail=True)
    f, near = _gamma_tail_solution(tab, values, E)
    # centered solution is half the shape-r tail solution; at the boundary
    # (h - E)/(2r) = (h - E)/nu
    S = 0.5 * f
    x = grid.nodes()
    left = (y < 0.0) & ~near
    if np.any(left):
        S[left] = _left_branch(nu / 2.0, nu, x, values, x[left], E)
    return S, E, near


def _derivative_values(x: np.ndarray, values: np.ndarray, S: np.ndarray,
                       E: float, nu: float, near: np.ndarray) -> np.ndarray:
    """S' from the ODE rearrangement, one-sided stencil at degenerate
    nodes."""
    d = np.empty_like(S)
    ok = ~near
    d[ok] = (values[ok] - E + x[ok] * S[ok]) / (2.0 * (x[ok] + nu))
    if np.any(near):
        s = x[1] - x[0]
        for i in np.nonzero(near)[0]:
            if i + 2 < len(x):
                d[i] = (-3.0 * S[i] + 4.0 * S[i + 1] - S[i + 2]) / (2.0 * s)
            else:
                d[i] = (S[i] - S[i - 1]) / s
    return d


@dataclass(frozen=True)
class SteinSolution:
    """Bounded solution of the centered-Gamma Stein equation with its
    derivative and a grid-refinement error estimate."""

    solution: GridFunction
    derivative: GridFunction
    target: GammaTarget
    quadrature_error_estimate: float


def solve_stein(h: GridFunction, target: GammaTarget) -> SteinSolution:
    """Solve 2(x+nu) f' - x f = h - E[h(G(nu))] for the bounded f = S(h)."""
    nu = target.nu_float
    r = nu / 2.0
    grid = h.grid
    tab = _tables_for(r, grid, nu)
    S, E, near = _solve_values(grid, h.values, nu, tab)
    if not np.all(np.isfinite(S)):
        raise NumericalError("Stein quadrature produced non-finite values")
    x = grid.nodes()
    d = _derivative_values(x, h.values, S, E, nu, near)

    # refinement check: redo the solve on every second node
    m = (grid.n_points - 1) // 2
    err = 0.0
    if m + 1 >= 16:
        sub = GridSpec(grid.lo, grid.lo + 2.0 * grid.spacing * m, m + 1)
        tab2 = _tables_for(r, sub, nu)
        S2, _, near2 = _solve_values(sub, h.values[:2 * m + 1:2], nu, tab2)
        keep = ~(near[:2 * m + 1:2] | near2)
        err = float(np.max(np.abs(S[:2 * m + 1:2][keep] - S2[keep])))
    if err > 0.05 * (1.0 + h.b_norm):
        raise NumericalError(
            f"Stein quadrature did not converge: refinement estimate {err:.3e} "
            f"on grid [{grid.lo}, {grid.hi}] x {grid.n_points}")

    sol = GridFunction(grid, S, meta={"expectation": E})
    der = GridFunction(grid, d)
    return SteinSolution(solution=sol, derivative=der, target=target,
                         quadrature_error_estimate=err)


def apply_S(h: GridFunction, target: GammaTarget) -> GridFunction:
    """The solution operator S as a map of grid functions."""
    return solve_stein(h, target).solution


def operator_matrix(grid: GridSpec, target: GammaTarget) -> np.ndarray:
    """Dense discretization of S: column j is S applied to the j-th
    interpolation hat. Cached per (grid, nu); treat as read-only."""
    nu = target.nu_float
    r = nu / 2.0
    key = (r, grid.lo, grid.hi, grid.n_points, nu)

    def build():
        tab = _tables_for(r, grid, nu)
        n = grid.n_points
        A = np.empty((n, n))
        e = np.zeros(n)
        for j in range(n):
            e[j] = 1.0
            A[:, j], _, _ = _solve_values(grid, e, nu, tab)
            e[j] = 0.0
        A.setflags(write=False)
        return A

    return _cache_get("matrix", key, build)


def solve_functional_equation(h: GridFunction, lam: float,
                              target: GammaTarget) -> GridFunction:
    """Solve (I + lam S) g = h on the grid; the residual is re-checked with
    the quadrature operator itself, not the matrix."""
    if lam == 0.0:
        raise ValidationError("lambda must be nonzero")
    grid = h.grid
    nu = target.nu_float
    key = (nu / 2.0, grid.lo, grid.hi, grid.n_points, nu, lam)

    def build():
        A = operator_matrix(grid, target)
        M = np.eye(grid.n_points) + lam * A
        anorm = np.linalg.norm(M, 1)
        lu, piv = lu_factor(M)
        gecon = get_lapack_funcs(("gecon",), (M,))
        rcond = gecon[0](lu, anorm, norm="1")[0]
        return lu, piv, rcond

    lu, piv, rcond = _cache_get("lu", key, build)
    if rcond <= 0.0 or 1.0 / rcond > _COND_LIMIT:
        raise NumericalError(
            f"discretized operator too ill-conditioned "
            f"(estimate {1.0 / max(rcond, 1e-300):.3e}); try a finer grid")
    g = lu_solve((lu, piv), h.values)

    tab = _tables_for(nu / 2.0, grid, nu)
    Sg, _, _ = _solve_values(grid, g, nu, tab)
    resid = float(np.max(np.abs(g + lam * Sg - h.values)))
    if resid > 1e-6 * h.b_norm:
        raise NumericalError(
            f"functional-equation residual {resid:.3e} exceeds "
            f"{1e-6 * h.b_norm:.3e}")
    return GridFunction(grid, g, meta={"residual": resid, "lambda": lam})


def gamma_stein_classical(h: GridFunction, r: float) -> GridFunction:
    """Solve x f' + (r - x) f = h - E[h(X_r)] for X_r ~ Gamma(r,1) on
    x >= 0, f(0) = (h(0) - E)/r."""
    if r <= 0.0:
        raise DomainError(f"shape r must be positive, got {r}")
    grid = h.grid
    if grid.lo < 0.0:
        raise ValidationError("classical Gamma grid must start at x >= 0")
    tab = _tables_for(r, grid, None)
    E = _expectation(tab, h.values, linear_tail=True)
    f, near = _gamma_tail_solution(tab, h.values, E)
    if not np.all(np.isfinite(f)):
        raise NumericalError("classical Stein quadrature produced "
                             "non-finite values")
    return GridFunction(grid, f, meta={"expectation": E})


def default_grid(nu: float, n_points: int = 2048) -> GridSpec:
    """[-nu-6, -nu+14 sqrt(nu)] widened to cover all but 1e-11 of the mass,
    with the spacing nudged so -nu lands exactly on a node."""
    if nu <= 0.0:
        raise DomainError(f"nu must be positive, got {nu}")
    lo = -nu - 6.0
    hi = max(-nu + 14.0 * math.sqrt(nu),
             2.0 * float(gammainccinv(nu / 2.0, 1e-11)) - nu)
    s0 = (hi - lo) / (n_points - 1)
    k = math.floor(6.0 / s0)
    if k >= 1:
        s = 6.0 / k
        hi = lo + s * (n_points - 1)
    return GridSpec(lo, hi, n_points)
