"""Benchmark sequences converging to centered Gamma laws.

Each generator builds one member of a classical family (a two-eigenvalue
toy, a degenerate U-statistic, least-squares autoregression statistics,
Holder-continuous quadratic forms); run_experiment drives the bound and
distance pipelines across n and fits log-log convergence rates.
"""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import malliavin_stein_upper
from .chaos import GammaTarget, KernelMatrix, SpectralForm, spectral_from_kernel
from .distance import build_test_family, d2_lower_estimate, tv_distance_two_eig
from .errors import (ConstructionError, DomainError, NumericalError,
                     ValidationError, WglabError)
from .stein import default_grid

_EXAMPLES = ("naive", "ustat", "ar1", "ar2", "holder_qf")
_GS_POINTS = 10_000
_KERNEL_VERIFY_MAX_N = 200
# analytic quantities carry only rounding noise; MC ones carry their SE
_ANALYTIC_FLOOR = 1e-13
_TV_FLOOR = 1e-9


def gen_naive(n: int) -> SpectralForm:
    """Two-eigenvalue family sqrt(1 + 1/n), sqrt(1 - 1/n); variance 4."""
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    return SpectralForm(np.array([math.sqrt(1.0 + 1.0 / n),
                                  math.sqrt(1.0 - 1.0 / n)]))


def ustat_kernel(n: int) -> KernelMatrix:
    """Coefficient matrix of the order-2 degenerate U-statistic: constant
    1/sqrt(n(n-1)) off the diagonal, zero on it."""
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    a = np.full((n, n), 1.0 / math.sqrt(n * (n - 1.0)))
    np.fill_diagonal(a, 0.0)
    return KernelMatrix(a)


def gen_ustat(n: int) -> SpectralForm:
    """Spectrum of the normalized U-statistic: one eigenvalue
    sqrt((n-1)/n) and n-1 copies of -1/sqrt(n(n-1)); variance 2.

    For n up to 200 the analytic spectrum is cross-checked against the
    eigensolve of the kernel matrix to 1e-10.
    """
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    c = np.empty(n)
    c[0] = math.sqrt((n - 1.0) / n)
    c[1:] = -1.0 / math.sqrt(n * (n - 1.0))
    form = SpectralForm(c)
    if n <= _KERNEL_VERIFY_MAX_N:
        solved = spectral_from_kernel(ustat_kernel(n))
        if solved.m != n:
            raise NumericalError(
                f"kernel eigensolve found {solved.m} eigenvalues, expected {n}")
        gap = float(np.max(np.abs(np.sort(solved.eigenvalues) - np.sort(c))))
        if gap > 1e-10:
            raise NumericalError(
                f"kernel eigensolve disagrees with the analytic spectrum "
                f"(max gap {gap:.3e})")
    return form


def gen_ar1(n: int, beta: float) -> KernelMatrix:
    """Least-squares numerator kernel of the nearly nonstationary AR(1):
    entry (1/sqrt(n(n-1))) (1 - beta/n)^|i-j| off the diagonal.

    At beta = 0 this is entrywise identical to ustat_kernel(n).
    """
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    beta_n = 1.0 - beta / n
    lags = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    a = np.power(beta_n, lags) / math.sqrt(n * (n - 1.0))
    np.fill_diagonal(a, 0.0)
    return KernelMatrix(a)


def ar2_variance_closed(n: int, theta: float) -> float:
    """Closed-form variance of the unscaled AR(2) statistic."""
    s2 = math.sin(theta) ** 2
    osc = (math.cos(2.0 * theta * (n - 1.0))
           - 2.0 * math.cos(theta) * math.cos(theta * (2.0 * n - 1.0))
           + math.cos(theta) ** 2 * math.cos(2.0 * n * theta))
    return (16.0 / n ** 2) * (osc / (8.0 * s2 * s2)
                              + (n * math.cos(2.0 * theta) + 1.0 - n)
                              / (8.0 * s2)
                              + n * (n - 1.0) / 4.0)


def gen_ar2(n: int, theta: float):
    """Kernel of the variance-4 rescaled AR(2) least-squares statistic.

    Returns (matrix, closed_form_variance_of_the_unscaled_statistic). The
    closed form is checked against direct summation of the squared matrix
    entries before rescaling; disagreement beyond 1e-9 relative aborts.
    """
    if n < 3:
        raise DomainError(f"n must be >= 3, got {n}")
    if math.sin(theta) < 1e-6:
        raise DomainError(
            f"sin(theta) = {math.sin(theta)!r} is too close to zero")
    k = np.arange(n, dtype=float)
    g = np.zeros(n)
    g[1:] = (math.cos(theta) * np.sin(k[1:] * theta)
             - np.sin((k[1:] - 1.0) * theta)) / math.sin(theta)
    a = (2.0 / n) * g[np.abs(np.subtract.outer(np.arange(n), np.arange(n)))]
    np.fill_diagonal(a, 0.0)
    brute = 2.0 * float(np.sum(a * a))
    closed = ar2_variance_closed(n, theta)
    if abs(closed - brute) > 1e-9 * abs(brute):
        raise NumericalError(
            f"closed-form variance {closed!r} disagrees with direct "
            f"summation {brute!r}")
    a = a * (math.sqrt(2.0) / float(np.linalg.norm(a)))
    a = (a + a.T) / 2.0
    return KernelMatrix(a), closed


def _holder_basis(nu: int, alpha: float) -> np.ndarray:
    """Coefficients turning the seeds |sin(2 pi m x)|^alpha, m = 1..nu,
    into an L2[0,1]-orthonormal family (Gram-Schmidt on midpoints)."""
    xs = (np.arange(_GS_POINTS) + 0.5) / _GS_POINTS
    seeds = np.abs(np.sin(2.0 * np.pi * np.outer(np.arange(1, nu + 1),
                                                 xs))) ** alpha
    coeffs = np.zeros((nu, nu))
    vecs = np.zeros_like(seeds)
    for m in range(nu):
        v = seeds[m].copy()
        row = np.zeros(nu)
        row[m] = 1.0
        for j in range(m):
            pr = float(np.mean(v * vecs[j]))
            v -= pr * vecs[j]
            row -= pr * coeffs[j]
        nrm = math.sqrt(float(np.mean(v * v)))
        if nrm < 1e-6:
            raise ConstructionError(
                f"seed {m + 1} is numerically dependent on its "
                f"predecessors (residual norm {nrm:.3e})")
        vecs[m] = v / nrm
        coeffs[m] = row / nrm
    gram = (vecs @ vecs.T) / _GS_POINTS
    slip = float(np.max(np.abs(gram - np.eye(nu))))
    if slip > 1e-8:
        raise ConstructionError(
            f"orthonormalization residual {slip:.3e} exceeds 1e-8")
    return coeffs


def gen_holder_qf(n: int, nu: int, alpha: float,
                  basis: str = "trig") -> KernelMatrix:
    """Quadratic-form kernel c(i,j) = sqrt(nu / sum d^2) d(i,j) with
    d(i,j) = (1/n) sum_m e_m(i/n) e_m(j/n) off the diagonal and zero on it,
    the same pure-quadratic-form convention as the other kernel families.

    The diagonal must be dropped: keeping it leaves a rank-nu matrix whose
    normalized cumulant ratios lose every first-order spectral drift, so the
    kernel roughness would no longer show in the convergence rate.

    basis="trig" uses e_m(x) = sqrt(2) cos(m pi x) (Lipschitz, alpha = 1);
    basis="holder" orthonormalizes |sin(2 pi m x)|^alpha seeds, giving an
    alpha-Holder family for fractional alpha.
    """
    if nu != int(nu) or nu < 1:
        raise DomainError(f"basis size must be a positive integer, got {nu}")
    nu = int(nu)
    if n <= nu:
        raise DomainError(
            f"degenerate size: need n > nu, got n = {n}, nu = {nu}")
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    xs = np.arange(1, n + 1) / n
    if basis == "trig":
        if alpha != 1.0:
            raise ValidationError(
                "the trig basis is the alpha = 1 family; use basis='holder' "
                "for fractional alpha")
        rows = math.sqrt(2.0) * np.cos(np.pi * np.outer(np.arange(1, nu + 1),
                                                        xs))
    elif basis == "holder":
        seeds = np.abs(np.sin(2.0 * np.pi * np.outer(np.arange(1, nu + 1),
                                                     xs))) ** alpha
        rows = _holder_basis(nu, alpha) @ seeds
    else:
        raise ValidationError(f"unknown basis {basis!r}")
    d = (rows.T @ rows) / n
    d = (d + d.T) / 2.0
    np.fill_diagonal(d, 0.0)
    ss = float(np.sum(d * d))
    if not ss > 0.0:
        raise ConstructionError("kernel collapsed to zero")
    return KernelMatrix(math.sqrt(nu / ss) * d)


@dataclass(frozen=True)
class ExperimentSpec:
    """One benchmark run: which family, which sizes, and MC budgets."""

    name: str
    n_list: tuple
    nu: object
    params: dict = field(default_factory=dict)
    draws: int = 200_000
    seed: int = 0
    family_size: int = 16
    with_d2: bool = False
    with_tv: bool = False

    def __post_init__(self):
        if self.name not in _EXAMPLES:
            raise ValidationError(
                f"unknown example {self.name!r}; pick one of {_EXAMPLES}")
        ns = tuple(int(n) for n in self.n_list)
        if not ns:
            raise ValidationError("n_list must not be empty")
        if any(n < 2 for n in ns):
            raise ValidationError("every n must be >= 2")
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValidationError("n_list must be strictly increasing")
        object.__setattr__(self, "n_list", ns)
        if not self.nu > 0:
            raise ValidationError(f"nu must be positive, got {self.nu}")
        if self.name == "ar2" and "theta" not in self.params:
            raise ValidationError("ar2 requires params['theta']")
        if self.with_tv and self.name != "naive":
            raise ValidationError(
                "the closed-form TV route only covers the naive example")
        if self.with_tv and float(self.nu) != 2.0:
            raise ValidationError("TV comparison requires nu = 2")

    def to_json(self) -> dict:
        return {"name": self.name, "n_list": list(self.n_list),
                "nu": float(self.nu), "params": dict(self.params),
                "draws": self.draws, "seed": self.seed,
                "family_size": self.family_size,
                "with_d2": self.with_d2, "with_tv": self.with_tv}

    @classmethod
    def from_json(cls, obj) -> "ExperimentSpec":
        return cls(name=obj["name"], n_list=tuple(obj["n_list"]),
                   nu=obj["nu"], params=dict(obj.get("params", {})),
                   draws=int(obj.get("draws", 200_000)),
                   seed=int(obj.get("seed", 0)),
                   family_size=int(obj.get("family_size", 16)),
                   with_d2=bool(obj.get("with_d2", False)),
                   with_tv=bool(obj.get("with_tv", False)))


@dataclass(frozen=True)
class SlopeFit:
    quantity: str
    slope: float
    stderr: float
    n_used: tuple

    def to_json(self) -> dict:
        return {"quantity": self.quantity, "slope": self.slope,
                "stderr": self.stderr, "n_used": list(self.n_used)}


@dataclass(frozen=True)
class RateReport:
    """Per-n bound reports plus fitted log-log decay rates."""

    name: str
    nu: float
    n_list: tuple
    scale_factors: tuple
    reports: tuple
    slopes: dict
    d2_errors: tuple = None
    fit_all: bool = False

    def to_json(self) -> dict:
        out = {"name": self.name, "nu": self.nu,
               "n_list": list(self.n_list),
               "scale_factors": list(self.scale_factors),
               "fit_all": self.fit_all,
               "slopes": {k: v.to_json() for k, v in self.slopes.items()},
               "reports": [r.to_json() for r in self.reports]}
        if self.d2_errors is not None:
            out["d2_errors"] = list(self.d2_errors)
        return out

    def rows(self):
        """One (n, kappa3_diff, kappa4_diff, M, d2_upper_shape,
        d2_empirical, tv) tuple per n; missing entries are None."""
        table = []
        for n, rep in zip(self.n_list, self.reports):
            table.append((n, rep.term_kappa3, rep.term_kappa4, rep.M,
                          rep.d2_upper_shape, rep.empirical_d2,
                          rep.tv_estimate))
        return table


_CSV_HEADER = ("n", "kappa3_diff", "kappa4_diff", "M", "d2_upper_shape",
               "d2_empirical", "tv")


def write_csv(report: RateReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for row in report.rows():
            writer.writerow(["" if v is None else repr(v) for v in row])


def write_gnuplot(report: RateReport, path) -> None:
    """Whitespace-separated table with a comment header; absent values
    become nan, which gnuplot skips."""
    with open(path, "w") as fh:
        fh.write("# " + " ".join(_CSV_HEADER) + "\n")
        for row in report.rows():
            fh.write(" ".join("nan" if v is None else repr(float(v))
                              for v in row) + "\n")


def _fit_slope(quantity, ns, vals, floors, allowed) -> SlopeFit:
    pts = [(n, v) for n, v, f in zip(ns, vals, floors)
           if n in allowed and v is not None and v > 10.0 * f]
    if len(pts) < 2:
        return SlopeFit(quantity, None, None, ())
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    xc = x - x.mean()
    sxx = float(np.sum(xc * xc))
    slope = float(np.sum(xc * y) / sxx)
    stderr = None
    if len(pts) > 2:
        resid = y - (y.mean() + slope * xc)
        stderr = math.sqrt(float(np.sum(resid * resid))
                           / (len(pts) - 2) / sxx)
    return SlopeFit(quantity, slope, stderr,
                    tuple(int(p[0]) for p in pts))


def _build_raw(name, n, nu, params):
    if name == "naive":
        return gen_naive(n)
    if name == "ustat":
        return gen_ustat(n)
    if name == "ar1":
        return spectral_from_kernel(gen_ar1(n, float(params.get("beta", 0.0))))
    if name == "ar2":
        matrix, _ = gen_ar2(n, float(params["theta"]))
        return spectral_from_kernel(matrix)
    basis = params.get("basis", "trig")
    alpha = float(params.get("alpha", 1.0))
    return spectral_from_kernel(gen_holder_qf(n, int(nu), alpha, basis))


def example_form(name: str, n: int, nu, params: dict = None):
    """One family member rescaled to variance exactly 2 nu.

    Returns (form, scale) where scale is the uniform eigenvalue factor that
    was applied.
    """
    raw = _build_raw(name, n, nu, params or {})
    nu_f = float(nu)
    scale = math.sqrt(2.0 * nu_f / raw.variance)
    form = raw.scaled(scale)
    if abs(form.variance - 2.0 * nu_f) > 1e-12:
        raise NumericalError(
            f"rescaled variance {form.variance!r} misses "
            f"2 nu = {2.0 * nu_f!r}")
    return form, scale


def run_experiment(spec: ExperimentSpec, threads: int = None,
                   fit_all: bool = False) -> RateReport:
    """Bound reports and rate fits for every n in the spec.

    Each form is rescaled uniformly so its variance is exactly 2 nu; the
    factor is recorded. The empirical-d2 stage reuses one seed across all
    n (common random numbers), so ratios between sizes are stable and the
    whole report is deterministic given the spec. Log-log fits drop the
    two smallest n unless fit_all, and drop points below 10x their noise
    floor.
    """
    target = GammaTarget(spec.nu)
    nu = target.nu_float
    family = None
    if spec.with_d2:
        family = build_test_family(default_grid(nu), spec.family_size)

    def one(n):
        try:
            form, scale = example_form(spec.name, n, spec.nu, spec.params)
            rep = malliavin_stein_upper(form, target)
            d2_se = None
            if spec.with_d2:
                est = d2_lower_estimate(form, target, family, spec.draws,
                                        spec.seed)
                rep = replace(rep, empirical_d2=est.value)
                d2_se = est.standard_error
            if spec.with_tv:
                c = np.sort(form.eigenvalues)[::-1]
                rep = replace(rep, tv_estimate=tv_distance_two_eig(
                    float(c[0]), float(c[1]), target))
            return scale, rep, d2_se
        except WglabError as exc:
            raise type(exc)(f"{spec.name} n={n}: {exc}") from exc

    workers = threads if threads else min(4, len(spec.n_list))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        done = dict(zip(spec.n_list, pool.map(one, spec.n_list)))
    scales = tuple(done[n][0] for n in spec.n_list)
    reports = tuple(done[n][1] for n in spec.n_list)
    d2_errs = tuple(done[n][2] for n in spec.n_list)

    allowed = set(spec.n_list if fit_all else spec.n_list[2:])
    ns = spec.n_list
    flat = [_ANALYTIC_FLOOR] * len(ns)
    slopes = {}
    for q, vals, floors in (
            ("M", [r.M for r in reports], flat),
            ("sqrt_M", [r.sqrtM for r in reports],
             [math.sqrt(_ANALYTIC_FLOOR)] * len(ns)),
            ("d2_upper_shape", [r.d2_upper_shape for r in reports], flat),
            ("d2_upper_subopt", [r.d2_upper_subopt for r in reports], flat),
            ("kappa3_diff", [r.term_kappa3 for r in reports], flat),
            ("kappa4_diff", [r.term_kappa4 for r in reports], flat)):
        slopes[q] = _fit_slope(q, ns, vals, floors, allowed)
    if spec.with_d2:
        slopes["empirical_d2"] = _fit_slope(
            "empirical_d2", ns, [r.empirical_d2 for r in reports],
            [se if se else _ANALYTIC_FLOOR for se in d2_errs], allowed)
    if spec.with_tv:
        slopes["tv"] = _fit_slope(
            "tv", ns, [r.tv_estimate for r in reports],
            [_TV_FLOOR] * len(ns), allowed)
    return RateReport(name=spec.name, nu=nu, n_list=ns,
                      scale_factors=scales, reports=reports, slopes=slopes,
                      d2_errors=d2_errs if spec.with_d2 else None,
                      fit_all=fit_all)
