"""Spectral representation of quadratic Gaussian functionals.

A SpectralForm holds eigenvalues c_1..c_m of a symmetric kernel and stands for
F = sum_i c_i (N_i^2 - 1) with independent standard normals N_i. Everything
downstream (cumulants, sampling, characteristic function, density) is driven
by the eigenvalues.
"""

import math
import struct
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, ndtri

from .errors import DomainError, NumericalError, ValidationError
from .grids import GridFunction, GridSpec

_MASK64 = (1 << 64) - 1
_SAMPLE_BLOCK = 1 << 16
_MAGIC = b"WGL1"

# FFT inversion work caps
_CF_PHI_TAIL = 1e-8
_CF_CUTOFF_CAP = 32768.0
_CF_MAX_FFT = 1 << 23


@dataclass(frozen=True, eq=False)
class SpectralForm:
    """Eigenvalue list of a second-chaos element; at least one nonzero."""

    eigenvalues: np.ndarray
    mass_defect: float = field(default=0.0, compare=False)

    def __post_init__(self):
        c = np.asarray(self.eigenvalues, dtype=float)
        if c.ndim != 1 or len(c) < 1:
            raise ValidationError("eigenvalues must be a non-empty 1-D list")
        if not np.all(np.isfinite(c)):
            raise ValidationError("eigenvalues must be finite")
        if not np.any(c != 0.0):
            raise ValidationError("no nonzero eigenvalue")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "eigenvalues", c)

    @property
    def m(self) -> int:
        return len(self.eigenvalues)

    @property
    def variance(self) -> float:
        return 2.0 * float(math.fsum(self.eigenvalues ** 2))

    def scaled(self, a: float) -> "SpectralForm":
        return SpectralForm(a * self.eigenvalues)

    def to_json(self) -> dict:
        return {"eigenvalues": [float(c) for c in self.eigenvalues]}

    @classmethod
    def from_json(cls, obj) -> "SpectralForm":
        return cls(np.asarray(obj["eigenvalues"], dtype=float))


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Symmetric real coefficient matrix of a Gaussian quadratic form."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValidationError("entries must be a square matrix")
        if not np.all(np.isfinite(a)):
            raise ValidationError("matrix entries must be finite")
        if not np.array_equal(a, a.T):
            raise ValidationError("matrix must be exactly symmetric")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.entries))

    def to_json(self) -> dict:
        return {"n": self.n, "entries": [[float(v) for v in row]
                                         for row in self.entries]}

    @classmethod
    def from_json(cls, obj) -> "KernelMatrix":
        a = np.asarray(obj["entries"], dtype=float)
        if "n" in obj and int(obj["n"]) != a.shape[0]:
            raise ValidationError("declared n does not match entries shape")
        return cls(a)


@dataclass(frozen=True)
class GammaTarget:
    """Centered Gamma target G(nu) = 2 Gamma(nu/2, 1) - nu.

    nu may be a float or a fractions.Fraction; cumulants follow its type, so
    rational nu gives exact rational cumulants.
    """

    nu: object

    def __post_init__(self):
        if not self.nu > 0:
            raise ValidationError(f"nu must be positive, got {self.nu}")

    @property
    def nu_float(self) -> float:
        return float(self.nu)


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Realizations of one spectral form.

    seed is None for batches loaded from disk (the binary format does not
    store it).
    """

    draws: np.ndarray
    seed: object
    count: int

    def __post_init__(self):
        d = np.asarray(self.draws, dtype=float)
        if self.count != len(d):
            raise ValidationError("count does not match number of draws")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)

    def save(self, path):
        """Flat little-endian float64 file with a 16-byte header."""
        header = _MAGIC + b"\x00\x00\x00\x00" + struct.pack("<Q", self.count)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.draws.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "SampleBatch":
        with open(path, "rb") as fh:
            header = fh.read(16)
            if len(header) != 16 or header[:4] != _MAGIC:
                raise ValidationError("not a sample-batch file (bad header)")
            count = struct.unpack("<Q", header[8:16])[0]
            data = np.frombuffer(fh.read(), dtype="<f8")
        if len(data) != count:
            raise ValidationError(
                f"file holds {len(data)} draws but header says {count}")
        return cls(draws=data.astype(float), seed=None, count=int(count))


def cumulant_target(target: GammaTarget, p: int):
    """p-th cumulant of G(nu): 0 for p = 1, else 2^(p-1) (p-1)! nu."""
    if p < 1:
        raise DomainError(f"cumulant order must be >= 1, got {p}")
    if p == 1:
        return 0 * target.nu
    return (1 << (p - 1)) * math.factorial(p - 1) * target.nu


def cumulant_spectral(form: SpectralForm, p: int) -> float:
    """p-th cumulant of the form: 2^(p-1) (p-1)! sum_i c_i^p."""
    if p < 2:
        raise DomainError(f"spectral cumulant order must be >= 2, got {p}")
    c = form.eigenvalues
    return (1 << (p - 1)) * math.factorial(p - 1) * float(math.fsum(c ** p))


def jacobi_eigenvalues(matrix: np.ndarray, max_sweeps: int = 60) -> np.ndarray:
    """All eigenvalues of a dense symmetric matrix by cyclic Jacobi rotations.

    Rotations with |a_pq| <= 1e-15 * ||A||_F are skipped (threshold pivoting);
    convergence once the strictly-off-diagonal Frobenius norm falls below
    max(1e-13, 2n * eps) * ||A||_F. The dimension factor matters: each sweep
    re-rounds every entry, so the attainable off-diagonal floor grows with n
    and a fixed multiplier stalls around n = 800. Returns eigenvalues sorted
    descending.
    """
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy()
    fro = np.linalg.norm(a)
    if fro == 0.0:
        return np.zeros(n)
    pivot_floor = 1e-15 * fro
    stop = max(1e-13, 2.0 * n * np.finfo(float).eps) * fro

    def off_norm():
        # direct computation; subtracting diagonal mass from the total cancels
        b = a.copy()
        np.fill_diagonal(b, 0.0)
        return np.linalg.norm(b)

    for sweep in range(max_sweeps + 1):
        if off_norm() <= stop:
            break
        if sweep == max_sweeps:
            raise NumericalError(
                f"Jacobi did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {off_norm():.3e})")
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= pivot_floor:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                tau = (aqq - app) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.hypot(1.0, tau))
                cth = 1.0 / math.hypot(1.0, t)
                sth = t * cth
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = cth * col_p - sth * col_q
                a[:, q] = sth * col_p + cth * col_q
                a[p, :] = a[:, p]
                a[q, :] = a[:, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
    vals = np.sort(a.diagonal())[::-1]
    return vals.copy()


def spectral_from_kernel(matrix: KernelMatrix, tol: float = None) -> SpectralForm:
    """Eigenvalues of the kernel with |c| > tol, checked against the
    Frobenius mass.

    tol defaults to 1e-12 times the Frobenius norm. The squared mass dropped
    with the below-tol eigenvalues is kept on the result as mass_defect
    rather than silently discarded.
    """
    fro = matrix.frobenius()
    if tol is None:
        tol = 1e-12 * fro
    if not tol > 0.0:
        raise ValidationError("tol must be positive")
    if fro == 0.0:
        raise ValidationError("no nonzero eigenvalue (zero matrix)")
    vals = jacobi_eigenvalues(matrix.entries)
    kept = vals[np.abs(vals) > tol]
    if len(kept) == 0:
        raise ValidationError("no nonzero eigenvalue above tolerance")
    kept_mass = float(math.fsum(kept ** 2))
    defect = fro * fro - kept_mass
    if abs(defect) > tol * matrix.n:
        raise NumericalError(
            f"eigenvalue mass check failed: discarded squared mass {defect:.3e} "
            f"exceeds {tol * matrix.n:.3e}")
    return SpectralForm(kept, mass_defect=defect)


def _normal_block(seed: int, block_index: int, rows: int, cols: int) -> np.ndarray:
    """Deterministic standard-normal block from a counter-based stream.

    Stream (seed, block_index) is independent of all others; deviates come
    from 53-bit uniforms through the inverse normal CDF, so the values do not
    depend on how many blocks run in parallel.
    """
    key = np.array([seed & _MASK64, block_index & _MASK64], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    k = gen.integers(0, 1 << 53, size=(rows, cols), dtype=np.uint64)
    u = (k.astype(float) + 0.5) * (2.0 ** -53)  # strictly inside (0, 1)
    return ndtri(u)


def normal_stream(seed: int, count: int, cols: int):
    """Yield (block_index, z-block) pairs covering `count` rows."""
    pos = 0
    block = 0
    while pos < count:
        take = min(_SAMPLE_BLOCK, count - pos)
        yield block, _normal_block(seed, block, take, cols)
        pos += take
        block += 1


def sample(form: SpectralForm, count: int, seed: int) -> SampleBatch:
    """count independent draws of F, deterministic given (seed, count)."""
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    c = form.eigenvalues
    out = np.empty(count)
    pos = 0
    for _, z in normal_stream(seed, count, len(c)):
        take = z.shape[0]
        out[pos:pos + take] = (z * z - 1.0) @ c
        pos += take
    return SampleBatch(draws=out, seed=seed, count=count)


def char_function(form: SpectralForm, t):
    """E[exp(itF)] = prod_j (1 - 2 i c_j t)^(-1/2) exp(-i c_j t).

    Principal branch per factor; Re(1 - 2 i c t) = 1 for real t, so no branch
    cut is crossed. Scalar t gives a complex scalar, arrays map elementwise.
    """
    c = form.eigenvalues
    tt = np.asarray(t, dtype=float)
    z = 1.0 - 2.0j * np.multiply.outer(tt, c)
    val = np.exp(np.sum(-0.5 * np.log(z) - 1.0j * np.multiply.outer(tt, c),
                        axis=-1))
    if np.isscalar(t) or getattr(t, "ndim", 0) == 0:
        return complex(val)
    return val


def centered_gamma_density(nu: float, x) -> np.ndarray:
    """Density of G(nu) on x > -nu, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    r = nu / 2.0
    y = (x + nu) / 2.0
    out = np.zeros_like(x)
    pos = y > 0.0
    yp = y[pos]
    # (1/2) * y^(r-1) e^(-y) / Gamma(r)
    out[pos] = 0.5 * np.exp((r - 1.0) * np.log(yp) - yp - gammaln(r))
    return out


def _abs_char(c: np.ndarray, t: float) -> float:
    return float(np.prod((1.0 + 4.0 * c * c * t * t) ** -0.25))


def _cf_cutoff(c: np.ndarray) -> float:
    """Frequency T with |phi(T)| ~ 1e-8, capped to bound FFT size."""
    hi = 1.0
    while _abs_char(c, hi) > _CF_PHI_TAIL and hi < 1e12:
        hi *= 2.0
    lo = hi / 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _abs_char(c, mid) > _CF_PHI_TAIL:
            lo = mid
        else:
            hi = mid
    return min(hi, _CF_CUTOFF_CAP / float(np.min(np.abs(c))))


def _cdf_from_cf(form: SpectralForm, xs: np.ndarray) -> np.ndarray:
    """P(F <= x) at a few points by midpoint quadrature of the inversion
    integral for the distribution function."""
    c = form.eigenvalues
    T = _cf_cutoff(c)
    x_scale = max(1.0, float(np.max(np.abs(xs))))
    dt = min(0.02, 0.5 / x_scale)
    n = int(T / dt)
    out = np.empty(len(xs))
    # chunk the frequency axis to bound memory
    acc = np.zeros(len(xs))
    chunk = 1 << 19
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        t = (idx + 0.5) * dt
        phi = char_function(form, t)
        e = np.exp(-1.0j * np.multiply.outer(np.asarray(xs, float), t))
        acc += np.sum(np.imag(e * phi) / t, axis=1)
    out = 0.5 - acc * dt / np.pi
    return out


def density_cf_inversion(form: SpectralForm, grid: GridSpec) -> GridFunction:
    """Density of F on the grid by Fourier inversion of char_function.

    Values are cell averages over one grid spacing (a box filter folded into
    the inversion), which keeps trapezoid integration of the output accurate
    even where the density has an integrable singularity. For spectra of one
    sign with at most two eigenvalues the density is singular or jumps at the
    support edge; the grid is then clipped to the interior and the result is
    flagged edge-singular. A single eigenvalue uses the exact Gamma density.
    Metadata records the cutoff, the FFT size, clipping, and the mass outside
    the returned grid.
    """
    c = form.eigenvalues
    sigma = math.sqrt(form.variance)
    if grid.hi - grid.lo < 8.0 * sigma:
        raise ValidationError(
            f"grid spans {(grid.hi - grid.lo) / sigma:.2f} standard deviations, need >= 8")

    m = form.m
    same_signed = bool(np.all(c > 0.0)) or bool(np.all(c < 0.0))
    meta = {"edge_singular": False, "clipped": False, "mass_outside": 0.0}

    work_grid = grid
    if same_signed and m <= 2:
        # support edge; density blows up (m=1) or jumps (m=2) there
        meta["edge_singular"] = True
        margin = 0.05 * sigma
        if np.all(c > 0.0):
            edge = -float(np.sum(c))
            if grid.lo < edge + margin:
                work_grid = GridSpec(edge + margin, grid.hi, grid.n_points)
                meta["clipped"] = True
        else:
            edge = -float(np.sum(c))  # positive; support is x < edge
            if grid.hi > edge - margin:
                work_grid = GridSpec(grid.lo, edge - margin, grid.n_points)
                meta["clipped"] = True

    if m == 1:
        vals = _single_eig_density(float(c[0]), work_grid, meta)
    else:
        vals = _fft_density(form, work_grid, meta)

    lo_cdf, hi_cdf = _cdf_from_cf(form, np.array([work_grid.lo, work_grid.hi]))
    meta["mass_below_lo"] = float(lo_cdf)
    meta["mass_above_hi"] = float(1.0 - hi_cdf)
    meta["mass_outside"] = float(lo_cdf + (1.0 - hi_cdf))

    gf = GridFunction(work_grid, vals, meta=meta)
    total = float(np.trapezoid(vals, work_grid.nodes()))
    meta["grid_integral"] = total
    if abs(total + meta["mass_outside"] - 1.0) > 1e-4:
        raise NumericalError(
            f"density normalization failed: grid integral {total:.6f} plus "
            f"outside mass {meta['mass_outside']:.6f} is not 1 within 1e-4")
    return gf


def _single_eig_density(c1: float, grid: GridSpec, meta: dict) -> np.ndarray:
    x = grid.nodes()
    meta["method"] = "exact-gamma"
    if c1 > 0:
        return centered_gamma_density(1.0, x / c1) / c1
    return centered_gamma_density(1.0, x / c1) / (-c1)


def _fft_density(form: SpectralForm, grid: GridSpec, meta: dict) -> np.ndarray:
    c = form.eigenvalues
    sigma = math.sqrt(form.variance)
    lo, hi, n_points = grid.lo, grid.hi, grid.n_points
    dx_req = grid.spacing
    T = _cf_cutoff(c)
    k = max(1, int(math.ceil(dx_req * T / (2.0 * math.pi))))
    dx = dx_req / k
    span_pad = 2.0 * (hi - lo) + 40.0 * sigma
    n_fft = 1 << int(math.ceil(math.log2(span_pad / dx)))
    if n_fft > _CF_MAX_FFT:
        raise NumericalError(
            f"inversion needs an FFT of {n_fft} points (> {_CF_MAX_FFT}); "
            "spectrum too stiff for this grid")
    dt = 2.0 * math.pi / (n_fft * dx)
    t = np.arange(n_fft) * dt
    w = np.ones(n_fft)
    w[0] = 0.5
    phi = char_function(form, t)
    # box filter of one requested spacing: emitted values are cell averages
    phi = phi * np.sinc(t * dx_req / (2.0 * math.pi))
    a = phi * np.exp(-1.0j * t * lo) * w * (dt / math.pi)
    vals = np.real(np.fft.fft(a))[np.arange(n_points) * k]
    meta.update({"method": "fft", "cutoff": T, "fft_size": n_fft,
                 "oversample": k, "dt": dt})
    return vals
