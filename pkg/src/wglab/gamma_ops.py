"""Gamma-operator variances, pathwise evaluation, and contraction constants.

On the second chaos the iterated Gamma operators reduce to spectral sums:
Gamma_r = 2^r sum_i c_i^(r+1) z_i^2 for r >= 1 (Gamma_0 = F itself). Variances
of the differences Gamma_r - 2 Gamma_(r-1) have two equivalent evaluations, a
direct trace formula and a cumulant combination; both are kept and checked
against each other.
"""

import math
from dataclasses import dataclass

import numpy as np

from .chaos import SpectralForm, cumulant_spectral
from .errors import DomainError, NumericalError

ROUTE_RTOL = 1e-10


def var_gamma_diff_trace(form: SpectralForm, r: int) -> float:
    """Var(Gamma_r - 2 Gamma_(r-1)) = 2^(2r+1) sum_i c_i^(2r) (c_i - 1)^2."""
    if r < 1:
        raise DomainError(f"r must be >= 1, got {r}")
    c = form.eigenvalues
    return float((1 << (2 * r + 1)) * math.fsum(c ** (2 * r) * (c - 1.0) ** 2))


def var_gamma_diff_cumulant(form: SpectralForm, r: int) -> float:
    """Same variance through cumulants:
    kappa_(2r+2)/(2r+1)! - 4 kappa_(2r+1)/(2r)! + 4 kappa_(2r)/(2r-1)!.
    """
    if r < 1:
        raise DomainError(f"r must be >= 1, got {r}")
    return (cumulant_spectral(form, 2 * r + 2) / math.factorial(2 * r + 1)
            - 4.0 * cumulant_spectral(form, 2 * r + 1) / math.factorial(2 * r)
            + 4.0 * cumulant_spectral(form, 2 * r) / math.factorial(2 * r - 1))


def var_combined(form: SpectralForm) -> float:
    """Var((Gamma_3 - 2 Gamma_2) - 2 (Gamma_2 - 2 Gamma_1)) evaluated
    spectrally: 2^7 sum_i c_i^4 (c_i - 1)^4."""
    c = form.eigenvalues
    return float(128.0 * math.fsum(c ** 4 * (c - 1.0) ** 4))


def gamma_pathwise(form: SpectralForm, r: int, z) -> float:
    """Gamma_r on one realization of the underlying normals.

    z may also be a 2-D block (draws, >= m); then a vector of evaluations is
    returned. Trailing unused normals are ignored.
    """
    if r < 0:
        raise DomainError(f"r must be >= 0, got {r}")
    c = form.eigenvalues
    m = len(c)
    z = np.asarray(z, dtype=float)
    if z.shape[-1] < m:
        raise DomainError(
            f"need at least {m} normals per draw, got {z.shape[-1]}")
    zz = z[..., :m] ** 2
    if r == 0:
        out = (zz - 1.0) @ c
    else:
        out = (2.0 ** r) * (zz @ c ** (r + 1))
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class GammaVarianceTable:
    """Var(Gamma_r - 2 Gamma_(r-1)) for r = 1..r_max plus the combined
    third-order variance, all checked across both evaluation routes."""

    r_max: int
    var_diff: tuple
    var_combined: float

    @classmethod
    def from_form(cls, form: SpectralForm, r_max: int = 4) -> "GammaVarianceTable":
        if r_max < 1:
            raise DomainError(f"r_max must be >= 1, got {r_max}")
        diffs = []
        for r in range(1, r_max + 1):
            vt = var_gamma_diff_trace(form, r)
            vc = var_gamma_diff_cumulant(form, r)
            # The cumulant route cancels three O(kappa) operands; near-target
            # spectra shrink the result far below them, so roundoff must be
            # judged against the operands, not the tiny difference.
            lead = max(
                abs(cumulant_spectral(form, 2 * r + 2))
                / math.factorial(2 * r + 1),
                4.0 * abs(cumulant_spectral(form, 2 * r + 1))
                / math.factorial(2 * r),
                4.0 * abs(cumulant_spectral(form, 2 * r))
                / math.factorial(2 * r - 1),
            )
            scale = max(abs(vt), abs(vc), lead, 1e-300)
            if abs(vt - vc) > ROUTE_RTOL * scale:
                raise NumericalError(
                    f"variance routes disagree at r={r}: trace {vt!r} vs "
                    f"cumulant {vc!r}")
            if vt < 0.0:
                raise NumericalError(f"negative variance at r={r}: {vt!r}")
            diffs.append(vt)
        return cls(r_max=r_max, var_diff=tuple(diffs),
                   var_combined=var_combined(form))

    def to_json(self) -> dict:
        return {"r_max": self.r_max,
                "var_diff": list(self.var_diff),
                "var_combined": self.var_combined}


@dataclass(frozen=True)
class GammaConstantKey:
    """Index tuple (r_1..r_s) for the contraction constant c_q(r_1..r_s).

    Admissibility is enforced at construction. With K_0 = q and
    K_j = K_(j-1) + q - 2 r_j, the constraints are 1 <= r_j <= min(K_(j-1), q)
    for every j and K_j > 0 for j < s (equivalently
    r_1 + ... + r_j < (j+1) q / 2).
    """

    q: int
    indices: tuple

    def __post_init__(self):
        if self.q < 1:
            raise DomainError(f"q must be >= 1, got {self.q}")
        idx = tuple(int(r) for r in self.indices)
        if len(idx) < 1:
            raise DomainError("need at least one index")
        object.__setattr__(self, "indices", idx)
        s = len(idx)
        k = self.q
        for j, r in enumerate(idx, start=1):
            hi = min(k, self.q)
            if not 1 <= r <= hi:
                raise DomainError(
                    f"indicator 1 <= r_{j} <= min(K_{j-1}, q) violated: "
                    f"r_{j} = {r}, K_{j-1} = {k}, q = {self.q}")
            k = k + self.q - 2 * r
            if j < s and k <= 0:
                raise DomainError(
                    f"indicator r_1 + ... + r_{j} < {(j + 1)}q/2 violated: "
                    f"partial sum {sum(idx[:j])} with q = {self.q} "
                    f"leaves K_{j} = {k}")

    @property
    def s(self) -> int:
        return len(self.indices)


def gamma_constants(key: GammaConstantKey, variant: str) -> int:
    """Exact integer value of c_q(r_1..r_s).

    The recursion multiplies, for each added index r_s, the factor
    lead * (r_s - 1)! * C(K_(s-1) - 1, r_s - 1) * C(q - 1, r_s - 1) where the
    leading factor is K_(s-1) = sq - 2(r_1 + ... + r_(s-1)) in the "new"
    variant and q in the "classical" one. Both start from
    c_q(r_1) = q (r_1 - 1)! C(q-1, r_1-1)^2.
    """
    if variant not in ("new", "classical"):
        raise DomainError(f"variant must be 'new' or 'classical', got {variant!r}")
    q = key.q
    idx = key.indices
    r1 = idx[0]
    val = q * math.factorial(r1 - 1) * math.comb(q - 1, r1 - 1) ** 2
    k = 2 * q - 2 * r1
    for r in idx[1:]:
        lead = k if variant == "new" else q
        val *= (lead * math.factorial(r - 1)
                * math.comb(k - 1, r - 1) * math.comb(q - 1, r - 1))
        k = k + q - 2 * r
    return val
