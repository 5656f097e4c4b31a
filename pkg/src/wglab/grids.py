"""Uniform 1-D grids and sampled functions.

A GridFunction stores values on a uniform grid together with norm metadata.
Evaluation between nodes is linear interpolation; outside the grid the
function continues as a constant (the edge value).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# slack allowed between a certified lip_norm and the discrete difference quotient
LIP_SLACK = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on [lo, hi] with n_points nodes."""

    lo: float
    hi: float
    n_points: int

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValidationError("grid endpoints must be finite")
        if not self.lo < self.hi:
            raise ValidationError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if self.n_points < 16:
            raise ValidationError(f"n_points must be >= 16, got {self.n_points}")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n_points - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_points)

    def to_json(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "n_points": self.n_points}

    @classmethod
    def from_json(cls, obj) -> "GridSpec":
        return cls(float(obj["lo"]), float(obj["hi"]), int(obj["n_points"]))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Function sampled on a GridSpec.

    lip_norm is an upper estimate of the derivative sup-norm. When not given
    it defaults to the discrete difference quotient; a caller passing a
    certified analytic value must not undercut the discrete estimate.
    curv_norm (optional) plays the same role for the second derivative.
    """

    grid: GridSpec
    values: np.ndarray
    lip_norm: float = None
    sup_norm: float = field(default=None, compare=False)
    curv_norm: float = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.grid.n_points,):
            raise ValidationError(
                f"values length {v.shape} does not match grid ({self.grid.n_points})")
        if not np.all(np.isfinite(v)):
            raise ValidationError("grid function values must be finite")
        object.__setattr__(self, "values", v)
        s = self.grid.spacing
        disc = float(np.max(np.abs(np.diff(v)))) / s if len(v) > 1 else 0.0
        if self.lip_norm is None:
            object.__setattr__(self, "lip_norm", disc)
        elif self.lip_norm < disc - LIP_SLACK:
            raise ValidationError(
                f"declared lip_norm {self.lip_norm} below discrete estimate {disc}")
        object.__setattr__(self, "sup_norm", float(np.max(np.abs(v))))

    @classmethod
    def from_callable(cls, grid: GridSpec, fn, lip_norm=None, curv_norm=None,
                      meta=None) -> "GridFunction":
        vals = np.asarray(fn(grid.nodes()), dtype=float)
        return cls(grid, vals, lip_norm=lip_norm, curv_norm=curv_norm,
                   meta=meta or {})

    @property
    def b_norm(self) -> float:
        """sup norm plus derivative sup estimate."""
        return self.sup_norm + self.lip_norm

    def __call__(self, x):
        # constant continuation outside the grid
        return np.interp(x, self.grid.nodes(), self.values)

    def discrete_curvature(self) -> float:
        """Max second difference quotient, a lower estimate of the second
        derivative sup-norm."""
        v = self.values
        if len(v) < 3:
            return 0.0
        s = self.grid.spacing
        return float(np.max(np.abs(v[2:] - 2.0 * v[1:-1] + v[:-2]))) / (s * s)

    def with_values(self, values, lip_norm=None, curv_norm=None) -> "GridFunction":
        return GridFunction(self.grid, values, lip_norm=lip_norm,
                            curv_norm=curv_norm)

    def scaled(self, a: float) -> "GridFunction":
        lip = None if self.lip_norm is None else abs(a) * self.lip_norm
        curv = None if self.curv_norm is None else abs(a) * self.curv_norm
        return GridFunction(self.grid, a * self.values, lip_norm=lip, curv_norm=curv)

    def plus(self, other: "GridFunction") -> "GridFunction":
        if other.grid != self.grid:
            raise ValidationError("grid mismatch in addition")
        return GridFunction(self.grid, self.values + other.values)

    def minus(self, other: "GridFunction") -> "GridFunction":
        if other.grid != self.grid:
            raise ValidationError("grid mismatch in subtraction")
        return GridFunction(self.grid, self.values - other.values)

    def to_json(self) -> dict:
        return {"lo": self.grid.lo, "hi": self.grid.hi,
                "values": [float(v) for v in self.values]}

    @classmethod
    def from_json(cls, obj) -> "GridFunction":
        vals = [float(v) for v in obj["values"]]
        spec = GridSpec(float(obj["lo"]), float(obj["hi"]), len(vals))
        return cls(spec, np.array(vals))
