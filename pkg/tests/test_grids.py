"""Grid containers and their norm bookkeeping."""

import json

import numpy as np
import pytest

from wglab import GridFunction, GridSpec, ValidationError


class TestGridSpec:
    def test_ordering_required(self):
        with pytest.raises(ValidationError):
            GridSpec(1.0, 1.0, 64)
        with pytest.raises(ValidationError):
            GridSpec(2.0, -2.0, 64)

    def test_minimum_points(self):
        with pytest.raises(ValidationError):
            GridSpec(0.0, 1.0, 15)
        GridSpec(0.0, 1.0, 16)

    def test_finite_endpoints(self):
        with pytest.raises(ValidationError):
            GridSpec(0.0, np.inf, 64)

    def test_spacing_and_nodes(self):
        g = GridSpec(-1.0, 1.0, 21)
        assert g.spacing == pytest.approx(0.1, abs=0)
        nodes = g.nodes()
        assert nodes[0] == -1.0 and nodes[-1] == 1.0 and len(nodes) == 21

    def test_json_roundtrip(self):
        g = GridSpec(-3.0, 17.5, 257)
        assert GridSpec.from_json(json.loads(json.dumps(g.to_json()))) == g


class TestGridFunction:
    def grid(self):
        return GridSpec(0.0, 1.0, 101)

    def test_length_must_match(self):
        with pytest.raises(ValidationError):
            GridFunction(self.grid(), np.zeros(100))

    def test_values_must_be_finite(self):
        v = np.zeros(101)
        v[3] = np.nan
        with pytest.raises(ValidationError):
            GridFunction(self.grid(), v)

    def test_default_lip_is_discrete_quotient(self):
        g = self.grid()
        f = GridFunction.from_callable(g, lambda x: 2.0 * np.asarray(x))
        assert f.lip_norm == pytest.approx(2.0, rel=1e-12)
        assert f.sup_norm == 2.0
        assert f.b_norm == pytest.approx(4.0, rel=1e-12)

    def test_declared_lip_may_not_undercut(self):
        g = self.grid()
        with pytest.raises(ValidationError):
            GridFunction.from_callable(g, lambda x: 2.0 * np.asarray(x),
                                       lip_norm=1.0)
        # at or above the discrete estimate is fine
        GridFunction.from_callable(g, lambda x: 2.0 * np.asarray(x),
                                   lip_norm=2.0)

    def test_constant_continuation(self):
        g = self.grid()
        f = GridFunction.from_callable(g, lambda x: np.asarray(x))
        assert f(-5.0) == 0.0
        assert f(7.0) == 1.0
        assert f(0.25) == pytest.approx(0.25, abs=1e-15)

    def test_discrete_curvature(self):
        g = self.grid()
        f = GridFunction.from_callable(g, lambda x: np.asarray(x) ** 2)
        assert f.discrete_curvature() == pytest.approx(2.0, rel=1e-9)

    def test_scaled_tracks_norms(self):
        g = self.grid()
        f = GridFunction.from_callable(g, lambda x: np.sin(3.0 * np.asarray(x)),
                                       lip_norm=3.0, curv_norm=9.0)
        h = f.scaled(-2.0)
        assert h.lip_norm == 6.0
        assert h.curv_norm == 18.0
        assert np.array_equal(h.values, -2.0 * f.values)

    def test_plus_minus_require_same_grid(self):
        f = GridFunction.from_callable(self.grid(), lambda x: np.asarray(x))
        other = GridFunction.from_callable(GridSpec(0.0, 2.0, 101),
                                           lambda x: np.asarray(x))
        with pytest.raises(ValidationError):
            f.plus(other)
        total = f.plus(f)
        assert np.array_equal(total.values, 2.0 * f.values)
        zero = f.minus(f)
        assert not np.any(zero.values)

    def test_json_roundtrip(self):
        f = GridFunction.from_callable(self.grid(),
                                       lambda x: np.cos(np.asarray(x)))
        again = GridFunction.from_json(json.loads(json.dumps(f.to_json())))
        assert again.grid == f.grid
        assert np.array_equal(again.values, f.values)

    def test_values_read_only(self):
        f = GridFunction.from_callable(self.grid(), lambda x: np.asarray(x))
        with pytest.raises(ValueError):
            f.values[0] = 9.0
