"""Spectral forms, cumulants, sampling, characteristic function, density."""

import json
import math

import numpy as np
import pytest

from conftest import batch_cumulants
from wglab import (DomainError, GammaTarget, GridSpec, KernelMatrix,
                   NumericalError, SampleBatch, SpectralForm, ValidationError,
                   char_function, cumulant_spectral, cumulant_target,
                   density_cf_inversion, jacobi_eigenvalues, normal_stream,
                   sample, spectral_from_kernel)
from wglab.chaos import centered_gamma_density


class TestSpectralForm:
    def test_rejects_all_zero(self):
        with pytest.raises(ValidationError):
            SpectralForm(np.zeros(3))

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            SpectralForm(np.array([1.0, np.inf]))
        with pytest.raises(ValidationError):
            SpectralForm(np.array([np.nan]))

    def test_rejects_empty_and_2d(self):
        with pytest.raises(ValidationError):
            SpectralForm(np.array([]))
        with pytest.raises(ValidationError):
            SpectralForm(np.eye(2))

    def test_variance(self):
        form = SpectralForm(np.array([1.0, -2.0, 0.5]))
        assert form.variance == pytest.approx(2.0 * (1 + 4 + 0.25), abs=0)

    def test_scaled(self):
        form = SpectralForm(np.array([1.0, -2.0]))
        assert np.array_equal(form.scaled(0.5).eigenvalues,
                              np.array([0.5, -1.0]))

    def test_json_roundtrip(self):
        form = SpectralForm(np.array([0.3, -1.7]))
        again = SpectralForm.from_json(json.loads(json.dumps(form.to_json())))
        assert np.array_equal(again.eigenvalues, form.eigenvalues)

    def test_eigenvalues_read_only(self):
        form = SpectralForm(np.array([1.0]))
        with pytest.raises(ValueError):
            form.eigenvalues[0] = 2.0


class TestKernelMatrix:
    def test_requires_exact_symmetry(self):
        a = np.array([[0.0, 1.0], [1.0 + 1e-16, 0.0]])
        if not np.array_equal(a, a.T):
            with pytest.raises(ValidationError):
                KernelMatrix(a)
        with pytest.raises(ValidationError):
            KernelMatrix(np.array([[0.0, 1.0], [2.0, 0.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ValidationError):
            KernelMatrix(np.ones((2, 3)))

    def test_json_roundtrip_checks_n(self):
        km = KernelMatrix(np.eye(3))
        again = KernelMatrix.from_json(km.to_json())
        assert np.array_equal(again.entries, km.entries)
        bad = km.to_json()
        bad["n"] = 5
        with pytest.raises(ValidationError):
            KernelMatrix.from_json(bad)


class TestGammaTarget:
    def test_positive_nu_required(self):
        with pytest.raises(ValidationError):
            GammaTarget(0.0)
        with pytest.raises(ValidationError):
            GammaTarget(-1.0)

    def test_low_order_cumulants(self):
        t = GammaTarget(3.0)
        assert cumulant_target(t, 2) == 6.0
        assert cumulant_target(t, 3) == 24.0
        assert cumulant_target(t, 4) == 144.0

    def test_fraction_nu_stays_exact(self):
        from fractions import Fraction
        t = GammaTarget(Fraction(1, 3))
        assert cumulant_target(t, 3) == Fraction(8, 3)


class TestCumulants:
    def test_target_examples(self):
        assert cumulant_target(GammaTarget(2.0), 3) == 16.0
        assert cumulant_target(GammaTarget(2.0), 4) == 96.0
        assert cumulant_target(GammaTarget(5.0), 1) == 0

    def test_target_order_guard(self):
        with pytest.raises(DomainError):
            cumulant_target(GammaTarget(1.0), 0)

    def test_spectral_examples(self):
        assert cumulant_spectral(SpectralForm(np.array([1.0, 1.0])), 3) == 16.0
        r = math.sqrt(0.5)
        assert cumulant_spectral(SpectralForm(np.array([r, -r])), 3) == 0.0

    def test_spectral_excess_two_eigenvalues(self):
        # kappa_4 of the sqrt(1 +/- 1/n) pair carries excess 96/n^2
        n = 10
        c = np.array([math.sqrt(1.0 + 1.0 / n), math.sqrt(1.0 - 1.0 / n)])
        k4 = cumulant_spectral(SpectralForm(c), 4)
        assert k4 == pytest.approx(96.0 + 96.0 / n ** 2, rel=1e-14)

    def test_spectral_order_guard(self):
        with pytest.raises(DomainError):
            cumulant_spectral(SpectralForm(np.array([1.0])), 1)

    def test_spectral_against_direct_sum(self, corpus):
        for form in corpus:
            for p in (2, 3, 4, 5):
                direct = (2.0 ** (p - 1) * math.factorial(p - 1)
                          * sum(float(ci) ** p for ci in form.eigenvalues))
                assert cumulant_spectral(form, p) == pytest.approx(
                    direct, rel=1e-13, abs=1e-13)


class TestJacobi:
    def test_matches_lapack_on_random_symmetric(self):
        rng = np.random.default_rng(5150)
        for n in (2, 5, 20, 50):
            b = rng.standard_normal((n, n))
            a = (b + b.T) / 2.0
            got = jacobi_eigenvalues(a)
            want = np.sort(np.linalg.eigvalsh(a))[::-1]
            scale = np.linalg.norm(a)
            assert np.max(np.abs(got - want)) <= 1e-12 * scale

    def test_diagonal_fast_path(self):
        got = jacobi_eigenvalues(np.diag([3.0, -1.0, 2.0]))
        assert np.array_equal(got, [3.0, 2.0, -1.0])

    def test_zero_matrix(self):
        assert np.array_equal(jacobi_eigenvalues(np.zeros((4, 4))),
                              np.zeros(4))


class TestSpectralFromKernel:
    def test_identity(self):
        form = spectral_from_kernel(KernelMatrix(np.eye(2)))
        assert np.allclose(form.eigenvalues, [1.0, 1.0], atol=1e-14)

    def test_ustat_two(self):
        off = 1.0 / math.sqrt(2.0)
        a = np.array([[0.0, off], [off, 0.0]])
        form = spectral_from_kernel(KernelMatrix(a))
        got = np.sort(form.eigenvalues)
        assert np.allclose(got, [-off, off], atol=1e-14)

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValidationError):
            spectral_from_kernel(KernelMatrix(np.zeros((3, 3))))

    def test_mass_defect_recorded(self):
        # one eigenvalue far below the cut: its mass lands in mass_defect
        a = np.diag([1.0, 1e-14])
        form = spectral_from_kernel(KernelMatrix(a), tol=1e-6)
        assert form.m == 1
        assert form.mass_defect == pytest.approx(1e-28, rel=1e-6)

    def test_bad_tol(self):
        with pytest.raises(ValidationError):
            spectral_from_kernel(KernelMatrix(np.eye(2)), tol=0.0)


class TestSampling:
    def test_mean_and_variance(self):
        batch = sample(SpectralForm(np.array([1.0])), 10 ** 6, seed=42)
        se = math.sqrt(2.0 / 10 ** 6)
        assert abs(batch.draws.mean()) <= 5 * se
        assert batch.draws.var() == pytest.approx(2.0, rel=0.02)

    def test_third_cumulant(self):
        batch = sample(SpectralForm(np.array([1.0, 1.0])), 10 ** 6, seed=3)
        est = batch_cumulants(batch.draws, orders=(3,))
        k3, se = est[3]
        assert abs(k3 - 16.0) <= 5 * se

    def test_deterministic(self):
        one = sample(SpectralForm(np.array([3.0])), 1, seed=7)
        two = sample(SpectralForm(np.array([3.0])), 1, seed=7)
        assert one.draws[0] == two.draws[0]

    def test_count_guard(self):
        with pytest.raises(ValidationError):
            sample(SpectralForm(np.array([1.0])), 0, seed=0)

    def test_stream_is_chunk_invariant(self):
        # values must not depend on block boundaries
        a = np.concatenate([z[:, 0] for _, z in normal_stream(9, 70000, 1)])
        b = np.concatenate([z[:, 0] for _, z in normal_stream(9, 70000, 1)])
        assert np.array_equal(a, b)
        assert len(a) == 70000

    def test_save_load_roundtrip(self, tmp_path):
        batch = sample(SpectralForm(np.array([1.0, -0.5])), 1000, seed=11)
        path = tmp_path / "draws.bin"
        batch.save(path)
        again = SampleBatch.load(path)
        assert again.count == 1000
        assert again.seed is None
        assert np.array_equal(again.draws, batch.draws)

    def test_load_rejects_garbage(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a batch")
        with pytest.raises(ValidationError):
            SampleBatch.load(path)


class TestCharFunction:
    def test_unit_modulus_identity(self):
        # |phi(t)|^2 |e^{2it}(1 - 2it)|^nu = 1 when the spectrum is nu ones
        for nu in (1, 2, 3):
            form = SpectralForm(np.ones(nu))
            for t in (0.1, 0.7, 2.5, -1.3):
                lhs = abs(char_function(form, t)) ** 2
                lhs *= abs(np.exp(2j * t) * (1 - 2j * t)) ** nu
                assert lhs == pytest.approx(1.0, rel=1e-12)

    def test_t_zero(self):
        form = SpectralForm(np.array([0.3, -2.0]))
        assert char_function(form, 0.0) == 1.0 + 0.0j

    def test_vectorized(self):
        form = SpectralForm(np.array([1.0]))
        t = np.array([0.0, 0.5])
        vals = char_function(form, t)
        assert vals.shape == (2,)
        assert vals[0] == 1.0 + 0.0j
        assert vals[1] == char_function(form, 0.5)

    def test_against_monte_carlo(self):
        form = SpectralForm(np.array([1.0]))
        t = 0.5
        batch = sample(form, 10 ** 6, seed=314)
        w = np.exp(1j * t * batch.draws)
        exact = char_function(form, t)
        for part in (np.real, np.imag):
            se = part(w).std(ddof=1) / math.sqrt(len(w))
            assert abs(part(w).mean() - part(exact)) <= 3 * se


class TestDensityInversion:
    def test_matches_exact_gamma2(self):
        form = SpectralForm(np.array([1.0, 1.0]))
        gf = density_cf_inversion(form, GridSpec(-2.0, 18.0, 1024))
        x = gf.grid.nodes()
        inside = x > -2.0 + 0.2
        exact = 0.5 * np.exp(-x[inside] / 2.0 - 1.0)
        assert np.max(np.abs(gf.values[inside] - exact)) <= 1e-3

    def test_symmetric_spectrum(self):
        form = SpectralForm(np.array([1.0, -1.0]))
        gf = density_cf_inversion(form, GridSpec(-12.0, 12.0, 1025))
        assert np.max(np.abs(gf.values - gf.values[::-1])) <= 1e-6

    def test_too_narrow_grid(self):
        form = SpectralForm(np.array([1.0, 1.0]))
        with pytest.raises(ValidationError):
            density_cf_inversion(form, GridSpec(-2.0, 2.0, 256))

    def test_cdf_within_dkw_band(self):
        # distribution from the recovered density vs the empirical CDF
        c1, c2 = math.sqrt(1.1), math.sqrt(0.9)
        form = SpectralForm(np.array([c1, c2]))
        gf = density_cf_inversion(form, GridSpec(-3.0, 25.0, 2048))
        x = gf.grid.nodes()
        dx = gf.grid.spacing
        cdf = gf.meta["mass_below_lo"] + np.concatenate(
            ([0.0], np.cumsum((gf.values[1:] + gf.values[:-1]) * dx / 2.0)))
        draws = np.sort(sample(form, 10 ** 6, seed=77).draws)
        emp = np.searchsorted(draws, x, side="right") / len(draws)
        band = math.sqrt(math.log(2.0 / 1e-3) / (2.0 * len(draws)))
        # quadrature of the recovered density adds its own error budget
        assert np.max(np.abs(cdf - emp)) <= band + 2e-4

    def test_centered_gamma_density_normalizes(self):
        # midpoint cells: the density jumps at the support edge -nu
        dx = 62.0 / 200000
        x = -2.0 + (np.arange(200000) + 0.5) * dx
        total = float(np.sum(centered_gamma_density(2.0, x)) * dx)
        assert total == pytest.approx(1.0, abs=1e-8)
