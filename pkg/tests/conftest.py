"""Shared corpora and estimation helpers for the test suite."""

import math

import numpy as np
import pytest

from wglab import GridFunction, SpectralForm


CORPUS_SEED = 909090


def random_spectra(count=20, max_m=10, max_abs=3.0, seed=CORPUS_SEED):
    """Random eigenvalue lists, at least one entry bounded away from zero."""
    rng = np.random.default_rng(seed)
    forms = []
    while len(forms) < count:
        m = int(rng.integers(1, max_m + 1))
        c = rng.uniform(-max_abs, max_abs, size=m)
        if np.max(np.abs(c)) < 0.1:
            continue
        forms.append(SpectralForm(c))
    return forms


@pytest.fixture(scope="session")
def corpus():
    return random_spectra()


def batch_cumulants(values, orders=(2, 3, 4), n_batches=100):
    """Sample cumulants with standard errors, batch-of-batches style.

    Splits the draws into equal batches, computes the unbiased k-statistic
    per batch, and reports mean and std/sqrt(B) across batches.
    """
    values = np.asarray(values, dtype=float)
    size = len(values) // n_batches
    if size < 10:
        raise ValueError("batches too small for k-statistics")
    chunks = values[: size * n_batches].reshape(n_batches, size)
    out = {}
    n = float(size)
    mean = chunks.mean(axis=1, keepdims=True)
    d = chunks - mean
    m2 = np.mean(d ** 2, axis=1)
    m3 = np.mean(d ** 3, axis=1)
    m4 = np.mean(d ** 4, axis=1)
    ks = {
        2: n / (n - 1.0) * m2,
        3: n ** 2 / ((n - 1.0) * (n - 2.0)) * m3,
        4: (n ** 2 * ((n + 1.0) * m4 - 3.0 * (n - 1.0) * m2 ** 2)
            / ((n - 1.0) * (n - 2.0) * (n - 3.0))),
    }
    for p in orders:
        est = ks[p]
        out[p] = (float(est.mean()),
                  float(est.std(ddof=1) / math.sqrt(n_batches)))
    return out


def _unit_ball(grid, fn, lip, curv):
    """Scale a callable into the sup+lip <= 1 ball, keeping analytic norms."""
    raw = GridFunction.from_callable(grid, fn, lip_norm=lip, curv_norm=curv)
    scale = 1.0 / (raw.sup_norm + lip)
    return GridFunction.from_callable(
        grid, lambda x: scale * np.asarray(fn(x)),
        lip_norm=scale * lip, curv_norm=scale * curv)


def function_corpus(grid, count=50, seed=424242):
    """Lipschitz test functions in the unit ball of sup + lip norms.

    A mix of sinusoids, smoothed ramps, Gaussian bumps, and tanh steps with
    analytically known derivative bounds.
    """
    rng = np.random.default_rng(seed)
    span = grid.hi - grid.lo
    out = []
    for i in range(count):
        kind = i % 4
        if kind == 0:
            w = float(rng.uniform(0.3, 4.0))
            phi = float(rng.uniform(0.0, 2.0 * math.pi))
            out.append(_unit_ball(
                grid, lambda x, w=w, phi=phi: np.sin(w * np.asarray(x) + phi),
                lip=w, curv=w * w))
        elif kind == 1:
            a = float(rng.uniform(grid.lo, grid.lo + 0.6 * span))
            width = float(rng.uniform(0.1 * span, 0.4 * span))
            b = a + width

            def ramp(x, a=a, b=b):
                t = np.clip((np.asarray(x, dtype=float) - a) / (b - a),
                            0.0, 1.0)
                return t * t * (3.0 - 2.0 * t)

            out.append(_unit_ball(grid, ramp, lip=1.5 / width,
                                  curv=6.0 / width ** 2))
        elif kind == 2:
            a = float(rng.uniform(grid.lo + 0.2 * span, grid.hi - 0.2 * span))
            s = float(rng.uniform(0.05 * span, 0.3 * span))
            out.append(_unit_ball(
                grid,
                lambda x, a=a, s=s: np.exp(-((np.asarray(x) - a) / s) ** 2
                                           / 2.0),
                lip=math.exp(-0.5) / s, curv=1.0 / s ** 2))
        else:
            a = float(rng.uniform(grid.lo + 0.2 * span, grid.hi - 0.2 * span))
            k = float(rng.uniform(0.5, 3.0)) / (0.1 * span)
            out.append(_unit_ball(
                grid, lambda x, a=a, k=k: np.tanh(k * (np.asarray(x) - a)),
                lip=k, curv=0.7699 * k * k))
    return out
