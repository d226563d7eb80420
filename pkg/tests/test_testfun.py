"""Trigonometric test-function algebra."""

import numpy as np
import pytest

from sandlab import TestFunction as Wave


def test_cosine_evaluates():
    f = Wave.cosine((1, 0))
    x = np.array([[0.0, 0.0], [0.25, 0.9], [0.5, 0.1]])
    want = np.cos(2 * np.pi * x[:, 0])
    assert np.allclose(f.evaluate(x), want, atol=1e-14)


def test_sine_and_amplitude():
    f = Wave.sine((2,), amplitude=3.0)
    x = np.array([[0.125]])
    assert abs(f.evaluate(x)[0] - 3.0 * np.sin(2 * np.pi * 0.25)) < 1e-14


def test_scaled_is_linear():
    f = Wave.cosine((1, 1))
    g = f.scaled(2.5)
    x = np.array([[0.3, 0.7]])
    assert abs(g.evaluate(x)[0] - 2.5 * f.evaluate(x)[0]) < 1e-14


def test_plus_combines_modes():
    f = Wave.cosine((1, 0)).plus(Wave.sine((0, 2), amplitude=0.5))
    x = np.array([[0.2, 0.4]])
    want = np.cos(2 * np.pi * 0.2) + 0.5 * np.sin(2 * np.pi * 0.8)
    assert abs(f.evaluate(x)[0] - want) < 1e-14


def test_fourier_coefficients_match_quadrature():
    # fhat(z) = integral f(x) e^{-2 pi i z.x} dx, evaluated on a midpoint grid.
    f = Wave.cosine((1, 0)).plus(Wave.sine((2, 1), amplitude=2.0))
    m = 64
    axes = [(np.arange(m) + 0.5) / m] * 2
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    vals = f.evaluate(pts).reshape(m, m)
    for z in [(1, 0), (-1, 0), (2, 1), (-2, -1), (0, 0), (3, 3)]:
        phase = np.exp(-2j * np.pi * (z[0] * mesh[0] + z[1] * mesh[1]))
        want = np.mean(vals * phase)
        got = f.fourier_coefficient(z)
        assert abs(got - want) < 1e-10


def test_support_frequencies_cover_conjugates():
    f = Wave.cosine((1, 2))
    support = set(f.support_frequencies())
    assert (1, 2) in support and (-1, -2) in support
    for z in support:
        assert f.fourier_coefficient(z) != 0


def test_mean_zero_enforced():
    with pytest.raises(ValueError):
        Wave.cosine((0, 0))


def test_dimension_property():
    assert Wave.cosine((1, 0, 0)).d == 3
