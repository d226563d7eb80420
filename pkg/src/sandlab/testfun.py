"""Smooth mean-zero test functions on the unit torus.

A test function is a finite trigonometric polynomial

    f(x) = sum_k [ a_k cos(2 pi k.x) + b_k sin(2 pi k.x) ],   x in [0,1)^d,

with nonzero integer modes k, so f always integrates to zero.  These are the
observables paired against rescaled odometer fluctuation fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Mode = tuple[tuple[int, ...], float, float]


@dataclass(frozen=True)
class TestFunction:
    """Finite list of (mode, cosine amplitude, sine amplitude) triples."""

    modes: tuple[Mode, ...]

    def __post_init__(self):
        if not self.modes:
            raise ValueError("test function needs at least one mode")
        d = len(self.modes[0][0])
        norm = []
        for k, a, b in self.modes:
            k = tuple(int(v) for v in k)
            if len(k) != d:
                raise ValueError("all modes must share one dimension")
            if all(v == 0 for v in k):
                raise ValueError("zero mode not allowed: test functions are mean-zero")
            norm.append((k, float(a), float(b)))
        object.__setattr__(self, "modes", tuple(norm))

    @classmethod
    def cosine(cls, k, amplitude: float = 1.0) -> "TestFunction":
        return cls(((tuple(int(v) for v in k), float(amplitude), 0.0),))

    @classmethod
    def sine(cls, k, amplitude: float = 1.0) -> "TestFunction":
        return cls(((tuple(int(v) for v in k), 0.0, float(amplitude)),))

    @property
    def d(self) -> int:
        return len(self.modes[0][0])

    def scaled(self, factor: float) -> "TestFunction":
        return TestFunction(tuple((k, a * factor, b * factor) for k, a, b in self.modes))

    def plus(self, other: "TestFunction") -> "TestFunction":
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        return TestFunction(self.modes + other.modes)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Pointwise values; x has shape (..., d)."""
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros(x.shape[:-1])
        for k, a, b in self.modes:
            phase = 2.0 * np.pi * np.tensordot(x, np.asarray(k, dtype=np.float64), axes=([-1], [0]))
            out = out + a * np.cos(phase) + b * np.sin(phase)
        return out

    def fourier_coefficient(self, z) -> complex:
        """Continuum coefficient fhat(z) = integral f(x) exp(-2 pi i z.x) dx.

        A mode k contributes (a - i b)/2 at z = k and (a + i b)/2 at z = -k.
        """
        z = tuple(int(v) for v in z)
        out = 0.0 + 0.0j
        for k, a, b in self.modes:
            if z == k:
                out += 0.5 * (a - 1j * b)
            if z == tuple(-v for v in k):
                out += 0.5 * (a + 1j * b)
        return complex(out)

    def support_frequencies(self) -> list[tuple[int, ...]]:
        """All z with a possibly nonzero continuum coefficient."""
        seen: dict[tuple[int, ...], None] = {}
        for k, _, _ in self.modes:
            seen[k] = None
            seen[tuple(-v for v in k)] = None
        return list(seen.keys())
