"""Closed-form odometers through the Poisson equation on the torus.

For a configuration s with total mass equal to the site count, the limit
odometer of the toppling dynamics is

    u = eta - min(eta),   where  (-L) eta = s - 1  and  eta is mean-zero.

The same field solves an obstacle problem: with gamma = -eta, the only
superharmonic majorants of gamma on the torus are constants, so the least
majorant is the constant max(gamma) and u = max(gamma) - gamma.

For Gaussian noise the covariance of eta is exact and diagonal in frequency:
each mode w != 0 carries weight(w) / lambda(w)^2, where weight is 1/nsites
for independent unit-variance noise and the covariance multiplier itself for
spectrally colored noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import LatticeField, SpectralField, TorusShape, dft, idft
from .operators import OperatorSpec, solve_poisson


@dataclass(frozen=True)
class EtaField:
    """Mean-zero potential of a configuration under a chosen generator."""

    op: OperatorSpec
    field: LatticeField

    def residual(self, s: LatticeField) -> float:
        """Max deviation of (-L) eta from s - 1, for auditing."""
        lhs = -self.op.apply(self.field).values
        return float(np.max(np.abs(lhs - (s.values - 1.0))))


def eta_field(s: LatticeField, op: OperatorSpec, mass_tol: float = 1e-9) -> EtaField:
    """Solve (-L) eta = s - 1 with mean-zero eta.

    The configuration must carry total mass nsites up to mass_tol * nsites,
    otherwise the charge s - 1 is not solvable.
    """
    charge = LatticeField(s.shape, s.values - 1.0)
    eta = solve_poisson(charge, op, mass_tol=mass_tol)
    return EtaField(op, eta)


def odometer_spectral(s: LatticeField, op: OperatorSpec) -> LatticeField:
    """Limit odometer eta - min(eta); nonnegative with minimum zero."""
    eta = eta_field(s, op).field
    return LatticeField(s.shape, eta.values - eta.values.min())


def obstacle_gamma(s: LatticeField, op: OperatorSpec) -> LatticeField:
    """Obstacle -eta for the torus obstacle-problem route to the odometer."""
    eta = eta_field(s, op).field
    return LatticeField(s.shape, -eta.values)


def torus_obstacle_odometer(s: LatticeField, op: OperatorSpec) -> LatticeField:
    """Odometer as max(gamma) - gamma.

    On the torus every superharmonic function is constant, so the least
    superharmonic majorant of gamma is the constant max(gamma).
    """
    gamma = obstacle_gamma(s, op).values
    return LatticeField(s.shape, gamma.max() - gamma)


@dataclass(frozen=True)
class CovarianceTable:
    """Stationary covariance C(x) = E[eta(z) eta(z+x)] on offset x."""

    op: OperatorSpec
    values: LatticeField

    def at_offset(self, x) -> float:
        from .lattice import wrap_coord

        return float(self.values.values[wrap_coord(x, self.op.shape)])

    def increment_variance(self, x) -> float:
        """E[(eta(x) - eta(0))^2] = 2 (C(0) - C(x)) by stationarity."""
        return 2.0 * (self.at_offset([0] * self.op.shape.d) - self.at_offset(x))


def eta_covariance_exact(op: OperatorSpec, khat: np.ndarray | None = None) -> CovarianceTable:
    """Exact covariance of eta under Gaussian noise.

    khat = None means independent unit-variance noise, mode weight 1/nsites.
    A multiplier array means colored noise whose transform carries weight
    khat(w) per mode, matching the colored sampler's convention.
    """
    shape = op.shape
    lam = op.eigenvalues().values
    weight = np.full(shape.dims, 1.0 / shape.nsites) if khat is None else np.asarray(khat, dtype=np.float64)
    if weight.shape != shape.dims:
        raise ValueError("covariance multiplier has the wrong shape")
    lam_safe = np.where(lam != 0.0, lam, 1.0)
    mode = np.where(lam != 0.0, weight / lam_safe**2, 0.0)
    mode.flat[0] = 0.0
    values = idft(SpectralField(shape, mode.astype(np.complex128)))
    return CovarianceTable(op, values)


def covariance_checks(table: CovarianceTable, tol: float = 1e-8) -> None:
    """Raise unless the table is even with positive variance at offset zero."""
    v = table.values.values
    if v.flat[0] <= 0:
        raise ValueError("variance at offset zero must be positive")
    rev = v
    for axis in range(v.ndim):
        rev = np.roll(np.flip(rev, axis=axis), 1, axis=axis)
    if np.max(np.abs(rev - v)) > tol * max(1.0, float(np.max(np.abs(v)))):
        raise ValueError("covariance table is not even")


def eta_sample_batch(
    op: OperatorSpec, sigma_block: np.ndarray
) -> np.ndarray:
    """Vectorized eta fields for a block of sigma replicates.

    sigma_block has shape (count,) + dims.  Centering happens inside, so raw
    noise can be passed directly; the result is the block of mean-zero
    potentials of 1 + sigma - mean(sigma).
    """
    shape = op.shape
    if sigma_block.shape[1:] != shape.dims:
        raise ValueError("sigma block does not match the operator's torus")
    axes = tuple(range(1, sigma_block.ndim))
    lam = op.eigenvalues().values
    denom = np.where(lam != 0.0, -lam, 1.0)
    mult = np.where(lam != 0.0, 1.0 / denom, 0.0)
    mult.flat[0] = 0.0
    coeffs = np.fft.fftn(sigma_block, axes=axes)
    coeffs *= mult  # zero mode dropped here, which also absorbs the centering
    return np.fft.ifftn(coeffs, axes=axes).real
