"""Amplitude estimation from sparse measurements and reconstruction scoring.

Two estimators are provided.  ``lse`` is the classical pseudo-inverse least
squares fit of the mode amplitudes; ``map_estimate`` is the Gaussian maximum
a posteriori estimate that additionally weighs the sensor noise covariance
``R`` against the prior amplitude variances ``q_diag``.  The regularized
operator ``C^T R^-1 C + Q^-1`` is invertible for any number of sensors, so
the MAP estimate is well defined even with fewer sensors than modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import (
    IllConditionedError,
    InvalidArgumentError,
    InvalidInputError,
    NumericalError,
    SingularNoiseError,
    ZeroNormColumnError,
)
from .noise import NoiseModel, assemble_sensor_cov
from .pod import PodBasis, SnapshotMatrix

__all__ = [
    "MeasurementSetup",
    "EstimationResult",
    "measurement_setup",
    "lse",
    "map_estimate",
    "objective_logdet",
    "reconstruct_snapshot",
    "reconstruction_error",
]

#: Condition-number guard for Gram and noise matrices.  Systems beyond this
#: raise with diagnostics instead of being silently regularized.
COND_GUARD = 1e12

#: Symmetry tolerance enforced on sensor noise covariances.
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class MeasurementSetup:
    """Everything the estimators need about a fixed sensor set.

    Attributes
    ----------
    C : (p, r1) ndarray
        Measurement matrix: the selected rows of the sensor-candidate matrix.
    R : (p, p) ndarray
        Sensor noise covariance (symmetric, positive diagonal).
    q_diag : (r1,) ndarray
        Prior variance of each mode amplitude.
    sensor_indices : (p,) ndarray
        Point indices the rows of ``C`` were taken from.
    """

    C: np.ndarray
    R: np.ndarray
    q_diag: np.ndarray
    sensor_indices: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.C, dtype=np.float64)
        R = np.asarray(self.R, dtype=np.float64)
        q_diag = np.asarray(self.q_diag, dtype=np.float64)
        idx = np.asarray(self.sensor_indices, dtype=np.intp)
        p = C.shape[0]
        if C.ndim != 2 or q_diag.ndim != 1 or C.shape[1] != q_diag.size:
            raise InvalidInputError("C and q_diag shapes are inconsistent")
        if R.shape != (p, p):
            raise InvalidInputError(f"R must be {p}x{p}, got {R.shape}")
        if idx.shape != (p,):
            raise InvalidInputError("sensor_indices must match the rows of C")
        if p and np.max(np.abs(R - R.T)) > SYMMETRY_TOL:
            raise InvalidInputError("R is not symmetric within tolerance")
        if p and np.any(np.diag(R) <= 0.0):
            raise InvalidInputError("R has non-positive diagonal entries")
        if np.any(q_diag <= 0.0):
            raise InvalidInputError("q_diag entries must be positive")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "R", 0.5 * (R + R.T) if p else R)
        object.__setattr__(self, "q_diag", q_diag)
        object.__setattr__(self, "sensor_indices", idx)

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def r1(self) -> int:
        return self.C.shape[1]


@dataclass(frozen=True)
class EstimationResult:
    """Estimated amplitudes, the reconstructed state, and its relative residual."""

    z_hat: np.ndarray
    x_hat: np.ndarray
    residual: float


def measurement_setup(
    basis: PodBasis,
    noise: NoiseModel,
    indices,
    r2: int | None = None,
) -> MeasurementSetup:
    """Assemble a :class:`MeasurementSetup` for the sensors at ``indices``.

    ``R`` follows the noise-model semantics: off-diagonals from the leading
    ``r2`` tail modes, exact diagonal.
    """
    idx = np.asarray(indices, dtype=np.intp)
    return MeasurementSetup(
        C=basis.U[idx, : noise.r1],
        R=assemble_sensor_cov(noise, idx, r2=r2),
        q_diag=noise.q_diag,
        sensor_indices=idx,
    )


def _guard_condition(mat: np.ndarray, label: str, hint: str = "") -> None:
    cond = np.linalg.cond(mat) if mat.size else 1.0
    if not np.isfinite(cond) or cond > COND_GUARD:
        raise IllConditionedError(
            f"{label} condition number {cond:.3e} exceeds guard {COND_GUARD:.1e}{hint}",
            cond=cond,
        )


def lse(C: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pseudo-inverse least-squares amplitude estimate.

    For ``p < r1`` sensors the minimum-norm solution ``C^T (C C^T)^-1 y`` is
    returned; for ``p >= r1`` the normal-equation solution
    ``(C^T C)^-1 C^T y``.  ``y`` may be a vector ``(p,)`` or a matrix
    ``(p, k)`` of stacked measurement columns.

    Raises
    ------
    IllConditionedError
        If the applicable Gram matrix has condition number above
        ``COND_GUARD``; the estimate is attached to the error.
    """
    C = np.asarray(C, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if C.ndim != 2:
        raise InvalidInputError("C must be 2-D")
    p, r1 = C.shape
    if y.shape[0] != p:
        raise InvalidInputError(f"y has leading dimension {y.shape[0]}, expected {p}")
    if p < r1:
        gram = C @ C.T
        _guard_condition(gram, f"Gram matrix CC^T ({p}x{p})")
        factor = la.cho_factor(gram, lower=True)
        return C.T @ la.cho_solve(factor, y)
    gram = C.T @ C
    _guard_condition(gram, f"Gram matrix C^TC ({r1}x{r1})")
    factor = la.cho_factor(gram, lower=True)
    return la.cho_solve(factor, C.T @ y)


def _bayes_operator(setup: MeasurementSetup):
    """Return (A, RinvC) with ``A = C^T R^-1 C + Q^-1`` via symmetric solves."""
    if setup.p == 0:
        A = np.diag(1.0 / setup.q_diag)
        return A, np.zeros((0, setup.r1))
    _guard_condition(
        setup.R,
        f"noise covariance R ({setup.p}x{setup.p})",
        hint="; check the low-RMS candidate exclusion",
    )
    try:
        factor = la.cho_factor(setup.R, lower=True)
    except la.LinAlgError as exc:
        raise SingularNoiseError(
            "noise covariance is not positive definite; "
            "check the low-RMS candidate exclusion"
        ) from exc
    RinvC = la.cho_solve(factor, setup.C)
    A = setup.C.T @ RinvC + np.diag(1.0 / setup.q_diag)
    return 0.5 * (A + A.T), RinvC


def map_estimate(setup: MeasurementSetup, y: np.ndarray) -> np.ndarray:
    """Gaussian MAP amplitude estimate ``(C^T R^-1 C + Q^-1)^-1 C^T R^-1 y``.

    ``y`` may be a vector ``(p,)`` or a matrix ``(p, k)``.  Well defined for
    any ``p >= 1`` thanks to the prior term.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != setup.p:
        raise InvalidInputError(f"y has leading dimension {y.shape[0]}, expected {setup.p}")
    A, RinvC = _bayes_operator(setup)
    rhs = RinvC.T @ y
    try:
        factor = la.cho_factor(A, lower=True)
    except la.LinAlgError as exc:
        raise NumericalError("posterior information matrix lost definiteness") from exc
    return la.cho_solve(factor, rhs)


def objective_logdet(setup: MeasurementSetup) -> float:
    """Log-determinant of the Bayesian information matrix ``C^T R^-1 C + Q^-1``.

    With no sensors this is the prior-only value ``sum_k log(1/q_diag[k])``.
    """
    A, _ = _bayes_operator(setup)
    sign, logdet = np.linalg.slogdet(A)
    if sign <= 0.0 or not np.isfinite(logdet):
        raise NumericalError("information matrix has non-positive determinant")
    return float(logdet)


def reconstruct_snapshot(basis: PodBasis, z_hat: np.ndarray) -> np.ndarray:
    """Map estimated amplitudes back to the full state, ``U_{1:r1} z``."""
    z_hat = np.asarray(z_hat, dtype=np.float64)
    r1 = z_hat.shape[0]
    if not 1 <= r1 <= basis.q:
        raise InvalidArgumentError(f"amplitude count {r1} outside [1, {basis.q}]")
    return basis.U[:, :r1] @ z_hat


def reconstruction_error(X, Xhat: np.ndarray) -> float:
    """Total relative reconstruction error, summed over snapshots.

    Each snapshot contributes ``||x_j - xhat_j||_2 / ||x_j||_2``; the sum
    (not the mean) over all ``m`` snapshots is returned, so the magnitude
    grows with the number of snapshots.

    Raises
    ------
    ZeroNormColumnError
        If some snapshot of ``X`` has zero norm (names the column).
    """
    values = X.values if isinstance(X, SnapshotMatrix) else np.asarray(X, dtype=np.float64)
    Xhat = np.asarray(Xhat, dtype=np.float64)
    if Xhat.shape != values.shape:
        raise InvalidInputError(f"shape mismatch: X {values.shape}, Xhat {Xhat.shape}")
    norms = np.linalg.norm(values, axis=0)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroNormColumnError(f"snapshot column {zero[0]} has zero norm")
    residuals = np.linalg.norm(values - Xhat, axis=0)
    return float(np.sum(residuals / norms))
