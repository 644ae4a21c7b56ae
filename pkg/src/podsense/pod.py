"""Snapshot containers, economy SVD, and low-rank reconstruction.

The decomposition ``X = U diag(sigma) V^T`` is the backbone of everything
else: the leading ``r1`` left singular vectors are the spatial modes whose
rows form the sensor-candidate matrix, and the discarded tail carries the
correlated "noise" the selection algorithms account for.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    IndexOutOfRangeError,
    InvalidArgumentError,
    InvalidConfigError,
    InvalidInputError,
    NumericalError,
)

__all__ = [
    "SnapshotMatrix",
    "PodBasis",
    "TruncationConfig",
    "compute_pod",
    "rank_r_reconstruct",
    "mode_row",
]

#: Max-norm tolerance on U^T U - I and V^T V - I after construction.
ORTHONORMALITY_TOL = 1e-8


def _checked_matrix(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 2:
        raise InvalidInputError(f"snapshot matrix must be 2-D, got shape {arr.shape}")
    n, m = arr.shape
    if n < 1 or m < 1:
        raise InvalidInputError(f"snapshot matrix must be non-empty, got {n}x{m}")
    if not np.isfinite(arr).all():
        raise InvalidInputError("snapshot matrix contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SnapshotMatrix:
    """An ``n x m`` data matrix: one spatial point per row, one snapshot per column.

    The wrapped array is validated (finite, non-empty) and frozen so the
    container is safe to share between concurrent readers.
    """

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _checked_matrix(self.values))

    @property
    def n(self) -> int:
        """Number of spatial points (rows)."""
        return self.values.shape[0]

    @property
    def m(self) -> int:
        """Number of snapshots (columns)."""
        return self.values.shape[1]


@dataclass(frozen=True)
class PodBasis:
    """Economy SVD factors of a snapshot matrix.

    Attributes
    ----------
    U : (n, q) ndarray
        Left singular vectors (spatial modes), orthonormal columns.
    sigma : (q,) ndarray
        Singular values, nonincreasing and nonnegative.  Zero values are
        retained so index arithmetic on mode numbers stays aligned.
    V : (m, q) ndarray
        Right singular vectors (temporal modes), orthonormal columns.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        V = np.asarray(self.V, dtype=np.float64)
        if U.ndim != 2 or V.ndim != 2 or sigma.ndim != 1:
            raise InvalidInputError("PodBasis factors have wrong dimensionality")
        q = sigma.size
        if U.shape[1] != q or V.shape[1] != q:
            raise InvalidInputError(
                f"inconsistent factor shapes: U {U.shape}, sigma ({q},), V {V.shape}"
            )
        if not (np.isfinite(U).all() and np.isfinite(sigma).all() and np.isfinite(V).all()):
            raise InvalidInputError("PodBasis factors contain non-finite entries")
        if np.any(sigma < 0.0) or np.any(np.diff(sigma) > 0.0):
            raise InvalidInputError("singular values must be nonnegative and nonincreasing")
        for name, F in (("U", U), ("V", V)):
            gram = F.T @ F
            err = np.max(np.abs(gram - np.eye(q)))
            if err > ORTHONORMALITY_TOL:
                raise InvalidInputError(
                    f"columns of {name} are not orthonormal (max deviation {err:.3e})"
                )
        for arr in (U, sigma, V):
            arr.flags.writeable = False
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "V", V)

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def m(self) -> int:
        return self.V.shape[0]

    @property
    def q(self) -> int:
        """Number of retained factors, min(n, m)."""
        return self.sigma.size


@dataclass(frozen=True)
class TruncationConfig:
    """Mode-count configuration: ``r1`` signal modes, ``r2`` noise-tail modes."""

    r1: int
    r2: int = 0

    def __post_init__(self):
        if self.r1 < 1:
            raise InvalidConfigError(f"r1 must be >= 1, got {self.r1}")
        if self.r2 < 0:
            raise InvalidConfigError(f"r2 must be >= 0, got {self.r2}")

    def validate_against(self, q: int) -> None:
        """Check ``1 <= r1 <= q`` and ``0 <= r2 <= q - r1``."""
        if self.r1 > q:
            raise InvalidConfigError(f"r1={self.r1} exceeds the number of factors q={q}")
        if self.r1 + self.r2 > q:
            raise InvalidConfigError(
                f"r1+r2={self.r1 + self.r2} exceeds the number of factors q={q}"
            )


def compute_pod(X: SnapshotMatrix) -> PodBasis:
    """Economy SVD of a snapshot matrix with a deterministic sign convention.

    Each column of ``U`` is flipped so that its largest-magnitude entry is
    positive (ties resolved toward the lower row index), with the matching
    column of ``V`` flipped alongside.  This makes the factorization unique
    and therefore testable and reproducible across runs.

    Parameters
    ----------
    X : SnapshotMatrix
        Input data; must be finite (enforced by the container).

    Returns
    -------
    PodBasis
    """
    if not isinstance(X, SnapshotMatrix):
        X = SnapshotMatrix(np.asarray(X))
    try:
        U, sigma, Vt = np.linalg.svd(X.values, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    # Deterministic signs: dominant entry of each spatial mode is positive.
    dominant = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[dominant, np.arange(U.shape[1])])
    signs[signs == 0.0] = 1.0
    U = U * signs
    Vt = Vt * signs[:, None]
    return PodBasis(U=U, sigma=sigma, V=Vt.T)


def rank_r_reconstruct(basis: PodBasis, r: int) -> np.ndarray:
    """Best rank-``r`` approximation ``U_{1:r} diag(sigma_{1:r}) V_{1:r}^T``.

    Raises
    ------
    InvalidArgumentError
        If ``r`` is outside ``[1, q]``.
    """
    if not 1 <= r <= basis.q:
        raise InvalidArgumentError(f"rank r={r} outside valid range [1, {basis.q}]")
    return (basis.U[:, :r] * basis.sigma[:r]) @ basis.V[:, :r].T


def mode_row(basis: PodBasis, i: int, r1: int) -> np.ndarray:
    """Row ``i`` of the sensor-candidate matrix ``U_{1:r1}``.

    This is the length-``r1`` signal signature of spatial point ``i``: what a
    noise-free sensor placed there would read per unit mode amplitude.
    """
    if not 1 <= r1 <= basis.q:
        raise InvalidArgumentError(f"r1={r1} outside valid range [1, {basis.q}]")
    if not 0 <= i < basis.n:
        raise IndexOutOfRangeError(f"point index {i} outside [0, {basis.n})")
    return basis.U[i, :r1].copy()
