"""Prior amplitude variances and the correlated measurement-noise model.

The "noise" seen by a sensor is the part of the data the retained ``r1``
modes cannot express: the tail modes ``r1+1 .. q``.  Its full spatial
covariance is ``U_tail diag(sigma_tail^2) U_tail^T`` -- an ``n x n`` matrix
that is never materialized in the production path.  Instead the model keeps

* ``d``       -- the exact diagonal (per-point noise variance), always built
                 from the full tail, and
* tail factors limited to the leading ``r2`` tail modes, from which any
  needed off-diagonal covariance entry is expanded on the fly.

``r2 = q - r1`` reproduces the dense covariance exactly; smaller ``r2``
trades off-diagonal fidelity for memory and speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegeneratePriorError,
    IndexOutOfRangeError,
    InvalidArgumentError,
    InvalidConfigError,
    ResourceLimitError,
)
from .pod import PodBasis, TruncationConfig

__all__ = [
    "NoiseModel",
    "build_noise_model",
    "noise_cross_cov",
    "noise_var",
    "dense_noise_cov",
    "assemble_sensor_cov",
]

#: Relative floor below which prior variances are rejected as degenerate.
PRIOR_FLOOR = 1e-14

#: Guard on n for the dense covariance oracle (test path, not production).
DENSE_COV_MAX_N = 2000


@dataclass(frozen=True)
class NoiseModel:
    """Prior variances plus the truncated tail factors of the noise covariance.

    Attributes
    ----------
    q_diag : (r1,) ndarray
        Prior variance of each retained mode amplitude, ``sigma_k^2``.
    d : (n,) ndarray
        Per-point noise variance; the exact covariance diagonal, built from
        the *full* tail regardless of ``r2``.
    tail_U : (n, r2) ndarray
        Leading ``r2`` tail spatial modes.
    tail_sigma2 : (r2,) ndarray
        Their squared singular values.
    """

    q_diag: np.ndarray
    d: np.ndarray
    tail_U: np.ndarray
    tail_sigma2: np.ndarray
    r1: int
    r2: int

    def __post_init__(self):
        for arr in (self.q_diag, self.d, self.tail_U, self.tail_sigma2):
            np.asarray(arr).flags.writeable = False

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def truncated(self, r2: int) -> "NoiseModel":
        """View of this model keeping only the leading ``r2`` tail modes.

        ``d`` is unchanged: the diagonal always stays exact.
        """
        if not 0 <= r2 <= self.r2:
            raise InvalidConfigError(f"r2={r2} outside [0, {self.r2}] available tail modes")
        if r2 == self.r2:
            return self
        return NoiseModel(
            q_diag=self.q_diag,
            d=self.d,
            tail_U=self.tail_U[:, :r2],
            tail_sigma2=self.tail_sigma2[:r2],
            r1=self.r1,
            r2=r2,
        )


def build_noise_model(basis: PodBasis, cfg: TruncationConfig) -> NoiseModel:
    """Build prior variances, the noise-variance vector, and tail factors.

    ``q_diag[k] = sigma_k^2`` for the ``r1`` retained modes and
    ``d[i] = sum_{k > r1} sigma_k^2 U[i,k]^2`` over the full tail.  Common
    proportionality constants (such as 1/m in the sample covariance) are
    deliberately dropped: estimates and selection argmaxes are invariant
    under a joint rescaling of prior and noise covariance.

    Raises
    ------
    DegeneratePriorError
        If any of the first ``r1`` squared singular values is zero or
        vanishes relative to the largest one (below ``PRIOR_FLOOR``).
    InvalidConfigError
        If ``r1 + r2`` exceeds the number of factors.
    """
    cfg.validate_against(basis.q)
    sigma2 = basis.sigma**2
    q_diag = sigma2[: cfg.r1].copy()
    if q_diag[-1] <= PRIOR_FLOOR * q_diag[0]:
        raise DegeneratePriorError(
            f"prior variance of mode {cfg.r1} is degenerate "
            f"({q_diag[-1]:.3e} vs max {q_diag[0]:.3e}); lower r1"
        )
    tail = basis.U[:, cfg.r1 :]
    d = (tail**2) @ sigma2[cfg.r1 :] if tail.shape[1] else np.zeros(basis.n)
    tail_U = basis.U[:, cfg.r1 : cfg.r1 + cfg.r2].copy()
    tail_sigma2 = sigma2[cfg.r1 : cfg.r1 + cfg.r2].copy()
    return NoiseModel(
        q_diag=q_diag,
        d=d,
        tail_U=tail_U,
        tail_sigma2=tail_sigma2,
        r1=cfg.r1,
        r2=cfg.r2,
    )


def _check_index(model: NoiseModel, i: int) -> None:
    if not 0 <= i < model.n:
        raise IndexOutOfRangeError(f"point index {i} outside [0, {model.n})")


def noise_cross_cov(model: NoiseModel, i: int, selected) -> np.ndarray:
    """Truncated noise covariance between point ``i`` and the selected points.

    Returns the length-``len(selected)`` vector whose ``j``-th entry is
    ``sum_k tail_sigma2[k] tail_U[i,k] tail_U[selected[j],k]`` -- the rank-r2
    approximation of the corresponding off-diagonal covariance entries.
    """
    _check_index(model, i)
    sel = np.asarray(selected, dtype=np.intp)
    if sel.size == 0:
        return np.zeros(0)
    if sel.min() < 0 or sel.max() >= model.n:
        raise IndexOutOfRangeError("selected indices outside valid range")
    if np.any(sel == i):
        raise InvalidArgumentError(f"candidate {i} already among selected indices")
    return (model.tail_U[i] * model.tail_sigma2) @ model.tail_U[sel].T


def noise_var(model: NoiseModel, i: int) -> float:
    """Exact (untruncated) noise variance at point ``i``."""
    _check_index(model, i)
    return float(model.d[i])


def dense_noise_cov(basis: PodBasis, r1: int) -> np.ndarray:
    """Explicit ``n x n`` tail covariance ``U_tail diag(sigma_tail^2) U_tail^T``.

    Test oracle only; guarded so it cannot be misused at scale.
    """
    if basis.n > DENSE_COV_MAX_N:
        raise ResourceLimitError(
            f"dense covariance guard: n={basis.n} exceeds {DENSE_COV_MAX_N}"
        )
    if not 1 <= r1 <= basis.q:
        raise InvalidArgumentError(f"r1={r1} outside valid range [1, {basis.q}]")
    tail = basis.U[:, r1:]
    cov = (tail * basis.sigma[r1:] ** 2) @ tail.T
    return 0.5 * (cov + cov.T)


def assemble_sensor_cov(model: NoiseModel, indices, r2: int | None = None) -> np.ndarray:
    """Noise covariance of the sensors at ``indices`` under model semantics.

    Off-diagonal entries are expanded from the leading ``r2`` tail modes
    (default: all the model carries); the diagonal is the exact ``d``.
    The result is symmetrized to kill floating-point asymmetry.
    """
    sub = model if r2 is None else model.truncated(r2)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise InvalidArgumentError("indices must be a 1-D sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= model.n):
        raise IndexOutOfRangeError("sensor indices outside valid range")
    if np.unique(idx).size != idx.size:
        raise InvalidArgumentError("sensor indices must be distinct")
    rows = sub.tail_U[idx]
    cov = (rows * sub.tail_sigma2) @ rows.T
    cov = 0.5 * (cov + cov.T)
    np.fill_diagonal(cov, model.d[idx])
    return cov
