"""Greedy sensor-selection algorithms and baselines.

Three greedy selectors are provided, plus exhaustive and random baselines:

* ``select_dg`` -- determinant-based greedy (DG) on the noise-free Fisher
  information ``det(C C^T)`` / ``det(C^T C)``, ignoring noise correlation.
* ``select_bdg_naive`` -- Bayesian determinant greedy (BDG): maximizes
  ``det(C^T R^-1 C + Q^-1)`` by dense reassembly for every candidate.  Slow
  by design; it is the readable reference and the oracle for the fast path.
* ``select_bdg_fast`` -- the same argmax computed through the bordered-block
  inverse of the growing sensor covariance and the matrix determinant lemma,
  so each candidate costs one scalar Schur complement and one small
  quadratic form instead of a dense determinant.

All selectors resolve near-ties (relative score gap below ``REL_TIE``)
toward the lowest candidate index, which makes selections deterministic and
independent of scan order; a parallel candidate scan must reduce to the same
winner.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import (
    InfeasibleCandidatesError,
    InvalidArgumentError,
    InvalidConfigError,
    InvalidInputError,
    NumericalError,
    ResourceLimitError,
    StepInfeasibleError,
)
from .noise import NoiseModel, assemble_sensor_cov
from .pod import PodBasis, SnapshotMatrix

__all__ = [
    "CandidateSet",
    "SelectionState",
    "exclude_low_rms",
    "select_dg",
    "select_bdg_naive",
    "select_bdg_fast",
    "select_brute_force",
    "select_random",
]

#: Relative score gap below which two candidates count as tied.
REL_TIE = 1e-9

#: Schur-complement floor, as a fraction of max(d).  Candidates whose
#: conditional noise variance falls below it are skipped for the step only.
SCHUR_FLOOR = 1e-12

#: The maintained covariance inverse is rebuilt from scratch this often ...
INVERSE_REFRESH_PERIOD = 64
#: ... and whenever ||R_inv R - I||_max drifts beyond this.
INVERSE_DRIFT_TOL = 1e-6

#: Guard on the number of subsets the exhaustive baseline may enumerate.
BRUTE_FORCE_LIMIT = 2_000_000


@dataclass(frozen=True)
class CandidateSet:
    """Eligible sensor locations after low-RMS exclusion."""

    included: np.ndarray
    rms: np.ndarray

    def __post_init__(self):
        included = np.asarray(self.included, dtype=bool)
        rms = np.asarray(self.rms, dtype=np.float64)
        if included.ndim != 1 or included.shape != rms.shape:
            raise InvalidInputError("included and rms must be matching 1-D arrays")
        included.flags.writeable = False
        rms.flags.writeable = False
        object.__setattr__(self, "included", included)
        object.__setattr__(self, "rms", rms)

    @property
    def n(self) -> int:
        return self.included.shape[0]

    def eligible_indices(self) -> np.ndarray:
        return np.flatnonzero(self.included)

    @classmethod
    def all_of(cls, n: int) -> "CandidateSet":
        """Every point eligible (no exclusion information)."""
        return cls(included=np.ones(n, dtype=bool), rms=np.ones(n))


@dataclass
class SelectionState:
    """Incremental state of a Bayesian greedy selection.

    ``R_inv`` is the maintained inverse of the sensor noise covariance
    ``R``; ``W`` is the information matrix ``C^T R^-1 C + Q^-1`` whose
    log-determinant the selection maximizes.  ``step_scores[k]`` is the
    winning scalar criterion of step ``k+1``; the determinant grows by the
    factor ``1 + step_scores[k]`` at that step.

    Mutated only between candidate scans (single writer); during a scan all
    fields are read-only.
    """

    indices: list[int] = field(default_factory=list)
    C: np.ndarray = None
    R: np.ndarray = None
    R_inv: np.ndarray = None
    W: np.ndarray = None
    logdet_W: float = 0.0
    step_scores: list[float] = field(default_factory=list)
    step_logdets: list[float] = field(default_factory=list)


def exclude_low_rms(X, factor: float, min_survivors: int = 1) -> CandidateSet:
    """Drop points whose temporal RMS is below ``factor`` times the maximum.

    Near-constant points carry almost no signal but make the sensor noise
    covariance (nearly) singular, which inflates the Bayesian objective for
    the wrong reason; they are removed from the candidate set up front.
    ``factor = 0`` keeps every point (useful to study exactly that failure).

    Raises
    ------
    InfeasibleCandidatesError
        If fewer than ``min_survivors`` points survive.
    """
    if not 0.0 <= factor < 1.0:
        raise InvalidArgumentError(f"exclusion factor must be in [0, 1), got {factor}")
    values = X.values if isinstance(X, SnapshotMatrix) else np.asarray(X, dtype=np.float64)
    rms = np.sqrt(np.mean(values**2, axis=1))
    included = rms >= factor * rms.max()
    survivors = int(included.sum())
    if survivors < min_survivors:
        raise InfeasibleCandidatesError(
            f"only {survivors} candidates survive exclusion (need {min_survivors}); "
            f"lower the exclusion factor"
        )
    return CandidateSet(included=included, rms=rms)


def _pick_lowest_max(cand_ids: np.ndarray, scores: np.ndarray) -> tuple[int, float]:
    """Winner of a candidate scan: lowest index within ``REL_TIE`` of the max.

    ``cand_ids`` must be ascending, which :func:`numpy.flatnonzero`
    guarantees; the first qualifying entry is then the lowest index.
    """
    best = scores.max()
    threshold = best - REL_TIE * abs(best)
    pos = int(np.flatnonzero(scores >= threshold)[0])
    return int(cand_ids[pos]), float(scores[pos])


def _validate_selection_args(basis: PodBasis, candidates: CandidateSet, r1: int, p: int) -> None:
    if not 1 <= r1 <= basis.q:
        raise InvalidConfigError(f"r1={r1} outside valid range [1, {basis.q}]")
    if p < 1:
        raise InvalidConfigError(f"p must be >= 1, got {p}")
    if candidates.n != basis.n:
        raise InvalidInputError(
            f"candidate set covers {candidates.n} points, basis has {basis.n}"
        )
    eligible = int(candidates.included.sum())
    if eligible < p:
        raise InfeasibleCandidatesError(f"{eligible} eligible candidates < p={p}")


def select_dg(basis: PodBasis, r1: int, p: int, candidates: CandidateSet) -> list[int]:
    """Determinant-based greedy selection without noise information.

    While fewer sensors than modes are placed, each step adds the candidate
    row with the largest residual outside the span of the rows already
    chosen (the growth factor of ``det(C C^T)``).  Once ``p > r1`` the
    criterion switches to the determinant-lemma factor
    ``1 + u (C^T C)^-1 u^T`` of ``det(C^T C)``.  Rank-deficient intermediate
    row sets (degenerate data) fall back to the pseudo-inverse projection,
    so ties are resolved rather than raised.
    """
    _validate_selection_args(basis, candidates, r1, p)
    U1 = basis.U[:, :r1]
    remaining = candidates.included.copy()
    indices: list[int] = []
    for k in range(1, p + 1):
        elig = np.flatnonzero(remaining)
        Ue = U1[elig]
        if k == 1:
            scores = np.einsum("ij,ij->i", Ue, Ue)
        elif k <= r1:
            C = U1[indices]
            basis_cols = la.orth(C.T)  # row space of C, rank-revealing
            proj = Ue @ basis_cols
            scores = np.einsum("ij,ij->i", Ue, Ue) - np.einsum("ij,ij->i", proj, proj)
        else:
            C = U1[indices]
            Ginv = la.pinvh(C.T @ C)
            scores = 1.0 + np.einsum("ij,jk,ik->i", Ue, Ginv, Ue)
        winner, _ = _pick_lowest_max(elig, scores)
        indices.append(winner)
        remaining[winner] = False
    return indices


def _subset_logdet(U1: np.ndarray, model: NoiseModel, idx: np.ndarray) -> float | None:
    """Dense Bayesian objective for one sensor subset; None if R is singular."""
    R = assemble_sensor_cov(model, idx)
    try:
        factor = la.cho_factor(R, lower=True)
    except la.LinAlgError:
        return None
    C = U1[idx]
    W = C.T @ la.cho_solve(factor, C) + np.diag(1.0 / model.q_diag)
    sign, logdet = np.linalg.slogdet(W)
    if sign <= 0.0 or not np.isfinite(logdet):
        return None
    return float(logdet)


def select_bdg_naive(
    basis: PodBasis,
    noise: NoiseModel,
    r1: int,
    p: int,
    candidates: CandidateSet,
    diagnostics: dict | None = None,
) -> list[int]:
    """Bayesian determinant greedy, dense reference implementation.

    At every step the full objective ``log det(C^T R^-1 C + Q^-1)`` is
    reassembled from scratch for each candidate.  Candidates whose bordered
    noise covariance is singular are skipped for the step (and recorded in
    ``diagnostics`` under ``"skipped"`` when a dict is passed).
    """
    _validate_selection_args(basis, candidates, r1, p)
    if noise.r1 != r1:
        raise InvalidConfigError(f"noise model was built for r1={noise.r1}, not {r1}")
    U1 = basis.U[:, :r1]
    remaining = candidates.included.copy()
    indices: list[int] = []
    for k in range(1, p + 1):
        elig = np.flatnonzero(remaining)
        scores = np.full(elig.size, -np.inf)
        for pos, i in enumerate(elig):
            idx = np.array(indices + [i], dtype=np.intp)
            logdet = _subset_logdet(U1, noise, idx)
            if logdet is None:
                if diagnostics is not None:
                    diagnostics.setdefault("skipped", []).append((k, int(i)))
                continue
            scores[pos] = logdet
        valid = np.isfinite(scores)
        if not valid.any():
            raise StepInfeasibleError(
                f"singular noise covariance for every candidate at step {k}; "
                f"check the low-RMS candidate exclusion",
                step=k,
                diagnostics={"eligible": int(elig.size)},
            )
        winner, _ = _pick_lowest_max(elig[valid], scores[valid])
        indices.append(winner)
        remaining[winner] = False
    return indices


def _fresh_inverse(R: np.ndarray) -> np.ndarray:
    try:
        factor = la.cho_factor(R, lower=True)
    except la.LinAlgError as exc:
        raise NumericalError("sensor noise covariance lost positive definiteness") from exc
    return la.cho_solve(factor, np.eye(R.shape[0]))


def select_bdg_fast(
    basis: PodBasis,
    noise: NoiseModel,
    r1: int,
    r2: int,
    p: int,
    candidates: CandidateSet,
) -> tuple[list[int], SelectionState]:
    """Accelerated Bayesian determinant greedy with incremental updates.

    Per step, every eligible candidate ``i`` is scored by the scalar

        ``(s R^-1 C - u_i) W^-1 (s R^-1 C - u_i)^T / g``,

    where ``s`` is the (rank-``r2`` truncated) noise covariance between the
    candidate and the sensors already placed, ``g = t - s R^-1 s^T`` is the
    Schur complement of the grown covariance (``t`` the exact noise variance
    of the candidate), and ``W`` the current information matrix.  By the
    matrix determinant lemma the winning candidate multiplies ``det(W)`` by
    ``1 + score``, so the log-objective is tracked by accumulation.  After
    each pick, ``R^-1`` is grown by the bordered-block inverse formulas and
    rebuilt from scratch every :data:`INVERSE_REFRESH_PERIOD` steps or when
    its residual drifts beyond :data:`INVERSE_DRIFT_TOL`.

    Candidates with ``g`` at or below the Schur floor are skipped for the
    step; if that removes everyone, a :class:`StepInfeasibleError` reports
    the step diagnostics.

    Returns the ordered index list together with the final
    :class:`SelectionState`.
    """
    _validate_selection_args(basis, candidates, r1, p)
    if noise.r1 != r1:
        raise InvalidConfigError(f"noise model was built for r1={noise.r1}, not {r1}")
    model = noise.truncated(r2)
    U1 = basis.U[:, :r1]
    d = noise.d
    q_diag = noise.q_diag
    g_min = SCHUR_FLOOR * float(d.max()) if d.size else 0.0
    Tw = model.tail_U * model.tail_sigma2  # weighted tail factors
    Tu = model.tail_U

    remaining = candidates.included.copy()
    indices: list[int] = []
    C = np.zeros((0, r1))
    R = np.zeros((0, 0))
    R_inv = np.zeros((0, 0))
    W = np.diag(1.0 / q_diag)
    logdet_W = float(-np.sum(np.log(q_diag)))
    step_scores: list[float] = []
    step_logdets: list[float] = []

    for k in range(1, p + 1):
        try:
            W_factor = la.cho_factor(W, lower=True)
        except la.LinAlgError as exc:
            raise NumericalError("information matrix lost positive definiteness") from exc
        W_inv = la.cho_solve(W_factor, np.eye(r1))
        RC = R_inv @ C

        elig = np.flatnonzero(remaining)
        sel = np.asarray(indices, dtype=np.intp)
        S = Tw[elig] @ Tu[sel].T  # cross-covariances, (n_elig, k-1)
        A = S @ R_inv
        g = d[elig] - np.einsum("ij,ij->i", A, S)
        V = S @ RC - U1[elig]
        num = np.einsum("ij,ij->i", V @ W_inv, V)

        valid = g > g_min
        if not valid.any():
            raise StepInfeasibleError(
                f"every candidate fell below the Schur-complement floor at step {k}; "
                f"noise covariance would become singular",
                step=k,
                diagnostics={"eligible": int(elig.size), "g_max": float(g.max(initial=0.0))},
            )
        scores = np.full(elig.size, -np.inf)
        scores[valid] = num[valid] / g[valid]
        winner, score = _pick_lowest_max(elig[valid], scores[valid])
        pos = int(np.searchsorted(elig, winner))

        # Grow R, its maintained inverse, and the information matrix.
        s_row = S[pos]
        g_i = float(g[pos])
        v = V[pos]
        w = R_inv @ s_row
        k0 = R.shape[0]
        new_R = np.empty((k0 + 1, k0 + 1))
        new_R[:k0, :k0] = R
        new_R[:k0, k0] = s_row
        new_R[k0, :k0] = s_row
        new_R[k0, k0] = d[winner]
        new_inv = np.empty((k0 + 1, k0 + 1))
        new_inv[:k0, :k0] = R_inv + np.outer(w, w) / g_i
        new_inv[:k0, k0] = -w / g_i
        new_inv[k0, :k0] = -w / g_i
        new_inv[k0, k0] = 1.0 / g_i
        R, R_inv = new_R, new_inv
        C = np.vstack([C, U1[winner][None, :]])
        W = W + np.outer(v, v) / g_i
        logdet_W += math.log1p(score)

        indices.append(winner)
        remaining[winner] = False
        step_scores.append(score)
        step_logdets.append(logdet_W)

        drift = np.max(np.abs(R_inv @ R - np.eye(k)))
        if k % INVERSE_REFRESH_PERIOD == 0 or drift > INVERSE_DRIFT_TOL:
            R_inv = _fresh_inverse(R)

    state = SelectionState(
        indices=indices,
        C=C,
        R=R,
        R_inv=R_inv,
        W=W,
        logdet_W=logdet_W,
        step_scores=step_scores,
        step_logdets=step_logdets,
    )
    return list(indices), state


def select_brute_force(
    basis: PodBasis,
    noise: NoiseModel,
    r1: int,
    p: int,
    candidates: CandidateSet,
) -> list[int]:
    """Exact maximizer of the Bayesian objective over all p-subsets.

    Enumerates subsets in lexicographic order and keeps the strictly best,
    so exact ties resolve to the lexicographically smallest index set.
    Guarded by :data:`BRUTE_FORCE_LIMIT` on the subset count.
    """
    _validate_selection_args(basis, candidates, r1, p)
    if noise.r1 != r1:
        raise InvalidConfigError(f"noise model was built for r1={noise.r1}, not {r1}")
    elig = [int(i) for i in candidates.eligible_indices()]
    total = math.comb(len(elig), p)
    if total > BRUTE_FORCE_LIMIT:
        raise ResourceLimitError(
            f"{total} subsets exceed the exhaustive-search guard ({BRUTE_FORCE_LIMIT})"
        )
    U1 = basis.U[:, :r1]
    best_logdet = -np.inf
    best_combo = None
    for combo in itertools.combinations(elig, p):
        idx = np.asarray(combo, dtype=np.intp)
        logdet = _subset_logdet(U1, noise, idx)
        if logdet is not None and logdet > best_logdet:
            best_logdet = logdet
            best_combo = combo
    if best_combo is None:
        raise StepInfeasibleError(
            "noise covariance singular for every subset; "
            "check the low-RMS candidate exclusion"
        )
    return list(best_combo)


def select_random(n: int, p: int, seed: int, candidates: CandidateSet) -> list[int]:
    """Uniform sample of ``p`` eligible locations without replacement.

    Deterministic for a fixed ``seed`` (PCG64 stream); returned sorted.
    """
    if candidates.n != n:
        raise InvalidInputError(f"candidate set covers {candidates.n} points, expected {n}")
    if p < 1:
        raise InvalidConfigError(f"p must be >= 1, got {p}")
    elig = candidates.eligible_indices()
    if p > elig.size:
        raise InfeasibleCandidatesError(f"p={p} exceeds {elig.size} eligible candidates")
    rng = np.random.default_rng(seed)
    pick = rng.choice(elig, size=p, replace=False)
    return sorted(int(i) for i in pick)
