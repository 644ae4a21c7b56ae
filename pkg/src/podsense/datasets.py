"""Synthetic dataset generation, matrix file formats, and masked-grid I/O.

File formats
------------
Binary matrix (``.bin``): 8-byte magic ``SPNSMAT1``, then ``n`` and ``m`` as
little-endian unsigned 64-bit integers, then ``n*m`` little-endian float64
values in column-major order (snapshots are contiguous).  Round-trips are
bit-exact.

CSV matrix: one spatial point per row, comma-separated, no header; values
printed with 17 significant digits so float64 round-trips exactly.

Masked grid: a mask CSV of 0/1 with ``height`` rows by ``width`` columns,
plus one value CSV of the same shape per snapshot.  Active (mask=1) cells
are flattened row-major into point indices; inactive cells may hold any
value on read and are emitted as NaN on write.

All loaders enforce the finite-only policy: a non-finite value anywhere it
matters is rejected, never propagated.

Randomness: all sampling uses NumPy's ``default_rng`` (PCG64) seeded with
the documented integer, drawing ``standard_normal`` matrices row-major; the
stream is part of the reproducibility contract.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadCsvCellError,
    BadMagicError,
    DataFormatError,
    InvalidConfigError,
    InvalidInputError,
    TruncatedFileError,
)
from .pod import SnapshotMatrix

__all__ = [
    "RandomSpecConfig",
    "MaskedGrid",
    "gen_random_dataset",
    "inv_sqrt_spectrum",
    "correlated_tail_spectrum",
    "write_matrix",
    "read_matrix",
    "load_masked_grid",
    "scatter_to_grid",
    "gen_masked_grid_dataset",
    "write_grid_dataset",
]

MAGIC = b"SPNSMAT1"
_HEADER = struct.Struct("<8sQQ")


@dataclass(frozen=True)
class RandomSpecConfig:
    """Recipe for a random test matrix with a prescribed singular spectrum."""

    n: int
    m: int
    spectrum: np.ndarray
    seed: int

    def __post_init__(self):
        spectrum = np.asarray(self.spectrum, dtype=np.float64)
        if self.n < 1 or self.m < 1:
            raise InvalidConfigError(f"n and m must be positive, got {self.n}, {self.m}")
        if self.n < self.m:
            raise InvalidConfigError(
                f"n={self.n} < m={self.m}: the construction needs at least as many "
                f"points as snapshots"
            )
        if spectrum.shape != (self.m,):
            raise InvalidConfigError(
                f"spectrum must have length m={self.m}, got {spectrum.shape}"
            )
        if not np.isfinite(spectrum).all() or np.any(spectrum < 0.0):
            raise InvalidConfigError("spectrum must be finite and nonnegative")
        if np.any(np.diff(spectrum) > 0.0):
            raise InvalidConfigError("spectrum must be nonincreasing")
        spectrum.flags.writeable = False
        object.__setattr__(self, "spectrum", spectrum)


def inv_sqrt_spectrum(m: int) -> np.ndarray:
    """Slowly decaying singular values ``1/sqrt(k)``, k = 1..m."""
    return 1.0 / np.sqrt(np.arange(1, m + 1, dtype=np.float64))


def correlated_tail_spectrum(
    m: int,
    r1: int,
    strong_modes: int,
    strong_value: float,
    weak_value: float,
) -> np.ndarray:
    """Spectrum whose noise tail is dominated by a few strong modes.

    The leading ``r1`` values decay as ``1/sqrt(k)``; the next
    ``strong_modes`` sit at ``strong_value`` (large, heavily correlated
    noise), and the rest at ``weak_value`` (a tiny variance floor that keeps
    sensor covariances well conditioned).  Useful for studying how much of
    the off-diagonal noise structure a truncated model must keep.
    """
    if not 0 < r1 < m:
        raise InvalidConfigError(f"need 0 < r1 < m, got r1={r1}, m={m}")
    if strong_modes < 0 or r1 + strong_modes > m:
        raise InvalidConfigError("strong_modes out of range")
    head = inv_sqrt_spectrum(r1)
    if strong_value > head[-1]:
        raise InvalidConfigError(
            f"strong_value {strong_value} exceeds the last signal value {head[-1]:.4f}; "
            f"spectrum would not be nonincreasing"
        )
    if not 0.0 < weak_value <= strong_value:
        raise InvalidConfigError("need 0 < weak_value <= strong_value")
    tail = np.full(m - r1, weak_value)
    tail[:strong_modes] = strong_value
    return np.concatenate([head, tail])


def gen_random_dataset(cfg: RandomSpecConfig) -> SnapshotMatrix:
    """Random matrix ``U diag(spectrum) V^T`` with orthonormal random factors.

    ``U`` (n x m) and ``V`` (m x m) come from QR factorizations of seeded
    standard-normal matrices, so the singular values of the result equal
    ``cfg.spectrum`` exactly (up to roundoff) and two runs with the same
    seed produce bit-identical matrices.
    """
    rng = np.random.default_rng(cfg.seed)
    qu, _ = np.linalg.qr(rng.standard_normal((cfg.n, cfg.m)))
    qv, _ = np.linalg.qr(rng.standard_normal((cfg.m, cfg.m)))
    return SnapshotMatrix((qu * cfg.spectrum) @ qv.T)


# ---------------------------------------------------------------------------
# Matrix files
# ---------------------------------------------------------------------------


def write_matrix(path, X, fmt: str = "auto") -> None:
    """Write a matrix as binary (default) or CSV.

    ``fmt="auto"`` chooses CSV for a ``.csv`` suffix and binary otherwise.
    """
    if not isinstance(X, SnapshotMatrix):
        X = SnapshotMatrix(np.asarray(X))
    path = Path(path)
    fmt = _resolve_format(path, fmt)
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, X.n, X.m))
            fh.write(np.asfortranarray(X.values).tobytes(order="F"))
    else:
        np.savetxt(path, X.values, fmt="%.17g", delimiter=",")


def read_matrix(path, fmt: str = "auto") -> SnapshotMatrix:
    """Read a matrix written by :func:`write_matrix`.

    Raises
    ------
    BadMagicError, TruncatedFileError, BadCsvCellError
        Distinct errors for a wrong magic header, a short file, and an
        unparseable CSV cell.  Non-finite values are rejected in both
        formats (finite-only policy).
    """
    path = Path(path)
    fmt = _resolve_format(path, fmt)
    return _read_binary(path) if fmt == "binary" else _read_csv_matrix(path)


def _resolve_format(path: Path, fmt: str) -> str:
    if fmt == "auto":
        return "csv" if path.suffix.lower() == ".csv" else "binary"
    if fmt not in ("binary", "csv"):
        raise InvalidConfigError(f"unknown matrix format {fmt!r}")
    return fmt


def _read_binary(path: Path) -> SnapshotMatrix:
    buf = path.read_bytes()
    if len(buf) < _HEADER.size:
        raise TruncatedFileError(f"{path}: {len(buf)} bytes, header needs {_HEADER.size}")
    magic, n, m = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = _HEADER.size + 8 * n * m
    if len(buf) < expected:
        raise TruncatedFileError(
            f"{path}: {len(buf)} bytes, {n}x{m} payload needs {expected}"
        )
    if len(buf) > expected:
        raise DataFormatError(f"{path}: {len(buf) - expected} trailing bytes")
    flat = np.frombuffer(buf, dtype="<f8", count=n * m, offset=_HEADER.size)
    values = flat.reshape((n, m), order="F")
    if not np.isfinite(values).all():
        raise InvalidInputError(f"{path}: non-finite values (finite-only policy)")
    return SnapshotMatrix(values)


def _parse_csv_grid(path: Path, what: str = "matrix") -> np.ndarray:
    """Parse a rectangular CSV of floats with cell-level error reporting."""
    rows: list[list[float]] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            row = []
            for colno, token in enumerate(line.split(",")):
                try:
                    row.append(float(token))
                except ValueError:
                    raise BadCsvCellError(
                        f"{path}: non-numeric cell at row {lineno}, column {colno}: "
                        f"{token.strip()!r}"
                    ) from None
            rows.append(row)
    if not rows:
        raise TruncatedFileError(f"{path}: empty {what} file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataFormatError(f"{path}: ragged rows in {what} file")
    return np.array(rows, dtype=np.float64)


def _read_csv_matrix(path: Path) -> SnapshotMatrix:
    values = _parse_csv_grid(path)
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        r, c = bad[0]
        raise InvalidInputError(
            f"{path}: non-finite value at row {r}, column {c} (finite-only policy)"
        )
    return SnapshotMatrix(values)


# ---------------------------------------------------------------------------
# Masked grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaskedGrid:
    """A ``height x width`` grid in which only masked-true cells carry data.

    ``mask`` is the flat row-major activity vector; ``point_index`` maps each
    flat cell to its point index (``-1`` for inactive cells), a bijection
    between active cells and ``0..n-1``.
    """

    width: int
    height: int
    mask: np.ndarray
    point_index: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        point_index = np.asarray(self.point_index, dtype=np.intp)
        if mask.shape != (self.width * self.height,):
            raise InvalidInputError("mask length must be width*height")
        if point_index.shape != mask.shape:
            raise InvalidInputError("point_index length must be width*height")
        n = int(mask.sum())
        active = point_index[mask]
        if sorted(active.tolist()) != list(range(n)) or np.any(point_index[~mask] != -1):
            raise InvalidInputError("point_index is not a bijection over active cells")
        mask.flags.writeable = False
        point_index.flags.writeable = False
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "point_index", point_index)

    @property
    def n(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def from_mask_array(cls, mask2d: np.ndarray) -> "MaskedGrid":
        mask2d = np.asarray(mask2d, dtype=bool)
        if mask2d.ndim != 2:
            raise InvalidInputError("mask must be 2-D")
        height, width = mask2d.shape
        flat = mask2d.reshape(-1)
        point_index = np.full(flat.shape, -1, dtype=np.intp)
        point_index[flat] = np.arange(int(flat.sum()))
        return cls(width=width, height=height, mask=flat, point_index=point_index)

    def flatten_grid(self, grid2d: np.ndarray) -> np.ndarray:
        """Extract the active cells of one snapshot grid, row-major."""
        grid2d = np.asarray(grid2d, dtype=np.float64)
        if grid2d.shape != (self.height, self.width):
            raise InvalidInputError(
                f"grid shape {grid2d.shape} differs from mask "
                f"({self.height}, {self.width})"
            )
        return grid2d.reshape(-1)[self.mask]


def load_masked_grid(values_paths, mask_path) -> tuple[SnapshotMatrix, MaskedGrid]:
    """Load a masked-grid dataset: one value CSV per snapshot plus a mask CSV.

    ``values_paths`` may be a directory (all ``*.csv`` inside, sorted by
    name), or an explicit sequence of file paths.  Active cells of each
    snapshot become one column of the returned matrix.
    """
    mask_arr = _parse_csv_grid(Path(mask_path), what="mask")
    if not np.isin(mask_arr, (0.0, 1.0)).all():
        raise DataFormatError(f"{mask_path}: mask cells must be 0 or 1")
    grid = MaskedGrid.from_mask_array(mask_arr.astype(bool))

    paths = _snapshot_paths(values_paths)
    columns = []
    for path in paths:
        raw = _parse_csv_grid(path, what="snapshot")
        if raw.shape != (grid.height, grid.width):
            raise DataFormatError(
                f"{path}: snapshot shape {raw.shape} differs from mask "
                f"({grid.height}, {grid.width})"
            )
        column = raw.reshape(-1)[grid.mask]
        bad = int(np.count_nonzero(~np.isfinite(column)))
        if bad:
            raise DataFormatError(
                f"{path}: {bad} active cells are non-finite; active-cell sets "
                f"must agree across snapshots"
            )
        columns.append(column)
    return SnapshotMatrix(np.column_stack(columns)), grid


def _snapshot_paths(values_paths) -> list[Path]:
    if isinstance(values_paths, (str, Path)):
        root = Path(values_paths)
        if root.is_dir():
            paths = sorted(root.glob("*.csv"))
            if not paths:
                raise DataFormatError(f"{root}: no snapshot CSV files found")
            return paths
        return [root]
    paths = [Path(p) for p in values_paths]
    if not paths:
        raise InvalidInputError("no snapshot paths given")
    return paths


def scatter_to_grid(grid: MaskedGrid, x: np.ndarray) -> np.ndarray:
    """Inverse of the flattening: place point values back on the 2-D grid.

    Inactive cells are NaN (the documented in-file sentinel).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (grid.n,):
        raise InvalidInputError(f"vector length {x.shape} does not match n={grid.n}")
    flat = np.full(grid.width * grid.height, np.nan)
    flat[grid.mask] = x
    return flat.reshape((grid.height, grid.width))


def gen_masked_grid_dataset(
    width: int,
    height: int,
    n_active: int,
    m: int,
    spectrum: np.ndarray,
    seed: int,
) -> tuple[SnapshotMatrix, MaskedGrid]:
    """Random dataset on a grid with a deterministic inactive stripe.

    The first ``width*height - n_active`` cells (row-major) are marked
    inactive; the active cells carry a :func:`gen_random_dataset` matrix
    with the given spectrum.
    """
    cells = width * height
    if not 1 <= n_active <= cells:
        raise InvalidConfigError(f"n_active={n_active} outside [1, {cells}]")
    mask = np.ones(cells, dtype=bool)
    mask[: cells - n_active] = False
    grid = MaskedGrid.from_mask_array(mask.reshape((height, width)))
    X = gen_random_dataset(
        RandomSpecConfig(n=n_active, m=m, spectrum=spectrum, seed=seed)
    )
    return X, grid


def write_grid_dataset(out_dir, X: SnapshotMatrix, grid: MaskedGrid) -> None:
    """Write ``mask.csv`` plus ``snapshots/snap_NNNN.csv`` files for a dataset."""
    out = Path(out_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    np.savetxt(
        out / "mask.csv",
        grid.mask.reshape((grid.height, grid.width)).astype(int),
        fmt="%d",
        delimiter=",",
    )
    for j in range(X.m):
        np.savetxt(
            out / "snapshots" / f"snap_{j:04d}.csv",
            scatter_to_grid(grid, X.values[:, j]),
            fmt="%.17g",
            delimiter=",",
        )
