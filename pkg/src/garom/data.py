"""Snapshot sets: the parametric Gaussian benchmark, CSV ingestion, splits
and optional min-max scaling.

CSV layout: header ``c_0,...,c_{Nc-1},u_0,...,u_{Nu-1}``, one row per
instance, plain decimal floats. Externally solved problems (e.g. Graetz or
lid-driven cavity snapshots) enter the package through this format.
"""

import csv
import math
import re
from dataclasses import dataclass, field

import numpy as np

PROVENANCES = ("generated", "ingested")
_HEADER_RE = re.compile(r"^([cu])_(\d+)$")


class CsvFormatError(ValueError):
    """Malformed snapshot CSV; the message names the offending row/column."""


@dataclass(frozen=True)
class SnapshotSet:
    params: np.ndarray
    solutions: np.ndarray
    provenance: str = "generated"
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.array(self.params, dtype=np.float64, copy=True)
        u = np.array(self.solutions, dtype=np.float64, copy=True)
        if c.ndim != 2 or u.ndim != 2:
            raise ValueError("params and solutions must be 2-D")
        if c.shape[0] != u.shape[0]:
            raise ValueError(f"{c.shape[0]} parameter rows vs {u.shape[0]} solution rows")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(u))):
            raise ValueError("snapshot set contains NaN or Inf")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")
        c.flags.writeable = False
        u.flags.writeable = False
        object.__setattr__(self, "params", c)
        object.__setattr__(self, "solutions", u)

    @property
    def n(self):
        return self.params.shape[0]

    @property
    def n_c(self):
        return self.params.shape[1]

    @property
    def n_u(self):
        return self.solutions.shape[1]

    def subset(self, rows):
        rows = np.asarray(rows)
        return SnapshotSet(self.params[rows], self.solutions[rows], self.provenance,
                           dict(self.metadata))


def gaussian_solution(points, center):
    """``exp(-|x - center|^2)`` evaluated at each row of ``points``."""
    d = np.asarray(points, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    return np.exp(-np.einsum("ij,ij->i", d, d))


def gen_gaussian_dataset(n_instances=400, n_points=900, rng=None, seed=None):
    """Translating-Gaussian benchmark on ``[-1, 1]^2``.

    One set of ``n_points`` uniformly random evaluation points is shared by
    every instance; the centres are drawn uniformly in the same square.
    The points are kept in ``metadata["points"]``.
    """
    if n_instances < 1 or n_points < 1:
        raise ValueError("n_instances and n_points must be >= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    points = rng.uniform(-1.0, 1.0, size=(n_points, 2))
    centers = rng.uniform(-1.0, 1.0, size=(n_instances, 2))
    diff = points[None, :, :] - centers[:, None, :]
    sols = np.exp(-np.einsum("nij,nij->ni", diff, diff))
    meta = {"dataset": "gaussian", "points": points, "domain": [[-1.0, 1.0], [-1.0, 1.0]]}
    return SnapshotSet(centers, sols, "generated", meta)


def _fmt(x):
    # repr is the shortest string that round-trips (<= 17 significant digits)
    return repr(float(x))


def write_table(path, params, solutions=None, extra=None):
    """Write rows in the snapshot CSV layout.

    ``extra`` is an optional list of ``(name, column_array)`` appended after
    the ``u_*`` block.
    """
    params = np.asarray(params, dtype=np.float64)
    blocks = [params]
    header = [f"c_{i}" for i in range(params.shape[1])]
    if solutions is not None:
        solutions = np.asarray(solutions, dtype=np.float64)
        blocks.append(solutions)
        header += [f"u_{i}" for i in range(solutions.shape[1])]
    for name, col in extra or ():
        blocks.append(np.asarray(col, dtype=np.float64).reshape(params.shape[0], -1))
        header.append(name)
    table = np.hstack(blocks)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in table.tolist():
            fh.write(",".join(map(_fmt, row)) + "\n")


def save_csv(snapshots, path):
    write_table(path, snapshots.params, snapshots.solutions)


def _parse_header(header):
    n_c = n_u = 0
    seen_u = False
    for col, name in enumerate(header, start=1):
        m = _HEADER_RE.match(name.strip())
        if not m:
            raise CsvFormatError(f"header column {col}: expected c_<i> or u_<i>, got {name!r}")
        kind, idx = m.group(1), int(m.group(2))
        if kind == "c":
            if seen_u:
                raise CsvFormatError(f"header column {col}: {name!r} after the u_* block")
            if idx != n_c:
                raise CsvFormatError(f"header column {col}: expected c_{n_c}, got {name!r}")
            n_c += 1
        else:
            seen_u = True
            if idx != n_u:
                raise CsvFormatError(f"header column {col}: expected u_{n_u}, got {name!r}")
            n_u += 1
    if n_c == 0:
        raise CsvFormatError("header has no c_* columns")
    return n_c, n_u


def read_table(path):
    """Parse a snapshot CSV into ``(params, solutions)``; ``solutions`` may have 0 columns.

    The whole file is validated before anything is returned.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        n_c, n_u = _parse_header(header)
        width = n_c + n_u
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise CsvFormatError(f"row {line_no}: {len(row)} columns, header has {width}")
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    x = float(cell)
                except ValueError:
                    raise CsvFormatError(
                        f"row {line_no}, column {col} ({header[col - 1]}): "
                        f"non-numeric cell {cell!r}"
                    ) from None
                if not math.isfinite(x):
                    raise CsvFormatError(f"row {line_no}, column {col}: non-finite value {cell!r}")
                values.append(x)
            rows.append(values)
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    return table[:, :n_c], table[:, n_c:]


def load_csv(path):
    params, sols = read_table(path)
    if sols.shape[1] == 0:
        raise CsvFormatError(f"{path}: header has no u_* columns")
    return SnapshotSet(params, sols, "ingested", {"source": str(path)})


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    test: np.ndarray
    seed: int


def split(snapshots, train_fraction, seed):
    """Seeded shuffle; the first ``floor(fraction * N)`` rows go to training.

    ``snapshots`` may also be a plain row count. Index arrays are returned
    sorted.
    """
    n = snapshots if isinstance(snapshots, (int, np.integer)) else snapshots.n
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(math.floor(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"fraction {train_fraction} of {n} rows leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return Split(np.sort(perm[:n_train]), np.sort(perm[n_train:]), seed)


@dataclass(frozen=True)
class AffineRecord:
    """``x_scaled = (x - offset) / scale`` per column, for params and solutions."""

    mode: str
    param_offset: np.ndarray
    param_scale: np.ndarray
    solution_offset: np.ndarray
    solution_scale: np.ndarray

    def apply(self, snapshots):
        return SnapshotSet((snapshots.params - self.param_offset) / self.param_scale,
                           (snapshots.solutions - self.solution_offset) / self.solution_scale,
                           snapshots.provenance, dict(snapshots.metadata))

    def invert(self, snapshots):
        return SnapshotSet(snapshots.params * self.param_scale + self.param_offset,
                           snapshots.solutions * self.solution_scale + self.solution_offset,
                           snapshots.provenance, dict(snapshots.metadata))

    def invert_solutions(self, u):
        return np.asarray(u) * self.solution_scale + self.solution_offset


def _minmax(x):
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    # zero-range columns pass through unchanged
    const = span == 0.0
    return np.where(const, 0.0, lo), np.where(const, 1.0, span)


NORMALIZE_MODES = ("none", "minmax_per_component")


def normalize(snapshots, mode="none"):
    if mode not in NORMALIZE_MODES:
        raise ValueError(f"mode must be one of {NORMALIZE_MODES}, got {mode!r}")
    if mode == "none":
        record = AffineRecord(mode, np.zeros(snapshots.n_c), np.ones(snapshots.n_c),
                              np.zeros(snapshots.n_u), np.ones(snapshots.n_u))
        return snapshots, record
    c_off, c_scale = _minmax(snapshots.params)
    u_off, u_scale = _minmax(snapshots.solutions)
    record = AffineRecord(mode, c_off, c_scale, u_off, u_scale)
    return record.apply(snapshots), record
