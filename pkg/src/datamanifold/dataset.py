"""Point-cloud ingestion and cleaning.

A :class:`Dataset` is either a matrix of coordinates or an externally supplied
neighbor graph. Every downstream estimator works on one of the two.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from datamanifold.exceptions import DataFormatError, PreconditionError

if TYPE_CHECKING:
    from datamanifold.neighbors import NeighborGraph


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable point cloud (or precomputed neighbor graph).

    Attributes:
        points (np.ndarray | None): float64 matrix of shape (N, D)
        external_graph (NeighborGraph | None): distances supplied instead of points
        point_ids (np.ndarray): original row index of every retained point
    """

    points: np.ndarray | None = None
    external_graph: NeighborGraph | None = None
    point_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if (self.points is None) == (self.external_graph is None):
            raise PreconditionError("exactly one of points or external_graph must be given")
        if self.points is not None:
            pts = np.ascontiguousarray(self.points, dtype=np.float64)
            if pts.ndim != 2:
                raise PreconditionError(f"points must be a 2-d matrix, got shape {pts.shape}")
            if pts.shape[0] == 0:
                raise PreconditionError("empty dataset")
            pts.setflags(write=False)
            object.__setattr__(self, "points", pts)
        n = self.n_points
        ids = np.arange(n) if self.point_ids is None else np.asarray(self.point_ids, dtype=np.int64)
        if ids.shape != (n,):
            raise PreconditionError("point_ids must have one entry per point")
        ids.setflags(write=False)
        object.__setattr__(self, "point_ids", ids)

    @classmethod
    def from_graph(cls, graph: NeighborGraph) -> Dataset:
        return cls(external_graph=graph)

    @property
    def n_points(self) -> int:
        if self.points is not None:
            return self.points.shape[0]
        return self.external_graph.n_points

    @property
    def n_features(self) -> int:
        return 0 if self.points is None else self.points.shape[1]

    def subset(self, rows) -> Dataset:
        """Return the dataset restricted to ``rows`` (indices into the current points)."""
        if self.points is None:
            raise PreconditionError("cannot subset a dataset defined only by distances")
        rows = np.asarray(rows)
        return Dataset(points=self.points[rows], point_ids=self.point_ids[rows])


@dataclass
class CleanReport:
    nonfinite: int = 0
    duplicates: int = 0
    n_before: int = 0
    n_after: int = 0

    def as_dict(self) -> dict:
        return {
            "nonfinite": self.nonfinite,
            "duplicates": self.duplicates,
            "n_before": self.n_before,
            "n_after": self.n_after,
        }


def load_points(path, delimiter: str = ",", has_header: bool = False) -> Dataset:
    """Read a delimited text file with one point per row.

    Args:
        path: file to read
        delimiter (str): column separator
        has_header (bool): skip the first line

    Returns:
        Dataset: with ``point_ids = 0..N-1``

    Raises:
        DataFormatError: unreadable file, ragged rows or non-numeric cells. Row and
            column numbers in the message are 0-based and count data rows only.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh, delimiter=delimiter))
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc

    if has_header and rows:
        rows = rows[1:]
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError(f"{path}: no data rows")

    ncol = len(rows[0])
    data = np.empty((len(rows), ncol), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != ncol:
            raise DataFormatError(f"{path}: row {i} has {len(row)} columns, expected {ncol}")
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"{path}: non-numeric value {cell!r} at row {i}, column {j}"
                ) from None
    return Dataset(points=data)


def save_points(ds: Dataset, path, delimiter: str = ",") -> None:
    """Write points with 17 significant digits so that reloading is bit-exact."""
    if ds.points is None:
        raise PreconditionError("dataset has no coordinates to save")
    np.savetxt(Path(path), ds.points, delimiter=delimiter, fmt="%.17g")


def clean(ds: Dataset, drop_duplicates: bool = True) -> tuple[Dataset, CleanReport]:
    """Drop rows with non-finite values and, optionally, exact duplicates.

    Within a group of identical rows the one with the lowest original index is kept.
    """
    n_before = ds.n_points
    if ds.points is None:
        return ds, CleanReport(n_before=n_before, n_after=n_before)

    pts = ds.points
    finite = np.isfinite(pts).all(axis=1)
    keep = np.flatnonzero(finite)
    n_dup = 0
    if drop_duplicates and keep.size:
        # +0.0 folds -0.0 onto 0.0 so byte-wise uniqueness equals zero distance
        _, first = np.unique(pts[keep] + 0.0, axis=0, return_index=True)
        first = np.sort(first)
        n_dup = keep.size - first.size
        keep = keep[first]

    report = CleanReport(
        nonfinite=int(n_before - finite.sum()),
        duplicates=int(n_dup),
        n_before=n_before,
        n_after=int(keep.size),
    )
    if keep.size == 0:
        raise PreconditionError("cleaning removed every row")
    if keep.size == n_before:
        return ds, report
    return ds.subset(keep), report
