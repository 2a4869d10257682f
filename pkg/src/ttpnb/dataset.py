"""Tables, vertical fragments and shared-seed train/test splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateSplit,
    EmptyDataset,
    ParseError,
    SchemaError,
    TooManySites,
)
from .rng import Xoshiro256

ROW_ID_COLUMN = "row_id"


@dataclass(frozen=True, eq=False)
class Table:
    """A numeric table whose rows are linked across sites by ``row_ids``.

    ``values`` has shape ``(n_rows, n_attributes)``; ``labels`` holds the class
    label of every row as text.
    """

    name: str
    attribute_names: tuple[str, ...]
    row_ids: np.ndarray
    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "attribute_names", tuple(self.attribute_names))
        object.__setattr__(self, "labels", tuple(self.labels))
        row_ids = np.asarray(self.row_ids, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64).reshape(len(row_ids), -1)
        row_ids.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "values", values)
        if values.shape[1] != len(self.attribute_names):
            raise SchemaError(
                f"{values.shape[1]} value columns but {len(self.attribute_names)} attribute names"
            )
        if len(self.labels) != len(row_ids):
            raise SchemaError("labels and row_ids differ in length")
        if len(row_ids) > 1 and not np.all(np.diff(row_ids) > 0):
            raise SchemaError("row_ids must be unique and strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ParseError("table contains non-finite values")

    @property
    def n_rows(self) -> int:
        return len(self.row_ids)

    @property
    def class_labels(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.labels)))

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.attribute_names.index(name)]

    def rows(self):
        """Iterate ``(row_id, values, class_label)`` triples."""
        for rid, vals, lab in zip(self.row_ids, self.values, self.labels):
            yield int(rid), [float(v) for v in vals], lab

    def positions(self, row_ids: Sequence[int]) -> np.ndarray:
        """Storage positions of the given row ids."""
        ids = np.asarray(row_ids, dtype=np.int64)
        pos = np.searchsorted(self.row_ids, ids)
        if len(ids) and (pos.max() >= self.n_rows or np.any(self.row_ids[pos] != ids)):
            raise SchemaError("unknown row id requested")
        return pos

    def select(self, row_ids: Sequence[int]) -> "Table":
        pos = np.sort(self.positions(row_ids))
        return Table(
            self.name,
            self.attribute_names,
            self.row_ids[pos],
            self.values[pos],
            [self.labels[p] for p in pos],
        )

    def equals(self, other: "Table") -> bool:
        return (
            self.attribute_names == other.attribute_names
            and self.labels == other.labels
            and np.array_equal(self.row_ids, other.row_ids)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class PartitionedTable(Table):
    """One site's vertical fragment: every row, a disjoint block of attributes."""

    site_id: int = 0

    def to_table(self) -> Table:
        return Table(self.name, self.attribute_names, self.row_ids, self.values, self.labels)


@dataclass(frozen=True)
class SplitPlan:
    """How train/test splits are drawn.

    ``scheme="holdout"`` gives ``repeats`` independent holdouts cut at
    ``round(train_fraction * n)``. ``scheme="kfold"`` gives ``repeats`` times
    ``folds`` cross-validation splits, in which case ``train_fraction`` is
    ignored.
    """

    seed: int = 42
    train_fraction: float = 0.5
    repeats: int = 10
    scheme: str = "holdout"
    folds: int = 10

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.repeats < 1:
            raise ValueError("repeats must be positive")
        if self.scheme not in ("holdout", "kfold"):
            raise ValueError(f"unknown split scheme {self.scheme!r}")
        if self.scheme == "kfold" and self.folds < 2:
            raise ValueError("kfold needs at least 2 folds")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def n_splits(self) -> int:
        return self.repeats * (self.folds if self.scheme == "kfold" else 1)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "repeats": self.repeats,
            "scheme": self.scheme,
            "folds": self.folds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(**d)


def _parse_label_column(header: list[str], label_column: str | int) -> int:
    if isinstance(label_column, int) or (isinstance(label_column, str) and label_column.lstrip("-").isdigit()):
        idx = int(label_column)
        if not -len(header) <= idx < len(header):
            raise SchemaError(f"label column index {idx} out of range for {len(header)} columns")
        return idx % len(header)
    if label_column not in header:
        raise SchemaError(f"label column {label_column!r} not in header {header}")
    return header.index(label_column)


def load_csv(path: str | Path, label_column: str | int) -> Table:
    """Read a headed CSV; every non-label column must be numeric.

    Row ids are assigned ``0..n-1`` in file order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path}: file is empty") from None
        label_idx = _parse_label_column(header, label_column)
        attr_idx = [j for j in range(len(header)) if j != label_idx]
        values, labels = [], []
        for line_no, record in enumerate(reader, start=2):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise ParseError(
                    f"{path}:{line_no}: expected {len(header)} cells, got {len(record)}"
                )
            row = []
            for j in attr_idx:
                cell = record[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}:{line_no}: column {header[j]!r} has non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}:{line_no}: column {header[j]!r} is not finite")
                row.append(v)
            values.append(row)
            labels.append(record[label_idx].strip())
    if not values:
        raise EmptyDataset(f"{path}: no data rows")
    if len(set(labels)) < 2:
        raise EmptyDataset(f"{path}: need at least 2 classes, found {sorted(set(labels))}")
    return Table(
        name=path.stem,
        attribute_names=[header[j] for j in attr_idx],
        row_ids=np.arange(len(values)),
        values=np.array(values, dtype=np.float64),
        labels=labels,
    )


def block_sizes(n_attributes: int, num_sites: int) -> list[int]:
    base, extra = divmod(n_attributes, num_sites)
    return [base + 1 if s < extra else base for s in range(num_sites)]


def partition_vertical(t: Table, num_sites: int) -> list[PartitionedTable]:
    """Split attributes into contiguous, order-preserving blocks, one per site.

    Block sizes differ by at most one and earlier sites take the extra
    attribute. Every fragment keeps all row ids and the class label.
    """
    n_attr = len(t.attribute_names)
    if num_sites < 1:
        raise ValueError("num_sites must be positive")
    if num_sites > n_attr:
        raise TooManySites(f"{num_sites} sites but only {n_attr} attributes")
    fragments = []
    start = 0
    for site, size in enumerate(block_sizes(n_attr, num_sites)):
        cols = slice(start, start + size)
        fragments.append(
            PartitionedTable(
                name=t.name,
                attribute_names=t.attribute_names[cols],
                row_ids=t.row_ids,
                values=t.values[:, cols],
                labels=t.labels,
                site_id=site,
            )
        )
        start += size
    return fragments


def join_fragments(fragments: Sequence[Table]) -> Table:
    """Reassemble fragments by row id, in site order."""
    if not fragments:
        raise ValueError("no fragments to join")
    frags = sorted(fragments, key=lambda f: getattr(f, "site_id", 0))
    first = frags[0]
    blocks = []
    names: list[str] = []
    for f in frags:
        if not np.array_equal(f.row_ids, first.row_ids) or f.labels != first.labels:
            raise SchemaError("fragments disagree on row ids or class labels")
        overlap = set(names) & set(f.attribute_names)
        if overlap:
            raise SchemaError(f"attributes held by more than one fragment: {sorted(overlap)}")
        names.extend(f.attribute_names)
        blocks.append(f.values)
    return Table(first.name, names, first.row_ids, np.hstack(blocks), first.labels)


def write_fragment(fragment: Table, path: str | Path, label_name: str = "class") -> None:
    """Write ``row_id,<attributes...>,<label>`` with round-trip float text."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([ROW_ID_COLUMN, *fragment.attribute_names, label_name])
        for rid, vals, lab in fragment.rows():
            w.writerow([rid, *(repr(v) for v in vals), lab])


def load_fragment(path: str | Path, site_id: int = 0) -> PartitionedTable:
    """Read a fragment file written by :func:`write_fragment`."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if not header or header[0].strip() != ROW_ID_COLUMN or len(header) < 3:
        raise SchemaError(f"{path}: fragment header must be row_id,<attributes...>,<label>")
    t = load_csv(path, len(header) - 1)
    row_ids = t.values[:, 0]
    if np.any(row_ids != np.round(row_ids)) or np.any(row_ids < 0):
        raise ParseError(f"{path}: row_id column must hold non-negative integers")
    order = np.argsort(row_ids, kind="stable")
    return PartitionedTable(
        name=t.name,
        attribute_names=t.attribute_names[1:],
        row_ids=row_ids[order].astype(np.int64),
        values=t.values[order, 1:],
        labels=[t.labels[i] for i in order],
        site_id=site_id,
    )


def generate_splits(n_rows: int, plan: SplitPlan) -> list[tuple[list[int], list[int]]]:
    """Deterministic ``(train_ids, test_ids)`` pairs over rows ``0..n_rows-1``.

    Each repeat shuffles with its own xoshiro256** substream of ``plan.seed``
    (see :mod:`ttpnb.rng`), so any site holding the plan derives the same
    splits. Id lists are returned sorted.
    """
    if n_rows < 2:
        raise DegenerateSplit(f"need at least 2 rows, got {n_rows}")
    splits = []
    if plan.scheme == "holdout":
        cut = round(plan.train_fraction * n_rows)
        if cut < 1 or cut > n_rows - 1:
            raise DegenerateSplit(
                f"train_fraction {plan.train_fraction} on {n_rows} rows leaves an empty side"
            )
        for r in range(plan.repeats):
            perm = Xoshiro256.for_stream(plan.seed, r).permutation(n_rows)
            splits.append((sorted(perm[:cut]), sorted(perm[cut:])))
    else:
        if plan.folds > n_rows:
            raise DegenerateSplit(f"{plan.folds} folds on {n_rows} rows leaves an empty fold")
        sizes = block_sizes(n_rows, plan.folds)
        for r in range(plan.repeats):
            perm = Xoshiro256.for_stream(plan.seed, r).permutation(n_rows)
            start = 0
            for size in sizes:
                test = perm[start:start + size]
                train = perm[:start] + perm[start + size:]
                splits.append((sorted(train), sorted(test)))
                start += size
    return splits
