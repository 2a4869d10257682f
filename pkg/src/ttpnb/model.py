"""Gaussian Naive Bayes built from per-class sufficient statistics.

Perturbed values ``w = x + r`` (``r`` zero-mean with known variance) inflate
the per-class sample variance by the noise variance and leave the mean
unbiased, so each cell is corrected as ``var_hat = S^2 - noise_variance``
(clamped to a small positive floor) and ``mu_hat = mean(w)``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Table
from .errors import (
    InconsistentCounts,
    InsufficientClassData,
    MissingAttribute,
    MissingCell,
    SchemaError,
)
from .perturb import PerturbedColumn

DEFAULT_VARIANCE_FLOOR = 1e-9
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ClassConditionalStats:
    attribute_name: str
    class_label: str
    n: int
    mean: float
    sample_variance: float
    noise_variance: float

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute_name,
            "class": self.class_label,
            "n": self.n,
            "mean": self.mean,
            "sample_variance": self.sample_variance,
            "noise_variance": self.noise_variance,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClassConditionalStats":
        return cls(
            attribute_name=str(d["attribute"]),
            class_label=str(d["class"]),
            n=int(d["n"]),
            mean=float(d["mean"]),
            sample_variance=float(d["sample_variance"]),
            noise_variance=float(d["noise_variance"]),
        )


def compute_stats(column: PerturbedColumn, labels: Sequence[str]) -> list[ClassConditionalStats]:
    """Per-class count, mean and (n-1)-denominator variance of one column.

    Entries are ordered by class label.
    """
    values = np.asarray(column.values, dtype=np.float64)
    labels = np.asarray(labels)
    if len(values) != len(labels):
        raise SchemaError(f"{len(values)} values but {len(labels)} labels")
    out = []
    for c in sorted(set(labels.tolist())):
        w = values[labels == c]
        if len(w) < 2:
            raise InsufficientClassData(
                f"class {c!r} has {len(w)} training row(s) for {column.attribute_name!r}; need 2"
            )
        out.append(
            ClassConditionalStats(
                attribute_name=column.attribute_name,
                class_label=str(c),
                n=int(len(w)),
                mean=float(np.mean(w)),
                sample_variance=float(np.var(w, ddof=1)),
                noise_variance=float(column.noise_variance),
            )
        )
    return out


def correct_variance(s: ClassConditionalStats, floor: float | None = None) -> tuple[float, float]:
    """``(mu_hat, var_hat)`` for one cell.

    ``floor`` defaults to ``1e-9 * (1 + mean**2)``.
    """
    if floor is None:
        floor = DEFAULT_VARIANCE_FLOOR * (1.0 + s.mean * s.mean)
    return s.mean, max(s.sample_variance - s.noise_variance, floor)


@dataclass(frozen=True, eq=False)
class GaussianNBModel:
    """Class priors plus per-attribute, per-class Gaussian parameters.

    ``means`` and ``variances`` have shape ``(n_attributes, n_classes)`` with
    columns in ``class_labels`` order, which is sorted so ties resolve to the
    lexicographically smallest label.
    """

    class_labels: tuple[str, ...]
    priors: dict[str, float]
    attribute_names: tuple[str, ...]
    means: np.ndarray
    variances: np.ndarray
    variance_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self):
        for arr in (self.means, self.variances):
            arr.setflags(write=False)

    def params(self, attribute: str, class_label: str) -> tuple[float, float]:
        i = self.attribute_names.index(attribute)
        j = self.class_labels.index(class_label)
        return float(self.means[i, j]), float(self.variances[i, j])

    def to_dict(self) -> dict:
        return {
            "class_labels": list(self.class_labels),
            "priors": dict(self.priors),
            "attributes": [
                {
                    "name": name,
                    "params": {
                        c: {"mu": float(self.means[i, j]), "var": float(self.variances[i, j])}
                        for j, c in enumerate(self.class_labels)
                    },
                }
                for i, name in enumerate(self.attribute_names)
            ],
            "variance_floor": self.variance_floor,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping) -> "GaussianNBModel":
        labels = tuple(d["class_labels"])
        attrs = d["attributes"]
        means = np.array([[a["params"][c]["mu"] for c in labels] for a in attrs], dtype=np.float64)
        variances = np.array([[a["params"][c]["var"] for c in labels] for a in attrs], dtype=np.float64)
        return cls(
            class_labels=labels,
            priors={c: float(d["priors"][c]) for c in labels},
            attribute_names=tuple(a["name"] for a in attrs),
            means=means.reshape(len(attrs), len(labels)),
            variances=variances.reshape(len(attrs), len(labels)),
            variance_floor=float(d["variance_floor"]),
        )

    @classmethod
    def from_json(cls, text: str | bytes) -> "GaussianNBModel":
        return cls.from_dict(json.loads(text))


def canonical_json(obj) -> str:
    """Sorted keys, no whitespace, shortest round-trip float text."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def assemble_model(
    stats: Iterable[ClassConditionalStats],
    class_counts: Mapping[str, int],
    floor: float = DEFAULT_VARIANCE_FLOOR,
) -> GaussianNBModel:
    """Build the model from per-(attribute, class) statistics.

    Attributes keep their first-appearance order. Each cell's variance is
    clamped at ``floor * (1 + mu_hat**2)``.
    """
    if floor <= 0:
        raise ValueError("variance floor must be positive")
    labels = tuple(sorted(class_counts))
    if not labels:
        raise InconsistentCounts("no classes")
    total = sum(class_counts.values())
    if total <= 0 or any(class_counts[c] <= 0 for c in labels):
        raise InconsistentCounts(f"class counts must be positive: {dict(class_counts)}")

    cells: dict[str, dict[str, ClassConditionalStats]] = {}
    for s in stats:
        per_class = cells.setdefault(s.attribute_name, {})
        if s.class_label not in class_counts:
            raise InconsistentCounts(
                f"{s.attribute_name!r} has statistics for unknown class {s.class_label!r}"
            )
        if s.class_label in per_class:
            raise InconsistentCounts(f"duplicate cell ({s.attribute_name!r}, {s.class_label!r})")
        if s.n != class_counts[s.class_label]:
            raise InconsistentCounts(
                f"{s.attribute_name!r}: n={s.n} for class {s.class_label!r} "
                f"but class count is {class_counts[s.class_label]}"
            )
        per_class[s.class_label] = s

    names = tuple(cells)
    means = np.empty((len(names), len(labels)))
    variances = np.empty((len(names), len(labels)))
    for i, name in enumerate(names):
        for j, c in enumerate(labels):
            if c not in cells[name]:
                raise MissingCell(f"no statistics for ({name!r}, {c!r})")
            s = cells[name][c]
            means[i, j], variances[i, j] = correct_variance(s, floor * (1.0 + s.mean * s.mean))

    return GaussianNBModel(
        class_labels=labels,
        priors={c: class_counts[c] / total for c in labels},
        attribute_names=names,
        means=means,
        variances=variances,
        variance_floor=floor,
    )


def log_scores(m: GaussianNBModel, X: np.ndarray) -> np.ndarray:
    """Unnormalized log posteriors, shape ``(n_rows, n_classes)``.

    ``X`` columns follow ``m.attribute_names``. Attribute terms are added in
    model order so one row scores identically alone or in a batch.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != len(m.attribute_names):
        raise MissingAttribute(f"expected {len(m.attribute_names)} attribute columns, got {X.shape[1]}")
    scores = np.tile(np.log([m.priors[c] for c in m.class_labels]), (X.shape[0], 1))
    for i in range(len(m.attribute_names)):
        var = m.variances[i]
        diff = X[:, i : i + 1] - m.means[i]
        scores += -0.5 * (_LOG_2PI + np.log(var)) - diff * diff / (2.0 * var)
    return scores


def predict(m: GaussianNBModel, X: np.ndarray) -> list[str]:
    idx = np.argmax(log_scores(m, X), axis=1)
    return [m.class_labels[k] for k in idx]


def classify(m: GaussianNBModel, instance: Mapping[str, float]) -> tuple[str, dict[str, float]]:
    """Most probable class for one instance, plus every class's log score."""
    missing = [a for a in m.attribute_names if a not in instance]
    if missing:
        raise MissingAttribute(f"instance lacks attributes {missing}")
    row = np.array([[float(instance[a]) for a in m.attribute_names]])
    scores = log_scores(m, row)[0]
    best = int(np.argmax(scores))
    return m.class_labels[best], {c: float(scores[j]) for j, c in enumerate(m.class_labels)}


def table_matrix(t: Table, attribute_names: Sequence[str]) -> np.ndarray:
    """Columns of ``t`` rearranged into ``attribute_names`` order."""
    missing = [a for a in attribute_names if a not in t.attribute_names]
    if missing:
        raise MissingAttribute(f"table lacks attributes {missing}")
    idx = [t.attribute_names.index(a) for a in attribute_names]
    return t.values[:, idx]


def accuracy(m: GaussianNBModel, t: Table) -> float:
    """Fraction of rows of ``t`` whose predicted label equals the true label."""
    pred = predict(m, table_matrix(t, m.attribute_names))
    return sum(p == y for p, y in zip(pred, t.labels)) / t.n_rows


def fit_columns(
    columns: Sequence[PerturbedColumn], labels: Sequence[str]
) -> tuple[dict[str, int], list[ClassConditionalStats]]:
    """Class counts and statistics for a set of aligned columns."""
    counts = dict(sorted(Counter(labels).items()))
    stats = [s for col in columns for s in compute_stats(col, labels)]
    return counts, stats


def baseline_fit(table: Table, train_ids: Sequence[int], floor: float = DEFAULT_VARIANCE_FLOOR) -> GaussianNBModel:
    """Centralized plaintext model: the same estimator with zero noise."""
    train = table.select(train_ids)
    columns = [
        PerturbedColumn(name, train.values[:, j], 0.0) for j, name in enumerate(train.attribute_names)
    ]
    counts, stats = fit_columns(columns, train.labels)
    return assemble_model(stats, counts, floor)
