"""Data model, CSV ingestion, and the deterministic RNG contract.

Arm labels from input files are relabeled to contiguous integers 1..k
(sorted by original label); the original labels are kept on the Dataset
for reporting. Binary data may arrive as {1, -1} or {1, 2}; internally
arms are always {1..k} and sign conventions are applied where needed by
the estimators.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParseError, SchemaError, ValidationError


@dataclass(frozen=True)
class RngSpec:
    """Deterministic random-stream identifier.

    Identical (seed, stream) pairs produce bit-identical draw sequences
    regardless of process or thread layout.
    """

    seed: int = 0
    stream: int = 0

    def generator(self, *subkeys: int) -> np.random.Generator:
        return np.random.default_rng((self.seed, self.stream, *subkeys))

    def child(self, stream: int) -> "RngSpec":
        return RngSpec(self.seed, stream)


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for load_csv: one outcome, one treatment, >=1 covariates."""

    outcome: str
    treatment: str
    covariates: tuple[str, ...]

    def __post_init__(self):
        if not self.covariates:
            raise SchemaError("schema needs at least one covariate column")
        names = [self.outcome, self.treatment, *self.covariates]
        if len(set(names)) != len(names):
            raise SchemaError("schema columns must be distinct: %r" % (names,))


@dataclass(frozen=True)
class Dataset:
    """Observed triplets (covariates, arm, outcome) with arms in {1..k}."""

    x: np.ndarray          # (n, p) float
    a: np.ndarray          # (n,) int, values in {1..k}
    y: np.ndarray          # (n,) float
    k: int
    arm_labels: tuple = ()      # original labels, index j-1 -> label of arm j
    single_arm_warning: bool = False

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        a = np.asarray(self.a, dtype=int)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
            raise ValidationError("x must be a non-empty n x p matrix")
        n = x.shape[0]
        if a.shape != (n,) or y.shape != (n,):
            raise ValidationError("a and y must be length-n vectors")
        if not np.all(np.isfinite(x)):
            raise ValidationError("non-finite entries in covariates")
        if not np.all(np.isfinite(y)):
            raise ValidationError("non-finite entries in outcomes")
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if np.any(a < 1) or np.any(a > self.k):
            raise ValidationError("arm labels must lie in {1..%d}" % self.k)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        x.setflags(write=False)
        a.setflags(write=False)
        y.setflags(write=False)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def arm_counts(self) -> np.ndarray:
        return np.bincount(self.a, minlength=self.k + 1)[1:]

    def require_all_arms(self, min_count: int = 1) -> None:
        counts = self.arm_counts()
        if np.any(counts < min_count):
            missing = [j + 1 for j in range(self.k) if counts[j] < min_count]
            raise DomainError(
                "arms %s have fewer than %d observations" % (missing, min_count)
            )


def augment(x: np.ndarray) -> np.ndarray:
    """Prepend a column of ones: (n, p) -> (n, p+1)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if not np.all(np.isfinite(x)):
        raise ValidationError("non-finite entries in design input")
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _parse_cell(text: str, row: int, col_name: str, col_index: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(
            "non-numeric value %r in column %r (row %d)" % (text, col_name, row),
            row=row,
            column=col_index,
        ) from None
    if not np.isfinite(value):
        raise ParseError(
            "non-finite value %r in column %r (row %d)" % (text, col_name, row),
            row=row,
            column=col_index,
        )
    return value


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read an RFC-4180 CSV with header into a Dataset.

    Treatment labels are relabeled to {1..k} in sorted order of the
    original labels; the mapping is retained on Dataset.arm_labels.
    """
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file: %s" % path) from None
        rows = [row for row in reader if row]

    if not rows:
        raise ValidationError("no data rows in %s" % path)

    index = {name: i for i, name in enumerate(header)}
    for name in (schema.outcome, schema.treatment, *schema.covariates):
        if name not in index:
            raise SchemaError("column %r not found in header %r" % (name, header))

    y = np.empty(len(rows))
    x = np.empty((len(rows), len(schema.covariates)))
    raw_arms = []
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError("row %d has %d fields, header has %d"
                             % (r, len(row), len(header)), row=r)
        y[r] = _parse_cell(row[index[schema.outcome]], r,
                           schema.outcome, index[schema.outcome])
        raw_arms.append(row[index[schema.treatment]].strip())
        for c, name in enumerate(schema.covariates):
            x[r, c] = _parse_cell(row[index[name]], r, name, index[name])

    labels = _order_labels(set(raw_arms))
    mapping = {label: j + 1 for j, label in enumerate(labels)}
    a = np.array([mapping[label] for label in raw_arms], dtype=int)
    return Dataset(
        x=x,
        a=a,
        y=y,
        k=len(labels),
        arm_labels=tuple(labels),
        single_arm_warning=len(labels) == 1,
    )


def _order_labels(raw: set[str]) -> list[str]:
    # Numeric labels sort ascending; the binary sign convention {+1, -1}
    # is special-cased so that +1 becomes arm 1 and -1 becomes arm 2.
    def key(label):
        try:
            return (0, float(label), label)
        except ValueError:
            return (1, 0.0, label)

    labels = sorted(raw, key=key)
    values = set()
    for label in labels:
        try:
            values.add(float(label))
        except ValueError:
            return labels
    if values == {1.0, -1.0}:
        labels.sort(key=lambda s: -float(s))
    return labels


def write_csv(path, data: Dataset, schema: CsvSchema | None = None) -> None:
    """Inverse of load_csv; numeric cells use shortest round-trip repr."""
    if schema is None:
        schema = CsvSchema(
            outcome="y",
            treatment="a",
            covariates=tuple("x%d" % (i + 1) for i in range(data.p)),
        )
    if len(schema.covariates) != data.p:
        raise SchemaError("schema lists %d covariates, data has %d"
                          % (len(schema.covariates), data.p))
    labels = data.arm_labels or tuple(str(j + 1) for j in range(data.k))
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([schema.outcome, schema.treatment, *schema.covariates])
        for i in range(data.n):
            writer.writerow(
                [repr(float(data.y[i])), labels[data.a[i] - 1]]
                + [repr(float(v)) for v in data.x[i]]
            )
