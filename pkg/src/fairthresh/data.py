"""Dataset containers, CSV ingestion and seeded stratified splitting.

CSV files must be UTF-8 with a mandatory header row and `.` as the decimal
separator.  Every column that is not named as sensitive/label is treated as a
numeric feature; missing values are rejected rather than imputed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import InitVar, dataclass

import numpy as np

from .errors import ConfigError, DataValueError, GroupCoverageError, ParseError, SchemaError


def _as_binary(values: np.ndarray, what: str) -> np.ndarray:
    out = np.asarray(values)
    bad = ~np.isin(out, (0, 1))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DataValueError(f"{what} must be 0 or 1; row {row} holds {out[bad][0]!r}")
    return out.astype(np.int64)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix with a binary sensitive attribute and binary labels."""

    features: np.ndarray  # (n, d) float64
    sensitive: np.ndarray  # (n,) values in {0, 1}
    labels: np.ndarray  # (n,) values in {0, 1}
    feature_names: tuple[str, ...] | None = None
    # draws from a sampler may legitimately miss a group at tiny n; fitting
    # functions still enforce coverage where they need it
    require_both_groups: InitVar[bool] = True

    def __post_init__(self, require_both_groups):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        s = _as_binary(self.sensitive, "sensitive")
        y = _as_binary(self.labels, "label")
        if X.shape[0] != s.shape[0] or X.shape[0] != y.shape[0]:
            raise SchemaError(
                f"row counts differ: features {X.shape[0]}, sensitive {s.shape[0]}, labels {y.shape[0]}"
            )
        if X.shape[0] < 1:
            raise SchemaError("dataset needs at least one row")
        if not np.isfinite(X).all():
            row = int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0])
            raise ParseError(f"non-finite feature value in row {row}")
        if require_both_groups:
            for g in (0, 1):
                if not (s == g).any():
                    raise GroupCoverageError(f"sensitive group {g} has no rows")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "sensitive", s)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.features[idx],
            self.sensitive[idx],
            self.labels[idx],
            self.feature_names,
            require_both_groups=False,
        )

    def group_counts(self) -> tuple[int, int]:
        return int((self.sensitive == 0).sum()), int((self.sensitive == 1).sum())


@dataclass(frozen=True, eq=False)
class UnlabeledDataset:
    """Feature matrix for calibration; sensitive column optional (blind mode)."""

    features: np.ndarray
    sensitive: np.ndarray | None = None
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] < 1:
            raise SchemaError("dataset needs at least one row")
        if not np.isfinite(X).all():
            row = int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0])
            raise ParseError(f"non-finite feature value in row {row}")
        object.__setattr__(self, "features", X)
        if self.sensitive is not None:
            s = _as_binary(self.sensitive, "sensitive")
            if s.shape[0] != X.shape[0]:
                raise SchemaError(
                    f"row counts differ: features {X.shape[0]}, sensitive {s.shape[0]}"
                )
            # mirrors the two-per-group minimum the estimators rely on
            for g in (0, 1):
                if int((s == g).sum()) < 2:
                    raise GroupCoverageError(
                        f"unlabeled sample needs at least 2 rows in sensitive group {g}"
                    )
            object.__setattr__(self, "sensitive", s)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def load_csv(path, sensitive_col: str, label_col: str | None = None):
    """Read a CSV file into a LabeledDataset (or UnlabeledDataset if label_col is None).

    Raises SchemaError when a named column is missing, DataValueError when a
    sensitive/label cell is not 0/1, and ParseError (with the offending row
    index) when a feature cell is not a finite real.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        rows = list(reader)

    header = [h.strip() for h in header]
    if sensitive_col not in header:
        raise SchemaError(f"{path}: missing sensitive column {sensitive_col!r}")
    if label_col is not None and label_col not in header:
        raise SchemaError(f"{path}: missing label column {label_col!r}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")

    s_idx = header.index(sensitive_col)
    y_idx = header.index(label_col) if label_col is not None else None
    feat_idx = [i for i in range(len(header)) if i != s_idx and i != y_idx]
    feat_names = tuple(header[i] for i in feat_idx)

    X = np.empty((len(rows), len(feat_idx)), dtype=np.float64)
    s = np.empty(len(rows), dtype=np.float64)
    y = np.empty(len(rows), dtype=np.float64) if y_idx is not None else None
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        for c, i in enumerate(feat_idx):
            try:
                v = float(row[i])
            except ValueError:
                raise ParseError(f"{path}: row {r}, column {header[i]!r}: cannot parse {row[i]!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: row {r}, column {header[i]!r}: non-finite value {row[i]!r}")
            X[r, c] = v
        try:
            s[r] = float(row[s_idx])
        except ValueError:
            raise DataValueError(f"{path}: row {r}: sensitive value {row[s_idx]!r} is not 0 or 1") from None
        if s[r] not in (0.0, 1.0):
            raise DataValueError(f"{path}: row {r}: sensitive value {row[s_idx]!r} is not 0 or 1")
        if y is not None:
            try:
                y[r] = float(row[y_idx])
            except ValueError:
                raise DataValueError(f"{path}: row {r}: label value {row[y_idx]!r} is not 0 or 1") from None
            if y[r] not in (0.0, 1.0):
                raise DataValueError(f"{path}: row {r}: label value {row[y_idx]!r} is not 0 or 1")

    if y is None:
        return UnlabeledDataset(X, s.astype(np.int64), feat_names)
    return LabeledDataset(X, s.astype(np.int64), y.astype(np.int64), feat_names)


def write_csv(path, ds, sensitive_col: str = "S", label_col: str = "Y") -> None:
    """Write a dataset back to CSV; float cells use shortest round-trip repr."""
    names = ds.feature_names or tuple(f"x{i + 1}" for i in range(ds.d))
    labeled = isinstance(ds, LabeledDataset)
    has_sensitive = ds.sensitive is not None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = list(names) + ([sensitive_col] if has_sensitive else []) + ([label_col] if labeled else [])
        writer.writerow(header)
        for r in range(ds.n):
            row = [repr(float(v)) for v in ds.features[r]]
            if has_sensitive:
                row.append(str(int(ds.sensitive[r])))
            if labeled:
                row.append(str(int(ds.labels[r])))
            writer.writerow(row)


@dataclass(frozen=True)
class SplitPlan:
    """Deterministic repeated train/test split specification."""

    train_fraction: float
    n_repeats: int
    seed: int

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.n_repeats < 1:
            raise ConfigError(f"n_repeats must be positive, got {self.n_repeats}")


@dataclass(frozen=True, eq=False)
class SplitResult:
    train: LabeledDataset
    test: LabeledDataset
    train_indices: np.ndarray
    test_indices: np.ndarray
    stratified_by_sensitive_only: bool = False

    def manifest_entry(self) -> dict:
        return {
            "train_indices": [int(i) for i in self.train_indices],
            "test_indices": [int(i) for i in self.test_indices],
            "stratified_by_sensitive_only": self.stratified_by_sensitive_only,
        }


def split_manifest(results) -> list[dict]:
    """JSON-serializable audit record of a sequence of splits."""
    return [r.manifest_entry() for r in results]


def _apportion(cell_sizes: list[int], total_take: int) -> list[int]:
    # largest-remainder rounding so the takes sum exactly to total_take
    n = sum(cell_sizes)
    quotas = [total_take * c / n for c in cell_sizes]
    takes = [int(math.floor(q)) for q in quotas]
    rem = total_take - sum(takes)
    order = sorted(range(len(cell_sizes)), key=lambda i: (takes[i] - quotas[i], i))
    for i in order[:rem]:
        takes[i] += 1
    for i, c in enumerate(cell_sizes):
        takes[i] = min(takes[i], c)
    # floor+remainder cannot overshoot, but guard the sum anyway
    deficit = total_take - sum(takes)
    for i in order:
        if deficit == 0:
            break
        room = cell_sizes[i] - takes[i]
        add = min(room, deficit)
        takes[i] += add
        deficit -= add
    return takes


def split(ds: LabeledDataset, plan: SplitPlan) -> list[SplitResult]:
    """Repeated stratified train/test splits, reproducible from the plan seed.

    Rows are stratified by (sensitive, label) cell; when any cell of a present
    group has fewer than two rows the repeat falls back to stratifying by the
    sensitive attribute alone and flags the result.  |train| is always
    round(train_fraction * n) and every train part keeps both groups.
    """
    s, y = ds.sensitive, ds.labels
    cells_sy = [np.flatnonzero((s == g) & (y == v)) for g in (0, 1) for v in (0, 1)]
    degenerate = any(
        0 < (s == g).sum() and len(cells_sy[2 * g + v]) < 2 for g in (0, 1) for v in (0, 1)
    )
    cells = (
        [np.flatnonzero(s == g) for g in (0, 1)]
        if degenerate
        else [c for c in cells_sy if len(c)]
    )
    target = int(round(plan.train_fraction * ds.n))
    if target < 1 or target >= ds.n:
        raise ConfigError(
            f"train_fraction {plan.train_fraction} leaves train or test empty for n={ds.n}"
        )

    results = []
    for rep in range(plan.n_repeats):
        rng = np.random.default_rng([plan.seed, rep])
        shuffled = [c[rng.permutation(len(c))] for c in cells]
        takes = _apportion([len(c) for c in shuffled], target)
        train_idx = np.concatenate([c[:t] for c, t in zip(shuffled, takes)])
        test_idx = np.concatenate([c[t:] for c, t in zip(shuffled, takes)])
        # guarantee each group appears in the train part
        for g in (0, 1):
            if not (s[train_idx] == g).any():
                move = test_idx[np.flatnonzero(s[test_idx] == g)[0]]
                donor_group = 1 - g
                donor_pos = np.flatnonzero(s[train_idx] == donor_group)
                # keep |train| fixed: swap one row of the other group out
                out = train_idx[donor_pos[-1]]
                train_idx = np.append(np.delete(train_idx, donor_pos[-1]), move)
                test_idx = np.append(test_idx[test_idx != move], out)
        train_idx = np.sort(train_idx)
        test_idx = np.sort(test_idx)
        results.append(
            SplitResult(
                train=ds.take(train_idx),
                test=ds.take(test_idx),
                train_indices=train_idx,
                test_indices=test_idx,
                stratified_by_sensitive_only=degenerate,
            )
        )
    return results
