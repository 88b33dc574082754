"""Tabular ingestion (one-hot + min-max scaling), train/test splits, grid files.

Schema files are plain ``key = value`` text, one column per line::

    # name = kind
    duration = continuous
    protocol = categorical(tcp, udp, icmp)

Categorical levels are listed explicitly so that unseen values are caught.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # "continuous" or "categorical"
    levels: tuple[str, ...] = ()

    @property
    def width(self) -> int:
        return len(self.levels) if self.kind == "categorical" else 1

    def feature_names(self) -> list[str]:
        if self.kind == "categorical":
            return [f"{self.name}={lvl}" for lvl in self.levels]
        return [self.name]


_CAT = re.compile(r"categorical\s*\((.*)\)\s*$")


def parse_schema(text: str) -> list[Column]:
    cols = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, kind = (s.strip() for s in line.partition("="))
        if not sep or not name:
            raise DataFormatError(f"schema line {lineno}: expected 'name = kind'")
        if kind == "continuous":
            cols.append(Column(name, "continuous"))
        elif m := _CAT.match(kind):
            levels = tuple(v.strip() for v in m.group(1).split(",") if v.strip())
            if len(set(levels)) != len(levels) or not levels:
                raise DataFormatError(f"schema line {lineno}: bad level list for {name!r}")
            cols.append(Column(name, "categorical", levels))
        else:
            raise DataFormatError(f"schema line {lineno}: unknown kind {kind!r}")
    return cols


def read_schema(path: str | Path) -> list[Column]:
    return parse_schema(Path(path).read_text())


def format_schema(columns: list[Column]) -> str:
    lines = []
    for c in columns:
        kind = f"categorical({', '.join(c.levels)})" if c.kind == "categorical" else c.kind
        lines.append(f"{c.name} = {kind}")
    return "\n".join(lines) + "\n"


@dataclass
class MinMaxScaler:
    """Per-feature ``(x - lo) / (hi - lo)``; constant features map to 0."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, mask: np.ndarray | None = None) -> MinMaxScaler:
        lo, hi = x.min(axis=0), x.max(axis=0)
        if mask is not None:
            # one-hot columns are left untouched
            lo = np.where(mask, lo, 0.0)
            hi = np.where(mask, hi, 1.0)
        return cls(lo, hi)

    @property
    def span(self) -> np.ndarray:
        span = self.hi - self.lo
        return np.where(span > 0, span, 1.0)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.lo) / self.span

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * self.span + self.lo


@dataclass
class TabularDataset:
    """Encoded features (one-hot expanded, unscaled) plus a fitted scaler."""

    raw: np.ndarray
    labels: np.ndarray
    columns: list[Column]
    scaler: MinMaxScaler = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.raw.ndim != 2 or self.raw.shape[0] != self.labels.size:
            raise ValueError("feature rows and labels disagree")
        if self.raw.shape[1] != sum(c.width for c in self.columns):
            raise ValueError("feature width does not match the schema")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be binary")
        if self.scaler is None and len(self):
            self.scaler = MinMaxScaler.fit(self.raw, self.continuous_mask)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def continuous_mask(self) -> np.ndarray:
        return np.concatenate(
            [np.full(c.width, c.kind == "continuous") for c in self.columns]
        )

    @property
    def features(self) -> np.ndarray:
        """Scaled feature matrix."""
        return self.scaler.transform(self.raw)

    @property
    def feature_names(self) -> list[str]:
        return [n for c in self.columns for n in c.feature_names()]

    def subset(self, idx: np.ndarray, scaler: MinMaxScaler | None = None) -> TabularDataset:
        return replace(self, raw=self.raw[idx], labels=self.labels[idx], scaler=scaler)


def _parse_label(value: str, normal_values: set[str] | None, where: str) -> int:
    if normal_values is not None:
        return 0 if value in normal_values else 1
    if value in ("0", "1"):
        return int(value)
    raise DataFormatError(f"{where}: label {value!r} is not 0/1")


def load_csv(
    path: str | Path,
    schema: list[Column] | str | Path,
    label_column: str = "label",
    normal_values: set[str] | None = None,
) -> TabularDataset:
    """Parse a headed CSV, one-hot encode categoricals, fit min-max scaling.

    Without ``normal_values`` the label column must hold 0/1; with it, those
    values mean normal and everything else anomalous.
    """
    if not isinstance(schema, list):
        schema = read_schema(schema)
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        missing = [c.name for c in schema if c.name not in header]
        if missing or label_column not in header:
            raise DataFormatError(
                f"{path}: header lacks columns {missing + ([label_column] if label_column not in header else [])}"
            )
        pos = {name: i for i, name in enumerate(header)}
        rows, labels = [], []
        for lineno, rec in enumerate(reader, 2):
            if not rec or all(not f.strip() for f in rec):
                continue
            where = f"{path}:{lineno}"
            if len(rec) != len(header):
                raise DataFormatError(f"{where}: expected {len(header)} fields, got {len(rec)}")
            feats: list[float] = []
            for col in schema:
                cell = rec[pos[col.name]].strip()
                if cell == "":
                    raise DataFormatError(f"{where}: missing value in column {col.name!r}")
                if col.kind == "continuous":
                    try:
                        feats.append(float(cell))
                    except ValueError:
                        raise DataFormatError(
                            f"{where}: column {col.name!r} value {cell!r} is not numeric"
                        ) from None
                else:
                    if cell not in col.levels:
                        raise DataFormatError(
                            f"{where}: unknown category {cell!r} in column {col.name!r}"
                        )
                    onehot = [0.0] * col.width
                    onehot[col.levels.index(cell)] = 1.0
                    feats.extend(onehot)
            rows.append(feats)
            labels.append(_parse_label(rec[pos[label_column]].strip(), normal_values, where))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return TabularDataset(np.array(rows), np.array(labels), list(schema))


def split(
    dataset: TabularDataset, train_fraction: float = 0.8, seed: int = 0
) -> tuple[TabularDataset, TabularDataset]:
    """Random train/test partition; training keeps normal rows only.

    The test split holds ``N - round(fraction * N)`` rows of both classes.
    Scaling is refit on the (normal-only) training rows and shared with test.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    train_idx, test_idx = perm[:n_train], perm[n_train:]
    train_idx = train_idx[dataset.labels[train_idx] == 0]
    if train_idx.size == 0 or test_idx.size == 0:
        raise ValueError("split leaves an empty partition")
    train_idx, test_idx = np.sort(train_idx), np.sort(test_idx)
    scaler = MinMaxScaler.fit(dataset.raw[train_idx], dataset.continuous_mask)
    return dataset.subset(train_idx, scaler), dataset.subset(test_idx, scaler)


def write_dataset_csv(path: str | Path, x: np.ndarray, labels: np.ndarray,
                      names: list[str] | None = None) -> None:
    """Numeric matrix plus a 0/1 ``label`` column."""
    x = np.asarray(x, dtype=np.float64)
    names = names or [f"x{i}" for i in range(x.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((*names, "label"))
        for row, lab in zip(x, labels):
            w.writerow((*(repr(float(v)) for v in row), int(lab)))


def read_dataset_csv(path: str | Path, label_column: str = "label") -> tuple[np.ndarray, np.ndarray]:
    """Read an all-numeric CSV as ``(features, labels)``; labels default to 0."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    try:
        arr = np.array(rows, dtype=np.float64)
    except ValueError as err:
        raise DataFormatError(f"{path}: non-numeric value ({err})") from None
    if label_column in header:
        j = header.index(label_column)
        return np.delete(arr, j, axis=1), arr[:, j].astype(np.int64)
    return arr, np.zeros(arr.shape[0], dtype=np.int64)


def make_tabular_fixture(n: int = 200, anomaly_fraction: float = 0.15, seed: int = 7):
    """Small mixed-type table: two continuous columns, two categoricals, a label.

    Normal rows cluster tightly; anomalies are spread out and favour rare levels.
    Returns ``(header, rows, schema)``.
    """
    rng = np.random.default_rng(seed)
    schema = [
        Column("duration", "continuous"),
        Column("bytes", "continuous"),
        Column("protocol", "categorical", ("tcp", "udp", "icmp")),
        Column("flag", "categorical", ("SF", "REJ")),
    ]
    n_anom = int(round(anomaly_fraction * n))
    labels = np.r_[np.zeros(n - n_anom, dtype=int), np.ones(n_anom, dtype=int)]
    rng.shuffle(labels)
    rows = []
    for lab in labels:
        if lab == 0:
            dur = rng.normal(10.0, 1.0)
            byt = rng.normal(500.0, 50.0)
            proto = rng.choice(["tcp", "udp"], p=[0.8, 0.2])
            flag = "SF"
        else:
            dur = rng.uniform(0.0, 60.0)
            byt = rng.uniform(0.0, 5000.0)
            proto = rng.choice(["tcp", "udp", "icmp"], p=[0.2, 0.2, 0.6])
            flag = rng.choice(["SF", "REJ"])
        rows.append([f"{dur:.4f}", f"{byt:.2f}", str(proto), str(flag), str(lab)])
    header = [c.name for c in schema] + ["label"]
    return header, rows, schema


# -- grids -------------------------------------------------------------------


def write_grid_csv(path: str | Path, grid: np.ndarray) -> None:
    """Row-major cell values, one grid row per line."""
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in grid:
            w.writerow([repr(float(v)) for v in row])


def read_grid_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh) if row])


def write_pgm(path: str | Path, grid: np.ndarray, vmax: float | None = None) -> None:
    """Plain (P2) graymap; brightest pixel is ``vmax`` (defaults to the grid max).

    Row 0 of the grid is the lowest y, so rows are flipped to put +y at the top.
    """
    grid = np.asarray(grid, dtype=np.float64)
    top = float(grid.max()) if vmax is None else vmax
    scaled = np.zeros_like(grid) if top <= 0 else np.clip(grid / top, 0.0, 1.0)
    pix = np.rint(scaled[::-1] * 255).astype(int)
    lines = ["P2", f"{grid.shape[1]} {grid.shape[0]}", "255"]
    lines += [" ".join(map(str, row)) for row in pix]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path: str | Path) -> np.ndarray:
    tokens = Path(path).read_text().split()
    if tokens[0] != "P2":
        raise DataFormatError(f"{path}: not a plain PGM")
    w, h, _ = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array(tokens[4:], dtype=int).reshape(h, w)
