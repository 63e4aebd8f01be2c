"""CSV ingestion with one-hot categoricals and min-max numericals."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from tracer.data.dataset import LabeledDataset, Normalization

log = logging.getLogger(__name__)


class CsvFormatError(ValueError):
    pass


@dataclass
class ColumnEncoding:
    name: str
    kind: str  # "numeric" | "categorical"
    levels: list[str] | None = None
    lo: float = 0.0
    hi: float = 1.0

    @property
    def width(self) -> int:
        return len(self.levels) if self.kind == "categorical" else 1

    def names(self) -> list[str]:
        if self.kind == "categorical":
            return [f"{self.name}={level}" for level in self.levels]
        return [self.name]


@dataclass
class TabularEncoder:
    columns: list[ColumnEncoding]

    @property
    def feature_names(self) -> list[str]:
        return [n for c in self.columns for n in c.names()]

    def normalization(self) -> Normalization:
        scale, offset = [], []
        for c in self.columns:
            if c.kind == "numeric":
                scale.append(c.hi - c.lo if c.hi != c.lo else 1.0)
                offset.append(c.lo)
            else:
                scale.extend([1.0] * c.width)
                offset.extend([0.0] * c.width)
        return Normalization(np.array(scale), np.array(offset))

    def encode(self, rows: Sequence[Mapping[str, str]], first_line: int = 2) -> np.ndarray:
        """Encode raw string rows; unseen categories become all-zero with a warning."""
        out = np.zeros((len(rows), sum(c.width for c in self.columns)))
        for r, row in enumerate(rows):
            pos = 0
            for c in self.columns:
                cell = row[c.name].strip()
                if c.kind == "numeric":
                    try:
                        value = float(cell)
                    except ValueError:
                        raise CsvFormatError(
                            f"row {first_line + r}, column '{c.name}': cannot parse {cell!r} as a number"
                        ) from None
                    if not np.isfinite(value):
                        raise CsvFormatError(f"row {first_line + r}, column '{c.name}': non-finite value")
                    span = c.hi - c.lo if c.hi != c.lo else 1.0
                    out[r, pos] = (value - c.lo) / span
                elif cell in c.levels:
                    out[r, pos + c.levels.index(cell)] = 1.0
                else:
                    log.warning("row %d, column '%s': unseen category %r encoded as all zeros",
                                first_line + r, c.name, cell)
                pos += c.width
        return out


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_rows(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise CsvFormatError(f"{path}: missing header row")
        rows = list(reader)
    for i, row in enumerate(rows):
        if None in row or any(v is None for v in row.values()):
            raise CsvFormatError(f"row {i + 2}: wrong number of cells")
    return list(reader.fieldnames), rows


def fit_encoder(rows: Sequence[Mapping[str, str]], columns: Sequence[str],
                schema: Mapping[str, str] | None = None) -> TabularEncoder:
    schema = dict(schema or {})
    encs = []
    for name in columns:
        cells = [row[name].strip() for row in rows]
        kind = schema.get(name)
        if kind is None:
            kind = "numeric" if cells and all(_is_number(c) for c in cells) else "categorical"
        if kind == "numeric":
            values = []
            for r, cell in enumerate(cells):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise CsvFormatError(
                        f"row {r + 2}, column '{name}': cannot parse {cell!r} as a number"
                    ) from None
            encs.append(ColumnEncoding(name, "numeric", lo=min(values), hi=max(values)))
        elif kind == "categorical":
            encs.append(ColumnEncoding(name, "categorical", levels=sorted(set(cells))))
        else:
            raise ValueError(f"column '{name}': unknown schema kind {kind!r}")
    return TabularEncoder(encs)


def load_csv(path: str | Path, label_column: str,
             schema: Mapping[str, str] | None = None) -> LabeledDataset:
    header, rows = read_rows(path)
    if label_column not in header:
        raise CsvFormatError(f"{path}: label column '{label_column}' not in header {header}")
    feature_cols = [c for c in header if c != label_column]
    encoder = fit_encoder(rows, feature_cols, schema)
    class_names = sorted({row[label_column].strip() for row in rows})
    labels = np.array([class_names.index(row[label_column].strip()) for row in rows], dtype=np.int64)
    return LabeledDataset(
        features=encoder.encode(rows),
        labels=labels,
        class_count=max(len(class_names), 1),
        feature_names=encoder.feature_names,
        normalization=encoder.normalization(),
        class_names=class_names,
        encoder=encoder,
    )
