"""Tabular acquisition results and their csv/json persistence."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from qcal.errors import FormatError

DTYPES = ("int", "float", "str")


def _dtype_of(values: np.ndarray) -> str:
    if values.dtype.kind in "iub":
        return "int"
    if values.dtype.kind == "f":
        return "float"
    return "str"


def _as_column(values, dtype: str | None = None) -> np.ndarray:
    arr = np.asarray(values)
    if dtype is None:
        dtype = _dtype_of(arr)
    if dtype == "int":
        return arr.astype(np.int64)
    if dtype == "float":
        return arr.astype(np.float64)
    return arr.astype(object).astype(str).astype(object)


@dataclass
class DataSet:
    """Columns of equal length, tagged by protocol and qubit.

    ``partial`` is set when the backing file ended in an incomplete row, which
    happens when reading a file that is still being written.
    """

    protocol: str
    qubit: int
    columns: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    partial: bool = False

    def __post_init__(self):
        self.columns = {k: _as_column(v) for k, v in self.columns.items()}
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError(f"columns have unequal lengths {sorted(lengths)}")

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def dtypes(self) -> dict[str, str]:
        return {k: _dtype_of(v) for k, v in self.columns.items()}

    def rows(self) -> Iterable[tuple]:
        cols = list(self.columns.values())
        for i in range(len(self)):
            yield tuple(c[i] for c in cols)

    def select(self, mask) -> "DataSet":
        return DataSet(self.protocol, self.qubit, {k: v[mask] for k, v in self.columns.items()},
                       dict(self.meta), self.partial)

    def head(self, n: int) -> "DataSet":
        return self.select(slice(0, n))

    def equals(self, other: "DataSet") -> bool:
        if (self.protocol, self.qubit, self.meta) != (other.protocol, other.qubit, other.meta):
            return False
        if list(self.columns) != list(other.columns) or self.dtypes != other.dtypes:
            return False
        for k, v in self.columns.items():
            w = other.columns[k]
            if v.dtype.kind == "f":
                if v.tobytes() != w.tobytes():
                    return False
            elif not np.array_equal(v, w):
                return False
        return True


def concat(datasets: list[DataSet]) -> DataSet:
    first = datasets[0]
    cols = {k: np.concatenate([d.columns[k] for d in datasets]) for k in first.columns}
    return DataSet(first.protocol, first.qubit, cols, dict(first.meta))


def format_value(v, dtype: str) -> str:
    if dtype == "float":
        return repr(float(v))
    if dtype == "int":
        return str(int(v))
    return str(v)


def _parse_value(text: str, dtype: str):
    if dtype == "float":
        return float(text)
    if dtype == "int":
        return int(text)
    return text


def header_meta(ds: DataSet) -> dict:
    return {"protocol": ds.protocol, "qubit": ds.qubit, "columns": list(ds.columns),
            "dtypes": ds.dtypes, "meta": ds.meta}


def csv_line(values: Iterable[str]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\r\n").writerow(list(values))
    return buf.getvalue()


def meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def write_dataset(ds: DataSet, fmt: str, path) -> None:
    """Write ``ds`` as csv (plus a ``.meta.json`` sidecar) or as one json file."""
    path = Path(path)
    if fmt == "csv":
        write_text_atomic(meta_path(path), json.dumps(header_meta(ds), indent=2, sort_keys=True))
        dtypes = ds.dtypes
        lines = [csv_line(ds.columns)]
        lines += [csv_line(format_value(v, dtypes[k]) for k, v in zip(ds.columns, row)) for row in ds.rows()]
        write_text_atomic(path, "".join(lines))
    elif fmt == "json":
        dtypes = ds.dtypes
        doc = {
            "protocol": ds.protocol,
            "qubit": ds.qubit,
            "dtypes": dtypes,
            "meta": ds.meta,
            "order": list(dtypes),
            "columns": {k: [_json_value(x, dtypes[k]) for x in v] for k, v in ds.columns.items()},
        }
        write_text_atomic(path, json.dumps(doc, indent=1))
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")


def _json_value(x, dtype):
    if dtype == "float":
        return float(x)
    if dtype == "int":
        return int(x)
    return str(x)


def read_dataset(path) -> DataSet:
    path = Path(path)
    if path.suffix == ".json":
        try:
            doc = json.loads(path.read_text())
            cols = {k: _as_column(doc["columns"][k], doc["dtypes"][k]) for k in doc["order"]}
            return DataSet(doc["protocol"], doc["qubit"], cols, doc.get("meta", {}))
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}: {exc}") from exc
    try:
        header = json.loads(meta_path(path).read_text())
    except (OSError, ValueError) as exc:
        raise FormatError(f"{meta_path(path)}: {exc}") from exc
    try:
        dtypes = {k: header["dtypes"][k] for k in header["columns"]}
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{meta_path(path)}: {exc}") from exc
    if not set(dtypes.values()) <= set(DTYPES):
        raise FormatError(f"{meta_path(path)}: unknown column type")
    with open(path, newline="") as fh:
        text = fh.read()
    partial = bool(text) and not text.endswith("\n")
    if partial:
        text = text[: text.rfind("\n") + 1]
    try:
        records = list(csv.reader(io.StringIO(text, newline=""), strict=True))
    except csv.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not records:
        if dtypes:
            partial = True  # header not yet flushed
        cols = {k: _as_column([], t) for k, t in dtypes.items()}
        return DataSet(header["protocol"], header["qubit"], cols, header.get("meta", {}), partial)
    names = records[0]
    if names != list(dtypes):
        raise FormatError(f"{path}: header {names} does not match {list(dtypes)}")
    values = {k: [] for k in names}
    for lineno, rec in enumerate(records[1:], start=2):
        if len(rec) != len(names):
            raise FormatError(f"{path}:{lineno}: expected {len(names)} fields, got {len(rec)}")
        try:
            for k, v in zip(names, rec):
                values[k].append(_parse_value(v, dtypes[k]))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    cols = {k: _as_column(values[k], dtypes[k]) for k in names}
    return DataSet(header["protocol"], header["qubit"], cols, header.get("meta", {}), partial)


def write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class CsvAppender:
    """Append-only csv writer that flushes after every row.

    A concurrent reader always sees a prefix of the final file.
    """

    def __init__(self, path, protocol: str, qubit: int, meta: Mapping):
        self.path = Path(path)
        self.protocol = protocol
        self.qubit = qubit
        self.meta = dict(meta)
        self.dtypes: dict[str, str] | None = None
        self._fh = None

    def append(self, ds: DataSet, on_row=None) -> None:
        if self.dtypes is None:
            self.dtypes = ds.dtypes
            header = {"protocol": self.protocol, "qubit": self.qubit, "columns": list(self.dtypes),
                      "dtypes": self.dtypes, "meta": self.meta}
            write_text_atomic(meta_path(self.path), json.dumps(header, indent=2, sort_keys=True))
            self._fh = open(self.path, "w", newline="")
            self._write(csv_line(self.dtypes))
        for row in ds.rows():
            self._write(csv_line(format_value(v, self.dtypes[k]) for k, v in zip(self.dtypes, row)))
            if on_row is not None:
                on_row()

    def _write(self, line: str) -> None:
        self._fh.write(line)
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
