"""
EnsembleTable: per-cell sample statistics exchanged between the simulation commands
and the fits. Files are CSV with '# key: value' metadata lines on top.
"""
import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.config import VALUE_KINDS
from core.errors import SchemaError

SCHEMA_VERSION = 1
BASE_COLUMNS = ["family", "N", "p", "L", "R", "mean", "std", "stderr"]
LN2 = math.log(2.0)

CellKey = Tuple


def key_columns(kind: str):
    return ["N", "p", "r"] if kind == "mutual_info" else ["N", "p"]


def table_columns(kind: str):
    cols = list(BASE_COLUMNS)
    if kind == "mutual_info":
        cols.insert(3, "r")
    return cols


def _cell_key(kind: str, row) -> CellKey:
    if kind == "mutual_info":
        return int(row["N"]), float(row["p"]), int(row["r"])
    return int(row["N"]), float(row["p"])


@dataclass
class EnsembleTable:
    kind: str
    rows: pd.DataFrame
    metadata: Dict[str, str] = field(default_factory=dict)
    # cell key -> per-realization values
    raw: Optional[Dict[CellKey, np.ndarray]] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in VALUE_KINDS:
            raise SchemaError(f"Unknown value kind '{self.kind}'")
        missing = [c for c in table_columns(self.kind) if c not in self.rows.columns]
        if missing:
            raise SchemaError(f"Table is missing columns {missing}")
        if self.rows.empty:
            raise SchemaError("Table has no rows")
        if (self.rows["R"] < 2).any():
            raise SchemaError("Every cell needs R >= 2 samples")
        if (self.rows["std"] < 0).any() or (self.rows["stderr"] < 0).any():
            raise SchemaError("Negative standard deviation in table")
        if self.rows.duplicated(subset=key_columns(self.kind)).any():
            raise SchemaError(f"Duplicate {key_columns(self.kind)} cells in table")

    @classmethod
    def from_samples(cls, kind: str, family: str, depth: int, samples: Dict[CellKey, Sequence[float]],
                     metadata: Optional[dict] = None, keep_raw: bool = True) -> "EnsembleTable":
        records = []
        for key in sorted(samples):
            values = np.asarray(samples[key], dtype=float)
            std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
            record = {
                "family": family,
                "N": int(key[0]),
                "p": float(key[1]),
                "L": int(depth),
                "R": int(values.size),
                "mean": float(np.mean(values)),
                "std": std,
                "stderr": std / math.sqrt(values.size),
            }
            if kind == "mutual_info":
                record["r"] = int(key[2])
            records.append(record)
        rows = pd.DataFrame.from_records(records, columns=table_columns(kind))
        raw = {k: np.asarray(v, dtype=float) for k, v in samples.items()} if keep_raw else None
        return cls(kind, rows, dict(metadata or {}), raw)

    @property
    def sizes(self):
        return sorted(int(n) for n in self.rows["N"].unique())

    @property
    def p_values(self):
        return sorted(float(p) for p in self.rows["p"].unique())

    @property
    def family(self) -> str:
        return str(self.rows["family"].iloc[0])

    def cell_keys(self):
        return [_cell_key(self.kind, row) for _, row in self.rows.iterrows()]

    def select_sizes(self, sizes) -> "EnsembleTable":
        sizes = set(int(n) for n in sizes)
        rows = self.rows[self.rows["N"].isin(sizes)].reset_index(drop=True)
        raw = None if self.raw is None else {k: v for k, v in self.raw.items() if k[0] in sizes}
        return EnsembleTable(self.kind, rows, dict(self.metadata), raw)

    def with_samples(self, samples: Dict[CellKey, np.ndarray]) -> "EnsembleTable":
        """Same cells, statistics recomputed from replacement realizations."""
        rebuilt = EnsembleTable.from_samples(
            self.kind, self.family, int(self.rows["L"].iloc[0]), samples, self.metadata, keep_raw=True
        )
        return rebuilt

    def in_units(self, base: str) -> "EnsembleTable":
        """Entropy-valued tables are in nats; base '2' converts to bits."""
        if base == "e" or self.kind == "grad_variance":
            return self
        rows = self.rows.copy()
        for col in ("mean", "std", "stderr"):
            rows[col] = rows[col] / LN2
        raw = None if self.raw is None else {k: v / LN2 for k, v in self.raw.items()}
        metadata = dict(self.metadata, units="bits")
        return replace(self, rows=rows, metadata=metadata, raw=raw)


def companion_path(path: str, suffix: str) -> str:
    stem, ext = os.path.splitext(path)
    return f"{stem}_{suffix}{ext or '.csv'}"


def raw_path(path: str) -> str:
    return companion_path(path, "raw")


def _header(metadata: dict) -> str:
    return "".join(f"# {k}: {metadata[k]}\n" for k in sorted(metadata))


def write_table(table: EnsembleTable, path: str, write_raw: bool = False):
    metadata = dict(table.metadata, schema_version=SCHEMA_VERSION, kind=table.kind)
    metadata.setdefault("units", "variance" if table.kind == "grad_variance" else "nats")
    body = table.rows[table_columns(table.kind)].to_csv(index=False, lineterminator="\n")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(_header(metadata))
        f.write(body)
    if write_raw and table.raw is not None:
        key_cols = key_columns(table.kind)
        records = []
        for key in sorted(table.raw):
            for i, value in enumerate(table.raw[key]):
                records.append(dict(zip(key_cols, key), sample=i, value=float(value)))
        raw_df = pd.DataFrame.from_records(records, columns=key_cols + ["sample", "value"])
        with open(raw_path(path), "w", encoding="utf-8", newline="") as f:
            f.write(_header({"schema_version": SCHEMA_VERSION, "kind": table.kind}))
            f.write(raw_df.to_csv(index=False, lineterminator="\n"))


def write_frame(frame: pd.DataFrame, path: str, metadata: Optional[dict] = None):
    """Plain CSV with the same '# key: value' header as the ensemble tables."""
    metadata = dict(metadata or {}, schema_version=SCHEMA_VERSION)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(_header(metadata))
        f.write(frame.to_csv(index=False, lineterminator="\n"))


def read_frame(path: str) -> Tuple[pd.DataFrame, dict]:
    metadata, body = _split_header(path)
    _check_version(metadata, path)
    return pd.read_csv(io.StringIO(body)), metadata


def _split_header(path: str):
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise SchemaError(f"Cannot read table {path}: {e}") from e
    metadata, body = {}, []
    for line in text.splitlines(keepends=True):
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            metadata[key.strip()] = value.strip()
        else:
            body.append(line)
    return metadata, "".join(body)


def _check_version(metadata: dict, path: str):
    version = metadata.get("schema_version")
    if version is None:
        raise SchemaError(f"{path} declares no schema_version")
    if version != str(SCHEMA_VERSION):
        raise SchemaError(f"{path} has unknown schema_version {version}")


def read_table(path: str, expected_kind: Optional[str] = None, with_raw: bool = True) -> EnsembleTable:
    metadata, body = _split_header(path)
    _check_version(metadata, path)
    kind = metadata.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise SchemaError(f"{path} holds '{kind}' values, expected '{expected_kind}'")
    if not body.strip():
        raise SchemaError(f"{path} has no rows")
    try:
        rows = pd.read_csv(io.StringIO(body))
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SchemaError(f"Cannot parse {path}: {e}") from e
    raw = None
    if with_raw and os.path.exists(raw_path(path)):
        raw = read_raw(raw_path(path), kind)
    metadata = {k: v for k, v in metadata.items() if k not in ("schema_version", "kind")}
    return EnsembleTable(kind, rows, metadata, raw)


def read_raw(path: str, kind: str) -> Dict[CellKey, np.ndarray]:
    metadata, body = _split_header(path)
    _check_version(metadata, path)
    df = pd.read_csv(io.StringIO(body))
    key_cols = key_columns(kind)
    raw = {}
    for key, group in df.groupby(key_cols, sort=True):
        key = tuple(key) if isinstance(key, tuple) else (key,)
        cell = tuple(float(k) if col == "p" else int(k) for col, k in zip(key_cols, key))
        raw[cell] = group.sort_values("sample")["value"].to_numpy(dtype=float)
    return raw
