"""Read constituent four-momenta from the public top-tagging HDF5 layout
and emit JSONL records the engine's loader accepts.

The public corpus stores one row per jet with flat columns E_0, PX_0,
PY_0, PZ_0 ... E_199, PX_199, PY_199, PZ_199 (zero-padded) plus the
binary column is_signal_new.  Files written by pandas in its fixed
format keep those columns in block0_items/block0_values (floats) and
block1_items/block1_values (the integer label); plain per-column
datasets are accepted too.  The converter reports what it finds.

Output schema per line: {"id": str, "label": 0|1, "p4": [[E,px,py,pz],...]}.
Features are left to the engine so the feature logic lives in one place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import h5py
import numpy as np

LABEL_COLUMNS = ("is_signal_new", "is_signal")
COMPONENTS = ("E", "PX", "PY", "PZ")


class SchemaError(Exception):
    """The file does not contain the expected constituent columns."""


@dataclass
class ConversionReport:
    written: int
    input_rows: int
    dropped_all_zero: int
    n_slots: int
    label_column: str

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


def _decode(names) -> list[str]:
    return [n.decode() if isinstance(n, bytes) else str(n) for n in names]


def _columns_from_blocks(group: h5py.Group) -> dict[str, np.ndarray]:
    """Reassemble a column -> values map from pandas fixed-format blocks."""
    columns: dict[str, np.ndarray] = {}
    for i in range(16):
        items_key, values_key = f"block{i}_items", f"block{i}_values"
        if items_key not in group:
            break
        names = _decode(group[items_key][()])
        values = np.asarray(group[values_key][()])
        if values.ndim == 1:
            values = values[:, None]
        for j, name in enumerate(names):
            columns[name] = values[:, j]
    return columns


def _columns_from_datasets(group: h5py.Group) -> dict[str, np.ndarray]:
    columns = {}
    for name, node in group.items():
        if isinstance(node, h5py.Dataset) and node.ndim == 1:
            columns[name] = np.asarray(node[()])
    return columns


def read_columns(path, key: str = "table") -> dict[str, np.ndarray]:
    with h5py.File(path, "r") as fh:
        if key in fh:
            group = fh[key]
        elif len(fh.keys()) == 1:
            group = fh[next(iter(fh.keys()))]
        else:
            group = fh
        if isinstance(group, h5py.Dataset):
            raise SchemaError(f"{key!r} is a dataset, expected a table group")
        columns = _columns_from_blocks(group)
        if not columns:
            columns = _columns_from_datasets(group)
    if not columns:
        raise SchemaError("no recognizable columns; expected pandas-style "
                          "block0_items/block0_values or per-column datasets")
    return columns


def _constituent_slots(columns: dict[str, np.ndarray]) -> int:
    n = 0
    while all(f"{c}_{n}" in columns for c in COMPONENTS):
        n += 1
    if n == 0:
        expected = [f"{c}_0" for c in COMPONENTS]
        raise SchemaError(f"missing constituent columns; expected at least "
                          f"{expected}, found {sorted(columns)[:8]}...")
    return n


def convert(in_path, out_path, split: str = "train", limit: int | None = None,
            key: str = "table") -> ConversionReport:
    """Convert one HDF5 table to JSONL; returns the conversion report.

    Zero-padded constituents (all four components zero) are trimmed; rows
    with no surviving constituent are dropped and counted.
    """
    columns = read_columns(in_path, key=key)
    n_slots = _constituent_slots(columns)
    label_col = next((c for c in LABEL_COLUMNS if c in columns), None)
    if label_col is None:
        raise SchemaError(f"missing label column; expected one of "
                          f"{list(LABEL_COLUMNS)}")

    # rows x slots x (E, px, py, pz)
    stacked = np.stack(
        [np.stack([np.asarray(columns[f"{c}_{i}"], dtype=np.float64)
                   for c in COMPONENTS], axis=1)
         for i in range(n_slots)], axis=1)
    labels = np.asarray(columns[label_col]).astype(np.int64)
    n_rows = stacked.shape[0]
    if limit is not None:
        stacked, labels = stacked[:limit], labels[:limit]

    written = dropped = 0
    with open(out_path, "w") as out:
        for row_idx in range(stacked.shape[0]):
            p4 = stacked[row_idx]
            real = ~np.all(p4 == 0.0, axis=1)
            if not np.any(real):
                dropped += 1
                continue
            record = {"id": f"{split}-{row_idx}",
                      "label": int(labels[row_idx]),
                      "p4": p4[real].tolist()}
            out.write(json.dumps(record) + "\n")
            written += 1
    return ConversionReport(written=written, input_rows=int(n_rows),
                            dropped_all_zero=dropped, n_slots=n_slots,
                            label_column=label_col)
