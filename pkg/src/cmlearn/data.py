"""Transitions, datasets, and their JSON-lines file format.

File layout: the first line is a header
``{"schema": "cmlearn-transitions", "version": 1, "dims": {"s": ds, "a": da, "f": df}}``
followed by one ``{"s": [...], "a": [...], "f": [...]}`` object per line.
Floats are written with 17 significant digits so a load/save cycle is exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCHEMA = "cmlearn-transitions"
SCHEMA_VERSION = 1


class DatasetFormatError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    label: np.ndarray


@dataclass
class Dataset:
    """Column store of transitions: ``states[i], actions[i] -> labels[i]``."""

    states: np.ndarray
    actions: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        n = len(self.states)
        if not (self.states.ndim == self.actions.ndim == self.labels.ndim == 2):
            raise ValueError("dataset columns must be 2-D arrays")
        if len(self.actions) != n or len(self.labels) != n:
            raise ValueError("dataset columns have different lengths")
        for name in ("states", "actions", "labels"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    @classmethod
    def empty(cls, ds: int, da: int, df: int) -> Dataset:
        return cls(np.zeros((0, ds)), np.zeros((0, da)), np.zeros((0, df)))

    @classmethod
    def from_transitions(cls, transitions, dims=None) -> Dataset:
        transitions = list(transitions)
        if not transitions:
            if dims is None:
                raise ValueError("dims required for an empty dataset")
            return cls.empty(*dims)
        return cls(
            np.array([t.state for t in transitions]),
            np.array([t.action for t in transitions]),
            np.array([t.label for t in transitions]),
        )

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.states.shape[1], self.actions.shape[1], self.labels.shape[1]

    @property
    def inputs(self) -> np.ndarray:
        """Model inputs: state and action concatenated."""
        return np.hstack([self.states, self.actions])

    def __len__(self):
        return len(self.states)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Transition(self.states[idx], self.actions[idx], self.labels[idx])
        return Dataset(self.states[idx], self.actions[idx], self.labels[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def concat(self, other: Dataset) -> Dataset:
        if other.dims != self.dims:
            raise ValueError(f"dimension mismatch {self.dims} vs {other.dims}")
        return Dataset(
            np.vstack([self.states, other.states]),
            np.vstack([self.actions, other.actions]),
            np.vstack([self.labels, other.labels]),
        )

    def with_labels(self, labels) -> Dataset:
        return Dataset(self.states, self.actions, labels)

    def split(self, fraction: float, rng) -> tuple[Dataset, Dataset]:
        """Random (train, held_out) split with ``round(fraction * n)`` held out."""
        n = len(self)
        perm = rng.permutation(n)
        n_out = int(round(fraction * n))
        return self[np.sort(perm[n_out:])], self[np.sort(perm[:n_out])]


def _fmt(values) -> str:
    return "[" + ", ".join(format(float(v), ".17g") for v in values) + "]"


def save_dataset(path, data: Dataset) -> None:
    ds, da, df = data.dims
    lines = [json.dumps({"schema": SCHEMA, "version": SCHEMA_VERSION, "dims": {"s": ds, "a": da, "f": df}})]
    for s, a, f in zip(data.states, data.actions, data.labels):
        lines.append(f'{{"s": {_fmt(s)}, "a": {_fmt(a)}, "f": {_fmt(f)}}}')
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    rows = Path(path).read_text().splitlines()
    if not rows:
        raise DatasetFormatError(1, "missing header")
    try:
        header = json.loads(rows[0])
        dims = header["dims"]
        want = (int(dims["s"]), int(dims["a"]), int(dims["f"]))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetFormatError(1, f"malformed header: {exc}") from None
    if header.get("schema") != SCHEMA:
        raise DatasetFormatError(1, f"unknown schema {header.get('schema')!r}")
    if header.get("version") != SCHEMA_VERSION:
        raise DatasetFormatError(1, f"unsupported version {header.get('version')!r}")

    cols = ([], [], [])
    for lineno, row in enumerate(rows[1:], start=2):
        if not row.strip():
            continue
        try:
            rec = json.loads(row)
            vals = [np.array(rec[k], dtype=np.float64) for k in ("s", "a", "f")]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(lineno, f"malformed transition: {exc}") from None
        for key, v, n in zip("saf", vals, want):
            if v.shape != (n,):
                raise DatasetFormatError(lineno, f"field {key!r} has {v.size} values, header says {n}")
            if not np.all(np.isfinite(v)):
                raise DatasetFormatError(lineno, f"non-finite value in {key!r}")
        for c, v in zip(cols, vals):
            c.append(v)
    if not cols[0]:
        return Dataset.empty(*want)
    return Dataset(np.array(cols[0]), np.array(cols[1]), np.array(cols[2]))
