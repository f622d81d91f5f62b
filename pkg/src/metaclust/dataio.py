"""CSV task files, ingestion options and report files."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from metaclust.synthgen import Task


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based."""

    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


def _fmt(x: float) -> str:
    return repr(float(x))


def task_to_csv(task: Task) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = [f"f{i}" for i in range(task.d)]
    if task.labels is not None:
        header.append("label")
    w.writerow(header)
    for j in range(task.n):
        row = [_fmt(v) for v in task.points[j]]
        if task.labels is not None:
            row.append(str(int(task.labels[j])))
        w.writerow(row)
    return buf.getvalue()


def write_task_csv(task: Task, path) -> None:
    Path(path).write_text(task_to_csv(task), encoding="utf-8")


def read_table(path, label_column: Optional[str] = "label"):
    """Read a numeric CSV with a header row.

    Every column other than ``label_column`` is a feature. Returns
    (points, labels or None, feature names).
    """
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        header = [h.strip() for h in header]
        lab_idx = header.index(label_column) if label_column and label_column in header else None
        feat_idx = [i for i in range(len(header)) if i != lab_idx]
        if not feat_idx:
            raise ParseError(path, 1, "no feature columns")
        rows, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(path, line_no, f"expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[i]) for i in feat_idx])
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
            if not all(np.isfinite(rows[-1])):
                raise ParseError(path, line_no, "non-finite value")
            if lab_idx is not None:
                try:
                    lab = int(row[lab_idx])
                except ValueError:
                    raise ParseError(path, line_no, f"label {row[lab_idx]!r} is not an integer") from None
                if lab < 0:
                    raise ParseError(path, line_no, "labels must be nonnegative")
                labels.append(lab)
    if not rows:
        raise ParseError(path, 2, "no data rows")
    points = np.asarray(rows, dtype=np.float64)
    return points, (np.asarray(labels, dtype=np.int64) if lab_idx is not None else None), \
        [header[i] for i in feat_idx]


def read_task_csv(path, label_column: Optional[str] = "label") -> Task:
    points, labels, _ = read_table(path, label_column)
    return Task(points=points, labels=labels)


@dataclass
class IngestOptions:
    label_column: Optional[str] = "label"
    pad_to_dims: Optional[int] = None
    per_cluster_sample: Optional[int] = None
    class_filter: Optional[List[int]] = None
    normalize: bool = False

    def validate(self):
        if self.per_cluster_sample is not None and not self.label_column:
            raise ValueError("per_cluster_sample requires a label column")
        if self.class_filter is not None and not self.label_column:
            raise ValueError("class_filter requires a label column")


def ingest(points, labels, opts: IngestOptions, rng: Optional[np.random.Generator] = None):
    """Apply class filtering, per-class sampling, z-scoring and zero padding.

    Filtered labels are re-numbered 0..m-1 in increasing order of the original
    ids. Returns (points, labels or None, kept row indices).
    """
    opts.validate()
    X = np.asarray(points, dtype=np.float64)
    y = None if labels is None else np.asarray(labels, dtype=np.int64)
    keep = np.arange(X.shape[0])
    if (opts.class_filter is not None or opts.per_cluster_sample is not None) and y is None:
        raise ValueError("data has no label column")
    if opts.class_filter is not None:
        keep = keep[np.isin(y[keep], opts.class_filter)]
    if opts.per_cluster_sample is not None:
        if rng is None:
            raise ValueError("per_cluster_sample needs an rng")
        chosen = []
        for c in np.unique(y[keep]):
            members = keep[y[keep] == c]
            m = opts.per_cluster_sample
            chosen.append(rng.choice(members, size=m, replace=len(members) < m))
        keep = np.sort(np.concatenate(chosen))
    X = X[keep]
    if y is not None:
        y = y[keep]
        if opts.class_filter is not None:
            _, y = np.unique(y, return_inverse=True)
    if opts.normalize:
        sd = X.std(axis=0)
        X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    if opts.pad_to_dims is not None:
        if X.shape[1] > opts.pad_to_dims:
            raise ValueError(f"data has {X.shape[1]} features, more than pad_to_dims={opts.pad_to_dims}")
        X = np.hstack([X, np.zeros((X.shape[0], opts.pad_to_dims - X.shape[1]))])
    return X, y, keep


def write_labels_csv(labels, path, index=None) -> None:
    labels = np.asarray(labels)
    index = np.arange(labels.size) if index is None else np.asarray(index)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label"])
        for i, lab in zip(index.tolist(), labels.tolist()):
            w.writerow([i, lab])


def read_labels_csv(path) -> np.ndarray:
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["index", "label"]:
            raise ParseError(path, 1, "expected header 'index,label'")
        idx, labs = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(path, line_no, "expected 2 fields")
            try:
                idx.append(int(row[0]))
                labs.append(int(row[1]))
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
    out = np.empty(len(labs), dtype=np.int64)
    order = np.argsort(idx, kind="stable")
    out[:] = np.asarray(labs)[order]
    return out


def write_rows_csv(rows: Sequence[dict], path, fields: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def rows_to_csv(rows: Sequence[dict], fields: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def save_checkpoint(params, path) -> None:
    Path(path).write_text(params.to_json(), encoding="utf-8")


def load_checkpoint(path):
    from metaclust.model import ModelParams

    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from None
    return ModelParams.from_dict(obj)
