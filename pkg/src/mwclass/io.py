"""File formats: long-format tensor CSV, label CSV, JSON model files.

Tensor CSV columns are ``sample_id,dim1,dim2,value`` (header required), one
row per cell.  Sample, dim1 and dim2 levels are ordered by first appearance.
Label CSV columns are ``sample_id,label`` with labels in {-1, +1} or {0, 1}
(0 -> -1, 1 -> +1).
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .multiway import FULL, FitOptions, FitTrace, MultiwayModel
from .tensor import LabeledDataset, Tensor3

SCHEMA_VERSION = 1
TENSOR_COLUMNS = ("sample_id", "dim1", "dim2", "value")
LABEL_COLUMNS = ("sample_id", "label")


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


def fmt(x) -> str:
    """Reals with 17 significant digits."""
    return format(float(x), ".17g")


def _reader(path, columns):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        fh.close()
        raise FormatError(f"{path}: empty file")
    missing = [c for c in columns if c not in header]
    if missing:
        fh.close()
        raise FormatError(f"{path}: missing columns {missing}; header is {header}")
    pos = [header.index(c) for c in columns]
    return fh, reader, pos


def read_tensor_csv(path) -> Tuple[Tensor3, List[str], List[str], List[str]]:
    """Parse a long-format tensor file into ``(tensor, sample_ids, dim1, dim2)``."""
    fh, reader, pos = _reader(path, TENSOR_COLUMNS)
    samples: Dict[str, int] = {}
    d1: Dict[str, int] = {}
    d2: Dict[str, int] = {}
    cells: Dict[Tuple[int, int, int], float] = {}
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) <= max(pos):
                raise FormatError(f"{path}:{lineno}: expected {len(TENSOR_COLUMNS)} fields, got {len(row)}")
            sid, a, b, raw = (row[i].strip() for i in pos)
            try:
                value = float(raw)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value {raw!r}") from None
            if not np.isfinite(value):
                raise FormatError(f"{path}:{lineno}: non-finite value {raw!r}")
            key = (samples.setdefault(sid, len(samples)), d1.setdefault(a, len(d1)),
                   d2.setdefault(b, len(d2)))
            if key in cells:
                raise FormatError(f"{path}:{lineno}: duplicate cell ({sid}, {a}, {b})")
            cells[key] = value
    if not cells:
        raise FormatError(f"{path}: no data rows")
    n, p, m = len(samples), len(d1), len(d2)
    if len(cells) != n * p * m:
        sid_names, d1_names, d2_names = list(samples), list(d1), list(d2)
        gaps = []
        for i in range(n):
            for j in range(p):
                for k in range(m):
                    if (i, j, k) not in cells:
                        gaps.append(f"({sid_names[i]}, {d1_names[j]}, {d2_names[k]})")
                        if len(gaps) == 10:
                            break
                if len(gaps) == 10:
                    break
            if len(gaps) == 10:
                break
        raise FormatError(f"{path}: incomplete grid, {n * p * m - len(cells)} missing cells; "
                          f"first gaps: {', '.join(gaps)}")
    values = np.empty((n, p, m))
    for (i, j, k), v in cells.items():
        values[i, j, k] = v
    return Tensor3(values), list(samples), list(d1), list(d2)


def read_labels_csv(path) -> Dict[str, float]:
    fh, reader, pos = _reader(path, LABEL_COLUMNS)
    out: Dict[str, float] = {}
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            sid, raw = (row[i].strip() for i in pos)
            try:
                lab = float(raw)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: label {raw!r} is not numeric") from None
            if lab not in (-1.0, 0.0, 1.0):
                raise FormatError(f"{path}:{lineno}: label {raw!r} not in {{-1, +1, 0, 1}}")
            if sid in out:
                raise FormatError(f"{path}:{lineno}: duplicate label for sample {sid!r}")
            out[sid] = 1.0 if lab == 1.0 else -1.0
    return out


def ingest(tensor_csv_path, labels_csv_path) -> LabeledDataset:
    tensor, ids, d1, d2 = read_tensor_csv(tensor_csv_path)
    labels = read_labels_csv(labels_csv_path)
    unknown = [s for s in labels if s not in set(ids)]
    if unknown:
        raise FormatError(f"{labels_csv_path}: labels for unknown samples {unknown[:10]}")
    unlabeled = [s for s in ids if s not in labels]
    if unlabeled:
        raise FormatError(f"{labels_csv_path}: no label for samples {unlabeled[:10]}")
    return LabeledDataset(tensor, np.array([labels[s] for s in ids]), d1, d2, ids)


def _names(data: LabeledDataset):
    ids = data.sample_ids or [f"s{i + 1}" for i in range(data.n)]
    d1 = data.dim1_names or [f"d1_{j + 1}" for j in range(data.p)]
    d2 = data.dim2_names or [f"d2_{k + 1}" for k in range(data.m)]
    return ids, d1, d2


def export_tensor_csv(data: LabeledDataset, path) -> None:
    """Canonical order: sample, then dim1, then dim2."""
    ids, d1, d2 = _names(data)
    X = data.X
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TENSOR_COLUMNS)
        for i, sid in enumerate(ids):
            for j, a in enumerate(d1):
                for k, b in enumerate(d2):
                    w.writerow((sid, a, b, fmt(X[i, j, k])))


def export_labels_csv(data: LabeledDataset, path) -> None:
    ids, _, _ = _names(data)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS)
        for sid, lab in zip(ids, data.labels):
            w.writerow((sid, int(lab)))


def write_rows(path, rows: List[dict], columns: Optional[List[str]] = None) -> None:
    """CSV with header; floats at 17 significant digits."""
    columns = columns or list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v
                        for v in (row.get(c, "") for c in columns)])


# ------------------------------------------------------------------ model files

def _mat(a):
    return None if a is None else np.asarray(a).tolist()


def model_to_dict(model: MultiwayModel) -> dict:
    tr = model.fit_trace
    return {
        "schema_version": SCHEMA_VERSION,
        "rank": model.rank,
        "solver": model.solver,
        "p": model.p,
        "m": model.m,
        "dim1_names": list(model.dim1_names) if model.dim1_names else None,
        "dim2_names": list(model.dim2_names) if model.dim2_names else None,
        "B": _mat(model.B),
        "W": _mat(model.W),
        "V": _mat(model.V),
        "beta": model.beta,
        "objective_value": model.objective_value,
        "center": _mat(model.center),
        "scale": _mat(model.scale),
        "options": model.options.resolved() if model.options else None,
        "fit_trace": {
            "converged": tr.converged,
            "iterations": tr.iterations,
            "final_delta_B": tr.delta_B[-1] if tr.delta_B else None,
            "objectives": [h["objective"] for h in tr.half_steps],
            "restart_objectives": tr.restart_objectives,
            "restart_converged": tr.restart_converged,
            "chosen_restart": tr.chosen_restart,
        },
    }


def _arr(a):
    return None if a is None else np.array(a, dtype=np.float64)


def model_from_dict(d: dict) -> MultiwayModel:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise FormatError(f"unsupported model schema version {version!r}")
    opts = None
    if d.get("options"):
        o = dict(d["options"])
        opts = FitOptions(**{k: v for k, v in o.items() if k in FitOptions.__dataclass_fields__})
    t = d.get("fit_trace") or {}
    trace = FitTrace(converged=bool(t.get("converged", False)), iterations=int(t.get("iterations", 0)),
                     delta_B=[t["final_delta_B"]] if t.get("final_delta_B") is not None else [],
                     half_steps=[{"objective": o} for o in t.get("objectives", [])],
                     restart_objectives=list(t.get("restart_objectives", [])),
                     restart_converged=list(t.get("restart_converged", [])),
                     chosen_restart=int(t.get("chosen_restart", 0)))
    rank = d["rank"] if d["rank"] == FULL else int(d["rank"])
    return MultiwayModel(rank=rank, B=_arr(d["B"]), beta=float(d["beta"]), solver=d["solver"],
                         W=_arr(d.get("W")), V=_arr(d.get("V")),
                         objective_value=float(d.get("objective_value", float("nan"))),
                         fit_trace=trace, options=opts, center=_arr(d.get("center")),
                         scale=_arr(d.get("scale")),
                         dim1_names=tuple(d["dim1_names"]) if d.get("dim1_names") else None,
                         dim2_names=tuple(d["dim2_names"]) if d.get("dim2_names") else None)


def save_model(model: MultiwayModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1), encoding="utf-8")


def load_model(path) -> MultiwayModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
