"""Deterministic writers: tensor CSV, JSON reports and legacy ASCII VTK."""
from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

CSV_HEADER = "tensor,i,j,m,n,value"


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _clean(obj):
    """Convert numpy scalars/arrays to plain JSON types; reject non-finite floats."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return None
        return v
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, separators=(",", ":"))


def write_json(path, obj) -> None:
    text = json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text)


def tensor_rows(mu_eff, N, B, B_sym):
    """CSV rows (1-based indices, unused indices 0) in a fixed order."""
    rows = []
    d = np.asarray(mu_eff).shape[0]
    for i in range(d):
        for j in range(d):
            rows.append(("mu_eff", i + 1, j + 1, 0, 0, mu_eff[i][j]))
    for name, T in (("N", N), ("B", B), ("B_sym", B_sym)):
        T = np.asarray(T)
        for i in range(d):
            for j in range(d):
                for m in range(d):
                    for n in range(d):
                        rows.append((name, i + 1, j + 1, m + 1, n + 1, T[i, j, m, n]))
    return rows


def write_tensor_csv(path, tensors, config_hash: str) -> None:
    lines = [f"# config_hash: {config_hash}", CSV_HEADER]
    for name, i, j, m, n, v in tensor_rows(tensors.mu_eff, tensors.N, tensors.B, tensors.B_sym):
        lines.append(f"{name},{i},{j},{m},{n},{fmt(v)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_tensor_csv(path) -> dict:
    """Parse a tensor CSV back into {tensor: {(i,j,m,n): value}} (1-based keys)."""
    out: dict = {}
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#") or line == CSV_HEADER:
            continue
        name, i, j, m, n, v = line.split(",")
        out.setdefault(name, {})[(int(i), int(j), int(m), int(n))] = float(v)
    return out


def write_rows_csv(path, rows: list, columns: list, config_hash: str) -> None:
    lines = [f"# config_hash: {config_hash}", ",".join(columns)]
    for r in rows:
        lines.append(",".join(fmt(r[c]) if isinstance(r.get(c), (int, float)) else str(r.get(c, "")) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------------ VTK ---


def _pad3(a: np.ndarray) -> np.ndarray:
    a = np.atleast_2d(a)
    if a.shape[1] == 3:
        return a
    out = np.zeros((a.shape[0], 3))
    out[:, : a.shape[1]] = a
    return out


def _pad33(a: np.ndarray) -> np.ndarray:
    d = a.shape[-1]
    out = np.zeros((a.shape[0], 3, 3))
    out[:, :d, :d] = a
    return out


def write_vtk(path, mesh, title: str, point_scalars=None, point_vectors=None, cell_tensors=None,
              cell_scalars=None) -> None:
    """Legacy ASCII STRUCTURED_POINTS file; arrays are ordered first axis fastest."""
    point_scalars = point_scalars or {}
    point_vectors = point_vectors or {}
    cell_tensors = cell_tensors or {}
    cell_scalars = cell_scalars or {}
    d = mesh.dim
    dims = list(mesh.node_dims) + [1] * (3 - d)
    spacing = list(mesh.h) + [1.0] * (3 - d)
    out = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(str(v) for v in dims),
        "ORIGIN 0 0 0",
        "SPACING " + " ".join(fmt(v) for v in spacing),
    ]
    if point_scalars or point_vectors:
        out.append(f"POINT_DATA {mesh.n_nodes}")
        for name, vals in point_scalars.items():
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [fmt(v) for v in np.asarray(vals).ravel()]
        for name, vals in point_vectors.items():
            out.append(f"VECTORS {name} double")
            out += [" ".join(fmt(c) for c in row) for row in _pad3(np.asarray(vals))]
    if cell_tensors or cell_scalars:
        out.append(f"CELL_DATA {mesh.n_elements}")
        for name, vals in cell_scalars.items():
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [fmt(v) for v in np.asarray(vals).ravel()]
        for name, vals in cell_tensors.items():
            out.append(f"TENSORS {name} double")
            for T in _pad33(np.asarray(vals)):
                out += [" ".join(fmt(c) for c in row) for row in T]
    Path(path).write_text("\n".join(out) + "\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
