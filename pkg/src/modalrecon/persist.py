"""Result persistence: diff-able CSV series and stable-key JSON reports.

Every file starts with (or contains) the scenario hash and the Gramian
condition numbers that entered the computation, so a result can always be
traced back to its configuration. Floats print with 17 significant digits;
re-running the same scenario reproduces the files byte for byte.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np


def _fmt(x):
    return "%.17g" % float(x)


def _header_comments(scenario_hash, condition_numbers):
    conds = "[" + ", ".join(_fmt(c) for c in condition_numbers) + "]"
    return [
        f"# scenario_hash={scenario_hash}",
        f"# gramian_condition_numbers={conds}",
    ]


def coordinate_labels(model):
    """Column names for the modal coordinates, in storage order."""
    n = model.n_modes
    if model.kind.variant == "nls":
        first, second = "re", "im"
    else:
        first, second = "a", "b"
    width = max(2, len(str(n - 1)))
    return [f"{first}{k:0{width}d}" for k in range(n)] + [
        f"{second}{k:0{width}d}" for k in range(n)
    ]


def write_trajectory_csv(path, model, traj, scenario_hash, condition_numbers=()):
    """Trajectory as CSV: time column, then modal coordinates in fixed order."""
    labels = coordinate_labels(model)
    lines = _header_comments(scenario_hash, condition_numbers)
    lines.append(",".join(["time"] + labels))
    flat = traj.coeffs.reshape(traj.coeffs.shape[0], -1)
    for t, row in zip(traj.times, flat):
        lines.append(",".join([_fmt(t)] + [_fmt(v) for v in row]))
    _write_text(path, "\n".join(lines) + "\n")


def write_series_csv(path, columns, scenario_hash, condition_numbers=()):
    """Named columns of equal length as CSV; columns is a list of
    (name, values) pairs so the order is the caller's."""
    names = [name for name, _ in columns]
    arrays = [np.asarray(vals, dtype=float) for _, vals in columns]
    length = arrays[0].shape[0]
    if any(a.shape != (length,) for a in arrays):
        raise ValueError("series columns must share one length")
    lines = _header_comments(scenario_hash, condition_numbers)
    lines.append(",".join(names))
    for i in range(length):
        lines.append(",".join(_fmt(a[i]) for a in arrays))
    _write_text(path, "\n".join(lines) + "\n")


def write_report(path, payload, scenario_hash, condition_numbers=()):
    """Report dict as JSON with sorted keys; hash and condition numbers are
    injected at the top level."""
    doc = dict(payload)
    doc["scenario_hash"] = scenario_hash
    doc["gramian_condition_numbers"] = [float(c) for c in condition_numbers]
    _write_text(path, json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        # strict JSON has no literal for these
        return "nan" if obj != obj else ("inf" if obj > 0 else "-inf")
    return obj


def _write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def read_csv_columns(path):
    """Inverse of the CSV writers: (comment lines, column names, data array)."""
    comments = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        comments.append(lines[i])
        i += 1
    names = lines[i].split(",")
    data = np.array(
        [[float(v) for v in ln.split(",")] for ln in lines[i + 1 :] if ln],
        dtype=float,
    )
    return comments, names, data
