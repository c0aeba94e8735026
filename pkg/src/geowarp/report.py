"""Localization error tables and CSV/JSON serialization of results."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .align import AlignReport
from .geometry import Pose, rotation_angle_deg

__all__ = ["ErrorTable", "lower_median", "pose_errors", "emit_report", "parse_report"]


def lower_median(values) -> float:
    """Median by sorting; even counts take the lower-middle element."""
    v = sorted(float(x) for x in values)
    if not v:
        raise ValueError("median of an empty list")
    return v[(len(v) - 1) // 2]


@dataclass(frozen=True)
class ErrorTable:
    translation_errors: tuple[float, ...]  # metres
    rotation_errors: tuple[float, ...]  # degrees
    median_t: float
    median_r: float

    @property
    def count(self) -> int:
        return len(self.translation_errors)


def pose_errors(pred: list[Pose], gt: list[Pose]) -> ErrorTable:
    """Per-frame position and geodesic rotation errors with their medians."""
    if len(pred) != len(gt):
        raise ValueError(f"got {len(pred)} predictions for {len(gt)} ground-truth poses")
    if not pred:
        raise ValueError("need at least one pose")
    te = tuple(float(np.linalg.norm(p.position - g.position)) for p, g in zip(pred, gt))
    re_ = tuple(rotation_angle_deg(p.orientation, g.orientation) for p, g in zip(pred, gt))
    return ErrorTable(te, re_, lower_median(te), lower_median(re_))


def _pose_dict(p: Pose) -> dict:
    return {"position": [float(x) for x in p.position], "orientation": [float(x) for x in p.orientation]}


def _as_document(obj, extra: dict | None):
    """Split a result into (scalar fields, column names, rows)."""
    if isinstance(obj, ErrorTable):
        scalars = {"kind": "error_table", "frames": obj.count, "median_t_m": obj.median_t,
                   "median_r_deg": obj.median_r}
        columns = ["frame", "translation_error_m", "rotation_error_deg"]
        rows = [[i, t, r] for i, (t, r) in enumerate(zip(obj.translation_errors, obj.rotation_errors))]
    elif isinstance(obj, AlignReport):
        scalars = {"kind": "align_report", "converged": obj.converged, "iterations": obj.iterations,
                   "termination": obj.termination, "n_params": obj.n_params, "mode": obj.mode,
                   "gradient_norm": obj.gradient_norm}
        scalars.update({f"final_{k}": v for k, v in obj.final_loss.to_dict().items()})
        for name, pose in (("pose_prev", obj.pose_prev), ("pose_curr", obj.pose_curr)):
            d = _pose_dict(pose)
            scalars[f"{name}_position"] = d["position"]
            scalars[f"{name}_orientation"] = d["orientation"]
        columns = ["iteration", "total_loss"]
        rows = [[i, v] for i, v in enumerate(obj.trajectory)]
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    if extra:
        scalars.update(extra)
    return scalars, columns, rows


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)  # shortest string that reads back to the same double
    if isinstance(x, (list, tuple)):
        return " ".join(_fmt(v) for v in x)
    return str(x)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


def emit_report(obj, fmt: str = "json", extra: dict | None = None) -> bytes:
    """Serialize an :class:`ErrorTable` or :class:`AlignReport`.

    ``extra`` adds scalar fields (the CLI stores its effective configuration
    there). JSON is one object with a ``columns``/``rows`` table; CSV puts
    the scalars in leading ``# key = value`` comment lines (nested dicts
    become dotted keys) followed by a single header row.
    """
    scalars, columns, rows = _as_document(obj, extra)
    if fmt == "json":
        doc = dict(scalars)
        doc["columns"] = columns
        doc["rows"] = rows
        return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        flat = _flatten(scalars)
        for key in sorted(flat):
            buf.write(f"# {key} = {_fmt(flat[key])}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
        return buf.getvalue().encode()
    raise ValueError(f"unknown format {fmt!r}")


def parse_report(data: bytes, fmt: str = "json") -> dict:
    """Read back :func:`emit_report` output.

    Returns a dict with ``columns``, numeric ``rows`` and the scalar fields
    (CSV scalars stay strings).
    """
    text = data.decode()
    if fmt == "json":
        return json.loads(text)
    if fmt == "csv":
        out = {}
        lines = text.splitlines()
        body = []
        for line in lines:
            if line.startswith("# "):
                key, _, value = line[2:].partition(" = ")
                out[key] = value
            else:
                body.append(line)
        reader = csv.reader(body)
        out["columns"] = next(reader)
        out["rows"] = [[int(r[0])] + [float(x) for x in r[1:]] for r in reader]
        return out
    raise ValueError(f"unknown format {fmt!r}")
