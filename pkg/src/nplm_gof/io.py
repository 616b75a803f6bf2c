"""File formats.

Samples are stored as delimited text or as a little-endian binary blob::

    b"NPLM1" | u32 n_points | u32 dim | n_points*dim float64, row-major

Structured results are JSON documents carrying a ``schema`` field of the form
``nplm.<Type>/<version>``. Floats are written with Python's shortest
round-trip representation, so reading a document back is exact. Non-finite
values use the JSON extensions ``Infinity``/``NaN``.
"""

from __future__ import annotations

import enum
import json
import struct
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import DatasetParseError, InputError
from .types import Dataset, Direction, NplmConfig, NullModel, TestReport, TrainedModel, ValidationSummary

MAGIC = b"NPLM1"
_HEADER = struct.Struct("<II")
SCHEMA_VERSION = 1


class DataFormat(str, enum.Enum):
    TEXT = "text"
    BINARY = "binary"


# ------------------------------------------------------------------ samples


def _parse_text(text: str, source: str) -> np.ndarray:
    rows = []
    dim = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split(",") if "," in stripped else stripped.split()
        try:
            row = [float(v) for v in fields]
        except ValueError:
            bad = next(i for i, v in enumerate(fields) if not _is_float(v))
            raise DatasetParseError(f"{source}:{lineno}: column {bad + 1}: cannot parse {fields[bad].strip()!r}") from None
        for col, v in enumerate(row):
            if not np.isfinite(v):
                raise DatasetParseError(f"{source}:{lineno}: column {col + 1}: non-finite value {fields[col].strip()!r}")
        if dim is None:
            dim = len(row)
        elif len(row) != dim:
            raise DatasetParseError(f"{source}:{lineno}: expected {dim} columns, found {len(row)}")
        rows.append(row)
    if not rows:
        raise DatasetParseError(f"{source}: no data rows")
    return np.array(rows, dtype=np.float64)


def _is_float(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


def _parse_binary(blob: bytes, source: str) -> np.ndarray:
    if blob[: len(MAGIC)] != MAGIC:
        raise DatasetParseError(f"{source}: offset 0: bad magic {blob[:len(MAGIC)]!r}")
    if len(blob) < len(MAGIC) + _HEADER.size:
        raise DatasetParseError(f"{source}: offset {len(MAGIC)}: truncated header")
    n, dim = _HEADER.unpack_from(blob, len(MAGIC))
    start = len(MAGIC) + _HEADER.size
    expected = start + 8 * n * dim
    if len(blob) != expected:
        raise DatasetParseError(f"{source}: expected {expected} bytes for {n}x{dim} points, found {len(blob)}")
    if n == 0 or dim == 0:
        raise DatasetParseError(f"{source}: offset {len(MAGIC)}: empty dataset ({n}x{dim})")
    pts = np.frombuffer(blob, dtype="<f8", offset=start).reshape(n, dim).astype(np.float64)
    bad = ~np.isfinite(pts)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DatasetParseError(
            f"{source}: offset {start + 8 * (row * dim + col)}: non-finite value at row {row + 1}, column {col + 1}"
        )
    return pts


def read_dataset(path, format: Optional[DataFormat] = None, label: Optional[str] = None) -> Dataset:
    """Read a sample file; the format is sniffed from the magic bytes when not given."""
    path = Path(path)
    blob = path.read_bytes()
    if format is None:
        format = DataFormat.BINARY if blob.startswith(MAGIC) else DataFormat.TEXT
    format = DataFormat(format)
    if format is DataFormat.BINARY:
        pts = _parse_binary(blob, str(path))
    else:
        try:
            text = blob.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DatasetParseError(f"{path}: offset {exc.start}: not UTF-8 text") from None
        pts = _parse_text(text, str(path))
    return Dataset(pts, label=label or path.stem)


def write_dataset(dataset: Dataset, path, format: DataFormat = DataFormat.TEXT) -> None:
    path = Path(path)
    format = DataFormat(format)
    if format is DataFormat.BINARY:
        pts = np.ascontiguousarray(dataset.points, dtype="<f8")
        path.write_bytes(MAGIC + _HEADER.pack(dataset.n_points, dataset.dim) + pts.tobytes())
        return
    lines = [f"# nplm dataset n={dataset.n_points} dim={dataset.dim} label={dataset.label}"]
    lines.extend(",".join(repr(float(v)) for v in row) for row in dataset.points)
    path.write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------------ reports


def _arr(a) -> Any:
    return None if a is None else np.asarray(a).tolist()


def _config_to_dict(c: NplmConfig) -> dict:
    return {
        "n_centers": c.n_centers,
        "kernel_width": c.kernel_width,
        "regularization": c.regularization,
        "expected_count": c.expected_count,
        "newton_tol": c.newton_tol,
        "newton_max_iter": c.newton_max_iter,
        "cg_max_iter": c.cg_max_iter,
        "master_seed": c.master_seed,
        "standardize": c.standardize,
    }


def _report_to_dict(r: TestReport) -> dict:
    return {
        "t_obs": r.t_obs,
        "p_empirical": r.p_empirical,
        "p_chi2": r.p_chi2,
        "z_score": r.z_score,
        "z_empirical": r.z_empirical,
        "z_empirical_is_bound": r.z_empirical_is_bound,
        "direction": Direction(r.direction).value,
        "seeds": list(r.seeds),
        "alpha": r.alpha,
        "decision": r.decision,
        "converged": r.converged,
    }


def _report_from_dict(d: dict) -> TestReport:
    d = dict(d)
    d["direction"] = Direction(d["direction"])
    d["seeds"] = tuple(d["seeds"])
    return TestReport(**d)


def to_document(obj) -> dict:
    """JSON-ready dict with a ``schema`` field for any result type."""
    from .benchmarks import MoGSpec
    from .diagnostics import HistogramBundle
    from .model_selection import ScanResult

    if isinstance(obj, TestReport):
        body = _report_to_dict(obj)
    elif isinstance(obj, ValidationSummary):
        body = {
            "z_median": obj.z_median,
            "ci68_low": obj.ci68_low,
            "ci68_high": obj.ci68_high,
            "n_repeats": obj.n_repeats,
            "direction": Direction(obj.direction).value,
            "per_repeat_reports": [_report_to_dict(r) for r in obj.per_repeat_reports],
        }
    elif isinstance(obj, NullModel):
        body = {
            "toy_values": _arr(obj.toy_values),
            "chi2_dof": obj.chi2_dof,
            "ks_pvalue": obj.ks_pvalue,
            "n_toys": obj.n_toys,
            "config_fingerprint": obj.config_fingerprint,
            "fingerprint_fields": dict(obj.fingerprint_fields),
            "n_failed": obj.n_failed,
            "master_seed": obj.master_seed,
            "warnings": list(obj.warnings),
        }
    elif isinstance(obj, ScanResult):
        body = {
            "grid": [list(g) for g in obj.grid],
            "medians": list(obj.medians),
            "wall_times": list(obj.wall_times),
            "max_times": list(obj.max_times),
            "flags": list(obj.flags),
            "n_toys": obj.n_toys,
        }
    elif isinstance(obj, HistogramBundle):
        body = {
            "dim": obj.dim,
            "edges": [_arr(e) for e in obj.edges],
            "sources": list(obj.sources),
            "weighted": list(obj.weighted),
            "totals": dict(obj.totals),
            "marginals": {k: [_arr(h) for h in v] for k, v in obj.marginals.items()},
            "pairs": {
                k: [{"i": i, "j": j, "counts": _arr(h)} for (i, j), h in sorted(v.items())]
                for k, v in obj.pairs.items()
            },
        }
    elif isinstance(obj, TrainedModel):
        body = {
            "centers": _arr(obj.centers),
            "weights": _arr(obj.weights),
            "kernel_width": obj.kernel_width,
            "ref_count": obj.ref_count,
            "data_count": obj.data_count,
            "expected_count": obj.expected_count,
            "converged": obj.converged,
            "iterations_used": obj.iterations_used,
            "shift": _arr(obj.shift),
            "scale": _arr(obj.scale),
            "center_indices": _arr(obj.center_indices),
            "risk_history": list(obj.risk_history),
            "grad_norm": obj.grad_norm,
        }
    elif isinstance(obj, NplmConfig):
        body = _config_to_dict(obj)
    elif isinstance(obj, MoGSpec):
        body = obj.to_dict()
    else:
        raise InputError(f"no document format for {type(obj).__name__}")
    return {"schema": f"nplm.{type(obj).__name__}/{SCHEMA_VERSION}", **body}


def from_document(doc: dict):
    from .benchmarks import MoGSpec
    from .diagnostics import HistogramBundle
    from .model_selection import ScanResult

    schema = doc.get("schema", "")
    name, _, version = schema.partition("/")
    if not name.startswith("nplm.") or version != str(SCHEMA_VERSION):
        raise InputError(f"unsupported schema {schema!r}")
    kind = name[len("nplm.") :]
    body = {k: v for k, v in doc.items() if k not in ("schema", "manifest")}
    if kind == "TestReport":
        return _report_from_dict(body)
    if kind == "ValidationSummary":
        body["per_repeat_reports"] = tuple(_report_from_dict(r) for r in body["per_repeat_reports"])
        body["direction"] = Direction(body["direction"])
        return ValidationSummary(**body)
    if kind == "NullModel":
        body["warnings"] = tuple(body["warnings"])
        return NullModel(**body)
    if kind == "ScanResult":
        body["grid"] = [tuple(g) for g in body["grid"]]
        return ScanResult(**body)
    if kind == "HistogramBundle":
        return HistogramBundle(
            edges=[np.array(e) for e in body["edges"]],
            marginals={k: [np.array(h) for h in v] for k, v in body["marginals"].items()},
            pairs={k: {(p["i"], p["j"]): np.array(p["counts"]) for p in v} for k, v in body["pairs"].items()},
            sources=tuple(body["sources"]),
            weighted=tuple(body["weighted"]),
            totals=body["totals"],
        )
    if kind == "TrainedModel":
        return TrainedModel(**body)
    if kind == "NplmConfig":
        return NplmConfig(**body)
    if kind == "MoGSpec":
        return MoGSpec.from_dict(body)
    raise InputError(f"unsupported schema {schema!r}")


def dumps(obj, manifest: Optional[dict] = None) -> str:
    doc = to_document(obj)
    if manifest is not None:
        doc["manifest"] = manifest
    return json.dumps(doc, indent=1, sort_keys=False)


def write_report(obj, path, manifest: Optional[dict] = None) -> None:
    """Serialize any result type to a JSON document at ``path``."""
    Path(path).write_text(dumps(obj, manifest) + "\n")


def read_document(path) -> dict:
    return json.loads(Path(path).read_text())


def read_report(path):
    return from_document(read_document(path))


def read_config(path) -> NplmConfig:
    obj = read_report(path)
    if not isinstance(obj, NplmConfig):
        raise InputError(f"{path} does not hold an NplmConfig")
    return obj
