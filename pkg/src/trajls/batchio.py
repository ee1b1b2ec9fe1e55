"""Text serialization of trajectory batches and scan results.

Batch CSV layout: a ``# {json}`` header line with ``m, T, n, p, descriptor,
seed``, then a column row ``i,t,x_1..x_n[,y_1..y_p]`` and one row per
``(i, t)``. Floats are written with 17 significant digits so that a read
returns the exact same doubles.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._utils import DomainError
from .generators import LabeledBatch, TrajectoryBatch

FLOAT_FMT = "%.17g"


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


@dataclass
class BatchRecord:
    x: np.ndarray
    y: Optional[np.ndarray]
    header: dict

    @property
    def X(self) -> np.ndarray:
        return self.x.reshape(-1, self.x.shape[-1])

    @property
    def Y(self) -> Optional[np.ndarray]:
        return None if self.y is None else self.y.reshape(-1, self.y.shape[-1])


def write_batch(data, stream=None) -> str:
    """Serialize a ``TrajectoryBatch`` or ``LabeledBatch`` to CSV text."""
    if isinstance(data, LabeledBatch):
        batch, y = data.batch, data.y
    elif isinstance(data, TrajectoryBatch):
        batch, y = data, None
    else:
        raise TypeError("expected a TrajectoryBatch or LabeledBatch")
    m, T, n = batch.x.shape
    p = 0 if y is None else y.shape[-1]
    header = {"m": m, "T": T, "n": n, "p": p, "descriptor": batch.descriptor, "seed": batch.seed}
    if isinstance(data, LabeledBatch):
        header["noise"] = data.noise.kind
        header["sigma_xi"] = data.sigma_xi
    out = io.StringIO()
    out.write("# " + json.dumps(header, sort_keys=True, default=_jsonable) + "\n")
    cols = ["i", "t"] + [f"x_{j + 1}" for j in range(n)] + [f"y_{j + 1}" for j in range(p)]
    out.write(",".join(cols) + "\n")
    for i in range(m):
        for t in range(T):
            vals = list(batch.x[i, t]) + ([] if y is None else list(y[i, t]))
            out.write(f"{i},{t + 1}," + ",".join(FLOAT_FMT % v for v in vals) + "\n")
    text = out.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def read_batch(text: str) -> BatchRecord:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DomainError("batch CSV must start with a '# {json}' header line")
    try:
        header = json.loads(lines[0][1:].strip())
        m, T, n, p = (int(header[k]) for k in ("m", "T", "n", "p"))
    except (ValueError, KeyError) as exc:
        raise DomainError(f"bad batch header: {exc}") from exc
    reader = csv.reader(lines[1:])
    cols = next(reader)
    if len(cols) != 2 + n + p:
        raise DomainError(f"expected {2 + n + p} columns, got {len(cols)}")
    x = np.full((m, T, n), np.nan)
    y = np.full((m, T, p), np.nan) if p else None
    count = 0
    for row in reader:
        if not row:
            continue
        i, t = int(row[0]), int(row[1]) - 1
        if not (0 <= i < m and 0 <= t < T):
            raise DomainError(f"row index ({row[0]}, {row[1]}) out of range")
        vals = np.array([float(v) for v in row[2:]])
        x[i, t] = vals[:n]
        if p:
            y[i, t] = vals[n:]
        count += 1
    if count != m * T or np.isnan(x).any():
        raise DomainError(f"expected {m * T} rows, got {count}")
    return BatchRecord(x, y, header)


def write_scan(scan, stream=None) -> str:
    """CSV for a :class:`trajls.lowerbound.ScanResult` with ``#`` metadata lines."""
    out = io.StringIO()
    meta = dict(scan.meta)
    meta["slope"] = scan.slope
    for key in sorted(meta):
        val = meta[key]
        val = "" if val is None else (FLOAT_FMT % val if isinstance(val, float) else val)
        out.write(f"# {key}={val}\n")
    out.write(f"{scan.variable},{scan.value_name}\n")
    for g, v in scan.rows():
        out.write(f"{g}," + FLOAT_FMT % v + "\n")
    text = out.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def to_json(obj, **kwargs) -> str:
    return json.dumps(obj, default=_jsonable, sort_keys=True, **kwargs)


__all__ = ["BatchRecord", "read_batch", "to_json", "write_batch", "write_scan"]
