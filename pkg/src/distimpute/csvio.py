"""CSV codec for incomplete datasets.

Schema: header ``x1,...,xd,y``; one record per line; an empty ``y`` field
marks a missing response. Covariates must always be present.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .records import DataError, Sample


def _parse_header(header: list[str], path) -> int:
    names = [h.strip() for h in header]
    d = len(names) - 1
    expected = [f"x{i}" for i in range(1, d + 1)] + ["y"]
    if d < 1 or names != expected:
        raise DataError(f"{path}: line 1: header must be x1,...,xd,y, got {','.join(names)!r}")
    return d


def _number(field: str, path, line: int, what: str) -> float:
    try:
        v = float(field)
    except ValueError:
        raise DataError(f"{path}: line {line}: {what} is not a number: {field!r}") from None
    if not math.isfinite(v):
        raise DataError(f"{path}: line {line}: {what} is not finite")
    return v


def ingest_csv(path: str | Path, require_observed: bool = True) -> Sample:
    """Read a dataset; raises :class:`DataError` naming the offending line."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        d = _parse_header(header, path)
        xs, ys, ds = [], [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != d + 1:
                raise DataError(f"{path}: line {line}: expected {d + 1} fields, got {len(row)}")
            x = []
            for j, f in enumerate(row[:d]):
                if f.strip() == "":
                    raise DataError(f"{path}: line {line}: covariate x{j + 1} is missing")
                x.append(_number(f, path, line, f"x{j + 1}"))
            yf = row[d].strip()
            xs.append(x)
            if yf == "":
                ys.append(np.nan)
                ds.append(False)
            else:
                ys.append(_number(yf, path, line, "y"))
                ds.append(True)
    if not xs:
        raise DataError(f"{path}: no data rows")
    sample = Sample(np.array(xs, dtype=np.float64).reshape(-1, d), np.array(ys), np.array(ds))
    if require_observed and sample.n_observed == 0:
        raise DataError(f"{path}: no observed responses")
    return sample


def export_csv(sample: Sample, path: str | Path) -> None:
    """Write ``sample`` so that :func:`ingest_csv` reproduces it exactly."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(1, sample.dim + 1)] + ["y"])
        for xi, yi, di in zip(sample.x, sample.y, sample.delta):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi)) if di else ""])
