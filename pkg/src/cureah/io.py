"""Flat-file formats: subject CSV, long-format time-varying CSV, JSON output.

Subject file: header row with ``t_left, t_right``, then ``z_*``, ``w_*``,
optional constant ``x_*`` and an optional ``id``. ``t_right`` takes the
token ``inf`` for right censoring. A time-varying file has columns ``id,
time, x_*``: each row gives the covariate values on the interval that ends
at ``time``; the last row of a subject persists to its follow-up end.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from collections import defaultdict
from pathlib import Path

import numpy as np

from .data import DataError, Dataset, from_subjects, make_subject

FLOAT_FORMAT = "%.17g"


def _float(text: str, row: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"column {col}: {text!r} is not a number", row) from None


def _prefixed(header: list[str], prefix: str) -> list[str]:
    return [h for h in header if h.startswith(prefix)]


def read_tv_csv(path) -> tuple[dict, tuple[str, ...]]:
    """Schedules by id: ``{id: (times, values)}`` sorted by time."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        if "id" not in header or "time" not in header:
            raise DataError("time-varying file needs id and time columns")
        xcols = _prefixed(header, "x_")
        rows = defaultdict(list)
        for lineno, rec in enumerate(reader, start=2):
            rec = {k.strip(): (v or "").strip() for k, v in rec.items()}
            t = _float(rec["time"], lineno, "time")
            rows[rec["id"]].append((t, [_float(rec[c], lineno, c) for c in xcols]))
    out = {}
    for key, items in rows.items():
        items.sort(key=lambda it: it[0])
        out[key] = (np.array([t for t, _ in items]), np.array([x for _, x in items]).reshape(len(items), len(xcols)))
    return out, tuple(xcols)


def read_dataset(path, tv_path=None) -> Dataset:
    """Parse and validate a subject CSV; errors carry the file line number."""
    schedules, tv_names = read_tv_csv(tv_path) if tv_path else ({}, ())
    subjects = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        for col in ("t_left", "t_right"):
            if col not in header:
                raise DataError(f"missing column {col}")
        zc, wc, xc = _prefixed(header, "z_"), _prefixed(header, "w_"), _prefixed(header, "x_")
        if tv_path and xc:
            raise DataError("give time-varying covariates either as x_ columns or in the time-varying file, not both")
        if tv_path and "id" not in header:
            raise DataError("an id column is needed to join the time-varying file")
        for lineno, rec in enumerate(reader, start=2):
            rec = {k.strip(): (v or "").strip() for k, v in rec.items() if k is not None}
            tl = _float(rec["t_left"], lineno, "t_left")
            tr = _float(rec["t_right"], lineno, "t_right")
            z = [_float(rec[c], lineno, c) for c in zc]
            w = [_float(rec[c], lineno, c) for c in wc]
            try:
                if tv_path:
                    sid = rec["id"]
                    if sid not in schedules:
                        raise DataError(f"id {sid!r} has no time-varying rows")
                    times, values = schedules[sid]
                    t_tilde = tl if math.isinf(tr) else tr
                    if times[-1] < t_tilde:
                        times = np.append(times, t_tilde)
                        values = np.vstack((values, values[-1:]))
                    subjects.append(make_subject(tl, tr, z, w, tv_times=times, tv_values=values))
                else:
                    x = [_float(rec[c], lineno, c) for c in xc]
                    subjects.append(make_subject(tl, tr, z, w, x=x))
            except DataError as exc:
                raise DataError(str(exc), lineno) from None
            except ValueError as exc:
                raise DataError(str(exc), lineno) from None
    if not subjects:
        raise DataError("no subjects in file")
    names = {"z": tuple(zc), "w": tuple(wc), "x": tuple(tv_names or xc)}
    try:
        return from_subjects(subjects, names)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return FLOAT_FORMAT % x


def dataset_csv(dataset: Dataset, ids: bool = True) -> tuple[str, str | None]:
    """Subject CSV text and, when any covariate varies, the long-format file."""
    zc, wc = dataset.covariate_names("z"), dataset.covariate_names("w")
    xc = dataset.covariate_names("x")
    varying = any(s.n_tv > 1 for s in dataset)
    rows = [["id", "t_left", "t_right", *zc, *wc] + ([] if varying else list(xc))]
    tv = [["id", "time", *xc]]
    for i, s in enumerate(dataset):
        row = [str(i + 1), _fmt(s.t_left), _fmt(s.t_right)] + [_fmt(v) for v in s.z] + [_fmt(v) for v in s.w]
        if not varying:
            row += [_fmt(v) for v in s.tv_values[0]]
        rows.append(row)
        for t, x in zip(s.tv_times, s.tv_values):
            tv.append([str(i + 1), _fmt(t)] + [_fmt(v) for v in x])
    subj = "\n".join(",".join(r) for r in rows) + "\n"
    return subj, ("\n".join(",".join(r) for r in tv) + "\n") if varying else None


def to_jsonable(obj):
    """Plain structure with floats rendered to 17 significant digits."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
        return _Float(x)
    return obj


class _Float(float):
    def __repr__(self):
        return FLOAT_FORMAT % self


class _Encoder(json.JSONEncoder):
    def iterencode(self, o, _one_shot=False):
        # route floats through _Float.__repr__ by disabling the C encoder
        return json.encoder._make_iterencode(
            {}, self.default, json.encoder.py_encode_basestring_ascii, self.indent, repr,
            self.key_separator, self.item_separator, self.sort_keys, self.skipkeys, _one_shot,
        )(o, 0)


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), cls=_Encoder, indent=2, sort_keys=True) + "\n"


def loads(text: str):
    def fix(v):
        if isinstance(v, dict):
            return {k: fix(x) for k, x in v.items()}
        if isinstance(v, list):
            return [fix(x) for x in v]
        if v in ("inf", "-inf", "nan"):
            return float(v)
        return v
    return fix(json.loads(text))


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_all(files: dict) -> None:
    """Write every ``{path: text}`` only after all texts were produced."""
    for path, text in files.items():
        atomic_write(path, text)


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
