"""File formats: dataset CSV, restriction JSON and bit-exact chain checkpoints.

Restriction file schema (JSON)::

    {
      "shocks": ["oil", "monetary", ...],              # optional names, fixes r
      "impact_signs": {"GDP": [0, -1, 1, 0, 0], ...},  # variable -> one sign per shock
      "impact_rows": [{"variable": "CPI", "R": [...], "lower": 0, "upper": "inf"}],
      "shock_signs": [{"date": "2008Q4", "shock": "oil", "sign": -1}],
      "shock_rows": [{"date": "2008Q4", "R": [...], "lower": "-inf", "upper": 0}],
      "product": [{"variable": "GDP", "date": "2008Q4", "R": [...],
                   "lower": "-inf", "upper": 0.5}]
    }

Shocks may be referenced by name or 0-based index.  Dates are labels of the
dataset's time index; they are mapped to estimation periods, so a date inside
the first ``p`` rows is rejected.  Bounds accept numbers or ``"inf"``/``"-inf"``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import zipfile
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .model import (
    ChainConfig,
    Dataset,
    HorseshoeState,
    LinearConstraint,
    ModelDims,
    ParameterDraw,
    RestrictionSet,
    _sign_of_row,
    expand_signs,
    shock_signs,
)

__all__ = [
    "load_dataset_csv",
    "save_dataset_csv",
    "load_restrictions",
    "save_restrictions",
    "restrictions_to_dict",
    "restrictions_from_dict",
    "save_chain",
    "load_chain",
    "encode_bound",
    "decode_bound",
]

_FIXED_TIME = (1980, 1, 1, 0, 0, 0)


def encode_bound(x: float):
    if np.isposinf(x):
        return "inf"
    if np.isneginf(x):
        return "-inf"
    return float(x)


def decode_bound(x) -> float:
    if isinstance(x, str):
        s = x.strip().lower()
        if s in ("inf", "+inf"):
            return np.inf
        if s == "-inf":
            return -np.inf
        raise ValidationError(f"bad bound {x!r}; use a number, 'inf' or '-inf'")
    if x is None:
        raise ValidationError("missing bound")
    return float(x)


# ---------------------------------------------------------------------------
# dataset


def load_dataset_csv(path, transforms: Sequence[str] | None = None) -> Dataset:
    """Read a CSV with a header row, a leading date column and one column per variable."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if len(header) < 2:
        raise ValidationError(f"{path}: need a date column and at least one variable")
    names = [h.strip() for h in header[1:]]
    if len(set(names)) != len(names):
        raise ValidationError(f"{path}: duplicate variable names in header")
    dates, values = [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        dates.append(row[0].strip())
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    if not values:
        raise ValidationError(f"{path}: no data rows")
    return Dataset.from_raw(np.array(values), names, dates, transforms)


def save_dataset_csv(data: Dataset, path) -> None:
    """Write values with ``repr`` precision so reloading is lossless."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *data.names])
        for label, row in zip(data.time_index, data.values):
            w.writerow([label, *(repr(float(v)) for v in row)])


# ---------------------------------------------------------------------------
# restrictions


def _shock_index(ref, shocks: list[str] | None, r: int | None) -> int:
    if isinstance(ref, str) and not ref.lstrip("-").isdigit():
        if not shocks or ref not in shocks:
            raise ValidationError(f"unknown shock {ref!r}")
        return shocks.index(ref)
    j = int(ref)
    if r is not None and not 0 <= j < r:
        raise ValidationError(f"shock index {j} out of range for r = {r}")
    return j


def _variable_index(name, data: Dataset) -> int:
    if isinstance(name, int):
        if not 0 <= name < len(data.names):
            raise ValidationError(f"variable index {name} out of range")
        return name
    if name not in data.names:
        raise ValidationError(f"variable {name!r} not found in dataset columns")
    return data.names.index(name)


def _row(entry: dict, r: int, what: str) -> LinearConstraint:
    R = np.asarray(entry.get("R"), dtype=float)
    if R.ndim != 1 or R.shape[0] != r:
        raise ValidationError(f"{what}: R must be a list of {r} numbers")
    return LinearConstraint(R[None, :], [decode_bound(entry.get("lower"))], [decode_bound(entry.get("upper"))])


def _infer_r(doc: dict) -> int:
    if doc.get("shocks"):
        return len(doc["shocks"])
    widths = {len(v) for v in doc.get("impact_signs", {}).values()}
    widths |= {len(e["R"]) for key in ("impact_rows", "shock_rows", "product") for e in doc.get(key, [])}
    if len(widths) != 1:
        raise ValidationError("cannot infer the number of shocks; give a 'shocks' list")
    return widths.pop()


def restrictions_from_dict(doc: dict, data: Dataset, p: int, r: int | None = None) -> tuple[RestrictionSet, list[str]]:
    """Resolve a restriction doc against a dataset; returns the set and shock names."""
    unknown = set(doc) - {"shocks", "impact_signs", "impact_rows", "shock_signs", "shock_rows", "product"}
    if unknown:
        raise ValidationError(f"unknown restriction sections: {sorted(unknown)}")
    r = _infer_r(doc) if r is None else r
    shocks = list(doc.get("shocks") or [f"shock{j + 1}" for j in range(r)])
    if len(shocks) != r:
        raise ValidationError(f"{len(shocks)} shock names for r = {r}")
    out = RestrictionSet()

    table = np.zeros((len(data.names), r), dtype=int)
    for name, signs in doc.get("impact_signs", {}).items():
        if len(signs) != r:
            raise ValidationError(f"impact_signs[{name!r}] needs {r} entries")
        table[_variable_index(name, data)] = [int(s) for s in signs]
    out = out.merged(expand_signs(table))
    for e in doc.get("impact_rows", []):
        i = _variable_index(e.get("variable"), data)
        out = out.merged(RestrictionSet(impact={i: _row(e, r, f"impact_rows[{e.get('variable')}]")}))

    entries = []
    for e in doc.get("shock_signs", []):
        t = data.period_of(e.get("date"), p)
        entries.append((t, _shock_index(e.get("shock"), shocks, r), int(e.get("sign"))))
    if entries:
        out = out.merged(shock_signs(entries, r))
    for e in doc.get("shock_rows", []):
        t = data.period_of(e.get("date"), p)
        out = out.merged(RestrictionSet(shock={t: _row(e, r, f"shock_rows[{e.get('date')}]")}))

    for e in doc.get("product", []):
        i = _variable_index(e.get("variable"), data)
        t = data.period_of(e.get("date"), p)
        out = out.merged(RestrictionSet(product={(i, t): _row(e, r, f"product[{e.get('variable')}, {e.get('date')}]")}))
    return out, shocks


def load_restrictions(path, data: Dataset, p: int, r: int | None = None) -> tuple[RestrictionSet, list[str]]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: top level must be an object")
    return restrictions_from_dict(doc, data, p, r)


def _row_dict(c: LinearConstraint, row: int) -> dict:
    return {"R": [float(x) for x in c.R[row]], "lower": encode_bound(c.lower[row]), "upper": encode_bound(c.upper[row])}


def restrictions_to_dict(
    restr: RestrictionSet, data: Dataset, p: int, r: int, shocks: Sequence[str] | None = None
) -> dict:
    """Inverse of :func:`restrictions_from_dict` (pure sign rows become tables)."""
    shocks = list(shocks or [f"shock{j + 1}" for j in range(r)])
    label = lambda t: data.time_index[t + p]  # noqa: E731
    doc: dict = {"shocks": shocks, "impact_signs": {}, "impact_rows": [], "shock_signs": [], "shock_rows": [], "product": []}
    for i in sorted(restr.impact):
        c = restr.impact[i]
        signs = [0] * r
        for row in range(c.q):
            hit = _sign_of_row(c, row)
            if hit is not None and signs[hit[0]] == 0:
                signs[hit[0]] = hit[1]
            else:
                doc["impact_rows"].append({"variable": data.names[i], **_row_dict(c, row)})
        if any(signs):
            doc["impact_signs"][data.names[i]] = signs
    for t in sorted(restr.shock):
        c = restr.shock[t]
        seen = set()
        for row in range(c.q):
            hit = _sign_of_row(c, row)
            if hit is not None and hit[0] not in seen:
                seen.add(hit[0])
                doc["shock_signs"].append({"date": label(t), "shock": shocks[hit[0]], "sign": hit[1]})
            else:
                doc["shock_rows"].append({"date": label(t), **_row_dict(c, row)})
    for (i, t) in sorted(restr.product):
        c = restr.product[(i, t)]
        for row in range(c.q):
            doc["product"].append({"variable": data.names[i], "date": label(t), **_row_dict(c, row)})
    return {k: v for k, v in doc.items() if v}


def save_restrictions(
    restr: RestrictionSet, path, data: Dataset, p: int, r: int | None = None, shocks: Sequence[str] | None = None
) -> None:
    if r is None:
        widths = {c.d for group in (restr.impact, restr.shock, restr.product) for c in group.values()}
        if len(widths) != 1:
            raise ValidationError("cannot infer r from the restriction set")
        r = widths.pop()
    doc = restrictions_to_dict(restr, data, p, r, shocks)
    Path(path).write_text(json.dumps(doc, indent=1, default=str) + "\n")


# ---------------------------------------------------------------------------
# chain checkpoints

_DRAW_FIELDS = ("beta", "L", "sigma2", "F")
_HS_FIELDS = ("lam", "psi", "z_lam", "z_psi")


def _write_member(zf: zipfile.ZipFile, name: str, arr: np.ndarray) -> None:
    buf = _io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    info = zipfile.ZipInfo(name + ".npy", date_time=_FIXED_TIME)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, buf.getvalue())


def save_chain(chain, path) -> None:
    """Write a checkpoint readable by ``numpy.load``.

    Float payloads are stored raw, so reloading is bit-exact.  Zip member
    timestamps are fixed and wall-clock timings are left out, which makes
    the file a pure function of the draws and settings.
    """
    meta = {
        "config": asdict(chain.config),
        "dims": asdict(chain.dims),
        "meta": chain.meta,
    }
    arrays = {name: chain.stack(name) for name in _DRAW_FIELDS + _HS_FIELDS}
    arrays["uniqueness_flags"] = np.asarray(chain.uniqueness_flags, dtype=bool)
    arrays["meta_json"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with zipfile.ZipFile(Path(path), "w") as zf:
        for name in sorted(arrays):
            _write_member(zf, name, arrays[name])


def load_chain(path):
    from .sampler import PosteriorChain

    with np.load(Path(path), allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(arrays.pop("meta_json").tobytes().decode())
    S = arrays["beta"].shape[0]
    draws = [
        ParameterDraw(
            *(arrays[f][s].copy() for f in _DRAW_FIELDS),
            HorseshoeState(*(arrays[f][s].copy() for f in _HS_FIELDS)),
        )
        for s in range(S)
    ]
    return PosteriorChain(
        draws,
        ChainConfig(**meta["config"]),
        ModelDims(**meta["dims"]),
        arrays["uniqueness_flags"],
        {},
        meta["meta"],
    )
