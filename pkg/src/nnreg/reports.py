"""Deterministic report serialization: JSON, CSV with provenance, tables.

Every floating-point number leaving the package goes through '%.17g'
(lossless round-trip for 64-bit floats), so identical runs produce
byte-identical files regardless of thread count or platform float-repr
quirks. CSV files carry a provenance header of '# key=value' lines
(experiment name, master seed, config hash) ahead of the column header.
Human-facing tables round to 6 significant digits instead.
"""

import csv
import hashlib
import io
import json

import numpy as np

from .errors import InvalidInputError


def format_float(x):
    """'%.17g' rendering; rejects non-finite values (no NaN/Inf in files)."""
    xf = float(x)
    if not np.isfinite(xf):
        raise InvalidInputError(f"non-finite value in report: {xf!r}")
    return "%.17g" % xf


def _render_json(obj, indent):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for k, v in obj.items():
            if not isinstance(k, str):
                raise InvalidInputError("JSON object keys must be strings")
            items.append(f'{pad}  {json.dumps(k)}: {_render_json(v, indent + 1)}')
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        seq = list(obj)
        if not seq:
            return "[]"
        simple = all(isinstance(v, (bool, int, float, str, np.integer,
                                    np.floating)) for v in seq)
        if simple and len(seq) <= 8:
            return "[" + ", ".join(_render_json(v, 0) for v in seq) + "]"
        items = [f"{pad}  {_render_json(v, indent + 1)}" for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, np.ndarray):
        return _render_json(obj.tolist(), indent)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise InvalidInputError(f"cannot serialize {type(obj).__name__} to JSON")


def write_json(path, obj):
    text = _render_json(obj, 0) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def config_hash(config):
    """sha256 over the sorted 'key=value' rendering of a flat config dict."""
    lines = []
    for k in sorted(config):
        v = config[k]
        if isinstance(v, (float, np.floating)):
            v = format_float(v)
        lines.append(f"{k}={v}")
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, rows, fieldnames, provenance=None):
    """Rows of dicts → CSV with '# key=value' provenance lines up front."""
    buf = io.StringIO()
    if provenance:
        for k in provenance:
            buf.write(f"# {k}={_cell(provenance[k])}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fieldnames)
    for row in rows:
        writer.writerow([_cell(row[f]) for f in fieldnames])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path):
    """Returns (rows, provenance): rows as dicts of strings."""
    provenance = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("# "):
            key, _, val = line[2:].partition("=")
            provenance[key] = val
            body_start = i + 1
        else:
            break
    reader = csv.reader(lines[body_start:])
    header = next(reader)
    rows = [dict(zip(header, rec)) for rec in reader if rec]
    return rows, provenance


def format_table(rows, fieldnames):
    """Aligned human-readable table, floats at 6 significant digits."""
    def human(v):
        if isinstance(v, (bool, np.bool_)):
            return "yes" if v else "no"
        if isinstance(v, (float, np.floating)):
            return "%.6g" % float(v)
        return str(v)

    rendered = [[human(row[f]) for f in fieldnames] for row in rows]
    widths = [max(len(f), *(len(r[i]) for r in rendered)) if rendered else len(f)
              for i, f in enumerate(fieldnames)]
    out = ["  ".join(f.ljust(w) for f, w in zip(fieldnames, widths))]
    for r in rendered:
        out.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(out)


def aggregate_rows(rows, numeric_fields, quantiles=(0.01, 0.5, 0.99)):
    """Means, standard errors (std/√reps), and quantiles per numeric field.

    Single-row inputs yield mean = the value with zero standard error.
    Aggregates are exactly recomputable from the rows (plain numpy fold).
    """
    out = {}
    nreps = len(rows)
    for f in numeric_fields:
        vals = np.array([float(r[f]) for r in rows], dtype=np.float64)
        mean = float(np.mean(vals)) if nreps else float("nan")
        se = float(np.std(vals, ddof=1) / np.sqrt(nreps)) if nreps > 1 else 0.0
        entry = {"mean": mean, "se": se, "n": nreps}
        for q in quantiles:
            entry[f"q{q:g}"] = float(np.quantile(vals, q)) if nreps else float("nan")
        out[f] = entry
    return out
