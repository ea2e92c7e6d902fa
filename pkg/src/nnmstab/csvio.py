"""CSV export with provenance headers and atomic writes.

Floats are written with 17 significant digits so values round-trip exactly.
Each file starts with ``#`` comment lines holding the package version, the
configuration hash and the tolerances in force.
"""

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v).replace(",", ";")


def header_lines(config_hash="", tolerances=None, extra=None):
    lines = [f"# nnmstab {__version__}", f"# config_sha256 {config_hash}"]
    if tolerances is not None:
        lines.append("# tolerances " + json.dumps(tolerances, sort_keys=True))
    for k, v in (extra or {}).items():
        lines.append(f"# {k} {v}")
    return lines


def render(columns, rows, meta_lines=()):
    buf = io.StringIO()
    for line in meta_lines:
        buf.write(line + "\n")
    buf.write(",".join(columns) + "\n")
    for r in rows:
        if len(r) != len(columns):
            raise ValueError(f"row has {len(r)} fields, header has {len(columns)}")
        buf.write(",".join(fmt(v) for v in r) + "\n")
    return buf.getvalue()


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
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


def write_csv(path, columns, rows, meta_lines=()):
    atomic_write(path, render(columns, rows, meta_lines))


def read_csv(path):
    """Return ``(meta_lines, columns, rows)`` with numeric fields parsed to float."""
    meta, cols, rows = [], None, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                meta.append(line)
            elif cols is None:
                cols = line.split(",")
            else:
                out = []
                for f in line.split(","):
                    try:
                        out.append(float(f))
                    except ValueError:
                        out.append(f)
                rows.append(out)
    return meta, cols, rows


def trajectory_rows(system, times, states):
    """Rows ``t, q_1..q_n, p_1..p_n, H`` for a sampled trajectory."""
    states = np.asarray(states, dtype=float)
    H = system.hamiltonian(states)
    return [[t, *x, h] for t, x, h in zip(np.asarray(times, dtype=float), states, np.atleast_1d(H))]


def trajectory_columns(n):
    return ["t"] + [f"q_{i + 1}" for i in range(n)] + [f"p_{i + 1}" for i in range(n)] + ["H"]


def write_trajectory(path, system, times, states, meta_lines=()):
    write_csv(path, trajectory_columns(system.n), trajectory_rows(system, times, states), meta_lines)
