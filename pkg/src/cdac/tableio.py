"""Persistence for solved tables and policy-map export.

Table container (``.cdac``)::

    CDAC-TABLE\\n
    <one line of JSON header, sorted keys>\\n
    <records: one per (cell, fixation), cell-major, dtype [value <f8, action <i2]>

The header carries ``format_version``, ``task``, ``k``, ``grid_n``,
``n_actions``, ``c``, ``cs`` and the β parameters (``beta`` or ``betas``).
Loading checks the header against the requesting configuration.

Policy-map CSV: header ``p1,p2,p3,action,label`` then one row per lattice
cell in lattice order. Action codes ``0 .. k-1`` stop and declare location
``code + 1``; code ``k + j`` fixates action ``j`` (simple task: l1, l2, l3;
peripheral task: l1, l2, l3, l12, l23, l13, l123).

PGM (binary P5): a square raster of side ``n + 1``; column ``i`` and row
``r`` show the cell with ``p1 = i/n`` and ``p2 = (n - r)/n``. Cells outside
the simplex are white (255); action code ``a`` is drawn with gray level
``PGM_GRAY[a]``.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import TableMismatchError
from .observation import PeripheralTaskModel, SimpleTaskModel, TaskModel
from .simplex import SimplexGrid, enumerate_cells
from .solver import CostParams, PolicyTable, ValueTable

MAGIC = b"CDAC-TABLE\n"
FORMAT_VERSION = 1
RECORD = np.dtype([("value", "<f8"), ("action", "<i2")])
# One gray level per action code; darker for stopping.
PGM_GRAY = (0, 30, 60, 110, 135, 160, 185, 205, 225, 240)
PGM_BACKGROUND = 255


def table_header(model: TaskModel, costs: CostParams, grid: SimplexGrid) -> dict:
    head = {
        "format_version": FORMAT_VERSION,
        "k": grid.k,
        "grid_n": grid.n,
        "n_actions": model.n_actions,
        "c": costs.c,
        "cs": costs.cs,
    }
    if isinstance(model, SimpleTaskModel):
        head.update(task="simple", beta=model.beta1)
    else:
        head.update(task="peripheral", betas=list(model.betas))
    return head


def save_tables(path, model: TaskModel, costs: CostParams, values: ValueTable,
                policy: PolicyTable) -> None:
    grid = values.grid
    shape = (grid.size, model.n_actions)
    if values.values.shape != shape or policy.codes.shape != shape:
        raise ValueError(f"tables must have shape {shape}")
    rec = np.empty(shape, dtype=RECORD)
    rec["value"] = values.values
    rec["action"] = policy.codes
    head = json.dumps(table_header(model, costs, grid), sort_keys=True)
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(head.encode("ascii") + b"\n")
            fh.write(rec.tobytes(order="C"))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write table {path}: {exc.strerror}") from None


def read_tables(path) -> tuple[dict, ValueTable, PolicyTable]:
    """Load a table container without checking it against a configuration."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read table {path}: {exc.strerror}") from None
    if not raw.startswith(MAGIC):
        raise TableMismatchError(f"{path} is not a table file")
    end = raw.index(b"\n", len(MAGIC))
    head = json.loads(raw[len(MAGIC):end])
    if head.get("format_version") != FORMAT_VERSION:
        raise TableMismatchError(
            f"{path}: format version {head.get('format_version')!r}, expected {FORMAT_VERSION}")
    grid = enumerate_cells(head["k"], head["grid_n"])
    body = raw[end + 1:]
    expected = grid.size * head["n_actions"] * RECORD.itemsize
    if len(body) != expected:
        raise TableMismatchError(f"{path}: {len(body)} record bytes, expected {expected}")
    rec = np.frombuffer(body, dtype=RECORD).reshape(grid.size, head["n_actions"])
    return (head, ValueTable(grid, rec["value"].copy()),
            PolicyTable(grid, rec["action"].astype(np.int16)))


def load_tables(path, model: TaskModel, costs: CostParams,
                grid_n: int) -> tuple[ValueTable, PolicyTable]:
    """Load tables, refusing any header that differs from the request."""
    head, values, policy = read_tables(path)
    want = table_header(model, costs, enumerate_cells(model.k, grid_n))
    diff = sorted(key for key in set(head) | set(want) if head.get(key) != want.get(key))
    if diff:
        detail = ", ".join(f"{key}: stored {head.get(key)!r}, requested {want.get(key)!r}"
                           for key in diff)
        raise TableMismatchError(f"{path}: {detail}")
    return values, policy


def model_from_header(head: dict) -> tuple[TaskModel, CostParams]:
    if head["task"] == "simple":
        model = SimpleTaskModel(head["beta"])
    else:
        model = PeripheralTaskModel(tuple(head["betas"]))
    return model, CostParams(head["c"], head["cs"])


def action_label(code: int, model: TaskModel) -> str:
    k = model.k
    return f"stop:{code + 1}" if code < k else f"fixate:{model.action_names[code - k]}"


def policy_map_csv(codes: np.ndarray, grid: SimplexGrid, model: TaskModel) -> str:
    """CSV text for a per-cell action-code vector (lattice order)."""
    codes = np.asarray(codes)
    if codes.shape != (grid.size,):
        raise ValueError(f"need one code per cell ({grid.size})")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"p{i + 1}" for i in range(grid.k)] + ["action", "label"])
    labels = [action_label(c, model) for c in range(model.k + model.n_actions)]
    for counts, code in zip(grid.lattice, codes):
        writer.writerow([f"{v / grid.n:.10g}" for v in counts] + [int(code), labels[code]])
    return buf.getvalue()


def policy_map_pgm(codes: np.ndarray, grid: SimplexGrid) -> bytes:
    if grid.k != 3:
        raise ValueError("PGM rasters are only defined for k = 3")
    codes = np.asarray(codes)
    if codes.max() >= len(PGM_GRAY):
        raise ValueError("action code outside the gray-level table")
    n = grid.n
    img = np.full((n + 1, n + 1), PGM_BACKGROUND, dtype=np.uint8)
    a1, a2 = grid.lattice[:, 0], grid.lattice[:, 1]
    img[n - a2, a1] = np.asarray(PGM_GRAY, dtype=np.uint8)[codes]
    return f"P5\n{n + 1} {n + 1}\n255\n".encode("ascii") + img.tobytes()


def export_policy_map(policy: PolicyTable, fixation: int, path, model: TaskModel,
                      pgm_path=None) -> None:
    """Write the ``fixation`` slice of ``policy`` as CSV (and optionally PGM)."""
    codes = policy.codes[:, fixation]
    _write(path, policy_map_csv(codes, policy.grid, model).encode("ascii"))
    if pgm_path is not None:
        _write(pgm_path, policy_map_pgm(codes, policy.grid))


def export_codes(codes: np.ndarray, grid: SimplexGrid, path, model: TaskModel,
                 pgm_path=None) -> None:
    _write(path, policy_map_csv(codes, grid, model).encode("ascii"))
    if pgm_path is not None:
        _write(pgm_path, policy_map_pgm(codes, grid))


def _write(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None
