"""Plain-text tensor records shared by checkpoints and factor-table dumps.

A record is a line `tensor <name> <dim0> [<dim1> ...]` followed by one line
of whitespace-separated decimal values per leading-dimension row.  Values
round-trip float64 exactly via repr-precision formatting.
"""

from __future__ import annotations

import numpy as np


def write_tensor(fh, name: str, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.float64)
    dims = " ".join(str(d) for d in array.shape)
    fh.write(f"tensor {name} {dims}\n")
    rows = array.reshape(array.shape[0], -1) if array.ndim > 1 else array.reshape(1, -1)
    for row in rows:
        fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_tensor(lines, header: str) -> tuple[str, np.ndarray]:
    """Parse one record given its already-consumed header line."""
    parts = header.split()
    if len(parts) < 3 or parts[0] != "tensor":
        raise ValueError(f"malformed tensor header: {header!r}")
    name = parts[1]
    shape = tuple(int(p) for p in parts[2:])
    n_rows = shape[0] if len(shape) > 1 else 1
    values = []
    for _ in range(n_rows):
        values.extend(float(tok) for tok in next(lines).split())
    array = np.array(values, dtype=np.float64).reshape(shape)
    return name, array
