"""CSV with a one-line header and 17 significant digits per float."""

from __future__ import annotations

import numpy as np


def write_csv(path, header, rows) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=",".join(header), comments="")


def read_csv(path):
    """Return ``(header, data)`` for a file written by :func:`write_csv`."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data
