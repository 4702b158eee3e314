"""History CSV and legacy-VTK field snapshots."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .levelset import sample_lattice
from .topopt import HistoryRow

HISTORY_HEADER = ("iter", "J", "theta_deg", "area", "kappa", "wall_time_s")


def _fmt(x) -> str:
    return f"{x:.12g}"


def write_history(rows, path) -> None:
    """Write history rows with 12 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_HEADER)
        for r in rows:
            w.writerow([r.iter, _fmt(r.J), _fmt(r.theta_deg), _fmt(r.area), _fmt(r.kappa), _fmt(r.wall_time_s)])


def read_history(path) -> list[HistoryRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != HISTORY_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            HistoryRow(int(r["iter"]), *(float(r[k]) for k in HISTORY_HEADER[1:]))
            for r in reader
        ]


def export_fields(path, phi, geometry, resolution: int, u=None, alpha=None, title: str = "igatd fields") -> None:
    """Write a legacy ASCII VTK structured grid.

    Point arrays ``phi`` and ``displacement_magnitude`` are sampled on a
    uniform parametric lattice mapped through ``geometry``. The cell array
    ``alpha`` takes the coefficient of the background element holding each
    lattice cell's centre.
    """
    xi, eta, vphi = sample_lattice(phi, resolution)
    x, y = geometry.map_point(xi, eta)
    if u is not None:
        disp = np.linalg.norm(u(xi, eta), axis=0)
    else:
        disp = np.zeros_like(vphi)
    ncell = (resolution - 1) ** 2
    if alpha is not None:
        alpha = np.asarray(alpha)
        s = (np.arange(resolution - 1) + 0.5) / (resolution - 1)
        ea = phi.space.space_u.element_of(s)
        eb = phi.space.space_v.element_of(s)
        calpha = alpha[ea[:, None], eb[None, :]]
    else:
        calpha = np.ones((resolution - 1, resolution - 1))

    npts = resolution * resolution
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_GRID",
        f"DIMENSIONS {resolution} {resolution} 1",
        f"POINTS {npts} double",
    ]
    # VTK orders points with the first index fastest
    xs, ys = x.T.ravel(), y.T.ravel()
    lines.extend(f"{a:.17g} {b:.17g} 0" for a, b in zip(xs, ys))
    lines.append(f"POINT_DATA {npts}")
    for name, arr in (("phi", vphi), ("displacement_magnitude", disp)):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(f"{v:.17g}" for v in arr.T.ravel())
    lines.append(f"CELL_DATA {ncell}")
    lines.append("SCALARS alpha double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(f"{v:.17g}" for v in calpha.T.ravel())
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_structured(path) -> dict:
    """Minimal reader for files written by :func:`export_fields`."""
    tokens = Path(path).read_text().split("\n")
    out = {"point_data": {}, "cell_data": {}}
    i = 0
    section = None
    while i < len(tokens):
        line = tokens[i].strip()
        parts = line.split()
        if not parts:
            i += 1
            continue
        if parts[0] == "DIMENSIONS":
            out["dimensions"] = tuple(int(v) for v in parts[1:])
        elif parts[0] == "POINTS":
            n = int(parts[1])
            pts = np.array([[float(v) for v in tokens[i + 1 + k].split()] for k in range(n)])
            out["points"] = pts
            i += n
        elif parts[0] == "POINT_DATA":
            section, count = "point_data", int(parts[1])
        elif parts[0] == "CELL_DATA":
            section, count = "cell_data", int(parts[1])
        elif parts[0] == "SCALARS":
            name = parts[1]
            vals = np.array([float(tokens[i + 2 + k]) for k in range(count)])
            out[section][name] = vals
            i += count + 1
        i += 1
    return out
