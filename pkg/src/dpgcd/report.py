"""Report files: metric table, change-pixel scatter, KDE density grid, histograms.

All numbers are written with ``repr(float)`` so output does not depend on
the process locale.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import DataError

HIST_THRESHOLD = 0.5  # metres; smaller |dh| is left out of histograms
HIST_BIN = 0.5
HIST_RANGE = 40.0  # histogram covers [-HIST_RANGE, HIST_RANGE]; outliers land in the end bins
KDE_GRID = 64
KDE_MARGIN = 4.0  # grid extends this many bandwidths past the data


def _num(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def histogram_edges(bin_width: float = HIST_BIN, limit: float = HIST_RANGE) -> np.ndarray:
    n = int(round(2 * limit / bin_width))
    return -limit + bin_width * np.arange(n + 1)


def height_histogram(values, threshold: float = HIST_THRESHOLD, bin_width: float = HIST_BIN) -> np.ndarray:
    """Counts of values with |v| >= threshold on a fixed symmetric grid."""
    edges = histogram_edges(bin_width)
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    v = v[np.abs(v) >= threshold]
    v = np.clip(v, edges[0], edges[-1])
    counts, _ = np.histogram(v, bins=edges)
    return counts


def scott_bandwidth(x: np.ndarray) -> float:
    """Scott's rule for one axis of 2-D data: sigma * n^(-1/6)."""
    n = x.size
    sigma = float(np.std(x, ddof=1)) if n > 1 else 0.0
    if sigma == 0.0:
        # degenerate axis: fall back to one metre scaled by the same rule
        sigma = max(abs(float(x.mean())) * 0.1, 1.0) if n else 1.0
    return sigma * n ** (-1.0 / 6.0)


def kde_grid(points: np.ndarray, size: int = KDE_GRID) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Product-Gaussian KDE of 2-D points on a ``size`` x ``size`` grid.

    Returns (x axis, y axis, density[y, x]). The density integrates to one
    over the plane; the grid covers the data plus a margin so the Riemann sum
    is close to one as well.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DataError(f"expected [n, 2] scatter points, got {pts.shape}")
    if pts.shape[0] == 0:
        axis = np.linspace(-1.0, 1.0, size)
        return axis, axis.copy(), np.zeros((size, size))
    hx, hy = scott_bandwidth(pts[:, 0]), scott_bandwidth(pts[:, 1])
    gx = np.linspace(pts[:, 0].min() - KDE_MARGIN * hx, pts[:, 0].max() + KDE_MARGIN * hx, size)
    gy = np.linspace(pts[:, 1].min() - KDE_MARGIN * hy, pts[:, 1].max() + KDE_MARGIN * hy, size)
    kx = np.exp(-0.5 * ((gx[:, None] - pts[None, :, 0]) / hx) ** 2) / (hx * math.sqrt(2 * math.pi))
    ky = np.exp(-0.5 * ((gy[:, None] - pts[None, :, 1]) / hy) ** 2) / (hy * math.sqrt(2 * math.pi))
    density = ky @ kx.T / pts.shape[0]
    return gx, gy, density


def riemann_mass(gx: np.ndarray, gy: np.ndarray, density: np.ndarray) -> float:
    return float(density.sum() * (gx[1] - gx[0]) * (gy[1] - gy[0]))


def write_metrics(path, summary: dict) -> None:
    Path(path).write_text("".join(f"{k}={_num(v)}\n" for k, v in summary.items()))


def read_metrics(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def write_rows(path, header, rows) -> None:
    lines = [",".join(header)] + [",".join(_num(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_scatter(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()[1:]
    if not lines:
        return np.zeros((0, 2))
    return np.array([[float(v) for v in ln.split(",")] for ln in lines])


def emit_density_files(out_dir, scatter: np.ndarray) -> None:
    out_dir = Path(out_dir)
    gx, gy, dens = kde_grid(scatter)
    write_rows(out_dir / "kde_axes.csv", ("index", "gt", "pred"), [(i, gx[i], gy[i]) for i in range(gx.size)])
    write_rows(out_dir / "kde_grid.csv", [f"x{i}" for i in range(gx.size)], dens.tolist())
    edges = histogram_edges()
    hg = height_histogram(scatter[:, 0]) if scatter.size else np.zeros(edges.size - 1, dtype=np.int64)
    hp = height_histogram(scatter[:, 1]) if scatter.size else np.zeros(edges.size - 1, dtype=np.int64)
    write_rows(
        out_dir / "histogram.csv",
        ("bin_lo", "bin_hi", "gt", "pred"),
        [(edges[i], edges[i + 1], hg[i], hp[i]) for i in range(edges.size - 1)],
    )


def emit_report(report, out_dir) -> list[Path]:
    """Write metrics.txt, confusion.csv, scatter.csv, kde_axes.csv, kde_grid.csv and histogram.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics(out_dir / "metrics.txt", report.summary())
    write_rows(out_dir / "confusion.csv", [f"pred{i}" for i in range(report.num_classes)], report.confusion.tolist())
    write_rows(out_dir / "scatter.csv", ("gt", "pred"), report.scatter.tolist())
    emit_density_files(out_dir, report.scatter)
    return [out_dir / n for n in ("metrics.txt", "confusion.csv", "scatter.csv", "kde_axes.csv", "kde_grid.csv", "histogram.csv")]


def regenerate(eval_dir) -> dict[str, str]:
    """Rebuild density and histogram files from an evaluation directory's scatter."""
    eval_dir = Path(eval_dir)
    if not (eval_dir / "metrics.txt").exists():
        raise DataError(f"{eval_dir} has no metrics.txt")
    emit_density_files(eval_dir, read_scatter(eval_dir / "scatter.csv"))
    return read_metrics(eval_dir / "metrics.txt")
