"""Statistics derived from trajectories: size distributions, CCDFs,
(k_max, N) occupancy maps, recurrence times and the cyclicity order parameter.

Everything here is a pure function of recorded data.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "SizeHistogram",
    "HeatMap",
    "ccdf",
    "mean_cluster_density",
    "heatmap",
    "recurrence_times",
    "cyclicity",
    "cyclicity_from_signs",
    "write_size_csv",
]


@dataclass
class SizeHistogram:
    """Cluster-size histogram over total mass M.

    ``sizes`` is strictly increasing, ``counts`` are positive. Counts may be
    fractional for time-averaged histograms; the mass identity still holds.
    """

    sizes: np.ndarray
    counts: np.ndarray
    M: int

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        self.counts = np.asarray(self.counts)
        if self.sizes.shape != self.counts.shape:
            raise ValueError("sizes and counts differ in length")
        if self.sizes.size:
            if np.any(np.diff(self.sizes) <= 0) or self.sizes[0] < 1:
                raise ValueError("sizes must be positive and strictly increasing")
            if np.any(self.counts <= 0):
                raise ValueError("counts must be positive for present sizes")
        mass = float(np.dot(self.sizes.astype(np.float64), self.counts))
        if not np.isclose(mass, self.M, rtol=1e-9, atol=0):
            raise ValueError(f"histogram mass {mass} != M={self.M}")

    @classmethod
    def from_dict(cls, counts: dict, M: int | None = None) -> "SizeHistogram":
        items = sorted((int(k), v) for k, v in counts.items() if v)
        sizes = np.array([k for k, _ in items], dtype=np.int64)
        vals = np.array([v for _, v in items])
        if M is None:
            M = int(round(float(np.dot(sizes, vals)))) if items else 0
        return cls(sizes, vals, M)

    @classmethod
    def from_samples(cls, samples, M: int | None = None) -> "SizeHistogram":
        """Histogram of a flat array of cluster sizes."""
        sizes, counts = np.unique(np.asarray(samples, dtype=np.int64), return_counts=True)
        if M is None:
            M = int(np.dot(sizes, counts))
        return cls(sizes, counts.astype(np.int64), M)

    @classmethod
    def from_population_arrays(cls, monomers: int, slot_sizes: np.ndarray, M: int) -> "SizeHistogram":
        live = slot_sizes[slot_sizes > 0]
        sizes, counts = np.unique(live, return_counts=True)
        if monomers > 0:
            sizes = np.concatenate(([1], sizes))
            counts = np.concatenate(([monomers], counts))
        return cls(sizes, counts.astype(np.int64), M)

    @property
    def N(self) -> float:
        return self.counts.sum()

    @property
    def k_max(self) -> int:
        return int(self.sizes[-1])

    def as_dict(self) -> dict:
        return {int(s): c.item() for s, c in zip(self.sizes, self.counts)}

    def to_json(self) -> str:
        return json.dumps({str(k): v for k, v in self.as_dict().items()})

    def expand(self) -> np.ndarray:
        """One entry per cluster (integer counts only)."""
        return np.repeat(self.sizes, self.counts.astype(np.int64))


@dataclass
class HeatMap:
    """Occupancy tallies over (k_max/M, N/M) in [0, 1]^2.

    ``counts[ix, iy]`` with ix indexing k_max/M and iy indexing N/M.
    """

    bins_x: int
    bins_y: int
    counts: np.ndarray
    edges_x: np.ndarray = field(repr=False, default=None)
    edges_y: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.edges_x is None:
            self.edges_x = np.linspace(0.0, 1.0, self.bins_x + 1)
        if self.edges_y is None:
            self.edges_y = np.linspace(0.0, 1.0, self.bins_y + 1)

    @property
    def visited_mask(self) -> np.ndarray:
        return self.counts > 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def write(self, path: str | Path) -> None:
        """Write the grid as CSV plus a JSON sidecar with bin edges."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ix", "iy", "kmax_over_M", "N_over_M", "count"])
            cx = 0.5 * (self.edges_x[1:] + self.edges_x[:-1])
            cy = 0.5 * (self.edges_y[1:] + self.edges_y[:-1])
            for ix in range(self.bins_x):
                for iy in range(self.bins_y):
                    w.writerow([ix, iy, f"{cx[ix]:.6g}", f"{cy[iy]:.6g}", int(self.counts[ix, iy])])
                # blank line between scan lines for gnuplot pm3d
                fh.write("\n")
        sidecar = {
            "bins_x": self.bins_x,
            "bins_y": self.bins_y,
            "edges_x": self.edges_x.tolist(),
            "edges_y": self.edges_y.tolist(),
            "total": self.total,
            "visited_cells": int(self.visited_mask.sum()),
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))


def ccdf(h: SizeHistogram) -> list[tuple[int, float]]:
    """Number of clusters strictly larger than each present size."""
    if h.sizes.size == 0:
        raise ValueError("empty histogram")
    above = np.cumsum(h.counts[::-1])[::-1]
    larger = np.concatenate((above[1:], [0]))
    return [(int(s), larger[i].item()) for i, s in enumerate(h.sizes)]


def mean_cluster_density(hists: Sequence[SizeHistogram]) -> SizeHistogram:
    """Per-size mean count over a sequence of histograms (absent sizes count 0)."""
    if len(hists) == 0:
        raise ValueError("need at least one histogram")
    M = hists[0].M
    if any(h.M != M for h in hists):
        raise ValueError("histograms have different total mass M")
    total = np.zeros(M + 1, dtype=np.float64)
    for h in hists:
        np.add.at(total, h.sizes, h.counts)
    sizes = np.flatnonzero(total)
    return SizeHistogram(sizes, total[sizes] / len(hists), M)


def heatmap(samples, M: int, bins: int | tuple[int, int] = 100) -> HeatMap:
    """Tally (k_max/M, N/M) of each sample; values of exactly 1.0 go in the last bin.

    ``samples`` may be a sequence of objects with ``N``/``k_max`` attributes, or
    a pair of arrays ``(k_max, N)``.
    """
    bx, by = (bins, bins) if np.isscalar(bins) else bins
    if bx < 2 or by < 2:
        raise ValueError("bins must be >= 2")
    if isinstance(samples, tuple) and len(samples) == 2:
        kmax, n = (np.asarray(a, dtype=np.float64) for a in samples)
    else:
        kmax = np.array([s.k_max for s in samples], dtype=np.float64)
        n = np.array([s.N for s in samples], dtype=np.float64)
    ix = np.minimum((kmax / M * bx).astype(np.int64), bx - 1)
    iy = np.minimum((n / M * by).astype(np.int64), by - 1)
    counts = np.zeros((bx, by), dtype=np.int64)
    np.add.at(counts, (ix, iy), 1)
    return HeatMap(bx, by, counts)


def recurrence_times(events) -> np.ndarray:
    """Steps between successive largest-cluster shatterings.

    ``events`` is a sequence of ``(step, size, was_largest)`` or a Trajectory.
    The interval from t=0 to the first largest shattering is not included.
    """
    if hasattr(events, "shatter_step"):
        steps = np.asarray(events.shatter_step)[np.asarray(events.shatter_largest, dtype=bool)]
    else:
        steps = np.array([e[0] for e in events if e[2]], dtype=np.int64)
    if steps.size < 2:
        return np.zeros(0, dtype=np.int64)
    if np.any(np.diff(steps) <= 0):
        raise ValueError("events must be ordered by step")
    return np.diff(steps)


def cyclicity(kmax_series, stride: int = 1) -> float:
    """(#steps where k_max grows - #steps where it shrinks) / #steps."""
    if stride != 1:
        raise ValueError("cyclicity is defined per step; record k_max with stride 1")
    k = np.asarray(kmax_series)
    if k.size < 2:
        raise ValueError("need at least two k_max values")
    d = np.diff(k)
    return (np.count_nonzero(d > 0) - np.count_nonzero(d < 0)) / d.size


def cyclicity_from_signs(signs) -> float:
    """Cyclicity from a per-step record of sign(delta k_max)."""
    s = np.asarray(signs)
    if s.size == 0:
        raise ValueError("empty sign record")
    return (np.count_nonzero(s > 0) - np.count_nonzero(s < 0)) / s.size


def write_size_csv(path: str | Path, rows: Iterable[tuple], header=("size", "value")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
