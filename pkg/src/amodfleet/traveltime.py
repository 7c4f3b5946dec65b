"""Travel-time and distance lookup between planar locations.

A provider carries an optional cell-pair lookup table (seconds, km) over a
fine square grid. Same-cell pairs and missing table entries fall back to
straight-line distance at a constant speed. A provider without a table is a
pure constant-speed metric, useful for synthetic worlds where exact triangle
inequality matters.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .model import Location

__all__ = ["TravelTimeProvider"]


class TravelTimeProvider:
    def __init__(self, bbox: tuple[float, float, float, float], cell_m: float,
                 fallback_kmh: float = 20.0,
                 table_s: Optional[np.ndarray] = None,
                 table_km: Optional[np.ndarray] = None):
        x_min, y_min, x_max, y_max = bbox
        if not (x_max > x_min and y_max > y_min):
            raise ValueError(f"degenerate bounding box {bbox}")
        if cell_m <= 0 or fallback_kmh <= 0:
            raise ValueError("cell size and fallback speed must be positive")
        self.bbox = (float(x_min), float(y_min), float(x_max), float(y_max))
        self.cell_m = float(cell_m)
        self.fallback_kmh = float(fallback_kmh)
        self.nx = max(1, int(math.ceil((x_max - x_min) / cell_m)))
        self.ny = max(1, int(math.ceil((y_max - y_min) / cell_m)))
        self.n_cells = self.nx * self.ny
        if table_s is not None or table_km is not None:
            if table_s is None or table_km is None:
                raise ValueError("provide both seconds and km tables or neither")
            table_s = np.asarray(table_s, dtype=np.float64)
            table_km = np.asarray(table_km, dtype=np.float64)
            if table_s.shape != (self.n_cells, self.n_cells) or table_km.shape != table_s.shape:
                raise ValueError(
                    f"table shape {table_s.shape} does not match {self.n_cells} cells"
                )
        self.table_s = table_s
        self.table_km = table_km
        self.fallback_count = 0  # missing-entry fallbacks, diagnostic only

    @classmethod
    def constant_speed(cls, bbox, speed_kmh: float = 20.0, cell_m: float = 500.0
                       ) -> "TravelTimeProvider":
        """Pure straight-line metric at a constant speed (no lookup table)."""
        return cls(bbox, cell_m=cell_m, fallback_kmh=speed_kmh)

    # -- cell indexing ------------------------------------------------------

    def cell_index(self, x, y):
        """Flat cell id; coordinates are clipped into the bounding box."""
        x_min, y_min, _, _ = self.bbox
        ix = np.clip(((np.asarray(x) - x_min) / self.cell_m).astype(np.int64), 0, self.nx - 1)
        iy = np.clip(((np.asarray(y) - y_min) / self.cell_m).astype(np.int64), 0, self.ny - 1)
        return iy * self.nx + ix

    def cell_center(self, cid: int) -> Location:
        x_min, y_min, _, _ = self.bbox
        ix = cid % self.nx
        iy = cid // self.nx
        return Location(x_min + (ix + 0.5) * self.cell_m, y_min + (iy + 0.5) * self.cell_m)

    # -- lookups ------------------------------------------------------------

    def travel_time(self, l1: Location, l2: Location) -> tuple[float, float]:
        """(seconds, km) from l1 to l2."""
        if l1.x == l2.x and l1.y == l2.y:
            return 0.0, 0.0
        c1 = int(self.cell_index(l1.x, l1.y))
        c2 = int(self.cell_index(l2.x, l2.y))
        if c1 != c2 and self.table_s is not None:
            s = self.table_s[c1, c2]
            if math.isfinite(s):
                return float(s), float(self.table_km[c1, c2])
            self.fallback_count += 1
        return self._line(l1.x, l1.y, l2.x, l2.y)

    def _line(self, x1, y1, x2, y2):
        km = math.hypot(x2 - x1, y2 - y1) / 1000.0
        return km / self.fallback_kmh * 3600.0, km

    def pairwise(self, x1, y1, x2, y2) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized (seconds, km) for broadcastable coordinate arrays."""
        x1, y1, x2, y2 = np.broadcast_arrays(
            np.asarray(x1, dtype=np.float64), np.asarray(y1, dtype=np.float64),
            np.asarray(x2, dtype=np.float64), np.asarray(y2, dtype=np.float64))
        km_line = np.hypot(x2 - x1, y2 - y1) / 1000.0
        s_line = km_line / self.fallback_kmh * 3600.0
        if self.table_s is None:
            return s_line, km_line
        c1 = self.cell_index(x1, y1)
        c2 = self.cell_index(x2, y2)
        sec = self.table_s[c1, c2]
        km = self.table_km[c1, c2]
        use_line = (c1 == c2) | ~np.isfinite(sec)
        self.fallback_count += int(np.count_nonzero(use_line & (c1 != c2)))
        sec = np.where(use_line, s_line, sec)
        km = np.where(use_line, km_line, km)
        same = (x1 == x2) & (y1 == y2)
        if np.any(same):
            sec = np.where(same, 0.0, sec)
            km = np.where(same, 0.0, km)
        return sec, km

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        meta = np.array([*self.bbox, self.cell_m, self.fallback_kmh], dtype=np.float64)
        if self.table_s is None:
            np.savez_compressed(path, meta=meta, has_table=np.array([0]))
        else:
            np.savez_compressed(path, meta=meta, has_table=np.array([1]),
                                table_s=self.table_s, table_km=self.table_km)

    @classmethod
    def load(cls, path) -> "TravelTimeProvider":
        with np.load(path) as data:
            meta = data["meta"]
            bbox = tuple(meta[:4])
            cell_m, fallback = float(meta[4]), float(meta[5])
            if int(data["has_table"][0]):
                return cls(bbox, cell_m, fallback,
                           table_s=data["table_s"], table_km=data["table_km"])
            return cls(bbox, cell_m, fallback)
