"""Rebalancing grid and the empirical request distribution.

The distribution is calibrated per (origin cell, time-of-day bin): a mean
arrival rate plus the observed attribute tuples (origin offset within the
cell, destination cell, duration, reward). Sampling draws Poisson counts at
the calibrated rates and resamples attributes from the observed tuples.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import Location, Request

__all__ = [
    "RebalancingGrid",
    "RequestDistribution",
    "calibrate_distribution",
    "sample_artificial_requests",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RebalancingGrid:
    """Equally sized rectangular cells covering the operating area.

    Cell membership uses half-open intervals [lo, hi) on both axes.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    cell_w: float = 500.0
    cell_h: float = 500.0

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("degenerate grid bounding box")
        if self.cell_w <= 0 or self.cell_h <= 0:
            raise ValueError("cell dimensions must be positive")

    @property
    def nx(self) -> int:
        return max(1, int(np.ceil((self.x_max - self.x_min) / self.cell_w)))

    @property
    def ny(self) -> int:
        return max(1, int(np.ceil((self.y_max - self.y_min) / self.cell_h)))

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def contains(self, x, y):
        return (
            (np.asarray(x) >= self.x_min) & (np.asarray(x) < self.x_max)
            & (np.asarray(y) >= self.y_min) & (np.asarray(y) < self.y_max)
        )

    def cell_of(self, x, y):
        """Flat cell index for coordinates (clipped into the grid)."""
        ix = np.clip(((np.asarray(x) - self.x_min) / self.cell_w).astype(np.int64), 0, self.nx - 1)
        iy = np.clip(((np.asarray(y) - self.y_min) / self.cell_h).astype(np.int64), 0, self.ny - 1)
        return iy * self.nx + ix

    def cell_center(self, cid: int) -> Location:
        ix = int(cid) % self.nx
        iy = int(cid) // self.nx
        return Location(self.x_min + (ix + 0.5) * self.cell_w,
                        self.y_min + (iy + 0.5) * self.cell_h)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        ids = np.arange(self.n_cells)
        cx = self.x_min + (ids % self.nx + 0.5) * self.cell_w
        cy = self.y_min + (ids // self.nx + 0.5) * self.cell_h
        return cx, cy

    def cell_origin(self, cid: int) -> tuple[float, float]:
        ix = int(cid) % self.nx
        iy = int(cid) // self.nx
        return self.x_min + ix * self.cell_w, self.y_min + iy * self.cell_h


class RequestDistribution:
    """Per-cell, per-time-bin empirical demand model.

    rate[c, b] is the mean number of requests per day starting in cell c during
    bin b. Attribute records are stored CSR-style grouped by (cell, bin).
    """

    def __init__(self, grid: RebalancingGrid, bin_width_s: float, n_bins: int,
                 n_days: int, rate: np.ndarray, offsets: np.ndarray,
                 rec_odx: np.ndarray, rec_ody: np.ndarray, rec_dest: np.ndarray,
                 rec_dur: np.ndarray, rec_reward: np.ndarray, n_rejected: int = 0):
        self.grid = grid
        self.bin_width_s = float(bin_width_s)
        self.n_bins = int(n_bins)
        self.n_days = int(n_days)
        self.rate = np.asarray(rate, dtype=np.float64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.rec_odx = np.asarray(rec_odx, dtype=np.float64)
        self.rec_ody = np.asarray(rec_ody, dtype=np.float64)
        self.rec_dest = np.asarray(rec_dest, dtype=np.int64)
        self.rec_dur = np.asarray(rec_dur, dtype=np.float64)
        self.rec_reward = np.asarray(rec_reward, dtype=np.float64)
        self.n_rejected = int(n_rejected)
        if self.rate.shape != (grid.n_cells, self.n_bins):
            raise ValueError("rate table shape mismatch")
        if np.any(self.rate < 0):
            raise ValueError("negative rates")
        self._tables = None

    # -- derived per-bin densities for feature estimation ---------------------

    def _slot(self, cell: int, b: int) -> slice:
        i = cell * self.n_bins + b
        return slice(self.offsets[i], self.offsets[i + 1])

    def _build_tables(self):
        """Per-(cell,bin) expected-value tables used by arc features."""
        n_c, n_b = self.grid.n_cells, self.n_bins
        reward_rate = np.zeros((n_c, n_b))
        dhkm_rate = np.zeros((n_c, n_b))
        dur_rate = np.zeros((n_c, n_b))
        km_rate = np.zeros((n_c, n_b))
        arriving = np.zeros((n_c, n_b))
        cw, ch = self.grid.cell_w, self.grid.cell_h
        destx, desty = self.grid.cell_centers()
        for c in range(n_c):
            ox0, oy0 = self.grid.cell_origin(c)
            for b in range(n_b):
                sl = self._slot(c, b)
                n = sl.stop - sl.start
                if n == 0:
                    continue
                scale = self.rate[c, b] / n  # per-day weight of each record
                rew = self.rec_reward[sl]
                dur = self.rec_dur[sl]
                odx = self.rec_odx[sl]
                ody = self.rec_ody[sl]
                dest = self.rec_dest[sl]
                reward_rate[c, b] = scale * rew.sum()
                dur_rate[c, b] = scale * dur.sum()
                # deadhead: from the cell center to the request origins
                dh_km = np.hypot(odx - cw / 2.0, ody - ch / 2.0) / 1000.0
                dhkm_rate[c, b] = scale * dh_km.sum()
                # service distance: origin point to destination cell center
                sx = ox0 + odx
                sy = oy0 + ody
                skm = np.hypot(destx[dest] - sx, desty[dest] - sy) / 1000.0
                km_rate[c, b] = scale * skm.sum()
                # arrivals binned at origin-bin midpoint plus duration
                t_arr = (b + 0.5) * self.bin_width_s + dur
                arr_bin = np.clip((t_arr / self.bin_width_s).astype(np.int64), 0, n_b - 1)
                np.add.at(arriving, (dest, arr_bin), scale)
        self._tables = {
            "reward_rate": reward_rate,
            "dhkm_rate": dhkm_rate,
            "dur_rate": dur_rate,
            "km_rate": km_rate,
            "arriving_rate": arriving,
        }

    def table(self, name: str) -> np.ndarray:
        if self._tables is None:
            self._build_tables()
        return self._tables[name]

    def window_sum(self, table: np.ndarray, cells, t0, t1) -> np.ndarray:
        """Integral over [t0, t1) of the per-bin density for each cell.

        Within a bin the density is uniform, so fractional overlap scales
        linearly. Times outside the calibrated range contribute zero.
        """
        cells = np.asarray(cells, dtype=np.int64)
        t0 = np.asarray(t0, dtype=np.float64)
        t1 = np.asarray(t1, dtype=np.float64)
        cum = np.concatenate(
            [np.zeros((table.shape[0], 1)), np.cumsum(table, axis=1)], axis=1)

        def eval_cum(t):
            pos = np.clip(t / self.bin_width_s, 0.0, float(self.n_bins))
            idx = np.minimum(pos.astype(np.int64), self.n_bins - 1)
            frac = pos - idx
            return cum[cells, idx] + frac * table[cells, idx]

        return np.maximum(eval_cum(t1) - eval_cum(t0), 0.0)

    def expected_starts(self, cells, t0, t1) -> np.ndarray:
        return self.window_sum(self.rate, cells, t0, t1)

    def expected_arrivals(self, cells, t0, t1) -> np.ndarray:
        return self.window_sum(self.table("arriving_rate"), cells, t0, t1)

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        g = self.grid
        np.savez_compressed(
            path,
            grid=np.array([g.x_min, g.y_min, g.x_max, g.y_max, g.cell_w, g.cell_h]),
            meta=np.array([self.bin_width_s, self.n_bins, self.n_days, self.n_rejected]),
            rate=self.rate, offsets=self.offsets, rec_odx=self.rec_odx,
            rec_ody=self.rec_ody, rec_dest=self.rec_dest, rec_dur=self.rec_dur,
            rec_reward=self.rec_reward)

    @classmethod
    def load(cls, path) -> "RequestDistribution":
        with np.load(path) as d:
            g = d["grid"]
            grid = RebalancingGrid(*[float(v) for v in g])
            meta = d["meta"]
            return cls(grid, float(meta[0]), int(meta[1]), int(meta[2]),
                       d["rate"], d["offsets"], d["rec_odx"], d["rec_ody"],
                       d["rec_dest"], d["rec_dur"], d["rec_reward"],
                       n_rejected=int(meta[3]))


def calibrate_distribution(days, grid: RebalancingGrid, bin_width_s: float = 300.0,
                           n_bins: int | None = None) -> RequestDistribution:
    """Build a RequestDistribution from per-day request streams.

    `days` is a sequence of request lists, each on a day-relative clock.
    Requests outside the grid are rejected and counted.
    """
    days = [list(d) for d in days]
    if not days or all(len(d) == 0 for d in days):
        raise ValueError("empty training set")
    if bin_width_s <= 0:
        raise ValueError("bin width must be positive")

    accepted: list[Request] = []
    n_rejected = 0
    max_s = 0.0
    for day in days:
        for r in day:
            if grid.contains(r.origin.x, r.origin.y):
                accepted.append(r)
                max_s = max(max_s, r.start_time)
            else:
                n_rejected += 1
    if n_rejected:
        log.warning("calibration rejected %d requests outside the grid", n_rejected)
    if not accepted:
        raise ValueError("no requests inside the grid")
    if n_bins is None:
        n_bins = int(np.floor(max_s / bin_width_s)) + 1

    n_days = len(days)
    n_cells = grid.n_cells
    o_x = np.array([r.origin.x for r in accepted])
    o_y = np.array([r.origin.y for r in accepted])
    cells = grid.cell_of(o_x, o_y)
    bins = np.clip((np.array([r.start_time for r in accepted]) / bin_width_s
                    ).astype(np.int64), 0, n_bins - 1)

    counts = np.zeros((n_cells, n_bins))
    np.add.at(counts, (cells, bins), 1.0)
    rate = counts / n_days

    # CSR layout by (cell, bin)
    key = cells * n_bins + bins
    order = np.argsort(key, kind="stable")
    key_sorted = key[order]
    offsets = np.zeros(n_cells * n_bins + 1, dtype=np.int64)
    np.add.at(offsets, key_sorted + 1, 1)
    offsets = np.cumsum(offsets)

    acc = [accepted[i] for i in order]
    ox0 = np.array([grid.cell_origin(int(c))[0] for c in cells[order]])
    oy0 = np.array([grid.cell_origin(int(c))[1] for c in cells[order]])
    rec_odx = np.array([r.origin.x for r in acc]) - ox0
    rec_ody = np.array([r.origin.y for r in acc]) - oy0
    rec_dest = grid.cell_of(np.array([r.destination.x for r in acc]),
                            np.array([r.destination.y for r in acc]))
    rec_dur = np.array([r.duration_s for r in acc])
    rec_reward = np.array([r.reward for r in acc])

    return RequestDistribution(grid, bin_width_s, n_bins, n_days, rate, offsets,
                               rec_odx, rec_ody, rec_dest, rec_dur, rec_reward,
                               n_rejected=n_rejected)


def sample_artificial_requests(dist: RequestDistribution, t_lo: float, t_hi: float,
                               seed: int, id_start: int = -1) -> list[Request]:
    """Draw artificial future requests over [t_lo, t_hi), deterministic per seed.

    Counts are Poisson at the calibrated per-bin rates (scaled by window
    overlap); attributes are resampled from the observed tuples; start times
    are uniform within each bin's overlap with the window. Artificial requests
    get descending negative ids starting at `id_start`.
    """
    if t_hi <= t_lo:
        raise ValueError(f"empty sampling horizon [{t_lo}, {t_hi})")
    rng = np.random.default_rng(seed)
    grid = dist.grid
    w = dist.bin_width_s
    out: list[Request] = []
    next_id = id_start
    b_lo = max(0, int(np.floor(t_lo / w)))
    b_hi = min(dist.n_bins, int(np.ceil(t_hi / w)))
    for cell in range(grid.n_cells):
        ox0, oy0 = grid.cell_origin(cell)
        for b in range(b_lo, b_hi):
            lo = max(t_lo, b * w)
            hi = min(t_hi, (b + 1) * w)
            if hi <= lo:
                continue
            lam = dist.rate[cell, b] * (hi - lo) / w
            if lam <= 0:
                continue
            n = int(rng.poisson(lam))
            if n == 0:
                continue
            sl = dist._slot(cell, b)
            n_rec = sl.stop - sl.start
            if n_rec == 0:
                continue
            picks = sl.start + rng.integers(0, n_rec, size=n)
            starts = rng.uniform(lo, hi, size=n)
            for j in range(n):
                i = picks[j]
                origin = Location(ox0 + dist.rec_odx[i], oy0 + dist.rec_ody[i])
                dest = grid.cell_center(int(dist.rec_dest[i]))
                s = float(starts[j])
                out.append(Request(next_id, origin, dest, s,
                                   s + float(dist.rec_dur[i]),
                                   float(dist.rec_reward[i])))
                next_id -= 1
    return out
