"""Canvas replay state, neighbor contexts, and activity statistics.

The replay of a full stream goes through the compiled kernel in
``_kernels``; ``CanvasGrid.apply_event`` is the single-event path used by
incremental callers and tests.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .events import AtlasLabels, EventStream, PaintEvent

# Moore-neighborhood scan order shared with the replay kernel.
NEIGHBOR_OFFSETS = tuple(
    (int(dx), int(dy))
    for dy, dx in zip(_kernels._NEIGHBOR_DY.tolist(), _kernels._NEIGHBOR_DX.tolist())
)

MS_PER_HOUR = 3_600_000


@dataclass
class NeighborContext:
    """Multiset of users who last painted the Moore-adjacent pixels."""

    contributors: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.contributors)


class CanvasGrid:
    """Per-pixel last-updater / last-update-time / update-count state."""

    def __init__(self, width: int, height: int, users: list[str] | None = None):
        self.width = width
        self.height = height
        self.last_user = np.full((height, width), -1, dtype=np.int32)
        self.last_time = np.zeros((height, width), dtype=np.int64)
        self.counts = np.zeros((height, width), dtype=np.int64)
        self.users: list[str] = list(users) if users is not None else []
        self._index = {u: i for i, u in enumerate(self.users)}

    def _user_index(self, user: str) -> int:
        i = self._index.get(user)
        if i is None:
            i = len(self.users)
            self.users.append(user)
            self._index[user] = i
        return i

    def apply_event(self, e: PaintEvent) -> None:
        if not (0 <= e.x < self.width and 0 <= e.y < self.height):
            raise ValueError(f"event at ({e.x},{e.y}) outside {self.width}x{self.height} canvas")
        self.last_user[e.y, e.x] = self._user_index(e.user)
        self.last_time[e.y, e.x] = e.ts
        self.counts[e.y, e.x] += 1

    def neighbor_context(self, x: int, y: int, dedup: bool = False) -> NeighborContext:
        """Context at (x, y): last painters of existing Moore neighbors."""
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise ValueError(f"({x},{y}) outside canvas")
        out: list[str] = []
        for dx, dy in NEIGHBOR_OFFSETS:
            nx, ny = x + dx, y + dy
            if 0 <= nx < self.width and 0 <= ny < self.height:
                v = self.last_user[ny, nx]
                if v >= 0:
                    u = self.users[int(v)]
                    if dedup and u in out:
                        continue
                    out.append(u)
        return NeighborContext(contributors=tuple(out))

    def unused_space_fraction(self) -> float:
        return float(np.count_nonzero(self.counts == 0)) / (self.width * self.height)

    def last_updater(self, x: int, y: int) -> str | None:
        v = self.last_user[y, x]
        return self.users[int(v)] if v >= 0 else None


@dataclass
class ReplayResult:
    """Final grid plus the pre-action context of every event (CSR layout).

    ``ctx_val[ctx_off[i]:ctx_off[i+1]]`` holds the user indices (into
    ``grid.users``) of event i's context, captured strictly before i.
    """

    grid: CanvasGrid
    ctx_off: np.ndarray
    ctx_val: np.ndarray


def replay(stream: EventStream) -> ReplayResult:
    """Replay a full stream through the compiled kernel."""
    off, val, last_user, last_time, counts = _kernels.replay_contexts(
        stream.x.astype(np.int64),
        stream.y.astype(np.int64),
        stream.user_idx.astype(np.int32),
        stream.ts.astype(np.int64),
        stream.width,
        stream.height,
    )
    grid = CanvasGrid(stream.width, stream.height, users=stream.users)
    grid.last_user = last_user
    grid.last_time = last_time
    grid.counts = counts
    return ReplayResult(grid=grid, ctx_off=off, ctx_val=val)


def unused_space_series(stream: EventStream, bucket_ms: int = MS_PER_HOUR) -> list[tuple[int, float]]:
    """Unused-space fraction sampled at the end of each time bucket."""
    npix = stream.width * stream.height
    if len(stream) == 0:
        return []
    pix = stream.y.astype(np.int64) * stream.width + stream.x.astype(np.int64)
    first_touch = np.full(npix, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(first_touch, pix, stream.ts)
    touched = np.sort(first_touch[first_touch != np.iinfo(np.int64).max])
    b0 = int(stream.ts[0] // bucket_ms)
    b1 = int(stream.ts[-1] // bucket_ms)
    out = []
    for b in range(b0, b1 + 1):
        end = (b + 1) * bucket_ms - 1
        n_touched = int(np.searchsorted(touched, end, side="right"))
        out.append((b, 1.0 - n_touched / npix))
    return out


def subsequent_click_distances(stream: EventStream, bucket_ms: int = MS_PER_HOUR) -> list[tuple[int, float]]:
    """Mean Euclidean distance between consecutive same-user clicks per bucket.

    Each distance is assigned to the bucket of the later click.
    """
    n = len(stream)
    if n < 2:
        return []
    order = np.argsort(stream.user_idx, kind="stable")  # groups users, keeps time order
    u = stream.user_idx[order]
    xs = stream.x[order].astype(np.float64)
    ys = stream.y[order].astype(np.float64)
    ts = stream.ts[order]
    same = u[1:] == u[:-1]
    dist = np.hypot(xs[1:] - xs[:-1], ys[1:] - ys[:-1])[same]
    buckets = (ts[1:][same] // bucket_ms).astype(np.int64)
    if dist.size == 0:
        return []
    uniq, inv = np.unique(buckets, return_inverse=True)
    sums = np.bincount(inv, weights=dist)
    cnts = np.bincount(inv)
    return [(int(b), float(s / c)) for b, s, c in zip(uniq, sums, cnts)]


def activity_histograms(stream: EventStream) -> tuple[dict[str, int], np.ndarray, list[tuple[int, int, int]]]:
    """Per-user click counts, per-pixel update counts, and hourly activity.

    Returns (user_counts, pixel_counts[H, W], hourly) where hourly rows are
    (hour_bucket, clicks, unique_users) with hour = floor(ts / 1h), UTC.
    """
    user_counts_arr = np.bincount(stream.user_idx, minlength=len(stream.users))
    user_counts = {u: int(c) for u, c in zip(stream.users, user_counts_arr) if c > 0}

    pixel_counts = np.zeros((stream.height, stream.width), dtype=np.int64)
    pix = stream.y.astype(np.int64) * stream.width + stream.x.astype(np.int64)
    np.add.at(pixel_counts.reshape(-1), pix, 1)

    hourly: list[tuple[int, int, int]] = []
    if len(stream) > 0:
        hours = (stream.ts // MS_PER_HOUR).astype(np.int64)
        uniq_hours, inv = np.unique(hours, return_inverse=True)
        clicks = np.bincount(inv)
        pairs = np.unique(np.stack([hours, stream.user_idx.astype(np.int64)], axis=1), axis=0)
        uu = np.bincount(np.searchsorted(uniq_hours, pairs[:, 0]), minlength=uniq_hours.size)
        hourly = [(int(h), int(c), int(n)) for h, c, n in zip(uniq_hours, clicks, uu)]
    return user_counts, pixel_counts, hourly


def heatmap(stream: EventStream, tiles: int | None = None,
            atlas: AtlasLabels | None = None) -> dict[int, int]:
    """Event counts per region: uniform tiles x tiles, or atlas artworks.

    With an atlas, unannotated pixels fall into sink region -1.
    """
    if (tiles is None) == (atlas is None):
        raise ValueError("pass exactly one of tiles / atlas")
    if atlas is not None:
        region = atlas.labels[stream.y, stream.x].astype(np.int64)
    else:
        tw = -(-stream.width // tiles)  # ceil
        th = -(-stream.height // tiles)
        region = (stream.y.astype(np.int64) // th) * tiles + stream.x.astype(np.int64) // tw
    uniq, counts = np.unique(region, return_counts=True)
    return {int(r): int(c) for r, c in zip(uniq, counts)}


def write_stats_csvs(stream: EventStream, out_dir, atlas: AtlasLabels | None = None,
                     tiles: int = 10) -> None:
    """Emit the figure-equivalent statistics CSV files into out_dir."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    user_counts, pixel_counts, hourly = activity_histograms(stream)

    with open(out / "user_hist.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "clicks"])
        for u in stream.users:
            c = user_counts.get(u, 0)
            if c > 0:
                w.writerow([u, c])

    with open(out / "pixel_hist.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["updates", "pixels"])
        hist = np.bincount(pixel_counts.reshape(-1))
        for k, c in enumerate(hist.tolist()):
            if c > 0:
                w.writerow([k, c])

    with open(out / "hourly.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "clicks", "unique_users"])
        for h, c, n in hourly:
            w.writerow([h, c, n])

    with open(out / "unused.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "unused_fraction"])
        for b, f in unused_space_series(stream):
            w.writerow([b, repr(f)])

    with open(out / "distance.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "mean_distance"])
        for b, d in subsequent_click_distances(stream):
            w.writerow([b, repr(d)])

    with open(out / "heatmap.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "count"])
        counts = heatmap(stream, atlas=atlas) if atlas is not None else heatmap(stream, tiles=tiles)
        for r in sorted(counts):
            w.writerow([r, counts[r]])
