"""Paint-event streams: CSV ingestion, atlas labels, and the synthetic generator.

Events CSV format: UTF-8 with header ``ts,user,x,y,color`` where ``ts`` is
integer milliseconds.  Atlas CSV: header ``x,y,label``.  Group CSV: header
``user,group``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ._kernels import splitmix64_array

logger = logging.getLogger(__name__)

_U64_SCALE = float(2**64)


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


@dataclass(frozen=True)
class PaintEvent:
    """One timestamped user click on a pixel."""

    ts: int
    user: str
    x: int
    y: int
    color: int


@dataclass
class EventStream:
    """A chronologically ordered paint-event log on a width x height canvas.

    Events live in parallel numpy arrays; ``users`` maps the int index used
    in ``user_idx`` back to the opaque user-id string.  Sorted non-decreasing
    by ts, ties keeping input order.
    """

    width: int
    height: int
    ts: np.ndarray
    user_idx: np.ndarray
    x: np.ndarray
    y: np.ndarray
    color: np.ndarray
    users: list[str]
    skipped: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return int(self.ts.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.users == other.users
            and np.array_equal(self.ts, other.ts)
            and np.array_equal(self.user_idx, other.user_idx)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.color, other.color)
        )

    def event(self, i: int) -> PaintEvent:
        return PaintEvent(
            ts=int(self.ts[i]),
            user=self.users[int(self.user_idx[i])],
            x=int(self.x[i]),
            y=int(self.y[i]),
            color=int(self.color[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self.event(i)

    def take(self, index: np.ndarray | slice) -> "EventStream":
        """Sub-stream sharing the user table (order preserved)."""
        return EventStream(
            width=self.width,
            height=self.height,
            ts=self.ts[index],
            user_idx=self.user_idx[index],
            x=self.x[index],
            y=self.y[index],
            color=self.color[index],
            users=self.users,
        )


def _empty_stream(width: int, height: int, users: list[str] | None = None) -> EventStream:
    return EventStream(
        width=width,
        height=height,
        ts=np.empty(0, dtype=np.int64),
        user_idx=np.empty(0, dtype=np.int32),
        x=np.empty(0, dtype=np.int32),
        y=np.empty(0, dtype=np.int32),
        color=np.empty(0, dtype=np.int32),
        users=users if users is not None else [],
    )


def make_stream(width: int, height: int, rows: list[tuple[int, str, int, int, int]],
                skipped: int = 0) -> EventStream:
    """Build a stream from (ts, user, x, y, color) tuples; stable-sorts by ts."""
    if not rows:
        s = _empty_stream(width, height)
        s.skipped = skipped
        return s
    users: list[str] = []
    index: dict[str, int] = {}
    n = len(rows)
    ts = np.empty(n, dtype=np.int64)
    uidx = np.empty(n, dtype=np.int32)
    xs = np.empty(n, dtype=np.int32)
    ys = np.empty(n, dtype=np.int32)
    cs = np.empty(n, dtype=np.int32)
    for i, (t, u, x, y, c) in enumerate(rows):
        j = index.get(u)
        if j is None:
            j = len(users)
            index[u] = j
            users.append(u)
        ts[i] = t
        uidx[i] = j
        xs[i] = x
        ys[i] = y
        cs[i] = c
    order = np.argsort(ts, kind="stable")
    stream = EventStream(
        width=width,
        height=height,
        ts=ts[order],
        user_idx=uidx[order],
        x=xs[order],
        y=ys[order],
        color=cs[order],
        users=users,
    )
    stream.skipped = skipped
    return stream


def parse_events(path, width: int, height: int, lenient: bool = False) -> EventStream:
    """Parse an events CSV into a stream, stable-sorted by timestamp.

    Malformed rows raise FormatError naming the line number.  Out-of-bounds
    coordinates are an error unless ``lenient``, in which case the row is
    skipped and counted in ``stream.skipped``.
    """
    rows: list[tuple[int, str, int, int, int]] = []
    skipped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["ts", "user", "x", "y", "color"]:
            raise FormatError(f"{path}: expected header 'ts,user,x,y,color', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                t = int(row[0])
                x = int(row[2])
                y = int(row[3])
                c = int(row[4])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            u = row[1]
            if not u:
                raise FormatError(f"{path}:{lineno}: empty user id")
            if c < 0:
                raise FormatError(f"{path}:{lineno}: negative color {c}")
            if not (0 <= x < width and 0 <= y < height):
                if lenient:
                    skipped += 1
                    continue
                raise FormatError(
                    f"{path}:{lineno}: coordinate ({x},{y}) outside {width}x{height} canvas"
                )
            rows.append((t, u, x, y, c))
    stream = make_stream(width, height, rows, skipped=skipped)
    logger.info("parsed %d events from %s (%d skipped)", len(stream), path, skipped)
    return stream


def write_events(stream: EventStream, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["ts", "user", "x", "y", "color"])
        users = stream.users
        for i in range(len(stream)):
            w.writerow([
                int(stream.ts[i]),
                users[int(stream.user_idx[i])],
                int(stream.x[i]),
                int(stream.y[i]),
                int(stream.color[i]),
            ])


@dataclass
class AtlasLabels:
    """Per-pixel optional artwork label; -1 marks unannotated pixels."""

    width: int
    height: int
    labels: np.ndarray  # int32[height, width], -1 = unannotated

    def annotated_fraction(self) -> float:
        return float(np.count_nonzero(self.labels >= 0)) / (self.width * self.height)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AtlasLabels):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.labels, other.labels)
        )


def load_atlas(path, width: int, height: int) -> AtlasLabels:
    """Load atlas annotations; duplicate pixels are an overlap error."""
    labels = np.full((height, width), -1, dtype=np.int32)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x", "y", "label"]:
            raise FormatError(f"{path}: expected header 'x,y,label', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                x = int(row[0])
                y = int(row[1])
                lab = int(row[2])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if not (0 <= x < width and 0 <= y < height):
                raise FormatError(f"{path}:{lineno}: pixel ({x},{y}) outside canvas")
            if labels[y, x] != -1:
                raise FormatError(f"{path}:{lineno}: overlapping annotation at ({x},{y})")
            labels[y, x] = lab
    return AtlasLabels(width=width, height=height, labels=labels)


def write_atlas(atlas: AtlasLabels, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "label"])
        ys, xs = np.nonzero(atlas.labels >= 0)
        for y, x in zip(ys.tolist(), xs.tolist()):
            w.writerow([x, y, int(atlas.labels[y, x])])


def load_groups(path) -> dict[str, int]:
    out: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["user", "group"]:
            raise FormatError(f"{path}: expected header 'user,group', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise FormatError(f"{path}:{lineno}: expected 2 fields")
            out[row[0]] = int(row[1])
    return out


def write_groups(groups: dict[str, int], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "group"])
        for u, g in groups.items():
            w.writerow([u, g])


@dataclass
class SynthConfig:
    """Planted-group generator settings.

    Users are assigned to groups uniformly at random; the canvas is tiled
    into ``num_groups`` axis-aligned rectangles (one per group).  Each event
    picks a user from the activity profile, then a pixel uniform inside the
    user's group rectangle with probability 1 - noise, else uniform anywhere.
    ``activity`` is "uniform" or "zipf" (weights 1/rank^zipf_s, mirroring the
    heavy-tailed per-user click counts seen in real canvas logs).
    """

    num_users: int
    num_groups: int
    width: int
    height: int
    num_events: int
    noise: float
    seed: int
    activity: str = "uniform"
    zipf_s: float = 1.0

    def validate(self) -> None:
        problems = []
        if self.num_users < 1:
            problems.append("num_users must be >= 1")
        if not (1 <= self.num_groups <= self.num_users):
            problems.append("num_groups must be in [1, num_users]")
        if self.width < 1 or self.height < 1:
            problems.append("canvas dimensions must be positive")
        if self.num_events < 0:
            problems.append("num_events must be >= 0")
        if not (0.0 <= self.noise <= 1.0):
            problems.append("noise must be in [0, 1]")
        if self.activity not in ("zipf", "uniform"):
            problems.append(f"unknown activity profile {self.activity!r}")
        if problems:
            raise ValueError("; ".join(problems))


def group_rectangles(width: int, height: int, num_groups: int) -> list[tuple[int, int, int, int]]:
    """Partition the canvas into num_groups axis-aligned rectangles.

    Uses the most-square rows x cols factorization of num_groups; rectangle
    g covers x in [x0, x1) and y in [y0, y1).  Raises if any rectangle would
    be empty.
    """
    rows = int(np.floor(np.sqrt(num_groups)))
    while num_groups % rows != 0:
        rows -= 1
    cols = num_groups // rows
    if cols > width or rows > height:
        raise ValueError(
            f"cannot tile {width}x{height} canvas into {num_groups} rectangles ({rows}x{cols})"
        )
    rects = []
    for r in range(rows):
        y0 = r * height // rows
        y1 = (r + 1) * height // rows
        for c in range(cols):
            x0 = c * width // cols
            x1 = (c + 1) * width // cols
            rects.append((x0, y0, x1, y1))
    return rects


_TS_BASE = 1_500_000_000_000  # arbitrary epoch-ms origin for synthetic logs
_TS_STEP = 250


def generate_synthetic(cfg: SynthConfig) -> tuple[EventStream, AtlasLabels, dict[str, int]]:
    """Generate a planted-group event stream plus exact ground truth.

    Deterministic across platforms: all draws come from a counter-mode
    splitmix64 stream keyed by cfg.seed (group assignment first, then five
    counters per event: user, noise, x, y, color).
    """
    cfg.validate()
    rects = group_rectangles(cfg.width, cfg.height, cfg.num_groups)

    users = [f"u{i:05d}" for i in range(cfg.num_users)]
    group_draw = splitmix64_array(cfg.seed, 0, cfg.num_users)
    group_of = (group_draw % np.uint64(cfg.num_groups)).astype(np.int32)

    n = cfg.num_events
    base = cfg.num_users
    r_user = splitmix64_array(cfg.seed, base + 0 * n, n)
    r_noise = splitmix64_array(cfg.seed, base + 1 * n, n)
    r_x = splitmix64_array(cfg.seed, base + 2 * n, n)
    r_y = splitmix64_array(cfg.seed, base + 3 * n, n)
    r_color = splitmix64_array(cfg.seed, base + 4 * n, n)

    if cfg.activity == "uniform":
        uidx = (r_user % np.uint64(cfg.num_users)).astype(np.int32)
    else:
        weights = 1.0 / np.arange(1, cfg.num_users + 1, dtype=np.float64) ** cfg.zipf_s
        cum = np.cumsum(weights)
        cum /= cum[-1]
        u01 = r_user.astype(np.float64) / _U64_SCALE
        uidx = np.searchsorted(cum, u01, side="right").astype(np.int32)
        uidx = np.minimum(uidx, cfg.num_users - 1)

    noisy = (r_noise.astype(np.float64) / _U64_SCALE) < cfg.noise

    rect_arr = np.asarray(rects, dtype=np.int64)  # (G, 4): x0 y0 x1 y1
    g = group_of[uidx].astype(np.int64)
    x0 = rect_arr[g, 0]
    y0 = rect_arr[g, 1]
    rw = rect_arr[g, 2] - x0
    rh = rect_arr[g, 3] - y0
    xs = (x0 + (r_x % rw.astype(np.uint64)).astype(np.int64)).astype(np.int32)
    ys = (y0 + (r_y % rh.astype(np.uint64)).astype(np.int64)).astype(np.int32)
    xs_noise = (r_x % np.uint64(cfg.width)).astype(np.int32)
    ys_noise = (r_y % np.uint64(cfg.height)).astype(np.int32)
    xs = np.where(noisy, xs_noise, xs)
    ys = np.where(noisy, ys_noise, ys)

    colors = (r_color % np.uint64(16)).astype(np.int32)
    ts = _TS_BASE + _TS_STEP * np.arange(1, n + 1, dtype=np.int64)

    stream = EventStream(
        width=cfg.width,
        height=cfg.height,
        ts=ts,
        user_idx=uidx,
        x=xs,
        y=ys,
        color=colors,
        users=users,
    )

    labels = np.empty((cfg.height, cfg.width), dtype=np.int32)
    for gi, (ax0, ay0, ax1, ay1) in enumerate(rects):
        labels[ay0:ay1, ax0:ax1] = gi
    atlas = AtlasLabels(width=cfg.width, height=cfg.height, labels=labels)

    groups = {users[i]: int(group_of[i]) for i in range(cfg.num_users)}
    return stream, atlas, groups
