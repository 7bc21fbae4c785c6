"""Comparison methods: median position, adjacency counts, communities, MF.

All baselines are fit on the training portion only and are immutable after
construction.  They work in the index space of a stream's user table; the
CSV import/export helpers translate to opaque user-id strings.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- median ---

@dataclass
class MedianModel:
    """Componentwise (lower) median of each user's training click positions."""

    medians: dict[int, tuple[float, float]]

    def __contains__(self, user: int) -> bool:
        return user in self.medians


def fit_median(ex_user: np.ndarray, ex_x: np.ndarray, ex_y: np.ndarray) -> MedianModel:
    medians: dict[int, tuple[float, float]] = {}
    order = np.argsort(ex_user, kind="stable")
    u_sorted = ex_user[order]
    bounds = np.flatnonzero(np.diff(u_sorted)) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [u_sorted.size]])
    for s, e in zip(starts.tolist(), stops.tolist()):
        u = int(u_sorted[s])
        xs = np.sort(ex_x[order[s:e]])
        ys = np.sort(ex_y[order[s:e]])
        k = (xs.size - 1) // 2  # lower median
        medians[u] = (float(xs[k]), float(ys[k]))
    return MedianModel(medians)


def median_score(m: MedianModel, user: int, x: float, y: float) -> float:
    """Negative Euclidean distance to the user's median training position."""
    med = m.medians.get(user)
    if med is None:
        raise KeyError(f"no median for user index {user}")
    return -float(np.hypot(x - med[0], y - med[1]))


# ----------------------------------------------------------- adjacency ----

class AdjacencyCounts:
    """Symmetric sparse co-occurrence counts between users.

    adj(u, v) accumulates 1 every time u performs an action while v is a
    context contributor (and is stored symmetrically).
    """

    def __init__(self, n_users: int):
        self.n_users = n_users
        self._rows: list[dict[int, float]] = [dict() for _ in range(n_users)]
        self.total = 0.0

    def add(self, u: int, v: int, w: float = 1.0) -> None:
        self._rows[u][v] = self._rows[u].get(v, 0.0) + w
        if v != u:
            self._rows[v][u] = self._rows[v].get(u, 0.0) + w
        self.total += w

    def get(self, u: int, v: int) -> float:
        return self._rows[u].get(v, 0.0)

    def row(self, u: int) -> dict[int, float]:
        return self._rows[u]


def build_adjacency(ex_user: np.ndarray, ctx_off: np.ndarray, ctx_val: np.ndarray,
                    n_users: int, multiplicity: bool = True) -> AdjacencyCounts:
    """Accumulate adjacency counts over training actions and their contexts.

    With multiplicity=False a contributor appearing k times in one context
    counts once for that action.
    """
    adj = AdjacencyCounts(n_users)
    m = ex_user.shape[0]
    for i in range(m):
        u = int(ex_user[i])
        lo, hi = int(ctx_off[i]), int(ctx_off[i + 1])
        if multiplicity:
            for t in range(lo, hi):
                adj.add(u, int(ctx_val[t]))
        else:
            seen = set()
            for t in range(lo, hi):
                v = int(ctx_val[t])
                if v not in seen:
                    seen.add(v)
                    adj.add(u, v)
    return adj


def count_score(adj: AdjacencyCounts, user: int, ctx: np.ndarray) -> float:
    """Sum of adjacency counts between the user and the context multiset."""
    row = adj.row(user) if 0 <= user < adj.n_users else {}
    return float(sum(row.get(int(v), 0.0) for v in ctx))


# ---------------------------------------------------------- communities ---

@dataclass
class CommunityConfig:
    max_iter: int = 50
    seed: int = 7
    multiplicity: bool = True


def detect_communities(adj: AdjacencyCounts, max_iter: int = 50, seed: int = 7) -> dict[int, int]:
    """Weighted label propagation over the adjacency graph.

    Users are scanned in ascending index order; each adopts the label with
    the largest total incident weight (self-loops ignored), keeping its own
    on membership in the argmax set, otherwise breaking ties with the seeded
    generator.  Isolated users end up in singleton communities.  Labels are
    re-densified by first occurrence so output is deterministic.
    """
    n = adj.n_users
    labels = list(range(n))
    rng = np.random.default_rng(seed)
    for _ in range(max_iter):
        changed = False
        for u in range(n):
            votes: dict[int, float] = {}
            for v, w in adj.row(u).items():
                if v == u:
                    continue
                lv = labels[v]
                votes[lv] = votes.get(lv, 0.0) + w
            if not votes:
                continue
            best_w = max(votes.values())
            best = sorted(l for l, w in votes.items() if w == best_w)
            if labels[u] in best:
                continue
            pick = best[0] if len(best) == 1 else int(best[rng.integers(len(best))])
            labels[u] = pick
            changed = True
        if not changed:
            break
    dense: dict[int, int] = {}
    out: dict[int, int] = {}
    for u in range(n):
        l = labels[u]
        if l not in dense:
            dense[l] = len(dense)
        out[u] = dense[l]
    return out


def community_score(communities: dict[int, int], user: int, ctx: np.ndarray) -> float:
    """Count of context contributors sharing the user's community."""
    cu = communities.get(user)
    if cu is None:
        raise KeyError(f"user index {user} has no community assignment")
    return float(sum(1 for v in ctx if communities.get(int(v)) == cu))


def write_communities(communities: dict[int, int], users: list[str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "community"])
        for u in sorted(communities):
            w.writerow([users[u], communities[u]])


def load_communities(path, users: list[str]) -> dict[int, int]:
    index = {u: i for i, u in enumerate(users)}
    out: dict[int, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["user", "community"]:
            raise ValueError(f"{path}: expected header 'user,community'")
        for row in reader:
            if not row:
                continue
            i = index.get(row[0])
            if i is not None:
                out[i] = int(row[1])
    return out


# ------------------------------------------------------------------- MF ---

@dataclass
class MFConfig:
    rank: int = 32
    reg: float = 0.1
    sweeps: int = 10
    confidence: float = 40.0
    seed: int = 7


@dataclass
class MFModel:
    """Implicit-feedback factorization of the user x pixel interaction matrix."""

    user_factors: np.ndarray  # float64 [n_users, rank]
    pixel_factors: np.ndarray  # float64 [n_pixels, rank]
    pixel_ids: np.ndarray  # sorted int64 flat pixel indices (y * width + x)
    width: int
    objective: list[float] = field(default_factory=list)

    def pixel_row(self, x: int, y: int) -> np.ndarray | None:
        flat = y * self.width + x
        j = int(np.searchsorted(self.pixel_ids, flat))
        if j < self.pixel_ids.size and self.pixel_ids[j] == flat:
            return self.pixel_factors[j]
        return None


def _als_half_sweep(target: np.ndarray, other: np.ndarray, rows, conf: float, reg: float) -> None:
    """Solve each target row's ridge system exactly (implicit-feedback ALS)."""
    rank = other.shape[1]
    gram = other.T @ other + reg * np.eye(rank)
    for i, (idx, cnt) in enumerate(rows):
        if idx.size == 0:
            target[i] = 0.0
            continue
        Y = other[idx]
        cw = conf * cnt  # c_ui - 1
        A = gram + (Y * cw[:, None]).T @ Y
        b = Y.T @ (1.0 + cw)
        target[i] = np.linalg.solve(A, b)


def mf_objective(user_f: np.ndarray, pixel_f: np.ndarray,
                 u_idx: np.ndarray, p_idx: np.ndarray, cnt: np.ndarray,
                 conf: float, reg: float) -> float:
    """Weighted regularized squared loss over the full (dense) preference matrix."""
    gram_u = user_f.T @ user_f
    gram_p = pixel_f.T @ pixel_f
    total = float(np.sum(gram_u * gram_p))  # sum over all pairs of (x.y)^2
    pred = np.sum(user_f[u_idx] * pixel_f[p_idx], axis=1)
    total -= float(np.sum(pred**2))
    c = 1.0 + conf * cnt
    total += float(np.sum(c * (1.0 - pred) ** 2))
    total += reg * (float(np.sum(user_f**2)) + float(np.sum(pixel_f**2)))
    return total


def mf_train(ex_user: np.ndarray, ex_x: np.ndarray, ex_y: np.ndarray,
             n_users: int, width: int, cfg: MFConfig) -> MFModel:
    """Alternating least squares on the binary user x pixel matrix.

    Confidence weighting 1 + confidence * count; exact ridge solves per row,
    so the objective is non-increasing per half-sweep.
    """
    if ex_user.size == 0:
        raise ValueError("MF needs at least one interaction")
    flat = ex_y.astype(np.int64) * width + ex_x.astype(np.int64)
    pairs = np.stack([ex_user.astype(np.int64), flat], axis=1)
    uniq, cnt = np.unique(pairs, axis=0, return_counts=True)
    u_idx = uniq[:, 0]
    pixel_ids, p_idx = np.unique(uniq[:, 1], return_inverse=True)
    cnt = cnt.astype(np.float64)

    rng = np.random.default_rng(cfg.seed)
    user_f = rng.normal(0.0, 0.01, size=(n_users, cfg.rank))
    pixel_f = rng.normal(0.0, 0.01, size=(pixel_ids.size, cfg.rank))

    def group_rows(key, other, n_rows):
        rows = [(np.empty(0, dtype=np.int64), np.empty(0))] * n_rows
        order = np.argsort(key, kind="stable")
        srt = key[order]
        bounds = np.flatnonzero(np.diff(srt)) + 1
        for s, e in zip(np.concatenate([[0], bounds]).tolist(),
                        np.concatenate([bounds, [srt.size]]).tolist()):
            sel = order[s:e]
            rows[int(srt[s])] = (other[sel], cnt[sel])
        return rows

    user_rows = group_rows(u_idx, p_idx, n_users)
    pixel_rows = group_rows(p_idx, u_idx, pixel_ids.size)

    model = MFModel(user_factors=user_f, pixel_factors=pixel_f,
                    pixel_ids=pixel_ids, width=width)
    model.objective.append(mf_objective(user_f, pixel_f, u_idx, p_idx, cnt,
                                        cfg.confidence, cfg.reg))
    for sweep in range(cfg.sweeps):
        _als_half_sweep(user_f, pixel_f, user_rows, cfg.confidence, cfg.reg)
        model.objective.append(mf_objective(user_f, pixel_f, u_idx, p_idx, cnt,
                                            cfg.confidence, cfg.reg))
        _als_half_sweep(pixel_f, user_f, pixel_rows, cfg.confidence, cfg.reg)
        model.objective.append(mf_objective(user_f, pixel_f, u_idx, p_idx, cnt,
                                            cfg.confidence, cfg.reg))
        logger.debug("ALS sweep %d objective %.6g", sweep + 1, model.objective[-1])
    return model


def mf_score(m: MFModel, user: int, x: int, y: int) -> float:
    """Dot product of user and pixel factors; untouched pixels score 0."""
    if not (0 <= user < m.user_factors.shape[0]):
        raise KeyError(f"unknown user index {user}")
    row = m.pixel_row(x, y)
    if row is None:
        return 0.0
    return float(np.dot(m.user_factors[user], row))
