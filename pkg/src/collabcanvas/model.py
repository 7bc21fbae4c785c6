"""Pairwise-ranking user embeddings scored against neighbor-context composites.

A user's score for an action is the dot product of the user's latent vector
with the sum of l2-normalized vectors of the users who last painted the
adjacent pixels.  Training maximizes ln sigmoid(score(positive) -
score(negative)) minus an l2 penalty, by SGD over the training actions in
chronological order with one sampled negative per positive per epoch.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .canvas import NeighborContext, replay
from .events import EventStream

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"CLB1"
MODEL_VERSION = 1


@dataclass
class TrainConfig:
    """Hyperparameters; defaults are alpha=0.04, reg=0.01, k=120."""

    k: int = 120
    alpha: float = 0.04
    reg: float = 0.01
    epochs: int = 10
    seed: int = 7
    include_self: bool = True
    dedup_context: bool = False
    init_scale: float = 0.01

    def validate(self) -> None:
        problems = []
        if self.alpha <= 0:
            problems.append("alpha must be > 0")
        if self.reg < 0:
            problems.append("reg must be >= 0")
        if self.k < 1:
            problems.append("k must be >= 1")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.init_scale <= 0:
            problems.append("init_scale must be > 0")
        if problems:
            raise ValueError("; ".join(problems))


class EmbeddingTable:
    """One K-vector per known user, with an id <-> row map."""

    def __init__(self, users: list[str], vectors: np.ndarray):
        if vectors.ndim != 2 or vectors.shape[0] != len(users):
            raise ValueError("vectors must be (n_users, K)")
        self.users = list(users)
        self.vectors = vectors
        self.index = {u: i for i, u in enumerate(self.users)}

    @property
    def k(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.users)

    def row(self, user: str) -> np.ndarray:
        i = self.index.get(user)
        if i is None:
            raise KeyError(f"unknown user {user!r}")
        return self.vectors[i]

    def save(self, path) -> None:
        """Binary model file: magic, version, K, user table, float32 rows (LE)."""
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<II", MODEL_VERSION, self.k))
            fh.write(struct.pack("<Q", len(self.users)))
            for u in self.users:
                b = u.encode("utf-8")
                fh.write(struct.pack("<I", len(b)))
                fh.write(b)
            fh.write(np.ascontiguousarray(self.vectors, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MODEL_MAGIC:
                raise ValueError(f"{path}: not a model file (magic {magic!r})")
            version, k = struct.unpack("<II", fh.read(8))
            if version != MODEL_VERSION:
                raise ValueError(f"{path}: unsupported model version {version}")
            (n,) = struct.unpack("<Q", fh.read(8))
            users = []
            for _ in range(n):
                (ln,) = struct.unpack("<I", fh.read(4))
                users.append(fh.read(ln).decode("utf-8"))
            raw = fh.read(n * k * 4)
            vectors = np.frombuffer(raw, dtype="<f4").reshape(n, k).copy()
        return cls(users, vectors)

    def to_csv(self, path) -> None:
        """Export rows as ``user,v0..v{K-1}`` for external projection tools."""
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["user"] + [f"v{i}" for i in range(self.k)])
            for u, row in zip(self.users, self.vectors):
                w.writerow([u] + [repr(float(v)) for v in row])


@dataclass
class Triplet:
    """A user with a positive and a negative action's neighbor context."""

    user: str
    pos: NeighborContext
    neg: NeighborContext


def _normalized(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        return np.zeros_like(v, dtype=np.float64)
    return v.astype(np.float64) / n


def compose_context(table: EmbeddingTable, ctx: NeighborContext) -> np.ndarray:
    """Sum of l2-normalized contributor vectors; empty context gives zeros."""
    q = np.zeros(table.k, dtype=np.float64)
    for u in ctx.contributors:
        q += _normalized(table.row(u))
    return q


def score(table: EmbeddingTable, user: str, ctx: NeighborContext) -> float:
    """Preference score: p_user . compose_context(ctx)."""
    return float(np.dot(table.row(user).astype(np.float64), compose_context(table, ctx)))


def _filtered(ctx: NeighborContext, user: str, include_self: bool, dedup: bool) -> list[str]:
    out: list[str] = []
    for u in ctx.contributors:
        if not include_self and u == user:
            continue
        if dedup and u in out:
            continue
        out.append(u)
    return out


def _triplet_entries(triplet: Triplet, include_self: bool, dedup: bool) -> dict[str, float]:
    """Merged contributor weights: +1 per positive occurrence, -1 per negative."""
    entries: dict[str, float] = {}
    for u in _filtered(triplet.pos, triplet.user, include_self, dedup):
        entries[u] = entries.get(u, 0.0) + 1.0
    for u in _filtered(triplet.neg, triplet.user, include_self, dedup):
        entries[u] = entries.get(u, 0.0) - 1.0
    return entries


def _triplet_xhat(table: EmbeddingTable, triplet: Triplet,
                  include_self: bool = True, dedup: bool = False) -> float:
    p_u = table.row(triplet.user).astype(np.float64)
    qdiff = np.zeros(table.k, dtype=np.float64)
    for u, w in _triplet_entries(triplet, include_self, dedup).items():
        qdiff += w * _normalized(table.row(u))
    return float(np.dot(p_u, qdiff))


def bpr_objective(table: EmbeddingTable, triplets: list[Triplet], reg: float,
                  include_self: bool = True, dedup: bool = False) -> float:
    """Ranking criterion: sum of ln sigmoid(xhat) minus reg * ||theta||^2."""
    total = 0.0
    for t in triplets:
        xhat = _triplet_xhat(table, t, include_self, dedup)
        # ln sigmoid(x) computed stably
        total += -np.logaddexp(0.0, -xhat)
    total -= reg * float(np.sum(table.vectors.astype(np.float64) ** 2))
    return float(total)


def bpr_gradient(table: EmbeddingTable, triplets: list[Triplet], reg: float,
                 include_self: bool = True, dedup: bool = False) -> np.ndarray:
    """Analytic gradient of bpr_objective w.r.t. every table row.

    Gradients flow through the contributor normalization with the full
    Jacobian (I - h h^T)/||p|| where h = p/||p||.
    """
    grad = np.zeros((len(table), table.k), dtype=np.float64)
    vec = table.vectors.astype(np.float64)
    for t in triplets:
        if t.user not in table.index:
            raise KeyError(f"unknown user {t.user!r}")
        ui = table.index[t.user]
        entries = _triplet_entries(t, include_self, dedup)
        p_u = vec[ui]
        qdiff = np.zeros(table.k, dtype=np.float64)
        for u, w in entries.items():
            qdiff += w * _normalized(vec[table.index[u]])
        xhat = float(np.dot(p_u, qdiff))
        s = 1.0 / (1.0 + np.exp(xhat))  # sigmoid(-xhat)
        grad[ui] += s * qdiff
        for u, w in entries.items():
            ki = table.index[u]
            p_k = vec[ki]
            norm = float(np.linalg.norm(p_k))
            if norm == 0.0:
                continue
            h = p_k / norm
            grad[ki] += s * w * (p_u - h * float(np.dot(h, p_u))) / norm
    grad -= 2.0 * reg * vec
    return grad


def sample_negative(rng: np.random.Generator, pool_users: np.ndarray, user_idx: int) -> int:
    """Uniform index into the action pool among actions by another actor."""
    eligible = np.nonzero(pool_users != user_idx)[0]
    if eligible.size == 0:
        raise ValueError("action pool contains no action by another user")
    return int(eligible[rng.integers(0, eligible.size)])


def sgd_step(table: EmbeddingTable, triplet: Triplet, cfg: TrainConfig) -> None:
    """One ranking-ascent step on the rows touched by the triplet (in place).

    Every involved row r gets r += alpha * (sigmoid(-xhat) * dxhat/dr -
    2 * reg * r); triplets whose filtered contexts are both empty are a no-op.
    """
    ui = table.index.get(triplet.user)
    if ui is None:
        raise KeyError(f"unknown user {triplet.user!r}")
    entries = _triplet_entries(triplet, cfg.include_self, cfg.dedup_context)
    if not entries:
        return
    vec = table.vectors
    p_u = vec[ui].astype(np.float64)
    qdiff = np.zeros(table.k, dtype=np.float64)
    cache = []
    for u, w in entries.items():
        ki = table.index.get(u)
        if ki is None:
            raise KeyError(f"unknown user {u!r}")
        p_k = vec[ki].astype(np.float64)
        norm = float(np.linalg.norm(p_k))
        cache.append((ki, w, p_k, norm))
        if norm > 0.0:
            qdiff += w * p_k / norm
    xhat = float(np.dot(p_u, qdiff))
    if not np.isfinite(xhat):
        raise FloatingPointError(f"non-finite score {xhat} in sgd_step")
    s = 1.0 / (1.0 + np.exp(xhat))
    g_u = s * qdiff
    updates = []
    for ki, w, p_k, norm in cache:
        if norm == 0.0:
            g_k = np.zeros(table.k, dtype=np.float64)
        else:
            h = p_k / norm
            g_k = s * w * (p_u - h * float(np.dot(h, p_u))) / norm
        if ki == ui:
            g_u = g_u + g_k
        else:
            updates.append((ki, p_k + cfg.alpha * (g_k - 2.0 * cfg.reg * p_k)))
    updates.append((ui, p_u + cfg.alpha * (g_u - 2.0 * cfg.reg * p_u)))
    for ki, new in updates:
        if not np.all(np.isfinite(new)):
            raise FloatingPointError(f"non-finite update for row {ki} in sgd_step")
        vec[ki] = new.astype(vec.dtype)


@dataclass
class TrainResult:
    table: EmbeddingTable
    probe_auc: list[float] = field(default_factory=list)
    steps_applied: int = 0
    steps_skipped: int = 0


def slice_csr(ctx_off: np.ndarray, ctx_val: np.ndarray, start: int, stop: int):
    """Re-base a CSR (offsets, values) pair onto rows [start, stop)."""
    off = ctx_off[start : stop + 1] - ctx_off[start]
    val = ctx_val[ctx_off[start] : ctx_off[stop]]
    return off.astype(np.int64), val


def gather_csr(ctx_off: np.ndarray, ctx_val: np.ndarray, rows: np.ndarray):
    """CSR restricted to the given row indices, in the given order."""
    lens = (ctx_off[1:] - ctx_off[:-1])[rows]
    off = np.zeros(rows.size + 1, dtype=np.int64)
    np.cumsum(lens, out=off[1:])
    val = np.empty(int(off[-1]), dtype=ctx_val.dtype)
    for i, r in enumerate(rows.tolist()):
        val[off[i] : off[i + 1]] = ctx_val[ctx_off[r] : ctx_off[r + 1]]
    return off, val


def train(stream: EventStream, cfg: TrainConfig, n_replay_only: int = 0,
          probe_size: int = 2048) -> TrainResult:
    """Train embeddings over a replayed stream.

    The first ``n_replay_only`` events only drive the canvas replay (their
    painters still receive embedding rows and appear in contexts); the rest
    are the training examples, visited in chronological order each epoch with
    one freshly sampled negative per example.  Logs a held-in probe AUC per
    epoch.  Deterministic for a fixed config.
    """
    cfg.validate()
    n = len(stream)
    m = n - n_replay_only
    if m <= 0:
        raise ValueError("empty training set")
    rep = replay(stream)
    ex_user = stream.user_idx[n_replay_only:].astype(np.int32)
    ctx_off, ctx_val = slice_csr(rep.ctx_off, rep.ctx_val, n_replay_only, n)

    actors = np.unique(ex_user)
    if actors.size < 2:
        raise ValueError("training set needs actions from at least 2 users")

    n_users = len(stream.users)
    rng = np.random.default_rng(cfg.seed)
    vectors = rng.normal(0.0, cfg.init_scale, size=(n_users, cfg.k)).astype(np.float32)
    table = EmbeddingTable(stream.users, vectors)

    # held-in probe: fixed example subset with fixed negatives
    probe_rng = np.random.default_rng([cfg.seed, 0xC0FFEE])
    p_sz = min(probe_size, m)
    probe_idx = np.sort(probe_rng.choice(m, size=p_sz, replace=False))
    probe_neg = np.empty(p_sz, dtype=np.int64)
    for i, pi in enumerate(probe_idx.tolist()):
        probe_neg[i] = sample_negative(probe_rng, ex_user, int(ex_user[pi]))
    probe_pos_off, probe_pos_val = gather_csr(ctx_off, ctx_val, probe_idx)
    probe_neg_off, probe_neg_val = gather_csr(ctx_off, ctx_val, probe_neg)
    probe_user = ex_user[probe_idx]

    result = TrainResult(table=table)
    for epoch in range(cfg.epochs):
        applied, skipped = _kernels.train_epoch(
            vectors, ex_user, ctx_off, ctx_val,
            cfg.alpha, cfg.reg, cfg.include_self, cfg.dedup_context,
            cfg.seed, epoch,
        )
        result.steps_applied += int(applied)
        result.steps_skipped += int(skipped)
        pos_s = _kernels.score_examples(vectors, probe_user, probe_pos_off, probe_pos_val,
                                        cfg.include_self, cfg.dedup_context)
        neg_s = _kernels.score_examples(vectors, probe_user, probe_neg_off, probe_neg_val,
                                        cfg.include_self, cfg.dedup_context)
        diff = pos_s - neg_s
        auc = float((np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)) / p_sz)
        result.probe_auc.append(auc)
        logger.info("epoch %d/%d: probe auc %.4f (%d steps, %d skipped)",
                    epoch + 1, cfg.epochs, auc, int(applied), int(skipped))
    return result
