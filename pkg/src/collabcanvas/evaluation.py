"""Holdout protocol and AUC benchmark across the model and baselines.

Split protocol: the first ``warmup_fraction`` of events only prime the
canvas replay; users with fewer than ``min_actions`` remaining actions are
dropped; one held-out action is sampled per eligible user, the rest form
the training set.  Each triplet pairs a user's held-out action with another
user's held-out action, with both contexts captured at the actions'
historical instants in the full-stream replay.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, baselines
from .canvas import replay
from .events import EventStream
from .model import EmbeddingTable, TrainConfig, train

logger = logging.getLogger(__name__)


@dataclass
class SplitSpec:
    min_actions: int = 10
    warmup_fraction: float = 0.25
    seed: int = 7

    def validate(self) -> None:
        problems = []
        if self.min_actions < 1:
            problems.append("min_actions must be >= 1")
        if not (0.0 <= self.warmup_fraction < 1.0):
            problems.append("warmup_fraction must be in [0, 1)")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class EvalTriplet:
    """A user's held-out action paired with another user's held-out action.

    Contexts are user-index arrays into the source stream's user table,
    captured strictly before each action in the full-stream replay.
    """

    user: int
    pos_x: int
    pos_y: int
    pos_ctx: np.ndarray
    neg_user: int
    neg_x: int
    neg_y: int
    neg_ctx: np.ndarray


@dataclass
class HoldoutSplit:
    """Training portion plus evaluation triplets.

    ``training`` holds the trainable examples (post-warmup, non-held-out);
    ``warmup`` holds the replay-only prefix.  ``replay_stream()`` is their
    chronological concatenation, i.e. everything except held-out events.
    """

    training: EventStream
    warmup: EventStream
    triplets: list[EvalTriplet]
    heldout_indices: np.ndarray

    def replay_stream(self) -> EventStream:
        w, t = self.warmup, self.training
        return EventStream(
            width=t.width,
            height=t.height,
            ts=np.concatenate([w.ts, t.ts]),
            user_idx=np.concatenate([w.user_idx, t.user_idx]),
            x=np.concatenate([w.x, t.x]),
            y=np.concatenate([w.y, t.y]),
            color=np.concatenate([w.color, t.color]),
            users=t.users,
        )


def build_holdout(stream: EventStream, spec: SplitSpec) -> HoldoutSplit:
    """Leave-one-out split with historical-context capture."""
    spec.validate()
    n = len(stream)
    n_warm = int(np.floor(spec.warmup_fraction * n))
    pool_user = stream.user_idx[n_warm:]
    counts = np.bincount(pool_user, minlength=len(stream.users))
    eligible = np.flatnonzero(counts >= spec.min_actions)
    if eligible.size < 2:
        raise ValueError(
            f"need >= 2 users with >= {spec.min_actions} post-warmup actions, "
            f"found {eligible.size}"
        )

    rng = np.random.default_rng(spec.seed)
    # absolute event indices per eligible user, in stream order
    heldout = np.empty(eligible.size, dtype=np.int64)
    pool_order = np.argsort(pool_user, kind="stable")
    pool_sorted = pool_user[pool_order]
    starts = np.searchsorted(pool_sorted, eligible, side="left")
    for i, u in enumerate(eligible.tolist()):
        c = int(counts[u])
        pick = int(rng.integers(c))
        heldout[i] = n_warm + pool_order[starts[i] + pick]

    rep = replay(stream)  # full-history contexts

    neg_pick = np.empty(eligible.size, dtype=np.int64)
    for i in range(eligible.size):
        j = int(rng.integers(eligible.size - 1))
        if j >= i:
            j += 1
        neg_pick[i] = j

    triplets = []
    for i, u in enumerate(eligible.tolist()):
        pi = int(heldout[i])
        ni = int(heldout[neg_pick[i]])
        triplets.append(EvalTriplet(
            user=int(u),
            pos_x=int(stream.x[pi]),
            pos_y=int(stream.y[pi]),
            pos_ctx=rep.ctx_val[rep.ctx_off[pi]:rep.ctx_off[pi + 1]].copy(),
            neg_user=int(stream.user_idx[ni]),
            neg_x=int(stream.x[ni]),
            neg_y=int(stream.y[ni]),
            neg_ctx=rep.ctx_val[rep.ctx_off[ni]:rep.ctx_off[ni + 1]].copy(),
        ))

    held_mask = np.zeros(n, dtype=bool)
    held_mask[heldout] = True
    train_idx = np.flatnonzero(~held_mask[n_warm:]) + n_warm
    split = HoldoutSplit(
        training=stream.take(train_idx),
        warmup=stream.take(slice(0, n_warm)),
        triplets=triplets,
        heldout_indices=heldout,
    )
    logger.info("holdout: %d warmup, %d training, %d triplets",
                n_warm, len(split.training), len(triplets))
    return split


def auc(triplets: list[EvalTriplet], scorer) -> tuple[float, float]:
    """Mean Heaviside of score differences, ties counting one half.

    ``scorer(triplet) -> (pos_score, neg_score)``.  Returns (auc, half-width
    of the normal-approximation 95% interval).  The counting form makes the
    mean exact and independent of iteration order.
    """
    if not triplets:
        raise ValueError("empty evaluation set")
    n = len(triplets)
    n_pos = 0
    n_tie = 0
    for t in triplets:
        ps, ns = scorer(t)
        d = ps - ns
        if d > 0:
            n_pos += 1
        elif d == 0:
            n_tie += 1
    value = (n_pos + 0.5 * n_tie) / n
    ex2 = (n_pos + 0.25 * n_tie) / n
    var = max(ex2 - value * value, 0.0)
    ci = 1.96 * float(np.sqrt(var / n))
    return float(value), ci


@dataclass
class EvalReport:
    rows: list[tuple[str, float, float, int]] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)

    def ok(self) -> bool:
        return not self.failures

    def auc_of(self, method: str) -> float:
        for name, a, _, _ in self.rows:
            if name == method:
                return a
        raise KeyError(method)


def write_report(report: EvalReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "auc", "ci95", "n"])
        for name, a, ci, n in report.rows:
            w.writerow([name, repr(a), repr(ci), n])


KNOWN_BASELINES = ("median", "count", "community", "mf")


def run_benchmark(stream: EventStream, spec: SplitSpec,
                  train_cfg: TrainConfig | None = None,
                  methods: tuple[str, ...] = KNOWN_BASELINES,
                  model: EmbeddingTable | None = None,
                  mf_cfg: baselines.MFConfig | None = None,
                  community_cfg: baselines.CommunityConfig | None = None,
                  count_multiplicity: bool = True,
                  communities_file=None) -> EvalReport:
    """Fit every requested method on the training portion and score the split.

    The embedding row is produced by training on the split when ``train_cfg``
    is given, or by scoring a pre-trained ``model`` as-is.  A failing method
    is recorded in ``report.failures``; the others still run.
    """
    for m in methods:
        if m not in KNOWN_BASELINES:
            raise ValueError(f"unknown baseline {m!r}; known: {KNOWN_BASELINES}")
    split = build_holdout(stream, spec)
    triplets = split.triplets
    report = EvalReport()

    needs_ctx = bool(set(methods) & {"count", "community"}) or train_cfg is not None
    ex_user = split.training.user_idx.astype(np.int32)
    if needs_ctx:
        rep_train = replay(split.replay_stream())
        n_warm = len(split.warmup)
        ctx_off = rep_train.ctx_off[n_warm:] - rep_train.ctx_off[n_warm]
        ctx_val = rep_train.ctx_val[rep_train.ctx_off[n_warm]:]

    def run(name, fit_and_scorer):
        try:
            scorer = fit_and_scorer()
            value, ci = auc(triplets, scorer)
            report.rows.append((name, value, ci, len(triplets)))
            logger.info("%s: auc %.4f +- %.4f (n=%d)", name, value, ci, len(triplets))
        except Exception as exc:  # noqa: BLE001 - per-method isolation is the contract
            logger.exception("method %s failed", name)
            report.failures[name] = f"{type(exc).__name__}: {exc}"

    def embedding_scorer():
        if train_cfg is not None:
            table = train(split.replay_stream(), train_cfg,
                          n_replay_only=len(split.warmup)).table
            include_self, dedup = train_cfg.include_self, train_cfg.dedup_context
        else:
            table = model
            include_self, dedup = True, False
        remap = np.array([table.index.get(u, -1) for u in stream.users], dtype=np.int32)

        def scorer(t: EvalTriplet):
            u = remap[t.user]
            pc = remap[t.pos_ctx]
            nc = remap[t.neg_ctx]
            if u < 0 or np.any(pc < 0) or np.any(nc < 0):
                raise KeyError("triplet references a user unknown to the model")
            off = np.array([0, pc.size, pc.size + nc.size], dtype=np.int64)
            val = np.concatenate([pc, nc]).astype(np.int32)
            s = _kernels.score_examples(table.vectors, np.array([u, u], dtype=np.int32),
                                        off, val, include_self, dedup)
            return float(s[0]), float(s[1])

        return scorer

    if train_cfg is not None or model is not None:
        run("embedding", embedding_scorer)

    if "median" in methods:
        def median_scorer():
            m = baselines.fit_median(ex_user, split.training.x, split.training.y)
            return lambda t: (baselines.median_score(m, t.user, t.pos_x, t.pos_y),
                              baselines.median_score(m, t.user, t.neg_x, t.neg_y))
        run("median", median_scorer)

    adj_cache = {}

    def get_adj():
        if "adj" not in adj_cache:
            adj_cache["adj"] = baselines.build_adjacency(
                ex_user, ctx_off, ctx_val, len(stream.users),
                multiplicity=count_multiplicity)
        return adj_cache["adj"]

    if "count" in methods:
        def count_scorer():
            adj = get_adj()
            return lambda t: (baselines.count_score(adj, t.user, t.pos_ctx),
                              baselines.count_score(adj, t.user, t.neg_ctx))
        run("count", count_scorer)

    if "community" in methods:
        def community_scorer():
            if communities_file is not None:
                comm = baselines.load_communities(communities_file, stream.users)
            else:
                ccfg = community_cfg or baselines.CommunityConfig()
                comm = baselines.detect_communities(get_adj(), ccfg.max_iter, ccfg.seed)
            return lambda t: (baselines.community_score(comm, t.user, t.pos_ctx),
                              baselines.community_score(comm, t.user, t.neg_ctx))
        run("community", community_scorer)

    if "mf" in methods:
        def mf_scorer():
            cfg = mf_cfg or baselines.MFConfig()
            m = baselines.mf_train(ex_user, split.training.x, split.training.y,
                                   len(stream.users), stream.width, cfg)
            return lambda t: (baselines.mf_score(m, t.user, t.pos_x, t.pos_y),
                              baselines.mf_score(m, t.user, t.neg_x, t.neg_y))
        run("mf", mf_scorer)

    return report
