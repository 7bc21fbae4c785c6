"""Hot numeric kernels: canvas replay, context scoring, and ranking SGD.

Every kernel below is written as a plain Python function over numpy arrays
and compiled with numba ``@njit`` at import time.  Setting the environment
variable ``COLLABCANVAS_NO_NUMBA=1`` (or importing without numba installed)
selects the uncompiled pure-numpy path instead; both paths execute the exact
same statements, so their outputs are bit-identical.  The benchmark script
``benchmarks/bench_kernels.py`` times the two paths against each other.

All randomness inside kernels comes from a splitmix64 counter generator so
the compiled and fallback paths share one deterministic stream.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("COLLABCANVAS_NO_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

NUMBA_ENABLED = False
if not _DISABLED:
    try:
        from numba import njit as _njit

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def _jit(fn):
    if NUMBA_ENABLED:
        return _njit(cache=True)(fn)
    return fn


# splitmix64 constants (Steele, Lea & Flood mixing function).
_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_MULT1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MULT2 = np.uint64(0x94D049BB133111EB)
_SH30 = np.uint64(30)
_SH27 = np.uint64(27)
_SH31 = np.uint64(31)

# Moore neighborhood scan order, row-major.  This order is part of the
# deterministic contract: context multisets list contributors in this order.
_NEIGHBOR_DY = np.array([-1, -1, -1, 0, 0, 1, 1, 1], dtype=np.int64)
_NEIGHBOR_DX = np.array([-1, 0, 1, -1, 1, -1, 0, 1], dtype=np.int64)


def _mix64(z):
    z = (z ^ (z >> _SH30)) * _SM_MULT1
    z = (z ^ (z >> _SH27)) * _SM_MULT2
    return z ^ (z >> _SH31)


_mix64 = _jit(_mix64)


def splitmix64_array(seed: int, start: int, count: int) -> np.ndarray:
    """Counter-mode splitmix64: values for counters start..start+count-1.

    Vectorized numpy implementation; agrees bit-for-bit with the scalar
    in-kernel generator.
    """
    ctr = np.arange(start, start + count, dtype=np.uint64)
    z = np.uint64(seed) + (ctr + np.uint64(1)) * _SM_GAMMA
    z = (z ^ (z >> _SH30)) * _SM_MULT1
    z = (z ^ (z >> _SH27)) * _SM_MULT2
    return z ^ (z >> _SH31)


def _sm_at(seed, counter):
    # counter-mode draw: state for counter k is seed + (k+1)*gamma
    return _mix64(seed + (counter + np.uint64(1)) * _SM_GAMMA)


_sm_at = _jit(_sm_at)


def _replay_contexts(xs, ys, users, ts, width, height):
    """Replay events in order; emit each event's pre-action neighbor context.

    Returns (ctx_off, ctx_val, last_user, last_time, counts).  Context of
    event i is ctx_val[ctx_off[i]:ctx_off[i+1]]: the last painters of the
    up-to-8 Moore-adjacent pixels, in fixed scan order, skipping pixels that
    were never painted.  The grid state used is strictly before event i.
    """
    n = xs.shape[0]
    last_user = np.full((height, width), -1, dtype=np.int32)
    last_time = np.zeros((height, width), dtype=np.int64)
    counts = np.zeros((height, width), dtype=np.int64)
    ctx_off = np.zeros(n + 1, dtype=np.int64)
    ctx_val = np.empty(8 * n, dtype=np.int32)
    pos = 0
    for i in range(n):
        x = xs[i]
        y = ys[i]
        for j in range(8):
            ny = y + _NEIGHBOR_DY[j]
            nx = x + _NEIGHBOR_DX[j]
            if 0 <= ny < height and 0 <= nx < width:
                v = last_user[ny, nx]
                if v >= 0:
                    ctx_val[pos] = v
                    pos += 1
        ctx_off[i + 1] = pos
        last_user[y, x] = users[i]
        last_time[y, x] = ts[i]
        counts[y, x] += 1
    return ctx_off, ctx_val[:pos].copy(), last_user, last_time, counts


_replay_contexts = _jit(_replay_contexts)


def _context_entries(u, off_a, off_b, ctx_val, off2_a, off2_b, ctx2_val,
                     include_self, dedup, ent_user, ent_w):
    """Merge positive slice (+1) and negative slice (-1) into weighted entries.

    Self-exclusion and per-context dedup are applied before merging.
    Returns the number of entries written into ent_user/ent_w.
    """
    n_ent = 0
    for sign in range(2):
        if sign == 0:
            lo, hi, vals = off_a, off_b, ctx_val
            w = 1.0
        else:
            lo, hi, vals = off2_a, off2_b, ctx2_val
            w = -1.0
        for t in range(lo, hi):
            k = vals[t]
            if not include_self and k == u:
                continue
            if dedup:
                seen = False
                for t2 in range(lo, t):
                    if vals[t2] == k:
                        seen = True
                        break
                if seen:
                    continue
            found = False
            for e in range(n_ent):
                if ent_user[e] == k:
                    ent_w[e] += w
                    found = True
                    break
            if not found:
                ent_user[n_ent] = k
                ent_w[n_ent] = w
                n_ent += 1
    return n_ent


_context_entries = _jit(_context_entries)


def _score_examples(vec, ex_user, ctx_off, ctx_val, include_self, dedup, out):
    """Dot-product scores p_u . q for each example against its own context.

    q is the sum of l2-normalized contributor rows (zero-norm rows contribute
    nothing), after the include_self / dedup filters.
    """
    m = ex_user.shape[0]
    k_dim = vec.shape[1]
    q = np.empty(k_dim, dtype=np.float64)
    for i in range(m):
        u = ex_user[i]
        for d in range(k_dim):
            q[d] = 0.0
        for t in range(ctx_off[i], ctx_off[i + 1]):
            k = ctx_val[t]
            if not include_self and k == u:
                continue
            if dedup:
                seen = False
                for t2 in range(ctx_off[i], t):
                    if ctx_val[t2] == k:
                        seen = True
                        break
                if seen:
                    continue
            ss = 0.0
            for d in range(k_dim):
                v = float(vec[k, d])
                ss += v * v
            if ss > 0.0:
                inv = 1.0 / np.sqrt(ss)
                for d in range(k_dim):
                    q[d] += float(vec[k, d]) * inv
        s = 0.0
        for d in range(k_dim):
            s += float(vec[u, d]) * q[d]
        out[i] = s
    return out


_score_examples = _jit(_score_examples)


def _train_epoch(vec, ex_user, ctx_off, ctx_val, alpha, reg,
                 include_self, dedup, seed):
    """One epoch of pairwise-ranking SGD over the training examples, in order.

    For each example i a negative example j (different actor) is drawn from
    the epoch's splitmix64 stream, and all rows touched by the triplet are
    updated with the analytic gradient of ln(sigmoid(x_i - x_j)) minus the
    l2 penalty on the touched rows.  vec is updated in place (float32 rows,
    float64 arithmetic).  Returns (steps_applied, steps_skipped).
    """
    m = ex_user.shape[0]
    k_dim = vec.shape[1]
    qdiff = np.empty(k_dim, dtype=np.float64)
    gu = np.empty(k_dim, dtype=np.float64)
    gent = np.empty((16, k_dim), dtype=np.float64)
    ent_user = np.empty(16, dtype=np.int32)
    ent_w = np.empty(16, dtype=np.float64)
    applied = np.int64(0)
    skipped = np.int64(0)
    draw = np.uint64(0)
    for i in range(m):
        u = ex_user[i]
        # negative: uniform over examples by another actor
        while True:
            r = _sm_at(seed, draw)
            draw += np.uint64(1)
            j = int(r % np.uint64(m))
            if ex_user[j] != u:
                break
        n_ent = _context_entries(u, ctx_off[i], ctx_off[i + 1], ctx_val,
                                 ctx_off[j], ctx_off[j + 1], ctx_val,
                                 include_self, dedup, ent_user, ent_w)
        if n_ent == 0:
            skipped += 1
            continue
        # qdiff = sum_e w_e * p_e / ||p_e|| ; cache per-entry norm and p_hat.p_u
        for d in range(k_dim):
            qdiff[d] = 0.0
        xhat = 0.0
        for e in range(n_ent):
            k = ent_user[e]
            ss = 0.0
            for d in range(k_dim):
                v = float(vec[k, d])
                ss += v * v
            if ss > 0.0:
                inv = 1.0 / np.sqrt(ss)
                for d in range(k_dim):
                    qdiff[d] += ent_w[e] * float(vec[k, d]) * inv
        for d in range(k_dim):
            xhat += float(vec[u, d]) * qdiff[d]
        s = 1.0 / (1.0 + np.exp(xhat))  # sigmoid(-xhat)
        # target-row gradient (context rows add their own terms below)
        for d in range(k_dim):
            gu[d] = s * qdiff[d]
        for e in range(n_ent):
            k = ent_user[e]
            ss = 0.0
            dot_up = 0.0
            for d in range(k_dim):
                v = float(vec[k, d])
                ss += v * v
                dot_up += v * float(vec[u, d])
            if ss <= 0.0:
                for d in range(k_dim):
                    gent[e, d] = 0.0
                continue
            norm = np.sqrt(ss)
            inv = 1.0 / norm
            proj = dot_up * inv * inv  # (p_hat . p_u) / ||p||
            c = s * ent_w[e] * inv
            for d in range(k_dim):
                gent[e, d] = c * (float(vec[u, d]) - float(vec[k, d]) * proj)
        # apply: regularize each involved row exactly once
        for e in range(n_ent):
            k = ent_user[e]
            if k == u:
                for d in range(k_dim):
                    gu[d] += gent[e, d]
            else:
                for d in range(k_dim):
                    nv = float(vec[k, d]) + alpha * (gent[e, d] - 2.0 * reg * float(vec[k, d]))
                    vec[k, d] = nv
        for d in range(k_dim):
            nv = float(vec[u, d]) + alpha * (gu[d] - 2.0 * reg * float(vec[u, d]))
            vec[u, d] = nv
        applied += 1
    return applied, skipped


_train_epoch = _jit(_train_epoch)


def replay_contexts(xs, ys, users, ts, width, height):
    return _replay_contexts(xs, ys, users, ts, width, height)


def score_examples(vec, ex_user, ctx_off, ctx_val, include_self=True, dedup=False):
    out = np.empty(ex_user.shape[0], dtype=np.float64)
    if NUMBA_ENABLED:
        return _score_examples(vec, ex_user, ctx_off, ctx_val, include_self, dedup, out)
    with np.errstate(over="ignore"):
        return _score_examples(vec, ex_user, ctx_off, ctx_val, include_self, dedup, out)


def train_epoch(vec, ex_user, ctx_off, ctx_val, alpha, reg,
                include_self, dedup, seed, epoch):
    """Run one SGD epoch; the stream is re-keyed per epoch for determinism."""
    epoch_seed = np.uint64(seed) ^ _mix64_host(np.uint64(epoch))
    if NUMBA_ENABLED:
        return _train_epoch(vec, ex_user, ctx_off, ctx_val,
                            float(alpha), float(reg),
                            include_self, dedup, epoch_seed)
    with np.errstate(over="ignore"):
        return _train_epoch(vec, ex_user, ctx_off, ctx_val,
                            float(alpha), float(reg),
                            include_self, dedup, epoch_seed)


def _mix64_host(z: np.uint64) -> np.uint64:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _SH30)) * _SM_MULT1
        z = (z ^ (z >> _SH27)) * _SM_MULT2
        return z ^ (z >> _SH31)


def warmup_jit() -> None:
    """Force compilation of all kernels on a tiny input (no-op without numba)."""
    xs = np.array([0, 1, 1], dtype=np.int64)
    ys = np.array([0, 0, 1], dtype=np.int64)
    us = np.array([0, 1, 0], dtype=np.int32)
    ts = np.array([1, 2, 3], dtype=np.int64)
    off, val, lu, lt, cnt = replay_contexts(xs, ys, us, ts, 2, 2)
    vec = np.zeros((2, 4), dtype=np.float32)
    vec[0, 0] = 1.0
    vec[1, 1] = 1.0
    ex = np.array([0, 1], dtype=np.int32)
    score_examples(vec, ex, off[:3], val[: off[2]])
    train_epoch(vec, ex, off[:3], val[: off[2]], 0.01, 0.0, True, False, 1, 0)
