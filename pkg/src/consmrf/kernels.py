"""Jitted inner loops for pairwise-ranking SGD and loss estimation.

Everything here releases the GIL, so one Python thread per relation gives real
shared-memory parallelism. Randomness comes from explicit splitmix64 states
(see :mod:`consmrf.rng`): a worker's draws depend only on its own state, never
on scheduling.

Weight layout: relation weights are passed as flat float64 arrays whose length
depends on the shape code below (0 entries / k entries / k*k row-major).
"""
from __future__ import annotations

import math

import numba
import numpy as np

U64 = np.uint64
_GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)

# Relation weight shape codes.
IDENTITY = 0
DIAGONAL = 1
FULL = 2

# Kernel status codes.
OK = 0
SATURATED = 1


@numba.njit(inline="always")
def _next_u64(state):
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return state, z ^ (z >> U64(31))


@numba.njit(inline="always")
def _rand_below(state, n):
    state, z = _next_u64(state)
    return state, np.int64(z % U64(n))


@numba.njit(cache=True)
def next_u64(state):
    """Python-visible stepper, used by tests to check stream parity."""
    return _next_u64(state)


@numba.njit(inline="always")
def _lower_bound(keys, key):
    lo = 0
    hi = keys.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    return lo


@numba.njit(inline="always")
def _has_key(keys, key):
    i = _lower_bound(keys, key)
    return i < keys.shape[0] and keys[i] == key


@numba.njit(cache=True)
def rejection_cap(n_entities, degree):
    """Attempt bound for the unlinked-object sampler: max(100, ceil(20*|E|/free))."""
    free = n_entities - degree
    denom = free if free > 1 else 1
    cap = (20 * n_entities + denom - 1) // denom
    if cap < 100:
        cap = 100
    return cap


@numba.njit(inline="always")
def _sample_unlinked(state, keys, n_entities, s):
    """Uniform object with (s, obj) absent from `keys`; -1 when the cap is hit."""
    base = s * n_entities
    degree = _lower_bound(keys, base + n_entities) - _lower_bound(keys, base)
    cap = rejection_cap(n_entities, degree)
    for _ in range(cap):
        state, cand = _rand_below(state, n_entities)
        if not _has_key(keys, base + cand):
            return state, cand
    return state, np.int64(-1)


@numba.njit(cache=True)
def sample_unlinked(state, keys, n_entities, s):
    """Python-visible rejection sampler (same code path the SGD loops use)."""
    return _sample_unlinked(state, keys, n_entities, s)


@numba.njit(inline="always")
def _pair_scores(A, W, shape, s, o, o2, buf_asw):
    """Scores of (s, o) and (s, o2); fills buf_asw with a_s @ W for FULL."""
    k = A.shape[1]
    y_pos = 0.0
    y_neg = 0.0
    if shape == IDENTITY:
        for f in range(k):
            y_pos += A[s, f] * A[o, f]
            y_neg += A[s, f] * A[o2, f]
    elif shape == DIAGONAL:
        for f in range(k):
            sw = A[s, f] * W[f]
            y_pos += sw * A[o, f]
            y_neg += sw * A[o2, f]
    else:
        for g in range(k):
            acc = 0.0
            for f in range(k):
                acc += A[s, f] * W[f * k + g]
            buf_asw[g] = acc
            y_pos += acc * A[o, g]
            y_neg += acc * A[o2, g]
    return y_pos, y_neg


@numba.njit(inline="always")
def _apply_row(A, Z, V, acc_a, row, g, sign, eta, lam, rho, delta):
    # Total per-coordinate gradient: loss part + L2 + dual + consensus penalty;
    # ADAGRAD accumulates the square of the total before stepping.
    k = A.shape[1]
    for f in range(k):
        tot = sign * g[f] + lam * A[row, f] + V[row, f] + rho * (A[row, f] - Z[row, f])
        acc_a[row, f] += tot * tot
        A[row, f] -= eta * tot / (math.sqrt(acc_a[row, f]) + delta)


@numba.njit(inline="always")
def _bpr_step(A, W, shape, Z, V, acc_a, acc_w, s, o, o2, eta, lam, rho, delta,
              weight, buf_as, buf_diff, buf_gs, buf_go, buf_asw):
    k = A.shape[1]
    y_pos, y_neg = _pair_scores(A, W, shape, s, o, o2, buf_asw)
    c = weight * (-1.0 / (1.0 + math.exp(y_pos - y_neg)))
    # Loss gradients are all evaluated at the pre-update values; the touched
    # rows may alias (s == o etc.), so snapshot what the updates need.
    for f in range(k):
        buf_as[f] = A[s, f]
        buf_diff[f] = A[o, f] - A[o2, f]
    if shape == IDENTITY:
        for f in range(k):
            buf_gs[f] = c * buf_diff[f]
            buf_go[f] = c * buf_as[f]
    elif shape == DIAGONAL:
        for f in range(k):
            buf_gs[f] = c * W[f] * buf_diff[f]
            buf_go[f] = c * buf_as[f] * W[f]
    else:
        for f in range(k):
            acc = 0.0
            for g in range(k):
                acc += W[f * k + g] * buf_diff[g]
            buf_gs[f] = c * acc
            buf_go[f] = c * buf_asw[f]
    _apply_row(A, Z, V, acc_a, s, buf_gs, 1.0, eta, lam, rho, delta)
    _apply_row(A, Z, V, acc_a, o, buf_go, 1.0, eta, lam, rho, delta)
    _apply_row(A, Z, V, acc_a, o2, buf_go, -1.0, eta, lam, rho, delta)
    # Relation weights carry only the L2 term: the consensus constraint binds
    # entity factors alone.
    if shape == DIAGONAL:
        for f in range(k):
            gw = c * buf_as[f] * buf_diff[f] + lam * W[f]
            acc_w[f] += gw * gw
            W[f] -= eta * gw / (math.sqrt(acc_w[f]) + delta)
    elif shape == FULL:
        for f in range(k):
            for g in range(k):
                idx = f * k + g
                gw = c * buf_as[f] * buf_diff[g] + lam * W[idx]
                acc_w[idx] += gw * gw
                W[idx] -= eta * gw / (math.sqrt(acc_w[idx]) + delta)


@numba.njit(cache=True, nogil=True)
def run_relation_sgd(A, W, shape, Z, V, acc_a, acc_w, subs, objs, keys,
                     n_entities, eta, lam, rho, delta, n_steps, state):
    """`n_steps` draws of ((s,o) ~ positives, o' ~ unlinked) with one SGD update each.

    Mutates A, W and the ADAGRAD accumulators in place. Returns the advanced
    RNG state and a status code.
    """
    k = A.shape[1]
    buf_as = np.empty(k)
    buf_diff = np.empty(k)
    buf_gs = np.empty(k)
    buf_go = np.empty(k)
    buf_asw = np.empty(k)
    n_pairs = subs.shape[0]
    for _ in range(n_steps):
        state, i = _rand_below(state, n_pairs)
        s = subs[i]
        o = objs[i]
        state, o2 = _sample_unlinked(state, keys, n_entities, s)
        if o2 < 0:
            return state, SATURATED
        _bpr_step(A, W, shape, Z, V, acc_a, acc_w, s, o, o2, eta, lam, rho,
                  delta, 1.0, buf_as, buf_diff, buf_gs, buf_go, buf_asw)
    return state, OK


@numba.njit(inline="always")
def _pick_relation(cum_sizes, z):
    # First index whose cumulative size exceeds z.
    lo = 0
    hi = cum_sizes.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if cum_sizes[mid] <= z:
            lo = mid + 1
        else:
            hi = mid
    return lo


@numba.njit(cache=True, nogil=True)
def run_mixed_sgd(A, W_stack, shape, Z, V, acc_a, acc_w_stack, subs, objs,
                  pair_offsets, keys_flat, key_offsets, cum_sizes, weights,
                  n_entities, eta, lam, rho, delta, n_steps, pick_state, states):
    """SGD over samples interleaved across relations (shared or per-target factors).

    Relations are drawn proportionally to their positive counts from
    `pick_state`; entity draws for relation r come from `states[r]` (updated
    in place). `weights[r]` scales relation r's loss gradient; a zero weight
    skips the sample entirely.
    """
    k = A.shape[1]
    buf_as = np.empty(k)
    buf_diff = np.empty(k)
    buf_gs = np.empty(k)
    buf_go = np.empty(k)
    buf_asw = np.empty(k)
    n_relations = weights.shape[0]
    total = cum_sizes[n_relations - 1]
    for _ in range(n_steps):
        if n_relations == 1:
            r = 0
        else:
            pick_state, z = _rand_below(pick_state, total)
            r = _pick_relation(cum_sizes, z)
        if weights[r] == 0.0:
            continue
        lo = pair_offsets[r]
        n_pairs = pair_offsets[r + 1] - lo
        st = states[r]
        st, i = _rand_below(st, n_pairs)
        s = subs[lo + i]
        o = objs[lo + i]
        keys = keys_flat[key_offsets[r]:key_offsets[r + 1]]
        st, o2 = _sample_unlinked(st, keys, n_entities, s)
        states[r] = st
        if o2 < 0:
            return pick_state, np.int64(r), SATURATED
        _bpr_step(A, W_stack[r], shape, Z, V, acc_a, acc_w_stack[r], s, o, o2,
                  eta, lam, rho, delta, weights[r], buf_as, buf_diff, buf_gs,
                  buf_go, buf_asw)
    return pick_state, np.int64(-1), OK


@numba.njit(cache=True, nogil=True)
def estimate_bpr_loss(A, W, shape, subs, objs, keys, n_entities, n_samples, state):
    """Monte-Carlo mean of -ln sigmoid(score(s,o) - score(s,o')) over the positives."""
    k = A.shape[1]
    buf_asw = np.empty(k)
    n_pairs = subs.shape[0]
    total = 0.0
    for _ in range(n_samples):
        state, i = _rand_below(state, n_pairs)
        s = subs[i]
        o = objs[i]
        state, o2 = _sample_unlinked(state, keys, n_entities, s)
        if o2 < 0:
            return state, np.nan, SATURATED
        y_pos, y_neg = _pair_scores(A, W, shape, s, o, o2, buf_asw)
        d = y_pos - y_neg
        if d >= 0.0:
            total += math.log1p(math.exp(-d))
        else:
            total += -d + math.log1p(math.exp(d))
    return state, total / n_samples, OK
