"""Compiled inner loops for the deletion dynamics and the permutation construction."""

import numpy as np
from numba import njit


@njit(cache=True)
def run_deletions(attrs, a_vals, n_init, ranked, geometric, lifetimes, seed):
    """Replay arrivals through the live set.

    Particles ``0 .. n_init-1`` form the initial population; the rest arrive in
    index order. Returns ``(trigger, attempts)`` where ``trigger[k]`` is the
    index of the arrival that deleted particle ``k`` (-1 if still alive).

    ``geometric`` switches from per-arrival Bernoulli(a) trials to deleting a
    particle once its attempt count reaches its pre-drawn lifetime.
    """
    np.random.seed(seed)
    n = attrs.shape[0]
    live_x = np.empty(n)
    live_id = np.empty(n, dtype=np.int64)
    trigger = np.full(n, -1, dtype=np.int64)
    attempts = np.zeros(n, dtype=np.int64)
    m = 0
    for k in range(n):
        y = attrs[k]
        w = 0
        hi = 0
        if k >= n_init:
            hi = np.searchsorted(live_x[:m], y) if ranked else m
            for i in range(hi):
                pid = live_id[i]
                attempts[pid] += 1
                if geometric:
                    dead = attempts[pid] >= lifetimes[pid]
                else:
                    dead = np.random.random() < a_vals[pid]
                if dead:
                    trigger[pid] = k
                else:
                    live_x[w] = live_x[i]
                    live_id[w] = live_id[i]
                    w += 1
        removed = hi - w
        if removed == 0:
            pos = np.searchsorted(live_x[:m], y)
            for i in range(m, pos, -1):
                live_x[i] = live_x[i - 1]
                live_id[i] = live_id[i - 1]
            live_x[pos] = y
            live_id[pos] = k
        else:
            # survivors of the scanned prefix occupy [0, w); the tail [hi, m)
            # is already >= y under the ranked rule
            if not ranked:
                for i in range(hi, m):
                    live_x[w + i - hi] = live_x[i]
                    live_id[w + i - hi] = live_id[i]
                pos = np.searchsorted(live_x[: m - removed], y)
                for i in range(m - removed, pos, -1):
                    live_x[i] = live_x[i - 1]
                    live_id[i] = live_id[i - 1]
                live_x[pos] = y
                live_id[pos] = k
            else:
                live_x[w] = y
                live_id[w] = k
                for i in range(hi, m):
                    live_x[w + 1 + i - hi] = live_x[i]
                    live_id[w + 1 + i - hi] = live_id[i]
        m = m - removed + 1
    return trigger, attempts


@njit(cache=True)
def later_higher_counts(attrs, order):
    """Q[r, k] = #{j : attrs[r, j] > attrs[r, k], order[r, j] > order[r, k]}.

    ``order`` holds arrival positions. Each row is processed from the last
    arrival backwards with a Fenwick tree over attribute ranks.
    """
    reps, n = attrs.shape
    q = np.zeros((reps, n), dtype=np.int64)
    tree = np.zeros(n + 1, dtype=np.int64)
    for r in range(reps):
        rank_of = np.empty(n, dtype=np.int64)
        by_attr = np.argsort(attrs[r])
        for i in range(n):
            rank_of[by_attr[i]] = i
        by_arrival = np.argsort(order[r])
        tree[:] = 0
        inserted = 0
        for t in range(n - 1, -1, -1):
            k = by_arrival[t]
            rk = rank_of[k] + 1
            # number of inserted ranks <= rk
            s = 0
            i = rk
            while i > 0:
                s += tree[i]
                i -= i & (-i)
            q[r, k] = inserted - s
            i = rk
            while i <= n:
                tree[i] += 1
                i += i & (-i)
            inserted += 1
    return q
