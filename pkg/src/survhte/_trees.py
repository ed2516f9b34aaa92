"""Compiled kernels for regression and log-rank survival trees.

Trees are stored as flat node arrays (``feature``, ``threshold``, ``left``,
``right``); ``feature == -1`` marks a leaf.  Randomness (feature order)
comes from a SplitMix64 state private to each tree, so results do not
depend on thread scheduling.
"""
import numpy as np
from numba import njit



@njit(cache=True, nogil=True)
def _next(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _randint(state, n):
    return np.int64(_next(state) % np.uint64(n))


@njit(cache=True, nogil=True)
def bootstrap_indices(n, seed):
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _randint(state, n)
    return out


@njit(cache=True, nogil=True)
def _shuffle(perm, state):
    for i in range(perm.size - 1, 0, -1):
        j = _randint(state, i + 1)
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp


@njit(cache=True, nogil=True)
def _node_perm(perm, idx, s, e, seed, state):
    """Feature order for a node, keyed on its content rather than on visit
    order (smallest row index and size), so relabelled but otherwise equal
    nodes draw the same features."""
    mn = idx[s]
    for i in range(s + 1, e):
        if idx[i] < mn:
            mn = idx[i]
    state[0] = np.uint64(seed) ^ (np.uint64(mn) * np.uint64(0x9E3779B97F4A7C15)
                                  + np.uint64(e - s))
    for i in range(perm.size):
        perm[i] = i
    _shuffle(perm, state)


@njit(cache=True, nogil=True)
def _partition(idx, s, e, X, f, thr, buf):
    """Stable partition of idx[s:e] into x <= thr, then x > thr."""
    k = 0
    for i in range(s, e):
        if X[idx[i], f] <= thr:
            buf[k] = idx[i]
            k += 1
    n_left = k
    for i in range(s, e):
        if X[idx[i], f] > thr:
            buf[k] = idx[i]
            k += 1
    for i in range(e - s):
        idx[s + i] = buf[i]
    return n_left


@njit(cache=True, nogil=True)
def build_regression_tree(X, y, sample, max_depth, min_split, min_leaf, mtry, seed):
    """Grow one CART regression tree on the rows listed in ``sample``.

    ``max_depth < 0`` means unbounded.  Returns node arrays and leaf values.
    """
    n = sample.size
    d = X.shape[1]
    cap = 2 * n + 1
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    idx = sample.copy()
    buf = np.empty(n, dtype=np.int64)
    st_node = np.empty(cap, dtype=np.int64)
    st_s = np.empty(cap, dtype=np.int64)
    st_e = np.empty(cap, dtype=np.int64)
    st_d = np.empty(cap, dtype=np.int64)
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    perm = np.arange(d)
    xs = np.empty(n)
    ys = np.empty(n)

    sp = 0
    st_node[0] = 0
    st_s[0] = 0
    st_e[0] = n
    st_d[0] = 0
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        s = st_s[sp]
        e = st_e[sp]
        depth = st_d[sp]
        m = e - s
        tot = 0.0
        for i in range(s, e):
            tot += y[idx[i]]
        mean = tot / m
        value[node] = mean
        sse = 0.0
        for i in range(s, e):
            r = y[idx[i]] - mean
            sse += r * r
        if m < min_split or m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        if sse <= 1e-12 * (1.0 + mean * mean) * m:
            continue
        _node_perm(perm, idx, s, e, seed, state)
        best_gain = 1e-12 * sse
        best_f = -1
        best_t = 0.0
        for k in range(d):
            if k >= mtry and best_f >= 0:
                break
            f = perm[k]
            for i in range(m):
                xs[i] = X[idx[s + i], f]
            order = np.argsort(xs[:m], kind="mergesort")
            for i in range(m):
                ys[i] = y[idx[s + order[i]]]
            sl = 0.0
            base = tot * tot / m
            for i in range(m - 1):
                sl += ys[i]
                nl = i + 1
                if nl < min_leaf:
                    continue
                if m - nl < min_leaf:
                    break
                a = xs[order[i]]
                b = xs[order[i + 1]]
                if not a < b:
                    continue
                sr = tot - sl
                gain = sl * sl / nl + sr * sr / (m - nl) - base
                if gain > best_gain * (1.0 + 1e-10):
                    best_gain = gain
                    best_f = f
                    best_t = 0.5 * (a + b)
                    if best_t >= b:
                        best_t = a
        if best_f < 0:
            continue
        n_left = _partition(idx, s, e, X, best_f, best_t, buf)
        feat[node] = best_f
        thr[node] = best_t
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        st_node[sp] = lc
        st_s[sp] = s
        st_e[sp] = s + n_left
        st_d[sp] = depth + 1
        sp += 1
        st_node[sp] = rc
        st_s[sp] = s + n_left
        st_e[sp] = e
        st_d[sp] = depth + 1
        sp += 1
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True, nogil=True)
def apply_tree(feat, thr, left, right, X):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def _logrank_candidates(vals, n_cand):
    u = np.unique(vals)
    if u.size < 2:
        return np.empty(0)
    mids = 0.5 * (u[:-1] + u[1:])
    for i in range(mids.size):
        if not mids[i] < u[i + 1]:
            mids[i] = u[i]
    if mids.size <= n_cand:
        return mids
    out = np.empty(n_cand)
    for j in range(n_cand):
        pos = int(np.floor(j * (mids.size - 1) / (n_cand - 1) + 0.5))
        out[j] = mids[pos]
    return np.unique(out)


@njit(cache=True, nogil=True)
def build_survival_tree(X, time_rank, event, sample, max_depth, min_split, min_leaf,
                        mtry, seed, n_cand):
    """Grow one survival tree with the two-sample log-rank split rule.

    Rows inside every node stay sorted by ``time_rank``; the returned
    ``idx`` array lists the rows of each leaf contiguously in
    ``[leaf_start, leaf_end)``.
    """
    n = sample.size
    d = X.shape[1]
    cap = 2 * n + 1
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    seg_s = np.zeros(cap, dtype=np.int64)
    seg_e = np.zeros(cap, dtype=np.int64)
    order0 = np.argsort(time_rank[sample], kind="mergesort")
    idx = sample[order0].copy()
    buf = np.empty(n, dtype=np.int64)
    st_node = np.empty(cap, dtype=np.int64)
    st_s = np.empty(cap, dtype=np.int64)
    st_e = np.empty(cap, dtype=np.int64)
    st_d = np.empty(cap, dtype=np.int64)
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    perm = np.arange(d)
    nb = n_cand + 1
    atrisk = np.zeros(nb)
    dgrp = np.zeros(nb)
    cnt = np.zeros(nb)
    num = np.zeros(n_cand)
    var = np.zeros(n_cand)
    bins = np.empty(n, dtype=np.int64)
    vals = np.empty(n)

    st_node[0] = 0
    st_s[0] = 0
    st_e[0] = n
    st_d[0] = 0
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        s = st_s[sp]
        e = st_e[sp]
        depth = st_d[sp]
        seg_s[node] = s
        seg_e[node] = e
        m = e - s
        n_ev = 0
        for i in range(s, e):
            n_ev += event[idx[i]]
        if n_ev == 0 or m < min_split or m < 2 * min_leaf:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue
        _node_perm(perm, idx, s, e, seed, state)
        best_stat = 0.0
        best_f = -1
        best_t = 0.0
        for k in range(d):
            if k >= mtry and best_f >= 0:
                break
            f = perm[k]
            for i in range(m):
                vals[i] = X[idx[s + i], f]
            cand = _logrank_candidates(vals[:m], n_cand)
            nc = cand.size
            if nc == 0:
                continue
            for b in range(nc + 1):
                atrisk[b] = 0.0
                dgrp[b] = 0.0
                cnt[b] = 0.0
            for j in range(nc):
                num[j] = 0.0
                var[j] = 0.0
            for i in range(m):
                b = np.searchsorted(cand, vals[i])
                bins[i] = b
                cnt[b] += 1.0
            # sweep from the latest time backwards, growing the risk sets
            n_risk = 0.0
            i = m - 1
            while i >= 0:
                tr = time_rank[idx[s + i]]
                dtot = 0.0
                g = i
                while g >= 0 and time_rank[idx[s + g]] == tr:
                    b = bins[g]
                    atrisk[b] += 1.0
                    n_risk += 1.0
                    if event[idx[s + g]] == 1:
                        dgrp[b] += 1.0
                        dtot += 1.0
                    g -= 1
                if dtot > 0:
                    nl = 0.0
                    dl = 0.0
                    for j in range(nc):
                        nl += atrisk[j]
                        dl += dgrp[j]
                        frac = nl / n_risk
                        num[j] += dl - dtot * frac
                        if n_risk > 1.0:
                            var[j] += dtot * frac * (1.0 - frac) * (n_risk - dtot) / (n_risk - 1.0)
                    for j in range(nc + 1):
                        dgrp[j] = 0.0
                i = g
            cl = 0.0
            for j in range(nc):
                cl += cnt[j]
                if cl < min_leaf or m - cl < min_leaf:
                    continue
                if var[j] <= 1e-12:
                    continue
                stat = abs(num[j]) / np.sqrt(var[j])
                if stat > best_stat * (1.0 + 1e-10) + 1e-12:
                    best_stat = stat
                    best_f = f
                    best_t = cand[j]
        if best_f < 0:
            continue
        n_left = _partition(idx, s, e, X, best_f, best_t, buf)
        feat[node] = best_f
        thr[node] = best_t
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        st_node[sp] = lc
        st_s[sp] = s
        st_e[sp] = s + n_left
        st_d[sp] = depth + 1
        sp += 1
        st_node[sp] = rc
        st_s[sp] = s + n_left
        st_e[sp] = e
        st_d[sp] = depth + 1
        sp += 1
    return (feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes],
            seg_s[:n_nodes], seg_e[:n_nodes], idx)


@njit(cache=True, nogil=True)
def leaf_curves(feat, seg_s, seg_e, idx, time_rank, grid_idx, event):
    """Kaplan-Meier step curve of every leaf on the global event grid.

    Returns CSR arrays: for node ``k``, steps ``ptr[k]:ptr[k+1]`` hold the
    grid indices where the leaf curve drops and the survival just after.
    ``grid_idx`` maps each event row to its event-grid position; rows are
    already time-sorted inside each leaf.
    """
    n_nodes = feat.size
    ptr = np.zeros(n_nodes + 1, dtype=np.int64)
    total = 0
    for k in range(n_nodes):
        if feat[k] < 0:
            total += seg_e[k] - seg_s[k]
    steps_g = np.empty(total, dtype=np.int64)
    steps_s = np.empty(total)
    pos = 0
    for k in range(n_nodes):
        ptr[k] = pos
        if feat[k] >= 0:
            continue
        s = seg_s[k]
        e = seg_e[k]
        n_risk = e - s
        surv = 1.0
        i = s
        while i < e:
            tr = time_rank[idx[i]]
            j = i
            dcount = 0
            g = -1
            while j < e and time_rank[idx[j]] == tr:
                if event[idx[j]] == 1:
                    dcount += 1
                    g = grid_idx[idx[j]]
                j += 1
            if dcount > 0:
                surv *= 1.0 - dcount / n_risk
                steps_g[pos] = g
                steps_s[pos] = surv
                pos += 1
            n_risk -= j - i
            i = j
    ptr[n_nodes] = pos
    return ptr, steps_g[:pos], steps_s[:pos]


@njit(cache=True, nogil=True)
def ensemble_survival(leaf_ids, tree_ptr_offset, steps_ptr, steps_g, steps_s, n_grid):
    """Average leaf curves: returns (n_query, n_grid) survival matrix.

    ``leaf_ids[t, q]`` is the node reached by query ``q`` in tree ``t``;
    ``tree_ptr_offset[t]`` locates that tree's CSR block inside the flat
    ``steps_ptr`` array.
    """
    n_trees, nq = leaf_ids.shape
    out = np.zeros((nq, n_grid))
    for q in range(nq):
        drop = np.zeros(n_grid + 1)
        for t in range(n_trees):
            node = leaf_ids[t, q]
            base = tree_ptr_offset[t]
            a = steps_ptr[base + node]
            b = steps_ptr[base + node + 1]
            prev = 1.0
            for k in range(a, b):
                drop[steps_g[k]] += prev - steps_s[k]
                prev = steps_s[k]
        acc = 0.0
        for g in range(n_grid):
            acc += drop[g]
            out[q, g] = 1.0 - acc / n_trees
    return out
