"""Event-driven simulation kernels (numba).

Two samplers with the same contract:

* a constant-rate kernel for models with c identically constant and window
  radius 0 (simple exclusion): eligible bonds fall into two equal-weight
  classes (particle-hole and hole-particle), sampled uniformly in O(1);
* a partial-sum-tree kernel for general local rates, O(log L) per event.

Both advance the state to an exact target field time, maintain signed
per-bond jump counters, and (optionally) accumulate the time integrals of
two bond-weighted local observables exactly along the jump chain: the
integrand is piecewise constant between events, so the integral is a sum of
value * waiting-time terms with no quadrature error.

Scalar state travels in two register arrays:

freg: [0] current field time t
      [1] absolute time of the next event (inf when frozen, -1 not drawn)
      [2] running sum S_A of the A-integrand
      [3] running sum S_I of the I-integrand
      [4] accumulated integral of S_A
      [5] accumulated integral of S_I
ireg: [0] total executed events
      [1] events since last refresh/rebuild
      [2] events written to the log

Status codes: 0 reached t_target, 1 frozen with infinite horizon,
2 max_events reached, 3 event log full.
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_FROZEN = 1
STATUS_MAX_EVENTS = 2
STATUS_LOG_FULL = 3

_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (np.uint64(64) - k))


@njit(cache=True, inline="always")
def _rng_next(s):
    # xoshiro256++
    result = _rotl(s[0] + s[3], np.uint64(23)) + s[0]
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], np.uint64(45))
    return result


@njit(cache=True, inline="always")
def _uniform(s):
    """Half-open [0, 1)."""
    return float(_rng_next(s) >> np.uint64(11)) * _INV53


@njit(cache=True, inline="always")
def _uniform_pos(s):
    """Half-open (0, 1], safe for logarithms."""
    return float((_rng_next(s) >> np.uint64(11)) + np.uint64(1)) * _INV53


@njit(cache=True)
def seed_rng(seed_words):
    """Build a nonzero xoshiro state from four seed words via splitmix64."""
    s = np.empty(4, dtype=np.uint64)
    z = seed_words[0] ^ np.uint64(0x9E3779B97F4A7C15)
    for i in range(4):
        z = z + seed_words[i % len(seed_words)] + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
        s[i] = z
    if s[0] == 0 and s[1] == 0 and s[2] == 0 and s[3] == 0:
        s[0] = np.uint64(1)
    return s


@njit(cache=True, inline="always")
def _pair_bits(occ, x, L):
    return occ[x] + 2 * occ[(x + 1) % L]


@njit(cache=True)
def _refresh_sums(occ, L, wA, wI, vf4, hc4, freg):
    sa = 0.0
    si = 0.0
    for x in range(L):
        b = _pair_bits(occ, x, L)
        sa += wA[x] * vf4[b]
        si += wI[x] * hc4[b]
    freg[2] = sa
    freg[3] = si


@njit(cache=True, inline="always")
def _class_of(occ, x, L):
    """0: forward-eligible (1,0); 1: backward-eligible (0,1); -1: blocked."""
    a = occ[x]
    b = occ[(x + 1) % L]
    if a == 1 and b == 0:
        return 0
    if a == 0 and b == 1:
        return 1
    return -1


@njit(cache=True)
def build_classes(occ, L, bonds10, pos10, bonds01, pos01, counts):
    n10 = 0
    n01 = 0
    for x in range(L):
        pos10[x] = -1
        pos01[x] = -1
    for x in range(L):
        cl = _class_of(occ, x, L)
        if cl == 0:
            bonds10[n10] = x
            pos10[x] = n10
            n10 += 1
        elif cl == 1:
            bonds01[n01] = x
            pos01[x] = n01
            n01 += 1
    counts[0] = n10
    counts[1] = n01


@njit(cache=True, inline="always")
def _class_remove(bonds, pos, counts, ci, x):
    i = pos[x]
    last = counts[ci] - 1
    moved = bonds[last]
    bonds[i] = moved
    pos[moved] = i
    pos[x] = -1
    counts[ci] = last


@njit(cache=True, inline="always")
def _class_add(bonds, pos, counts, ci, x):
    i = counts[ci]
    bonds[i] = x
    pos[x] = i
    counts[ci] = i + 1


@njit(cache=True, fastmath=True)
def run_fast(occ, L, w10, w01,
             bonds10, pos10, bonds01, pos01, counts,
             rng, freg, ireg, counters,
             use_ai, wA, wI, vf4, hc4,
             t_target, max_events, refresh_every,
             log_on, ev_t, ev_b, ev_d):
    """Constant-rate kernel; see module docstring for the register layout."""
    t = freg[0]
    tn = freg[1]
    total = w10 * counts[0] + w01 * counts[1]
    if tn < 0.0:
        if total > 0.0:
            tn = t + (-np.log(_uniform_pos(rng))) / total
        else:
            tn = np.inf
    status = STATUS_OK
    cap = ev_t.shape[0]
    while True:
        if not np.isfinite(tn):
            if np.isfinite(t_target):
                if use_ai:
                    freg[4] += freg[2] * (t_target - t)
                    freg[5] += freg[3] * (t_target - t)
                t = t_target
                status = STATUS_OK
            else:
                status = STATUS_FROZEN
            break
        if tn > t_target:
            if use_ai:
                freg[4] += freg[2] * (t_target - t)
                freg[5] += freg[3] * (t_target - t)
            t = t_target
            status = STATUS_OK
            break
        if ireg[0] >= max_events:
            status = STATUS_MAX_EVENTS
            break
        if log_on and ireg[2] >= cap:
            status = STATUS_LOG_FULL
            break
        # advance to the event
        if use_ai:
            freg[4] += freg[2] * (tn - t)
            freg[5] += freg[3] * (tn - t)
        t = tn
        # select class, then a uniform member
        u = _uniform(rng) * total
        if u < w10 * counts[0]:
            k = int(_uniform(rng) * counts[0])
            if k >= counts[0]:
                k = counts[0] - 1
            b = bonds10[k]
            direction = 1
        else:
            k = int(_uniform(rng) * counts[1])
            if k >= counts[1]:
                k = counts[1] - 1
            b = bonds01[k]
            direction = -1
        # neighbouring sites with branch wrap (cheaper than % in the hot loop)
        bm1 = b - 1 if b > 0 else L - 1
        bp1 = b + 1 if b + 1 < L else 0
        bp2 = bp1 + 1 if bp1 + 1 < L else 0
        if use_ai:
            bb0 = occ[bm1] + 2 * occ[b]
            bb1 = occ[b] + 2 * occ[bp1]
            bb2 = occ[bp1] + 2 * occ[bp2]
            freg[2] -= wA[bm1] * vf4[bb0] + wA[b] * vf4[bb1] + wA[bp1] * vf4[bb2]
            freg[3] -= wI[bm1] * hc4[bb0] + wI[b] * hc4[bb1] + wI[bp1] * hc4[bb2]
        tmp = occ[b]
        occ[b] = occ[bp1]
        occ[bp1] = tmp
        counters[b] += direction
        if use_ai:
            bb0 = occ[bm1] + 2 * occ[b]
            bb1 = occ[b] + 2 * occ[bp1]
            bb2 = occ[bp1] + 2 * occ[bp2]
            freg[2] += wA[bm1] * vf4[bb0] + wA[b] * vf4[bb1] + wA[bp1] * vf4[bb2]
            freg[3] += wI[bm1] * hc4[bb0] + wI[b] * hc4[bb1] + wI[bp1] * hc4[bb2]
        # reclassify the three affected bonds
        for x in (bm1, b, bp1):
            x1 = x + 1 if x + 1 < L else 0
            sa = occ[x]
            sb = occ[x1]
            if sa == 1 and sb == 0:
                new_cl = 0
            elif sa == 0 and sb == 1:
                new_cl = 1
            else:
                new_cl = -1
            if pos10[x] >= 0:
                old_cl = 0
            elif pos01[x] >= 0:
                old_cl = 1
            else:
                old_cl = -1
            if old_cl == new_cl:
                continue
            if old_cl == 0:
                _class_remove(bonds10, pos10, counts, 0, x)
            elif old_cl == 1:
                _class_remove(bonds01, pos01, counts, 1, x)
            if new_cl == 0:
                _class_add(bonds10, pos10, counts, 0, x)
            elif new_cl == 1:
                _class_add(bonds01, pos01, counts, 1, x)
        if log_on:
            ev_t[ireg[2]] = t
            ev_b[ireg[2]] = b
            ev_d[ireg[2]] = direction
            ireg[2] += 1
        ireg[0] += 1
        ireg[1] += 1
        if use_ai and ireg[1] >= refresh_every:
            _refresh_sums(occ, L, wA, wI, vf4, hc4, freg)
            ireg[1] = 0
        total = w10 * counts[0] + w01 * counts[1]
        if total > 0.0:
            tn = t + (-np.log(_uniform_pos(rng))) / total
        else:
            tn = np.inf
    freg[0] = t
    freg[1] = tn
    return status


@njit(cache=True, inline="always")
def _window_bits(occ, x, r, L):
    """Bits of sites x-r .. x+r+1, bit j for site x-r+j."""
    bits = 0
    w = 2 * r + 2
    y = (x - r) % L
    for j in range(w):
        bits |= occ[y] << j
        y += 1
        if y == L:
            y = 0
    return bits


@njit(cache=True, inline="always")
def _bond_weights(occ, x, r, L, c_table, n2p, n2q):
    bits = _window_bits(occ, x, r, L)
    c = c_table[bits]
    a = occ[x]
    b = occ[(x + 1) % L]
    wf = n2p * c if (a == 1 and b == 0) else 0.0
    wb = n2q * c if (a == 0 and b == 1) else 0.0
    return wf, wb


@njit(cache=True)
def build_tree(occ, L, P, tree, r, c_table, n2p, n2q):
    for i in range(2 * P):
        tree[i] = 0.0
    for x in range(L):
        wf, wb = _bond_weights(occ, x, r, L, c_table, n2p, n2q)
        tree[P + x] = wf + wb
    for i in range(P - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]


@njit(cache=True, inline="always")
def _tree_set(tree, P, x, v):
    i = P + x
    tree[i] = v
    i >>= 1
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i >>= 1


@njit(cache=True, inline="always")
def _tree_sample(tree, P, u):
    """Descend for the leaf containing cumulative weight u."""
    i = 1
    while i < P:
        left = tree[2 * i]
        if u < left:
            i = 2 * i
        else:
            u -= left
            i = 2 * i + 1
    return i - P


@njit(cache=True)
def _refresh_sums_general(occ, L, r, wA, wI, vf_table, hc_table, freg):
    sa = 0.0
    si = 0.0
    for x in range(L):
        bits = _window_bits(occ, x, r, L)
        sa += wA[x] * vf_table[bits]
        si += wI[x] * hc_table[bits]
    freg[2] = sa
    freg[3] = si


@njit(cache=True, fastmath=True)
def run_tree(occ, L, P, tree, r, c_table, n2p, n2q,
             rng, freg, ireg, counters,
             use_ai, wA, wI, vf_table, hc_table,
             t_target, max_events, rebuild_every,
             log_on, ev_t, ev_b, ev_d):
    """General-rate kernel with an O(log L) partial-sum tree."""
    t = freg[0]
    tn = freg[1]
    total = tree[1]
    if tn < 0.0:
        if total > 0.0:
            tn = t + (-np.log(_uniform_pos(rng))) / total
        else:
            tn = np.inf
    status = STATUS_OK
    cap = ev_t.shape[0]
    while True:
        if not np.isfinite(tn):
            if np.isfinite(t_target):
                if use_ai:
                    freg[4] += freg[2] * (t_target - t)
                    freg[5] += freg[3] * (t_target - t)
                t = t_target
                status = STATUS_OK
            else:
                status = STATUS_FROZEN
            break
        if tn > t_target:
            if use_ai:
                freg[4] += freg[2] * (t_target - t)
                freg[5] += freg[3] * (t_target - t)
            t = t_target
            status = STATUS_OK
            break
        if ireg[0] >= max_events:
            status = STATUS_MAX_EVENTS
            break
        if log_on and ireg[2] >= cap:
            status = STATUS_LOG_FULL
            break
        if use_ai:
            freg[4] += freg[2] * (tn - t)
            freg[5] += freg[3] * (tn - t)
        t = tn
        b = _tree_sample(tree, P, _uniform(rng) * tree[1])
        if b >= L:
            b = L - 1
        wf, wb = _bond_weights(occ, b, r, L, c_table, n2p, n2q)
        leaf = wf + wb
        if leaf <= 0.0:
            # numerical residue in the tree; rebuild and redraw
            build_tree(occ, L, P, tree, r, c_table, n2p, n2q)
            total = tree[1]
            if total > 0.0:
                tn = t + (-np.log(_uniform_pos(rng))) / total
            else:
                tn = np.inf
            continue
        direction = 1 if _uniform(rng) * leaf < wf else -1
        bp1 = b + 1 if b + 1 < L else 0
        span = 2 * r + 3
        if use_ai:
            x = (b - r - 1) % L
            for j in range(span):
                bits = _window_bits(occ, x, r, L)
                freg[2] -= wA[x] * vf_table[bits]
                freg[3] -= wI[x] * hc_table[bits]
                x = x + 1 if x + 1 < L else 0
        tmp = occ[b]
        occ[b] = occ[bp1]
        occ[bp1] = tmp
        counters[b] += direction
        if use_ai:
            x = (b - r - 1) % L
            for j in range(span):
                bits = _window_bits(occ, x, r, L)
                freg[2] += wA[x] * vf_table[bits]
                freg[3] += wI[x] * hc_table[bits]
                x = x + 1 if x + 1 < L else 0
        x = (b - r - 1) % L
        for j in range(span):
            wf2, wb2 = _bond_weights(occ, x, r, L, c_table, n2p, n2q)
            _tree_set(tree, P, x, wf2 + wb2)
            x = x + 1 if x + 1 < L else 0
        if log_on:
            ev_t[ireg[2]] = t
            ev_b[ireg[2]] = b
            ev_d[ireg[2]] = direction
            ireg[2] += 1
        ireg[0] += 1
        ireg[1] += 1
        if ireg[1] >= rebuild_every:
            build_tree(occ, L, P, tree, r, c_table, n2p, n2q)
            if use_ai:
                _refresh_sums_general(occ, L, r, wA, wI, vf_table, hc_table, freg)
            ireg[1] = 0
        total = tree[1]
        if total > 0.0:
            tn = t + (-np.log(_uniform_pos(rng))) / total
        else:
            tn = np.inf
    freg[0] = t
    freg[1] = tn
    return status
