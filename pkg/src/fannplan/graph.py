"""Layered navigable small-world graph (HNSW-style) kernels.

Nodes get a random top level; each level keeps a bounded neighbour list chosen
with the diversity heuristic. Search descends greedily through the upper
levels and runs a beam search of width ``ef`` on level 0. Construction inserts
rows in id order, so a fixed seed gives an identical graph.
"""
from __future__ import annotations

import numpy as np
from numba import njit

L2 = 0
IP = 1


@njit(cache=True, inline="always")
def _dist(vecs, a, q, metric):
    s = 0.0
    if metric == L2:
        for j in range(vecs.shape[1]):
            t = vecs[a, j] - q[j]
            s += t * t
    else:
        for j in range(vecs.shape[1]):
            s -= vecs[a, j] * q[j]
    return s


@njit(cache=True, inline="always")
def _less(k1, v1, k2, v2):
    return k1 < k2 or (k1 == k2 and v1 < v2)


@njit(cache=True)
def _push(keys, vals, size, k, v):
    i = size
    keys[i] = k
    vals[i] = v
    while i > 0:
        p = (i - 1) // 2
        if _less(keys[i], vals[i], keys[p], vals[p]):
            keys[i], keys[p] = keys[p], keys[i]
            vals[i], vals[p] = vals[p], vals[i]
            i = p
        else:
            break
    return size + 1


@njit(cache=True)
def _pop(keys, vals, size):
    k, v = keys[0], vals[0]
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    i = 0
    while True:
        lft = 2 * i + 1
        if lft >= size:
            break
        c = lft
        r = lft + 1
        if r < size and _less(keys[r], vals[r], keys[lft], vals[lft]):
            c = r
        if _less(keys[c], vals[c], keys[i], vals[i]):
            keys[i], keys[c] = keys[c], keys[i]
            vals[i], vals[c] = vals[c], vals[i]
            i = c
        else:
            break
    return k, v, size


@njit(cache=True, inline="always")
def _row(node, layer, offsets):
    return offsets[node] + layer - 1


@njit(cache=True)
def _greedy(vecs, q, metric, ep, layer, nbr0, cnt0, offsets, up_nbr, up_cnt):
    cur = ep
    cur_d = _dist(vecs, cur, q, metric)
    changed = True
    while changed:
        changed = False
        base = cur
        if layer == 0:
            n = cnt0[base]
        else:
            n = up_cnt[_row(base, layer, offsets)]
        for t in range(n):
            if layer == 0:
                nb = nbr0[base, t]
            else:
                nb = up_nbr[_row(base, layer, offsets), t]
            d = _dist(vecs, nb, q, metric)
            if d < cur_d or (d == cur_d and nb < cur):
                cur, cur_d = nb, d
                changed = True
    return cur


@njit(cache=True)
def _search_layer(vecs, q, metric, eps, n_eps, ef, layer, nbr0, cnt0, offsets, up_nbr, up_cnt,
                  visited, tag, cand_k, cand_v, res_k, res_v, out_ids, out_d):
    cs = 0
    rs = 0
    for t in range(n_eps):
        e = eps[t]
        if visited[e] == tag:
            continue
        visited[e] = tag
        d = _dist(vecs, e, q, metric)
        cs = _push(cand_k, cand_v, cs, d, e)
        rs = _push(res_k, res_v, rs, -d, -e)
        if rs > ef:
            _, _, rs = _pop(res_k, res_v, rs)
    while cs > 0:
        d, c, cs = _pop(cand_k, cand_v, cs)
        if rs >= ef and d > -res_k[0]:
            break
        if layer == 0:
            n = cnt0[c]
        else:
            n = up_cnt[_row(c, layer, offsets)]
        for t in range(n):
            if layer == 0:
                nb = nbr0[c, t]
            else:
                nb = up_nbr[_row(c, layer, offsets), t]
            if visited[nb] == tag:
                continue
            visited[nb] = tag
            dn = _dist(vecs, nb, q, metric)
            if rs < ef or dn < -res_k[0]:
                cs = _push(cand_k, cand_v, cs, dn, nb)
                rs = _push(res_k, res_v, rs, -dn, -nb)
                if rs > ef:
                    _, _, rs = _pop(res_k, res_v, rs)
    n_out = rs
    for i in range(n_out - 1, -1, -1):
        k, v, rs = _pop(res_k, res_v, rs)
        out_d[i] = -k
        out_ids[i] = -v
    return n_out


@njit(cache=True)
def _select(vecs, metric, ids, ds, n, m, out):
    cnt = 0
    for i in range(n):
        c = ids[i]
        good = True
        for j in range(cnt):
            if _dist(vecs, c, vecs[out[j]], metric) < ds[i]:
                good = False
                break
        if good:
            out[cnt] = c
            cnt += 1
            if cnt >= m:
                break
    return cnt


@njit(cache=True)
def _connect(vecs, metric, node, new, layer, m_max, nbr0, cnt0, offsets, up_nbr, up_cnt, tmp_ids, tmp_d, sel):
    r = 0
    if layer == 0:
        n = cnt0[node]
    else:
        r = _row(node, layer, offsets)
        n = up_cnt[r]
    if n < m_max:
        if layer == 0:
            nbr0[node, n] = new
            cnt0[node] = n + 1
        else:
            up_nbr[r, n] = new
            up_cnt[r] = n + 1
        return
    q = vecs[node]
    for t in range(n):
        nb = nbr0[node, t] if layer == 0 else up_nbr[r, t]
        tmp_ids[t] = nb
        tmp_d[t] = _dist(vecs, nb, q, metric)
    tmp_ids[n] = new
    tmp_d[n] = _dist(vecs, new, q, metric)
    order = np.argsort(tmp_d[: n + 1], kind="mergesort")
    ids_sorted = tmp_ids[: n + 1][order]
    d_sorted = tmp_d[: n + 1][order]
    cnt = _select(vecs, metric, ids_sorted, d_sorted, n + 1, m_max, sel)
    for t in range(cnt):
        if layer == 0:
            nbr0[node, t] = sel[t]
        else:
            up_nbr[r, t] = sel[t]
    if layer == 0:
        cnt0[node] = cnt
    else:
        up_cnt[r] = cnt


@njit(cache=True)
def build_graph(vecs, levels, metric, m, m0, ef_construction, nbr0, cnt0, offsets, up_nbr, up_cnt):
    n = vecs.shape[0]
    visited = np.zeros(n, dtype=np.int32)
    cap = n + 1
    cand_k = np.empty(cap, dtype=np.float64)
    cand_v = np.empty(cap, dtype=np.int64)
    res_k = np.empty(ef_construction + 2, dtype=np.float64)
    res_v = np.empty(ef_construction + 2, dtype=np.int64)
    out_ids = np.empty(ef_construction + 1, dtype=np.int64)
    out_d = np.empty(ef_construction + 1, dtype=np.float64)
    eps = np.empty(ef_construction + 1, dtype=np.int64)
    sel = np.empty(max(m, m0) + 1, dtype=np.int64)
    sel2 = np.empty(max(m, m0) + 2, dtype=np.int64)
    tmp_ids = np.empty(max(m, m0) + 2, dtype=np.int64)
    tmp_d = np.empty(max(m, m0) + 2, dtype=np.float64)
    entry = 0
    max_level = levels[0]
    tag = 0
    for i in range(1, n):
        q = vecs[i]
        lvl = levels[i]
        ep = entry
        for layer in range(max_level, lvl, -1):
            ep = _greedy(vecs, q, metric, ep, layer, nbr0, cnt0, offsets, up_nbr, up_cnt)
        eps[0] = ep
        n_eps = 1
        for layer in range(min(lvl, max_level), -1, -1):
            tag += 1
            found = _search_layer(vecs, q, metric, eps, n_eps, ef_construction, layer, nbr0, cnt0, offsets,
                                  up_nbr, up_cnt, visited, tag, cand_k, cand_v, res_k, res_v, out_ids, out_d)
            m_max = m0 if layer == 0 else m
            cnt = _select(vecs, metric, out_ids, out_d, found, m, sel)
            if layer == 0:
                for t in range(cnt):
                    nbr0[i, t] = sel[t]
                cnt0[i] = cnt
            else:
                r = _row(i, layer, offsets)
                for t in range(cnt):
                    up_nbr[r, t] = sel[t]
                up_cnt[r] = cnt
            for t in range(cnt):
                _connect(vecs, metric, sel[t], i, layer, m_max, nbr0, cnt0, offsets, up_nbr, up_cnt,
                         tmp_ids, tmp_d, sel2)
            for t in range(found):
                eps[t] = out_ids[t]
            n_eps = found
        if lvl > max_level:
            max_level = lvl
            entry = i
    return entry, max_level


@njit(cache=True)
def search_graph(vecs, q, metric, entry, max_level, ef, nbr0, cnt0, offsets, up_nbr, up_cnt,
                 visited, tag, cand_k, cand_v):
    ep = entry
    for layer in range(max_level, 0, -1):
        ep = _greedy(vecs, q, metric, ep, layer, nbr0, cnt0, offsets, up_nbr, up_cnt)
    eps = np.empty(1, dtype=np.int64)
    eps[0] = ep
    res_k = np.empty(ef + 2, dtype=np.float64)
    res_v = np.empty(ef + 2, dtype=np.int64)
    out_ids = np.empty(ef + 1, dtype=np.int64)
    out_d = np.empty(ef + 1, dtype=np.float64)
    found = _search_layer(vecs, q, metric, eps, 1, ef, 0, nbr0, cnt0, offsets, up_nbr, up_cnt,
                          visited, tag, cand_k, cand_v, res_k, res_v, out_ids, out_d)
    return out_ids[:found].copy(), out_d[:found].copy()
