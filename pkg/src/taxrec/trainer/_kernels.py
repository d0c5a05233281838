"""Compiled SGD kernels and the per-row reader-writer spinlocks they use.

Locks live in one int64 array with one slot per factor row: ``0`` free,
``> 0`` number of readers, ``-1`` held by a writer.  Row keys are
``user``, ``n_users + node`` (item offsets) and ``n_users + n_nodes + node``
(next-item offsets), so sorting keys sorts by (matrix, row).  Every step
acquires its locks in ascending key order.

All kernels release the GIL so training threads run concurrently.
"""

import numpy as np
from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic


@intrinsic
def _cas(typingctx, arr, idx, expected, new):
    sig = types.int64(arr, types.intp, types.int64, types.int64)

    def codegen(context, builder, sig, args):
        aryty = sig.args[0]
        ary = context.make_array(aryty)(context, builder, args[0])
        ptr = cgutils.get_item_pointer(context, builder, aryty, ary, [args[1]])
        res = builder.cmpxchg(ptr, args[2], args[3], "seq_cst", "seq_cst")
        return builder.extract_value(res, 0)

    return sig, codegen


@intrinsic
def _fetch_add(typingctx, arr, idx, val):
    sig = types.int64(arr, types.intp, types.int64)

    def codegen(context, builder, sig, args):
        aryty = sig.args[0]
        ary = context.make_array(aryty)(context, builder, args[0])
        ptr = cgutils.get_item_pointer(context, builder, aryty, ary, [args[1]])
        return builder.atomic_rmw("add", ptr, args[2], "seq_cst")

    return sig, codegen


@intrinsic
def _load(typingctx, arr, idx):
    sig = types.int64(arr, types.intp)

    def codegen(context, builder, sig, args):
        aryty = sig.args[0]
        ary = context.make_array(aryty)(context, builder, args[0])
        ptr = cgutils.get_item_pointer(context, builder, aryty, ary, [args[1]])
        return builder.load_atomic(ptr, "seq_cst", 8)

    return sig, codegen


@intrinsic
def _sched_yield(typingctx):
    sig = types.void()

    def codegen(context, builder, sig, args):
        fnty = ir.FunctionType(ir.IntType(32), [])
        fn = cgutils.get_or_insert_function(builder.module, fnty, "sched_yield")
        builder.call(fn, [])
        return context.get_dummy_value()

    return sig, codegen

SPINS_BEFORE_YIELD = 64


@njit(nogil=True, cache=True)
def read_lock(locks, k):
    spins = 0
    while True:
        s = _load(locks, k)
        if s >= 0 and _cas(locks, k, s, s + 1) == s:
            return
        spins += 1
        if spins >= SPINS_BEFORE_YIELD:
            _sched_yield()
            spins = 0


@njit(nogil=True, cache=True)
def read_unlock(locks, k):
    _fetch_add(locks, k, -1)


@njit(nogil=True, cache=True)
def write_lock(locks, k):
    spins = 0
    while _cas(locks, k, 0, -1) != 0:
        spins += 1
        if spins >= SPINS_BEFORE_YIELD:
            _sched_yield()
            spins = 0


@njit(nogil=True, cache=True)
def write_unlock(locks, k):
    _cas(locks, k, -1, 0)


@njit(nogil=True, cache=True)
def _sort_unique(keys, n):
    for a in range(1, n):
        v = keys[a]
        b = a - 1
        while b >= 0 and keys[b] > v:
            keys[b + 1] = keys[b]
            b -= 1
        keys[b + 1] = v
    m = 0
    for a in range(n):
        if m == 0 or keys[a] != keys[m - 1]:
            keys[m] = keys[a]
            m += 1
    return m


@njit(nogil=True, cache=True)
def _dot(a, b):
    acc = 0.0
    for k in range(a.shape[0]):
        acc += a[k] * b[k]
    return acc


@njit(nogil=True, cache=True)
def sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@njit(nogil=True, cache=True)
def _path_len(paths, level, node, levels):
    m = 0
    while m < paths.shape[1]:
        a = paths[node, m]
        if a < 0 or level[a] >= levels:
            break
        m += 1
    return m


@njit(nogil=True, cache=True)
def _effective(out, w, paths, node, plen):
    for k in range(out.shape[0]):
        out[k] = 0.0
    for m in range(plen - 1, -1, -1):
        a = paths[node, m]
        for k in range(out.shape[0]):
            out[k] += w[a, k]


@njit(nogil=True, cache=True)
def _add_row(dst, row, src, eps):
    for k in range(src.shape[0]):
        dst[row, k] += eps * src[k]


@njit(nogil=True, cache=True)
def _flush_row(dst, row, cache, crow, locks, key):
    write_lock(locks, key)
    for k in range(dst.shape[1]):
        dst[row, k] += cache[crow, k]
        cache[crow, k] = 0.0
    write_unlock(locks, key)


@njit(nogil=True, cache=True)
def _maxabs(cache, crow):
    m = 0.0
    for k in range(cache.shape[1]):
        v = abs(cache[crow, k])
        if v > m:
            m = v
    return m


@njit(nogil=True, cache=True)
def run_steps(user_f, item_w, next_w, paths, level, levels,
              user_ptr, basket_ptr, items, decay,
              tu, tt, ti, tj, lam, eps,
              locks, use_locks, cache_row, cache_item, cache_next, threshold, use_cache,
              stats):
    """Apply SGD updates for tuples ``(tu, tt, ti, tj)`` in order.

    Returns -1 on success or the index of the first tuple whose score or
    gradient was non-finite (nothing is written for that tuple).
    ``stats`` accumulates ``[sum of c, tuples applied]``.
    """
    K = user_f.shape[1]
    n_users = user_f.shape[0]
    n_nodes = item_w.shape[0]
    D1 = paths.shape[1]
    N = decay.shape[0]
    maxb = 1
    for b in range(basket_ptr.shape[0] - 1):
        sz = basket_ptr[b + 1] - basket_ptr[b]
        if sz > maxb:
            maxb = sz
    maxh = maxb * N + 1

    vu = np.empty(K)
    ei = np.empty(K)
    ej = np.empty(K)
    H = np.empty(K)
    delta = np.empty(K)
    gu = np.empty(K)
    gp = np.empty(K)
    gn = np.empty(K)
    hist_item = np.empty(maxh, np.int64)
    hist_coef = np.empty(maxh)
    hist_len = np.empty(maxh, np.int64)
    hist_vec = np.empty((maxh, K))
    gnext = np.empty((maxh, K))
    keys = np.empty(1 + 2 * D1 + maxh * D1, np.int64)
    row = np.empty(K)

    for s in range(tu.shape[0]):
        u = tu[s]
        t = tt[s]
        i = ti[s]
        j = tj[s]

        nh = 0
        for n in range(1, N + 1):
            tb = t - n
            if tb < 0:
                break
            b = user_ptr[u] + tb
            lo = basket_ptr[b]
            hi = basket_ptr[b + 1]
            w = decay[n - 1] / (hi - lo)
            for p in range(lo, hi):
                item = items[p]
                found = -1
                for q in range(nh):
                    if hist_item[q] == item:
                        found = q
                        break
                if found >= 0:
                    hist_coef[found] += w
                else:
                    hist_item[nh] = item
                    hist_coef[nh] = w
                    nh += 1

        li = _path_len(paths, level, i, levels)
        lj = _path_len(paths, level, j, levels)
        for q in range(nh):
            hist_len[q] = _path_len(paths, level, hist_item[q], levels)

        nk = 0
        if use_locks:
            keys[nk] = u
            nk += 1
            for m in range(li):
                keys[nk] = n_users + paths[i, m]
                nk += 1
            for m in range(lj):
                keys[nk] = n_users + paths[j, m]
                nk += 1
            for q in range(nh):
                for m in range(hist_len[q]):
                    keys[nk] = n_users + n_nodes + paths[hist_item[q], m]
                    nk += 1
            nk = _sort_unique(keys, nk)
            for q in range(nk):
                read_lock(locks, keys[q])

        for k in range(K):
            vu[k] = user_f[u, k]
        _effective(ei, item_w, paths, i, li)
        _effective(ej, item_w, paths, j, lj)
        for q in range(nh):
            _effective(row, next_w, paths, hist_item[q], hist_len[q])
            for k in range(K):
                hist_vec[q, k] = row[k]

        if use_locks:
            for q in range(nk):
                read_unlock(locks, keys[q])

        short_i = 0.0
        short_j = 0.0
        for q in range(nh):
            short_i += hist_coef[q] * _dot(hist_vec[q], ei)
            short_j += hist_coef[q] * _dot(hist_vec[q], ej)
        x = (_dot(vu, ei) + short_i) - (_dot(vu, ej) + short_j)
        if not np.isfinite(x):
            return s
        c = 1.0 - sigmoid(x)

        for k in range(K):
            H[k] = 0.0
        for q in range(nh):
            for k in range(K):
                H[k] += hist_coef[q] * hist_vec[q, k]
        finite = True
        for k in range(K):
            delta[k] = ei[k] - ej[k]
            br = vu[k] + H[k]
            gu[k] = c * delta[k] - lam * vu[k]
            gp[k] = c * br - lam * ei[k]
            gn[k] = -(c * br) - lam * ej[k]
            if not (np.isfinite(gu[k]) and np.isfinite(gp[k]) and np.isfinite(gn[k])):
                finite = False
        for q in range(nh):
            for k in range(K):
                gnext[q, k] = c * delta[k] * hist_coef[q] - lam * hist_vec[q, k]
                if not np.isfinite(gnext[q, k]):
                    finite = False
        if not finite:
            return s

        if use_locks:
            for q in range(nk):
                key = keys[q]
                if use_cache and key >= n_users:
                    node = (key - n_users) % n_nodes
                    if level[node] >= 1:
                        continue
                write_lock(locks, key)

        _add_row(user_f, u, gu, eps)
        for m in range(li):
            a = paths[i, m]
            if use_cache and level[a] >= 1:
                _add_row(cache_item, cache_row[a], gp, eps)
            else:
                _add_row(item_w, a, gp, eps)
        for m in range(lj):
            a = paths[j, m]
            if use_cache and level[a] >= 1:
                _add_row(cache_item, cache_row[a], gn, eps)
            else:
                _add_row(item_w, a, gn, eps)
        for q in range(nh):
            for m in range(hist_len[q]):
                a = paths[hist_item[q], m]
                if use_cache and level[a] >= 1:
                    _add_row(cache_next, cache_row[a], gnext[q], eps)
                else:
                    _add_row(next_w, a, gnext[q], eps)

        if use_locks:
            for q in range(nk):
                key = keys[q]
                if use_cache and key >= n_users:
                    node = (key - n_users) % n_nodes
                    if level[node] >= 1:
                        continue
                write_unlock(locks, key)

        if use_cache:
            for q in range(nk):
                key = keys[q]
                if key < n_users:
                    continue
                node = (key - n_users) % n_nodes
                if level[node] < 1:
                    continue
                if key < n_users + n_nodes:
                    if _maxabs(cache_item, cache_row[node]) > threshold:
                        _flush_row(item_w, node, cache_item, cache_row[node], locks, key)
                elif _maxabs(cache_next, cache_row[node]) > threshold:
                    _flush_row(next_w, node, cache_next, cache_row[node], locks, key)

        stats[0] += c
        stats[1] += 1.0
    return -1


@njit(nogil=True, cache=True)
def flush_all(item_w, next_w, internal_nodes, cache_item, cache_next, locks, n_users):
    n_nodes = item_w.shape[0]
    for r in range(internal_nodes.shape[0]):
        node = internal_nodes[r]
        if _maxabs(cache_item, r) > 0.0:
            _flush_row(item_w, node, cache_item, r, locks, n_users + node)
        if _maxabs(cache_next, r) > 0.0:
            _flush_row(next_w, node, cache_next, r, locks, n_users + n_nodes + node)


@njit(nogil=True, cache=True)
def lock_stress(data, locks, rows, use_locks):
    """Hammer ``data`` rows through the lock protocol.

    Each step read-locks its rows (sorted) and checks that every row is
    uniform, then write-locks them and increments the row one component at a
    time.  Returns the number of non-uniform (torn) rows observed.
    """
    K = data.shape[1]
    m = rows.shape[1]
    keys = np.empty(m, np.int64)
    torn = 0
    for s in range(rows.shape[0]):
        for q in range(m):
            keys[q] = rows[s, q]
        nk = _sort_unique(keys, m)
        if use_locks:
            for q in range(nk):
                read_lock(locks, keys[q])
        for q in range(nk):
            r = keys[q]
            v0 = data[r, 0]
            for k in range(1, K):
                if data[r, k] != v0:
                    torn += 1
                    break
        if use_locks:
            for q in range(nk):
                read_unlock(locks, keys[q])
            for q in range(nk):
                write_lock(locks, keys[q])
        for q in range(nk):
            r = keys[q]
            for k in range(K):
                data[r, k] += 1.0
        if use_locks:
            for q in range(nk):
                write_unlock(locks, keys[q])
    return torn
