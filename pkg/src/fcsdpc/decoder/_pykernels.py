"""Pure-Python decoder kernels.

Same signatures and float operation order as ``_kernels.pyx``. Every row
residual is accumulated as ``r = 0.0; r += L[i, j] * u[j] (j = 0..i);
r -= t[i]`` and squared into a running sum, so leaf costs are bitwise equal
to :func:`fcsdpc.decoder.ils_cost` on either backend.
"""
import numpy as np

CHUNK = 1 << 16


def _allowed(first, trans, idx, m, i, k):
    c = i % m
    if i < m:
        return first[c][k]
    return trans[c][idx[i - m]][k]


def babai(L, t, levels, nlev, m, first, trans):
    N = len(t)
    L = L.tolist()
    t = t.tolist()
    levels = levels.tolist()
    first = first.tolist()
    trans = trans.tolist()
    idx = [0] * N
    u = [0.0] * N
    for i in range(N):
        c = i % m
        r0 = 0.0
        Li = L[i]
        for j in range(i):
            r0 = r0 + Li[j] * u[j]
        target = (t[i] - r0) / Li[i]
        best_k, best_gap = -1, 0.0
        for k in range(nlev[c]):
            if not _allowed(first, trans, idx, m, i, k):
                continue
            gap = abs(levels[c][k] - target)
            if best_k < 0 or gap < best_gap:
                best_k, best_gap = k, gap
        if best_k < 0:
            raise ValueError(f"no admissible level for component {i}: feasible set is empty")
        idx[i] = best_k
        u[i] = levels[c][best_k]
    return np.array(idx, dtype=np.int64)


def _leaf_cost(L, t, u):
    cost = 0.0
    for i in range(len(t)):
        r = 0.0
        Li = L[i]
        for j in range(i + 1):
            r = r + Li[j] * u[j]
        r = r - t[i]
        cost = cost + r * r
    return cost


def sphere(L, t, levels, nlev, m, first, trans, init_idx=None, trace=None):
    """Search seeded with ``init_idx`` (sequential rounding when ``None``)."""
    if init_idx is None:
        init_idx = babai(L, t, levels, nlev, m, first, trans)
    N = len(t)
    L = L.tolist()
    t = t.tolist()
    levels = levels.tolist()
    first = first.tolist()
    trans = trans.tolist()
    nlev = list(nlev)
    idx = [0] * N
    u = [0.0] * N
    best = [int(v) for v in init_idx]
    init_cost = _leaf_cost(L, t, [levels[i % m][k] for i, k in enumerate(best)])
    state = {"cost": init_cost, "nodes": 0}
    radii = [init_cost]
    if trace is not None:
        trace.append({"event": "init", "idx": list(best), "cost": init_cost})

    def search(i, dist):
        if i == N:
            cost = state["cost"]
            if dist < cost or (dist == cost and idx < best):
                if dist < cost:
                    radii.append(dist)
                state["cost"] = dist
                best[:] = idx
                if trace is not None:
                    trace.append({"event": "leaf", "idx": list(idx), "cost": dist})
            return
        c = i % m
        Li = L[i]
        r0 = 0.0
        for j in range(i):
            r0 = r0 + Li[j] * u[j]
        lii = Li[i]
        ti = t[i]
        lev = levels[c]
        for k in range(nlev[c]):
            if not _allowed(first, trans, idx, m, i, k):
                continue
            r = r0 + lii * lev[k]
            r = r - ti
            d = dist + r * r
            state["nodes"] += 1
            pruned = d > state["cost"]
            if trace is not None:
                trace.append({"event": "node", "depth": i, "prefix": idx[:i] + [k],
                              "dist": d, "radius": state["cost"], "pruned": pruned})
            if pruned:
                continue
            idx[i] = k
            u[i] = lev[k]
            search(i + 1, d)

    search(0, 0.0)
    return np.array(best, dtype=np.int64), state["cost"], state["nodes"], radii


def enumerate_all(L, t, levels, nlev, m, first, trans):
    """Scan every index tuple in lexicographic order, vectorized over chunks."""
    N = len(t)
    radix = [int(nlev[i % m]) for i in range(N)]
    strides = [1] * N
    for i in range(N - 2, -1, -1):
        strides[i] = strides[i + 1] * radix[i + 1]
    total = strides[0] * radix[0] if N else 1
    best_code, best_cost, feasible = -1, np.inf, 0
    for start in range(0, total, CHUNK):
        codes = np.arange(start, min(start + CHUNK, total), dtype=np.int64)
        idx = np.empty((len(codes), N), dtype=np.int64)
        for i in range(N):
            idx[:, i] = (codes // strides[i]) % radix[i]
        ok = np.ones(len(codes), dtype=bool)
        for i in range(N):
            c = i % m
            if i < m:
                ok &= first[c][idx[:, i]].astype(bool)
            else:
                ok &= trans[c][idx[:, i - m], idx[:, i]].astype(bool)
        if not ok.any():
            continue
        idx = idx[ok]
        codes = codes[ok]
        feasible += len(codes)
        U = np.empty(idx.shape)
        for i in range(N):
            U[:, i] = levels[i % m][idx[:, i]]
        cost = np.zeros(len(codes))
        for i in range(N):
            r = np.zeros(len(codes))
            for j in range(i + 1):
                r = r + L[i, j] * U[:, j]
            r = r - t[i]
            cost = cost + r * r
        k = int(np.argmin(cost))  # first minimum = lexicographically smallest
        if cost[k] < best_cost:
            best_cost, best_code = float(cost[k]), int(codes[k])
    if best_code < 0:
        raise ValueError("feasible set is empty")
    best = np.array([(best_code // strides[i]) % radix[i] for i in range(N)], dtype=np.int64)
    return best, best_cost, feasible
