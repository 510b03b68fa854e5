"""Exact linear assignment with deterministic tie-breaking.

The solver is the shortest-augmenting-path Hungarian method with row and
column potentials. Among all optimal assignments it returns the one whose
column sequence (row 0 first) is lexicographically smallest: after the
main solve, each row in turn is moved to the smallest column reachable by
an alternating cycle of tight edges through rows not yet fixed.
"""

from __future__ import annotations

import numpy as np

from . import _accel

TIGHT_RTOL = 1e-9


def _solve_loop(a):
    n = a.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col[p[j] - 1] = j - 1
    return col, u[1:].copy(), v[1:].copy()


def _lexmin_loop(tight, col):
    n = col.shape[0]
    col = col.copy()
    row_of = np.empty(n, dtype=np.int64)
    for r in range(n):
        row_of[col[r]] = r
    fixed = np.zeros(n, dtype=np.bool_)
    nxt = np.empty(n, dtype=np.int64)
    reached = np.zeros(n, dtype=np.bool_)
    queue = np.empty(n + 1, dtype=np.int64)
    for r in range(n):
        goal = col[r]
        reached[:] = False
        head = 0
        tail = 1
        queue[0] = goal
        while head < tail:
            c = queue[head]
            head += 1
            for x in range(n):
                if x != r and not fixed[x] and not reached[x] and tight[x, c]:
                    reached[x] = True
                    nxt[x] = c
                    queue[tail] = col[x]
                    tail += 1
        best = -1
        for c in range(goal):
            y = row_of[c]
            if tight[r, c] and y != r and not fixed[y] and reached[y]:
                best = c
                break
        if best >= 0:
            y = row_of[best]
            col[r] = best
            row_of[best] = r
            while True:
                c = nxt[y]
                col[y] = c
                z = row_of[c]
                row_of[c] = y
                if c == goal:
                    break
                y = z
        fixed[r] = True
    return col


def _solve_numpy(a):
    n = a.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col = np.empty(n, dtype=np.int64)
    col[p[1:] - 1] = np.arange(n)
    return col, u[1:].copy(), v[1:].copy()


def _lexmin_numpy(tight, col):
    n = len(col)
    col = col.copy()
    row_of = np.empty(n, dtype=np.int64)
    row_of[col] = np.arange(n)
    fixed = np.zeros(n, dtype=bool)
    for r in range(n):
        goal = col[r]
        cand = np.flatnonzero(tight[r, :goal])
        if cand.size == 0:
            fixed[r] = True
            continue
        eligible = ~fixed
        eligible[r] = False
        reached = np.zeros(n, dtype=bool)
        nxt = np.full(n, -1, dtype=np.int64)
        frontier = np.array([goal])
        while frontier.size:
            hits = tight[:, frontier] & (eligible & ~reached)[:, None]
            rows = np.flatnonzero(hits.any(axis=1))
            if rows.size == 0:
                break
            nxt[rows] = frontier[np.argmax(hits[rows], axis=1)]
            reached[rows] = True
            frontier = col[rows]
        ys = row_of[cand]
        ok = reached[ys]
        if ok.any():
            best = cand[np.argmax(ok)]
            y = row_of[best]
            col[r] = best
            row_of[best] = r
            while True:
                c = nxt[y]
                col[y] = c
                z = row_of[c]
                row_of[c] = y
                if c == goal:
                    break
                y = z
        fixed[r] = True
    return col


_solve_numba = _accel.njit(_solve_loop)
_lexmin_numba = _accel.njit(_lexmin_loop)


def solve_square(a: np.ndarray):
    """Return ``col`` with ``col[r]`` the column of row ``r`` for a square cost matrix."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    n = a.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if _accel.use_numba():
        solve, lexmin = _solve_numba, _lexmin_numba
    else:
        solve, lexmin = _solve_numpy, _lexmin_numpy
    col, u, v = solve(a)
    tol = TIGHT_RTOL * max(1.0, float(np.abs(a).max()))
    tight = (a - u[:, None] - v[None, :]) <= tol
    if np.count_nonzero(tight) == n:
        return col
    return lexmin(tight, col)


def hungarian_assign(cost) -> list[tuple[int, int]]:
    """Minimum-cost matching of rows to columns.

    Rectangular matrices are padded to square with a constant (which
    leaves the optimum unchanged); the result lists ``(row, col)`` pairs
    for real cells only, sorted by row. Ties resolve to the
    lexicographically smallest optimal matching.

    Raises ``ValueError`` on NaN or infinite entries.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    size = max(n, m)
    if n != m:
        pad = float(cost.max())
        square = np.full((size, size), pad)
        square[:n, :m] = cost
    else:
        square = cost
    col = solve_square(square)
    return [(r, int(col[r])) for r in range(n) if col[r] < m]


def assignment_cost(cost, pairs) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    total = 0.0
    for r, c in sorted(pairs):
        total += cost[r, c]
    return total
