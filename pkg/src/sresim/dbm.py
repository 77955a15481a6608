"""Difference-bound matrices over integer-bounded clocks.

Bounds are encoded as single integers: ``2*c + 1`` means ``<= c`` and
``2*c`` means ``< c`` (so tighter bounds compare smaller), with a large
sentinel for "unbounded". Matrices are kept canonical (all-pairs closed);
every mutating helper restores canonical form, so inclusion and emptiness
are plain elementwise checks.

Clock 0 is the constant reference. All constants in this package are
integers, which keeps every canonical bound integral: a nonempty zone
always contains an all-integer point, so verdicts and suprema agree with
integer-time exploration.
"""

from __future__ import annotations

INF = 1 << 60


def le(c):
    return 2 * c + 1


def lt(c):
    return 2 * c


def bound_add(a, b):
    if a >= INF or b >= INF:
        return INF
    return a + b - ((a | b) & 1)


def bound_const(v):
    """The integer constant of an encoded bound."""
    return v >> 1


def bound_strict(v):
    return (v & 1) == 0


def zero_matrix(n):
    """All clocks equal to 0."""
    z = le(0)
    return [[z] * n for _ in range(n)]


def close(m):
    """Floyd-Warshall canonicalization in place; returns False if empty."""
    n = len(m)
    for k in range(n):
        mk = m[k]
        for i in range(n):
            mik = m[i][k]
            if mik >= INF:
                continue
            mi = m[i]
            for j in range(n):
                v = bound_add(mik, mk[j])
                if v < mi[j]:
                    mi[j] = v
    for i in range(n):
        if m[i][i] < le(0):
            return False
    return True


def up(m):
    """Delay closure: drop upper bounds relative to the reference clock."""
    for i in range(1, len(m)):
        m[i][0] = INF
    # canonical form is preserved by up


def constrain(m, i, j, bound):
    """Intersect with x_i - x_j <= c (encoded); returns False if empty."""
    if bound_add(m[j][i], bound) < le(0):
        return False
    if bound < m[i][j]:
        m[i][j] = bound
        n = len(m)
        for a in range(n):
            mai = m[a][i]
            if mai >= INF:
                continue
            ma = m[a]
            v0 = bound_add(mai, bound)
            for b in range(n):
                v = bound_add(v0, m[j][b])
                if v < ma[b]:
                    ma[b] = v
    return True


def add_clock(m, pos):
    """Insert a fresh clock (value 0) at row/column ``pos``."""
    n = len(m)
    for row in m:
        row.insert(pos, row[0])
    newrow = m[0][:]
    newrow[pos] = le(0)
    m.insert(pos, newrow)
    return m


def drop_clock(m, pos):
    m.pop(pos)
    for row in m:
        row.pop(pos)
    return m


def freeze(m):
    return tuple(v for row in m for v in row)


def thaw(flat, n):
    return [list(flat[i * n:(i + 1) * n]) for i in range(n)]


def subsumes(a, b):
    """True if zone ``a`` contains zone ``b`` (flattened canonical forms)."""
    for va, vb in zip(a, b):
        if va < vb:
            return False
    return True


def int_sup(m, i):
    """Largest integer value of clock i in the zone (None if unbounded)."""
    v = m[i][0]
    if v >= INF:
        return None
    c = bound_const(v)
    return c - 1 if bound_strict(v) else c


def int_inf(m, i):
    """Smallest integer value of clock i in the zone."""
    v = m[0][i]
    c = -bound_const(v)
    return c + 1 if bound_strict(v) else c


def diff_sup(m, i, j):
    """Largest integer value of x_i - x_j (None if unbounded)."""
    v = m[i][j]
    if v >= INF:
        return None
    c = bound_const(v)
    return c - 1 if bound_strict(v) else c
