"""Minimum-cost perfect matching on square cost matrices.

Shortest-augmenting-path formulation with dual potentials (the O(n^3)
Hungarian algorithm).  Costs are carried as (real, tie) pairs under
lexicographic order: the real part is the caller's cost, and the tie part is
an exact rational perturbation ``column * beta**(row+1)`` with
``beta = 1/(n+2)``.  Distinct matchings always have distinct tie sums (the
sum is a base-(n+2) expansion of the assignment vector), so the perturbed
problem has a unique optimum: among matchings whose real costs compare
equal, the one assigning the lowest column to row 0, then to row 1, and so
on, wins.  That makes results reproducible without depending on iteration
order inside the solver.

Ties are resolved exactly when equal real costs compare equal as floats —
true whenever the tied entries are the same values (the common case:
uniform default costs) — while the real part keeps ordinary float
arithmetic, so optimality matches any float implementation.
"""
from __future__ import annotations

import math
from fractions import Fraction

_ZERO = Fraction(0)


def hungarian_assign(matrix) -> tuple[int, ...]:
    """Columns assigned to rows: result[i] is the column matched to row i.

    The matching minimizes total cost; among equal-cost matchings the
    lexicographically smallest (row, column) assignment is returned.  The
    matrix must be square with finite, non-negative entries.
    """
    rows = [list(map(float, row)) for row in matrix]
    n = len(rows)
    if n == 0:
        return ()
    for i, row in enumerate(rows):
        if len(row) != n:
            raise ValueError(f"matrix is not square: row {i} has {len(row)} entries, want {n}")
        for value in row:
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"matrix entries must be finite and non-negative, got {value}")

    beta = Fraction(1, n + 2)
    cost = [
        [(row[j], j * beta ** (i + 1)) for j in range(n)]
        for i, row in enumerate(rows)
    ]

    # Potentials and matching state use 1-based columns with column 0 as the
    # virtual root of each augmenting search.
    inf = (math.inf, _ZERO)
    u = [(0.0, _ZERO)] * (n + 1)        # row potentials, indexed by row+1
    v = [(0.0, _ZERO)] * (n + 1)        # column potentials
    row_of = [0] * (n + 1)              # row currently matched to column (1-based; 0 = free)
    way = [0] * (n + 1)

    for i in range(1, n + 1):
        row_of[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            delta, j1 = inf, 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                c, t = cost[i0 - 1][j - 1]
                cur = (c - u[i0][0] - v[j][0], t - u[i0][1] - v[j][1])
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta, j1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    ui = u[row_of[j]]
                    u[row_of[j]] = (ui[0] + delta[0], ui[1] + delta[1])
                    v[j] = (v[j][0] - delta[0], v[j][1] - delta[1])
                else:
                    minv[j] = (minv[j][0] - delta[0], minv[j][1] - delta[1])
            j0 = j1
            if row_of[j0] == 0:
                break
        while j0:                        # flip the augmenting path
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1

    result = [0] * n
    for j in range(1, n + 1):
        result[row_of[j] - 1] = j - 1
    return tuple(result)


def assignment_cost(matrix, columns) -> float:
    """Total cost of an assignment as produced by hungarian_assign."""
    return float(sum(matrix[i][j] for i, j in enumerate(columns)))
