"""Exact Wasserstein distances between discrete distributions.

The transport LP is solved with the transportation simplex (MODI / u-v
method) on an explicit spanning-tree basis.  ``wasserstein_bruteforce`` is an
independent oracle that enumerates every basic solution of the
transportation polytope; it is only meant for tiny instances.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .distributions import DiscreteDistribution

# consecutive degenerate pivots tolerated before switching to Bland's rule
_DEGENERATE_STREAK = 50
_MAX_PIVOTS = 1_000_000


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray
    cost: float

    def to_csv(self, path, cost_matrix: np.ndarray | None = None) -> None:
        rows, cols = np.nonzero(self.plan > 0)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "mass", "cost"])
            for i, j in zip(rows, cols):
                c = "" if cost_matrix is None else repr(float(cost_matrix[i, j]))
                writer.writerow([int(i), int(j), repr(float(self.plan[i, j])), c])


def cost_matrix(x: np.ndarray, y: np.ndarray, rho: int) -> np.ndarray:
    """``||x_i - y_j||^rho``; squared distances are used directly for rho=2."""
    if rho == 2:
        return cdist(x, y, "sqeuclidean")
    d = cdist(x, y, "euclidean")
    return d if rho == 1 else d**rho


def _check_pair(p: DiscreteDistribution, q: DiscreteDistribution, rho) -> None:
    if len(p) == 0 or len(q) == 0:
        raise ValueError("empty support")
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    if rho < 1:
        raise ValueError("rho must be >= 1")


class _TreeBasis:
    """Spanning tree on rows 0..m-1 and columns m..m+n-1 with basic flows.

    Once ``root`` is called the tree is kept rooted at row 0 with parent
    pointers, depths and dual potentials, all updated incrementally per pivot.
    """

    def __init__(self, m: int, n: int):
        self.m, self.n = m, n
        self.adj: list[set[int]] = [set() for _ in range(m + n)]
        self.flow: dict[tuple[int, int], float] = {}

    def add(self, i: int, j: int, x: float) -> None:
        self.flow[(i, j)] = x
        self.adj[i].add(self.m + j)
        self.adj[self.m + j].add(i)

    def remove(self, i: int, j: int) -> None:
        del self.flow[(i, j)]
        self.adj[i].discard(self.m + j)
        self.adj[self.m + j].discard(i)

    def _cost(self, a: int, b: int) -> float:
        return self.C[a, b - self.m] if a < self.m else self.C[b, a - self.m]

    def _hang(self, top: int, parent: int, depth: int) -> list[int]:
        """Point the subtree at ``top`` towards ``parent`` and refresh depths and potentials."""
        self.parent[top] = parent
        self.depth[top] = depth
        if parent >= 0:
            self.pot[top] = self._cost(top, parent) - self.pot[parent]
        seen = [top]
        queue = deque([top])
        while queue:
            a = queue.popleft()
            for b in self.adj[a]:
                if b != self.parent[a]:
                    self.parent[b] = a
                    self.depth[b] = self.depth[a] + 1
                    self.pot[b] = self._cost(a, b) - self.pot[a]
                    seen.append(b)
                    queue.append(b)
        return seen

    def root(self, C: np.ndarray) -> None:
        self.C = C
        size = self.m + self.n
        self.parent = [-1] * size
        self.depth = [0] * size
        self.pot = np.zeros(size)
        self._hang(0, -1, 0)

    def cycle(self, i: int, j: int) -> list[tuple[int, int]]:
        """Tree cells on the path from column ``j`` to row ``i``, in order."""
        a, b = self.m + j, i
        left, right = [], []
        while a != b:
            if self.depth[a] >= self.depth[b]:
                left.append(a)
                a = self.parent[a]
            else:
                right.append(b)
                b = self.parent[b]
        nodes = left + [a] + right[::-1]
        m = self.m
        return [(y, x - m) if y < m else (x, y - m) for x, y in zip(nodes, nodes[1:])]

    def pivot(self, enter: tuple[int, int], leave: tuple[int, int], x: float) -> None:
        r, c = leave
        cnode = self.m + c
        child = r if self.parent[r] == cnode else cnode
        self.remove(r, c)
        ie, je = enter
        jnode = self.m + je
        # endpoint of the entering cell that hangs below the removed edge
        node = ie
        in_sub = False
        while node != -1:
            if node == child:
                in_sub = True
                break
            node = self.parent[node]
        low, high = (ie, jnode) if in_sub else (jnode, ie)
        self.add(ie, je, x)
        self._hang(low, high, self.depth[high] + 1)

    def potentials(self) -> tuple[np.ndarray, np.ndarray]:
        return self.pot[: self.m], self.pot[self.m :]


def _least_cost_basis(a: np.ndarray, b: np.ndarray, C: np.ndarray) -> _TreeBasis:
    m, n = C.shape
    basis = _TreeBasis(m, n)
    supply, demand = a.copy(), b.copy()
    live_r = np.ones(m, dtype=bool)
    live_c = np.ones(n, dtype=bool)
    work = C.astype(float).copy()
    big = np.inf
    for _ in range(m + n - 1):
        flat = int(np.argmin(work))
        i, j = divmod(flat, n)
        x = min(supply[i], demand[j])
        basis.add(i, j, x)
        supply[i] -= x
        demand[j] -= x
        # retire exactly one line per basic cell so the basis stays a tree
        retire_row = supply[i] <= demand[j]
        if live_r.sum() == 1:
            retire_row = False
        if live_c.sum() == 1:
            retire_row = True
        if retire_row:
            live_r[i] = False
            work[i, :] = big
            demand[j] = max(demand[j], 0.0)
        else:
            live_c[j] = False
            work[:, j] = big
            supply[i] = max(supply[i], 0.0)
    return basis


def _basis_from_plan(plan: np.ndarray, C: np.ndarray) -> _TreeBasis | None:
    """Spanning tree containing the support of ``plan``; None if the support has a cycle."""
    m, n = plan.shape
    parent = list(range(m + n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    basis = _TreeBasis(m, n)
    rows, cols = np.nonzero(plan > 0)
    for i, j in zip(rows, cols):
        ri, rj = find(i), find(m + j)
        if ri == rj:
            return None
        parent[ri] = rj
        basis.add(int(i), int(j), float(plan[i, j]))
    # join remaining components with zero-flow cheap cells
    order = np.argsort(C, axis=None, kind="stable")
    for flat in order:
        if len(basis.flow) == m + n - 1:
            break
        i, j = divmod(int(flat), n)
        ri, rj = find(i), find(m + j)
        if ri != rj:
            parent[ri] = rj
            basis.add(i, j, 0.0)
    return basis


def solve_transport(a, b, C, init_plan: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Minimise ``<P, C>`` over couplings of ``a`` and ``b`` (both summing to 1).

    Returns the optimal plan and its cost.  ``init_plan`` may be any feasible
    plan whose support is a forest (e.g. a hard cluster assignment); it is
    used as the starting basis.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    # remove sum drift so supply and demand balance exactly in the tree solve
    b = b * (a.sum() / b.sum())
    if m == 1 or n == 1:
        plan = b[None, :].copy() if m == 1 else a[:, None].copy()
        return plan, float(np.sum(plan * C))

    basis = None
    if init_plan is not None:
        basis = _basis_from_plan(np.asarray(init_plan, dtype=float), C)
    if basis is None:
        basis = _least_cost_basis(a, b, C)

    tol = 1e-13 * max(1.0, float(np.max(np.abs(C))))
    basis.root(C)
    degenerate = 0
    for _ in range(_MAX_PIVOTS):
        u, v = basis.potentials()
        reduced = C - u[:, None] - v[None, :]
        if degenerate < _DEGENERATE_STREAK:
            flat = int(np.argmin(reduced))
            if reduced.flat[flat] >= -tol:
                break
        else:
            neg = np.flatnonzero(reduced < -tol)
            if neg.size == 0:
                break
            flat = int(neg[0])
        ie, je = divmod(flat, n)
        cells = basis.cycle(ie, je)
        # cells alternate -, +, -, ... starting next to the entering column
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(basis.flow[c] for c in minus)
        leaving = min((c for c in minus if basis.flow[c] <= theta), key=lambda c: (basis.flow[c], c))
        degenerate = degenerate + 1 if theta <= 0 else 0
        for c in minus:
            basis.flow[c] -= theta
        for c in plus:
            basis.flow[c] += theta
        basis.pivot((ie, je), leaving, theta)
    else:
        raise RuntimeError("transportation simplex did not converge")

    plan = np.zeros((m, n))
    for (i, j), x in basis.flow.items():
        plan[i, j] = x
    plan[plan < 0] = 0.0
    return plan, float(np.sum(plan * C))


def wasserstein_discrete(
    p: DiscreteDistribution,
    q: DiscreteDistribution,
    rho: int = 2,
    init_plan: np.ndarray | None = None,
) -> tuple[float, TransportPlan]:
    _check_pair(p, q, rho)
    C = cost_matrix(p.locations, q.locations, rho)
    plan, cost = solve_transport(p.weights, q.weights, C, init_plan)
    cost = max(cost, 0.0)
    return cost ** (1.0 / rho), TransportPlan(plan, cost)


def _spanning_trees(m: int, n: int):
    """Yield every spanning tree of K_{m,n} as a tuple of (i, j) cells."""
    cells = [(i, j) for i in range(m) for j in range(n)]
    need = m + n - 1

    def find(parent, x):
        while parent[x] != x:
            x = parent[x]
        return x

    def rec(start, chosen, parent):
        if len(chosen) == need:
            yield tuple(chosen)
            return
        if len(cells) - start < need - len(chosen):
            return
        for k in range(start, len(cells)):
            i, j = cells[k]
            ri, rj = find(parent, i), find(parent, m + j)
            if ri == rj:
                continue
            child = list(parent)
            child[ri] = rj
            chosen.append(cells[k])
            yield from rec(k + 1, chosen, child)
            chosen.pop()

    yield from rec(0, [], list(range(m + n)))


def _tree_flow(tree, a, b, m, n) -> np.ndarray | None:
    """Unique flow supported on a spanning tree; None if it is infeasible."""
    supply = {i: a[i] for i in range(m)}
    supply.update({m + j: b[j] for j in range(n)})
    adj = {k: set() for k in range(m + n)}
    for i, j in tree:
        adj[i].add(m + j)
        adj[m + j].add(i)
    plan = np.zeros((m, n))
    leaves = deque(k for k in adj if len(adj[k]) == 1)
    while leaves:
        k = leaves.popleft()
        if not adj[k]:
            continue
        other = adj[k].pop()
        adj[other].discard(k)
        x = supply[k]
        i, j = (k, other - m) if k < m else (other, k - m)
        plan[i, j] = x
        supply[other] -= x
        if len(adj[other]) == 1:
            leaves.append(other)
    if plan.min() < -1e-12:
        return None
    return plan


def _tree_count(m: int, n: int) -> int:
    return m ** (n - 1) * n ** (m - 1)


def wasserstein_bruteforce(p: DiscreteDistribution, q: DiscreteDistribution, rho: int = 2,
                           max_trees: int = 200_000) -> float:
    """Transport LP value by enumerating all basic solutions.

    Every vertex of the transportation polytope is the flow on some
    spanning tree of the complete bipartite graph, so the minimum over
    feasible tree flows is the LP optimum.
    """
    _check_pair(p, q, rho)
    m, n = len(p), len(q)
    if m * n > 64 or _tree_count(m, n) > max_trees:
        raise ValueError(f"instance too large for enumeration ({m}x{n})")
    C = cost_matrix(p.locations, q.locations, rho)
    a = p.weights
    b = q.weights * (a.sum() / q.weights.sum())
    best = math.inf
    for tree in _spanning_trees(m, n):
        plan = _tree_flow(tree, a, b, m, n)
        if plan is not None:
            best = min(best, float(np.sum(np.clip(plan, 0, None) * C)))
    return max(best, 0.0) ** (1.0 / rho)
