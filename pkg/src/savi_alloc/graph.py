"""Latent dependency DAG with a synthetic root node.

Real latents are numbered ``1..N``; node ``0`` is the synthetic root whose
children are every node without a real parent.  The root has dimension 0 and
only exists to start the recursive accurate-SAVI traversal.
"""

from __future__ import annotations

import graphlib
from dataclasses import dataclass, field

from .errors import CycleDetected, DanglingEdge

ROOT = 0


@dataclass(frozen=True)
class LatentGraph:
    node_count: int
    edges: tuple[tuple[int, int], ...]
    topo_order: tuple[int, ...]
    latent_dims: tuple[int, ...]
    _children: tuple[tuple[int, ...], ...] = field(repr=False)
    _parents: tuple[tuple[int, ...], ...] = field(repr=False)
    _position: tuple[int, ...] = field(repr=False)

    @property
    def n_latents(self) -> int:
        return self.node_count - 1

    @property
    def nodes(self) -> tuple[int, ...]:
        """Real nodes in topological order (alias of ``topo_order``)."""
        return self.topo_order

    def children(self, i: int) -> list[int]:
        self._check(i)
        return list(self._children[i])

    def parents(self, i: int) -> list[int]:
        """Real parents of ``i`` (the synthetic root is never listed)."""
        self._check(i)
        return list(self._parents[i])

    def position(self, i: int) -> int:
        """Index of ``i`` in the topological order; the root sits at -1."""
        self._check(i)
        return self._position[i]

    def descendants(self, i: int) -> list[int]:
        self._check(i)
        seen = set()
        stack = list(self._children[i])
        while stack:
            j = stack.pop()
            if j not in seen:
                seen.add(j)
                stack.extend(self._children[j])
        return sorted(seen, key=self._position.__getitem__)

    def is_leaf(self, i: int) -> bool:
        return not self._children[i]

    def _check(self, i):
        if not 0 <= i < self.node_count:
            raise IndexError(f"node {i} out of range 0..{self.node_count - 1}")


def build_graph(node_dims, edges) -> LatentGraph:
    """Validate a latent DAG and attach the synthetic root.

    ``node_dims[k]`` is the dimension of node ``k + 1``; ``edges`` are
    ``(parent, child)`` pairs over ``1..N``.  Ties in the topological order are
    broken by ascending node index so every traversal is reproducible.
    """
    dims = tuple(int(d) for d in node_dims)
    n = len(dims)
    edges = tuple((int(a), int(b)) for a, b in edges)
    for a, b in edges:
        if not (1 <= a <= n and 1 <= b <= n):
            raise DanglingEdge(f"edge ({a}, {b}) references a node outside 1..{n}")
        if a == b:
            raise CycleDetected(f"self loop on node {a}")
    edges = tuple(sorted(set(edges)))

    sorter = graphlib.TopologicalSorter({i: () for i in range(1, n + 1)})
    for a, b in edges:
        sorter.add(b, a)
    try:
        sorter.prepare()
    except graphlib.CycleError as exc:
        raise CycleDetected(f"cycle through nodes {exc.args[1]}") from None
    order = []
    while sorter.is_active():
        ready = sorted(sorter.get_ready())
        order.extend(ready)
        sorter.done(*ready)

    position = [-1] * (n + 1)
    for pos, i in enumerate(order):
        position[i] = pos
    children = [[] for _ in range(n + 1)]
    parents = [[] for _ in range(n + 1)]
    for a, b in edges:
        children[a].append(b)
        parents[b].append(a)
    for i in range(1, n + 1):
        if not parents[i]:
            children[ROOT].append(i)
    key = position.__getitem__
    return LatentGraph(
        node_count=n + 1,
        edges=edges,
        topo_order=tuple(order),
        latent_dims=(0,) + dims,
        _children=tuple(tuple(sorted(c, key=key)) for c in children),
        _parents=tuple(tuple(sorted(p, key=key)) for p in parents),
        _position=tuple(position),
    )


def chain(n: int, dim: int) -> LatentGraph:
    """``1 -> 2 -> ... -> n``."""
    return build_graph([dim] * n, [(i, i + 1) for i in range(1, n)])


def diamond(dim: int) -> LatentGraph:
    """``1 -> {2, 3} -> 4``."""
    return build_graph([dim] * 4, [(1, 2), (1, 3), (2, 4), (3, 4)])


def full_reference(n: int, dim: int) -> LatentGraph:
    """Every frame references all earlier frames (the setup of the 3-latent
    walk-through of the recursive schedule)."""
    return build_graph([dim] * n, [(i, j) for j in range(1, n + 1) for i in range(1, j)])


def independent(n: int, dim: int) -> LatentGraph:
    """No edges: a fully factorized latent."""
    return build_graph([dim] * n, [])
