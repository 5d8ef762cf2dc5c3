"""Communication graph, column-stochastic weights and epoch timing.

Nodes are labelled ``0..N-1``. Edges are ordered ``(src, dst)`` pairs meaning
``src`` can send to ``dst``; a bidirectional channel is two directed edges.
Self-loops are never stored, the self weight is implicit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path


class TopologyError(ValueError):
    """Raised for malformed or insufficiently connected graphs."""


@dataclass(frozen=True)
class Graph:
    node_count: int
    edges: tuple[tuple[int, int], ...]
    diameter_bound: int | None = None

    def __post_init__(self):
        if self.node_count < 1:
            raise TopologyError("graph needs at least one node")
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        seen = set()
        for a, b in edges:
            if not (0 <= a < self.node_count and 0 <= b < self.node_count):
                raise TopologyError(f"edge ({a}, {b}) references unknown node")
            if a == b:
                raise TopologyError(f"self-loop on node {a} is not allowed")
            if (a, b) in seen:
                raise TopologyError(f"duplicate edge ({a}, {b})")
            seen.add((a, b))
        object.__setattr__(self, "edges", edges)
        if self.diameter_bound is not None and self.diameter_bound < 1:
            raise TopologyError("diameter_bound must be a positive integer")

    @cached_property
    def out_neighbors(self) -> tuple[tuple[int, ...], ...]:
        out = [[] for _ in range(self.node_count)]
        for a, b in self.edges:
            out[a].append(b)
        return tuple(tuple(o) for o in out)

    @cached_property
    def in_neighbors(self) -> tuple[tuple[int, ...], ...]:
        inn = [[] for _ in range(self.node_count)]
        for a, b in self.edges:
            inn[b].append(a)
        return tuple(tuple(i) for i in inn)

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        """Position of each edge in ``edges``; used to key per-edge delay draws."""
        return {e: n for n, e in enumerate(self.edges)}

    def out_degree(self, i: int) -> int:
        return len(self.out_neighbors[i])

    def adjacency(self) -> csr_matrix:
        n = self.node_count
        if not self.edges:
            return csr_matrix((n, n))
        src, dst = np.array(self.edges).T
        return csr_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))

    def effective_diameter_bound(self) -> int:
        """Configured bound if present, otherwise the exact diameter."""
        if self.diameter_bound is not None:
            return self.diameter_bound
        return exact_diameter(self)


@dataclass(frozen=True)
class WeightAssignment:
    """Each node splits its mass equally between itself and its out-neighbors."""

    out_weight: tuple[float, ...]
    graph: Graph = field(repr=False)

    def self_weight(self, i: int) -> float:
        return self.out_weight[i]

    def matrix(self) -> np.ndarray:
        """Dense ``P`` with ``P[j, i] = p_ji`` (column ``i`` holds node i's split)."""
        n = self.graph.node_count
        P = np.zeros((n, n))
        for i in range(n):
            P[i, i] = self.out_weight[i]
            for j in self.graph.out_neighbors[i]:
                P[j, i] = self.out_weight[i]
        return P


def validate_strong_connectivity(graph: Graph) -> bool:
    if graph.node_count == 1:
        return True
    n_comp, _ = connected_components(graph.adjacency(), directed=True, connection="strong")
    return n_comp == 1


def synthesize_weights(graph: Graph) -> WeightAssignment:
    if not validate_strong_connectivity(graph):
        raise TopologyError("weights require a strongly connected graph")
    return WeightAssignment(
        out_weight=tuple(1.0 / (graph.out_degree(i) + 1) for i in range(graph.node_count)),
        graph=graph,
    )


def exact_diameter(graph: Graph) -> int:
    """Longest shortest directed path.

    A single node has no pairs to separate; 1 is returned so the value is still a
    usable (positive) diameter bound.
    """
    if not validate_strong_connectivity(graph):
        raise TopologyError("diameter is undefined for a graph that is not strongly connected")
    if graph.node_count == 1:
        return 1
    dist = shortest_path(graph.adjacency(), method="D", directed=True, unweighted=True)
    return int(dist.max())


def epoch_length(D: int, tau_bar: int) -> int:
    """Rounds needed for any node to hear from any other: ``D(1 + tau_bar) + tau_bar``."""
    if D < 1 or tau_bar < 0:
        raise ValueError("need D >= 1 and tau_bar >= 0")
    return D * (1 + tau_bar) + tau_bar


def check_delay_bound(tau_bar) -> int:
    if isinstance(tau_bar, bool) or int(tau_bar) != tau_bar or tau_bar < 0:
        raise ValueError(f"tau_bar must be a non-negative integer, got {tau_bar!r}")
    return int(tau_bar)


# --- file format -----------------------------------------------------------

def graph_to_dict(graph: Graph) -> dict:
    d = {"nodes": graph.node_count, "edges": [list(e) for e in graph.edges]}
    if graph.diameter_bound is not None:
        d["diameter_bound"] = graph.diameter_bound
    return d


def graph_from_dict(d: dict) -> Graph:
    try:
        nodes = d["nodes"]
        edges = d["edges"]
    except KeyError as exc:
        raise TopologyError(f"graph is missing field {exc.args[0]!r}") from None
    if isinstance(nodes, bool) or not isinstance(nodes, int):
        raise TopologyError("'nodes' must be an integer")
    for e in edges:
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(x, int) for x in e)):
            raise TopologyError(f"malformed edge {e!r}")
    return Graph(nodes, tuple(tuple(e) for e in edges), d.get("diameter_bound"))


def dumps_graph(graph: Graph) -> str:
    return json.dumps(graph_to_dict(graph)) + "\n"


def loads_graph(text: str) -> Graph:
    return graph_from_dict(json.loads(text))


def load_graph(path) -> Graph:
    return loads_graph(Path(path).read_text(encoding="utf-8"))


def save_graph(graph: Graph, path) -> None:
    Path(path).write_text(dumps_graph(graph), encoding="utf-8", newline="\n")


# --- generators (tests and bundled scenarios) ------------------------------

def directed_cycle(n: int) -> Graph:
    if n == 1:
        return Graph(1, ())
    return Graph(n, tuple((i, (i + 1) % n) for i in range(n)))


def complete_graph(n: int) -> Graph:
    return Graph(n, tuple((i, j) for i in range(n) for j in range(n) if i != j))


def random_strongly_connected(n: int, rng: np.random.Generator, extra_edge_prob: float = 0.3) -> Graph:
    """Random Hamiltonian cycle plus independent extra directed edges."""
    if n == 1:
        return Graph(1, ())
    order = rng.permutation(n)
    edges = {(int(order[i]), int(order[(i + 1) % n])) for i in range(n)}
    for a in range(n):
        for b in range(n):
            if a != b and rng.random() < extra_edge_prob:
                edges.add((a, b))
    return Graph(n, tuple(sorted(edges)))


def feeder_graph(n: int, target_diameter: int, rng: np.random.Generator,
                 core_size: int | None = None, core_degree: int = 4,
                 max_tries: int = 200) -> Graph:
    """Bidirectional meshed core with radial branches hanging off it.

    Two opposite branches are grown until the exact diameter reaches
    ``target_diameter``; remaining nodes are attached as short laterals that do
    not change the diameter. Retries with fresh randomness until the exact
    diameter matches.
    """
    core_size = core_size or max(2, n // 2)
    for _ in range(max_tries):
        edges: set[tuple[int, int]] = set()

        def link(a, b):
            edges.add((a, b))
            edges.add((b, a))

        # core: ring plus random chords
        for i in range(core_size):
            link(i, (i + 1) % core_size)
        for i in range(core_size):
            for _c in range(max(0, core_degree - 2) // 2):
                j = int(rng.integers(core_size))
                if j != i:
                    link(i, j)
        g = Graph(core_size, tuple(sorted(edges)))
        dist = shortest_path(g.adjacency(), method="D", unweighted=True)
        a, b = np.unravel_index(np.argmax(dist), dist.shape)
        core_d = int(dist[a, b])
        remaining = target_diameter - core_d
        if remaining < 0 or n - core_size < remaining:
            continue
        arm_a = remaining // 2
        arm_b = remaining - arm_a
        nxt = core_size
        for root, length in ((int(a), arm_a), (int(b), arm_b)):
            prev = root
            for _ in range(length):
                link(prev, nxt)
                prev, nxt = nxt, nxt + 1
        depth = shortest_path(Graph(nxt, tuple(sorted(edges))).adjacency(), method="D",
                              unweighted=True)
        ecc = depth.max(axis=1)
        while nxt < n:
            candidates = [v for v in range(nxt) if ecc[v] < target_diameter]
            if not candidates:
                break
            parent = int(candidates[int(rng.integers(len(candidates)))])
            link(parent, nxt)
            nxt += 1
            g = Graph(nxt, tuple(sorted(edges)))
            depth = shortest_path(g.adjacency(), method="D", unweighted=True)
            ecc = depth.max(axis=1)
        if nxt < n:
            continue
        g = Graph(n, tuple(sorted(edges)))
        if exact_diameter(g) == target_diameter:
            return g
    raise TopologyError(f"could not build a {n}-node graph with diameter {target_diameter}")
