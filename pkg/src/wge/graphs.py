"""Graph views of a knowledge graph and their renormalized adjacency matrices.

Three undirected views are built from the training triples:

* entity-focused: one node per entity, an edge for every (h, r, t) with h != t;
* relation-focused: relation and predicate-entity nodes from RF constraints
  ``(r_s, e_p, r_o)``, i.e. ``e_p`` is a tail of ``r_s`` and a head of ``r_o``;
* Levi: entities and relations as nodes, each triple linking h-r and r-t.

Adjacency is binary; self-loops are never part of a view's edge set and only
enter through ``A + I`` in :func:`renormalize`.
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

ENTITY = "E"
RELATION = "R"

Node = tuple[str, int]


@dataclass(frozen=True, order=True)
class RFConstraint:
    r_s: int
    e_p: int
    r_o: int


@dataclass
class ViewGraph:
    """Undirected graph whose nodes are tagged vocabulary items ``(kind, id)``."""

    nodes: list[Node]
    edges: set[frozenset] = field(default_factory=set)

    def __post_init__(self):
        self.index = {node: n for n, node in enumerate(self.nodes)}
        if len(self.index) != len(self.nodes):
            raise ValueError("duplicate nodes in view graph")
        for e in self.edges:
            if len(e) != 2:
                raise ValueError(f"self-edge or malformed edge {set(e)}")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def nodes_of_kind(self, kind: str) -> list[int]:
        return [i for kind_, i in self.nodes if kind_ == kind]

    def edge_pairs(self) -> list[tuple[Node, Node]]:
        return sorted(tuple(sorted(e)) for e in self.edges)

    def adjacency(self) -> sp.csr_matrix:
        """Binary symmetric adjacency ``A`` in node-list order."""
        n = self.n_nodes
        if not self.edges:
            return sp.csr_matrix((n, n))
        pairs = np.array([[self.index[u], self.index[v]] for u, v in self.edge_pairs()], dtype=np.int64)
        rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))

    def write_edge_list(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for (ku, u), (kv, v) in self.edge_pairs():
                fh.write(f"{ku}:{u}\t{kv}:{v}\n")


def _edge(u: Node, v: Node):
    return frozenset((u, v)) if u != v else None


def _add(edges: set, u: Node, v: Node) -> None:
    e = _edge(u, v)
    if e is not None:
        edges.add(e)


def build_entity_focused(triples: np.ndarray, n_entities: int) -> ViewGraph:
    edges: set = set()
    for h, _, t in np.asarray(triples).reshape(-1, 3).tolist():
        _add(edges, (ENTITY, h), (ENTITY, t))
    return ViewGraph([(ENTITY, e) for e in range(n_entities)], edges)


def extract_rf_constraints(triples: np.ndarray) -> tuple[list[RFConstraint], Counter]:
    """All distinct RF constraints and the number of constraints per ``(r_s, r_o)`` pair."""
    triples = np.asarray(triples).reshape(-1, 3)
    into: dict[int, set[int]] = defaultdict(set)   # entity -> relations with it as tail
    out_of: dict[int, set[int]] = defaultdict(set)  # entity -> relations with it as head
    for h, r, t in triples.tolist():
        into[t].add(r)
        out_of[h].add(r)
    constraints = []
    for e in sorted(into.keys() & out_of.keys()):
        for r_s in sorted(into[e]):
            for r_o in sorted(out_of[e]):
                constraints.append(RFConstraint(r_s, e, r_o))
    counts = Counter((c.r_s, c.r_o) for c in constraints)
    return constraints, counts


def rank_pairs(counts: Counter) -> list[tuple[int, int]]:
    """Relation pairs by descending co-occurrence count, ties by ascending ids."""
    return sorted(counts, key=lambda pair: (-counts[pair], pair))


def filter_constraints(constraints: Iterable[RFConstraint], beta: float,
                       counts: Counter | None = None) -> list[RFConstraint]:
    """Keep constraints whose ``(r_s, r_o)`` pair is among the top ``ceil(beta * #pairs)``."""
    if not (0.0 < beta <= 1.0):
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    constraints = list(constraints)
    if counts is None:
        counts = Counter((c.r_s, c.r_o) for c in constraints)
    ranked = rank_pairs(counts)
    keep = set(ranked[: math.ceil(beta * len(ranked))])
    return [c for c in constraints if (c.r_s, c.r_o) in keep]


def build_relation_focused(constraints: Iterable[RFConstraint], predicate_nodes: bool = True) -> ViewGraph:
    """Triangle ``r_s - e_p - r_o`` per constraint.

    With ``predicate_nodes=False`` only relation nodes are kept and each
    constraint contributes the single edge ``r_s - r_o``.
    """
    nodes: dict[Node, None] = {}
    edges: set = set()
    for c in constraints:
        rs, ro, ep = (RELATION, c.r_s), (RELATION, c.r_o), (ENTITY, c.e_p)
        nodes[rs] = nodes[ro] = None
        if predicate_nodes:
            nodes[ep] = None
            _add(edges, rs, ep)
            _add(edges, ep, ro)
        _add(edges, rs, ro)
    return ViewGraph(sorted(nodes), edges)


def build_levi(triples: np.ndarray) -> ViewGraph:
    nodes: dict[Node, None] = {}
    edges: set = set()
    for h, r, t in np.asarray(triples).reshape(-1, 3).tolist():
        eh, rr, et = (ENTITY, h), (RELATION, r), (ENTITY, t)
        nodes[eh] = nodes[rr] = nodes[et] = None
        _add(edges, eh, rr)
        _add(edges, rr, et)
    return ViewGraph(sorted(nodes), edges)


def renormalize_matrix(adj) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the row sums of ``A + I``."""
    a_tilde = sp.csr_matrix(adj, dtype=np.float64) + sp.identity(adj.shape[0], format="csr")
    d_inv_sqrt = 1.0 / np.sqrt(np.asarray(a_tilde.sum(axis=1)).ravel())
    scale = sp.diags(d_inv_sqrt)
    out = (scale @ a_tilde @ scale).tocsr()
    out.sort_indices()
    return out


def renormalize(view: ViewGraph) -> sp.csr_matrix:
    return renormalize_matrix(view.adjacency())


def universe_adjacency(view: ViewGraph, n_entities: int, n_relations: int,
                       include_relations: bool = True) -> tuple[sp.csr_matrix, np.ndarray]:
    """Renormalized adjacency of ``view`` laid out over a fixed node universe.

    The universe is entities ``0..n_entities-1`` followed (optionally) by
    relations at offset ``n_entities``. Universe members missing from the view
    become isolated nodes, which leaves every view node's neighbourhood and
    normalization unchanged. Also returns a boolean membership mask.
    """
    size = n_entities + (n_relations if include_relations else 0)
    pos = []
    for kind, i in view.nodes:
        if kind == RELATION and not include_relations:
            raise ValueError("view contains relation nodes but the universe excludes them")
        pos.append(i if kind == ENTITY else n_entities + i)
    pos = np.asarray(pos, dtype=np.int64)
    sub = view.adjacency().tocoo()
    adj = sp.csr_matrix((sub.data, (pos[sub.row], pos[sub.col])), shape=(size, size)) if sub.nnz \
        else sp.csr_matrix((size, size))
    member = np.zeros(size, dtype=bool)
    member[pos] = True
    return renormalize_matrix(adj), member
