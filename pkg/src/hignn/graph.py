"""Syntax graphs: dependency tree + virtual global node."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch

from .corpus_io import EmbeddingTable, SentenceRecord, tree_violation

GLB, HED, UNK, SELF = "GLB", "HED", "UNK", "SELF"
FWD, REV = 0, 1


class RelationVocab:
    """Relation label -> id. Reserved labels always occupy the first ids."""

    reserved = (GLB, HED, UNK, SELF)

    def __init__(self, labels: Iterable[str] = ()):
        names = list(self.reserved) + sorted(set(labels) - set(self.reserved))
        self._ids = {name: i for i, name in enumerate(names)}

    @classmethod
    def from_sentences(cls, sentences: Iterable[SentenceRecord]) -> "RelationVocab":
        return cls(w.deprel for s in sentences for w in s.words)

    @property
    def labels(self) -> list[str]:
        return list(self._ids)

    def __len__(self) -> int:
        return len(self._ids)

    def __getitem__(self, label: str) -> int:
        return self._ids.get(label, self._ids[UNK])

    def __contains__(self, label: str) -> bool:
        return label in self._ids


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    relation: int
    direction: int


@dataclass
class SyntaxGraph:
    """Word nodes ``0..W-1`` (0-based) and, when present, the global node at ``W``."""

    n_words: int
    edges: list[Edge]
    has_global: bool = True
    node_features: torch.Tensor | None = None

    @property
    def n_nodes(self) -> int:
        return self.n_words + int(self.has_global)

    @property
    def global_index(self) -> int:
        if not self.has_global:
            raise ValueError("graph has no global node")
        return self.n_words

    def in_degree(self) -> list[int]:
        deg = [0] * self.n_nodes
        for e in self.edges:
            deg[e.dst] += 1
        return deg

    def edge_type_matrix(self) -> np.ndarray:
        """``[n, n]`` matrix of ``2*relation+direction`` at ``(dst, src)``; -1 where no edge."""
        m = np.full((self.n_nodes, self.n_nodes), -1, dtype=np.int64)
        for e in self.edges:
            m[e.dst, e.src] = 2 * e.relation + e.direction
        return m


def build_syntax_graph(sentence: SentenceRecord, vocab: RelationVocab, include_global: bool = True) -> SyntaxGraph:
    heads = [w.head for w in sentence.words]
    problem = tree_violation(heads)
    if problem:
        raise ValueError(f"invalid dependency tree: {problem}")
    n = len(heads)
    edges = set()
    for i, w in enumerate(sentence.words):
        if w.head == 0:
            continue
        rel = vocab[w.deprel]
        h = w.head - 1
        edges.add(Edge(h, i, rel, FWD))
        edges.add(Edge(i, h, rel, REV))
    if include_global:
        g = n
        for i in range(n):
            edges.add(Edge(g, i, vocab[GLB], FWD))
            edges.add(Edge(i, g, vocab[GLB], REV))
    elif n == 1:
        # a lone word without the global node would have no in-neighbour
        edges.add(Edge(0, 0, vocab[SELF], FWD))
    ordered = sorted(edges, key=lambda e: (e.src, e.dst, e.relation, e.direction))
    return SyntaxGraph(n, ordered, include_global)


def raw_node_vectors(sentence: SentenceRecord, table: EmbeddingTable, include_global: bool = True) -> np.ndarray:
    """Pre-projection node vectors ``[n_nodes, D_emb]``."""
    words = np.stack([table.lookup(w.form) for w in sentence.words])
    if not include_global:
        return words
    if sentence.cls_embedding is not None:
        glob = np.asarray(sentence.cls_embedding, dtype=np.float64)
    else:
        glob = words.mean(axis=0)
    return np.vstack([words, glob[None]])


def init_node_features(graph: SyntaxGraph, sentence: SentenceRecord, table: EmbeddingTable,
                       proj: torch.Tensor) -> SyntaxGraph:
    raw = torch.as_tensor(raw_node_vectors(sentence, table, graph.has_global), dtype=proj.dtype)
    graph.node_features = raw @ proj
    return graph


def hop_diameter(graph: SyntaxGraph) -> int:
    """Largest shortest-path length over node pairs, edges taken as undirected."""
    adj = [set() for _ in range(graph.n_nodes)]
    for e in graph.edges:
        if e.src != e.dst:
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
    best = 0
    for s in range(graph.n_nodes):
        dist = {s: 0}
        q = deque([s])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        if len(dist) < graph.n_nodes:
            return -1
        best = max(best, max(dist.values()))
    return best


@dataclass
class GraphBatch:
    """Dense padded batch of graphs.

    ``edge_type[b, i, j]`` is the edge type on ``j -> i`` (or -1), ``node_mask``
    marks real nodes and ``sentence_index`` gives the row holding the
    sentence-level node (global node, or -1 when absent).
    """

    raw: torch.Tensor            # [B, n, D_emb]
    edge_type: torch.Tensor      # [B, n, n] long
    node_mask: torch.Tensor      # [B, n] bool
    n_words: list[int]
    has_global: bool

    @property
    def adjacency(self) -> torch.Tensor:
        return self.edge_type >= 0

    @property
    def word_mask(self) -> torch.Tensor:
        B, n = self.node_mask.shape
        idx = torch.arange(n).expand(B, n)
        return idx < torch.tensor(self.n_words).view(-1, 1)


def collate_graphs(graphs: Sequence[SyntaxGraph], raws: Sequence[np.ndarray], dtype=torch.float64) -> GraphBatch:
    B = len(graphs)
    n = max(g.n_nodes for g in graphs)
    d = raws[0].shape[1]
    raw = np.zeros((B, n, d))
    et = np.full((B, n, n), -1, dtype=np.int64)
    mask = np.zeros((B, n), dtype=bool)
    for b, (g, r) in enumerate(zip(graphs, raws)):
        k = g.n_nodes
        raw[b, :k] = r
        et[b, :k, :k] = g.edge_type_matrix()
        mask[b, :k] = True
    has_global = all(g.has_global for g in graphs)
    return GraphBatch(torch.as_tensor(raw, dtype=dtype), torch.as_tensor(et), torch.as_tensor(mask),
                      [g.n_words for g in graphs], has_global)
