"""Gated Graph Transformer over batched syntax graphs.

Update for node ``i`` and head ``h``::

    x'_i = W1 x_i + sum_{j in N(i)} a_ij (W2 x_j + W3 e_ij)
    a_ij = softmax_j(<W4 x_i, W5 x_j + W3 e_ij> / sqrt(d_head))

followed by a scalar-gated residual between ``x_i`` and ``x'_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .graph import GraphBatch
from .substrate import dropout, masked_softmax, tanh_act


class GraphTransformerLayer(nn.Module):
    def __init__(self, d_node: int, d_edge: int, n_heads: int, attn_dropout: float = 0.0):
        super().__init__()
        if d_node % n_heads:
            raise ValueError(f"d_node={d_node} not divisible by n_heads={n_heads}")
        self.d_node, self.n_heads, self.d_head = d_node, n_heads, d_node // n_heads
        self.attn_dropout = attn_dropout
        self.W1 = nn.Parameter(torch.empty(d_node, d_node))
        self.W2 = nn.Parameter(torch.empty(d_node, d_node))
        self.W3 = nn.Parameter(torch.empty(d_edge, d_node))
        self.W4 = nn.Parameter(torch.empty(d_node, d_node))
        self.W5 = nn.Parameter(torch.empty(d_node, d_node))
        for p in self.parameters():
            nn.init.xavier_uniform_(p)

    def forward(self, x: torch.Tensor, edge_feats: torch.Tensor, adjacency: torch.Tensor,
                generator: torch.Generator | None = None):
        """``x`` [B,n,d]; ``edge_feats`` [B,n,n,d_edge] for edge j->i at [b,i,j];
        ``adjacency`` [B,n,n] bool. Returns ``(x', alpha)`` with alpha [B,H,n,n]."""
        B, n, _ = x.shape
        H, dh = self.n_heads, self.d_head
        q = (x @ self.W4).view(B, n, H, dh)
        k = (x @ self.W5).view(B, n, H, dh)
        v = (x @ self.W2).view(B, n, H, dh)
        e = (edge_feats @ self.W3).view(B, n, n, H, dh)

        scores = torch.einsum("bihd,bjhd->bhij", q, k) + torch.einsum("bihd,bijhd->bhij", q, e)
        scores = scores / math.sqrt(dh)
        alpha = masked_softmax(scores, adjacency.unsqueeze(1))
        a = dropout(alpha, self.attn_dropout, self.training, generator)

        agg = torch.einsum("bhij,bjhd->bihd", a, v) + torch.einsum("bhij,bijhd->bihd", a, e)
        return x @ self.W1 + agg.reshape(B, n, H * dh), alpha


class GatedResidual(nn.Module):
    def __init__(self, d_node: int):
        super().__init__()
        self.w_g = nn.Parameter(torch.zeros(3 * d_node))
        self.b_g = nn.Parameter(torch.zeros(()))

    def forward(self, x: torch.Tensor, x_new: torch.Tensor) -> torch.Tensor:
        return gated_residual(x, x_new, self.w_g, self.b_g)


def gated_residual(x, x_new, w_g, b_g):
    g = torch.sigmoid(torch.cat([x_new, x, x_new - x], dim=-1) @ w_g + b_g).unsqueeze(-1)
    return g * x_new + (1 - g) * x


@dataclass
class ProsodyHierarchy:
    """Fused node representations for a batch of sentences.

    ``word_reps`` is padded to the longest sentence; ``word_mask`` marks real
    words. ``sentence_rep`` is the global-node row, or the mean of the word
    rows when the graph was built without a global node.
    """

    word_reps: torch.Tensor      # [B, W_max, 2d]
    word_mask: torch.Tensor      # [B, W_max]
    sentence_rep: torch.Tensor   # [B, 2d]
    n_words: list[int]

    def words_of(self, b: int) -> torch.Tensor:
        return self.word_reps[b, : self.n_words[b]]


def fuse_and_extract(x0: torch.Tensor, x_enc: torch.Tensor, batch: GraphBatch) -> ProsodyHierarchy:
    fused = tanh_act(torch.cat([x0, x_enc], dim=-1))
    w_max = max(batch.n_words)
    word_mask = batch.word_mask[:, :w_max]
    word_reps = fused[:, :w_max] * word_mask.unsqueeze(-1)
    if batch.has_global:
        idx = torch.tensor(batch.n_words).view(-1, 1, 1).expand(-1, 1, fused.shape[-1])
        sentence = fused.gather(1, idx).squeeze(1)
    else:
        sentence = word_reps.sum(1) / torch.tensor(batch.n_words, dtype=fused.dtype).view(-1, 1)
    return ProsodyHierarchy(word_reps, word_mask, sentence, list(batch.n_words))


class GraphEncoder(nn.Module):
    """Node-feature projection, relation embeddings and the gated layer stack."""

    def __init__(self, d_emb: int, d_node: int, d_edge: int, n_relations: int, n_heads: int,
                 n_layers: int, attn_dropout: float = 0.0):
        super().__init__()
        self.proj = nn.Parameter(torch.empty(d_emb, d_node))
        # rows indexed by 2*relation + direction
        self.edge_embedding = nn.Parameter(torch.empty(2 * n_relations, d_edge))
        self.layers = nn.ModuleList(
            GraphTransformerLayer(d_node, d_edge, n_heads, attn_dropout) for _ in range(n_layers))
        self.gates = nn.ModuleList(GatedResidual(d_node) for _ in range(n_layers))
        self.last_attention: list[torch.Tensor] = []

    def initial_features(self, batch: GraphBatch) -> torch.Tensor:
        return (batch.raw @ self.proj) * batch.node_mask.unsqueeze(-1)

    def edge_features(self, batch: GraphBatch) -> torch.Tensor:
        et = batch.edge_type
        feats = self.edge_embedding[et.clamp(min=0)]
        return feats * (et >= 0).unsqueeze(-1)

    def encode(self, batch: GraphBatch, generator: torch.Generator | None = None):
        """Return ``(X, X_enc)``: initial and encoded node features."""
        x0 = self.initial_features(batch)
        ef = self.edge_features(batch)
        adj = batch.adjacency
        # padding rows attend to themselves so every softmax row is nonempty
        pad = ~batch.node_mask
        adj = adj | (torch.diag_embed(pad.to(torch.int64)) > 0)
        keep = batch.node_mask.unsqueeze(-1)
        x = x0
        self.last_attention = []
        for layer, gate in zip(self.layers, self.gates):
            x_new, alpha = layer(x, ef, adj, generator)
            x = gate(x, x_new) * keep
            self.last_attention.append(alpha.detach())
        return x0, x

    def forward(self, batch: GraphBatch, generator: torch.Generator | None = None) -> ProsodyHierarchy:
        x0, x = self.encode(batch, generator)
        return fuse_and_extract(x0, x, batch)
