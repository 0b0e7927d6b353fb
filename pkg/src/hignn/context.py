"""Cross-sentence attention over (previous, current, next) sentence representations."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .substrate import masked_softmax


@dataclass
class ContextAggregationFeatures:
    slots: torch.Tensor   # [B, 3, d] ordered prev, cur, next
    mask: torch.Tensor    # [B, 3] bool


def build_caf(prev_rep: torch.Tensor | None, cur_rep: torch.Tensor, next_rep: torch.Tensor | None,
              absent_embedding: torch.Tensor) -> ContextAggregationFeatures:
    """Single-window form: each rep is ``[d]`` or ``None``."""
    slots, mask = [], []
    for rep in (prev_rep, cur_rep, next_rep):
        slots.append(absent_embedding if rep is None else rep)
        mask.append(rep is not None)
    return ContextAggregationFeatures(torch.stack(slots)[None], torch.tensor([mask]))


def build_caf_batch(reps: torch.Tensor, index: torch.Tensor, absent_embedding: torch.Tensor) -> ContextAggregationFeatures:
    """``reps`` [S, d] holds sentence reps; ``index`` [B, 3] picks rows, -1 = absent."""
    present = index >= 0
    gathered = reps[index.clamp(min=0)]
    slots = torch.where(present.unsqueeze(-1), gathered, absent_embedding.expand_as(gathered))
    return ContextAggregationFeatures(slots, present)


class ContextAttention(nn.Module):
    def __init__(self, d_in: int, d_ctx: int):
        super().__init__()
        self.d_ctx = d_ctx
        self.Q = nn.Parameter(torch.empty(d_in, d_ctx))
        self.K = nn.Parameter(torch.empty(d_in, d_ctx))
        self.V = nn.Parameter(torch.empty(d_in, d_ctx))
        self.O = nn.Parameter(torch.empty(d_ctx, d_ctx))
        self.absent = nn.Parameter(torch.empty(1, d_in))
        for p in self.parameters():
            nn.init.xavier_uniform_(p)
        self.last_attention: torch.Tensor | None = None

    def forward(self, caf: ContextAggregationFeatures, cur_rep: torch.Tensor) -> torch.Tensor:
        """``cur_rep`` [B, d_in] -> context rep [B, d_ctx]."""
        q = cur_rep @ self.Q                     # [B, c]
        k = caf.slots @ self.K                   # [B, 3, c]
        v = caf.slots @ self.V
        scores = torch.einsum("bc,bsc->bs", q, k) / math.sqrt(self.d_ctx)
        alpha = masked_softmax(scores, caf.mask)
        self.last_attention = alpha.detach()
        return torch.einsum("bs,bsc->bc", alpha, v) @ self.O

    @property
    def absent_embedding(self) -> torch.Tensor:
        return self.absent[0]
