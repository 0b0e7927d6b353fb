"""Alignment of hierarchical prosody to the phoneme timeline and additive injection."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .substrate import DimensionError


class AlignmentError(ValueError):
    pass


@dataclass
class ConditioningStreams:
    word: torch.Tensor       # [P, d_model]
    sentence: torch.Tensor   # [P, d_model]
    context: torch.Tensor    # [P, d_model]


def repeat_rows(rows: torch.Tensor, counts) -> torch.Tensor:
    counts = torch.as_tensor(counts, dtype=torch.long)
    if rows.shape[0] != counts.shape[0]:
        raise AlignmentError(f"{rows.shape[0]} rows but {counts.shape[0]} repeat counts")
    return torch.repeat_interleave(rows, counts, dim=0)


class ProsodyConditioner(nn.Module):
    def __init__(self, d_rep: int, d_ctx: int, d_model: int):
        super().__init__()
        self.word_proj = nn.Parameter(torch.empty(d_rep, d_model))
        self.sentence_proj = nn.Parameter(torch.empty(d_rep, d_model))
        self.context_proj = nn.Parameter(torch.empty(d_ctx, d_model))
        for p in self.parameters():
            nn.init.xavier_uniform_(p)

    def upsample(self, word_reps: list[torch.Tensor], sentence_rep: torch.Tensor, context_rep: torch.Tensor,
                 phonemes_per_word: list[list[int]], names: list[str] | None = None) -> ConditioningStreams:
        """Streams over the concatenated phoneme rails of a batch of sentences.

        ``word_reps[b]`` is ``[W_b, d_rep]``; ``sentence_rep`` [B, d_rep];
        ``context_rep`` [B, d_ctx]; ``phonemes_per_word[b]`` has length ``W_b``.
        """
        for b, (w, ppw) in enumerate(zip(word_reps, phonemes_per_word)):
            if w.shape[0] != len(ppw):
                label = names[b] if names else f"#{b}"
                raise AlignmentError(f"sentence {label}: {w.shape[0]} word reps vs {len(ppw)} words in plan")
            if any(c < 1 for c in ppw):
                raise AlignmentError("every word needs at least one phoneme")
        flat_words = torch.cat(word_reps, dim=0)
        counts = [c for ppw in phonemes_per_word for c in ppw]
        per_sentence = [sum(ppw) for ppw in phonemes_per_word]
        word = repeat_rows(flat_words @ self.word_proj, counts)
        sentence = repeat_rows(sentence_rep @ self.sentence_proj, per_sentence)
        context = repeat_rows(context_rep @ self.context_proj, per_sentence)
        return ConditioningStreams(word, sentence, context)


def inject(encoder_out: torch.Tensor, streams: ConditioningStreams) -> torch.Tensor:
    for name in ("word", "sentence", "context"):
        s = getattr(streams, name)
        if s.shape != encoder_out.shape:
            raise DimensionError(f"inject: {name} stream {tuple(s.shape)} vs encoder {tuple(encoder_out.shape)}")
    return encoder_out + streams.word + streams.sentence + streams.context
