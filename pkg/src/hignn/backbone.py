"""Reduced non-autoregressive acoustic model.

All blocks act row-wise, so a batch is just the concatenation of the phoneme
(or frame) rails of its sentences.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .substrate import DimensionError, mse_loss


class FeedForwardBlock(nn.Module):
    def __init__(self, d: int, d_hidden: int | None = None):
        super().__init__()
        d_hidden = d_hidden or 2 * d
        self.w1 = nn.Parameter(torch.empty(d, d_hidden))
        self.b1 = nn.Parameter(torch.zeros(d_hidden))
        self.w2 = nn.Parameter(torch.empty(d_hidden, d))
        self.b2 = nn.Parameter(torch.zeros(d))
        self.ln_gain = nn.Parameter(torch.ones(d))
        self.ln_bias = nn.Parameter(torch.zeros(d))
        nn.init.xavier_uniform_(self.w1)
        nn.init.xavier_uniform_(self.w2)

    def forward(self, x):
        h = torch.relu(x @ self.w1 + self.b1) @ self.w2 + self.b2
        return F.layer_norm(x + h, (x.shape[-1],), self.ln_gain, self.ln_bias)


class ScalarHead(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.w1 = nn.Parameter(torch.empty(d, d))
        self.b1 = nn.Parameter(torch.zeros(d))
        self.w2 = nn.Parameter(torch.empty(d, 1))
        self.b2 = nn.Parameter(torch.zeros(1))
        nn.init.xavier_uniform_(self.w1)
        nn.init.xavier_uniform_(self.w2)

    def forward(self, x):
        return (torch.relu(x @ self.w1 + self.b1) @ self.w2 + self.b2).squeeze(-1)


def length_regulate(hidden: torch.Tensor, durations) -> torch.Tensor:
    durations = torch.as_tensor(durations, dtype=torch.long)
    if durations.shape[0] != hidden.shape[0]:
        raise DimensionError(f"length_regulate: {hidden.shape[0]} rows vs {durations.shape[0]} durations")
    if bool((durations < 1).any()):
        bad = int(torch.nonzero(durations < 1)[0])
        raise ValueError(f"length_regulate: nonpositive duration at phoneme {bad}")
    return torch.repeat_interleave(hidden, durations, dim=0)


def durations_from_log(logdur: torch.Tensor) -> torch.Tensor:
    return torch.clamp(torch.round(torch.exp(logdur.detach())), min=1).to(torch.long)


@dataclass
class TTSOutput:
    mel: torch.Tensor      # [T, D_mel]
    f0: torch.Tensor       # [T], normalised units
    logdur: torch.Tensor   # [P]
    durations: torch.Tensor  # [P] frames used for regulation


class Backbone(nn.Module):
    def __init__(self, n_phonemes: int, n_speakers: int, d_model: int, d_mel: int, n_blocks: int = 2):
        super().__init__()
        self.n_phonemes = n_phonemes
        self.phoneme_embedding = nn.Parameter(torch.empty(n_phonemes, d_model))
        self.speaker_embedding = nn.Parameter(torch.empty(max(n_speakers, 1), d_model))
        self.encoder = nn.ModuleList(FeedForwardBlock(d_model) for _ in range(n_blocks))
        self.duration_head = ScalarHead(d_model)
        self.pitch_head = ScalarHead(d_model)
        self.decoder = nn.ModuleList(FeedForwardBlock(d_model) for _ in range(n_blocks))
        self.mel_out = nn.Parameter(torch.empty(d_model, d_mel))
        self.mel_bias = nn.Parameter(torch.zeros(d_mel))
        for p in (self.phoneme_embedding, self.speaker_embedding, self.mel_out):
            nn.init.xavier_uniform_(p)

    def encode_phonemes(self, ids) -> torch.Tensor:
        ids = torch.as_tensor(ids, dtype=torch.long)
        bad = torch.nonzero((ids < 0) | (ids >= self.n_phonemes))
        if bad.numel():
            i = int(bad[0])
            raise IndexError(f"phoneme id {int(ids[i])} at index {i} outside [0, {self.n_phonemes})")
        h = self.phoneme_embedding[ids]
        for block in self.encoder:
            h = block(h)
        return h

    def forward(self, conditioned: torch.Tensor, speakers, durations=None) -> TTSOutput:
        """``speakers`` [P] per-phoneme speaker ids; ``durations`` [P] teacher
        durations, or ``None`` to use the predicted ones."""
        h = conditioned + self.speaker_embedding[torch.as_tensor(speakers, dtype=torch.long)]
        logdur = self.duration_head(h)
        dur = durations_from_log(logdur) if durations is None else torch.as_tensor(durations, dtype=torch.long)
        frames = length_regulate(h, dur)
        f0 = self.pitch_head(frames)
        y = frames
        for block in self.decoder:
            y = block(y)
        mel = y @ self.mel_out + self.mel_bias
        return TTSOutput(mel, f0, logdur, dur)


def backbone_loss(out: TTSOutput, mel_target: torch.Tensor, f0_target: torch.Tensor, durations):
    """``(L_mel, L_f0, L_dur)``; ``L_dur`` is the MSE of log-durations."""
    logdur_target = torch.log(torch.as_tensor(durations, dtype=out.logdur.dtype))
    return mse_loss(out.mel, mel_target), mse_loss(out.f0, f0_target), mse_loss(out.logdur, logdur_target)
