"""Reference mel encoder with domain-adversarial speaker removal."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .corpus_io import SentenceRecord
from .substrate import cross_entropy_loss, derive_rng, gradient_reverse, init_module, mse_loss, torch_generator


class EmptyInputError(ValueError):
    pass


def pad_frames(mels: Sequence[np.ndarray], dtype=torch.float64) -> tuple[torch.Tensor, torch.Tensor]:
    if any(m.shape[0] == 0 for m in mels):
        raise EmptyInputError("mel_encode: a sentence has zero frames")
    T = max(m.shape[0] for m in mels)
    D = mels[0].shape[1]
    out = np.zeros((len(mels), T, D))
    mask = np.zeros((len(mels), T), dtype=bool)
    for b, m in enumerate(mels):
        out[b, : m.shape[0]] = m
        mask[b, : m.shape[0]] = True
    return torch.as_tensor(out, dtype=dtype), torch.as_tensor(mask)


class MelEncoder(nn.Module):
    def __init__(self, d_mel: int, d_h: int, d_p: int):
        super().__init__()
        self.w1 = nn.Parameter(torch.empty(d_mel, d_h))
        self.b1 = nn.Parameter(torch.zeros(d_h))
        self.w2 = nn.Parameter(torch.empty(d_h, d_h))
        self.b2 = nn.Parameter(torch.zeros(d_h))
        self.head = nn.Parameter(torch.empty(2 * d_h, d_p))
        self.head_bias = nn.Parameter(torch.zeros(d_p))
        for p in (self.w1, self.w2, self.head):
            nn.init.xavier_uniform_(p)

    def forward(self, frames: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """``frames`` [B, T, D_mel], ``mask`` [B, T] -> embeddings [B, d_p]."""
        if not bool(mask.any(dim=1).all()):
            raise EmptyInputError("mel_encode: a sentence has zero frames")
        h = torch.tanh(frames @ self.w1 + self.b1)
        h = torch.tanh(h @ self.w2 + self.b2)
        m = mask.unsqueeze(-1)
        mean = (h * m).sum(1) / m.sum(1)
        mx = h.masked_fill(~m, float("-inf")).max(1).values
        return torch.cat([mean, mx], dim=-1) @ self.head + self.head_bias


def mel_encode(encoder: MelEncoder, mel) -> torch.Tensor:
    mel = np.asarray(mel if not torch.is_tensor(mel) else mel.detach().numpy())
    dtype = encoder.w1.dtype
    frames, mask = pad_frames([mel], dtype)
    return encoder(frames, mask)[0]


class MLPHead(nn.Module):
    def __init__(self, d_in: int, d_hidden: int, d_out: int):
        super().__init__()
        self.w1 = nn.Parameter(torch.empty(d_in, d_hidden))
        self.b1 = nn.Parameter(torch.zeros(d_hidden))
        self.w2 = nn.Parameter(torch.empty(d_hidden, d_out))
        self.b2 = nn.Parameter(torch.zeros(d_out))
        nn.init.xavier_uniform_(self.w1)
        nn.init.xavier_uniform_(self.w2)

    def forward(self, x):
        return torch.relu(x @ self.w1 + self.b1) @ self.w2 + self.b2


def standardize_batch(x: torch.Tensor) -> torch.Tensor:
    """Per-dimension batch standardisation; identity for a single row."""
    if x.shape[0] < 2:
        return x
    return (x - x.mean(0)) / (x.std(0) + 1e-5)


class SpeakerAdversary(nn.Module):
    """Speaker classifier behind a gradient-reversal layer.

    Inputs are batch-standardised so the encoder cannot hide speaker identity
    in low-variance directions that a scale-aware probe would still read.
    """

    def __init__(self, d_p: int, n_speakers: int, d_hidden: int = 64):
        super().__init__()
        self.classifier = MLPHead(d_p, d_hidden, n_speakers)

    def classify(self, emb: torch.Tensor) -> torch.Tensor:
        return self.classifier(standardize_batch(emb))

    def forward(self, emb: torch.Tensor, lam: float) -> torch.Tensor:
        return self.classify(gradient_reverse(emb, lam))


class MelPretrainer(nn.Module):
    def __init__(self, d_mel: int, d_h: int, d_p: int, n_speakers: int, n_targets: int = 3, d_adv: int = 64):
        super().__init__()
        self.encoder = MelEncoder(d_mel, d_h, d_p)
        self.regressor = MLPHead(d_p, d_h, n_targets)
        self.adversary = SpeakerAdversary(d_p, n_speakers, d_adv)


def prosody_statistics(s: SentenceRecord) -> np.ndarray:
    """Regression targets: sentence mean f0, f0 std, mean log-duration."""
    return np.array([s.f0.mean(), s.f0.std(), np.log(np.asarray(s.durations, dtype=np.float64)).mean()])


@dataclass
class PretrainBatch:
    frames: torch.Tensor
    mask: torch.Tensor
    targets: torch.Tensor   # standardised [B, 3]
    speakers: torch.Tensor  # [B]


def make_batch(sentences: Sequence[SentenceRecord], t_mean, t_std, dtype=torch.float64) -> PretrainBatch:
    frames, mask = pad_frames([s.mel for s in sentences], dtype)
    t = np.stack([prosody_statistics(s) for s in sentences])
    t = (t - np.asarray(t_mean)) / np.asarray(t_std)
    return PretrainBatch(frames, mask, torch.as_tensor(t, dtype=dtype),
                         torch.as_tensor([s.speaker_id for s in sentences]))


def pretrain_step(model: MelPretrainer, batch: PretrainBatch, lam: float):
    """Return ``(total, regression_loss, speaker_ce)``; caller runs backward."""
    emb = model.encoder(batch.frames, batch.mask)
    reg = mse_loss(model.regressor(emb), batch.targets)
    ce = cross_entropy_loss(model.adversary(emb, lam), batch.speakers)
    return reg + ce, reg, ce


def dat_lambda(step: int, total: int, lam: float, ramp: bool) -> float:
    if not ramp:
        return lam
    warm = max(1, int(0.2 * total))
    return lam * min(1.0, step / warm)


@dataclass
class PretrainResult:
    model: MelPretrainer
    target_mean: list[float]
    target_std: list[float]
    history: list[tuple[float, float]] = field(default_factory=list)


def pretrain_mel_encoder(sentences: Sequence[SentenceRecord], d_mel: int, d_h: int, d_p: int, n_speakers: int,
                         steps: int, lr: float, batch_size: int, seed: int, lam: float = 1.0,
                         ramp: bool = False, dtype=torch.float32, adv_steps: int = 1, adv_lr: float | None = None,
                         d_adv: int = 64, lr_decay: bool = False) -> PretrainResult:
    """Joint regression + adversarial pretraining.

    ``adv_steps - 1`` extra classifier-only updates run before each joint step
    so the adversary stays close to a best response. ``lr_decay`` anneals the
    encoder/regressor learning rate linearly to zero, which lets the minimax
    game settle instead of chasing the adversary to the last step.
    """
    stats = np.stack([prosody_statistics(s) for s in sentences])
    t_mean, t_std = stats.mean(0), stats.std(0) + 1e-8
    model = init_module(MelPretrainer(d_mel, d_h, d_p, n_speakers, d_adv=d_adv), seed).to(dtype)
    main_params = list(model.encoder.parameters()) + list(model.regressor.parameters())
    opt = torch.optim.Adam(main_params, lr=lr)
    adv_opt = torch.optim.Adam(model.adversary.parameters(), lr=adv_lr or lr)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda k: 1.0 - k / steps if lr_decay else 1.0)
    rng = derive_rng(seed, "melenc-data")
    order = rng.permutation(len(sentences))
    pos = 0
    history = []
    model.train()
    for step in range(steps):
        if pos + batch_size > len(order):
            order, pos = rng.permutation(len(sentences)), 0
        idx = order[pos:pos + batch_size]
        pos += batch_size
        batch = make_batch([sentences[i] for i in idx], t_mean, t_std, dtype)
        for _ in range(adv_steps - 1):
            with torch.no_grad():
                emb = model.encoder(batch.frames, batch.mask)
            adv_opt.zero_grad()
            cross_entropy_loss(model.adversary.classify(emb), batch.speakers).backward()
            adv_opt.step()
        opt.zero_grad()
        adv_opt.zero_grad()
        total, reg, ce = pretrain_step(model, batch, dat_lambda(step, steps, lam, ramp))
        total.backward()
        opt.step()
        adv_opt.step()
        sched.step()
        history.append((reg.detach().item(), ce.detach().item()))
    model.eval()
    return PretrainResult(model, t_mean.tolist(), t_std.tolist(), history)


@torch.no_grad()
def embed_sentences(encoder: MelEncoder, sentences: Sequence[SentenceRecord], chunk: int = 64) -> torch.Tensor:
    dtype = encoder.w1.dtype
    outs = []
    for i in range(0, len(sentences), chunk):
        frames, mask = pad_frames([s.mel for s in sentences[i:i + chunk]], dtype)
        outs.append(encoder(frames, mask))
    return torch.cat(outs)


def speaker_probe_accuracy(train_emb: torch.Tensor, train_spk, test_emb: torch.Tensor, test_spk,
                           n_speakers: int, seed: int = 0, steps: int = 1500, d_hidden: int = 64) -> float:
    """Fit a fresh MLP speaker classifier on frozen embeddings; held-out accuracy."""
    train_emb = train_emb.detach().double()
    test_emb = test_emb.detach().double()
    mu, sd = train_emb.mean(0), train_emb.std(0) + 1e-8
    xtr, xte = (train_emb - mu) / sd, (test_emb - mu) / sd
    ytr = torch.as_tensor(train_spk, dtype=torch.long)
    yte = torch.as_tensor(test_spk, dtype=torch.long)
    probe = init_module(MLPHead(xtr.shape[1], d_hidden, n_speakers), seed).double()
    opt = torch.optim.Adam(probe.parameters(), lr=3e-3)
    g = torch_generator(seed, "probe")
    for _ in range(steps):
        idx = torch.randint(0, xtr.shape[0], (128,), generator=g)
        opt.zero_grad()
        cross_entropy_loss(probe(xtr[idx]), ytr[idx]).backward()
        opt.step()
    with torch.no_grad():
        return float((probe(xte).argmax(-1) == yte).double().mean())


@torch.no_grad()
def regression_r2(model: MelPretrainer, sentences: Sequence[SentenceRecord], t_mean, t_std) -> float:
    """Mean per-target coefficient of determination on ``sentences``."""
    emb = embed_sentences(model.encoder, sentences)
    pred = model.regressor(emb).double().numpy()
    t = (np.stack([prosody_statistics(s) for s in sentences]) - np.asarray(t_mean)) / np.asarray(t_std)
    ss_res = ((pred - t) ** 2).sum(0)
    ss_tot = ((t - t.mean(0)) ** 2).sum(0)
    return float(np.mean(1 - ss_res / ss_tot))


def supervision_loss(sentence_reps: torch.Tensor, embeddings: torch.Tensor, present: torch.Tensor,
                     projection: torch.Tensor) -> torch.Tensor:
    """Mean over present sentences of MSE(project(rep), embedding).

    ``sentence_reps`` [N, 2d], ``embeddings`` [N, d_p] (frozen), ``present`` [N] bool.
    """
    pred = sentence_reps @ projection
    target = embeddings.detach()
    per = ((pred - target) ** 2).mean(-1)
    present = torch.as_tensor(present, dtype=torch.bool)
    return (per * present).sum() / present.sum().clamp(min=1)
