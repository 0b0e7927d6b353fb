"""HiGNN-TTS composition: graph encoder + context attention + conditioning + backbone."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .backbone import Backbone, TTSOutput, backbone_loss
from .conditioning import ConditioningStreams, ProsodyConditioner, inject
from .config import TrainConfig
from .context import ContextAttention, build_caf_batch
from .corpus_io import DocumentWindow, EmbeddingTable, SentenceRecord
from .encoder import GraphEncoder, ProsodyHierarchy
from .graph import RelationVocab, SyntaxGraph, build_syntax_graph, collate_graphs, raw_node_vectors
from .melenc import supervision_loss


@dataclass
class PreparedSentence:
    record: SentenceRecord
    graph: SyntaxGraph
    raw: np.ndarray
    phonemes: list[int]
    phonemes_per_word: list[int]
    durations: list[int]
    f0_norm: np.ndarray


@dataclass
class PreparedCorpus:
    """Sentences deduplicated by identity; windows as (prev, cur, next) row indices."""

    sentences: list[PreparedSentence]
    windows: np.ndarray            # [N, 3] int, -1 = absent
    window_keys: list[tuple[str, int]]
    melenc_embeddings: torch.Tensor | None = None

    def __len__(self) -> int:
        return self.windows.shape[0]


def prepare_corpus(windows: Sequence[DocumentWindow], table: EmbeddingTable, vocab: RelationVocab,
                   config: TrainConfig) -> PreparedCorpus:
    include_global = not config.no_global_node
    index: dict[int, int] = {}
    sentences: list[PreparedSentence] = []

    def add(s: SentenceRecord | None) -> int:
        if s is None:
            return -1
        key = id(s)
        if key not in index:
            index[key] = len(sentences)
            sentences.append(PreparedSentence(
                record=s,
                graph=build_syntax_graph(s, vocab, include_global),
                raw=raw_node_vectors(s, table, include_global),
                phonemes=s.phonemes,
                phonemes_per_word=s.phonemes_per_word,
                durations=list(s.durations),
                f0_norm=(s.f0 - config.f0_mean) / config.f0_std,
            ))
        return index[key]

    rows = [[add(w.prev), add(w.cur), add(w.next)] for w in windows]
    keys = [(w.doc_id, w.position) for w in windows]
    return PreparedCorpus(sentences, np.asarray(rows, dtype=np.int64).reshape(-1, 3), keys)


@dataclass
class StepOutputs:
    tts: TTSOutput
    hierarchy: ProsodyHierarchy
    context_rep: torch.Tensor
    sentence_rows: list[int]          # prepared-sentence index per hierarchy row
    window_rows: torch.Tensor         # [B, 3] hierarchy row per slot, -1 = absent
    phoneme_counts: list[int]
    streams: ConditioningStreams
    losses: dict[str, torch.Tensor]


class HiGNNTTS(nn.Module):
    def __init__(self, config: TrainConfig):
        super().__init__()
        c = config
        self.config = c
        self.graph_encoder = GraphEncoder(c.d_emb, c.d_node, c.d_edge, len(c.relations), c.n_heads,
                                          c.n_layers, c.dropout)
        self.context = ContextAttention(2 * c.d_node, c.d_ctx)
        self.conditioner = ProsodyConditioner(2 * c.d_node, c.d_ctx, c.d_model)
        self.backbone = Backbone(c.n_phonemes, c.n_speakers, c.d_model, c.d_mel)
        self.sup_proj = nn.Parameter(torch.empty(2 * c.d_node, c.d_p))
        nn.init.xavier_uniform_(self.sup_proj)

    @property
    def dtype(self):
        return self.sup_proj.dtype

    def forward(self, corpus: PreparedCorpus, window_ids: Sequence[int], generator: torch.Generator | None = None,
                teacher_forcing: bool = True) -> StepOutputs:
        c = self.config
        rows = corpus.windows[np.asarray(window_ids, dtype=np.int64)]
        needed = sorted({int(r) for r in rows.ravel() if r >= 0})
        pos = {s: i for i, s in enumerate(needed)}
        sents = [corpus.sentences[s] for s in needed]
        batch = collate_graphs([s.graph for s in sents], [s.raw for s in sents], self.dtype)
        hier = self.graph_encoder(batch, generator)

        slot_rows = torch.as_tensor([[pos[int(r)] if r >= 0 else -1 for r in row] for row in rows])
        cur_rep = hier.sentence_rep[slot_rows[:, 1]]
        if c.no_context_attention:
            context_rep = torch.zeros(len(rows), c.d_ctx, dtype=self.dtype)
        else:
            caf = build_caf_batch(hier.sentence_rep, slot_rows, self.context.absent_embedding)
            context_rep = self.context(caf, cur_rep)

        cur = [corpus.sentences[int(r)] for r in rows[:, 1]]
        cur_rows = [int(r) for r in slot_rows[:, 1]]
        streams = self.conditioner.upsample([hier.words_of(r) for r in cur_rows], cur_rep, context_rep,
                                            [s.phonemes_per_word for s in cur])
        phonemes = [p for s in cur for p in s.phonemes]
        counts = [len(s.phonemes) for s in cur]
        speakers = np.repeat([s.record.speaker_id for s in cur], counts)
        enc = self.backbone.encode_phonemes(phonemes)
        conditioned = inject(enc, streams)
        durations = [d for s in cur for d in s.durations] if teacher_forcing else None
        out = self.backbone(conditioned, speakers, durations)

        losses = {}
        if teacher_forcing:
            mel_t = torch.as_tensor(np.concatenate([s.record.mel for s in cur]), dtype=self.dtype)
            f0_t = torch.as_tensor(np.concatenate([s.f0_norm for s in cur]), dtype=self.dtype)
            l_mel, l_f0, l_dur = backbone_loss(out, mel_t, f0_t, durations)
            losses.update(mel=l_mel, f0=l_f0, dur=l_dur)
            if corpus.melenc_embeddings is not None:
                emb = corpus.melenc_embeddings[torch.as_tensor(needed)].to(self.dtype)
                present = torch.ones(len(needed), dtype=torch.bool)
                losses["sup"] = supervision_loss(hier.sentence_rep, emb, present, self.sup_proj)
        return StepOutputs(out, hier, context_rep, needed, slot_rows, counts, streams, losses)

    def total_loss(self, losses: dict[str, torch.Tensor]) -> torch.Tensor:
        c = self.config
        total = losses["mel"] + losses["f0"] + losses["dur"]
        if "sup" in losses:
            weight = 0.0 if c.no_supervision else c.beta
            total = total + weight * losses["sup"]
        return total
