"""Seeded synthetic corpora with syntax- and context-dependent prosody.

Sentence pitch level follows an AR(1) process across a document. The word
tokens of each sentence are drawn so that their tone values (visible through
the embedding table) are noisy readings of that level; neighbouring sentences
therefore carry information about the current one. Word-level pitch accents
depend on tree depth and dependency relation; speaker identity adds a fixed
pitch and spectral offset.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus_io import Document, EmbeddingTable, SentenceRecord, WordRecord, UNK_TOKEN
from .substrate import derive_rng

DEFAULT_RELATIONS = ("HED", "SBV", "VOB", "ATT", "ADV", "COO", "MT")


@dataclass
class GenSpec:
    n_docs: int = 200
    sentences_per_doc: tuple[int, int] = (8, 8)
    words_per_sentence: tuple[int, int] = (3, 12)
    phonemes_per_word: tuple[int, int] = (1, 6)
    n_speakers: int = 4
    relations: tuple[str, ...] = DEFAULT_RELATIONS
    d_mel: int = 20
    d_emb: int = 32
    n_phonemes: int = 40
    vocab_size: int = 400
    seed: int = 0

    base_f0: float = 200.0
    declination: float = 6.0
    depth_gain: float = 12.0
    relation_gains: dict[str, float] = field(default_factory=lambda: {
        "HED": 0.0, "SBV": 6.0, "VOB": -5.0, "ATT": 3.0, "ADV": -7.0, "COO": 2.0, "MT": -9.0})
    rho: float = 0.9
    sigma: float = 12.0
    speaker_offsets: tuple[float, ...] = (-3.0, -1.0, 1.0, 3.0)
    tone_gain: float = 0.5
    mel_noise: float = 0.05

    dur_base: float = 3.0
    dur_final: float = 2.0
    dur_relation: dict[str, float] = field(default_factory=lambda: {
        "HED": 1.0, "SBV": 0.0, "VOB": 0.5, "ATT": -0.5, "ADV": 0.0, "COO": 0.5, "MT": -1.0})

    def validate(self) -> None:
        for name in ("sentences_per_doc", "words_per_sentence", "phonemes_per_word"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} range {lo}..{hi} is empty or nonpositive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.sigma < 0 or self.mel_noise < 0:
            raise ValueError("noise scales must be nonnegative")
        if not {"HED", "SBV", "VOB"} <= set(self.relations) or len(self.relations) < 6:
            raise ValueError("relation set needs >= 6 labels including HED, SBV, VOB")
        if len(self.speaker_offsets) != self.n_speakers:
            raise ValueError("speaker_offsets must have one entry per speaker")
        if not 0.0 <= self.tone_gain < 1.0:
            raise ValueError("tone_gain must lie in [0, 1)")

    @property
    def latent_std(self) -> float:
        return self.sigma / math.sqrt(1.0 - self.rho ** 2) if self.sigma > 0 else 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        d = dict(d)
        for k in ("sentences_per_doc", "words_per_sentence", "phonemes_per_word", "relations", "speaker_offsets"):
            if k in d:
                d[k] = tuple(d[k])
        spec = cls(**d)
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


@dataclass(frozen=True)
class _Bases:
    pitch: np.ndarray       # [d_mel]
    onset: np.ndarray       # [d_mel]
    phoneme: np.ndarray     # [n_phonemes, d_mel]
    speaker: np.ndarray     # [n_speakers, d_mel]
    tones: np.ndarray       # [vocab]
    embeddings: np.ndarray  # [vocab, d_emb]
    fallback: np.ndarray    # [d_emb]


def _bases(spec: GenSpec) -> _Bases:
    rng = derive_rng(spec.seed, "bases")
    d = np.arange(spec.d_mel)
    pitch = np.cos(np.pi * (d + 0.5) / spec.d_mel)
    onset = 0.5 * np.sin(np.pi * (d + 0.5) / spec.d_mel)
    # smooth spectral shapes from cosine orders 2..5, orthogonal to the pitch direction
    cos = np.cos(np.pi * np.outer(d + 0.5, np.arange(2, 6)) / spec.d_mel)   # [d_mel, 4]
    phoneme = rng.normal(0, 0.5, (spec.n_phonemes, 4)) @ cos.T
    speaker = rng.normal(0, 0.4, (spec.n_speakers, 4)) @ cos.T
    tones = np.sort(rng.normal(0, 1, spec.vocab_size))
    direction = rng.normal(0, 1, spec.d_emb)
    direction /= np.linalg.norm(direction)
    emb = rng.normal(0, 0.3, (spec.vocab_size, spec.d_emb)) + np.outer(tones, direction)
    fallback = np.zeros(spec.d_emb)
    return _Bases(pitch, onset, phoneme, speaker, tones, emb, fallback)


def token_name(i: int) -> str:
    return f"tok{i:04d}"


def embedding_table(spec: GenSpec) -> EmbeddingTable:
    b = _bases(spec)
    entries = {token_name(i): np.round(b.embeddings[i], 6) for i in range(spec.vocab_size)}
    return EmbeddingTable(spec.d_emb, entries, b.fallback)


def tree_depths(heads: list[int]) -> list[int]:
    """Depth of each word, root = 1."""
    depth = [0] * len(heads)

    def get(i):
        if depth[i - 1] == 0:
            h = heads[i - 1]
            depth[i - 1] = 1 if h == 0 else get(h) + 1
        return depth[i - 1]

    return [get(i) for i in range(1, len(heads) + 1)]


def phoneme_pitch_offsets(words, spec: GenSpec) -> np.ndarray:
    """Per-phoneme accent (Hz) from tree depth and relation label."""
    depths = tree_depths([w.head for w in words])
    out = []
    for w, dep in zip(words, depths):
        accent = spec.depth_gain * 0.5 ** (dep - 1) + spec.relation_gains.get(w.deprel, 0.0)
        out.extend([accent] * len(w.phonemes))
    return np.asarray(out, dtype=np.float64)


def ground_truth_prosody(latent: float, words, durations, speaker: int, spec: GenSpec,
                         rng: np.random.Generator | None = None, bases: _Bases | None = None):
    """Frame-level (f0, mel) for one sentence given its document latent."""
    b = bases or _bases(spec)
    durations = np.asarray(durations, dtype=np.int64)
    n_frames = int(durations.sum())
    ph_pitch = spec.base_f0 + spec.speaker_offsets[speaker] + latent + phoneme_pitch_offsets(words, spec)
    frame_pitch = np.repeat(ph_pitch, durations)
    frame_pitch = frame_pitch - spec.declination * np.arange(n_frames) / n_frames
    phon = np.repeat(np.asarray([p for w in words for p in w.phonemes]), durations)
    onset = np.zeros(n_frames)
    onset[np.concatenate([[0], np.cumsum(durations)[:-1]])] = 1.0
    mel = (np.outer(np.tanh((frame_pitch - spec.base_f0) / 40.0), b.pitch)
           + b.phoneme[phon] + b.speaker[speaker] + np.outer(onset, b.onset))
    if spec.mel_noise > 0:
        rng = rng if rng is not None else derive_rng(spec.seed, "mel-noise")
        mel = mel + rng.normal(0, spec.mel_noise, mel.shape)
    return frame_pitch, mel


def _sample_durations(words, spec: GenSpec, rng) -> list[int]:
    out = []
    for w in words:
        n = len(w.phonemes)
        for j in range(n):
            lam = spec.dur_base + spec.dur_relation.get(w.deprel, 0.0) + (spec.dur_final if j == n - 1 else 0.0)
            lam += 0.25 * (3 - n)
            out.append(1 + int(rng.poisson(max(lam - 1.0, 0.1))))
    return out


def _sample_words(spec: GenSpec, rng, b: _Bases, z: float) -> tuple[WordRecord, ...]:
    n = int(rng.integers(spec.words_per_sentence[0], spec.words_per_sentence[1] + 1))
    dep_labels = [r for r in spec.relations if r != "HED"]
    c = spec.tone_gain
    words = []
    for i in range(1, n + 1):
        head = 0 if i == 1 else int(rng.integers(1, i))
        rel = "HED" if i == 1 else dep_labels[int(rng.integers(len(dep_labels)))]
        target = c * z + math.sqrt(1 - c * c) * rng.normal()
        tok = int(np.clip(np.searchsorted(b.tones, target), 0, spec.vocab_size - 1))
        n_ph = int(rng.integers(spec.phonemes_per_word[0], spec.phonemes_per_word[1] + 1))
        phon = tuple(int(p) for p in rng.integers(0, spec.n_phonemes, n_ph))
        words.append(WordRecord(token_name(tok), head, rel, phon))
    return tuple(words)


def generate_document(spec: GenSpec, index: int, bases: _Bases | None = None) -> Document:
    b = bases or _bases(spec)
    rng = derive_rng(spec.seed, "doc", index)
    n_sent = int(rng.integers(spec.sentences_per_doc[0], spec.sentences_per_doc[1] + 1))
    speaker = int(rng.integers(spec.n_speakers))
    s = 0.0
    sents = []
    for _ in range(n_sent):
        s = spec.rho * s + (rng.normal(0, spec.sigma) if spec.sigma > 0 else 0.0)
        words = _sample_words(spec, rng, b, s / spec.latent_std)
        durations = _sample_durations(words, spec, rng)
        f0, mel = ground_truth_prosody(s, words, durations, speaker, spec, rng, b)
        sents.append(SentenceRecord(words, tuple(durations), np.round(f0, 5), np.round(mel, 5), speaker))
    return Document(f"doc{index:05d}", tuple(sents))


def generate_latents(spec: GenSpec, n: int, rng) -> np.ndarray:
    s = np.zeros(n)
    prev = 0.0
    for k in range(n):
        prev = spec.rho * prev + (rng.normal(0, spec.sigma) if spec.sigma > 0 else 0.0)
        s[k] = prev
    return s


def generate_corpus(spec: GenSpec) -> tuple[list[Document], EmbeddingTable]:
    spec.validate()
    b = _bases(spec)
    docs = [generate_document(spec, i, b) for i in range(spec.n_docs)]
    return docs, embedding_table(spec)
