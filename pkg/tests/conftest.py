import sys

import numpy as np
import pytest
import torch

from hignn.config import TrainConfig
from hignn.corpus_io import SentenceRecord, WordRecord, windows_from_documents
from hignn.synth import GenSpec, generate_corpus
from hignn.trainer import fit_corpus_fields

torch.set_default_dtype(torch.float64)


def tiny_spec(**kw) -> GenSpec:
    base = dict(n_docs=6, sentences_per_doc=(1, 4), words_per_sentence=(3, 6), phonemes_per_word=(1, 3),
                d_mel=4, d_emb=8, n_phonemes=10, vocab_size=40, seed=3)
    base.update(kw)
    return GenSpec(**base)


def tiny_config(**kw) -> TrainConfig:
    base = dict(d_node=8, d_edge=8, d_ctx=8, d_model=8, d_p=6, d_h=8, n_heads=2, n_layers=2,
                dtype="float64", steps=20, melenc_steps=20, batch_size=4, melenc_batch_size=8)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_corpus():
    docs, table = generate_corpus(tiny_spec())
    return docs, table


@pytest.fixture(scope="session")
def tiny_windows(tiny_corpus):
    return windows_from_documents(tiny_corpus[0])


@pytest.fixture
def tiny_cfg(tiny_windows, tiny_corpus):
    return fit_corpus_fields(tiny_config(), tiny_windows, tiny_corpus[1])


def make_sentence(heads, deprels, forms=None, phonemes=None, speaker=0, d_mel=4, cls=None) -> SentenceRecord:
    n = len(heads)
    forms = forms or [f"w{i}" for i in range(n)]
    phonemes = phonemes or [(1,)] * n
    words = tuple(WordRecord(f, h, r, tuple(p)) for f, h, r, p in zip(forms, heads, deprels, phonemes))
    n_ph = sum(len(p) for p in phonemes)
    durations = (2,) * n_ph
    T = 2 * n_ph
    return SentenceRecord(words, durations, np.full(T, 200.0), np.zeros((T, d_mel)), speaker,
                          None if cls is None else np.asarray(cls, dtype=float))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
