"""Training loop, evaluation and the ablation harness."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import ABLATION_VARIANTS, TrainConfig
from .corpus_io import (DocumentWindow, EmbeddingTable, SentenceRecord, load_checkpoint, read_checkpoint,
                        save_checkpoint)
from .graph import RelationVocab
from .melenc import (MelEncoder, MelPretrainer, embed_sentences, pretrain_mel_encoder, regression_r2,
                     speaker_probe_accuracy)
from .metrics import dtw_align, duration_mse, f0_rmse, mcd_proxy
from .model import HiGNNTTS, PreparedCorpus, prepare_corpus
from .substrate import ParamStore, derive_rng, init_module, torch_generator

log = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class NumericError(RuntimeError):
    pass


def split_windows(windows: Sequence[DocumentWindow], holdout: float = 0.1):
    """Split by document: the last ``ceil(holdout * n_docs)`` documents are held out."""
    doc_ids = list(dict.fromkeys(w.doc_id for w in windows))
    n_test = int(math.ceil(holdout * len(doc_ids))) if holdout > 0 else 0
    test_ids = set(doc_ids[len(doc_ids) - n_test:])
    return [w for w in windows if w.doc_id not in test_ids], [w for w in windows if w.doc_id in test_ids]


def unique_sentences(windows: Sequence[DocumentWindow]) -> list[SentenceRecord]:
    return [w.cur for w in windows]


def fit_corpus_fields(config: TrainConfig, windows: Sequence[DocumentWindow], table: EmbeddingTable) -> TrainConfig:
    sents = unique_sentences(windows)
    f0 = np.concatenate([s.f0 for s in sents])
    vocab = RelationVocab.from_sentences(sents)
    return config.replace(
        d_emb=table.dim,
        d_mel=int(sents[0].mel.shape[1]),
        n_phonemes=max(p for s in sents for p in s.phonemes) + 1,
        n_speakers=max(s.speaker_id for s in sents) + 1,
        relations=vocab.labels,
        f0_mean=float(f0.mean()),
        f0_std=float(f0.std()),
    )


def build_model(config: TrainConfig) -> HiGNNTTS:
    config.validate()
    return init_module(HiGNNTTS(config), config.seed).to(_DTYPES[config.dtype])


# --------------------------------------------------------------------------
# mel encoder
# --------------------------------------------------------------------------

def pretrain_melenc(config: TrainConfig, windows: Sequence[DocumentWindow]):
    sents = unique_sentences(windows)
    n_spk = config.n_speakers or (max(s.speaker_id for s in sents) + 1)
    d_mel = config.d_mel or int(sents[0].mel.shape[1])
    res = pretrain_mel_encoder(sents, d_mel, config.d_h, config.d_p, n_spk, config.melenc_steps,
                               config.melenc_lr, config.melenc_batch_size, config.seed,
                               config.dat_lambda, config.dat_ramp, _DTYPES[config.dtype],
                               adv_steps=config.melenc_adv_steps, adv_lr=config.melenc_adv_lr,
                               d_adv=config.melenc_adv_hidden, lr_decay=config.melenc_lr_decay)
    cfg = config.replace(d_mel=d_mel, n_speakers=n_spk, melenc_target_mean=res.target_mean,
                         melenc_target_std=res.target_std)
    return res, cfg


def save_melenc(model: MelPretrainer, config: TrainConfig, path) -> None:
    save_checkpoint(ParamStore.from_module(model, config.seed), config, path)


def load_melenc(path) -> tuple[MelPretrainer, TrainConfig]:
    store, cfg = load_checkpoint(path)
    n_spk = store["adversary.classifier.w2"].shape[1]
    model = MelPretrainer(cfg.d_mel, cfg.d_h, cfg.d_p, n_spk, d_adv=cfg.melenc_adv_hidden).to(_DTYPES[cfg.dtype])
    store.load_into(model)
    model.eval()
    return model, cfg


def melenc_diagnostics(model: MelPretrainer, cfg: TrainConfig, train: Sequence[SentenceRecord],
                       test: Sequence[SentenceRecord], seed: int = 0) -> dict:
    tr = embed_sentences(model.encoder, train)
    te = embed_sentences(model.encoder, test)
    acc = speaker_probe_accuracy(tr, [s.speaker_id for s in train], te, [s.speaker_id for s in test],
                                 cfg.n_speakers, seed)
    r2 = regression_r2(model, test, cfg.melenc_target_mean, cfg.melenc_target_std)
    return {"probe_accuracy": acc, "chance": 1.0 / cfg.n_speakers, "r2": r2}


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: HiGNNTTS
    config: TrainConfig
    history: list[dict] = field(default_factory=list)
    first_batch: list[tuple[str, int]] = field(default_factory=list)


def batch_schedule(n_windows: int, batch_size: int, steps: int, seed: int):
    rng = derive_rng(seed, "data-order")
    order = rng.permutation(n_windows)
    pos = 0
    for _ in range(steps):
        if pos + batch_size > n_windows:
            order, pos = rng.permutation(n_windows), 0
        yield order[pos:pos + batch_size]
        pos += batch_size


def attach_melenc(prepared: PreparedCorpus, encoder: MelEncoder | None, standardize: bool = False) -> None:
    """Precompute frozen supervision targets, optionally z-scored per dimension over the corpus."""
    if encoder is None:
        prepared.melenc_embeddings = None
        return
    emb = embed_sentences(encoder, [s.record for s in prepared.sentences]).detach()
    if standardize and emb.shape[0] > 1:
        emb = (emb - emb.mean(0)) / (emb.std(0) + 1e-8)
    prepared.melenc_embeddings = emb


def train(config: TrainConfig, windows: Sequence[DocumentWindow], table: EmbeddingTable,
          melenc: MelEncoder | None, log_every: int = 0) -> TrainResult:
    if not config.relations:
        config = fit_corpus_fields(config, windows, table)
    model = build_model(config)
    prepared = prepare_corpus(windows, table, RelationVocab(config.relations), config)
    attach_melenc(prepared, melenc, config.sup_standardize)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=tuple(config.adam_betas),
                           weight_decay=config.weight_decay)
    gen = torch_generator(config.seed, "dropout")
    history, first = [], []
    model.train()
    t0 = time.time()
    for step, ids in enumerate(batch_schedule(len(prepared), config.batch_size, config.steps, config.seed)):
        if step == 0:
            first = [prepared.window_keys[i] for i in ids]
        out = model(prepared, ids, gen)
        total = model.total_loss(out.losses)
        for name, v in out.losses.items():
            if not bool(torch.isfinite(v)):
                raise NumericError(f"non-finite {name} loss at step {step}")
        opt.zero_grad()
        total.backward()
        if config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        opt.step()
        rec = {k: v.detach().item() for k, v in out.losses.items()}
        rec["total"] = total.detach().item()
        history.append(rec)
        if log_every and (step + 1) % log_every == 0:
            recent = history[-log_every:]
            means = {k: np.mean([h[k] for h in recent]) for k in rec}
            log.info("step %d  %s  (%.1fs)", step + 1,
                     " ".join(f"{k}={v:.4f}" for k, v in means.items()), time.time() - t0)
    model.eval()
    return TrainResult(model, config, history, first)


def save_model(model: HiGNNTTS, config: TrainConfig, path) -> None:
    save_checkpoint(ParamStore.from_module(model, config.seed), config, path)


def load_model(path, resume_config: TrainConfig | None = None) -> HiGNNTTS:
    """Load a model checkpoint. With ``resume_config``, the checkpoint must fit a
    model built from that config (shape mismatches are reported by name)."""
    store, cfg = load_checkpoint(path)
    model = build_model(resume_config or cfg)
    store.load_into(model)
    model.eval()
    return model


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

@dataclass
class EvalReport:
    f0_rmse: float
    duration_mse: float
    mcd_proxy: float
    per_sentence: list[dict]
    config_hash: str
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


@torch.no_grad()
def evaluate(model: HiGNNTTS, windows: Sequence[DocumentWindow], table: EmbeddingTable,
             batch_size: int = 32) -> EvalReport:
    cfg = model.config
    model.eval()
    prepared = prepare_corpus(windows, table, RelationVocab(cfg.relations), cfg)
    rows = []
    for start in range(0, len(prepared), batch_size):
        ids = list(range(start, min(start + batch_size, len(prepared))))
        out = model(prepared, ids, teacher_forcing=False)
        dur = out.tts.durations.numpy()
        mel = out.tts.mel.double().numpy()
        f0 = out.tts.f0.double().numpy() * cfg.f0_std + cfg.f0_mean
        p_off = f_off = 0
        for i, n_ph in zip(ids, out.phoneme_counts):
            s = prepared.sentences[int(prepared.windows[i, 1])]
            d = dur[p_off:p_off + n_ph]
            n_fr = int(d.sum())
            m = mel[f_off:f_off + n_fr]
            p = f0[f_off:f_off + n_fr]
            p_off += n_ph
            f_off += n_fr
            path, _ = dtw_align(m, s.record.mel)
            doc, pos = prepared.window_keys[i]
            rows.append({"doc_id": doc, "position": pos,
                         "f0_rmse": f0_rmse(p, s.record.f0, path),
                         "duration_mse": duration_mse(d, s.durations),
                         "mcd_proxy": mcd_proxy(m, s.record.mel, path)})
    mean = {k: float(np.mean([r[k] for r in rows])) for k in ("f0_rmse", "duration_mse", "mcd_proxy")}
    return EvalReport(mean["f0_rmse"], mean["duration_mse"], mean["mcd_proxy"], rows, cfg.config_hash(), cfg.seed)


def evaluate_targets_against_themselves(windows: Sequence[DocumentWindow]) -> dict:
    """Metric sanity path: ground truth scored against itself."""
    out = []
    for w in windows:
        s = w.cur
        path, _ = dtw_align(s.mel, s.mel)
        out.append((f0_rmse(s.f0, s.f0, path), duration_mse(s.durations, s.durations),
                    mcd_proxy(s.mel, s.mel, path)))
    a = np.asarray(out)
    return {"f0_rmse": float(a[:, 0].mean()), "duration_mse": float(a[:, 1].mean()), "mcd_proxy": float(a[:, 2].mean())}


# --------------------------------------------------------------------------
# ablations
# --------------------------------------------------------------------------

def run_ablation_suite(config: TrainConfig, train_windows, test_windows, table: EmbeddingTable,
                       seeds: Sequence[int], variants: dict | None = None, log_every: int = 0,
                       progress=None) -> dict:
    """Train every variant for every seed with identical budgets and data order."""
    variants = variants or ABLATION_VARIANTS
    base = fit_corpus_fields(config, train_windows, table)
    results = {name: [] for name in variants}
    melenc_diag = []
    for seed in seeds:
        cfg_seed = base.replace(seed=seed)
        mres, mcfg = pretrain_melenc(cfg_seed, train_windows)
        melenc_diag.append(melenc_diagnostics(mres.model, mcfg, unique_sentences(train_windows),
                                              unique_sentences(test_windows), seed))
        for name, switches in variants.items():
            cfg = cfg_seed.replace(**switches)
            t0 = time.time()
            res = train(cfg, train_windows, table, mres.model.encoder, log_every)
            rep = evaluate(res.model, test_windows, table)
            entry = {"seed": seed, "f0_rmse": rep.f0_rmse, "duration_mse": rep.duration_mse,
                     "mcd_proxy": rep.mcd_proxy, "first_batch": [list(k) for k in res.first_batch],
                     "final_losses": res.history[-1], "train_seconds": time.time() - t0,
                     "config_hash": rep.config_hash}
            results[name].append(entry)
            if progress:
                progress(name, entry)
    summary = {}
    for name, entries in results.items():
        summary[name] = {k: float(np.mean([e[k] for e in entries])) for k in ("f0_rmse", "duration_mse", "mcd_proxy")}
    full = summary.get("full", {}).get("f0_rmse")
    if full:
        for name in summary:
            summary[name]["f0_rmse_rel_change"] = summary[name]["f0_rmse"] / full - 1.0
    return {"config": base.to_dict(), "seeds": list(seeds), "variants": results, "summary": summary,
            "melenc": melenc_diag}
