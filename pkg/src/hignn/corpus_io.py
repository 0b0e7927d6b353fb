"""Readers and writers for corpora, embedding tables and checkpoints."""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from .substrate import ParamStore


class CorpusValidationError(ValueError):
    pass


class CorpusParseError(ValueError):
    pass


class EmbeddingTableError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class WordRecord:
    form: str
    head: int
    deprel: str
    phonemes: tuple[int, ...]


@dataclass(frozen=True)
class SentenceRecord:
    words: tuple[WordRecord, ...]
    durations: tuple[int, ...]
    f0: np.ndarray
    mel: np.ndarray
    speaker_id: int
    cls_embedding: np.ndarray | None = None

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def phonemes(self) -> list[int]:
        return [p for w in self.words for p in w.phonemes]

    @property
    def phonemes_per_word(self) -> list[int]:
        return [len(w.phonemes) for w in self.words]

    @property
    def n_frames(self) -> int:
        return int(self.f0.shape[0])


@dataclass(frozen=True)
class DocumentWindow:
    prev: SentenceRecord | None
    cur: SentenceRecord
    next: SentenceRecord | None
    doc_id: str
    position: int


@dataclass(frozen=True)
class Document:
    doc_id: str
    sentences: tuple[SentenceRecord, ...]


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def tree_violation(heads: list[int]) -> str | None:
    """Return a description of why ``heads`` (1-based, 0 = root) is not a tree."""
    n = len(heads)
    if n == 0:
        return "empty sentence"
    roots = [i for i, h in enumerate(heads, 1) if h == 0]
    if len(roots) == 0:
        return "no root"
    if len(roots) > 1:
        return "multiple roots"
    for i, h in enumerate(heads, 1):
        if h == i:
            return f"word {i} is its own head"
        if h < 0 or h > n:
            return f"word {i} has head {h} outside 0..{n}"
    for i in range(1, n + 1):
        seen = set()
        j = i
        while j != 0:
            if j in seen:
                return f"cycle through word {i}"
            seen.add(j)
            j = heads[j - 1]
    return None


def validate_sentence(s: SentenceRecord) -> str | None:
    problem = tree_violation([w.head for w in s.words])
    if problem:
        return problem
    for i, w in enumerate(s.words, 1):
        if len(w.phonemes) < 1:
            return f"word {i} has no phonemes"
        if any(p < 0 for p in w.phonemes):
            return f"word {i} has a negative phoneme id"
    n_ph = sum(len(w.phonemes) for w in s.words)
    if len(s.durations) != n_ph:
        return f"durations length {len(s.durations)} != phoneme count {n_ph}"
    if any(d < 1 for d in s.durations):
        return "durations must be positive"
    total = sum(s.durations)
    if s.f0.shape[0] != total:
        return f"sum(durations)={total} != f0 frames {s.f0.shape[0]}"
    if s.mel.ndim != 2 or s.mel.shape[0] != total:
        return f"sum(durations)={total} != mel frames {s.mel.shape[0] if s.mel.ndim else 0}"
    if not (np.isfinite(s.f0).all() and np.isfinite(s.mel).all()):
        return "non-finite acoustic values"
    return None


# --------------------------------------------------------------------------
# corpus json-lines
# --------------------------------------------------------------------------

def sentence_from_json(obj: dict) -> SentenceRecord:
    words = tuple(
        WordRecord(str(w["form"]), int(w["head"]), str(w["deprel"]), tuple(int(p) for p in w["phonemes"]))
        for w in obj["words"]
    )
    cls = obj.get("cls_embedding")
    mel = np.asarray(obj["mel"], dtype=np.float64)
    if mel.size == 0:
        mel = mel.reshape(0, 0)
    return SentenceRecord(
        words=words,
        durations=tuple(int(d) for d in obj["durations"]),
        f0=np.asarray(obj["f0"], dtype=np.float64),
        mel=mel,
        speaker_id=int(obj["speaker_id"]),
        cls_embedding=None if cls is None else np.asarray(cls, dtype=np.float64),
    )


def sentence_to_json(s: SentenceRecord) -> dict:
    obj = {
        "words": [{"form": w.form, "head": w.head, "deprel": w.deprel, "phonemes": list(w.phonemes)}
                  for w in s.words],
        "durations": list(s.durations),
        "f0": s.f0.tolist(),
        "mel": s.mel.tolist(),
        "speaker_id": s.speaker_id,
    }
    if s.cls_embedding is not None:
        obj["cls_embedding"] = s.cls_embedding.tolist()
    return obj


def load_documents(path: str | Path) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            try:
                doc_id = str(obj["doc_id"])
                sents = tuple(sentence_from_json(s) for s in obj["sentences"])
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusParseError(f"{path}:{lineno}: bad record ({exc!r})") from exc
            for k, s in enumerate(sents):
                problem = validate_sentence(s)
                if problem:
                    raise CorpusValidationError(f"doc {doc_id!r} sentence {k}: {problem}")
            docs.append(Document(doc_id, sents))
    return docs


def windows_from_documents(docs: Iterable[Document]) -> list[DocumentWindow]:
    out = []
    for d in docs:
        n = len(d.sentences)
        for k, s in enumerate(d.sentences):
            out.append(DocumentWindow(
                prev=d.sentences[k - 1] if k > 0 else None,
                cur=s,
                next=d.sentences[k + 1] if k + 1 < n else None,
                doc_id=d.doc_id,
                position=k,
            ))
    return out


def load_corpus(path: str | Path) -> list[DocumentWindow]:
    return windows_from_documents(load_documents(path))


def documents_from_windows(windows: Iterable[DocumentWindow]) -> list[Document]:
    grouped: dict[str, list[DocumentWindow]] = {}
    for w in windows:
        grouped.setdefault(w.doc_id, []).append(w)
    return [Document(doc_id, tuple(w.cur for w in sorted(ws, key=lambda w: w.position)))
            for doc_id, ws in grouped.items()]


def dumps_document(doc: Document) -> str:
    return json.dumps({"doc_id": doc.doc_id, "sentences": [sentence_to_json(s) for s in doc.sentences]},
                      separators=(",", ":"))


def save_documents(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(dumps_document(d) + "\n")


# --------------------------------------------------------------------------
# embedding tables
# --------------------------------------------------------------------------

UNK_TOKEN = "<UNK>"


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    entries: dict[str, np.ndarray]
    fallback: np.ndarray

    def lookup(self, token: str) -> np.ndarray:
        return self.entries.get(token, self.fallback)

    def __len__(self) -> int:
        return len(self.entries)


def load_embedding_table(path: str | Path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "DIM":
            raise EmbeddingTableError(f"{path}: first line must be 'DIM <d>'")
        dim = int(header[1])
        entries: dict[str, np.ndarray] = {}
        fallback = None
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            token, vals = parts[0], parts[1:]
            if len(vals) != dim:
                raise EmbeddingTableError(
                    f"{path}: token {token!r} has {len(vals)} values, header declares {dim}")
            vec = np.array([float(v) for v in vals], dtype=np.float64)
            vec.flags.writeable = False
            if token == UNK_TOKEN:
                fallback = vec
            else:
                entries[token] = vec
    if fallback is None:
        raise EmbeddingTableError(f"{path}: missing mandatory {UNK_TOKEN} row")
    return EmbeddingTable(dim, entries, fallback)


def save_embedding_table(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"DIM {table.dim}\n")
        for tok, vec in [(UNK_TOKEN, table.fallback), *table.entries.items()]:
            fh.write(tok + " " + " ".join(repr(float(v)) for v in vec) + "\n")


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------
# layout: MAGIC | u32 version | u64 header_len | header json | tensor bytes | u32 crc32
# crc covers everything before it.

MAGIC = b"HIGNNCK\x00"
VERSION = 1
_DTYPES = {"float64": (torch.float64, "<f8"), "float32": (torch.float32, "<f4"), "int64": (torch.int64, "<i8")}


def _config_to_dict(config) -> dict:
    if config is None:
        return {}
    if hasattr(config, "to_dict"):
        return config.to_dict()
    return dict(config)


def save_checkpoint(store: ParamStore, config, path: str | Path) -> None:
    directory = []
    blobs = []
    for name, t in store.items():
        t = t.detach().cpu().contiguous()
        dtype = str(t.dtype).replace("torch.", "")
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for {name}")
        if t.is_floating_point() and not bool(torch.isfinite(t).all()):
            raise CheckpointError(f"refusing to save non-finite tensor {name}")
        raw = t.numpy().astype(_DTYPES[dtype][1], copy=False).tobytes()
        directory.append({"name": name, "shape": list(t.shape), "dtype": dtype, "nbytes": len(raw)})
        blobs.append(raw)
    header = json.dumps({"config": _config_to_dict(config), "rng_seed": store.rng_seed,
                         "tensors": directory}, sort_keys=True).encode()
    body = MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(blobs)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def read_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 16 or not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic or truncated)")
    body, trailer = data[:-4], data[-4:]
    if struct.unpack("<I", trailer)[0] != (zlib.crc32(body) & 0xFFFFFFFF):
        raise CheckpointError(f"{path}: checksum mismatch (corrupted or truncated)")
    version, hlen = struct.unpack("<IQ", body[len(MAGIC):len(MAGIC) + 12])
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    off = len(MAGIC) + 12
    header = json.loads(body[off:off + hlen])
    off += hlen
    tensors = {}
    for entry in header["tensors"]:
        tdtype, npdtype = _DTYPES[entry["dtype"]]
        arr = np.frombuffer(body, dtype=npdtype, count=int(np.prod(entry["shape"], dtype=np.int64)),
                            offset=off).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.copy()).to(tdtype)
        off += entry["nbytes"]
    return ParamStore(tensors, header.get("rng_seed", 0)), header["config"]


def load_checkpoint(path: str | Path):
    """Return ``(ParamStore, TrainConfig)``."""
    from .config import TrainConfig

    store, cfg = read_checkpoint(path)
    return store, TrainConfig.from_dict(cfg)


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
