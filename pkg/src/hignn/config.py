from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field


@dataclass
class TrainConfig:
    # model dimensions; defaults are the full-size setting
    d_node: int = 256
    d_edge: int = 256
    d_ctx: int = 256
    d_model: int = 256
    d_p: int = 128
    d_h: int = 128
    n_heads: int = 4
    n_layers: int = 4
    dropout: float = 0.1

    # optimisation
    beta: float = 1.0
    sup_standardize: bool = False
    lr: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.98)
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    steps: int = 5000
    batch_size: int = 8
    seed: int = 0
    dtype: str = "float32"

    # ablation switches
    no_supervision: bool = False
    no_context_attention: bool = False
    no_global_node: bool = False

    # mel-encoder pretraining
    melenc_steps: int = 6000
    melenc_lr: float = 1e-3
    melenc_lr_decay: bool = True
    melenc_batch_size: int = 32
    melenc_adv_steps: int = 5
    melenc_adv_lr: float = 3e-3
    melenc_adv_hidden: int = 64
    dat_lambda: float = 1.0
    dat_ramp: bool = False

    # filled from the training corpus; embedded so evaluation is self-contained
    d_emb: int = 0
    d_mel: int = 0
    n_phonemes: int = 0
    n_speakers: int = 0
    relations: list[str] = field(default_factory=list)
    f0_mean: float = 0.0
    f0_std: float = 1.0
    melenc_target_mean: list[float] = field(default_factory=list)
    melenc_target_std: list[float] = field(default_factory=list)

    # paths
    corpus: str = ""
    emb: str = ""
    melenc: str = ""

    @classmethod
    def test_profile(cls, **overrides) -> "TrainConfig":
        base = dict(d_node=16, d_edge=16, d_ctx=16, d_model=16, d_p=16, d_h=32, n_heads=2, n_layers=2)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def validate(self) -> None:
        if self.d_node % self.n_heads:
            raise ValueError(f"d_node={self.d_node} not divisible by n_heads={self.n_heads}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.beta < 0 or self.dat_lambda < 0:
            raise ValueError("beta and dat_lambda must be nonnegative")
        if self.melenc_adv_steps < 1:
            raise ValueError("melenc_adv_steps must be at least 1")

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


ABLATION_VARIANTS = {
    "full": {},
    "-supervision": {"no_supervision": True},
    "-context_attention": {"no_context_attention": True},
    "-context_attention-global_node": {"no_context_attention": True, "no_global_node": True},
}
