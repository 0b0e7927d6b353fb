"""Speaker-probe accuracy and prosody R^2 of the pretrained mel encoder for several lambdas.

    python scripts/dat_diagnostics.py --lambdas 0 1 --seed 0
"""
import argparse
import json

from hignn.config import TrainConfig
from hignn.corpus_io import windows_from_documents
from hignn.synth import GenSpec, generate_corpus
from hignn.trainer import fit_corpus_fields, melenc_diagnostics, pretrain_melenc, split_windows, unique_sentences


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 1.0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=None)
    args = ap.parse_args()

    docs, table = generate_corpus(GenSpec())
    train_w, test_w = split_windows(windows_from_documents(docs))
    cfg = fit_corpus_fields(TrainConfig.test_profile(seed=args.seed), train_w, table)
    if args.steps:
        cfg = cfg.replace(melenc_steps=args.steps)
    for lam in args.lambdas:
        res, mcfg = pretrain_melenc(cfg.replace(dat_lambda=lam), train_w)
        diag = melenc_diagnostics(res.model, mcfg, unique_sentences(train_w), unique_sentences(test_w), args.seed)
        print(json.dumps({"lambda": lam, **diag}))


if __name__ == "__main__":
    main()
