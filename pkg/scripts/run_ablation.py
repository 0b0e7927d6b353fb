"""Train the full model and the cumulative ablations on the default synthetic corpus.

    python scripts/run_ablation.py --seeds 0 1 2 --steps 5000 --out ablation.json
"""
import argparse
import json
import logging
import time

from hignn.config import TrainConfig
from hignn.corpus_io import windows_from_documents
from hignn.synth import GenSpec, generate_corpus
from hignn.trainer import run_ablation_suite, split_windows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--melenc-steps", type=int, default=None)
    ap.add_argument("--corpus-seed", type=int, default=0)
    ap.add_argument("--config", default=None, help="JSON TrainConfig overrides (test profile otherwise)")
    ap.add_argument("--out", default="ablation.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = TrainConfig.load(args.config) if args.config else TrainConfig.test_profile()
    cfg = cfg.replace(steps=args.steps)
    if args.melenc_steps is not None:
        cfg = cfg.replace(melenc_steps=args.melenc_steps)
    docs, table = generate_corpus(GenSpec(seed=args.corpus_seed))
    train_w, test_w = split_windows(windows_from_documents(docs))

    t0 = time.time()

    def progress(name, entry):
        logging.info("%-32s seed=%d f0_rmse=%.3f dur_mse=%.3f mcd=%.3f (%.0fs)", name, entry["seed"],
                     entry["f0_rmse"], entry["duration_mse"], entry["mcd_proxy"], entry["train_seconds"])

    table_out = run_ablation_suite(cfg, train_w, test_w, table, args.seeds, progress=progress)
    table_out["wall_seconds"] = time.time() - t0
    with open(args.out, "w") as fh:
        json.dump(table_out, fh, indent=1, sort_keys=True)
    for name, s in table_out["summary"].items():
        print(f"{name:34s} f0_rmse={s['f0_rmse']:.3f} ({100 * s['f0_rmse_rel_change']:+.1f}%) "
              f"dur_mse={s['duration_mse']:.3f} mcd={s['mcd_proxy']:.3f}")
    for d in table_out["melenc"]:
        print("melenc", d)


if __name__ == "__main__":
    main()
