#!/usr/bin/env python3
"""Accuracy-vs-vocabulary trend runs (reverse-ordering, LSTM).

Trains vanilla and sinusoidal-PE LSTMs at two vocabulary sizes over several
seeds and records each run's final evaluation accuracy as JSON under the
output directory.  Runs are resumable: completed (vocab, encoder, seed)
cells are skipped on restart.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from posrnn import metrics, models, optim, tasks  # noqa: E402


def run_cell(vocab, encoder_kind, seed, iters, length, hidden, out_path,
             dtype="real32"):
    cfg = models.ModelConfig(
        vocab_size=vocab, core="lstm", hidden=hidden, embed_dim=hidden,
        encoder_kind=encoder_kind, d_pos=hidden, max_len=length, dtype=dtype,
    )
    model = models.init_params(cfg, np.random.default_rng(seed))
    task = tasks.TaskConfig(task="reverse", vocab_size=vocab, length=length)
    tcfg = optim.TrainConfig(iterations=iters, batch_size=64, seed=seed,
                             log_every=500)
    t0 = time.time()
    entries = optim.train(model, task, tcfg, log_path=out_path + ".log.jsonl")

    eval_rng = np.random.default_rng([vocab, length, 777])
    instances = [tasks.gen_reverse_ordering(vocab, length, eval_rng)
                 for _ in range(512)]
    result = metrics.evaluate_instances(model, instances)
    record = {
        "vocab_size": vocab,
        "encoder_kind": encoder_kind,
        "seed": seed,
        "iterations": iters,
        "length": length,
        "hidden": hidden,
        "dtype": dtype,
        "final_token_accuracy": result.token_accuracy,
        "final_mean_distance": result.mean_distance,
        "final_train_accuracy": entries[-1].token_accuracy,
        "train_seconds": time.time() - t0,
    }
    tmp = out_path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(record, fh, indent=1)
    os.replace(tmp, out_path)
    return record


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/acceptance/fig1")
    ap.add_argument("--iters", type=int, default=20000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--length", type=int, default=16)
    ap.add_argument("--hidden", type=int, default=128)
    ap.add_argument("--vocabs", type=int, nargs="+", default=[64, 8192])
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    for seed in range(args.seeds):
        for vocab in args.vocabs:
            for enc in ("none", "sinusoidal"):
                name = f"K{vocab}_{enc}_s{seed}.json"
                path = os.path.join(args.out, name)
                if os.path.exists(path):
                    print(f"skip {name}", flush=True)
                    continue
                print(f"run  {name}", flush=True)
                rec = run_cell(vocab, enc, seed, args.iters, args.length,
                               args.hidden, path)
                print(f"done {name}: acc={rec['final_token_accuracy']:.4f} "
                      f"({rec['train_seconds']:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
