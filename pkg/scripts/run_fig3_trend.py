#!/usr/bin/env python3
"""Gradient-stability trend runs (dual-frequency task, LSTM).

Trains a vanilla and a sinusoidal-PE LSTM on the dual-frequency task,
checkpointing periodically, then sweeps the paired-Jacobian stability probe
over the checkpoints in both similarity modes.  Stages are resumable: each
model trains only if its final checkpoint is missing, and each sweep runs
only if its CSV is missing.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from posrnn import gradstab, models, optim, tasks  # noqa: E402


def train_model(enc, seed, iters, ckpt_every, vocab, length, hidden, root):
    mdir = os.path.join(root, enc)
    final = os.path.join(mdir, f"it{iters}")
    if os.path.exists(os.path.join(final, "manifest.txt")):
        print(f"skip train {enc}", flush=True)
        return
    print(f"train {enc}", flush=True)
    cfg = models.ModelConfig(
        vocab_size=vocab, core="lstm", hidden=hidden, embed_dim=hidden,
        encoder_kind=enc, d_pos=hidden, max_len=length, dtype="real64",
    )
    model = models.init_params(cfg, np.random.default_rng(seed))
    task = tasks.TaskConfig(task="dual_freq", vocab_size=vocab, length=length)
    tcfg = optim.TrainConfig(iterations=iters, batch_size=64, seed=seed,
                             log_every=500, checkpoint_every=ckpt_every,
                             checkpoint_dir=mdir)
    t0 = time.time()
    optim.train(model, task, tcfg, log_path=os.path.join(root, f"{enc}.log.jsonl"))
    print(f"trained {enc} in {time.time() - t0:.0f}s", flush=True)


def sweep_model(enc, iters, ckpt_every, vocab, length, n_pairs, root):
    csv_path = os.path.join(root, f"stability_{enc}.csv")
    json_path = os.path.join(root, f"stability_{enc}.json")
    if os.path.exists(json_path):
        print(f"skip sweep {enc}", flush=True)
        return
    mdir = os.path.join(root, enc)
    checkpoints = [(it, os.path.join(mdir, f"it{it}"))
                   for it in range(ckpt_every, iters + 1, ckpt_every)]
    spec = tasks.DualFreqSpec(vocab)
    t0 = time.time()
    report = gradstab.stability_sweep(
        checkpoints, spec, n_pairs=n_pairs,
        mode=("literal", "frobenius-cosine"),
        t_target=1, length=length,
    )
    report.to_csv(csv_path)
    payload = {
        "encoder_kind": enc,
        "rows": [{
            "iteration": r.iteration,
            "condition": list(r.condition),
            "mode": r.mode,
            "mean_similarity": r.mean_similarity,
            "n_pairs": r.n_pairs,
            "n_degenerate": r.n_degenerate,
        } for r in report.rows],
        "warnings": report.warnings,
        "sweep_seconds": time.time() - t0,
    }
    tmp = json_path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=1)
    os.replace(tmp, json_path)
    print(f"swept {enc} in {time.time() - t0:.0f}s", flush=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/acceptance/fig3")
    ap.add_argument("--iters", type=int, default=20000)
    ap.add_argument("--ckpt-every", type=int, default=5000)
    ap.add_argument("--vocab", type=int, default=64)
    ap.add_argument("--length", type=int, default=16)
    ap.add_argument("--hidden", type=int, default=128)
    ap.add_argument("--n-pairs", type=int, default=1024)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    for enc in ("none", "sinusoidal"):
        train_model(enc, args.seed, args.iters, args.ckpt_every,
                    args.vocab, args.length, args.hidden, args.out)
    for enc in ("none", "sinusoidal"):
        sweep_model(enc, args.iters, args.ckpt_every,
                    args.vocab, args.length, args.n_pairs, args.out)


if __name__ == "__main__":
    main()
