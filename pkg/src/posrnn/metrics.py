"""Sequence metrics: token accuracy, Damerau-Levenshtein distance (OSA
variant), bootstrap confidence intervals, and the structured dual-frequency
evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .models import SequenceModel, forward_batch
from .tasks import TaskInstance, instances_to_batch


def token_accuracy(predictions, targets) -> float:
    """Fraction of positions where prediction equals target."""
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise ShapeError(
            f"token_accuracy: {predictions.shape} vs {targets.shape}")
    if predictions.size == 0:
        raise ConfigError("token_accuracy: empty input")
    return float((predictions == targets).mean())


def damerau_levenshtein(a, b) -> int:
    """Optimal-string-alignment edit distance: unit-cost insertions,
    deletions, substitutions, and adjacent transpositions (each substring is
    edited at most once)."""
    a = list(a)
    b = list(b)
    n, m = len(a), len(b)
    prev2 = None
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
            if (i > 1 and j > 1 and a[i - 1] == b[j - 2]
                    and a[i - 2] == b[j - 1]):
                cur[j] = min(cur[j], prev2[j - 2] + 1)
        prev2, prev = prev, cur
    return prev[m]


def normalized_distance(prediction, target) -> float:
    """Damerau-Levenshtein distance divided by the target length."""
    target = list(target)
    if not target:
        raise ConfigError("normalized_distance: empty target")
    return damerau_levenshtein(prediction, target) / len(target)


def bootstrap_ci(values, n_resamples: int = 10000, alpha: float = 0.05,
                 seed: int = 0) -> tuple[float, float, float]:
    """(mean, lo, hi): percentile bootstrap CI over per-sequence values."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ConfigError("bootstrap_ci needs a non-empty 1-D sample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(n_resamples, values.size))
    means = values[idx].mean(axis=1)
    lo, hi = np.quantile(means, [alpha / 2, 1 - alpha / 2])
    return float(values.mean()), float(lo), float(hi)


# ---------------------------------------------------------------------------
# batched evaluation


@dataclass
class EvalResult:
    token_accuracy: float
    mean_distance: float                 # mean normalized edit distance
    per_sequence_accuracy: np.ndarray    # (n,) token accuracy per sequence
    per_sequence_distance: np.ndarray    # (n,) normalized distance per sequence


def evaluate_instances(model: SequenceModel, instances: list[TaskInstance],
                       batch_size: int = 64) -> EvalResult:
    """Greedy decoding over a list of equal-length instances."""
    accs = []
    dists = []
    for start in range(0, len(instances), batch_size):
        chunk = instances[start:start + batch_size]
        batch = instances_to_batch(chunk)
        res = forward_batch(
            model, batch.inputs,
            aux_tokens=batch.aux_inputs,
            query_tokens=batch.queries,
            n_out=batch.targets.shape[1],
        )
        preds = res.predictions()
        accs.append((preds == batch.targets).mean(axis=1))
        for p, t in zip(preds, batch.targets):
            dists.append(normalized_distance(p.tolist(), t.tolist()))
    acc = np.concatenate(accs)
    dist = np.asarray(dists)
    return EvalResult(
        token_accuracy=float(acc.mean()),
        mean_distance=float(dist.mean()),
        per_sequence_accuracy=acc,
        per_sequence_distance=dist,
    )


@dataclass
class ConditionRow:
    """Accuracy of the single structured target token for one condition cell."""

    target_group: str
    disturbant_group: str
    position_quartile: int   # 1..4 over target positions
    n: int
    accuracy: float


def evaluate_dual_frequency(model: SequenceModel, testset,
                            batch_size: int = 64) -> list[ConditionRow]:
    """Accuracy of the structured target token, split by condition and by
    quartile of its position in the input.

    ``testset`` holds (instance, target_position, (target_group,
    disturbant_group)) triples as produced by
    ``tasks.build_dual_frequency_testset``; within a sequence only the
    reversed target position is scored.
    """
    length = len(testset[0][0])
    cells: dict[tuple, list[int]] = {}
    for start in range(0, len(testset), batch_size):
        chunk = testset[start:start + batch_size]
        batch = instances_to_batch([c[0] for c in chunk])
        preds = forward_batch(model, batch.inputs).predictions()
        for (inst, pos, (tg, dg)), pred in zip(chunk, preds):
            # input position pos appears at output position length - pos + 1
            out_idx = length - pos
            quart = 1 + (pos - 1) * 4 // length
            hit = int(pred[out_idx] == inst.targets[out_idx])
            cells.setdefault((tg, dg, quart), []).append(hit)
    rows = []
    for (tg, dg, quart), hits in sorted(cells.items()):
        rows.append(ConditionRow(
            target_group=tg, disturbant_group=dg, position_quartile=quart,
            n=len(hits), accuracy=float(np.mean(hits)),
        ))
    return rows


# ---------------------------------------------------------------------------
# CSV export


def write_metrics_csv(path: str, rows: list[dict], fieldnames: list[str]):
    """Deterministic CSV: fixed column order, ``repr``-exact floats, LF line
    endings."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in fieldnames})


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def eval_result_rows(name: str, result: EvalResult) -> list[dict]:
    acc_mean, acc_lo, acc_hi = bootstrap_ci(result.per_sequence_accuracy)
    d_mean, d_lo, d_hi = bootstrap_ci(result.per_sequence_distance)
    return [{
        "name": name,
        "token_accuracy": acc_mean,
        "token_accuracy_ci_lo": acc_lo,
        "token_accuracy_ci_hi": acc_hi,
        "normalized_distance": d_mean,
        "normalized_distance_ci_lo": d_lo,
        "normalized_distance_ci_hi": d_hi,
        "n_sequences": result.per_sequence_accuracy.size,
    }]


EVAL_FIELDS = [
    "name", "token_accuracy", "token_accuracy_ci_lo", "token_accuracy_ci_hi",
    "normalized_distance", "normalized_distance_ci_lo",
    "normalized_distance_ci_hi", "n_sequences",
]

CONDITION_FIELDS = [
    "target_group", "disturbant_group", "position_quartile", "n", "accuracy",
]


def condition_rows_to_dicts(rows: list[ConditionRow]) -> list[dict]:
    return [r.__dict__.copy() for r in rows]
