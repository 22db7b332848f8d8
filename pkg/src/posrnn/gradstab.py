"""Paired-sequence gradient-stability probe.

For pairs of sequences sharing a target token, compares the Jacobians of the
final hidden output with respect to an early recurrent state.  High
similarity between the paired Jacobians indicates that the gradient signal
attributable to the shared token survives the differing disturbant tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, CorruptCheckpointError, RangeError
from .metrics import write_metrics_csv
from .models import SequenceModel, forward_batch, load_params
from .tasks import DualFreqSpec

MODES = ("literal", "frobenius-cosine")
DEFAULT_CONDITIONS = (
    ("frequent", "frequent"),
    ("frequent", "rare"),
    ("rare", "frequent"),
    ("rare", "rare"),
)


@dataclass
class ProbePair:
    """Two sequences sharing the target token at 1-based ``t_target``.

    RNN-style pairs share only the target (t_target = 1); prefix-sharing
    pairs additionally share the disturbants before the target.
    """

    sequence_a: np.ndarray
    sequence_b: np.ndarray
    t_target: int
    condition: tuple[str, str]


def build_probe_pairs(spec: DualFreqSpec, condition: tuple[str, str],
                      t_target: int, n_pairs: int,
                      rng: np.random.Generator,
                      length: int = 64,
                      shared_prefix: bool = False) -> list[ProbePair]:
    """Draw ``n_pairs`` probe pairs for one (target, disturbant) condition.

    The target token comes from the condition's target group; all other
    positions hold i.i.d. disturbant-group tokens, drawn independently for
    the two sequences except the shared prefix when ``shared_prefix`` is set
    (positions 1..t_target are then identical).
    """
    if not 1 <= t_target <= length:
        raise ConfigError(f"t_target={t_target} outside 1..{length}")
    target_group, dist_group = condition
    t_tokens = spec.group_tokens(target_group)
    d_tokens = spec.group_tokens(dist_group)

    def draw(shape):
        return rng.integers(d_tokens.start, d_tokens.stop, size=shape)

    pairs = []
    for _ in range(n_pairs):
        a = draw(length)
        b = draw(length)
        if shared_prefix:
            b[: t_target - 1] = a[: t_target - 1]
        token = rng.integers(t_tokens.start, t_tokens.stop)
        a[t_target - 1] = token
        b[t_target - 1] = token
        pairs.append(ProbePair(a, b, t_target, (target_group, dist_group)))
    return pairs


# ---------------------------------------------------------------------------
# state-to-state Jacobians


def _z_columns(model: SequenceModel) -> int:
    cfg = model.config
    if cfg.core == "gru":
        return cfg.hidden
    if cfg.core == "lstm":
        return 2 * cfg.hidden
    return 2 * cfg.hidden * cfg.state_size


def _state_grad_rows(grads: T.Gradients, step_state, batch: int) -> np.ndarray:
    """Realified per-sequence gradient of one output coordinate w.r.t. the
    chosen state; returns (batch, dim_z)."""
    parts = step_state if isinstance(step_state, tuple) else (step_state,)
    cols = []
    for part in parts:
        g = grads[part].reshape(batch, -1)
        if np.iscomplexobj(g):
            out = np.empty((batch, 2 * g.shape[1]), dtype=np.float64)
            out[:, 0::2] = g.real
            out[:, 1::2] = g.imag
            cols.append(out)
        else:
            cols.append(np.asarray(g, dtype=np.float64))
    return np.concatenate(cols, axis=1) if len(cols) > 1 else cols[0]


def state_jacobians(model: SequenceModel, sequences: np.ndarray,
                    t_from: int, t_to: int) -> np.ndarray:
    """Batched Jacobians of the step-``t_to`` hidden output w.r.t. the
    step-``t_from`` state, holding inputs fixed: (B, D, dim_z).

    State z is h for GRU (D columns), (h, c) for LSTM (2D columns), or the
    complex mode tensor for S4D flattened to interleaved real/imaginary
    columns (2*D*N).  The output phase feeds the query vector; ``t_to``
    normally equals 2L.
    """
    sequences = np.asarray(sequences)
    if sequences.ndim == 1:
        sequences = sequences[None, :]
    bsz, l_in = sequences.shape
    if not 1 <= t_from < t_to or t_to > 2 * l_in:
        raise RangeError(f"need 1 <= t_from < t_to <= 2L, got {t_from}, {t_to}")
    n_out = t_to - l_in
    if n_out <= 0:
        sequences = sequences[:, :t_to]
        n_out = 0

    with T.Tape() as tape:
        res = forward_batch(model, sequences, n_out=n_out,
                            with_logits=False, collect_states=True)
    output = res.core_outputs[t_to - 1]
    z = res.states[t_from - 1]
    d = output.shape[-1]
    jac = np.empty((bsz, d, _z_columns(model)), dtype=np.float64)
    for i in range(d):
        seed = np.zeros(output.shape, dtype=output.dtype)
        seed[:, i] = 1.0
        grads = T.backward_from(tape, output, seed)
        jac[:, i, :] = _state_grad_rows(grads, z, bsz)
    return jac


def state_jacobian(model: SequenceModel, sequence, t_from: int,
                   t_to: int) -> np.ndarray:
    """Single-sequence form of ``state_jacobians``: (D, dim_z)."""
    return state_jacobians(model, np.asarray(sequence)[None, :], t_from, t_to)[0]


# ---------------------------------------------------------------------------
# similarity


def stability(j_a: np.ndarray, j_b: np.ndarray, mode: str = "literal") -> float:
    """Similarity between two Jacobians.

    ``literal``: sum_i alpha_i^A alpha_i^B <row_i(A), row_i(B)> with
    alpha_i = ||row_i|| / sum_k ||row_k|| (zero rows contribute 0).
    ``frobenius-cosine``: <A, B>_F / (||A||_F ||B||_F).
    Both Jacobians all-zero is undefined and returns NaN.
    """
    j_a = np.asarray(j_a, dtype=np.float64)
    j_b = np.asarray(j_b, dtype=np.float64)
    if j_a.shape != j_b.shape:
        raise ConfigError(f"stability: shapes {j_a.shape} vs {j_b.shape}")
    if mode not in MODES:
        raise ConfigError(f"unknown stability mode {mode!r}")
    return float(_stability_batch(j_a[None], j_b[None], mode)[0])


def _stability_batch(j_a: np.ndarray, j_b: np.ndarray, mode: str) -> np.ndarray:
    """Vectorized similarity over a leading pair axis: (n, D, Z) -> (n,)."""
    if mode == "frobenius-cosine":
        num = np.einsum("ndz,ndz->n", j_a, j_b)
        den = np.linalg.norm(j_a.reshape(len(j_a), -1), axis=1) \
            * np.linalg.norm(j_b.reshape(len(j_b), -1), axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    norms_a = np.linalg.norm(j_a, axis=2)
    norms_b = np.linalg.norm(j_b, axis=2)
    sum_a = norms_a.sum(axis=1, keepdims=True)
    sum_b = norms_b.sum(axis=1, keepdims=True)
    alpha_a = np.divide(norms_a, sum_a, out=np.zeros_like(norms_a),
                        where=sum_a > 0)
    alpha_b = np.divide(norms_b, sum_b, out=np.zeros_like(norms_b),
                        where=sum_b > 0)
    inner = np.einsum("ndz,ndz->nd", j_a, j_b)
    score = (alpha_a * alpha_b * inner).sum(axis=1)
    both_zero = (sum_a[:, 0] == 0) & (sum_b[:, 0] == 0)
    return np.where(both_zero, np.nan, score)


# ---------------------------------------------------------------------------
# checkpoint sweep


@dataclass
class StabilityRow:
    iteration: int
    condition: tuple[str, str]
    mode: str
    mean_similarity: float
    n_pairs: int
    n_degenerate: int


@dataclass
class StabilityReport:
    rows: list[StabilityRow] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_csv(self, path: str):
        dicts = [{
            "iteration": r.iteration,
            "condition": f"{r.condition[0]}/{r.condition[1]}",
            "mode": r.mode,
            "mean_similarity": r.mean_similarity,
            "n_pairs": r.n_pairs,
            "n_degenerate": r.n_degenerate,
        } for r in self.rows]
        write_metrics_csv(path, dicts, [
            "iteration", "condition", "mode", "mean_similarity",
            "n_pairs", "n_degenerate",
        ])


def stability_sweep(checkpoints, spec: DualFreqSpec,
                    conditions=DEFAULT_CONDITIONS,
                    n_pairs: int = 1024,
                    mode="literal",
                    t_target: int = 1,
                    length: int = 64,
                    shared_prefix: bool = False,
                    pair_seed: int = 0,
                    chunk: int = 128) -> StabilityReport:
    """Mean pair similarity for every checkpoint x condition cell.

    ``checkpoints`` is a list of (iteration, model-or-path) entries; paths
    are loaded per checkpoint and corrupt ones are skipped with a warning.
    Probe pairs are drawn once per condition from a fixed seed so every
    checkpoint sees the same pairs.  ``mode`` may be a single mode or a
    sequence of modes; all modes reuse the same Jacobians.
    """
    modes = (mode,) if isinstance(mode, str) else tuple(mode)
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown stability mode {m!r}")
    pair_sets = {}
    for ci, condition in enumerate(conditions):
        rng = np.random.default_rng([pair_seed, ci])
        pairs = build_probe_pairs(spec, condition, t_target, n_pairs, rng,
                                  length=length, shared_prefix=shared_prefix)
        pair_sets[condition] = (
            np.stack([p.sequence_a for p in pairs]),
            np.stack([p.sequence_b for p in pairs]),
        )

    report = StabilityReport()
    for iteration, entry in checkpoints:
        if isinstance(entry, SequenceModel):
            model = entry
        else:
            try:
                model = load_params(entry)
            except CorruptCheckpointError as exc:
                report.warnings.append(f"skipped checkpoint {entry}: {exc}")
                continue
        for condition in conditions:
            seqs_a, seqs_b = pair_sets[condition]
            sims = {m: [] for m in modes}
            for start in range(0, n_pairs, chunk):
                sa = seqs_a[start:start + chunk]
                sb = seqs_b[start:start + chunk]
                stacked = np.concatenate([sa, sb], axis=0)
                jac = state_jacobians(model, stacked, t_target, 2 * length)
                for m in modes:
                    sims[m].append(
                        _stability_batch(jac[:len(sa)], jac[len(sa):], m))
            for m in modes:
                vals = np.concatenate(sims[m])
                degenerate = int(np.isnan(vals).sum())
                mean = float(np.nanmean(vals)) if degenerate < vals.size \
                    else float("nan")
                report.rows.append(StabilityRow(
                    iteration=int(iteration), condition=tuple(condition),
                    mode=m, mean_similarity=mean, n_pairs=int(vals.size),
                    n_degenerate=degenerate,
                ))
    return report
