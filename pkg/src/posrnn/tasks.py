"""Seeded generators for the synthetic sequence benchmarks.

Tasks: reverse-ordering, dual-frequency reverse-ordering, sorting,
reverse-ordering + delayed-addition, and predecessor-query.  Every generator
is a pure function of (config, rng state); batched samplers share the same
distributions for the training loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError

TASK_NAMES = ("reverse", "dual_freq", "sorting", "delayed_add", "pred_query")


@dataclass
class TaskInstance:
    """One benchmark example.

    ``aux_inputs`` carries the output-phase integers of delayed-addition;
    ``query`` the reintroduced token of predecessor-query.
    """

    inputs: np.ndarray
    targets: np.ndarray
    aux_inputs: np.ndarray | None = None
    query: int | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.int64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.aux_inputs is not None:
            self.aux_inputs = np.asarray(self.aux_inputs, dtype=np.int64)

    def __len__(self):
        return len(self.inputs)


@dataclass
class DualFreqSpec:
    """Vocabulary split into Frequent ([0, K/2)) and Rare ([K/2, K)) halves.

    Per-token probabilities default to (7/8)(2/K) and (1/8)(2/K); the
    frequent:rare per-token ratio (7:1 by default) can be overridden.
    """

    vocab_size: int
    ratio: Fraction = field(default_factory=lambda: Fraction(7, 1))

    def __post_init__(self):
        if self.vocab_size < 2 or self.vocab_size % 2 != 0:
            raise ConfigError(f"dual-frequency vocab size must be even, got {self.vocab_size}")
        self.ratio = Fraction(self.ratio)

    @property
    def frequent_tokens(self) -> range:
        return range(0, self.vocab_size // 2)

    @property
    def rare_tokens(self) -> range:
        return range(self.vocab_size // 2, self.vocab_size)

    @property
    def frequent_mass(self) -> Fraction:
        """Total probability of the Frequent half (7/8 at the default ratio)."""
        return self.ratio / (self.ratio + 1)

    @property
    def p_frequent(self) -> Fraction:
        return self.frequent_mass * Fraction(2, self.vocab_size)

    @property
    def p_rare(self) -> Fraction:
        return (1 - self.frequent_mass) * Fraction(2, self.vocab_size)

    def token_probabilities(self) -> np.ndarray:
        half = self.vocab_size // 2
        p = np.empty(self.vocab_size, dtype=np.float64)
        p[:half] = float(self.p_frequent)
        p[half:] = float(self.p_rare)
        return p

    def sample_tokens(self, shape, rng: np.random.Generator) -> np.ndarray:
        half = self.vocab_size // 2
        frequent = rng.random(shape) < float(self.frequent_mass)
        tokens = rng.integers(0, half, size=shape)
        return np.where(frequent, tokens, tokens + half)

    def group_tokens(self, group: str) -> range:
        if group == "frequent":
            return self.frequent_tokens
        if group == "rare":
            return self.rare_tokens
        raise ConfigError(f"unknown token group {group!r}")


def _resolve_length(length, rng):
    if isinstance(length, int):
        return length
    lengths = list(length)
    if not lengths:
        raise ConfigError("empty length range")
    return int(rng.choice(lengths))


def gen_reverse_ordering(vocab_size: int, length, rng: np.random.Generator) -> TaskInstance:
    """Uniform random inputs; targets are the inputs reversed.

    ``length`` may be an int or a non-empty sequence of lengths to draw from
    uniformly.
    """
    if vocab_size < 2:
        raise ConfigError(f"vocab size must be >= 2, got {vocab_size}")
    n = _resolve_length(length, rng)
    inputs = rng.integers(0, vocab_size, size=n)
    return TaskInstance(inputs=inputs, targets=inputs[::-1])


def gen_dual_frequency(spec: DualFreqSpec, length: int, rng: np.random.Generator) -> TaskInstance:
    """Reverse-ordering over the two-level token distribution."""
    inputs = spec.sample_tokens(length, rng)
    return TaskInstance(inputs=inputs, targets=inputs[::-1])


def gen_sorting(vocab_size: int, length: int, rng: np.random.Generator) -> TaskInstance:
    """Inputs sampled with replacement; targets sorted ascending."""
    if vocab_size < 2:
        raise ConfigError(f"vocab size must be >= 2, got {vocab_size}")
    inputs = rng.integers(0, vocab_size, size=length)
    return TaskInstance(inputs=inputs, targets=np.sort(inputs))


def gen_delayed_addition(vocab_size: int, length: int, rng: np.random.Generator) -> TaskInstance:
    """Reverse-ordering where output step i adds a fresh integer mod K."""
    if vocab_size < 2:
        raise ConfigError(f"vocab size must be >= 2, got {vocab_size}")
    inputs = rng.integers(0, vocab_size, size=length)
    aux = rng.integers(0, vocab_size, size=length)
    targets = (inputs[::-1] + aux) % vocab_size
    return TaskInstance(inputs=inputs, targets=targets, aux_inputs=aux)


def gen_predecessor_query(vocab_size: int, length: int, rng: np.random.Generator) -> TaskInstance:
    """Non-repeating inputs; a non-initial token is re-shown and the model
    must return the token that preceded it."""
    if vocab_size < length:
        raise ConfigError(
            f"predecessor-query needs vocab >= length ({vocab_size} < {length})"
        )
    inputs = rng.choice(vocab_size, size=length, replace=False)
    j = int(rng.integers(1, length))
    return TaskInstance(
        inputs=inputs,
        targets=np.array([inputs[j - 1]]),
        query=int(inputs[j]),
    )


def build_dual_frequency_testset(
    spec: DualFreqSpec,
    length: int = 64,
    per_cell: int = 16,
    rng: np.random.Generator | None = None,
) -> list[tuple[TaskInstance, int, tuple[str, str]]]:
    """Structured test set for the single-target evaluation.

    For each condition (target group x disturbant group) and each target
    position t in 1..length, generates ``per_cell`` sequences whose position
    t holds a token from the target group and whose other positions hold
    disturbant-group tokens.  Returns (instance, target_position, condition)
    triples; defaults yield 4 * 64 * 16 = 4096 sequences.
    """
    rng = np.random.default_rng() if rng is None else rng
    out = []
    for target_group in ("frequent", "rare"):
        for dist_group in ("frequent", "rare"):
            t_rng = spec.group_tokens(target_group)
            d_rng = spec.group_tokens(dist_group)
            for pos in range(1, length + 1):
                for _ in range(per_cell):
                    seq = rng.integers(d_rng.start, d_rng.stop, size=length)
                    seq[pos - 1] = rng.integers(t_rng.start, t_rng.stop)
                    inst = TaskInstance(inputs=seq, targets=seq[::-1])
                    out.append((inst, pos, (target_group, dist_group)))
    return out


# ---------------------------------------------------------------------------
# batched sampling for the training loop


@dataclass
class Batch:
    """Equal-length instances stacked into arrays for one training step."""

    inputs: np.ndarray                 # (B, L)
    targets: np.ndarray                # (B, L_out)
    aux_inputs: np.ndarray | None = None   # (B, L_out), delayed-addition
    queries: np.ndarray | None = None      # (B,), predecessor-query


@dataclass
class TaskConfig:
    task: str
    vocab_size: int
    length: int | tuple[int, int] = 64  # int, or inclusive (lo, hi) range
    dual_freq_ratio: Fraction = field(default_factory=lambda: Fraction(7, 1))

    def __post_init__(self):
        if self.task not in TASK_NAMES:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab size must be >= 2, got {self.vocab_size}")

    @property
    def max_length(self) -> int:
        if isinstance(self.length, int):
            return self.length
        return int(self.length[1])

    def draw_length(self, rng) -> int:
        if isinstance(self.length, int):
            return self.length
        lo, hi = self.length
        return int(rng.integers(lo, hi + 1))

    def dual_freq_spec(self) -> DualFreqSpec:
        return DualFreqSpec(self.vocab_size, self.dual_freq_ratio)


def sample_batch(config: TaskConfig, batch_size: int, rng: np.random.Generator) -> Batch:
    """Draw one fresh batch; variable-length tasks share one length per batch."""
    k = config.vocab_size
    n = config.draw_length(rng)
    if config.task == "reverse":
        inputs = rng.integers(0, k, size=(batch_size, n))
        return Batch(inputs=inputs, targets=inputs[:, ::-1])
    if config.task == "dual_freq":
        inputs = config.dual_freq_spec().sample_tokens((batch_size, n), rng)
        return Batch(inputs=inputs, targets=inputs[:, ::-1])
    if config.task == "sorting":
        inputs = rng.integers(0, k, size=(batch_size, n))
        return Batch(inputs=inputs, targets=np.sort(inputs, axis=1))
    if config.task == "delayed_add":
        inputs = rng.integers(0, k, size=(batch_size, n))
        aux = rng.integers(0, k, size=(batch_size, n))
        return Batch(inputs=inputs, targets=(inputs[:, ::-1] + aux) % k,
                     aux_inputs=aux)
    if config.task == "pred_query":
        instances = [gen_predecessor_query(k, n, rng) for _ in range(batch_size)]
        return Batch(
            inputs=np.stack([i.inputs for i in instances]),
            targets=np.stack([i.targets for i in instances]),
            queries=np.array([i.query for i in instances]),
        )
    raise ConfigError(f"unknown task {config.task!r}")


def instances_to_batch(instances: list[TaskInstance]) -> Batch:
    """Stack equal-length instances (evaluation path)."""
    lengths = {len(i) for i in instances}
    if len(lengths) != 1:
        raise ConfigError("instances in a batch must share one length")
    aux = None
    queries = None
    if instances[0].aux_inputs is not None:
        aux = np.stack([i.aux_inputs for i in instances])
    if instances[0].query is not None:
        queries = np.array([i.query for i in instances])
    return Batch(
        inputs=np.stack([i.inputs for i in instances]),
        targets=np.stack([i.targets for i in instances]),
        aux_inputs=aux,
        queries=queries,
    )


# ---------------------------------------------------------------------------
# line-delimited serialization: inputs TAB aux-or-query TAB targets


def instance_to_line(inst: TaskInstance) -> str:
    middle = ""
    if inst.aux_inputs is not None:
        middle = " ".join(map(str, inst.aux_inputs))
    elif inst.query is not None:
        middle = str(inst.query)
    return "\t".join(
        (" ".join(map(str, inst.inputs)), middle, " ".join(map(str, inst.targets)))
    )


def instance_from_line(line: str) -> TaskInstance:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3:
        raise ConfigError(f"malformed instance line: {line!r}")
    inputs = _ints(parts[0])
    targets = _ints(parts[2])
    aux = None
    query = None
    if parts[1]:
        mid = _ints(parts[1])
        if len(targets) == 1 and len(mid) == 1:
            query = int(mid[0])
        else:
            aux = mid
    return TaskInstance(inputs=inputs, targets=targets, aux_inputs=aux, query=query)


def _ints(text: str) -> np.ndarray:
    return np.array([int(tok) for tok in text.split()], dtype=np.int64)


def write_instances(path, instances):
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(instance_to_line(inst) + "\n")


def read_instances(path) -> list[TaskInstance]:
    with open(path) as fh:
        return [instance_from_line(line) for line in fh if line.strip()]
