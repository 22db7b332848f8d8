"""Per-time-step position encodings and per-step model input assembly.

Supported kinds: ``none``, ``sinusoidal``, ``random-fixed``, ``learnable``
and ``double-vanilla`` (the parameter-count control that concatenates two
copies of the embedding).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, RangeError

KINDS = ("none", "sinusoidal", "random-fixed", "learnable", "double-vanilla")


def sinusoidal_encoding(t: int, d_pos: int) -> np.ndarray:
    """Unit-norm sinusoidal encoding of 1-based time index ``t``.

    Even components (0-based) are sines, odd components cosines, at
    frequencies 10000^(-2j/d_pos); both are divided by sqrt(d_pos/2) so the
    vector has unit L2 norm.
    """
    if d_pos < 2 or d_pos % 2 != 0:
        raise ConfigError(f"sinusoidal d_pos must be even and >= 2, got {d_pos}")
    if t < 1:
        raise ConfigError(f"time index must be >= 1, got {t}")
    j = np.arange(d_pos // 2, dtype=np.float64)
    args = (t - 1) / np.power(10000.0, 2.0 * j / d_pos)
    out = np.empty(d_pos, dtype=np.float64)
    scale = np.sqrt(2.0 / d_pos)
    out[0::2] = np.sin(args) * scale
    out[1::2] = np.cos(args) * scale
    return out


def random_encoding_table(t_max: int, d_pos: int, rng: np.random.Generator) -> np.ndarray:
    """Rows drawn i.i.d. uniformly from the unit sphere in R^d_pos."""
    if t_max < 1:
        raise ConfigError(f"t_max must be >= 1, got {t_max}")
    if d_pos < 2:
        raise ConfigError(f"random encoding needs d_pos >= 2, got {d_pos}")
    table = rng.standard_normal((t_max, d_pos))
    table /= np.linalg.norm(table, axis=1, keepdims=True)
    return table


def learnable_encoding_init(t_max: int, d_pos: int, rng: np.random.Generator) -> np.ndarray:
    """Standard-normal init for a trainable position-embedding table."""
    if t_max < 1:
        raise ConfigError(f"t_max must be >= 1, got {t_max}")
    return rng.standard_normal((t_max, d_pos))


@dataclass
class Encoder:
    """Encoder choice plus (for table-backed kinds) its table.

    ``table`` is a plain array for ``random-fixed`` and a trainable
    ``Tensor`` for ``learnable``; model construction registers the latter as
    a parameter.
    """

    kind: str
    d_pos: int = 0
    t_max: int = 0
    table: object = None
    seed: int | None = None
    _sin_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}")

    @property
    def extra_dims(self) -> int:
        """Input width added on top of the base embedding."""
        if self.kind == "none":
            return 0
        if self.kind == "double-vanilla":
            return -1  # sentinel: doubles the base instead
        return self.d_pos

    def encoding_at(self, t: int) -> np.ndarray:
        """The raw encoding vector for 1-based step ``t`` (fixed kinds)."""
        if self.kind == "sinusoidal":
            vec = self._sin_cache.get(t)
            if vec is None:
                vec = sinusoidal_encoding(t, self.d_pos)
                self._sin_cache[t] = vec
            return vec
        if self.kind == "random-fixed":
            self._check_capacity(t)
            return self.table[t - 1]
        if self.kind == "learnable":
            self._check_capacity(t)
            return self.table.values[t - 1]
        raise ConfigError(f"kind {self.kind!r} has no encoding vector")

    def _check_capacity(self, t: int):
        if not 1 <= t <= self.t_max:
            raise RangeError(
                f"t={t} outside table capacity 1..{self.t_max} ({self.kind})"
            )

    def assemble_input(self, base: T.Tensor, t: int) -> T.Tensor:
        """Concatenate the step-``t`` encoding onto ``base``.

        ``base`` may be a single vector or a batch (leading axes allowed);
        the base values always form an untouched prefix of the output.
        """
        if self.kind == "none":
            return base
        if self.kind == "double-vanilla":
            return T.concat((base, base), axis=-1)
        if self.kind == "learnable":
            self._check_capacity(t)
            if base.ndim == 1:
                row = self.table[t - 1]
            else:
                idx = np.full(base.shape[:-1], t - 1, dtype=np.intp)
                row = T.gather(self.table, idx)
            return T.concat((base, row), axis=-1)
        vec = self.encoding_at(t).astype(base.dtype, copy=False)
        pe = np.broadcast_to(vec, base.shape[:-1] + (self.d_pos,))
        return T.concat((base, T.constant(pe)), axis=-1)


def build_encoder(kind: str, d_pos: int, t_max: int, seed: int | None = None) -> Encoder:
    """Construct an encoder; table-backed kinds draw their table from ``seed``."""
    if kind in ("none", "double-vanilla"):
        return Encoder(kind=kind)
    if kind == "sinusoidal":
        if d_pos < 2 or d_pos % 2 != 0:
            raise ConfigError(f"sinusoidal d_pos must be even, got {d_pos}")
        return Encoder(kind=kind, d_pos=d_pos, t_max=t_max)
    rng = np.random.default_rng(seed)
    if kind == "random-fixed":
        table = random_encoding_table(t_max, d_pos, rng)
        return Encoder(kind=kind, d_pos=d_pos, t_max=t_max, table=table, seed=seed)
    if kind == "learnable":
        table = T.Tensor(learnable_encoding_init(t_max, d_pos, rng), name="pos_table")
        return Encoder(kind=kind, d_pos=d_pos, t_max=t_max, table=table, seed=seed)
    raise ConfigError(f"unknown encoder kind {kind!r}")


def assemble_input(base: T.Tensor, t: int, encoder: Encoder) -> T.Tensor:
    """Functional form of ``Encoder.assemble_input``."""
    return encoder.assemble_input(base, t)
