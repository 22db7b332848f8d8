"""Sequence models: embedding, GRU/LSTM/S4D core, output query, readout.

The forward pass consumes the input tokens, then switches to the
output-phase feed (the learnable query vector, or task-specific tokens) while
the time index keeps increasing, and projects the core outputs of the output
phase to classification logits.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import posenc
from . import tensor as T
from .errors import (
    ConfigError,
    CorruptCheckpointError,
    NumericsError,
    ShapeError,
    SingularityError,
    VocabError,
)

CORES = ("gru", "lstm", "s4d")

_REAL = {"real64": np.float64, "real32": np.float32}
_COMPLEX = {"real64": np.complex128, "real32": np.complex64}


@dataclass
class ModelConfig:
    vocab_size: int
    core: str = "lstm"
    hidden: int = 128
    embed_dim: int = 128
    state_size: int = 64          # S4D modes per channel
    encoder_kind: str = "none"
    d_pos: int | None = None      # defaults to embed_dim
    max_len: int = 64             # longest input; encoder capacity is 2*max_len
    dtype: str = "real64"

    def __post_init__(self):
        if self.core not in CORES:
            raise ConfigError(f"unknown core {self.core!r}")
        if self.vocab_size < 2 or self.hidden < 1 or self.embed_dim < 1:
            raise ConfigError("vocab_size >= 2 and positive dims required")
        if self.dtype not in _REAL:
            raise ConfigError(f"unknown dtype {self.dtype!r}")
        if self.d_pos is None:
            self.d_pos = self.embed_dim
        if self.encoder_kind in ("sinusoidal", "random-fixed", "learnable") \
                and self.d_pos % 2 != 0:
            raise ConfigError(f"d_pos must be even, got {self.d_pos}")

    @property
    def input_dim(self) -> int:
        if self.encoder_kind == "none":
            return self.embed_dim
        if self.encoder_kind == "double-vanilla":
            return 2 * self.embed_dim
        return self.embed_dim + self.d_pos

    @property
    def real_dtype(self):
        return _REAL[self.dtype]

    @property
    def complex_dtype(self):
        return _COMPLEX[self.dtype]


class SequenceModel:
    """Parameter bundle plus encoder choice."""

    def __init__(self, config: ModelConfig, encoder: posenc.Encoder,
                 params: dict[str, T.Tensor], encoder_seed: int | None = None):
        self.config = config
        self.encoder = encoder
        self.params = params
        self.encoder_seed = encoder_seed

    def __getitem__(self, name: str) -> T.Tensor:
        return self.params[name]

    def param_values(self) -> dict[str, np.ndarray]:
        return {k: v.values for k, v in self.params.items()}


def init_params(config: ModelConfig, rng: np.random.Generator) -> SequenceModel:
    """Seeded initialization.

    Embedding/query/readout are drawn first so that configurations differing
    only in encoder kind share those parameters bitwise for a given seed.
    """
    d = config.hidden
    de = config.embed_dim
    k = config.vocab_size
    lim = 1.0 / np.sqrt(d)

    params: dict[str, T.Tensor] = {}

    def par(name, values):
        t = T.Tensor(np.asarray(values).astype(config.real_dtype), name=name)
        params[name] = t
        return t

    par("embed", rng.standard_normal((k, de)))
    par("query", rng.standard_normal(de))
    par("readout_w", rng.uniform(-lim, lim, size=(d, k)))
    par("readout_b", np.zeros(k))

    encoder_seed = int(rng.integers(0, 2**31 - 1))
    encoder = posenc.build_encoder(
        config.encoder_kind, config.d_pos, t_max=2 * config.max_len,
        seed=encoder_seed,
    )
    if encoder.kind == "learnable":
        encoder.table.values = encoder.table.values.astype(config.real_dtype)
        params["pos_table"] = encoder.table

    d_in = config.input_dim
    if config.core == "gru":
        par("w", rng.uniform(-lim, lim, size=(d_in, 3 * d)))
        par("u", rng.uniform(-lim, lim, size=(d, 3 * d)))
        par("b", np.zeros(3 * d))
        par("b_h", np.zeros(d))
    elif config.core == "lstm":
        par("w", rng.uniform(-lim, lim, size=(d_in, 4 * d)))
        par("u", rng.uniform(-lim, lim, size=(d, 4 * d)))
        par("b", np.zeros(4 * d))
    else:
        n = config.state_size
        par("log_neg_re", np.full((d, n), np.log(0.5)))
        par("im_lambda", np.tile(np.pi * np.arange(n, dtype=np.float64), (d, 1)))
        par("log_delta", rng.uniform(np.log(1e-3), np.log(1e-1), size=d))
        c = (rng.standard_normal((d, n)) + 1j * rng.standard_normal((d, n))) \
            / np.sqrt(2.0)
        tc = T.Tensor(c.astype(config.complex_dtype), name="c")
        params["c"] = tc
        par("d_skip", rng.standard_normal(d))
        par("in_proj", rng.uniform(-lim, lim, size=(d_in, d)))
        par("glu_w", rng.uniform(-lim, lim, size=(d, 2 * d)))
        par("glu_b", np.zeros(2 * d))
        par("out_mix", rng.uniform(-lim, lim, size=(d, d)))

    return SequenceModel(config, encoder, params, encoder_seed)


# ---------------------------------------------------------------------------
# recurrent cells


def gru_step(x: T.Tensor, h: T.Tensor, p) -> T.Tensor:
    if x.shape[-1] != p["w"].shape[0]:
        raise ShapeError(f"gru_step: input width {x.shape[-1]} != {p['w'].shape[0]}")
    return _gru_step_pre(T.badd(T.matmul(x, p["w"]), p["b"]), h, p)


def _gru_step_pre(xw: T.Tensor, h: T.Tensor, p) -> T.Tensor:
    """GRU update given the precomputed input projection xw = x @ W + b."""
    d = h.shape[-1]
    hu = T.matmul(h, p["u"])
    z = T.sigmoid(xw[..., 0:d] + hu[..., 0:d])
    r = T.sigmoid(xw[..., d:2 * d] + hu[..., d:2 * d])
    n = T.tanh(xw[..., 2 * d:] + r * T.badd(hu[..., 2 * d:], p["b_h"]))
    return z * h + (T.sub(1.0, z) * n)


def lstm_step(x: T.Tensor, h: T.Tensor, c: T.Tensor, p):
    if x.shape[-1] != p["w"].shape[0]:
        raise ShapeError(f"lstm_step: input width {x.shape[-1]} != {p['w'].shape[0]}")
    return _lstm_step_pre(T.badd(T.matmul(x, p["w"]), p["b"]), h, c, p)


def _lstm_step_pre(xw: T.Tensor, h: T.Tensor, c: T.Tensor, p):
    """LSTM update given the precomputed input projection xw = x @ W + b."""
    d = h.shape[-1]
    gates = xw + T.matmul(h, p["u"])
    i = T.sigmoid(gates[..., 0:d])
    f = T.sigmoid(gates[..., d:2 * d])
    g = T.tanh(gates[..., 2 * d:3 * d])
    o = T.sigmoid(gates[..., 3 * d:])
    c_new = (f * c) + (i * g)
    h_new = o * T.tanh(c_new)
    return h_new, c_new


def s4d_discretize(lam: T.Tensor, delta: T.Tensor):
    """Zero-order-hold discretization with B = 1: abar = exp(delta*lam),
    bbar = (abar - 1)/lam.  ``delta`` broadcasts against ``lam``."""
    lam = lam if isinstance(lam, T.Tensor) else T.Tensor(np.asarray(lam, dtype=np.complex128))
    delta = delta if isinstance(delta, T.Tensor) else T.Tensor(delta)
    if np.any(lam.values == 0):
        raise SingularityError("s4d_discretize: lambda must be nonzero")
    dl = T.bmul(lam, delta)
    abar = T.exp(dl)
    bbar = T.div(T.sub(abar, 1.0), lam) if lam.shape == abar.shape \
        else T.div(T.sub(abar, 1.0), T.bmul(lam, T.constant(np.ones_like(abar.values.real))))
    return abar, bbar


def s4d_step(u: T.Tensor, state: T.Tensor, abar: T.Tensor, bbar: T.Tensor,
             c: T.Tensor, d_skip: T.Tensor):
    """One recurrence step per channel: returns (y_raw, new_state).

    ``u`` is the real per-channel input (..., D); ``state`` the complex
    per-channel mode vector (..., D, N).
    """
    if not np.all(np.isfinite(state.values)):
        raise NumericsError("s4d_step: non-finite state")
    u_col = T.reshape(u, u.shape + (1,))
    new_state = T.add(T.bmul(state, abar), T.bmul(bbar, u_col))
    y = T.scale(T.real(T.sum_(T.bmul(new_state, c), axis=-1)), 2.0)
    y = T.add(y, T.bmul(u, d_skip))
    return y, new_state


def s4d_output(y_raw: T.Tensor, p) -> T.Tensor:
    """Post-recurrence channel mixing: GLU on a D->2D projection, then an
    output mixing matrix."""
    d = p["out_mix"].shape[0]
    pre = T.badd(T.matmul(y_raw, p["glu_w"]), p["glu_b"])
    gated = pre[..., 0:d] * T.sigmoid(pre[..., d:])
    return T.matmul(gated, p["out_mix"])


# ---------------------------------------------------------------------------
# full-sequence forward pass


@dataclass
class ForwardResult:
    logits: T.Tensor | None          # (L_out*B, K), output-step-major
    n_out: int
    batch: int
    states: list | None = None       # per step: h | (h, c) | complex S4D state
    core_outputs: list | None = None  # per step core output (real)

    def logits_array(self) -> np.ndarray:
        """(B, L_out, K) view of the logits values."""
        k = self.logits.shape[-1]
        return np.ascontiguousarray(
            self.logits.values.reshape(self.n_out, self.batch, k).transpose(1, 0, 2)
        )

    def predictions(self) -> np.ndarray:
        """(B, L_out) argmax tokens; ties break toward the lowest index."""
        return np.argmax(self.logits_array(), axis=-1)


def forward_batch(model: SequenceModel, inputs: np.ndarray,
                  aux_tokens: np.ndarray | None = None,
                  query_tokens: np.ndarray | None = None,
                  n_out: int | None = None,
                  with_logits: bool = True,
                  collect_states: bool = False) -> ForwardResult:
    """Run the model over a batch of equal-length token sequences.

    Output-phase feed: the learnable query vector by default; ``aux_tokens``
    (B, L_out) switches to delayed-addition style token embeddings;
    ``query_tokens`` (B,) runs the single-step predecessor-query protocol.
    """
    cfg = model.config
    inputs = np.asarray(inputs)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    bsz, l_in = inputs.shape
    if inputs.min() < 0 or inputs.max() >= cfg.vocab_size:
        raise VocabError("input token outside [0, vocab_size)")

    if query_tokens is not None:
        n_out = 1
    elif aux_tokens is not None:
        aux_tokens = np.asarray(aux_tokens)
        if aux_tokens.ndim == 1:
            aux_tokens = aux_tokens[None, :]
        n_out = aux_tokens.shape[1]
        if aux_tokens.min() < 0 or aux_tokens.max() >= cfg.vocab_size:
            raise VocabError("aux token outside [0, vocab_size)")
    elif n_out is None:
        n_out = l_in

    p = model.params
    rdt = cfg.real_dtype
    d = cfg.hidden

    if cfg.core == "s4d":
        lam = T.make_complex(
            T.scale(T.exp(p["log_neg_re"]), -1.0), p["im_lambda"])
        delta = T.reshape(T.exp(p["log_delta"]), (d, 1))
        abar, bbar = s4d_discretize(lam, delta)
        state = T.constant(np.zeros((bsz, d, cfg.state_size), dtype=cfg.complex_dtype))
    else:
        h = T.constant(np.zeros((bsz, d), dtype=rdt))
        if cfg.core == "lstm":
            c = T.constant(np.zeros((bsz, d), dtype=rdt))

    zeros_base = T.constant(np.zeros((bsz, cfg.embed_dim), dtype=rdt))
    states = [] if collect_states else None
    core_outputs = [] if collect_states else None
    out_feats = []
    n_steps = l_in + n_out

    for step in range(n_steps):
        if step < l_in:
            base = T.gather(p["embed"], inputs[:, step])
        elif aux_tokens is not None:
            base = T.gather(p["embed"], aux_tokens[:, step - l_in])
        elif query_tokens is not None:
            base = T.gather(p["embed"], np.asarray(query_tokens))
        else:
            base = T.badd(zeros_base, p["query"])
        x = model.encoder.assemble_input(base, step + 1)
        if cfg.core == "s4d":
            xw = T.matmul(x, p["in_proj"])
        else:
            xw = T.badd(T.matmul(x, p["w"]), p["b"])
        if cfg.core == "gru":
            h = _gru_step_pre(xw, h, p)
            core_out = h
            step_state = h
        elif cfg.core == "lstm":
            h, c = _lstm_step_pre(xw, h, c, p)
            core_out = h
            step_state = (h, c)
        else:
            y_raw, state = s4d_step(xw, state, abar, bbar, p["c"], p["d_skip"])
            core_out = s4d_output(y_raw, p)
            step_state = state

        if collect_states:
            states.append(step_state)
            core_outputs.append(core_out)
        if step >= l_in:
            out_feats.append(core_out)

    logits = None
    if with_logits:
        feats = out_feats[0] if len(out_feats) == 1 else T.concat(out_feats, axis=0)
        logits = T.badd(T.matmul(feats, p["readout_w"]), p["readout_b"])
    return ForwardResult(logits=logits, n_out=n_out, batch=bsz,
                         states=states, core_outputs=core_outputs)


def model_forward(instance, model: SequenceModel) -> T.Tensor:
    """Logits (L_out, K) for one task instance."""
    aux = instance.aux_inputs
    query = None if instance.query is None else np.array([instance.query])
    res = forward_batch(
        model, instance.inputs[None, :],
        aux_tokens=None if aux is None else aux[None, :],
        query_tokens=query,
        n_out=len(instance.targets),
    )
    k = model.config.vocab_size
    return T.reshape(res.logits, (res.n_out, k))


def flat_targets(targets: np.ndarray) -> np.ndarray:
    """Flatten (B, L_out) targets to match output-step-major logits rows."""
    return np.ascontiguousarray(np.asarray(targets).T).reshape(-1)


# ---------------------------------------------------------------------------
# checkpointing: manifest + one little-endian blob per parameter


_DTYPE_TAGS = {
    np.dtype(np.float64): "real64",
    np.dtype(np.float32): "real32",
    np.dtype(np.complex128): "complex128",
    np.dtype(np.complex64): "complex64",
}
_TAG_DTYPES = {v: np.dtype(k) for k, v in _DTYPE_TAGS.items()}


def save_params(model: SequenceModel, path: str):
    os.makedirs(path, exist_ok=True)
    lines = []
    for name, tensor in model.params.items():
        arr = tensor.values
        tag = _DTYPE_TAGS[arr.dtype]
        shape = ",".join(map(str, arr.shape)) or "-"
        lines.append(f"{name} {shape} {tag}")
        arr.astype(arr.dtype.newbyteorder("<")).tofile(
            os.path.join(path, f"{name}.bin"))
    with open(os.path.join(path, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    meta = asdict(model.config)
    meta["encoder_seed"] = model.encoder_seed
    with open(os.path.join(path, "config.json"), "w") as fh:
        json.dump(meta, fh, indent=1)


def load_params(path: str) -> SequenceModel:
    try:
        with open(os.path.join(path, "config.json")) as fh:
            meta = json.load(fh)
        with open(os.path.join(path, "manifest.txt")) as fh:
            manifest = [ln.split() for ln in fh if ln.strip()]
    except FileNotFoundError as exc:
        raise CorruptCheckpointError(f"missing checkpoint file: {exc}") from exc

    encoder_seed = meta.pop("encoder_seed", None)
    config = ModelConfig(**meta)
    rng = np.random.default_rng(0)
    model = init_params(config, rng)
    model.encoder_seed = encoder_seed
    if config.encoder_kind == "random-fixed":
        model.encoder = posenc.build_encoder(
            config.encoder_kind, config.d_pos, 2 * config.max_len, encoder_seed)

    expected = set(model.params)
    seen = set()
    for entry in manifest:
        if len(entry) != 3:
            raise CorruptCheckpointError(f"malformed manifest entry: {entry}")
        name, shape_s, tag = entry
        if name not in expected:
            raise CorruptCheckpointError(f"unexpected parameter {name!r}")
        shape = () if shape_s == "-" else tuple(int(s) for s in shape_s.split(","))
        if tag not in _TAG_DTYPES:
            raise CorruptCheckpointError(f"unknown dtype tag {tag!r}")
        dtype = _TAG_DTYPES[tag]
        target = model.params[name]
        if target.values.shape != shape:
            raise CorruptCheckpointError(
                f"shape mismatch for {name}: {shape} vs {target.values.shape}")
        blob = os.path.join(path, f"{name}.bin")
        data = np.fromfile(blob, dtype=dtype.newbyteorder("<"))
        if data.size != int(np.prod(shape, dtype=np.int64)):
            raise CorruptCheckpointError(f"blob size mismatch for {name!r}")
        target.values = data.astype(dtype).reshape(shape)
        seen.add(name)
    if seen != expected:
        raise CorruptCheckpointError(f"missing parameters: {sorted(expected - seen)}")
    if "pos_table" in model.params:
        model.encoder.table = model.params["pos_table"]
    return model
