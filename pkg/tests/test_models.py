"""Models: cell semantics, forward engine, initialization, checkpoints."""

import numpy as np
import pytest

from posrnn import models
from posrnn import tensor as T
from posrnn.errors import (
    ConfigError,
    CorruptCheckpointError,
    NumericsError,
    ShapeError,
    SingularityError,
    VocabError,
)


def tiny_config(core="gru", enc="none", **kw):
    defaults = dict(vocab_size=8, core=core, hidden=4, embed_dim=3,
                    state_size=3, encoder_kind=enc, d_pos=4, max_len=5)
    defaults.update(kw)
    return models.ModelConfig(**defaults)


def tiny_model(core="gru", enc="none", seed=0, **kw):
    return models.init_params(tiny_config(core, enc, **kw),
                              np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# cell semantics


def test_gru_zero_params_halves_state():
    d = 4
    p = {"w": T.Tensor(np.zeros((3, 3 * d))), "u": T.Tensor(np.zeros((d, 3 * d))),
         "b": T.Tensor(np.zeros(3 * d)), "b_h": T.Tensor(np.zeros(d))}
    h = np.array([[1.0, -2.0, 0.5, 4.0]])
    out = models.gru_step(T.Tensor(np.zeros((1, 3))), T.Tensor(h), p)
    assert np.allclose(out.values, 0.5 * h)


def test_lstm_zero_params_closed_form():
    d = 3
    p = {"w": T.Tensor(np.zeros((2, 4 * d))), "u": T.Tensor(np.zeros((d, 4 * d))),
         "b": T.Tensor(np.zeros(4 * d))}
    h = np.zeros((1, d))
    c = np.array([[1.0, -1.0, 2.0]])
    h2, c2 = models.lstm_step(T.Tensor(np.zeros((1, 2))), T.Tensor(h),
                              T.Tensor(c), p)
    assert np.allclose(c2.values, 0.5 * c)           # f = 0.5, i*g = 0
    assert np.allclose(h2.values, 0.5 * np.tanh(0.5 * c))


def test_cell_input_width_checked():
    m = tiny_model("gru")
    with pytest.raises(ShapeError):
        models.gru_step(T.Tensor(np.zeros((1, 99))),
                        T.Tensor(np.zeros((1, 4))), m.params)
    m2 = tiny_model("lstm")
    with pytest.raises(ShapeError):
        models.lstm_step(T.Tensor(np.zeros((1, 99))),
                         T.Tensor(np.zeros((1, 4))),
                         T.Tensor(np.zeros((1, 4))), m2.params)


def test_s4d_discretize_zoh():
    lam = np.array([[-0.5 + 1j, -1.0 + 0.5j]])
    delta = np.array([[0.05]])
    abar, bbar = models.s4d_discretize(T.Tensor(lam), T.Tensor(delta))
    assert np.allclose(abar.values, np.exp(delta * lam))
    assert np.allclose(bbar.values, (np.exp(delta * lam) - 1) / lam)
    with pytest.raises(SingularityError):
        models.s4d_discretize(T.Tensor(np.array([0j])), T.Tensor(np.array([0.1])))


def test_s4d_stable_spectrum_and_delta_range():
    m = tiny_model("s4d", hidden=8, state_size=4)
    lam_re = -np.exp(m["log_neg_re"].values)
    assert np.all(lam_re < 0)
    assert np.allclose(m["im_lambda"].values[0], np.pi * np.arange(4))
    delta = np.exp(m["log_delta"].values)
    assert np.all((delta >= 1e-3) & (delta <= 1e-1))


def test_s4d_step_rejects_nonfinite_state():
    m = tiny_model("s4d")
    bad = T.Tensor(np.full((1, 4, 3), np.nan, dtype=np.complex128))
    abar = T.Tensor(np.zeros((4, 3), dtype=np.complex128))
    with pytest.raises(NumericsError):
        models.s4d_step(T.Tensor(np.zeros((1, 4))), bad, abar, abar,
                        m["c"], m["d_skip"])


# ---------------------------------------------------------------------------
# configuration and initialization


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_config(core="rnn")
    with pytest.raises(ConfigError):
        tiny_config(vocab_size=1)
    with pytest.raises(ConfigError):
        tiny_config(enc="sinusoidal", d_pos=5)
    with pytest.raises(ConfigError):
        tiny_config(dtype="float16")


def test_input_dim_per_encoder():
    assert tiny_config(enc="none").input_dim == 3
    assert tiny_config(enc="sinusoidal").input_dim == 7
    assert tiny_config(enc="double-vanilla").input_dim == 6
    assert tiny_config(enc="learnable").input_dim == 7


def test_d_pos_defaults_to_embed_dim():
    cfg = models.ModelConfig(vocab_size=8, embed_dim=6)
    assert cfg.d_pos == 6


def test_init_deterministic_bitwise():
    a = tiny_model("lstm", "sinusoidal", seed=9)
    b = tiny_model("lstm", "sinusoidal", seed=9)
    for name in a.params:
        assert np.array_equal(a.params[name].values, b.params[name].values)


def test_shared_params_identical_across_encoder_kinds():
    a = tiny_model("lstm", "none", seed=4)
    b = tiny_model("lstm", "sinusoidal", seed=4)
    for name in ("embed", "query", "readout_w", "readout_b"):
        assert np.array_equal(a.params[name].values, b.params[name].values)


def test_float32_mode_dtypes():
    m = tiny_model("s4d", dtype="real32")
    assert m["embed"].dtype == np.float32
    assert m["c"].dtype == np.complex64
    res = models.forward_batch(m, np.zeros((2, 3), dtype=np.int64))
    assert res.logits.dtype == np.float32


# ---------------------------------------------------------------------------
# forward engine


def test_forward_shapes_default_reverse():
    for core in models.CORES:
        m = tiny_model(core, "sinusoidal")
        res = models.forward_batch(m, np.arange(6).reshape(2, 3))
        assert res.n_out == 3
        assert res.logits.shape == (6, 8)
        assert res.logits_array().shape == (2, 3, 8)
        assert res.predictions().shape == (2, 3)


def test_forward_vocab_error():
    m = tiny_model()
    with pytest.raises(VocabError):
        models.forward_batch(m, np.array([[1, 8]]))
    with pytest.raises(VocabError):
        models.forward_batch(m, np.array([[1, 2]]),
                             aux_tokens=np.array([[9, 1]]))


def test_forward_aux_and_query_modes():
    m = tiny_model()
    res = models.forward_batch(m, np.array([[1, 2, 3]]),
                               aux_tokens=np.array([[4, 5, 6]]))
    assert res.logits.shape == (3, 8)
    res = models.forward_batch(m, np.array([[1, 2, 3]]),
                               query_tokens=np.array([2]))
    assert res.n_out == 1 and res.logits.shape == (1, 8)


def test_output_phase_uses_query_vector():
    # with all-zero query the output-phase inputs differ from token inputs
    m = tiny_model()
    m.params["query"].values = np.zeros(3)
    res1 = models.forward_batch(m, np.array([[1, 2]]))
    m.params["query"].values = np.ones(3) * 5
    res2 = models.forward_batch(m, np.array([[1, 2]]))
    assert not np.allclose(res1.logits.values, res2.logits.values)


def test_collect_states_layout():
    m = tiny_model("lstm")
    res = models.forward_batch(m, np.array([[1, 2, 3]]), collect_states=True,
                               with_logits=False)
    assert res.logits is None
    assert len(res.states) == 6 and len(res.core_outputs) == 6
    h, c = res.states[0]
    assert h.shape == (1, 4) and c.shape == (1, 4)
    m2 = tiny_model("s4d")
    res2 = models.forward_batch(m2, np.array([[1, 2, 3]]), collect_states=True)
    assert res2.states[2].shape == (1, 4, 3)
    assert res2.states[2].is_complex


def test_model_forward_instance():
    from posrnn import tasks
    rng = np.random.default_rng(0)
    m = tiny_model("gru", "sinusoidal")
    inst = tasks.gen_predecessor_query(8, 4, rng)
    logits = models.model_forward(inst, m)
    assert logits.shape == (1, 8)
    inst2 = tasks.gen_delayed_addition(8, 3, rng)
    assert models.model_forward(inst2, m).shape == (3, 8)


def test_flat_targets_matches_logits_rows():
    m = tiny_model()
    inputs = np.array([[1, 2], [3, 4]])
    res = models.forward_batch(m, inputs)
    flat = models.flat_targets(inputs[:, ::-1])
    # row k of logits corresponds to output step k // B, sequence k % B
    arr = res.logits_array()
    for k in range(flat.size):
        step, seq = divmod(k, 2)
        assert np.allclose(res.logits.values[k], arr[seq, step])
    assert flat.tolist() == [2, 4, 1, 3]


def test_encoder_capacity_limits_sequence_length():
    from posrnn.errors import RangeError
    m = tiny_model("gru", "learnable", max_len=3)  # capacity 6 steps
    models.forward_batch(m, np.zeros((1, 3), dtype=int))
    with pytest.raises(RangeError):
        models.forward_batch(m, np.zeros((1, 4), dtype=int))


# ---------------------------------------------------------------------------
# checkpoints


@pytest.mark.parametrize("core,enc", [("gru", "none"), ("lstm", "learnable"),
                                      ("s4d", "random-fixed")])
def test_checkpoint_roundtrip_bitwise(tmp_path, core, enc):
    m = tiny_model(core, enc, seed=13)
    path = str(tmp_path / "ckpt")
    models.save_params(m, path)
    loaded = models.load_params(path)
    assert set(loaded.params) == set(m.params)
    for name in m.params:
        assert np.array_equal(loaded.params[name].values, m.params[name].values)
    if enc == "random-fixed":
        assert np.array_equal(loaded.encoder.table, m.encoder.table)
    inputs = np.array([[1, 2, 3]])
    assert np.array_equal(models.forward_batch(m, inputs).logits.values,
                          models.forward_batch(loaded, inputs).logits.values)


def test_checkpoint_corruption_detected(tmp_path):
    m = tiny_model("lstm")
    path = str(tmp_path / "ckpt")
    models.save_params(m, path)
    # truncated blob
    blob = tmp_path / "ckpt" / "w.bin"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(CorruptCheckpointError):
        models.load_params(path)


def test_checkpoint_missing_entry_detected(tmp_path):
    m = tiny_model("gru")
    path = str(tmp_path / "ckpt")
    models.save_params(m, path)
    manifest = tmp_path / "ckpt" / "manifest.txt"
    lines = manifest.read_text().strip().splitlines()
    manifest.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(CorruptCheckpointError):
        models.load_params(path)


def test_checkpoint_bad_manifest_entry(tmp_path):
    m = tiny_model("gru")
    path = str(tmp_path / "ckpt")
    models.save_params(m, path)
    manifest = tmp_path / "ckpt" / "manifest.txt"
    manifest.write_text(manifest.read_text() + "rogue 3,3 real64\n")
    with pytest.raises(CorruptCheckpointError):
        models.load_params(path)


def test_checkpoint_missing_directory(tmp_path):
    with pytest.raises(CorruptCheckpointError):
        models.load_params(str(tmp_path / "nope"))
