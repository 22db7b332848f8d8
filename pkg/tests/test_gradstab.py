"""Gradient-stability probe: pairs, Jacobians vs finite differences, algebra."""

import numpy as np
import pytest

from posrnn import gradstab, models, tasks
from posrnn import tensor as T
from posrnn.errors import ConfigError, RangeError


def tiny_model(core, seed=0, hidden=4, state_size=2, vocab=8):
    cfg = models.ModelConfig(vocab_size=vocab, core=core, hidden=hidden,
                             embed_dim=3, state_size=state_size,
                             encoder_kind="sinusoidal", d_pos=4, max_len=4)
    return models.init_params(cfg, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# probe pairs


def test_probe_pairs_rnn_mode():
    spec = tasks.DualFreqSpec(16)
    rng = np.random.default_rng(0)
    pairs = gradstab.build_probe_pairs(spec, ("frequent", "rare"), 1, 50, rng,
                                       length=12)
    for p in pairs:
        assert p.sequence_a[0] == p.sequence_b[0]
        assert p.sequence_a[0] < 8                       # frequent target
        assert np.all(p.sequence_a[1:] >= 8)             # rare disturbants
        assert np.all(p.sequence_b[1:] >= 8)
    diffs = sum(np.any(p.sequence_a[1:] != p.sequence_b[1:]) for p in pairs)
    assert diffs > 40  # independent draws differ almost surely


def test_probe_pairs_shared_prefix_mode():
    spec = tasks.DualFreqSpec(16)
    rng = np.random.default_rng(1)
    pairs = gradstab.build_probe_pairs(spec, ("rare", "frequent"), 5, 30, rng,
                                       length=12, shared_prefix=True)
    for p in pairs:
        assert np.array_equal(p.sequence_a[:5], p.sequence_b[:5])
        assert p.sequence_a[4] >= 8                      # rare target at t=5
        others = np.concatenate([p.sequence_a[5:], p.sequence_b[5:],
                                 p.sequence_a[:4]])
        assert np.all(others < 8)


def test_probe_pairs_position_validated():
    spec = tasks.DualFreqSpec(8)
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        gradstab.build_probe_pairs(spec, ("frequent", "rare"), 0, 1, rng)
    with pytest.raises(ConfigError):
        gradstab.build_probe_pairs(spec, ("frequent", "rare"), 65, 1, rng,
                                   length=64)


# ---------------------------------------------------------------------------
# state Jacobians vs finite differences


def rollout_output(model, seq, t_from, t_to, z_values):
    """Final core output at t_to after forcing the post-step-t_from state."""
    cfg = model.config
    p = model.params
    bsz = 1
    d = cfg.hidden
    if cfg.core == "s4d":
        lam = T.make_complex(T.scale(T.exp(p["log_neg_re"]), -1.0),
                             p["im_lambda"])
        delta = T.reshape(T.exp(p["log_delta"]), (d, 1))
        abar, bbar = models.s4d_discretize(lam, delta)
        state = T.Tensor(np.zeros((bsz, d, cfg.state_size), dtype=np.complex128))
    else:
        h = T.Tensor(np.zeros((bsz, d)))
        c = T.Tensor(np.zeros((bsz, d)))
    l_in = len(seq)
    out = None
    for step in range(t_to):
        if step < l_in:
            base = T.Tensor(p["embed"].values[seq[step]][None, :])
        else:
            base = T.Tensor(p["query"].values[None, :])
        x = model.encoder.assemble_input(base, step + 1)
        if cfg.core == "gru":
            h = models.gru_step(x, h, p)
            out = h
        elif cfg.core == "lstm":
            h, c = models.lstm_step(x, h, c, p)
            out = h
        else:
            u = T.matmul(x, p["in_proj"])
            y_raw, state = models.s4d_step(u, state, abar, bbar, p["c"],
                                           p["d_skip"])
            out = models.s4d_output(y_raw, p)
        if step + 1 == t_from:
            if cfg.core == "gru":
                h = T.Tensor(z_values[0].copy())
            elif cfg.core == "lstm":
                # a cell-state perturbation propagates through the output
                # gate within the same step: h = o . tanh(c)
                o = h.values / np.tanh(c.values)
                h_new = z_values[0] + o * (np.tanh(z_values[1])
                                           - np.tanh(c.values))
                h = T.Tensor(h_new)
                c = T.Tensor(z_values[1].copy())
            else:
                state = T.Tensor(z_values[0].copy())
    return out.values[0].copy()


def fd_state_jacobian(model, seq, t_from, t_to, step_size=1e-5):
    cfg = model.config
    res = models.forward_batch(model, np.asarray(seq)[None, :],
                               n_out=t_to - len(seq), collect_states=True,
                               with_logits=False)
    zs = res.states[t_from - 1]
    parts = [z.values.copy() for z in (zs if isinstance(zs, tuple) else (zs,))]
    cols = []
    for pi, part in enumerate(parts):
        flat = part.reshape(-1)
        units = (1.0, 1j) if np.iscomplexobj(part) else (1.0,)
        for i in range(flat.size):
            for unit in units:
                orig = flat[i]
                flat[i] = orig + unit * step_size
                fp = rollout_output(model, seq, t_from, t_to, parts)
                flat[i] = orig - unit * step_size
                fm = rollout_output(model, seq, t_from, t_to, parts)
                flat[i] = orig
                cols.append((fp - fm) / (2 * step_size))
    return np.stack(cols, axis=1)


@pytest.mark.parametrize("core", ["gru", "lstm", "s4d"])
def test_state_jacobian_matches_finite_differences(core):
    model = tiny_model(core, hidden=4 if core != "s4d" else 3, state_size=2)
    rng = np.random.default_rng(7)
    seq = rng.integers(0, 8, size=3)
    jac = gradstab.state_jacobian(model, seq, t_from=1, t_to=6)
    fd = fd_state_jacobian(model, seq, 1, 6)
    assert jac.shape == fd.shape
    assert np.max(np.abs(jac - fd)) < 1e-6


def test_state_jacobian_lstm_column_count():
    model = tiny_model("lstm", hidden=5)
    jac = gradstab.state_jacobian(model, np.array([1, 2, 3]), 1, 6)
    assert jac.shape == (5, 10)


def test_state_jacobian_s4d_column_count():
    model = tiny_model("s4d", hidden=3, state_size=2)
    jac = gradstab.state_jacobian(model, np.array([1, 2]), 1, 4)
    assert jac.shape == (3, 2 * 3 * 2)


def test_state_jacobian_interior_start():
    model = tiny_model("gru")
    seq = np.array([1, 2, 3])
    jac = gradstab.state_jacobian(model, seq, t_from=2, t_to=6)
    fd = fd_state_jacobian(model, seq, 2, 6)
    assert np.max(np.abs(jac - fd)) < 1e-6


def test_state_jacobian_range_checked():
    model = tiny_model("gru")
    seq = np.array([1, 2, 3])
    with pytest.raises(RangeError):
        gradstab.state_jacobian(model, seq, 0, 6)
    with pytest.raises(RangeError):
        gradstab.state_jacobian(model, seq, 3, 3)
    with pytest.raises(RangeError):
        gradstab.state_jacobian(model, seq, 1, 7)


def test_batched_jacobians_match_single():
    model = tiny_model("lstm")
    rng = np.random.default_rng(3)
    seqs = rng.integers(0, 8, size=(4, 3))
    batched = gradstab.state_jacobians(model, seqs, 1, 6)
    for i in range(4):
        single = gradstab.state_jacobian(model, seqs[i], 1, 6)
        assert np.allclose(batched[i], single, atol=1e-12)


# ---------------------------------------------------------------------------
# similarity algebra


def test_frobenius_self_similarity_is_one():
    rng = np.random.default_rng(0)
    j = rng.standard_normal((6, 9))
    assert abs(gradstab.stability(j, j, "frobenius-cosine") - 1.0) < 1e-9


def test_frobenius_bounded():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, b = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
        assert abs(gradstab.stability(a, b, "frobenius-cosine")) <= 1 + 1e-12


def test_literal_equal_row_norm_self_similarity():
    # identical Jacobians whose D rows all have norm c score c^2 / D
    rng = np.random.default_rng(2)
    for d, c in ((4, 1.0), (6, 2.5), (3, 0.1)):
        j = rng.standard_normal((d, 7))
        j = j / np.linalg.norm(j, axis=1, keepdims=True) * c
        assert abs(gradstab.stability(j, j, "literal") - c * c / d) < 1e-9


def test_orthogonal_rows_score_zero():
    a = np.zeros((2, 4))
    b = np.zeros((2, 4))
    a[0, 0] = a[1, 1] = 1.0
    b[0, 2] = b[1, 3] = 1.0
    assert gradstab.stability(a, b, "literal") == pytest.approx(0.0)
    assert gradstab.stability(a, b, "frobenius-cosine") == pytest.approx(0.0)


def test_literal_row_permutation_invariance():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((5, 6)), rng.standard_normal((5, 6))
    perm = rng.permutation(5)
    s1 = gradstab.stability(a, b, "literal")
    s2 = gradstab.stability(a[perm], b[perm], "literal")
    assert abs(s1 - s2) < 1e-12


def test_literal_homogeneity_in_each_argument():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
    s = gradstab.stability(a, b, "literal")
    assert gradstab.stability(a, 3.0 * b, "literal") == pytest.approx(3 * s)
    assert gradstab.stability(2.0 * a, b, "literal") == pytest.approx(2 * s)


def test_zero_jacobians_nan_sentinel():
    z = np.zeros((3, 4))
    assert np.isnan(gradstab.stability(z, z, "literal"))
    assert np.isnan(gradstab.stability(z, z, "frobenius-cosine"))
    # one-sided zero in literal mode scores 0 (alpha = 0 rows)
    j = np.ones((3, 4))
    assert gradstab.stability(z, j, "literal") == pytest.approx(0.0)


def test_stability_validation():
    with pytest.raises(ConfigError):
        gradstab.stability(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ConfigError):
        gradstab.stability(np.zeros((2, 2)), np.zeros((2, 2)), "cosine")


# ---------------------------------------------------------------------------
# sweep


def test_sweep_structure_and_constant_series(tmp_path):
    model = tiny_model("gru")
    spec = tasks.DualFreqSpec(8)
    checkpoints = [(0, model), (100, model)]
    report = gradstab.stability_sweep(
        checkpoints, spec, n_pairs=6, mode="literal", t_target=1, length=4,
        chunk=4)
    assert len(report.rows) == 2 * 4  # checkpoints x conditions
    by_cond = {}
    for row in report.rows:
        by_cond.setdefault(row.condition, []).append(row.mean_similarity)
        assert row.n_pairs == 6
    for vals in by_cond.values():
        assert vals[0] == pytest.approx(vals[1])  # identical model -> constant


def test_sweep_multiple_modes_share_pairs():
    model = tiny_model("lstm")
    spec = tasks.DualFreqSpec(8)
    report = gradstab.stability_sweep(
        [(0, model)], spec, n_pairs=4, mode=("literal", "frobenius-cosine"),
        t_target=1, length=4, chunk=4,
        conditions=(("frequent", "frequent"),))
    modes = {r.mode for r in report.rows}
    assert modes == {"literal", "frobenius-cosine"}
    assert len(report.rows) == 2


def test_sweep_skips_corrupt_checkpoint(tmp_path):
    model = tiny_model("gru")
    good = str(tmp_path / "it5")
    models.save_params(model, good)
    bad = str(tmp_path / "it9")
    models.save_params(model, bad)
    (tmp_path / "it9" / "manifest.txt").write_text("w 1,1 real64\n")
    spec = tasks.DualFreqSpec(8)
    report = gradstab.stability_sweep(
        [(5, good), (9, bad)], spec, n_pairs=2, t_target=1, length=4, chunk=2,
        conditions=(("rare", "rare"),))
    assert len(report.rows) == 1
    assert len(report.warnings) == 1 and "it9" in report.warnings[0]


def test_report_csv_columns(tmp_path):
    row = gradstab.StabilityRow(iteration=5, condition=("rare", "frequent"),
                                mode="literal", mean_similarity=0.25,
                                n_pairs=8, n_degenerate=1)
    report = gradstab.StabilityReport(rows=[row])
    path = tmp_path / "stab.csv"
    report.to_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,condition,mode,mean_similarity,n_pairs,n_degenerate"
    assert lines[1] == "5,rare/frequent,literal,0.25,8,1"
