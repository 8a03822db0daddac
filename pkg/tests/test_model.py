import numpy as np
import pytest

from unimom import autodiff as ad
from unimom.autodiff import Tape, Tensor
from unimom.gradcheck import build_toy_batch
from unimom.data import synthesize_panel
from unimom.losses import SoftCapParams, total_loss
from unimom.model import (GRID_DOMAINS, MmoeConfig, init_model, load_model,
                          lstm_sequence, save_model, validate_grid_config)

RNG = np.random.default_rng(7)


def tiny_config(**overrides):
    base = dict(n_experts=2, lstm_layers=1, lstm_hidden=6, task_layers=2,
                task_hidden=5, sequence_length=4, seed=123)
    base.update(overrides)
    return MmoeConfig(**base)


def random_block(n_dates, n_assets, seq_len=4):
    return RNG.uniform(-2, 2, size=(n_dates * n_assets, seq_len, 7))


def test_init_deterministic_per_seed():
    a = init_model(tiny_config(), strict=False)
    b = init_model(tiny_config(), strict=False)
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)
    c = init_model(tiny_config(seed=124), strict=False)
    assert any(not np.array_equal(a.params[n].data, c.params[n].data)
               for n in a.params)


def test_parameter_shapes():
    model = init_model(tiny_config(n_experts=3), strict=False)
    for e in range(3):
        assert model.params[f"expert{e}.layer0.w_ih"].shape == (7, 24)
        assert model.params[f"expert{e}.layer0.w_hh"].shape == (6, 24)
    for task in ("fast", "medium", "slow"):
        assert model.params[f"gate.{task}.w"].shape == (7, 3)
    assert model.params["gate.alloc.w"].shape == (7, 3)
    assert model.params["alloc.layer0.w"].shape == (12, 5)
    assert model.params["alloc.out.w"].shape == (5, 3)


def test_forget_gate_bias_initialized_to_one():
    model = init_model(tiny_config(), strict=False)
    bias = model.params["expert0.layer0.bias"].data
    assert np.all(bias[6:12] == 1.0)
    assert np.all(bias[:6] == 0.0) and np.all(bias[12:] == 0.0)


def test_grid_domain_validation():
    validate_grid_config(MmoeConfig(n_experts=3, lstm_layers=1, lstm_hidden=64,
                                    task_layers=2, task_hidden=64))
    with pytest.raises(ValueError, match="lstm_hidden"):
        init_model(tiny_config(), strict=True)
    assert 64 in GRID_DOMAINS["lstm_hidden"]


def test_degenerate_single_expert_gate_is_identity():
    config = tiny_config(n_experts=1)
    model = init_model(config, strict=False)
    seq = random_block(1, 3, config.sequence_length)
    scores, _ = model.forward_group(seq, 1, 3)
    # with one expert the gate mixture must equal the expert state, so the
    # score is the head applied directly to the LSTM features
    state = model._lstm_features(0, seq)
    y = ad.tanh(model._head("head.fast", state, 1))
    assert np.allclose(scores["fast"].data.ravel(), y.data.ravel(), atol=1e-15)


def test_identical_assets_get_identical_scores():
    config = tiny_config()
    model = init_model(config, strict=False)
    one = RNG.uniform(-1, 1, size=(1, config.sequence_length, 7))
    seq = np.concatenate([one, one], axis=0)
    scores, _ = model.forward_group(seq, 1, 2)
    for task in scores:
        assert scores[task].data[0, 0] == scores[task].data[0, 1]


def test_permutation_equivariance():
    config = tiny_config()
    model = init_model(config, strict=False)
    n_assets = 5
    seq = random_block(2, n_assets, config.sequence_length)
    perm = RNG.permutation(n_assets)
    blocks = seq.reshape(2, n_assets, config.sequence_length, 7)
    seq_perm = blocks[:, perm].reshape(2 * n_assets, config.sequence_length, 7)
    scores, w = model.forward_group(seq, 2, n_assets)
    scores_p, w_p = model.forward_group(seq_perm, 2, n_assets)
    for task in scores:
        assert np.abs(scores[task].data[:, perm] - scores_p[task].data).max() < 1e-12
    assert np.abs(w.data - w_p.data).max() < 1e-12


def test_allocation_weights_on_simplex():
    config = tiny_config()
    model = init_model(config, strict=False)
    seq = random_block(6, 4, config.sequence_length)
    _, w = model.forward_group(seq, 6, 4)
    assert np.abs(w.data.sum(axis=1) - 1.0).max() < 1e-9
    assert (w.data > 1e-30).all()


def test_gate_outputs_interior():
    config = tiny_config()
    model = init_model(config, strict=False)
    feats = RNG.uniform(-5, 5, size=(40, 7))
    for task in ("fast", "medium", "slow"):
        alpha = ad.softmax(ad.add(ad.matmul(Tensor(feats),
                                            model.params[f"gate.{task}.w"]),
                                  model.params[f"gate.{task}.b"])).data
        assert (alpha > 1e-30).all()
        assert np.abs(alpha.sum(axis=1) - 1.0).max() < 1e-9


def test_zero_active_assets_rejected():
    model = init_model(tiny_config(), strict=False)
    with pytest.raises(ValueError, match="zero active assets"):
        model.forward_group(np.empty((0, 4, 7)), 0, 0)


def test_every_parameter_group_receives_gradient():
    panel = synthesize_panel(seed=41, n_assets=4, years=2)
    batch = build_toy_batch(panel, seq_len=6, batch_days=10)
    config = tiny_config(sequence_length=6)
    model = init_model(config, strict=False)
    with Tape() as tape:
        loss, _ = total_loss(model, batch, SoftCapParams())
    grads = tape.backward(loss, wrt=list(model.params.values()))
    by_name = dict(zip(model.params.keys(), grads))
    groups = ["expert0", "expert1", "gate.fast", "gate.medium", "gate.slow",
              "gate.alloc", "head.fast", "head.medium", "head.slow", "alloc"]
    for group in groups:
        norm = sum(float(np.abs(g).sum()) for n, g in by_name.items()
                   if n.startswith(group))
        assert norm > 0, f"no gradient reached {group}"


def test_multilayer_lstm_runs_and_differs():
    config1 = tiny_config(lstm_layers=1)
    config2 = tiny_config(lstm_layers=2)
    seq = random_block(1, 2, config1.sequence_length)
    s1, _ = init_model(config1, strict=False).forward_group(seq, 1, 2)
    s2, _ = init_model(config2, strict=False).forward_group(seq, 1, 2)
    assert not np.allclose(s1["fast"].data, s2["fast"].data)


def test_lstm_sequence_matches_step_by_step_reference():
    rng = np.random.default_rng(3)
    T, rows, nin, hid = 5, 3, 4, 6
    x = rng.uniform(-1, 1, (T, rows, nin))
    wi = rng.uniform(-0.5, 0.5, (nin, 4 * hid))
    wh = rng.uniform(-0.5, 0.5, (hid, 4 * hid))
    b = rng.uniform(-0.5, 0.5, 4 * hid)

    def sigmoid(v):
        return 1.0 / (1.0 + np.exp(-v))

    h = np.zeros((rows, hid))
    c = np.zeros((rows, hid))
    for t in range(T):
        z = x[t] @ wi + h @ wh + b
        i, f = sigmoid(z[:, :hid]), sigmoid(z[:, hid:2 * hid])
        g, o = np.tanh(z[:, 2 * hid:3 * hid]), sigmoid(z[:, 3 * hid:])
        c = f * c + i * g
        h = o * np.tanh(c)
    out = lstm_sequence(Tensor(x), Tensor(wi), Tensor(wh), Tensor(b))
    assert np.allclose(out.data[-1], h, atol=1e-14)


def test_checkpoint_round_trip(tmp_path):
    model = init_model(tiny_config(), strict=False)
    path = tmp_path / "model.npz"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.config == model.config
    for name in model.params:
        assert np.array_equal(loaded.params[name].data, model.params[name].data)


def test_predict_matches_forward():
    config = tiny_config()
    model = init_model(config, strict=False)
    seq = random_block(3, 4, config.sequence_length)
    scores, w = model.forward_group(seq, 3, 4)
    y, w2 = model.predict(seq, 3, 4)
    for task in scores:
        assert np.array_equal(scores[task].data, y[task])
    assert np.array_equal(w.data, w2)
