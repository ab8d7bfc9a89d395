import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_diff, rel_error
from pathpose.data import FrameRecord
from pathpose.errors import ConfigError, InputError
from pathpose.model import ModelConfig, ModelOutput, init_params
from pathpose.training import (
    LossBreakdown,
    TrainConfig,
    batch_loss,
    learning_rate,
    loss,
    loss_terms,
    train,
)

TINY = ModelConfig(
    n_classes=3, seq_len=4, encoder_layers=1, attention_heads=3,
    fc_dims=(8, 8, 8), class_dec_hidden=4, box_dec_hidden=4, seed=3,
)


def output_from(y_hat, boxes, z=(0.5, 0.0, 0.0)):
    y_hat = torch.tensor([y_hat], dtype=torch.float64)
    boxes = torch.tensor([boxes], dtype=torch.float64)
    return ModelOutput(torch.tensor([z], dtype=torch.float64), y_hat, boxes, boxes)


def target_from(rows):
    return torch.tensor(rows, dtype=torch.float64)


def test_perfect_reconstruction_hits_clamp_floor():
    rows = [[1, 0.5, 0.5, 0.2, 0.2], [0, 0, 0, 0, 0], [1, 0.1, 0.9, 0.05, 0.3]]
    out = output_from([1.0, 0.0, 1.0], [r[1:] for r in rows])
    lb = loss(out, torch.zeros(1, 2, dtype=torch.float64), target_from(rows))
    assert lb.box_term == 0 and lb.centering_term == 0
    assert lb.total <= 3 * 2.1e-7


def test_absent_classes_have_no_box_term():
    rows = [[0, 0, 0, 0, 0]] * 3
    out = output_from([0.2, 0.4, 0.1], [[0.9, 0.1, 0.3, 0.3]] * 3)
    assert loss(out, None, target_from(rows)).box_term == 0


def test_hand_computed_l1():
    rows = [[1, 0.5, 0.5, 0.2, 0.2]]
    out = output_from([0.7], [[0.6, 0.4, 0.2, 0.2]])
    # |0.5 - 0.6| + |0.5 - 0.4| + 0 + 0
    assert loss(out, None, target_from(rows)).box_term == pytest.approx(0.2, abs=1e-12)


def test_bce_term_by_hand():
    rows = [[1, 0.5, 0.5, 0.2, 0.2], [0, 0, 0, 0, 0]]
    out = output_from([0.8, 0.3], [[0.5, 0.5, 0.2, 0.2], [0.1, 0.1, 0.1, 0.1]])
    expected = -(math.log(0.8) + math.log(0.7))
    assert loss(out, None, target_from(rows)).bce_term == pytest.approx(expected, abs=1e-12)


def test_centering_term_is_absolute_sum():
    rows = [[0, 0, 0, 0, 0]]
    out = output_from([0.5], [[0.5, 0.5, 0.1, 0.1]])
    lb = loss(out, torch.tensor([[0.25, -0.5]], dtype=torch.float64), target_from(rows))
    assert lb.centering_term == pytest.approx(0.75, abs=1e-15)


def test_non_binary_presence_rejected():
    out = output_from([0.5], [[0.5, 0.5, 0.1, 0.1]])
    with pytest.raises(InputError):
        loss(out, None, target_from([[0.5, 0.5, 0.5, 0.1, 0.1]]))


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_breakdown_additive_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    n = 4
    present = rng.random(n) < 0.5
    rows = np.zeros((n, 5))
    rows[:, 0] = present
    rows[:, 1:] = rng.random((n, 4)) * present[:, None]
    out = output_from(rng.random(n).tolist(), rng.uniform(-0.2, 1.2, (n, 4)).tolist())
    lb = loss(out, torch.from_numpy(rng.uniform(-1, 1, (1, 2))), torch.from_numpy(rows))
    assert min(lb) >= 0
    assert lb.total == pytest.approx(lb.bce_term + lb.box_term + lb.centering_term, abs=1e-12)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_masking_ignores_absent_predictions(seed):
    rng = np.random.default_rng(seed)
    rows = np.array([[1, 0.3, 0.4, 0.1, 0.2], [0, 0, 0, 0, 0], [1, 0.6, 0.6, 0.3, 0.3]])
    boxes = rng.random((3, 4))
    a = loss(output_from([0.5] * 3, boxes.tolist()), None, torch.from_numpy(rows))
    boxes[1] = rng.uniform(-5, 5, 4)
    b = loss(output_from([0.5] * 3, boxes.tolist()), None, torch.from_numpy(rows))
    assert a.box_term == b.box_term


def test_warmup_three_points():
    cfg = TrainConfig(lr_peak=1e-4, warmup_epochs=60, epochs=2500)
    assert learning_rate(0, cfg) == 0.0
    assert learning_rate(30, cfg) == 5e-5
    assert learning_rate(60, cfg) == 1e-4
    assert learning_rate(2000, cfg) == 1e-4


def test_warmup_is_linear():
    cfg = TrainConfig(lr_peak=2e-3, warmup_epochs=8, epochs=20)
    lrs = [learning_rate(e, cfg) for e in range(9)]
    np.testing.assert_allclose(np.diff(lrs), 2e-3 / 8, rtol=1e-12)


def test_adamw_without_moments_is_normalized_descent():
    g = torch.tensor([0.5, -2.0, 1e-3], dtype=torch.float64)
    w0 = torch.tensor([1.0, 2.0, -3.0], dtype=torch.float64)
    w = torch.nn.Parameter(w0.clone())
    opt = torch.optim.AdamW([w], lr=0.1, betas=(0.0, 0.0), eps=1e-8, weight_decay=0.0)
    for _ in range(3):
        w.grad = g.clone()
        opt.step()
    expected = w0 - 3 * 0.1 * g / (g.abs() + 1e-8)
    torch.testing.assert_close(w.detach(), expected, rtol=0, atol=1e-12)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(warmup_epochs=10, epochs=5)
    with pytest.raises(ConfigError):
        TrainConfig(lr_peak=0)


def random_targets(rng, batch, cfg):
    seq = np.zeros((batch, cfg.seq_len, cfg.n_classes, 5))
    present = rng.random((batch, cfg.seq_len, cfg.n_classes)) < 0.6
    seq[..., 0] = present
    seq[..., 1:] = rng.uniform(0.05, 0.95, (batch, cfg.seq_len, cfg.n_classes, 4)) * present[..., None]
    return torch.from_numpy(seq)


def test_center_reencode_of_zero_encoder():
    model = init_params(TINY)
    with torch.no_grad():
        for p in model.reduce.parameters():
            p.zero_()
        z = model.center_reencode(torch.ones(2, 3, dtype=torch.float64), torch.rand(2, 3, 4, dtype=torch.float64))
    assert torch.all(z == 0)


def test_center_reencode_range_and_absent_zeroing(rng):
    model = init_params(TINY)
    y = torch.tensor([[1.0, 0.0, 1.0]], dtype=torch.float64)
    b = torch.rand(1, 3, 4, dtype=torch.float64)
    b2 = b.clone()
    b2[0, 1] = torch.rand(4, dtype=torch.float64)
    with torch.no_grad():
        z = model.center_reencode(y, b)
        assert torch.equal(z, model.center_reencode(y, b2))
    assert z.shape == (1, 2) and torch.all(z.abs() < 1)


def flat_params(model):
    return torch.nn.utils.parameters_to_vector(model.parameters()).detach().numpy().copy()


def set_params(model, vec):
    torch.nn.utils.vector_to_parameters(torch.from_numpy(vec), model.parameters())


def test_center_reencode_gradient_matches_finite_differences(rng):
    model = init_params(TINY)
    with torch.no_grad():
        model.reduce[-1].bias[1:] = torch.tensor([0.2, -0.3], dtype=torch.float64)
    y = torch.tensor([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]], dtype=torch.float64)
    b = torch.rand(2, 3, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(0))

    def penalty():
        return model.center_reencode(y, b).abs().sum()

    model.zero_grad()
    penalty().backward()
    analytic = torch.cat([
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        for p in model.parameters()
    ]).numpy()
    x0 = flat_params(model)

    def f(x):
        set_params(model, x)
        with torch.no_grad():
            return float(penalty())

    fd = central_diff(f, x0, 1e-5)
    set_params(model, x0)
    floor = 1e-6 * np.abs(analytic).max()
    assert rel_error(analytic, fd, floor).max() < 1e-4


def tiny_records(rng, n_frames=30, video="v"):
    seq = random_targets(rng, 1, ModelConfig(**{**TINY.to_dict(), "seq_len": n_frames}))[0].numpy()
    return [FrameRecord(video, i, seq[i]) for i in range(n_frames)]


def test_train_is_deterministic(rng):
    records = tiny_records(rng)
    cfg = TrainConfig(lr_peak=1e-3, warmup_epochs=2, epochs=4, batch_size=8, seed=5)
    m1, h1 = train(records, TINY, cfg)
    m2, h2 = train(records, TINY, cfg)
    assert h1 == h2
    assert all(torch.equal(a, b) for a, b in zip(m1.parameters(), m2.parameters()))
    assert all(isinstance(h, LossBreakdown) for h in h1)


def test_train_first_epoch_has_zero_lr(rng):
    records = tiny_records(rng)
    init = init_params(TINY)
    before = flat_params(init)
    cfg = TrainConfig(lr_peak=1e-3, warmup_epochs=1, epochs=1, batch_size=8, seed=5)
    model, _ = train(records, TINY, cfg, init_model=init)
    np.testing.assert_array_equal(flat_params(model), before)


def test_train_reduces_loss(rng):
    records = tiny_records(rng, 40)
    cfg = TrainConfig(lr_peak=3e-3, warmup_epochs=1, epochs=40, batch_size=16, seed=0)
    _, hist = train(records, TINY, cfg)
    assert hist[-1].total < hist[1].total


def test_train_writes_run_directory(tmp_path, rng):
    records = tiny_records(rng)
    cfg = TrainConfig(lr_peak=1e-3, warmup_epochs=1, epochs=3, batch_size=8, checkpoint_every=2)
    train(records, TINY, cfg, run_dir=tmp_path)
    assert (tmp_path / "model.json").exists() and (tmp_path / "model.bin").exists()
    assert (tmp_path / "checkpoints" / "epoch_00002.json").exists()
    lines = (tmp_path / "history.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["epoch", "lr", "total", "bce_term", "box_term", "centering_term"]
    assert len(lines) == 4


def test_train_input_errors(rng):
    cfg = TrainConfig(epochs=1, warmup_epochs=0)
    with pytest.raises(InputError):
        train([], TINY, cfg)
    with pytest.raises(InputError):
        train(tiny_records(rng, 3), TINY, cfg)
    with pytest.raises(ConfigError):
        train(tiny_records(rng), ModelConfig(**{**TINY.to_dict(), "n_classes": 6}), cfg)


def test_ablation_training_has_no_centering_term(rng):
    records = tiny_records(rng)
    cfg = TrainConfig(lr_peak=1e-3, warmup_epochs=1, epochs=2, batch_size=8)
    _, hist = train(records, ModelConfig(**{**TINY.to_dict(), "rotation_enabled": False}), cfg)
    assert all(h.centering_term == 0 for h in hist)


def test_batch_loss_is_mean_of_samples(rng):
    model = init_params(TINY)
    seq = random_targets(rng, 4, TINY)
    total, _ = batch_loss(model, seq, seq[:, -1])
    per = [float(batch_loss(model, seq[i : i + 1], seq[i : i + 1, -1])[0].detach()) for i in range(4)]
    assert float(total.detach()) == pytest.approx(np.mean(per), rel=1e-12)


def test_full_loss_gradient_matches_finite_differences(rng):
    model = init_params(TINY)
    gen = torch.Generator().manual_seed(7)
    with torch.no_grad():
        # nonzero biases move ReLU pre-activations off their kinks
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.copy_(0.1 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    seq = random_targets(rng, 3, TINY)
    target = seq[:, -1]
    model.zero_grad()
    batch_loss(model, seq, target)[0].backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in model.parameters()]).numpy()
    x0 = flat_params(model)

    def f(x):
        set_params(model, x)
        with torch.no_grad():
            return float(batch_loss(model, seq, target)[0])

    fd = central_diff(f, x0, 1e-5)
    set_params(model, x0)
    floor = 1e-6 * np.abs(analytic).max()
    assert rel_error(analytic, fd, floor).max() < 1e-4
