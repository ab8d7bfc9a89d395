import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from pathpose.errors import ConfigError, InputError
from pathpose.model import (
    ModelConfig,
    PoseAutoencoder,
    encode_batched,
    expected_parameter_count,
    init_params,
    parameter_count,
)

TINY = ModelConfig(
    n_classes=3, seq_len=4, encoder_layers=1, attention_heads=3,
    fc_dims=(8, 8, 8), class_dec_hidden=4, box_dec_hidden=4, seed=3,
)


def random_sequences(rng, batch, cfg):
    seq = np.zeros((batch, cfg.seq_len, cfg.n_classes, 5))
    present = rng.random((batch, cfg.seq_len, cfg.n_classes)) < 0.6
    seq[..., 0] = present
    seq[..., 1:] = rng.uniform(0.05, 0.95, (batch, cfg.seq_len, cfg.n_classes, 4)) * present[..., None]
    return torch.from_numpy(seq)


@pytest.fixture(scope="module")
def tiny():
    return init_params(TINY)


def test_init_is_deterministic():
    a, b = init_params(TINY).state_dict(), init_params(TINY).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    c = init_params(ModelConfig(**{**TINY.to_dict(), "seed": 4})).state_dict()
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_init_biases_zero_and_weights_bounded(tiny):
    for name, p in tiny.named_parameters():
        assert torch.isfinite(p).all()
        if name.endswith("bias") and "norm" not in name:
            assert torch.all(p == 0)
        if name.endswith("weight") and "norm" not in name:
            assert p.abs().max() <= 1 / np.sqrt(p.shape[1])


def test_parameter_count_hand_computed():
    assert parameter_count(init_params(TINY)) == 3645
    assert expected_parameter_count(TINY) == 3645
    full = ModelConfig(n_classes=15, seq_len=64)
    assert expected_parameter_count(full) == 3_035_768


def test_full_size_parameter_count():
    full = ModelConfig(n_classes=15, seq_len=64)
    count = parameter_count(init_params(full))
    assert count == expected_parameter_count(full)
    assert 4.6e6 / 2 <= count <= 4.6e6 * 2


def test_heads_must_divide_token_dim():
    with pytest.raises(ConfigError):
        ModelConfig(n_classes=15, attention_heads=7)


def test_input_embedding_pads_to_head_multiple():
    cfg = ModelConfig(n_classes=3, seq_len=4, attention_heads=4, encoder_layers=1,
                      fc_dims=(8,), input_embedding=True)
    assert cfg.token_dim == 16
    model = init_params(cfg)
    assert model.embed.weight.shape == (16, 15)
    assert parameter_count(model) == expected_parameter_count(cfg)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_latent_ranges(seed):
    model = init_params(TINY)
    with torch.no_grad():
        # scale the final layer so activations get close to saturation
        model.reduce[-1].weight.mul_(50)
        z = model.encode(random_sequences(np.random.default_rng(seed), 4, TINY))
    assert torch.all((z[:, 0] >= 0) & (z[:, 0] <= 1))
    assert torch.all(z[:, 1:].abs() <= 1)


def test_encode_deterministic_and_degenerate_input(tiny, rng):
    seq = random_sequences(rng, 2, TINY)
    with torch.no_grad():
        assert torch.equal(tiny.encode(seq), tiny.encode(seq.clone()))
        z0 = tiny.encode(torch.zeros(1, 4, 3, 5, dtype=torch.float64))
    assert torch.isfinite(z0).all()


def test_encode_rejects_bad_input(tiny):
    bad = torch.zeros(1, 4, 3, 5, dtype=torch.float64)
    bad[0, 0, 0, 1] = float("nan")
    with pytest.raises(InputError):
        tiny.encode(bad)
    with pytest.raises(InputError):
        tiny.encode(torch.zeros(1, 5, 3, 5))


def test_encode_depends_on_frame_order(tiny, rng):
    seq = random_sequences(rng, 1, TINY)
    with torch.no_grad():
        assert not torch.equal(tiny.encode(seq), tiny.encode(seq.flip(1)))


@pytest.mark.parametrize("z1", [0.0, 0.37, 1.0])
def test_decode_ranges_and_determinism(tiny, z1):
    with torch.no_grad():
        y, b = tiny.decode(z1)
        y2, b2 = tiny.decode(z1)
    assert y.shape == (1, 3) and b.shape == (1, 3, 4)
    assert torch.all((y >= 0) & (y <= 1)) and torch.all((b >= 0) & (b <= 1))
    assert torch.equal(y, y2) and torch.equal(b, b2)


def test_forward_keeps_box_sizes(tiny, rng):
    with torch.no_grad():
        tiny.reduce[-1].bias[1:] = torch.tensor([0.3, -0.2], dtype=torch.float64)
        out = tiny(random_sequences(rng, 3, TINY))
        tiny.reduce[-1].bias.zero_()
    assert torch.equal(out.b_rotated[..., 2:], out.b_centered[..., 2:])
    assert not torch.equal(out.b_rotated[..., :2], out.b_centered[..., :2])


def test_forward_zero_angles_is_identity(tiny, rng):
    with torch.no_grad():
        w = tiny.reduce[-1].weight.clone()
        tiny.reduce[-1].weight[1:] = 0
        out = tiny(random_sequences(rng, 3, TINY))
        tiny.reduce[-1].weight.copy_(w)
    assert torch.all(out.z[:, 1:] == 0)
    assert torch.equal(out.b_rotated, out.b_centered)


def test_ablation_ignores_angle_units(rng):
    cfg = ModelConfig(**{**TINY.to_dict(), "rotation_enabled": False})
    model = init_params(cfg)
    seq = random_sequences(rng, 3, cfg)
    with torch.no_grad():
        a = model(seq)
        model.reduce[-1].weight[1:].normal_()
        model.reduce[-1].bias[1:] = 5.0
        b = model(seq)
    assert torch.all(a.z[:, 1:] == 0)
    assert torch.equal(a.b_rotated, a.b_centered)
    for x, y in zip(a, b):
        assert torch.equal(x, y)


def test_float32_switch(rng):
    cfg = ModelConfig(**{**TINY.to_dict(), "dtype": "float32"})
    model = init_params(cfg)
    assert all(p.dtype == torch.float32 for p in model.parameters())
    z = encode_batched(model, random_sequences(rng, 5, cfg).float())
    assert z.shape == (5, 3) and z.dtype == np.float64
