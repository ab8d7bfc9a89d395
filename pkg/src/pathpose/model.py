"""Rotation-constrained sequence autoencoder.

Input sequences are tensors of shape ``(batch, s, n, 5)`` whose last axis holds
``(presence, cx, cy, w, h)`` per class. The encoder is a pre-norm transformer
over the ``s`` frames followed by a fully connected reduction of the flattened
token outputs to three units: ``z1 = sigmoid`` (path position) and
``z2, z3 = tanh`` (pitch, yaw; ``±1`` means ``±90°``). Two small decoders map
``z1`` to class probabilities and to centered-view boxes; the rotation head
turns the centered boxes into the observed view.
"""

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
from torch import nn

from . import geometry
from .errors import ConfigError, InputError

DTYPES = {"float64": torch.float64, "float32": torch.float32}


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int = 15
    seq_len: int = 64
    encoder_layers: int = 6
    attention_heads: int = 5
    fc_dims: tuple = (512, 256, 128)
    class_dec_hidden: int = 8
    box_dec_hidden: int = 32
    ff_mult: int = 4
    input_embedding: bool = False
    rotation_enabled: bool = True
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fc_dims", tuple(int(d) for d in self.fc_dims))
        for name in ("n_classes", "seq_len", "encoder_layers", "attention_heads",
                     "class_dec_hidden", "box_dec_hidden", "ff_mult"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.fc_dims or min(self.fc_dims) < 1:
            raise ConfigError("fc_dims must be a non-empty list of positive sizes")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")
        if self.token_dim % self.attention_heads:
            raise ConfigError(
                f"attention_heads={self.attention_heads} does not divide "
                f"token dim {self.token_dim}"
            )

    @property
    def input_dim(self):
        return self.n_classes * 5

    @property
    def needs_embedding(self):
        return self.input_embedding

    @property
    def token_dim(self):
        if not self.input_embedding:
            return self.input_dim
        # learned projection up to the nearest multiple of the head count
        h = self.attention_heads
        return -(-self.input_dim // h) * h

    def to_dict(self):
        d = asdict(self)
        d["fc_dims"] = list(self.fc_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


class LatentCode(NamedTuple):
    z1: float
    z2: float
    z3: float


class ModelOutput(NamedTuple):
    z: torch.Tensor  # (B, 3)
    y_hat: torch.Tensor  # (B, n)
    b_centered: torch.Tensor  # (B, n, 4)
    b_rotated: torch.Tensor  # (B, n, 4)


def sinusoidal_encoding(s, d, dtype=torch.float64):
    pos = torch.arange(s, dtype=dtype).unsqueeze(1)
    i = torch.arange(0, d, 2, dtype=dtype)
    freq = torch.exp(-math.log(10000.0) * i / d)
    pe = torch.zeros(s, d, dtype=dtype)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq)[:, : d // 2]
    return pe


class Linear(nn.Module):
    def __init__(self, d_in, d_out):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_out, d_in))
        self.bias = nn.Parameter(torch.empty(d_out))

    def forward(self, x):
        return x @ self.weight.T + self.bias


class LayerNorm(nn.Module):
    def __init__(self, d, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))

    def forward(self, x):
        mu = x.mean(-1, keepdim=True)
        var = ((x - mu) ** 2).mean(-1, keepdim=True)
        return (x - mu) / torch.sqrt(var + self.eps) * self.weight + self.bias


class SelfAttention(nn.Module):
    def __init__(self, d, heads):
        super().__init__()
        self.heads = heads
        self.q = Linear(d, d)
        self.k = Linear(d, d)
        self.v = Linear(d, d)
        self.out = Linear(d, d)

    def forward(self, x):
        B, s, d = x.shape
        h, dh = self.heads, d // self.heads

        def split(t):
            return t.reshape(B, s, h, dh).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, s, d)
        return self.out(y)


class EncoderBlock(nn.Module):
    def __init__(self, d, heads, ff_mult):
        super().__init__()
        self.norm1 = LayerNorm(d)
        self.attn = SelfAttention(d, heads)
        self.norm2 = LayerNorm(d)
        self.ff1 = Linear(d, ff_mult * d)
        self.ff2 = Linear(ff_mult * d, d)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.ff2(torch.relu(self.ff1(self.norm2(x))))


class PoseAutoencoder(nn.Module):
    """Encoder, class/box decoders and rotation head in one module."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.token_dim
        self.embed = Linear(cfg.input_dim, d) if cfg.needs_embedding else None
        self.register_buffer(
            "pos_enc", sinusoidal_encoding(cfg.seq_len, d), persistent=False
        )
        self.blocks = nn.ModuleList(
            EncoderBlock(d, cfg.attention_heads, cfg.ff_mult)
            for _ in range(cfg.encoder_layers)
        )
        dims = (cfg.seq_len * d, *cfg.fc_dims, 3)
        self.reduce = nn.ModuleList(Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.class_dec = nn.ModuleList(
            [Linear(1, cfg.class_dec_hidden), Linear(cfg.class_dec_hidden, cfg.n_classes)]
        )
        self.box_dec = nn.ModuleList(
            [Linear(1, cfg.box_dec_hidden), Linear(cfg.box_dec_hidden, 4 * cfg.n_classes)]
        )
        self.to(DTYPES[cfg.dtype])
        self.reset_parameters()

    @torch.no_grad()
    def reset_parameters(self):
        gen = torch.Generator().manual_seed(self.cfg.seed)
        for module in self.modules():
            if isinstance(module, Linear):
                bound = 1.0 / math.sqrt(module.weight.shape[1])
                w = torch.rand(module.weight.shape, generator=gen, dtype=torch.float64)
                module.weight.copy_((2 * w - 1) * bound)
                module.bias.zero_()
            elif isinstance(module, LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()

    @property
    def dtype(self):
        return DTYPES[self.cfg.dtype]

    def _check_input(self, seq):
        seq = torch.as_tensor(seq, dtype=self.dtype)
        cfg = self.cfg
        if seq.dim() == 3:
            seq = seq.unsqueeze(0)
        if seq.shape[1:] != (cfg.seq_len, cfg.n_classes, 5):
            raise InputError(
                f"expected sequences of shape (s={cfg.seq_len}, n={cfg.n_classes}, 5), "
                f"got {tuple(seq.shape)}"
            )
        if not bool(torch.isfinite(seq).all()):
            raise InputError("non-finite values in detection sequence")
        return seq

    def encode_raw(self, seq):
        """Pre-activation latent units, shape ``(B, 3)``."""
        B, s = seq.shape[:2]
        x = seq.reshape(B, s, -1)
        if self.embed is not None:
            x = self.embed(x)
        x = x + self.pos_enc
        for block in self.blocks:
            x = block(x)
        x = x.reshape(B, -1)
        for i, layer in enumerate(self.reduce):
            x = layer(x)
            if i < len(self.reduce) - 1:
                x = torch.relu(x)
        return x

    def encode(self, seq):
        """Latent codes ``(B, 3)`` for a batch ``(B, s, n, 5)`` or a single sequence."""
        seq = self._check_input(seq)
        raw = self.encode_raw(seq)
        z1 = torch.sigmoid(raw[:, :1])
        if self.cfg.rotation_enabled:
            angles = torch.tanh(raw[:, 1:])
        else:
            angles = torch.zeros_like(raw[:, 1:])
        return torch.cat([z1, angles], dim=1)

    def decode(self, z1):
        """Class probabilities ``(B, n)`` and centered-view boxes ``(B, n, 4)``."""
        z1 = torch.as_tensor(z1, dtype=self.dtype).reshape(-1, 1)
        h = torch.relu(self.class_dec[0](z1))
        y_hat = torch.sigmoid(self.class_dec[1](h))
        h = torch.relu(self.box_dec[0](z1))
        boxes = torch.sigmoid(self.box_dec[1](h)).reshape(-1, self.cfg.n_classes, 4)
        return y_hat, boxes

    def rotate(self, b_centered, z):
        if not self.cfg.rotation_enabled:
            return b_centered
        pitch = geometry.latent_to_angle(z[:, 1])
        yaw = geometry.latent_to_angle(z[:, 2])
        R = geometry.rotation_matrix(pitch, yaw)
        return geometry.rotate_centers(b_centered, R)

    def forward(self, seq):
        z = self.encode(seq)
        y_hat, b_centered = self.decode(z[:, 0])
        return ModelOutput(z, y_hat, b_centered, self.rotate(b_centered, z))

    def center_reencode(self, y_true, b_centered):
        """Angles ``(B, 2)`` the encoder assigns to the centered reconstruction.

        The pseudo frame carries the true presence flags and the centered boxes
        (zeroed for absent classes), repeated over the whole window.
        """
        y = torch.as_tensor(y_true, dtype=self.dtype).unsqueeze(-1)
        frame = torch.cat([y, b_centered * y], dim=-1)
        seq = frame.unsqueeze(1).expand(-1, self.cfg.seq_len, -1, -1)
        return self.encode(seq)[:, 1:]


def init_params(cfg: ModelConfig) -> PoseAutoencoder:
    return PoseAutoencoder(cfg)


def parameter_count(model):
    return sum(p.numel() for p in model.parameters())


def expected_parameter_count(cfg: ModelConfig):
    """Parameter total computed from the configuration alone."""
    d = cfg.token_dim
    total = cfg.input_dim * d + d if cfg.needs_embedding else 0
    per_block = 4 * (d * d + d) + 2 * 2 * d
    per_block += d * cfg.ff_mult * d + cfg.ff_mult * d + cfg.ff_mult * d * d + d
    total += cfg.encoder_layers * per_block
    dims = (cfg.seq_len * d, *cfg.fc_dims, 3)
    total += sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    total += 2 * cfg.class_dec_hidden + cfg.class_dec_hidden * cfg.n_classes + cfg.n_classes
    total += 2 * cfg.box_dec_hidden + cfg.box_dec_hidden * 4 * cfg.n_classes + 4 * cfg.n_classes
    return total


@torch.no_grad()
def encode_batched(model, sequences, batch_size=256):
    """Latents as a float64 numpy array for a stack of sequences ``(N, s, n, 5)``."""
    out = []
    for i in range(0, len(sequences), batch_size):
        out.append(model.encode(sequences[i : i + batch_size]).to(torch.float64))
    if not out:
        return torch.zeros((0, 3), dtype=torch.float64).numpy()
    return torch.cat(out).numpy()
