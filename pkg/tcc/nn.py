# tcc/nn.py
"""
Trainable building blocks: 3-block convolutional encoder, pre-norm transformer
context model with an attached context token and per-step log-bilinear
predictors, projection head and linear classifier. Gradients come from torch
autograd; parameters are updated with AdamW (decoupled weight decay).
"""
import logging
import math
from typing import Callable, Dict, Iterable, Mapping, Tuple, Union

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from tcc.errors import ConfigError, NumericError, ShapeError

logger = logging.getLogger(__name__)

LossOutput = Union[torch.Tensor, Mapping[str, torch.Tensor]]


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    conv_channels: Tuple[int, int] = (32, 64)
    d: int = Field(128, ge=1)
    kernel_widths: Tuple[int, int, int] = (8, 8, 8)
    conv_stride: int = Field(1, ge=1)
    pool: int = Field(2, ge=1)
    encoder_dropout: float = Field(0.35, ge=0.0, lt=1.0)
    h: int = Field(100, ge=1)
    layers: int = Field(4, ge=0)
    heads: int = Field(4, ge=1)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    k_fraction: float = Field(0.4, gt=0.0, lt=1.0)
    positional_encoding: bool = False

    @model_validator(mode="after")
    def _heads_divide_h(self):
        if self.h % self.heads:
            raise ValueError(f"h={self.h} must be divisible by heads={self.heads}")
        if self.h < 2:
            raise ValueError("h must be >= 2 for the projection head")
        return self


class OptimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(3e-4, gt=0.0)
    weight_decay: float = Field(3e-4, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.99, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)


# --------------------------------------------------------------------
# 1) Shape algebra
# --------------------------------------------------------------------
def latent_length(length: int, cfg: ModelConfig) -> int:
    """Encoder output length T_z for input length T."""
    t = int(length)
    for block, width in enumerate(cfg.kernel_widths, 1):
        if cfg.conv_stride > 1:
            padded = t + 2 * (width // 2)
            if padded < width:
                raise ShapeError(f"T={length} too short for block {block} (conv width {width})")
            t = (padded - width) // cfg.conv_stride + 1
        if t < cfg.pool:
            raise ShapeError(f"T={length} too short for block {block}: {t} steps before pool {cfg.pool}")
        t //= cfg.pool
    return t


def horizon(t_z: int, k_fraction: float) -> int:
    """Number of predicted future steps K = max(1, floor(k_fraction * T_z))."""
    k = max(1, int(math.floor(k_fraction * t_z)))
    if t_z - k < 1:
        raise ShapeError(f"T_z={t_z} leaves no past steps for K={k}")
    return k


# --------------------------------------------------------------------
# 2) Encoder
# --------------------------------------------------------------------
class ConvBlock(nn.Module):
    """conv -> batch norm -> ReLU -> max-pool -> dropout"""

    def __init__(self, in_ch: int, out_ch: int, width: int, stride: int, pool: int, dropout: float):
        super().__init__()
        padding = "same" if stride == 1 else width // 2
        self.conv = nn.Conv1d(in_ch, out_ch, width, stride=stride, padding=padding)
        self.norm = nn.BatchNorm1d(out_ch)
        self.act = nn.ReLU()
        self.pool = nn.MaxPool1d(pool, stride=pool)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.drop(self.pool(self.act(self.norm(self.conv(x)))))


class Encoder(nn.Module):
    def __init__(self, input_channels: int, cfg: ModelConfig):
        super().__init__()
        channels = (input_channels, *cfg.conv_channels, cfg.d)
        self.blocks = nn.ModuleList([
            ConvBlock(
                channels[i], channels[i + 1], cfg.kernel_widths[i], cfg.conv_stride, cfg.pool,
                cfg.encoder_dropout if i == 0 else 0.0,
            )
            for i in range(3)
        ])
        self.input_channels = input_channels
        self.cfg = cfg

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[1] != self.input_channels:
            raise ShapeError(f"expected (B, {self.input_channels}, T) input, got {tuple(x.shape)}")
        latent_length(x.shape[2], self.cfg)
        for block in self.blocks:
            x = block(x)
        return x


# --------------------------------------------------------------------
# 3) Context transformer
# --------------------------------------------------------------------
class MultiHeadAttention(nn.Module):
    def __init__(self, h: int, heads: int, dropout: float):
        super().__init__()
        if h % heads:
            raise ConfigError(f"h={h} must be divisible by heads={heads}")
        self.heads = heads
        self.head_dim = h // heads
        self.qkv = nn.Linear(h, 3 * h)
        self.out = nn.Linear(h, h)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns the attended output (B, S, h) and the softmax weights (B, heads, S, S)."""
        b, s, h = x.shape
        qkv = self.qkv(x).view(b, s, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        weights = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        out = self.drop(weights) @ v
        out = out.transpose(1, 2).reshape(b, s, h)
        return self.out(out), weights


class PreNormLayer(nn.Module):
    """psi~ = MHA(Norm(psi)) + psi ; psi' = MLP(Norm(psi~)) + psi~"""

    def __init__(self, h: int, heads: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(h)
        self.attn = MultiHeadAttention(h, heads, dropout)
        self.norm2 = nn.LayerNorm(h)
        self.mlp = nn.Sequential(
            nn.Linear(h, 4 * h),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(4 * h, h),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        attended, _ = self.attn(self.norm1(x))
        x = attended + x
        return self.mlp(self.norm2(x)) + x


def sinusoidal_positions(steps: int, h: int, dtype=torch.float32) -> torch.Tensor:
    position = torch.arange(steps, dtype=dtype)[:, None]
    freq = torch.exp(torch.arange(0, h, 2, dtype=dtype) * (-math.log(10000.0) / h))
    table = torch.zeros(steps, h, dtype=dtype)
    table[:, 0::2] = torch.sin(position * freq)
    table[:, 1::2] = torch.cos(position * freq)[:, : h // 2]
    return table


class ContextTransformer(nn.Module):
    """Summarizes z_{<=t} into the context token output c_t and holds the
    per-step predictors W_1..W_K mapping c_t back to latent space."""

    def __init__(self, cfg: ModelConfig, k_steps: int):
        super().__init__()
        self.project = nn.Linear(cfg.d, cfg.h)
        self.token = nn.Parameter(torch.randn(1, 1, cfg.h))
        self.layers = nn.ModuleList([PreNormLayer(cfg.h, cfg.heads, cfg.dropout) for _ in range(cfg.layers)])
        self.predictors = nn.ModuleList([nn.Linear(cfg.h, cfg.d, bias=False) for _ in range(k_steps)])
        self.positional_encoding = cfg.positional_encoding
        self.h = cfg.h

    @property
    def k_steps(self) -> int:
        return len(self.predictors)

    def forward(self, z_prefix: torch.Tensor) -> torch.Tensor:
        if z_prefix.dim() != 3 or z_prefix.shape[2] < 1:
            raise ShapeError(f"expected (B, d, t>=1) latent prefix, got {tuple(z_prefix.shape)}")
        tokens = self.project(z_prefix.transpose(1, 2))
        psi = torch.cat([self.token.expand(tokens.shape[0], -1, -1), tokens], dim=1)
        if self.positional_encoding:
            psi = psi + sinusoidal_positions(psi.shape[1], self.h, psi.dtype).to(psi.device)
        for layer in self.layers:
            psi = layer(psi)
        return psi[:, 0]

    def predict(self, c_t: torch.Tensor, k: int) -> torch.Tensor:
        """W_k c_t for 1 <= k <= K."""
        if not 1 <= k <= self.k_steps:
            raise ShapeError(f"k={k} outside 1..{self.k_steps}")
        return self.predictors[k - 1](c_t)


# --------------------------------------------------------------------
# 4) Heads and the full model
# --------------------------------------------------------------------
class ProjectionHead(nn.Module):
    def __init__(self, h: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(h, h), nn.ReLU(), nn.Linear(h, h // 2))

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        return self.net(c)


class TCCModel(nn.Module):
    def __init__(self, cfg: ModelConfig, input_channels: int, sequence_length: int, num_classes: int):
        super().__init__()
        self.cfg = cfg
        self.input_channels = input_channels
        self.sequence_length = sequence_length
        self.num_classes = num_classes
        self.latent_length = latent_length(sequence_length, cfg)
        self.k_steps = horizon(self.latent_length, cfg.k_fraction)

        self.encoder = Encoder(input_channels, cfg)
        self.context = ContextTransformer(cfg, self.k_steps)
        self.head = ProjectionHead(cfg.h)
        self.classifier = nn.Linear(cfg.d * self.latent_length, num_classes)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def context_vector(self, z_prefix: torch.Tensor) -> torch.Tensor:
        return self.context(z_prefix)

    def predict_future(self, c_t: torch.Tensor, k: int) -> torch.Tensor:
        return self.context.predict(c_t, k)

    def project(self, c: torch.Tensor) -> torch.Tensor:
        return self.head(c)

    def classify(self, features: torch.Tensor) -> torch.Tensor:
        return self.classifier(features.flatten(1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classify(self.encode(x))

    def dims(self) -> Dict[str, int]:
        return {
            "input_channels": self.input_channels,
            "sequence_length": self.sequence_length,
            "num_classes": self.num_classes,
        }


def build_model(cfg: ModelConfig, input_channels: int, sequence_length: int, num_classes: int) -> TCCModel:
    return TCCModel(cfg, input_channels, sequence_length, num_classes)


def set_trainable(modules: Iterable[nn.Module], trainable: bool) -> None:
    for module in modules:
        for p in module.parameters():
            p.requires_grad_(trainable)


# --------------------------------------------------------------------
# 5) Gradients and optimizer
# --------------------------------------------------------------------
def compute_gradients(
        loss_fn: Callable[[Dict[str, torch.Tensor]], LossOutput],
        params: Mapping[str, torch.Tensor],
) -> Tuple[Dict[str, torch.Tensor], Dict[str, float]]:
    """Reverse-mode gradients of ``loss_fn(params)`` for every tensor in ``params``.

    ``loss_fn`` returns a scalar or a mapping of named terms whose ``"loss"``
    entry is differentiated; a non-finite term raises NumericError naming it.
    Returns (grads keyed like params, float value of every term).
    """
    params = dict(params)
    outcome = loss_fn(params)
    terms = dict(outcome) if isinstance(outcome, Mapping) else {"loss": outcome}
    if "loss" not in terms:
        raise ConfigError("loss_fn mapping must contain a 'loss' entry")

    for name in [n for n in terms if n != "loss"] + ["loss"]:
        value = terms[name]
        if not bool(torch.isfinite(torch.as_tensor(value)).all()):
            raise NumericError(f"non-finite loss term {name!r}", term=name)

    total = terms["loss"]
    values = {name: float(torch.as_tensor(v).detach()) for name, v in terms.items()}
    wanted = [(name, p) for name, p in params.items() if p.requires_grad]
    grads = {name: torch.zeros_like(p) for name, p in params.items()}
    if not wanted or not (torch.is_tensor(total) and total.requires_grad):
        return grads, values

    found = torch.autograd.grad(total, [p for _, p in wanted], allow_unused=True)
    for (name, p), g in zip(wanted, found):
        if g is not None:
            grads[name] = g
    return grads, values


def make_optimizer(params: Iterable[torch.Tensor], cfg: OptimConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        list(params),
        lr=cfg.lr,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )


def adam_step(
        params: Mapping[str, torch.Tensor],
        grads: Mapping[str, torch.Tensor],
        optimizer: torch.optim.AdamW,
) -> int:
    """Decoupled weight decay then the bias-corrected Adam update. Returns the step count."""
    with torch.no_grad():
        for name, p in params.items():
            if p.requires_grad:
                p.grad = grads[name].detach().clone()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
    steps = [int(s["step"]) for s in optimizer.state.values() if "step" in s]
    return max(steps) if steps else 0
