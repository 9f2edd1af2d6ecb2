"""Generator and three-headed discriminator.

The generator maps (image, relative-attribute vector) to an image of the
same size. The discriminator shares one convolutional trunk across three
heads: a realism score map, a triplet-matching score map conditioned on the
relative vector, and an interpolation-degree regressor.

Layout reference (default 256x256 config):

    Generator                              Discriminator trunk
    ---------                              -------------------
    conv 7x7 s1   3+n -> C                 conv 4x4 s2  3    -> C,   lrelu 0.01
    conv 4x4 s2   C   -> 2C                conv 4x4 s2  C    -> 2C,  lrelu 0.01
    conv 4x4 s2   2C  -> 4C                ... doubling each layer ...
    R residual blocks at 4C                conv 4x4 s2  16C  -> 32C, lrelu 0.01
    deconv 4x4 s2 4C  -> 2C
    deconv 4x4 s2 2C  -> C                 heads: real 1x1 -> 1
    conv 7x7 s1   C   -> 3, tanh                  match 1x1 (64C+n -> 32C) -> 1
                                                  interp 1x1 -> 64, channel mean
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .types import DimensionError, ImageBatch, RelativeAttributes

CHECKPOINT_VERSION = 1


class CheckpointMismatchError(RuntimeError):
    """Checkpoint was produced under a different network configuration."""


@dataclass(frozen=True)
class GeneratorConfig:
    n_attributes: int
    base_channels: int = 64
    n_residual_blocks: int = 6
    normalization: str = "switchable"
    image_size: int = 256

    def __post_init__(self):
        if self.n_residual_blocks < 1:
            raise ValueError(f"n_residual_blocks must be >= 1, got {self.n_residual_blocks}")
        if self.base_channels < 8:
            raise ValueError(f"base_channels must be >= 8, got {self.base_channels}")
        if self.normalization not in ("switchable", "instance"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.image_size % 4:
            raise ValueError("generator image_size must be divisible by 4")


@dataclass(frozen=True)
class DiscriminatorConfig:
    n_attributes: int
    base_channels: int = 64
    n_trunk_layers: int = 6
    image_size: int = 256

    def __post_init__(self):
        if self.n_trunk_layers < 1:
            raise ValueError(f"n_trunk_layers must be >= 1, got {self.n_trunk_layers}")
        if self.image_size % (2 ** self.n_trunk_layers):
            raise ValueError(
                f"image_size {self.image_size} not divisible by 2^{self.n_trunk_layers}"
            )

    @property
    def trunk_channels(self) -> int:
        return self.base_channels * 2 ** (self.n_trunk_layers - 1)


def config_hash(config) -> str:
    """Stable hash of a network or training config (dataclass or plain dict)."""
    payload = asdict(config) if not isinstance(config, dict) else config
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


class SwitchableNorm2d(nn.Module):
    """Learned softmax blend of instance, layer, and batch statistics.

    Mean and variance each carry their own three blend logits. The batch
    branch keeps running statistics for evaluation mode.
    """

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.weight = nn.Parameter(torch.ones(num_features))
        self.bias = nn.Parameter(torch.zeros(num_features))
        self.mean_weight = nn.Parameter(torch.zeros(3))
        self.var_weight = nn.Parameter(torch.zeros(3))
        self.register_buffer("running_mean", torch.zeros(num_features))
        self.register_buffer("running_var", torch.ones(num_features))

    def forward(self, x):
        b, c, h, w = x.shape
        mean_in = x.mean(dim=(2, 3), keepdim=True)
        var_in = x.var(dim=(2, 3), unbiased=False, keepdim=True)
        mean_ln = x.mean(dim=(1, 2, 3), keepdim=True)
        var_ln = x.var(dim=(1, 2, 3), unbiased=False, keepdim=True)
        if self.training:
            mean_bn = x.mean(dim=(0, 2, 3), keepdim=True)
            var_bn = x.var(dim=(0, 2, 3), unbiased=False, keepdim=True)
            with torch.no_grad():
                self.running_mean.mul_(1 - self.momentum).add_(
                    self.momentum * mean_bn.reshape(c).to(self.running_mean.dtype)
                )
                self.running_var.mul_(1 - self.momentum).add_(
                    self.momentum * var_bn.reshape(c).to(self.running_var.dtype)
                )
        else:
            mean_bn = self.running_mean.to(x.dtype).view(1, c, 1, 1)
            var_bn = self.running_var.to(x.dtype).view(1, c, 1, 1)

        mw = torch.softmax(self.mean_weight, dim=0)
        vw = torch.softmax(self.var_weight, dim=0)
        mean = mw[0] * mean_in + mw[1] * mean_ln + mw[2] * mean_bn
        var = vw[0] * var_in + vw[1] * var_ln + vw[2] * var_bn
        x = (x - mean) / torch.sqrt(var + self.eps)
        return x * self.weight.view(1, c, 1, 1) + self.bias.view(1, c, 1, 1)


def _make_norm(kind: str, channels: int) -> nn.Module:
    if kind == "switchable":
        return SwitchableNorm2d(channels)
    return nn.InstanceNorm2d(channels, affine=True)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, norm: str):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1),
            _make_norm(norm, channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, 1, 1),
            _make_norm(norm, channels),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Conditional image-to-image generator; see module docstring for layout."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        c = config.base_channels
        n = config.n_attributes
        norm = config.normalization

        def block(conv):
            return nn.Sequential(conv, _make_norm(norm, conv.out_channels), nn.ReLU(inplace=True))

        self.encoder = nn.Sequential(
            block(nn.Conv2d(3 + n, c, 7, 1, 3)),
            block(nn.Conv2d(c, 2 * c, 4, 2, 1)),
            block(nn.Conv2d(2 * c, 4 * c, 4, 2, 1)),
        )
        self.blocks = nn.Sequential(
            *[ResidualBlock(4 * c, norm) for _ in range(config.n_residual_blocks)]
        )
        self.decoder = nn.Sequential(
            block(nn.ConvTranspose2d(4 * c, 2 * c, 4, 2, 1)),
            block(nn.ConvTranspose2d(2 * c, c, 4, 2, 1)),
            nn.Conv2d(c, 3, 7, 1, 3),
            nn.Tanh(),
        )
        init_parameters(self)

    def forward(self, x: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        # x: (B, 3, H, W); v: (B, n), tiled over space as extra input planes
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"expected input of shape (B, 3, H, W), got {tuple(x.shape)}")
        if v.shape != (x.shape[0], self.config.n_attributes):
            raise DimensionError(
                f"expected v of shape ({x.shape[0]}, {self.config.n_attributes}), got {tuple(v.shape)}"
            )
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise DimensionError(f"input spatial size {x.shape[2:]} not divisible by 4")
        tiled = v.view(*v.shape, 1, 1).expand(-1, -1, x.shape[2], x.shape[3])
        h = self.encoder(torch.cat([x, tiled], dim=1))
        h = self.blocks(h)
        return self.decoder(h)


class Discriminator(nn.Module):
    """Shared trunk with realism, matching, and interpolation heads."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        c = config.base_channels
        layers = []
        ch_in = 3
        for i in range(config.n_trunk_layers):
            ch_out = c * 2 ** i
            layers += [nn.Conv2d(ch_in, ch_out, 4, 2, 1), nn.LeakyReLU(0.01, inplace=True)]
            ch_in = ch_out
        self.trunk = nn.Sequential(*layers)
        ct = config.trunk_channels
        self.real_head = nn.Conv2d(ct, 1, 1)
        self.match_hidden = nn.Conv2d(2 * ct + config.n_attributes, ct, 1)
        self.match_out = nn.Conv2d(ct, 1, 1)
        self.interp_head = nn.Conv2d(ct, 64, 1)
        init_parameters(self)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[2] % (2 ** self.config.n_trunk_layers) or x.shape[3] % (
            2 ** self.config.n_trunk_layers
        ):
            raise DimensionError(
                f"input spatial size {tuple(x.shape[2:])} not divisible by "
                f"2^{self.config.n_trunk_layers}"
            )
        return self.trunk(x)

    def real_score(self, f: torch.Tensor) -> torch.Tensor:
        return self.real_head(f)

    def match_score(self, f_x: torch.Tensor, v: torch.Tensor, f_y: torch.Tensor) -> torch.Tensor:
        if f_x.shape != f_y.shape:
            raise DimensionError(f"feature shapes differ: {tuple(f_x.shape)} vs {tuple(f_y.shape)}")
        if v.shape != (f_x.shape[0], self.config.n_attributes):
            raise DimensionError(
                f"expected v of shape ({f_x.shape[0]}, {self.config.n_attributes}), got {tuple(v.shape)}"
            )
        tiled = v.view(*v.shape, 1, 1).expand(-1, -1, f_x.shape[2], f_x.shape[3])
        h = torch.cat([f_x, f_y, tiled.to(f_x.dtype)], dim=1)
        h = nn.functional.leaky_relu(self.match_hidden(h), 0.01)
        return self.match_out(h)

    def interp_score(self, f: torch.Tensor) -> torch.Tensor:
        return self.interp_head(f).mean(dim=1).mean(dim=(1, 2))


def init_parameters(module: nn.Module):
    """Orthogonal conv kernels, zero biases, neutral normalization layers."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.orthogonal_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, SwitchableNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
            nn.init.zeros_(m.mean_weight)
            nn.init.zeros_(m.var_weight)
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


# --- ImageBatch / tensor bridging -------------------------------------------


def image_to_tensor(batch: ImageBatch, dtype=torch.float32, device=None) -> torch.Tensor:
    arr = np.ascontiguousarray(batch.data.transpose(0, 3, 1, 2))
    if not arr.flags.writeable:
        arr = arr.copy()
    return torch.as_tensor(arr, dtype=dtype, device=device)


def tensor_to_image(t: torch.Tensor) -> ImageBatch:
    arr = t.detach().clamp(-1.0, 1.0).cpu().numpy().transpose(0, 2, 3, 1)
    return ImageBatch(arr.astype(np.float32))


def relatives_to_tensor(v, batch_size: int, n: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Broadcast a RelativeAttributes (or per-row array) to a (B, n) tensor."""
    if isinstance(v, RelativeAttributes):
        arr = np.tile(np.asarray(v.values, dtype=np.float64), (batch_size, 1))
    else:
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim == 1:
            arr = np.tile(arr, (batch_size, 1))
    if arr.shape != (batch_size, n):
        raise DimensionError(f"expected relative attributes shaped ({batch_size}, {n}), got {arr.shape}")
    return torch.as_tensor(arr, dtype=dtype, device=device)


def generator_forward(generator: Generator, x: ImageBatch, v) -> ImageBatch:
    """Translate an ImageBatch by relative attributes (inference path)."""
    p = next(generator.parameters())
    xt = image_to_tensor(x, dtype=p.dtype, device=p.device)
    vt = relatives_to_tensor(v, x.batch_size, generator.config.n_attributes, p.dtype, p.device)
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            out = generator(xt, vt)
    finally:
        generator.train(was_training)
    return tensor_to_image(out)


def trunk_forward(disc: Discriminator, x: ImageBatch) -> torch.Tensor:
    p = next(disc.parameters())
    return disc.features(image_to_tensor(x, dtype=p.dtype, device=p.device))


def d_real_forward(disc: Discriminator, f: torch.Tensor) -> torch.Tensor:
    return disc.real_score(f)


def d_match_forward(disc: Discriminator, f_x: torch.Tensor, v, f_y: torch.Tensor) -> torch.Tensor:
    vt = relatives_to_tensor(
        v, f_x.shape[0], disc.config.n_attributes, f_x.dtype, f_x.device
    )
    return disc.match_score(f_x, vt, f_y)


def d_interp_forward(disc: Discriminator, f: torch.Tensor) -> torch.Tensor:
    return disc.interp_score(f)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# --- snapshots and checkpoints ----------------------------------------------


@dataclass(frozen=True)
class ParameterSnapshot:
    """Immutable copy of a module's parameters and buffers plus its config hash."""

    tensors: dict
    config_digest: str

    @classmethod
    def capture(cls, module: nn.Module, config) -> "ParameterSnapshot":
        tensors = {
            name: value.detach().cpu().clone()
            for name, value in module.state_dict().items()
        }
        return cls(tensors=tensors, config_digest=config_hash(config))

    def restore(self, module: nn.Module, config):
        if config_hash(config) != self.config_digest:
            raise CheckpointMismatchError(
                "parameter snapshot was captured under a different config"
            )
        module.load_state_dict(self.tensors)


def save_checkpoint(path, *, generator: Generator, discriminator: Discriminator,
                    g_optimizer=None, d_optimizer=None, iteration: int = 0,
                    train_config: dict | None = None, attribute_names=(),
                    extra: dict | None = None):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "iteration": int(iteration),
        "generator_config": asdict(generator.config),
        "discriminator_config": asdict(discriminator.config),
        "generator_hash": config_hash(generator.config),
        "discriminator_hash": config_hash(discriminator.config),
        "generator_state": generator.state_dict(),
        "discriminator_state": discriminator.state_dict(),
        "g_optimizer_state": g_optimizer.state_dict() if g_optimizer else None,
        "d_optimizer_state": d_optimizer.state_dict() if d_optimizer else None,
        "train_config": train_config,
        "attribute_names": list(attribute_names),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, map_location="cpu") -> dict:
    payload = torch.load(path, map_location=map_location, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointMismatchError(f"unsupported checkpoint format version {version!r}")
    for key in ("generator", "discriminator"):
        stored = payload[f"{key}_hash"]
        recomputed = config_hash(payload[f"{key}_config"])
        if stored != recomputed:
            raise CheckpointMismatchError(f"{key} config hash mismatch in checkpoint")
    payload["attribute_names"] = tuple(payload.get("attribute_names", ()))
    return payload


def load_models(path, map_location="cpu") -> tuple[Generator, Discriminator, dict]:
    """Rebuild generator and discriminator exactly as checkpointed."""
    payload = load_checkpoint(path, map_location)
    gen = Generator(GeneratorConfig(**payload["generator_config"]))
    disc = Discriminator(DiscriminatorConfig(**payload["discriminator_config"]))
    gen.load_state_dict(payload["generator_state"])
    disc.load_state_dict(payload["discriminator_state"])
    gen.eval()
    disc.eval()
    return gen, disc, payload
