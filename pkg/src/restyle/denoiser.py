"""Toy epsilon-prediction U-Net with hookable self-attention layers.

The network runs in float32 under torch; the rest of the stack exchanges
numpy float64 images with it through `predict_noise*` and `as_denoiser`.
Attention layers are registered in forward-execution order so callers can
capture their Q/K/V projections or replace the attention output outright.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import FeatureMap
from .diffusion import GRID_ALPHA_BAR, TRAIN_GRID
from .tensorio import CorruptTensorError, load_tensor, save_tensor

BASE_CH = 32
ATTN_CH = 64
TEMB_CH = 128

ARCH_DESCRIPTOR = {
    "input": [3, 32, 32],
    "base_ch": BASE_CH,
    "attn_ch": ATTN_CH,
    "temb_ch": TEMB_CH,
    "attention_layers": [
        [0, "encoder", 16, ATTN_CH],
        [1, "encoder", 8, ATTN_CH],
        [2, "bottleneck", 8, ATTN_CH],
        [3, "decoder", 8, ATTN_CH],
        [4, "decoder", 16, ATTN_CH],
        [5, "decoder", 16, ATTN_CH],
    ],
}


class CheckpointError(RuntimeError):
    pass


class InjectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class AttentionLayerInfo:
    index: int
    stage: str        # encoder | bottleneck | decoder
    resolution: int
    channels: int


def arch_hash() -> str:
    return hashlib.sha256(json.dumps(ARCH_DESCRIPTOR, sort_keys=True).encode()).hexdigest()[:16]


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb_proj = nn.Linear(TEMB_CH, out_ch)
        self.norm2 = nn.GroupNorm(8, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class AttnBlock(nn.Module):
    """Single-head self-attention over spatial tokens, hookable."""

    def __init__(self, ch, layer_index):
        super().__init__()
        self.layer_index = layer_index
        self.norm = nn.GroupNorm(8, ch)
        self.q = nn.Conv2d(ch, ch, 1)
        self.k = nn.Conv2d(ch, ch, 1)
        self.v = nn.Conv2d(ch, ch, 1)
        self.proj = nn.Conv2d(ch, ch, 1)

    def forward(self, x, capture=None, hook=None):
        b, c, h, w = x.shape
        xn = self.norm(x)
        q = self.q(xn).reshape(b, c, h * w).permute(0, 2, 1)  # (b, N, c)
        k = self.k(xn).reshape(b, c, h * w).permute(0, 2, 1)
        v = self.v(xn).reshape(b, c, h * w).permute(0, 2, 1)

        if capture is not None:
            if b != 1:
                raise ValueError("capture requires batch size 1")
            capture[self.layer_index] = (
                FeatureMap(q[0].detach().numpy().astype(np.float64), (h, w)),
                FeatureMap(k[0].detach().numpy().astype(np.float64), (h, w)),
                FeatureMap(v[0].detach().numpy().astype(np.float64), (h, w)),
            )

        out = None
        if hook is not None:
            if b != 1:
                raise ValueError("injection requires batch size 1")
            replacement = hook(
                self.layer_index,
                q[0].detach().numpy().astype(np.float64),
                k[0].detach().numpy().astype(np.float64),
                v[0].detach().numpy().astype(np.float64),
            )
            if replacement is not None:
                replacement = np.asarray(replacement)
                if replacement.shape != (h * w, c):
                    raise InjectionError(
                        f"layer {self.layer_index}: override shape {replacement.shape} "
                        f"!= expected {(h * w, c)}"
                    )
                out = torch.from_numpy(replacement.astype(np.float32))[None]

        if out is None:
            attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(c), dim=-1)
            out = attn @ v

        out = out.permute(0, 2, 1).reshape(b, c, h, w)
        return x + self.proj(out)


class ToyUNet(nn.Module):
    def __init__(self):
        super().__init__()
        ch, ach = BASE_CH, ATTN_CH
        self.temb = nn.Sequential(nn.Linear(TEMB_CH, TEMB_CH), nn.SiLU(), nn.Linear(TEMB_CH, TEMB_CH))
        self.conv_in = nn.Conv2d(3, ch, 3, padding=1)
        self.res_e32 = ResBlock(ch, ch)
        self.down1 = nn.Conv2d(ch, ch, 3, stride=2, padding=1)
        self.res_e16 = ResBlock(ch, ach)
        self.attn0 = AttnBlock(ach, 0)
        self.down2 = nn.Conv2d(ach, ach, 3, stride=2, padding=1)
        self.res_e8 = ResBlock(ach, ach)
        self.attn1 = AttnBlock(ach, 1)
        self.res_m1 = ResBlock(ach, ach)
        self.attn2 = AttnBlock(ach, 2)
        self.res_m2 = ResBlock(ach, ach)
        self.res_d8 = ResBlock(ach * 2, ach)
        self.attn3 = AttnBlock(ach, 3)
        self.up1 = nn.ConvTranspose2d(ach, ach, 4, stride=2, padding=1)
        self.res_d16a = ResBlock(ach * 2, ach)
        self.attn4 = AttnBlock(ach, 4)
        self.res_d16b = ResBlock(ach, ach)
        self.attn5 = AttnBlock(ach, 5)
        self.up2 = nn.ConvTranspose2d(ach, ach, 4, stride=2, padding=1)
        self.res_d32 = ResBlock(ach + ch, ch)
        self.norm_out = nn.GroupNorm(8, ch)
        self.conv_out = nn.Conv2d(ch, 3, 3, padding=1)

    def forward(self, x, t, capture=None, hook=None):
        temb = self.temb(timestep_embedding(t, TEMB_CH))
        h0 = self.conv_in(x)
        s32 = self.res_e32(h0, temb)
        h = self.res_e16(self.down1(s32), temb)
        s16 = self.attn0(h, capture, hook)
        h = self.res_e8(self.down2(s16), temb)
        s8 = self.attn1(h, capture, hook)
        h = self.res_m1(s8, temb)
        h = self.attn2(h, capture, hook)
        h = self.res_m2(h, temb)
        h = self.res_d8(torch.cat([h, s8], dim=1), temb)
        h = self.attn3(h, capture, hook)
        h = self.res_d16a(torch.cat([self.up1(h), s16], dim=1), temb)
        h = self.attn4(h, capture, hook)
        h = self.res_d16b(h, temb)
        h = self.attn5(h, capture, hook)
        h = self.res_d32(torch.cat([self.up2(h), s32], dim=1), temb)
        return self.conv_out(F.silu(self.norm_out(h)))


@dataclass
class DenoiserModel:
    net: ToyUNet
    seed: int
    registry: list[AttentionLayerInfo] = field(default_factory=list)

    def as_denoiser(self):
        """Adapter matching the diffusion module's denoiser protocol."""
        def eps(x, t_grid, hook=None):
            if hook is None:
                return predict_noise(self, x, t_grid)
            return predict_noise_with_injection_hook(self, x, t_grid, hook)
        return eps


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    ema_decay: float = 0.999
    seed: int = 0
    max_steps: int | None = None


def build_registry() -> list[AttentionLayerInfo]:
    return [AttentionLayerInfo(i, s, r, c) for i, s, r, c in ARCH_DESCRIPTOR["attention_layers"]]


def build_toy_unet(seed: int) -> DenoiserModel:
    torch.manual_seed(seed)
    net = ToyUNet()
    net.eval()
    return DenoiserModel(net=net, seed=seed, registry=build_registry())


def _check_inputs(x, t_grid):
    x = np.asarray(x)
    if x.shape != (3, 32, 32):
        raise ValueError(f"expected (3, 32, 32) input, got {x.shape}")
    if not 0 <= t_grid <= TRAIN_GRID:
        raise ValueError(f"t_grid={t_grid} outside [0, {TRAIN_GRID}]")
    return torch.from_numpy(x.astype(np.float32))[None]


@torch.no_grad()
def predict_noise(model: DenoiserModel, x, t_grid) -> np.ndarray:
    xt = _check_inputs(x, t_grid)
    out = model.net(xt, torch.tensor([t_grid]))
    return out[0].numpy().astype(np.float64)


@torch.no_grad()
def predict_noise_with_capture(model: DenoiserModel, x, t_grid, layers):
    layers = set(layers)
    valid = {info.index for info in model.registry}
    if not layers <= valid:
        raise ValueError(f"invalid layer indices {sorted(layers - valid)}")
    xt = _check_inputs(x, t_grid)
    grabbed: dict = {}
    out = model.net(xt, torch.tensor([t_grid]), capture=grabbed)
    captured = {i: grabbed[i] for i in layers}
    return out[0].numpy().astype(np.float64), captured


@torch.no_grad()
def predict_noise_with_injection(model: DenoiserModel, x, t_grid, overrides) -> np.ndarray:
    """`overrides` maps layer index -> closure(q, k, v) -> (N, d) array."""
    valid = {info.index for info in model.registry}
    if not set(overrides) <= valid:
        raise ValueError(f"invalid layer indices {sorted(set(overrides) - valid)}")

    def hook(layer, q, k, v):
        fn = overrides.get(layer)
        return None if fn is None else fn(q, k, v)

    return predict_noise_with_injection_hook(model, x, t_grid, hook)


@torch.no_grad()
def predict_noise_with_injection_hook(model: DenoiserModel, x, t_grid, hook) -> np.ndarray:
    xt = _check_inputs(x, t_grid)
    out = model.net(xt, torch.tensor([t_grid]), hook=hook)
    return out[0].numpy().astype(np.float64)


def train(model: DenoiserModel, config: TrainConfig, dataset: np.ndarray):
    """Epsilon-prediction MSE training with EMA; returns (model, loss curve).

    `dataset` is (n, 3, 32, 32) in [-1, 1].  The EMA weights are loaded
    into the returned model.  Deterministic given config.seed in
    single-threaded mode.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    torch.manual_seed(config.seed)
    rng = np.random.Generator(np.random.Philox(config.seed))
    net = model.net
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=config.lr, betas=(config.beta1, config.beta2))
    ema = {k: v.detach().clone() for k, v in net.state_dict().items()}

    data = torch.from_numpy(np.asarray(dataset, dtype=np.float32))
    ab = torch.from_numpy(GRID_ALPHA_BAR.astype(np.float32))
    losses = []
    step = 0
    steps_per_epoch = max(1, len(data) // config.batch_size)
    for _epoch in range(config.epochs):
        perm = rng.permutation(len(data))
        for b in range(steps_per_epoch):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            if len(idx) == 0:
                continue
            x0 = data[idx]
            t = torch.from_numpy(rng.integers(1, TRAIN_GRID + 1, size=len(idx)))
            z = torch.from_numpy(rng.standard_normal(x0.shape).astype(np.float32))
            a = ab[t][:, None, None, None]
            xt = a.sqrt() * x0 + (1 - a).sqrt() * z
            pred = net(xt, t)
            loss = F.mse_loss(pred, z)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite loss at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            with torch.no_grad():
                sd = net.state_dict()
                for k in ema:
                    if ema[k].dtype.is_floating_point:
                        ema[k].mul_(config.ema_decay).add_(sd[k], alpha=1 - config.ema_decay)
                    else:
                        ema[k].copy_(sd[k])
            losses.append(float(loss.detach()))
            step += 1
            if config.max_steps is not None and step >= config.max_steps:
                break
        if config.max_steps is not None and step >= config.max_steps:
            break
    net.load_state_dict(ema)
    net.eval()
    return model, losses


def validation_loss(model: DenoiserModel, dataset: np.ndarray, seed=0, n_t=10) -> float:
    """Mean eps-prediction MSE over the set, t stratified over the grid."""
    rng = np.random.Generator(np.random.Philox(seed))
    data = torch.from_numpy(np.asarray(dataset, dtype=np.float32))
    ab = torch.from_numpy(GRID_ALPHA_BAR.astype(np.float32))
    total = 0.0
    count = 0
    with torch.no_grad():
        for t_grid in np.linspace(1, TRAIN_GRID, n_t).astype(int):
            z = torch.from_numpy(rng.standard_normal(data.shape).astype(np.float32))
            a = ab[t_grid]
            xt = a.sqrt() * data + (1 - a).sqrt() * z
            t = torch.full((len(data),), int(t_grid))
            for i in range(0, len(data), 64):
                pred = model.net(xt[i:i + 64], t[i:i + 64])
                total += float(F.mse_loss(pred, z[i:i + 64], reduction="sum"))
                count += pred.numel()
    return total / count


def save_checkpoint(model: DenoiserModel, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = []
    for name, tensor in model.net.state_dict().items():
        fname = name.replace(".", "__") + ".zstr"
        save_tensor(path / fname, tensor.detach().numpy())
        names.append(name)
    manifest = {"arch_hash": arch_hash(), "seed": model.seed, "tensors": names}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(path) -> DenoiserModel:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"{path}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("arch_hash") != arch_hash():
        raise CheckpointError(
            f"{path}: architecture hash mismatch "
            f"({manifest.get('arch_hash')} != {arch_hash()})"
        )
    model = build_toy_unet(manifest["seed"])
    state = {}
    for name in manifest["tensors"]:
        fname = name.replace(".", "__") + ".zstr"
        try:
            arr = load_tensor(path / fname)
        except (CorruptTensorError, FileNotFoundError) as e:
            raise CheckpointError(f"corrupt checkpoint: {e}") from e
        ref = model.net.state_dict()[name]
        state[name] = torch.from_numpy(arr.astype(np.float32)).reshape(ref.shape).to(ref.dtype)
    model.net.load_state_dict(state)
    model.net.eval()
    return model
