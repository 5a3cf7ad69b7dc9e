"""Multi-scale dual-attention 1-D network for 30-s single-channel epochs.

Pipeline: three parallel conv branches (kernel sizes 3/5/7, each two convs
with batch norm and a projected residual), channel concat, then a stack of
residual attention blocks. Each block runs two same-width convs, a
channel-attention stage that soft-thresholds activations with a learned,
signal-scaled threshold, a spatial gate in (0,1), and an identity skip.
Global average pooling and one fully connected layer produce the 5 logits.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import ParamTensor, RunningStats, Tensor
from .errors import ShapeMismatch


@dataclass(frozen=True)
class ModelConfig:
    branch_kernel_sizes: tuple[int, ...] = (3, 5, 7)
    branch_channels: int = 32
    attention_blocks: int = 3
    channel_attention_reduction: int = 4
    spatial_kernel: int = 3
    # pool_sizes[0] follows the branch concat; pool_sizes[i] follows block i
    # for i < attention_blocks-1; nothing pools after the last block.
    pool_sizes: tuple[int, ...] = (8, 4, 4)
    num_classes: int = 5
    input_length: int = 3000

    @property
    def attention_channels(self) -> int:
        return self.branch_channels * len(self.branch_kernel_sizes)

    @property
    def reduced_channels(self) -> int:
        return max(1, self.attention_channels // self.channel_attention_reduction)

    def __post_init__(self):
        if any(k % 2 == 0 for k in self.branch_kernel_sizes):
            raise ValueError("branch kernel sizes must be odd (same-padding)")
        if self.spatial_kernel % 2 == 0:
            raise ValueError("spatial_kernel must be odd")
        if len(self.pool_sizes) != self.attention_blocks:
            raise ValueError("need one pool size per attention block "
                             "(first applies after the branch concat)")
        if self.branch_channels < 1 or self.attention_blocks < 1:
            raise ValueError("branch_channels and attention_blocks must be >= 1")

    def to_dict(self) -> dict:
        return {
            "branch_kernel_sizes": list(self.branch_kernel_sizes),
            "branch_channels": self.branch_channels,
            "attention_blocks": self.attention_blocks,
            "channel_attention_reduction": self.channel_attention_reduction,
            "spatial_kernel": self.spatial_kernel,
            "pool_sizes": list(self.pool_sizes),
            "num_classes": self.num_classes,
            "input_length": self.input_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            branch_kernel_sizes=tuple(d["branch_kernel_sizes"]),
            branch_channels=int(d["branch_channels"]),
            attention_blocks=int(d["attention_blocks"]),
            channel_attention_reduction=int(d["channel_attention_reduction"]),
            spatial_kernel=int(d["spatial_kernel"]),
            pool_sizes=tuple(d["pool_sizes"]),
            num_classes=int(d["num_classes"]),
            input_length=int(d["input_length"]),
        )


@dataclass
class ModelParams:
    """All learnable tensors plus batch-norm running stats, by name."""

    cfg: ModelConfig
    params: dict[str, ParamTensor] = field(default_factory=dict)
    bn_stats: dict[str, RunningStats] = field(default_factory=dict)

    def __getitem__(self, name: str) -> ParamTensor:
        return self.params[name]

    def parameters(self) -> list[ParamTensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def copy(self) -> "ModelParams":
        out = ModelParams(self.cfg)
        for name, p in self.params.items():
            out.params[name] = ParamTensor(name, p.data.copy())
        for name, s in self.bn_stats.items():
            out.bn_stats[name] = s.copy()
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: p.data for name, p in self.params.items()}
        for name, s in self.bn_stats.items():
            arrays[f"{name}.running_mean"] = s.mean
            arrays[f"{name}.running_var"] = s.var
        return arrays

    @classmethod
    def from_state(cls, cfg: ModelConfig, arrays: dict[str, np.ndarray]) -> "ModelParams":
        template = init_params(cfg, seed=0)
        out = cls(cfg)
        for name, p in template.params.items():
            if name not in arrays:
                raise ShapeMismatch(f"checkpoint missing parameter {name!r}")
            if arrays[name].shape != p.data.shape:
                raise ShapeMismatch(
                    f"checkpoint parameter {name!r} has shape {arrays[name].shape}, "
                    f"config expects {p.data.shape}")
            out.params[name] = ParamTensor(name, arrays[name].copy())
        for name, s in template.bn_stats.items():
            stats = RunningStats(len(s.mean))
            stats.mean = arrays[f"{name}.running_mean"].copy()
            stats.var = arrays[f"{name}.running_var"].copy()
            out.bn_stats[name] = stats
        return out


def _glorot(rng: np.random.Generator, shape: tuple[int, ...],
            fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform conv/FC weights, zero biases, unit-gamma batch norms."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    mp = ModelParams(cfg)
    c = cfg.attention_channels
    bc = cfg.branch_channels

    def conv(name: str, c_out: int, c_in: int, k: int) -> None:
        mp.params[f"{name}.weight"] = ParamTensor(
            f"{name}.weight", _glorot(rng, (c_out, c_in, k), c_in * k, c_out * k))
        mp.params[f"{name}.bias"] = ParamTensor(f"{name}.bias", np.zeros(c_out))

    def fc(name: str, f_in: int, f_out: int) -> None:
        mp.params[f"{name}.weight"] = ParamTensor(
            f"{name}.weight", _glorot(rng, (f_in, f_out), f_in, f_out))
        mp.params[f"{name}.bias"] = ParamTensor(f"{name}.bias", np.zeros(f_out))

    def bn(name: str, channels: int) -> None:
        mp.params[f"{name}.gamma"] = ParamTensor(f"{name}.gamma", np.ones(channels))
        mp.params[f"{name}.beta"] = ParamTensor(f"{name}.beta", np.zeros(channels))
        mp.bn_stats[name] = RunningStats(channels)

    for k in cfg.branch_kernel_sizes:
        conv(f"branch{k}.conv1", bc, 1, k)
        bn(f"branch{k}.bn1", bc)
        conv(f"branch{k}.conv2", bc, bc, k)
        bn(f"branch{k}.bn2", bc)
        conv(f"branch{k}.proj", bc, 1, 1)

    for i in range(cfg.attention_blocks):
        conv(f"block{i}.conv1", c, c, 3)
        bn(f"block{i}.bn1", c)
        conv(f"block{i}.conv2", c, c, 3)
        bn(f"block{i}.bn2", c)
        fc(f"block{i}.ca.fc1", c, cfg.reduced_channels)
        bn(f"block{i}.ca.bn", cfg.reduced_channels)
        fc(f"block{i}.ca.fc2", cfg.reduced_channels, c)
        conv(f"block{i}.sa.gate", 1, 2, cfg.spatial_kernel)
        conv(f"block{i}.sa.mix", c, c, 1)

    fc("head.fc", c, cfg.num_classes)
    return mp


def _bn(mp: ModelParams, name: str, x: Tensor, training: bool) -> Tensor:
    return ag.batch_norm1d(x, mp[f"{name}.gamma"], mp[f"{name}.beta"],
                           mp.bn_stats[name], training)


def _conv(mp: ModelParams, name: str, x: Tensor, stride: int = 1,
          padding: int = 0) -> Tensor:
    return ag.conv1d(x, mp[f"{name}.weight"], mp[f"{name}.bias"],
                     stride=stride, padding=padding)


def branch_forward(mp: ModelParams, x: Tensor, k: int, training: bool) -> Tensor:
    """conv-BN-ReLU-conv-BN with a 1x1-projected residual, width preserved."""
    pad = (k - 1) // 2
    h = _conv(mp, f"branch{k}.conv1", x, padding=pad)
    h = ag.relu(_bn(mp, f"branch{k}.bn1", h, training))
    h = _conv(mp, f"branch{k}.conv2", h, padding=pad)
    h = _bn(mp, f"branch{k}.bn2", h, training)
    res = _conv(mp, f"branch{k}.proj", x)
    return ag.relu(ag.add(h, res))


def multiscale_forward(mp: ModelParams, x: Tensor, training: bool) -> Tensor:
    branches = [branch_forward(mp, x, k, training) for k in mp.cfg.branch_kernel_sizes]
    fused = ag.concat(branches, axis=1)
    p = mp.cfg.pool_sizes[0]
    return ag.max_pool1d(fused, p, p) if p else fused


def channel_attention(mp: ModelParams, block: int, x: Tensor,
                      training: bool) -> Tensor:
    """Soft-threshold x per channel with tau = gate(x) * mean|x|.

    The gate is a sigmoid in (0,1) learned from the channel energy profile,
    so tau stays signal-scaled and the output never exceeds the input in
    magnitude.
    """
    if x.shape[1] != mp.cfg.attention_channels:
        raise ShapeMismatch(
            f"channel_attention expects {mp.cfg.attention_channels} channels, got {x.shape}")
    name = f"block{block}.ca"
    energy = ag.global_avg_pool(ag.absolute(x))  # [B,C] mean absolute activation
    h = ag.linear(energy, mp[f"{name}.fc1.weight"], mp[f"{name}.fc1.bias"])
    h = ag.relu(_bn(mp, f"{name}.bn", h, training))
    gate = ag.sigmoid(ag.linear(h, mp[f"{name}.fc2.weight"], mp[f"{name}.fc2.bias"]))
    tau = ag.reshape(ag.mul(gate, energy), (x.shape[0], x.shape[1], 1))
    return ag.soft_threshold(x, tau)


def spatial_attention(mp: ModelParams, block: int, x: Tensor) -> Tensor:
    """Gate each time position by a sigmoid of convolved mean/max channel maps."""
    name = f"block{block}.sa"
    pooled = ag.channel_pool(x)  # [B,2,W]
    pad = (mp.cfg.spatial_kernel - 1) // 2
    beta = ag.sigmoid(_conv(mp, f"{name}.gate", pooled, padding=pad))  # [B,1,W]
    mixed = _conv(mp, f"{name}.mix", x)  # pointwise channel mixing
    return ag.mul(mixed, beta)


def attention_block(mp: ModelParams, block: int, x: Tensor, training: bool) -> Tensor:
    if x.shape[1] != mp.cfg.attention_channels:
        raise ShapeMismatch(
            f"attention_block expects {mp.cfg.attention_channels} channels, got {x.shape}")
    h = _conv(mp, f"block{block}.conv1", x, padding=1)
    h = ag.relu(_bn(mp, f"block{block}.bn1", h, training))
    h = _conv(mp, f"block{block}.conv2", h, padding=1)
    h = _bn(mp, f"block{block}.bn2", h, training)
    h = channel_attention(mp, block, h, training)
    h = spatial_attention(mp, block, h)
    return ag.relu(ag.add(h, x))


def model_forward(mp: ModelParams, x, training: bool = False) -> Tensor:
    """[B,1,input_length] -> [B,num_classes] pre-softmax logits."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim != 3 or x.shape[1] != 1:
        raise ShapeMismatch(f"model_forward expects [B,1,W], got {x.shape}")
    if x.shape[2] != mp.cfg.input_length:
        raise ShapeMismatch(
            f"model_forward expects width {mp.cfg.input_length}, got {x.shape[2]}")
    h = multiscale_forward(mp, x, training)
    for i in range(mp.cfg.attention_blocks):
        h = attention_block(mp, i, h, training)
        if i + 1 < mp.cfg.attention_blocks:
            p = mp.cfg.pool_sizes[i + 1]
            if p:
                h = ag.max_pool1d(h, p, p)
    feats = ag.global_avg_pool(h)
    return ag.linear(feats, mp["head.fc.weight"], mp["head.fc.bias"])


def pipeline_widths(cfg: ModelConfig) -> list[int]:
    """Feature widths after each pooling stage, ending at the pooled scalar."""
    widths = [cfg.input_length]
    w = cfg.input_length
    p = cfg.pool_sizes[0]
    if p:
        w = (w - p) // p + 1
    widths.append(w)
    for i in range(cfg.attention_blocks):
        if i + 1 < cfg.attention_blocks:
            p = cfg.pool_sizes[i + 1]
            if p:
                w = (w - p) // p + 1
        widths.append(w)
    widths.append(1)
    return widths


def parameter_count(cfg: ModelConfig) -> int:
    mp = init_params(cfg, seed=0)
    return sum(p.data.size for p in mp.parameters())
