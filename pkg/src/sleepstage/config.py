"""Run configuration: flat "dotted.key = value" text files plus CLI overrides.

The resolved configuration of every run is copied into the output directory
so any result can be reproduced from that single file.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .preprocess import AugmentConfig
from .training import TrainConfig

DATASET_ROOT_ENV = "SLEEPSTAGE_DATASET_ROOT"
DEFAULT_CHANNEL = "EEG Fpz-Cz"


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def format_kv(values: dict[str, str]) -> str:
    return "".join(f"{k} = {values[k]}\n" for k in sorted(values))


def _to_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected integer, got {value!r}") from None


def _to_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected number, got {value!r}") from None


def _to_int_tuple(key: str, value: str) -> tuple[int, ...]:
    try:
        return tuple(int(p.strip()) for p in value.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {value!r}") from None


@dataclass(frozen=True)
class RunConfig:
    dataset_root: Path
    output_dir: Path
    cache_dir: Path
    channel: str = DEFAULT_CHANNEL
    split_kind: str = "kfold"        # "kfold" | "holdout"
    split_k: int = 5
    split_ratio: float = 0.8
    fold: int | None = None          # restrict k-fold training to one fold
    seed: int = 0
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    augment: AugmentConfig = AugmentConfig()
    augment_enabled: bool = True

    def resolved(self) -> dict[str, str]:
        m, t, a = self.model, self.train, self.augment
        values = {
            "dataset.root": str(self.dataset_root),
            "dataset.channel": self.channel,
            "cache.dir": str(self.cache_dir),
            "output.dir": str(self.output_dir),
            "split.kind": self.split_kind,
            "split.k": str(self.split_k),
            "split.ratio": repr(self.split_ratio),
            "seed": str(self.seed),
            "model.branch_kernel_sizes": ",".join(str(k) for k in m.branch_kernel_sizes),
            "model.branch_channels": str(m.branch_channels),
            "model.attention_blocks": str(m.attention_blocks),
            "model.channel_attention_reduction": str(m.channel_attention_reduction),
            "model.spatial_kernel": str(m.spatial_kernel),
            "model.pool_sizes": ",".join(str(p) for p in m.pool_sizes),
            "model.num_classes": str(m.num_classes),
            "model.input_length": str(m.input_length),
            "train.learning_rate": repr(t.learning_rate),
            "train.batch_size": str(t.batch_size),
            "train.adam_beta1": repr(t.adam_beta1),
            "train.adam_beta2": repr(t.adam_beta2),
            "train.adam_eps": repr(t.adam_eps),
            "train.max_passes": str(t.max_passes),
            "train.checkpoint_every": str(t.checkpoint_every),
            "augment.enabled": str(self.augment_enabled).lower(),
            "augment.flip_probability": repr(a.flip_probability),
            "augment.noise_fraction": repr(a.noise_fraction),
        }
        if self.fold is not None:
            values["split.fold"] = str(self.fold)
        return values


_KNOWN_KEYS = {
    "dataset.root", "dataset.channel", "cache.dir", "output.dir",
    "split.kind", "split.k", "split.ratio", "split.fold", "seed",
    "model.branch_kernel_sizes", "model.branch_channels", "model.attention_blocks",
    "model.channel_attention_reduction", "model.spatial_kernel", "model.pool_sizes",
    "model.num_classes", "model.input_length",
    "train.learning_rate", "train.batch_size", "train.adam_beta1", "train.adam_beta2",
    "train.adam_eps", "train.max_passes", "train.checkpoint_every",
    "augment.enabled", "augment.flip_probability", "augment.noise_fraction",
}


def build_run_config(file_values: dict[str, str] | None = None,
                     overrides: dict[str, str] | None = None) -> RunConfig:
    """Merge config file values and CLI overrides into a validated RunConfig."""
    values: dict[str, str] = {}
    values.update(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    unknown = set(values) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")

    root = values.get("dataset.root") or os.environ.get(DATASET_ROOT_ENV)
    if not root:
        raise ConfigError(
            f"dataset.root missing (set it in the config or via ${DATASET_ROOT_ENV})")
    dataset_root = Path(root)
    output_dir = Path(values.get("output.dir", "out"))
    cache_dir = Path(values["cache.dir"]) if "cache.dir" in values else dataset_root / "cache"

    split_kind = values.get("split.kind", "kfold")
    if split_kind not in ("kfold", "holdout"):
        raise ConfigError(f"split.kind must be kfold or holdout, got {split_kind!r}")

    defaults = ModelConfig()
    try:
        model = ModelConfig(
            branch_kernel_sizes=_to_int_tuple("model.branch_kernel_sizes",
                                              values["model.branch_kernel_sizes"])
            if "model.branch_kernel_sizes" in values else defaults.branch_kernel_sizes,
            branch_channels=_to_int("model.branch_channels", values["model.branch_channels"])
            if "model.branch_channels" in values else defaults.branch_channels,
            attention_blocks=_to_int("model.attention_blocks", values["model.attention_blocks"])
            if "model.attention_blocks" in values else defaults.attention_blocks,
            channel_attention_reduction=_to_int(
                "model.channel_attention_reduction", values["model.channel_attention_reduction"])
            if "model.channel_attention_reduction" in values else defaults.channel_attention_reduction,
            spatial_kernel=_to_int("model.spatial_kernel", values["model.spatial_kernel"])
            if "model.spatial_kernel" in values else defaults.spatial_kernel,
            pool_sizes=_to_int_tuple("model.pool_sizes", values["model.pool_sizes"])
            if "model.pool_sizes" in values else defaults.pool_sizes,
            num_classes=_to_int("model.num_classes", values["model.num_classes"])
            if "model.num_classes" in values else defaults.num_classes,
            input_length=_to_int("model.input_length", values["model.input_length"])
            if "model.input_length" in values else defaults.input_length,
        )
        tdef = TrainConfig()
        train = TrainConfig(
            learning_rate=_to_float("train.learning_rate", values["train.learning_rate"])
            if "train.learning_rate" in values else tdef.learning_rate,
            batch_size=_to_int("train.batch_size", values["train.batch_size"])
            if "train.batch_size" in values else tdef.batch_size,
            adam_beta1=_to_float("train.adam_beta1", values["train.adam_beta1"])
            if "train.adam_beta1" in values else tdef.adam_beta1,
            adam_beta2=_to_float("train.adam_beta2", values["train.adam_beta2"])
            if "train.adam_beta2" in values else tdef.adam_beta2,
            adam_eps=_to_float("train.adam_eps", values["train.adam_eps"])
            if "train.adam_eps" in values else tdef.adam_eps,
            max_passes=_to_int("train.max_passes", values["train.max_passes"])
            if "train.max_passes" in values else tdef.max_passes,
            seed=_to_int("seed", values.get("seed", "0")),
            checkpoint_every=_to_int("train.checkpoint_every", values["train.checkpoint_every"])
            if "train.checkpoint_every" in values else tdef.checkpoint_every,
        )
        adef = AugmentConfig()
        augment = AugmentConfig(
            flip_probability=_to_float("augment.flip_probability",
                                       values["augment.flip_probability"])
            if "augment.flip_probability" in values else adef.flip_probability,
            noise_fraction=_to_float("augment.noise_fraction", values["augment.noise_fraction"])
            if "augment.noise_fraction" in values else adef.noise_fraction,
            rng_seed=_to_int("seed", values.get("seed", "0")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    enabled_text = values.get("augment.enabled", "true").lower()
    if enabled_text not in ("true", "false", "1", "0", "yes", "no"):
        raise ConfigError(f"augment.enabled: expected boolean, got {enabled_text!r}")

    return RunConfig(
        dataset_root=dataset_root,
        output_dir=output_dir,
        cache_dir=cache_dir,
        channel=values.get("dataset.channel", DEFAULT_CHANNEL),
        split_kind=split_kind,
        split_k=_to_int("split.k", values.get("split.k", "5")),
        split_ratio=_to_float("split.ratio", values.get("split.ratio", "0.8")),
        fold=_to_int("split.fold", values["split.fold"]) if "split.fold" in values else None,
        seed=_to_int("seed", values.get("seed", "0")),
        model=model,
        train=train,
        augment=augment,
        augment_enabled=enabled_text in ("true", "1", "yes"),
    )


def load_run_config(path: str | Path | None,
                    overrides: dict[str, str] | None = None) -> RunConfig:
    file_values = None
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        file_values = parse_kv_text(p.read_text(), source=str(p))
    return build_run_config(file_values, overrides)
