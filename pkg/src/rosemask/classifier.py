"""Compact residual CNN for binary classification on masked faces.

Two configurations share one architecture family: the standard 18-layer
residual network (four stages of two basic blocks, widths 64/128/256/512,
7x7 stride-2 stem with max-pool) and a "tiny" variant (two stages of one
block, widths 8/16, 3x3 stem) small enough for finite-difference gradient
checks and fast desk-scale experiments. Inputs are consumed at their native
size; global average pooling makes the head size-agnostic.

Inputs are fed as raw [0, 1] intensities with no dataset mean subtraction,
so pixels zeroed by the mask stay exactly zero. Training runs single
threaded with deterministic kernels: a fixed (seed, config, data) triple
reproduces the parameter vector bitwise.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .dataset import LabeledDataset
from .image_core import Image, ImageDims

__all__ = [
    "CHECKPOINT_MAGIC",
    "ModelConfig",
    "NumericError",
    "TrainConfig",
    "TrainedModel",
    "forward",
    "gradient_check",
    "init_model",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
    "save_training_log",
    "train",
]

CHECKPOINT_MAGIC = b"RMCK"
CHECKPOINT_VERSION = 1


class NumericError(RuntimeError):
    """Non-finite values encountered during training or inference."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


def _single_threaded() -> None:
    # Bitwise determinism contract: one thread, deterministic kernels.
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description; use the resnet18()/tiny() constructors."""

    variant: str
    input_dims: ImageDims
    stage_widths: tuple[int, ...]
    blocks_per_stage: tuple[int, ...]
    stem_kernel: int
    num_classes: int = 2

    def __post_init__(self) -> None:
        if self.variant not in ("resnet18", "tiny"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if len(self.stage_widths) != len(self.blocks_per_stage):
            raise ValueError("stage_widths and blocks_per_stage lengths differ")

    @classmethod
    def resnet18(cls, input_dims: ImageDims) -> "ModelConfig":
        return cls(
            variant="resnet18",
            input_dims=input_dims,
            stage_widths=(64, 128, 256, 512),
            blocks_per_stage=(2, 2, 2, 2),
            stem_kernel=7,
        )

    @classmethod
    def tiny(cls, input_dims: ImageDims) -> "ModelConfig":
        return cls(
            variant="tiny",
            input_dims=input_dims,
            stage_widths=(8, 16),
            blocks_per_stage=(1, 1),
            stem_kernel=3,
        )

    @classmethod
    def for_variant(cls, variant: str, input_dims: ImageDims) -> "ModelConfig":
        if variant == "resnet18":
            return cls.resnet18(input_dims)
        if variant == "tiny":
            return cls.tiny(input_dims)
        raise ValueError(f"unknown variant {variant!r}")

    def expected_param_count(self) -> int:
        """Closed-form learnable parameter count (convs bias-free, BN affine,
        one linear head). Must match the built module exactly."""
        stem_w = self.stage_widths[0]
        total = 3 * stem_w * self.stem_kernel**2 + 2 * stem_w  # stem conv + BN
        in_w = stem_w
        for width, blocks in zip(self.stage_widths, self.blocks_per_stage):
            for b in range(blocks):
                block_in = in_w if b == 0 else width
                total += block_in * width * 9 + 2 * width  # conv1 + bn1
                total += width * width * 9 + 2 * width  # conv2 + bn2
                if b == 0 and block_in != width:
                    total += block_in * width + 2 * width  # 1x1 projection + BN
            in_w = width
        total += in_w * self.num_classes + self.num_classes  # linear head
        return total

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "input_dims": {"height": self.input_dims.height, "width": self.input_dims.width},
            "stage_widths": list(self.stage_widths),
            "blocks_per_stage": list(self.blocks_per_stage),
            "stem_kernel": self.stem_kernel,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        return cls(
            variant=raw["variant"],
            input_dims=ImageDims(
                height=raw["input_dims"]["height"], width=raw["input_dims"]["width"]
            ),
            stage_widths=tuple(raw["stage_widths"]),
            blocks_per_stage=tuple(raw["blocks_per_stage"]),
            stem_kernel=raw["stem_kernel"],
            num_classes=raw["num_classes"],
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 42

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        return cls(**raw)


class _BasicBlock(nn.Module):
    """Two 3x3 convolutions with a skip connection; 1x1 projection when the
    shape changes."""

    def __init__(self, in_width: int, width: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_width, width, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_width != width:
            self.downsample: nn.Module | None = nn.Sequential(
                nn.Conv2d(in_width, width, 1, stride=stride, bias=False),
                nn.BatchNorm2d(width),
            )
        else:
            self.downsample = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class _ResidualNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        stem_w = cfg.stage_widths[0]
        stem_stride = 2
        stem_pad = cfg.stem_kernel // 2
        self.stem = nn.Sequential(
            nn.Conv2d(3, stem_w, cfg.stem_kernel, stride=stem_stride, padding=stem_pad, bias=False),
            nn.BatchNorm2d(stem_w),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(kernel_size=3, stride=2, padding=1),
        )
        stages = []
        in_w = stem_w
        for stage_i, (width, blocks) in enumerate(zip(cfg.stage_widths, cfg.blocks_per_stage)):
            for b in range(blocks):
                stride = 2 if (stage_i > 0 and b == 0) else 1
                stages.append(_BasicBlock(in_w, width, stride))
                in_w = width
        self.stages = nn.Sequential(*stages)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(in_w, cfg.num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.stages(self.stem(x))
        x = self.pool(x).flatten(1)
        return self.head(x)


def init_model(cfg: ModelConfig, seed: int) -> nn.Module:
    """Build the network with He fan-in initialization under a fixed seed."""
    _single_threaded()
    torch.manual_seed(seed)
    model = _ResidualNet(cfg)
    for module in model.modules():
        if isinstance(module, nn.Conv2d):
            nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        elif isinstance(module, nn.BatchNorm2d):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Linear):
            nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="linear")
            nn.init.zeros_(module.bias)
    model.eval()
    return model


@dataclass
class TrainedModel:
    config: ModelConfig
    train_config: TrainConfig
    module: nn.Module
    log: list[dict] = field(default_factory=list)

    def param_count(self) -> int:
        return sum(p.numel() for p in self.module.parameters())

    def flat_parameters(self) -> np.ndarray:
        """State (parameters and buffers) as one little-endian float32 vector."""
        chunks = [
            t.detach().cpu().to(torch.float32).numpy().ravel()
            for t in self.module.state_dict().values()
        ]
        vec = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.float32)
        return vec.astype("<f4")


def _check_dims(cfg: ModelConfig, dims: ImageDims) -> None:
    if (dims.height, dims.width) != (cfg.input_dims.height, cfg.input_dims.width):
        raise ValueError(f"input dims {dims} do not match model config {cfg.input_dims}")


def _to_batch(pixels: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    # (N, H, W, 3) float64 -> (N, 3, H, W)
    return torch.from_numpy(np.ascontiguousarray(pixels.transpose(0, 3, 1, 2))).to(dtype)


def forward(model: TrainedModel, img: Image) -> np.ndarray:
    """Logit pair for one image (finite, deterministic for fixed inputs)."""
    _check_dims(model.config, img.dims)
    _single_threaded()
    model.module.eval()
    with torch.no_grad():
        logits = model.module(_to_batch(img.pixels[None]))[0]
    out = logits.numpy().astype(np.float64)
    if not np.isfinite(out).all():
        raise NumericError("non-finite logits in forward pass")
    return out


def predict(model: TrainedModel, data: LabeledDataset, batch_size: int = 64) -> np.ndarray:
    """Argmax labels, order-preserving; exact logit ties resolve to class 0."""
    _check_dims(model.config, data.dims)
    _single_threaded()
    model.module.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            logits = model.module(_to_batch(data.pixels[start : start + batch_size]))
            if not torch.isfinite(logits).all():
                raise NumericError("non-finite logits in predict")
            outputs.append((logits[:, 1] > logits[:, 0]).to(torch.int64).numpy())
    if not outputs:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(outputs)


def train(
    train_data: LabeledDataset,
    val_data: LabeledDataset | None,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
) -> TrainedModel:
    """Minibatch cross-entropy training with Adam.

    Per-epoch log entries carry the mean training loss and, when a
    validation set is supplied, validation accuracy. Raises NumericError
    (with the epoch index) if the loss goes non-finite.
    """
    if len(train_data) == 0:
        raise ValueError("training set must be nonempty")
    _check_dims(mcfg, train_data.dims)
    if val_data is not None and len(val_data):
        _check_dims(mcfg, val_data.dims)
    _single_threaded()

    module = init_model(mcfg, tcfg.seed)
    model = TrainedModel(config=mcfg, train_config=tcfg, module=module)
    xs = _to_batch(train_data.pixels)
    ys = torch.from_numpy(train_data.labels)
    optimizer = torch.optim.Adam(module.parameters(), lr=tcfg.learning_rate)
    shuffler = torch.Generator().manual_seed(tcfg.seed)

    n = len(train_data)
    for epoch in range(1, tcfg.epochs + 1):
        module.train()
        perm = torch.randperm(n, generator=shuffler)
        losses = []
        for start in range(0, n, tcfg.batch_size):
            idx = perm[start : start + tcfg.batch_size]
            optimizer.zero_grad()
            logits = module(xs[idx])
            loss = nn.functional.cross_entropy(logits, ys[idx])
            if not torch.isfinite(loss):
                raise NumericError(f"training loss diverged at epoch {epoch}", epoch=epoch)
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        module.eval()
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val_data is not None and len(val_data):
            val_pred = predict(model, val_data)
            entry["val_accuracy"] = float((val_pred == val_data.labels).mean())
        model.log.append(entry)
    return model


def gradient_check(
    mcfg: ModelConfig,
    img: Image,
    label: int,
    samples: int = 256,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central finite differences.

    Runs the tiny variant in float64 with normalization layers in
    running-stats mode (single-image batch statistics are degenerate).
    Relative error uses |analytic - numeric| / (|numeric| + 1e-8).

    The default step balances two error sources: larger steps straddle
    ReLU kinks (normalization leaves pre-activations centered on the kink,
    so crossings are common by 1e-4), smaller ones amplify float
    cancellation. At 1e-5 both stay orders of magnitude below 1e-3.
    """
    if mcfg.variant != "tiny":
        raise ValueError("gradient_check supports the tiny variant only")
    _check_dims(mcfg, img.dims)
    _single_threaded()

    module = init_model(mcfg, seed).double()
    module.eval()
    x = _to_batch(img.pixels[None], dtype=torch.float64)
    y = torch.tensor([label])

    def loss_value() -> torch.Tensor:
        return nn.functional.cross_entropy(module(x), y)

    loss = loss_value()
    loss.backward()
    params = [p for p in module.parameters()]
    grads = [p.grad.detach().clone() for p in params]

    sizes = np.array([p.numel() for p in params])
    offsets = np.cumsum(sizes)
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=min(samples, total), replace=False)

    worst = 0.0
    with torch.no_grad():
        for flat_index in chosen:
            pi = int(np.searchsorted(offsets, flat_index, side="right"))
            local = int(flat_index - (offsets[pi - 1] if pi else 0))
            flat = params[pi].view(-1)
            original = flat[local].item()
            flat[local] = original + step
            plus = loss_value().item()
            flat[local] = original - step
            minus = loss_value().item()
            flat[local] = original
            numeric = (plus - minus) / (2.0 * step)
            analytic = grads[pi].view(-1)[local].item()
            worst = max(worst, abs(analytic - numeric) / (abs(numeric) + 1e-8))
    return worst


def save_checkpoint(model: TrainedModel, path: str | Path) -> None:
    """Single-file checkpoint: magic, JSON header (format version, config
    echo, state layout), then the state as little-endian float32."""
    entries = []
    chunks = []
    for name, tensor in model.module.state_dict().items():
        arr = tensor.detach().cpu().to(torch.float32).numpy().astype("<f4")
        entries.append(
            {"name": name, "shape": list(tensor.shape), "dtype": str(tensor.dtype).removeprefix("torch.")}
        )
        chunks.append(arr.ravel())
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": model.train_config.to_dict(),
        "entries": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blob = np.concatenate(chunks).tobytes() if chunks else b""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(blob)


def load_checkpoint(path: str | Path) -> TrainedModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint: {path}")
    raw = path.read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    (header_len,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + header_len].decode())
    if header["format_version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['format_version']}")
    mcfg = ModelConfig.from_dict(header["model_config"])
    tcfg = TrainConfig.from_dict(header["train_config"])

    values = np.frombuffer(raw[8 + header_len :], dtype="<f4")
    state = {}
    cursor = 0
    for entry in header["entries"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        chunk = values[cursor : cursor + count].reshape(entry["shape"])
        cursor += count
        dtype = getattr(torch, entry["dtype"])
        state[entry["name"]] = torch.from_numpy(chunk.copy()).to(dtype)
    if cursor != values.size:
        raise ValueError("checkpoint payload size mismatch")

    module = _ResidualNet(mcfg)
    module.load_state_dict(state)
    module.eval()
    return TrainedModel(config=mcfg, train_config=tcfg, module=module)


def save_training_log(model: TrainedModel, path: str | Path) -> None:
    """Training log as JSON lines, one object per epoch."""
    with open(path, "w") as fh:
        for entry in model.log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
