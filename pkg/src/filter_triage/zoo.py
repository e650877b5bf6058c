"""Baseline architectures and training with validation-based early stopping."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, PreprocStats, compute_stats, preprocess
from .errors import ConfigurationError, InputError, NumericError
from .nn import (Adam, AdamHyper, LayerSpec, Network, checkpoint_load,
                 checkpoint_save, softmax_xent)

INPUT_SHAPE = (3, 32, 32)


def _conv(k, d, s=1, p=1):
    return LayerSpec("conv2d", kernel_size=k, out_channels=d, stride=s, padding=p)


def _conv_bn_relu(k, d, s=1, p=1):
    return [_conv(k, d, s, p), LayerSpec("batchnorm"), LayerSpec("relu")]


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    num_classes: int
    layers: tuple[LayerSpec, ...]


def architecture(name: str, num_classes: int) -> ArchitectureSpec:
    """Return one of the two presets; conv layers keep 3x3/pad-1 geometry."""
    if num_classes not in (10, 100):
        raise ConfigurationError(f"presets support 10 or 100 classes, got {num_classes}")
    if name == "cifar10-small":
        layers = (
            *_conv_bn_relu(3, 32),
            LayerSpec("maxpool", kernel_size=2, stride=2),
            *_conv_bn_relu(3, 16),
            LayerSpec("maxpool", kernel_size=2, stride=2),
            LayerSpec("dense", out_dim=128),
            LayerSpec("relu"),
            LayerSpec("dropout", drop_p=0.5),
            LayerSpec("dense", out_dim=num_classes),
            LayerSpec("softmax"),
        )
    elif name == "allconv-bn":
        layers = (
            *_conv_bn_relu(3, 96),
            *_conv_bn_relu(3, 96),
            *_conv_bn_relu(3, 96, s=2),
            *_conv_bn_relu(3, 192),
            *_conv_bn_relu(3, 192),
            *_conv_bn_relu(3, 192, s=2),
            *_conv_bn_relu(3, 192),
            *_conv_bn_relu(1, 192, p=0),
            *_conv_bn_relu(1, num_classes, p=0),
            LayerSpec("global_avg_pool"),
            LayerSpec("softmax"),
        )
    else:
        raise ConfigurationError(f"unknown architecture {name!r}")
    return ArchitectureSpec(name, num_classes, layers)


@dataclass
class Model:
    """A network plus everything needed to feed it raw [0,255] images."""

    network: Network
    arch: ArchitectureSpec
    preproc: PreprocStats | None = None

    def to_bytes(self) -> bytes:
        meta = {}
        if self.preproc is not None:
            meta["preproc_mean"] = np.asarray(self.preproc.mean, dtype=np.float64)
            meta["preproc_std"] = np.asarray(self.preproc.std, dtype=np.float64)
        return checkpoint_save(self.network, arch=self.arch.name, meta=meta)

    @staticmethod
    def from_bytes(data: bytes) -> "Model":
        network, arch_name, meta = checkpoint_load(data)
        arch = architecture(arch_name, network.output_dim)
        preproc = None
        if "preproc_mean" in meta:
            preproc = PreprocStats(tuple(meta["preproc_mean"].tolist()),
                                   tuple(meta["preproc_std"].tolist()))
        return Model(network, arch, preproc)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @staticmethod
    def load(path: str | Path) -> "Model":
        return Model.from_bytes(Path(path).read_bytes())

    def copy(self) -> "Model":
        return Model(self.network.copy(), self.arch, self.preproc)

    def inputs(self, images: np.ndarray) -> np.ndarray:
        if self.preproc is None:
            raise ConfigurationError("model has no preprocessing statistics yet")
        return preprocess(images, self.preproc, dtype=self.network.dtype)


def build_model(arch: ArchitectureSpec, seed: int) -> Model:
    network = Network(list(arch.layers), INPUT_SHAPE, seed)
    return Model(network, arch)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    batch_size: int = 128
    adam: AdamHyper = AdamHyper()
    patience: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("patience, batch_size and max_epochs must be >= 1")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0          # 1-based
    best_checkpoint: bytes = b""
    steps: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
            for i in range(self.epochs_run):
                w.writerow([i + 1, f"{self.train_loss[i]:.6f}",
                            f"{self.val_loss[i]:.6f}", f"{self.val_acc[i]:.6f}"])


def _diagnose_nonfinite(network: Network, xb: np.ndarray) -> str:
    x = xb
    for i in range(len(network.layers)):
        layer = network.layers[i]
        if layer.name == "softmax":
            break
        x = layer.forward(x, "eval", None)
        if not np.all(np.isfinite(x)):
            return layer.name
    return "loss"


def train(model: Model, train_set: Dataset, val_set: Dataset,
          config: TrainConfig, masked: bool = False,
          eval_batch: int = 512) -> TrainHistory:
    """Adam training with early stopping on validation loss.

    Stops once ``patience`` epochs pass without a new best validation loss
    and restores the best checkpoint into the model.  With ``masked`` the
    caller has installed trainability masks and expects them honored (the
    optimizer always honors masks; the flag only skips stats computation).
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise InputError("train and validation sets must be nonempty")
    if model.preproc is None:
        if masked:
            raise ConfigurationError("fine-tuning requires the baseline's stats")
        model.preproc = compute_stats(train_set.images)

    x_train = model.inputs(train_set.images)
    y_train = train_set.labels
    x_val = model.inputs(val_set.images)
    y_val = val_set.labels

    net = model.network
    opt = Adam(net.params(), config.adam)
    rng = np.random.default_rng(config.seed)
    hist = TrainHistory()
    best_loss = np.inf

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(len(y_train))
        losses = []
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start:start + config.batch_size]
            logits = net.forward(x_train[idx], "train", rng)
            loss, grad = softmax_xent(logits, y_train[idx])
            if not np.isfinite(loss):
                layer = _diagnose_nonfinite(net, x_train[idx])
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}, "
                    f"first non-finite output in layer {layer}")
            net.zero_grad()
            net.backward(grad)
            opt.step()
            hist.steps += 1
            losses.append(loss)

        val_loss, val_acc = _eval_arrays(net, x_val, y_val, eval_batch)
        hist.train_loss.append(float(np.mean(losses)))
        hist.val_loss.append(val_loss)
        hist.val_acc.append(val_acc)

        if val_loss < best_loss:
            best_loss = val_loss
            hist.best_epoch = epoch
            hist.best_checkpoint = model.to_bytes()
        elif epoch - hist.best_epoch >= config.patience:
            break

    restored = Model.from_bytes(hist.best_checkpoint)
    model.network = restored.network
    return hist


def _eval_arrays(net: Network, x: np.ndarray, y: np.ndarray,
                 batch: int = 512) -> tuple[float, float]:
    losses, correct = [], 0
    for start in range(0, len(y), batch):
        xb, yb = x[start:start + batch], y[start:start + batch]
        logits = net.forward(xb, "eval")
        loss, _ = softmax_xent(logits, yb)
        losses.append(loss * len(yb))
        correct += int((logits.argmax(axis=1) == yb).sum())
    return float(np.sum(losses) / len(y)), correct / len(y)


def evaluate(model: Model, dataset: Dataset, batch: int = 512) -> tuple[float, float]:
    """(accuracy, mean loss) under eval mode; mutates nothing."""
    if len(dataset) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    x = model.inputs(dataset.images)
    loss, acc = _eval_arrays(model.network, x, dataset.labels, batch)
    return acc, loss
