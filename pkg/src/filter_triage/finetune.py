"""Selective fine-tuning and the evaluation instruments built on it.

``finetune`` retrains a copy of the baseline in which only selected filter
channels receive updates; everything else, classifier included by default,
is frozen bit-for-bit.  ``accuracy_curve`` sweeps (mode, train size, seed)
cells and ``invariance_heatmap`` measures how differently clean and
distorted inputs activate a layer, as per-location Hamming disparities of
binarized channel responses.
"""

from __future__ import annotations

import csv
import multiprocessing
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, InputError
from .nn import AdamHyper, TrainabilityMask, apply_masks, trainable_param_count
from .susceptibility import FilterRanking, FilterSelection, _capture_index, select_filters
from .zoo import Model, TrainConfig, TrainHistory, evaluate, train


@dataclass(frozen=True)
class FinetuneConfig:
    adam: AdamHyper = AdamHyper(learning_rate=1e-4)
    patience: int = 15
    max_epochs: int = 200
    batch_size: int = 128
    freeze_classifier: bool = True
    val_fraction: float = 0.2
    seed: int = 0


@dataclass
class DisparityHeatmap:
    layer_id: str
    grid: np.ndarray   # [H, W] ints, each in [0, F]
    total: int

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in self.grid:
                w.writerow([int(v) for v in row])
            w.writerow(["total", self.total])


def build_masks(model: Model, selections: list[FilterSelection]) -> list[TrainabilityMask]:
    """One channel mask per targeted conv layer; errors on filter-count mismatch."""
    masks = []
    for sel in selections:
        f = model.network.filter_count(sel.layer_id)
        if len(sel.selected) > f or (len(sel.selected) and sel.selected.max() >= f):
            raise ConfigurationError(
                f"selection for {sel.layer_id} does not fit its {f} filters")
        flags = np.zeros(f, dtype=bool)
        flags[sel.selected] = True
        masks.append(TrainabilityMask(sel.layer_id, flags))
    return masks


def finetune(model: Model, masks: list[TrainabilityMask], noisy_train: Dataset,
             noisy_val: Dataset, config: FinetuneConfig) -> tuple[Model, TrainHistory]:
    """Train a copy of ``model`` honoring the masks; returns (tuned, history).

    Batchnorm running statistics adapt only in the targeted conv blocks; all
    other layers keep their stats pinned.  Frozen parameters are bitwise
    unchanged in the result.
    """
    tuned = model.copy()
    targeted = {m.layer_id for m in masks}
    apply_masks(tuned.network, masks, classifier_trainable=not config.freeze_classifier)
    tuned.network.set_bn_freeze(freeze_all_except=targeted)
    tc = TrainConfig(max_epochs=config.max_epochs, batch_size=config.batch_size,
                     adam=config.adam, patience=config.patience, seed=config.seed)
    history = train(tuned, noisy_train, noisy_val, tc, masked=True)
    return tuned, history


def _sample_cell(pool: Dataset, n: int, val_fraction: float,
                 rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Seeded train subsample of size n plus a validation draw from the rest."""
    if n < 1:
        raise InputError("train_size must be >= 1")
    if n >= len(pool):
        raise InputError(f"train_size {n} needs a larger distorted pool ({len(pool)})")
    perm = rng.permutation(len(pool))
    val_size = max(1, int(np.ceil(val_fraction * n)))
    val_size = min(val_size, len(pool) - n)
    train_idx = perm[:n]
    val_idx = perm[n:n + val_size]
    return pool.subset(train_idx, "train"), pool.subset(val_idx, "val")


# -- accuracy curve ---------------------------------------------------------

@dataclass
class CurveCell:
    mode: str
    train_size: int
    seed: int
    noisy_test_acc: float
    clean_test_acc: float
    trainable_params: int
    epochs_run: int


@dataclass
class AccuracyCurve:
    cells: list[CurveCell] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "train_size", "seed", "noisy_test_acc",
                        "clean_test_acc", "trainable_params", "epochs_run"])
            for c in sorted(self.cells, key=lambda c: (c.mode, c.train_size, c.seed)):
                w.writerow([c.mode, c.train_size, c.seed, f"{c.noisy_test_acc:.6f}",
                            f"{c.clean_test_acc:.6f}", c.trainable_params, c.epochs_run])

    def median(self, mode: str, train_size: int) -> float:
        accs = [c.noisy_test_acc for c in self.cells
                if c.mode == mode and c.train_size == train_size]
        if not accs:
            raise InputError(f"no cells for ({mode}, {train_size})")
        return float(np.median(accs))


_CTX: dict = {}


def _run_cell(args) -> CurveCell:
    mode, size, seed = args
    base: Model = Model.from_bytes(_CTX["model_bytes"])
    rankings: dict[str, FilterRanking] = _CTX["rankings"]
    fraction: float = _CTX["fraction"]
    cfg: FinetuneConfig = _CTX["config"]
    pool: Dataset = _CTX["pool"]
    noisy_test: Dataset = _CTX["noisy_test"]
    clean_test: Dataset = _CTX["clean_test"]

    selections = [select_filters(rk, mode, fraction) for rk in rankings.values()]
    masks = build_masks(base, selections)
    # identical data draw for every mode at a given (size, seed)
    rng = np.random.default_rng(np.random.SeedSequence([_CTX["sample_seed"], size, seed]))
    tr, va = _sample_cell(pool, size, cfg.val_fraction, rng)
    tuned, hist = finetune(base, masks, tr, va, replace(cfg, seed=seed))
    noisy_acc, _ = evaluate(tuned, noisy_test)
    clean_acc, _ = evaluate(tuned, clean_test)
    return CurveCell(mode, size, seed, noisy_acc, clean_acc,
                     trainable_param_count_of(base, masks, cfg), hist.epochs_run)


def trainable_param_count_of(model: Model, masks: list[TrainabilityMask],
                             config: FinetuneConfig) -> int:
    probe = model.copy()
    apply_masks(probe.network, masks, classifier_trainable=not config.freeze_classifier)
    return trainable_param_count(probe.network)


def accuracy_curve(model: Model, rankings: dict[str, FilterRanking],
                   noisy_pool: Dataset, noisy_test: Dataset, clean_test: Dataset,
                   train_sizes: list[int], seeds: list[int], fraction: float,
                   config: FinetuneConfig, modes: tuple[str, ...] = ("most", "least", "all"),
                   workers: int = 1) -> AccuracyCurve:
    """Fine-tune one fresh copy per (mode, size, seed) cell and score it.

    Cells are independent; with ``workers`` > 1 they run in forked processes
    and are merged by key, so results do not depend on completion order.
    """
    if any(n < 1 for n in train_sizes):
        raise InputError("train sizes must be >= 1")
    if sorted(train_sizes) != list(train_sizes) or len(set(train_sizes)) != len(train_sizes):
        raise InputError("train sizes must be strictly increasing")
    global _CTX
    _CTX = {
        "model_bytes": model.to_bytes(),
        "rankings": rankings,
        "fraction": fraction,
        "config": config,
        "pool": noisy_pool,
        "noisy_test": noisy_test,
        "clean_test": clean_test,
        "sample_seed": config.seed,
    }
    jobs = [(mode, size, seed) for mode in modes for size in train_sizes for seed in seeds]
    if workers > 1:
        with multiprocessing.get_context("fork").Pool(workers) as pool_:
            cells = pool_.map(_run_cell, jobs)
    else:
        cells = [_run_cell(j) for j in jobs]
    return AccuracyCurve(cells)


# -- invariance heatmap -----------------------------------------------------

def invariance_heatmap(model: Model, clean_image: np.ndarray,
                       distorted_image: np.ndarray, layer_id: str) -> DisparityHeatmap:
    """Per-location Hamming distance between binarized channel responses.

    At each spatial position the F activations of each input are reduced to
    a bit (1 iff > 0); the cell value counts differing bits, so it lies in
    [0, F] and the grid total summarizes the layer's response disparity.
    """
    idx = _capture_index(model, layer_id, "post_relu")
    x = model.inputs(np.stack([clean_image, distorted_image]).astype(np.float32))
    _, captured = model.network.forward(x, mode="eval", capture={"maps": idx})
    bits = captured["maps"] > 0                      # [2, F, H, W]
    grid = (bits[0] ^ bits[1]).sum(axis=0).astype(np.int64)
    return DisparityHeatmap(layer_id, grid, int(grid.sum()))
