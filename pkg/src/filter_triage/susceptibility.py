"""Associative ranking pipeline: per-filter distances, Borda votes, selection.

For every (clean, distorted) image pair the network's activation maps at a
conv layer are compared filter-by-filter with an EMD metric, giving an
N x F distance matrix.  Each image then votes: filters sorted by descending
distance, the ten most-changed earn 10, 9, ..., 1 points.  Filters are
finally ranked by total points.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .emd import emd_exact_2d, marginal_distances_batch, normalize_map
from .errors import InputError, UsageError
from .zoo import Model

TRUNCATION = 10  # votes score the ten most-changed filters: 10, 9, ..., 1

CAPTURE_POINTS = ("post_relu", "post_bn")


@dataclass
class ActivationSet:
    layer_id: str
    maps: np.ndarray  # [F, H, W]

    @property
    def filter_count(self) -> int:
        return self.maps.shape[0]


@dataclass
class DistanceMatrix:
    values: np.ndarray            # [N, F], non-negative
    image_ids: np.ndarray         # [N]
    layer_id: str
    metric: str

    def __post_init__(self):
        if self.values.ndim != 2 or len(self.values) < 1:
            raise InputError("distance matrix must be a nonempty N x F array")
        if (self.values < 0).any():
            raise InputError("distances cannot be negative")

    def to_csv(self, path: str | Path) -> None:
        f = self.values.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image_id"] + [f"f{j}" for j in range(f)])
            for i, row in enumerate(self.values):
                w.writerow([int(self.image_ids[i])] + [f"{v:.8f}" for v in row])


@dataclass
class FilterRanking:
    layer_id: str
    order: np.ndarray             # filter indices, most -> least susceptible
    scores: np.ndarray            # borda score per filter (indexed by filter)
    mean_distance: np.ndarray     # indexed by filter
    tied_groups: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        f = len(self.order)
        if sorted(self.order.tolist()) != list(range(f)):
            raise InputError("ranking order must be a permutation of 0..F-1")

    @property
    def filter_count(self) -> int:
        return len(self.order)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "filter_index", "borda_score", "mean_distance"])
            for r, j in enumerate(self.order):
                w.writerow([r, int(j), int(self.scores[j]), f"{self.mean_distance[j]:.8f}"])

    @staticmethod
    def from_csv(path: str | Path, layer_id: str = "") -> "FilterRanking":
        rows = list(csv.DictReader(open(path, newline="")))
        order = np.array([int(r["filter_index"]) for r in rows])
        scores = np.zeros(len(order), dtype=np.int64)
        mean = np.zeros(len(order))
        for r in rows:
            scores[int(r["filter_index"])] = int(r["borda_score"])
            mean[int(r["filter_index"])] = float(r["mean_distance"])
        return FilterRanking(layer_id, order, scores, mean)


@dataclass
class FilterSelection:
    layer_id: str
    mode: str                     # "most" | "least" | "all"
    fraction: float
    selected: np.ndarray          # filter indices

    @property
    def count(self) -> int:
        return len(self.selected)


# ---------------------------------------------------------------------------
# activation extraction
# ---------------------------------------------------------------------------

def _capture_index(model: Model, layer_id: str, capture: str) -> int:
    if layer_id not in model.network.capture_points:
        raise UsageError(f"{layer_id!r} is not a conv layer of this network "
                         f"(have {model.network.conv_ids})")
    if capture not in CAPTURE_POINTS:
        raise UsageError(f"capture must be one of {CAPTURE_POINTS}")
    pts = model.network.capture_points[layer_id]
    return pts.get(capture, pts.get("post_bn", pts["conv"]))


def extract_activations(model: Model, image: np.ndarray, layer_id: str,
                        capture: str = "post_relu") -> ActivationSet:
    """Eval-mode activation maps of one raw [3,32,32] image at a conv layer."""
    idx = _capture_index(model, layer_id, capture)
    x = model.inputs(image[None].astype(np.float32))
    _, captured = model.network.forward(x, mode="eval", capture={"maps": idx})
    return ActivationSet(layer_id, captured["maps"][0])


def _batched_maps(model: Model, images: np.ndarray, idx: int,
                  batch: int = 256) -> np.ndarray:
    outs = []
    for start in range(0, len(images), batch):
        x = model.inputs(images[start:start + batch].astype(np.float32))
        _, captured = model.network.forward(x, mode="eval", capture={"maps": idx})
        outs.append(captured["maps"])
    return np.concatenate(outs)


def compute_distance_matrix(model: Model, clean_images: np.ndarray,
                            distorted_images: np.ndarray, layer_id: str,
                            metric: str = "marginal", capture: str = "post_relu",
                            image_ids: np.ndarray | None = None) -> DistanceMatrix:
    """Per-filter EMD between clean/distorted activations for index-aligned pairs."""
    if len(clean_images) == 0:
        raise InputError("need at least one image pair")
    if len(clean_images) != len(distorted_images):
        raise InputError("clean and distorted stacks must be index-aligned")
    idx = _capture_index(model, layer_id, capture)
    maps_c = _batched_maps(model, clean_images, idx)
    maps_d = _batched_maps(model, distorted_images, idx)
    if metric == "marginal":
        values = marginal_distances_batch(maps_c, maps_d)
    elif metric == "exact":
        n, f = maps_c.shape[:2]
        values = np.zeros((n, f))
        for i in range(n):
            for j in range(f):
                try:
                    values[i, j] = emd_exact_2d(normalize_map(maps_c[i, j]),
                                                normalize_map(maps_d[i, j]))
                except Exception as e:
                    raise UsageError(f"exact EMD failed for pair {i}, filter {j}: {e}") from e
    else:
        raise UsageError(f"unknown metric {metric!r}; expected 'marginal' or 'exact'")
    if image_ids is None:
        image_ids = np.arange(len(clean_images))
    return DistanceMatrix(values, np.asarray(image_ids), layer_id, metric)


# ---------------------------------------------------------------------------
# Borda aggregation and selection
# ---------------------------------------------------------------------------

def borda_rank(matrix: DistanceMatrix) -> FilterRanking:
    """Truncated Borda count over per-image descending-distance votes.

    Each image awards 10, 9, ..., 1 points to its ten most-changed filters
    (fewer when F < 10).  Per-image ties go to the lower filter index; final
    ties go to the higher mean distance, then the lower index.
    """
    d = matrix.values
    n, f = d.shape
    top = min(TRUNCATION, f)
    # stable argsort on -d resolves equal distances in favor of lower index
    votes = np.argsort(-d, axis=1, kind="stable")[:, :top]
    points = np.arange(TRUNCATION, TRUNCATION - top, -1)
    scores = np.zeros(f, dtype=np.int64)
    np.add.at(scores, votes.ravel(), np.tile(points, n))

    mean_distance = d.mean(axis=0)
    order = np.lexsort((np.arange(f), -mean_distance, -scores))

    tied_groups = []
    for s in np.unique(scores):
        group = np.flatnonzero(scores == s)
        if len(group) > 1:
            tied_groups.append(sorted(int(j) for j in group))
    return FilterRanking(matrix.layer_id, order, scores, mean_distance, tied_groups)


def select_filters(ranking: FilterRanking, mode: str, fraction: float) -> FilterSelection:
    """Top/bottom slice of the ranking: max(1, floor(fraction * F)) filters."""
    if not 0.0 < fraction <= 1.0:
        raise InputError(f"fraction must be in (0, 1], got {fraction}")
    f = ranking.filter_count
    if mode == "all":
        return FilterSelection(ranking.layer_id, mode, fraction, ranking.order.copy())
    k = max(1, int(np.floor(fraction * f)))
    if mode == "most":
        sel = ranking.order[:k]
    elif mode == "least":
        sel = ranking.order[f - k:]
    else:
        raise InputError(f"mode must be most|least|all, got {mode!r}")
    return FilterSelection(ranking.layer_id, mode, fraction, sel.copy())
