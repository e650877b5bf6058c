"""Non-associative ranking via one-medoid exemplars.

When no clean/distorted pairing exists, each dataset is represented by its
medoid (the member minimizing total distance to all others) and filters are
ranked by the per-filter EMD between the two medoids' activation maps.  A
single comparison needs no vote aggregation, so the distances sort directly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .data import Dataset
from .emd import marginal_distances_batch
from .errors import InputError, UsageError
from .susceptibility import FilterRanking, _batched_maps, _capture_index
from .zoo import Model


@dataclass(frozen=True)
class FeatureRep:
    kind: str                      # "pixels" | "collapsed-activations"
    layer_id: str = ""
    binarize: bool = False

    def __post_init__(self):
        if self.kind not in ("pixels", "collapsed-activations"):
            raise InputError(f"unknown feature kind {self.kind!r}")
        if self.binarize and self.kind != "collapsed-activations":
            raise InputError("binarize is only valid for collapsed-activations")
        if self.kind == "collapsed-activations" and not self.layer_id:
            raise InputError("collapsed-activations needs a layer_id")


@dataclass
class Exemplar:
    tag: str                       # "clean" | "noisy"
    index: int                     # index into the dataset it represents
    total_distance: float


def featurize(dataset: Dataset, rep: FeatureRep, model: Model | None = None) -> np.ndarray:
    """One feature vector per image: raw pixels or flattened activation maps."""
    if rep.kind == "pixels":
        return dataset.images.reshape(len(dataset), -1).astype(np.float32)
    if model is None:
        raise UsageError("collapsed-activations features need the baseline model")
    idx = _capture_index(model, rep.layer_id, "post_relu")
    maps = _batched_maps(model, dataset.images, idx)
    feats = maps.reshape(len(dataset), -1)
    if rep.binarize:
        feats = (feats > 0).astype(np.uint8)
    return feats


def _pairwise(features: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        return cdist(features, features, "euclidean")
    if metric == "hamming":
        if not np.isin(features, (0, 1)).all():
            raise UsageError("hamming distance requires binarized features")
        # unnormalized: number of differing bits
        return cdist(features.astype(np.float64), features.astype(np.float64), "cityblock")
    raise UsageError(f"unknown metric {metric!r}")


def medoid(features: np.ndarray, metric: str = "euclidean") -> tuple[int, float]:
    """Exact 1-medoid: argmin_i sum_j d(x_i, x_j); ties to the lowest index.

    Returns (index, total distance).  O(n^2) pairwise distances - exact
    beats iterating PAM at this scale.
    """
    n = len(features)
    if n == 0:
        raise InputError("cannot take the medoid of an empty set")
    totals = _pairwise(features, metric).sum(axis=1)
    best = int(np.argmin(totals))  # argmin returns the first minimum
    return best, float(totals[best])


def find_exemplar(dataset: Dataset, rep: FeatureRep, metric: str, tag: str,
                  model: Model | None = None, subsample: int = 1000,
                  seed: int = 0) -> Exemplar:
    """Medoid of a dataset, optionally on a seeded subsample for large n."""
    if len(dataset) > subsample:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(dataset), size=subsample, replace=False))
        pool = dataset.subset(idx)
    else:
        idx = np.arange(len(dataset))
        pool = dataset
    feats = featurize(pool, rep, model)
    local, total = medoid(feats, metric)
    return Exemplar(tag, int(idx[local]), total)


def nonassoc_rank(model: Model, clean_set: Dataset, noisy_set: Dataset,
                  layer_id: str, rep: FeatureRep, metric: str = "euclidean",
                  capture: str = "post_relu", subsample: int = 1000,
                  seed: int = 0) -> tuple[FilterRanking, Exemplar, Exemplar]:
    """Rank filters by per-filter EMD between the two dataset exemplars."""
    ex_clean = find_exemplar(clean_set, rep, metric, "clean", model, subsample, seed)
    ex_noisy = find_exemplar(noisy_set, rep, metric, "noisy", model, subsample, seed)
    idx = _capture_index(model, layer_id, capture)
    maps_c = _batched_maps(model, clean_set.images[ex_clean.index][None], idx)[0]
    maps_n = _batched_maps(model, noisy_set.images[ex_noisy.index][None], idx)[0]
    distances = marginal_distances_batch(maps_c, maps_n)
    f = len(distances)
    order = np.lexsort((np.arange(f), -distances))
    ranking = FilterRanking(layer_id, order, np.zeros(f, dtype=np.int64), distances)
    return ranking, ex_clean, ex_noisy


def ranking_overlap(a: FilterRanking, b: FilterRanking, k: int) -> int:
    """|top-k(a) intersect top-k(b)| - ordering inside the top-k is ignored."""
    if a.layer_id != b.layer_id:
        raise UsageError(f"rankings compare different layers: {a.layer_id} vs {b.layer_id}")
    if k > a.filter_count or k > b.filter_count:
        raise UsageError(f"k={k} exceeds the filter count")
    return len(set(a.order[:k].tolist()) & set(b.order[:k].tolist()))


def exemplar_report(path: str | Path, exemplars: list[Exemplar]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tag", "medoid_index", "total_distance"])
        for ex in exemplars:
            w.writerow([ex.tag, ex.index, f"{ex.total_distance:.6f}"])
