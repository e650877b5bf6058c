"""End-to-end experiment orchestration.

A run directory collects every artifact of one configuration: baseline
checkpoint and training history, rankings (CSV + figure), the accuracy
curve, invariance heatmaps, the ranking-overlap table and a manifest.
Stages run in order; any failure leaves a FAILED marker naming the stage
while keeping partial outputs.
"""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__, report
from .config import ExperimentConfig
from .data import Dataset, SplitSpec, compute_stats, load_cifar10, load_cifar100, \
    load_internal, split
from .distortion import DistortionSpec, distort_dataset
from .errors import ConfigurationError, InputError
from .exemplar import FeatureRep, exemplar_report, nonassoc_rank, ranking_overlap
from .finetune import FinetuneConfig, accuracy_curve, build_masks, finetune, \
    invariance_heatmap
from .nn import AdamHyper
from .susceptibility import FilterRanking, borda_rank, compute_distance_matrix, \
    select_filters
from .synthetic import generate_dataset
from .zoo import Model, TrainConfig, architecture, build_model, evaluate, train


class Runner:
    def __init__(self, config: ExperimentConfig, out_dir: str | Path, workers: int = 1):
        self.cfg = config
        self.out = Path(out_dir)
        self.workers = workers
        self.manifest: dict = {"config": config.to_dict(), "version": __version__,
                               "stages": {}, "artifacts": []}
        self._data: dict[str, Dataset] = {}
        self._model: Model | None = None
        self._rankings: dict[str, FilterRanking] = {}

    # -- plumbing -----------------------------------------------------------

    def preflight(self) -> None:
        """Validate referenced paths before any compute."""
        cfg = self.cfg
        if cfg.baseline_checkpoint and not Path(cfg.baseline_checkpoint).exists():
            raise InputError(f"baseline checkpoint not found: {cfg.baseline_checkpoint}")
        if cfg.dataset.format in ("cifar10", "cifar100", "internal"):
            if not cfg.dataset.path:
                raise InputError("dataset.path is required for non-synthetic data")
            if not Path(cfg.dataset.path).exists():
                raise InputError(f"dataset path not found: {cfg.dataset.path}")
            if cfg.dataset.format == "internal" and not Path(cfg.dataset.test_path).exists():
                raise InputError(f"dataset test path not found: {cfg.dataset.test_path}")
        self.out.mkdir(parents=True, exist_ok=True)

    def _emit(self, name: str) -> Path:
        path = self.out / name
        self.manifest["artifacts"].append(name)
        return path

    def _stage(self, name: str):
        runner = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.time()
                return self

            def __exit__(self, exc_type, exc, tb):
                runner.manifest["stages"][name] = {
                    "seconds": round(time.time() - self.t0, 3),
                    "ok": exc_type is None,
                }
                if exc_type is not None:
                    (runner.out / "FAILED").write_text(f"stage: {name}\nerror: {exc}\n")
                    runner.write_manifest()
                return False

        return _Ctx()

    def write_manifest(self) -> None:
        self.manifest["written_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        (self.out / "manifest.yaml").write_text(
            yaml.safe_dump(self.manifest, sort_keys=True), "utf-8")

    # -- data ---------------------------------------------------------------

    def data(self) -> tuple[Dataset, Dataset, Dataset]:
        """(train, val, test) clean splits, cached across stages."""
        if "train" in self._data:
            return self._data["train"], self._data["val"], self._data["test"]
        cfg = self.cfg
        with self._stage("data"):
            if cfg.dataset.format == "synthetic":
                pool = generate_dataset(cfg.dataset.synthetic_train, "train", cfg.seed)
                test = generate_dataset(cfg.dataset.synthetic_test, "test", cfg.seed)
            elif cfg.dataset.format == "internal":
                pool = load_internal(cfg.dataset.path)
                test = load_internal(cfg.dataset.test_path)
            elif cfg.dataset.format == "cifar100":
                pool = load_cifar100(cfg.dataset.path, "train")
                test = load_cifar100(cfg.dataset.path, "test")
            else:
                pool = load_cifar10(cfg.dataset.path, "train")
                test = load_cifar10(cfg.dataset.path, "test")
            tr, va = split(pool, SplitSpec(cfg.split.ratio, cfg.seed, cfg.split.stratified))
            if cfg.dataset.train_limit and cfg.dataset.train_limit < len(tr):
                rng = np.random.default_rng(cfg.seed)
                idx = np.sort(rng.choice(len(tr), cfg.dataset.train_limit, replace=False))
                tr = tr.subset(idx, "train")
            if cfg.evaluation.test_limit and cfg.evaluation.test_limit < len(test):
                test = test.subset(np.arange(cfg.evaluation.test_limit), "test")
            self._data.update(train=tr, val=va, test=test)
        return tr, va, test

    def distortion_spec(self) -> DistortionSpec:
        d = self.cfg.distortion
        return DistortionSpec(d.kind, d.sigma, d.seed)

    # -- stages -------------------------------------------------------------

    def baseline(self) -> Model:
        if self._model is not None:
            return self._model
        cfg = self.cfg
        tr, va, _ = self.data()
        ckpt = self._emit("baseline.ckpt")
        if cfg.baseline_checkpoint:
            with self._stage("baseline"):
                model = Model.load(cfg.baseline_checkpoint)
                if model.arch.name != cfg.architecture:
                    raise ConfigurationError(
                        f"checkpoint is {model.arch.name}, config wants {cfg.architecture}")
                model.save(ckpt)
        elif ckpt.exists():
            with self._stage("baseline"):
                model = Model.load(ckpt)
        else:
            with self._stage("baseline"):
                arch = architecture(cfg.architecture, tr.class_count)
                model = build_model(arch, cfg.seed)
                model.preproc = compute_stats(tr.images)
                tc = TrainConfig(max_epochs=cfg.training.max_epochs,
                                 batch_size=cfg.training.batch_size,
                                 adam=AdamHyper(learning_rate=cfg.training.learning_rate),
                                 patience=cfg.training.patience, seed=cfg.seed)
                history = train(model, tr, va, tc)
                history.to_csv(self._emit("baseline_history.csv"))
                model.save(ckpt)
        self._model = model
        return model

    def rank(self) -> dict[str, FilterRanking]:
        """Per-layer rankings via the configured method, with CSVs + figures."""
        if self._rankings:
            return self._rankings
        cfg = self.cfg
        model = self.baseline()
        tr, _, _ = self.data()
        spec = self.distortion_spec()
        with self._stage("rank"):
            for layer_id in cfg.layers:
                if cfg.ranking.method == "assoc":
                    rng = np.random.default_rng(cfg.seed)
                    n = min(cfg.ranking.pairs, len(tr))
                    idx = np.sort(rng.choice(len(tr), n, replace=False))
                    clean = tr.images[idx]
                    distorted = distort_dataset(tr, spec, idx).images
                    matrix = compute_distance_matrix(
                        model, clean, distorted, layer_id,
                        metric=cfg.ranking.metric, capture=cfg.ranking.capture,
                        image_ids=idx)
                    matrix.to_csv(self._emit(f"distances_{layer_id}.csv"))
                    ranking = borda_rank(matrix)
                else:
                    ranking, ex_c, ex_n = self._nonassoc(model, tr, layer_id,
                                                         cfg.ranking.features,
                                                         cfg.ranking.distance)
                    exemplar_report(self._emit(f"exemplars_{layer_id}.csv"), [ex_c, ex_n])
                ranking.to_csv(self._emit(f"ranking_{layer_id}.csv"))
                report.save_ranking_figure(
                    ranking, self._emit(f"ranking_{layer_id}.png"),
                    title=f"{cfg.ranking.method} susceptibility, {layer_id}, {spec.tag()}")
                self._rankings[layer_id] = ranking
        return self._rankings

    def _nonassoc(self, model: Model, tr: Dataset, layer_id: str,
                  features: str, distance: str):
        """Clean and distorted halves of the training split, no pairing."""
        cfg = self.cfg
        half = len(tr) // 2
        clean_set = tr.subset(np.arange(half))
        noisy_set = distort_dataset(tr, self.distortion_spec(),
                                    np.arange(half, len(tr)))
        kind = "pixels" if features == "pixels" else "collapsed-activations"
        rep = FeatureRep(kind, layer_id=layer_id,
                         binarize=(distance == "hamming"))
        return nonassoc_rank(model, clean_set, noisy_set, layer_id, rep,
                             metric=distance, capture=cfg.ranking.capture,
                             subsample=cfg.ranking.subsample, seed=cfg.seed)

    def _finetune_cfg(self, seed: int = 0) -> FinetuneConfig:
        f = self.cfg.finetune
        return FinetuneConfig(adam=AdamHyper(learning_rate=f.learning_rate),
                              patience=f.patience, max_epochs=f.max_epochs,
                              batch_size=f.batch_size,
                              freeze_classifier=f.freeze_classifier,
                              val_fraction=f.val_fraction, seed=seed)

    def _pools(self) -> tuple[Dataset, Dataset, Dataset]:
        """(distorted train pool, distorted test, clean test)."""
        tr, _, test = self.data()
        spec = self.distortion_spec()
        need = max(self.cfg.train_sizes)
        pool_size = min(len(tr), int(need * 1.25) + 2000)
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, 17]))
        idx = np.sort(rng.choice(len(tr), pool_size, replace=False))
        noisy_pool = distort_dataset(tr, spec, idx)
        noisy_test = distort_dataset(test, spec)
        return noisy_pool, noisy_test, test

    def curve(self):
        cfg = self.cfg
        model = self.baseline()
        rankings = self.rank()
        with self._stage("curve"):
            noisy_pool, noisy_test, clean_test = self._pools()
            base_noisy, _ = evaluate(model, noisy_test)
            base_clean, _ = evaluate(model, clean_test)
            curve = accuracy_curve(model, rankings, noisy_pool, noisy_test, clean_test,
                                   cfg.train_sizes, cfg.seeds, cfg.fraction,
                                   self._finetune_cfg(cfg.seed), tuple(cfg.modes),
                                   workers=self.workers)
            curve.to_csv(self._emit("curve.csv"))
            report.save_curve_figure(
                curve, self._emit("curve.png"),
                title=f"{cfg.architecture}, {self.distortion_spec().tag()} "
                      f"(baseline noisy {base_noisy:.3f} / clean {base_clean:.3f})")
            with open(self._emit("baseline_accuracy.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["noisy_test_acc", "clean_test_acc"])
                w.writerow([f"{base_noisy:.6f}", f"{base_clean:.6f}"])
        return curve

    def tuned_model(self, mode: str = "most", train_size: int | None = None) -> Model:
        """One fine-tuned model for inspection stages."""
        cfg = self.cfg
        model = self.baseline()
        rankings = self.rank()
        noisy_pool, _, _ = self._pools()
        n = train_size or max(cfg.train_sizes)
        selections = [select_filters(rk, mode, cfg.fraction) for rk in rankings.values()]
        masks = build_masks(model, selections)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, n, cfg.seeds[0]]))
        from .finetune import _sample_cell
        tr_s, va_s = _sample_cell(noisy_pool, min(n, len(noisy_pool) - 1),
                                  cfg.finetune.val_fraction, rng)
        tuned, _ = finetune(model, masks, tr_s, va_s, self._finetune_cfg(cfg.seeds[0]))
        return tuned

    def invariance(self):
        cfg = self.cfg
        model = self.baseline()
        with self._stage("invariance"):
            tuned = self.tuned_model("most")
            _, noisy_test, clean_test = self._pools()
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 23]))
            picks = np.sort(rng.choice(len(clean_test), cfg.evaluation.heatmap_images,
                                       replace=False))
            rows = []
            first_maps = []
            for i, img_idx in enumerate(picks):
                clean_img = clean_test.images[img_idx]
                noisy_img = noisy_test.images[img_idx]
                for layer_id in cfg.layers:
                    hm_base = invariance_heatmap(model, clean_img, noisy_img, layer_id)
                    hm_tuned = invariance_heatmap(tuned, clean_img, noisy_img, layer_id)
                    rows.append({"image_id": int(img_idx), "layer": layer_id,
                                 "baseline_total": hm_base.total,
                                 "tuned_total": hm_tuned.total})
                    if i == 0:
                        hm_base.to_csv(self._emit(f"heatmap_{layer_id}_baseline.csv"))
                        hm_tuned.to_csv(self._emit(f"heatmap_{layer_id}_tuned.csv"))
                        first_maps += [(hm_base, f"{layer_id} base"),
                                       (hm_tuned, f"{layer_id} tuned")]
            with open(self._emit("invariance_summary.csv"), "w", newline="") as fh:
                w = csv.DictWriter(fh, ["image_id", "layer", "baseline_total", "tuned_total"])
                w.writeheader()
                w.writerows(rows)
            report.save_heatmap_figure([m for m, _ in first_maps],
                                       self._emit("heatmaps.png"),
                                       labels=[l for _, l in first_maps])
        return rows

    def compare_rankings(self):
        """Overlap of the associative top-quartile with non-associative ones."""
        cfg = self.cfg
        model = self.baseline()
        tr, _, _ = self.data()
        with self._stage("compare"):
            rows = []
            assoc = dict(self.rank()) if cfg.ranking.method == "assoc" else {}
            for layer_id in cfg.layers:
                if layer_id not in assoc:
                    continue
                k = max(1, int(np.floor(cfg.fraction * assoc[layer_id].filter_count)))
                combos = [("pixels", "euclidean"), ("ftm", "euclidean"), ("ftm", "hamming")]
                for features, distance in combos:
                    ranking, _, _ = self._nonassoc(model, tr, layer_id, features, distance)
                    rows.append({"layer": layer_id, "features": features,
                                 "distance": distance, "k": k,
                                 "overlap": ranking_overlap(assoc[layer_id], ranking, k)})
            with open(self._emit("ranking_overlap.csv"), "w", newline="") as fh:
                w = csv.DictWriter(fh, ["layer", "features", "distance", "k", "overlap"])
                w.writeheader()
                w.writerows(rows)
            if rows:
                report.save_overlap_figure(rows, self._emit("ranking_overlap.png"))
        return rows

    def run(self) -> Path:
        """baseline -> rank -> curve -> invariance -> compare, then manifest."""
        self.preflight()
        try:
            self.baseline()
            self.rank()
            self.curve()
            self.invariance()
            if self.cfg.ranking.method == "assoc":
                self.compare_rankings()
        finally:
            self.write_manifest()
        return self.out
