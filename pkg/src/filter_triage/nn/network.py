"""A network is an ordered stack of layers built from LayerSpecs.

Layers are named by kind and running index ("conv1", "bn2", ...).  Conv
layers double as the unit of susceptibility analysis: for each one the
network knows where its post-batchnorm and post-relu capture points sit.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, UsageError
from . import functional as F
from .layers import (BatchNorm, Conv2d, Dense, Dropout, GlobalAvgPool, Layer,
                     LayerSpec, MaxPool, Param, ReLU, Softmax)


class Network:
    def __init__(self, specs: list[LayerSpec], input_shape: tuple[int, int, int],
                 seed: int, dtype=np.float32):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.layers: list[Layer] = []
        self.conv_ids: list[str] = []
        # conv id -> (conv layer index, post-bn index, post-relu index)
        self.capture_points: dict[str, dict[str, int]] = {}
        self._build(np.random.default_rng(seed))

    # -- construction -------------------------------------------------------

    def _build(self, rng: np.random.Generator):
        c, h, w = self.input_shape
        shape: tuple = (1, c, h, w)
        counts: dict[str, int] = {}
        for spec in self.specs:
            counts[spec.kind] = counts.get(spec.kind, 0) + 1
            n = counts[spec.kind]
            if spec.kind == "conv2d":
                name = f"conv{n}"
                layer = Conv2d(spec, name, shape[1], rng, self.dtype)
                h_out = (shape[2] + 2 * spec.padding - spec.kernel_size) // spec.stride + 1
                w_out = (shape[3] + 2 * spec.padding - spec.kernel_size) // spec.stride + 1
                if h_out < 1 or w_out < 1:
                    raise ConfigurationError(f"{name}: output collapses to zero size")
                shape = (1, spec.out_channels, h_out, w_out)
                self.conv_ids.append(name)
                self.capture_points[name] = {"conv": len(self.layers)}
            elif spec.kind == "maxpool":
                layer = MaxPool(spec, f"pool{n}")
                stride = spec.stride if spec.stride else spec.kernel_size
                shape = (1, shape[1],
                         (shape[2] - spec.kernel_size) // stride + 1,
                         (shape[3] - spec.kernel_size) // stride + 1)
            elif spec.kind == "batchnorm":
                if len(shape) not in (2, 4):
                    raise ConfigurationError("batchnorm needs 2-d or 4-d input")
                layer = BatchNorm(spec, f"bn{n}", shape[1], self.dtype)
                self._note_capture("post_bn", len(self.layers))
            elif spec.kind == "relu":
                layer = ReLU(spec, f"relu{n}")
                self._note_capture("post_relu", len(self.layers))
            elif spec.kind == "dense":
                in_dim = int(np.prod(shape[1:]))
                layer = Dense(spec, f"dense{n}", in_dim, rng, self.dtype)
                shape = (1, spec.out_dim)
            elif spec.kind == "dropout":
                layer = Dropout(spec, f"dropout{n}")
            elif spec.kind == "global_avg_pool":
                layer = GlobalAvgPool(spec, "gap")
                shape = (1, shape[1])
            elif spec.kind == "softmax":
                layer = Softmax(spec, "softmax")
            else:  # pragma: no cover - LayerSpec already validates
                raise ConfigurationError(f"unknown layer kind {spec.kind!r}")
            self.layers.append(layer)
        self.output_dim = shape[1]
        if self.layers and isinstance(self.layers[0], Conv2d):
            self.layers[0].need_grad_input = False

    def _note_capture(self, key: str, layer_index: int):
        """Attach a capture point to the most recent conv still missing one."""
        for cid in reversed(self.conv_ids):
            pts = self.capture_points[cid]
            if key not in pts:
                # only adopt units that directly follow this conv's block
                if layer_index - pts["conv"] <= 3:
                    pts[key] = layer_index
                break

    # -- introspection ------------------------------------------------------

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params]

    def param_by_name(self, name: str) -> Param:
        for p in self.params():
            if p.name == name:
                return p
        raise UsageError(f"no parameter named {name!r}")

    def layer_by_name(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise UsageError(f"no layer named {name!r}")

    def filter_count(self, conv_id: str) -> int:
        return self.layer_by_name(conv_id).spec.out_channels

    def conv_block_layers(self, conv_id: str) -> list[Layer]:
        """The conv layer plus the batchnorm (if any) that normalizes it."""
        pts = self.capture_points[conv_id]
        out = [self.layers[pts["conv"]]]
        if "post_bn" in pts:
            out.append(self.layers[pts["post_bn"]])
        return out

    # -- execution ----------------------------------------------------------

    def _logits_index(self) -> int:
        end = len(self.layers)
        if self.layers and isinstance(self.layers[-1], Softmax):
            end -= 1
        return end

    def forward(self, x: np.ndarray, mode: str = "eval",
                rng: np.random.Generator | None = None,
                capture: dict[str, int] | None = None):
        """Run the stack up to the logits.

        ``capture`` maps arbitrary keys to layer indices whose outputs should
        be collected; returns (logits, captured dict) in that case.
        """
        if mode == "train" and rng is None:
            rng = np.random.default_rng(0)
        x = np.asarray(x, dtype=self.dtype)
        captured: dict[str, np.ndarray] = {}
        for i in range(self._logits_index()):
            x = self.layers[i].forward(x, mode, rng)
            if capture:
                for key, idx in capture.items():
                    if idx == i:
                        captured[key] = x
        if capture is not None:
            return x, captured
        return x

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return F.softmax(self.forward(x, mode="eval"))

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        grad = grad_logits
        for i in range(self._logits_index() - 1, -1, -1):
            grad = self.layers[i].backward(grad)
        return grad

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    # -- housekeeping -------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self.layers:
            out.update(layer.state_arrays())
        return out

    def set_bn_freeze(self, frozen_conv_ids: set[str] | None = None,
                      freeze_all_except: set[str] | None = None):
        """Pin running statistics of batchnorm layers.

        ``freeze_all_except`` freezes every batchnorm whose conv block is
        not in the given set; passing None for both unfreezes everything.
        """
        targeted = freeze_all_except
        for cid in self.conv_ids:
            pts = self.capture_points[cid]
            if "post_bn" not in pts:
                continue
            bn = self.layers[pts["post_bn"]]
            if targeted is not None:
                bn.freeze_stats = cid not in targeted
            elif frozen_conv_ids is not None:
                bn.freeze_stats = cid in frozen_conv_ids
            else:
                bn.freeze_stats = False

    def copy(self) -> "Network":
        clone = Network(self.specs, self.input_shape, self.seed, self.dtype)
        for dst, src in zip(clone.params(), self.params()):
            dst.value = src.value.copy()
            dst.adam_m = src.adam_m.copy()
            dst.adam_v = src.adam_v.copy()
            dst.mask = None if src.mask is None else src.mask.copy()
        for dst, src in zip(clone.layers, self.layers):
            if isinstance(dst, BatchNorm):
                dst.running_mean = src.running_mean.copy()
                dst.running_var = src.running_var.copy()
                dst.freeze_stats = src.freeze_stats
        return clone
