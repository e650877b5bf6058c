"""Per-filter trainability masks.

A mask names a conv layer and flags each of its output channels.  Expanding
the mask onto a network marks the matching kernel slices, bias entries and
batchnorm affine entries trainable; everything else in that block is frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from .layers import BatchNorm, Conv2d
from .network import Network


@dataclass
class TrainabilityMask:
    layer_id: str
    channel_flags: np.ndarray  # bool vector, length = output filter count

    def __post_init__(self):
        self.channel_flags = np.asarray(self.channel_flags, dtype=bool)
        if self.channel_flags.ndim != 1:
            raise ConfigurationError("channel_flags must be a 1-d boolean vector")

    @property
    def trainable_count(self) -> int:
        return int(self.channel_flags.sum())


def apply_masks(network: Network, masks: list[TrainabilityMask],
                classifier_trainable: bool = False) -> None:
    """Install element-level masks on every parameter of the network.

    Parameters not covered by any mask are frozen.  Dense layers (the
    classifier head) are controlled by ``classifier_trainable`` as a whole.
    """
    by_layer = {m.layer_id: m for m in masks}
    for m in masks:
        f = network.filter_count(m.layer_id)
        if len(m.channel_flags) != f:
            raise ConfigurationError(
                f"mask for {m.layer_id} has {len(m.channel_flags)} flags, layer has {f} filters")

    for p in network.params():
        p.mask = np.zeros(p.value.shape, dtype=bool)

    for conv_id, mask in by_layer.items():
        for layer in network.conv_block_layers(conv_id):
            if isinstance(layer, Conv2d):
                layer.weight.mask = np.broadcast_to(
                    mask.channel_flags[:, None, None, None], layer.weight.value.shape).copy()
                layer.bias.mask = mask.channel_flags.copy()
            elif isinstance(layer, BatchNorm):
                layer.gamma.mask = mask.channel_flags.copy()
                layer.beta.mask = mask.channel_flags.copy()

    if classifier_trainable:
        for layer in network.layers:
            if layer.name.startswith("dense"):
                for p in layer.params:
                    p.mask = None


def clear_masks(network: Network) -> None:
    for p in network.params():
        p.mask = None


def trainable_param_count(network: Network) -> int:
    total = 0
    for p in network.params():
        if p.mask is None:
            total += p.value.size
        else:
            total += int(p.mask.sum())
    return total
