from .layers import LayerSpec, Param
from .network import Network
from .optim import Adam, AdamHyper, adam_step
from .masks import TrainabilityMask, apply_masks, clear_masks, trainable_param_count
from .checkpoint import checkpoint_load, checkpoint_save
from .functional import softmax, softmax_xent

__all__ = [
    "LayerSpec", "Param", "Network", "Adam", "AdamHyper", "adam_step",
    "TrainabilityMask", "apply_masks", "clear_masks", "trainable_param_count",
    "checkpoint_load", "checkpoint_save", "softmax", "softmax_xent",
]
