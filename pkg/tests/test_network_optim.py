"""Network assembly, whole-network gradients, Adam masking, checkpoints."""

import hashlib

import numpy as np
import pytest

from filter_triage.errors import ConfigurationError, FormatError, UsageError
from filter_triage.nn import (Adam, AdamHyper, LayerSpec, Network, TrainabilityMask,
                              adam_step, apply_masks, checkpoint_load, checkpoint_save,
                              softmax_xent, trainable_param_count)
from filter_triage.nn.gradcheck import max_relative_error, numerical_gradient
from filter_triage.nn.layers import Param
from filter_triage.zoo import architecture, build_model


def _small_net(seed=0, dtype=np.float64):
    specs = [
        LayerSpec("conv2d", kernel_size=3, out_channels=4, stride=1, padding=1),
        LayerSpec("batchnorm"),
        LayerSpec("relu"),
        LayerSpec("maxpool", kernel_size=2, stride=2),
        LayerSpec("dense", out_dim=6),
        LayerSpec("softmax"),
    ]
    return Network(specs, (2, 8, 8), seed, dtype=dtype)


def test_network_shapes_and_capture_points():
    net = _small_net()
    assert net.conv_ids == ["conv1"]
    pts = net.capture_points["conv1"]
    assert pts["conv"] == 0 and pts["post_bn"] == 1 and pts["post_relu"] == 2
    x = np.random.default_rng(0).normal(size=(3, 2, 8, 8))
    logits = net.forward(x, "eval")
    assert logits.shape == (3, 6)


def test_whole_network_gradcheck_float64():
    rng = np.random.default_rng(1)
    net = _small_net(dtype=np.float64)
    x = rng.normal(size=(2, 2, 8, 8))
    labels = np.array([1, 4])

    def loss_of_param(p, v):
        old = p.value.copy()
        p.value = v
        out = net.forward(x, "eval")
        p.value = old
        return softmax_xent(out, labels)[0]

    logits = net.forward(x, "eval")
    _, grad = softmax_xent(logits, labels)
    net.zero_grad()
    net.backward(grad)
    for p in net.params():
        num = numerical_gradient(lambda v, pp=p: loss_of_param(pp, v), p.value.copy(), 1e-5)
        assert max_relative_error(p.grad, num) < 1e-4, p.name


def test_unknown_layer_kind_rejected():
    with pytest.raises(ConfigurationError):
        LayerSpec("avgpool3d")


def test_forward_capture_returns_requested_maps():
    net = _small_net()
    x = np.random.default_rng(2).normal(size=(2, 2, 8, 8))
    idx = net.capture_points["conv1"]["post_relu"]
    _, captured = net.forward(x, "eval", capture={"maps": idx})
    assert captured["maps"].shape == (2, 4, 8, 8)
    assert (captured["maps"] >= 0).all()


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_grad_no_change():
    p = Param("w", np.array([1.0, -2.0, 3.0]))
    before = p.value.copy()
    adam_step([p], AdamHyper(), 1)
    assert np.array_equal(p.value, before)


def test_adam_single_scalar_hand_value():
    # w=1, g=0.5, defaults, t=1:
    # m_hat = 0.5, v_hat = 0.25, w' = 1 - 1e-3 * 0.5/(0.5 + 1e-8)
    p = Param("w", np.array([1.0]))
    p.grad = np.array([0.5])
    adam_step([p], AdamHyper(), 1)
    expected = 1.0 - 1e-3 * 0.5 / (np.sqrt(0.25) + 1e-8)
    assert abs(p.value[0] - expected) < 1e-12
    assert abs(p.value[0] - 0.999) < 1e-5


def test_adam_fully_masked_param_is_bitwise_frozen():
    rng = np.random.default_rng(3)
    p = Param("w", rng.normal(size=(4, 3)).astype(np.float32))
    p.mask = np.zeros((4, 3), dtype=bool)
    raw = p.value.tobytes()
    opt = Adam([p])
    for _ in range(25):
        p.grad = rng.normal(size=(4, 3)).astype(np.float32)
        opt.step()
    assert p.value.tobytes() == raw
    assert not p.adam_m.any() and not p.adam_v.any()


def test_adam_partial_mask_freezes_only_masked_rows():
    rng = np.random.default_rng(4)
    p = Param("w", rng.normal(size=(4, 3)).astype(np.float32))
    mask = np.zeros((4, 3), dtype=bool)
    mask[1] = True
    p.mask = mask
    frozen = p.value[[0, 2, 3]].tobytes()
    opt = Adam([p])
    for _ in range(5):
        p.grad = rng.normal(size=(4, 3)).astype(np.float32)
        opt.step()
    assert p.value[[0, 2, 3]].tobytes() == frozen
    assert not np.array_equal(p.value[1], np.frombuffer(frozen, np.float32)[:3])


def test_adam_bad_step_index():
    p = Param("w", np.ones(2))
    with pytest.raises(UsageError):
        adam_step([p], AdamHyper(), 0)


def test_adam_hyper_validation():
    with pytest.raises(ConfigurationError):
        AdamHyper(beta1=1.0)
    with pytest.raises(ConfigurationError):
        AdamHyper(learning_rate=0.0)


# ---------------------------------------------------------------------------
# trainability masks
# ---------------------------------------------------------------------------

def test_apply_masks_freeze_structure():
    model = build_model(architecture("cifar10-small", 10), seed=1)
    net = model.network
    flags1 = np.zeros(32, dtype=bool)
    flags1[:8] = True
    flags2 = np.zeros(16, dtype=bool)
    flags2[[1, 5, 7, 9]] = True
    apply_masks(net, [TrainabilityMask("conv1", flags1), TrainabilityMask("conv2", flags2)])

    conv1 = net.layer_by_name("conv1")
    assert conv1.weight.mask[:8].all() and not conv1.weight.mask[8:].any()
    assert conv1.bias.mask[:8].all() and not conv1.bias.mask[8:].any()
    bn1 = net.layer_by_name("bn1")
    assert bn1.gamma.mask[:8].all() and not bn1.gamma.mask[8:].any()
    # classifier frozen by default
    for layer_name in ("dense1", "dense2"):
        for p in net.layer_by_name(layer_name).params:
            assert p.mask is not None and not p.mask.any()
    # trainable count: selected channels' kernels + biases + bn affine
    expected = 8 * 3 * 9 + 8 + 8 + 8 + 4 * 32 * 9 + 4 + 4 + 4
    assert trainable_param_count(net) == expected


def test_apply_masks_classifier_trainable_flag():
    model = build_model(architecture("cifar10-small", 10), seed=1)
    apply_masks(model.network, [], classifier_trainable=True)
    assert model.network.layer_by_name("dense1").weight.mask is None
    assert model.network.layer_by_name("conv1").weight.mask is not None


def test_mask_filter_count_mismatch():
    model = build_model(architecture("cifar10-small", 10), seed=1)
    with pytest.raises(ConfigurationError):
        apply_masks(model.network, [TrainabilityMask("conv1", np.ones(16, dtype=bool))])


def test_masked_training_keeps_frozen_slices_bitwise(tiny_model):
    """200 masked steps; every frozen slice hashes identically afterwards."""
    model = tiny_model.copy()
    net = model.network
    flags1 = np.zeros(32, dtype=bool)
    flags1[:8] = True
    flags2 = np.zeros(16, dtype=bool)
    flags2[:4] = True
    apply_masks(net, [TrainabilityMask("conv1", flags1), TrainabilityMask("conv2", flags2)])

    def frozen_hashes():
        out = {}
        for p in net.params():
            if p.mask is None:
                continue
            frozen = p.value[~p.mask] if p.mask.any() else p.value
            out[p.name] = hashlib.sha256(np.ascontiguousarray(frozen).tobytes()).hexdigest()
        return out

    before = frozen_hashes()
    rng = np.random.default_rng(0)
    opt = Adam(net.params(), AdamHyper(learning_rate=1e-3))
    x = rng.normal(size=(16, 3, 32, 32)).astype(np.float32)
    y = rng.integers(0, 10, 16)
    for _ in range(200):
        logits = net.forward(x, "train", rng)
        _, grad = softmax_xent(logits, y)
        net.zero_grad()
        net.backward(grad)
        opt.step()
    assert frozen_hashes() == before


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_bitexact(tiny_model):
    data = checkpoint_save(tiny_model.network, arch="cifar10-small")
    net2, arch, meta = checkpoint_load(data)
    assert arch == "cifar10-small"
    data2 = checkpoint_save(net2, arch="cifar10-small")
    assert data == data2


def test_checkpoint_reproduces_logits(tiny_model, synth_small):
    _, test_set = synth_small
    x = tiny_model.inputs(test_set.images[:32])
    ref = tiny_model.network.forward(x, "eval")
    net2, _, _ = checkpoint_load(checkpoint_save(tiny_model.network, arch="a"))
    assert np.array_equal(net2.forward(x, "eval"), ref)


def test_checkpoint_truncated_raises():
    model = build_model(architecture("cifar10-small", 10), seed=2)
    data = checkpoint_save(model.network)
    with pytest.raises(FormatError):
        checkpoint_load(data[:100])
    with pytest.raises(FormatError):
        checkpoint_load(data[:-7])


def test_checkpoint_bad_magic():
    with pytest.raises(FormatError):
        checkpoint_load(b"NOPE" + b"\0" * 64)


def test_checkpoint_meta_arrays_roundtrip():
    model = build_model(architecture("cifar10-small", 10), seed=3)
    meta = {"preproc_mean": np.array([0.1, 0.2, 0.3]),
            "preproc_std": np.array([0.9, 0.8, 0.7])}
    _, _, meta2 = checkpoint_load(checkpoint_save(model.network, meta=meta))
    assert np.array_equal(meta2["preproc_mean"], meta["preproc_mean"])
    assert np.array_equal(meta2["preproc_std"], meta["preproc_std"])
