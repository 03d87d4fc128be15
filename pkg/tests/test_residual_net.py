import numpy as np
import pytest

from gradcheck_util import check_layer, check_model
from msrc.numeric_core import ShapeError, bce_loss, grad_check
from msrc.residual_net import (
    MSRC,
    ClassifierHead,
    ResidualBlock,
    ResidualConfig,
    ResidualGroup,
    SupervisedConfig,
    block_forward,
    classify,
    group_forward,
    train_supervised,
)
from msrc.sae import StackedAutoencoder


def _zero_f(block):
    for _, layer in block.named_layers():
        if layer.kind == "conv1d":
            for v in layer.params.values():
                v[:] = 0


def _group_params(group):
    return {f"{p}.{k}": l.params[k] for p, l in group.named_layers() for k in l.params}


def tiny_model(d=8, k=2, n=2, seed=0, channels=3, group_width=4):
    saes = [StackedAutoencoder([d, 5, 3], seed=seed + j) for j in range(k)]
    cfg = ResidualConfig(n_blocks=n, channels=channels, group_width=group_width)
    return MSRC(saes, d, cfg, seed=seed)


# blocks


def test_zero_f_block_is_identity():
    block = ResidualBlock(2, 4)
    _zero_f(block)
    e = np.random.default_rng(0).random((5, 7))
    np.testing.assert_array_equal(block_forward(block, e, train=True), e)
    np.testing.assert_array_equal(block_forward(block, np.zeros((5, 7)), train=True), 0)


@pytest.mark.parametrize("seed", range(10))
def test_block_shape_preserved(seed):
    rng = np.random.default_rng(seed)
    block = ResidualBlock(int(rng.integers(1, 4)), int(rng.integers(1, 6)), (1, 3, 5)[seed % 3], rng)
    e = rng.random((int(rng.integers(2, 6)), int(rng.integers(1, 20))))
    assert block.forward(e).shape == e.shape


def test_block_rejects_bad_shape():
    with pytest.raises(ShapeError):
        ResidualBlock(1).forward(np.zeros((2, 3, 4)))


class _BlockAsLayer:
    """Adapter giving a residual block the Layer interface the harness expects."""

    def __init__(self, block):
        self.block = block
        self.params = {}
        self.grads = {}
        for p, l in block.named_layers():
            for k in l.params:
                self.params[f"{p}.{k}"] = l.params[k]

    def forward(self, x, train=True):
        return self.block.forward(x, train)

    def backward(self, g):
        gx = self.block.backward(g)
        self.grads = {f"{p}.{k}": l.grads[k] for p, l in self.block.named_layers() for k in l.params}
        return gx


@pytest.mark.parametrize("seed", range(5))
def test_block_gradient(seed):
    rng = np.random.default_rng(seed)
    block = ResidualBlock(seed % 3 + 1, 3, 3, rng)
    assert check_layer(_BlockAsLayer(block), rng.random((4, 6)), seed).passed


# groups


def test_zero_f_group_with_identity_fc_copies_input():
    width, n = 6, 3
    group = ResidualGroup(width, n_blocks=n, channels=4, out_width=n * width)
    for b in group.blocks:
        _zero_f(b)
    group.fc.params["W"][:] = np.eye(n * width)
    group.fc.params["b"][:] = 0
    e = np.random.default_rng(1).random((4, width))
    np.testing.assert_array_equal(group_forward(group, e, train=True), np.hstack([e, e, e]))


def test_identity_padded_fc():
    # narrower input copied into a wider FC: the extra outputs stay zero
    group = ResidualGroup(2, n_blocks=3, channels=2, out_width=8)
    for b in group.blocks:
        _zero_f(b)
    group.fc.params["W"][:] = np.eye(8, 6)
    e = np.array([[0.3, 0.9]])
    np.testing.assert_array_equal(group_forward(group, e), [[0.3, 0.9, 0.3, 0.9, 0.3, 0.9, 0, 0]])


def test_group_block_depths_and_mirroring():
    group = ResidualGroup(5, n_blocks=3, channels=2)
    assert [b.depth for b in group.blocks] == [1, 2, 3]
    e = np.random.default_rng(2).random((3, 5))
    composed = group.compose(e, train=False)
    for i, b in enumerate(group.blocks):
        np.testing.assert_array_equal(composed[:, 5 * i : 5 * (i + 1)], b.forward(e, train=False))


def test_single_block_group():
    group = ResidualGroup(4, n_blocks=1, channels=2, out_width=3)
    e = np.random.default_rng(3).random((2, 4))
    np.testing.assert_allclose(group.forward(e, False), group.fc.forward(group.blocks[0].forward(e, False)))


def test_group_rejects_width():
    with pytest.raises(ShapeError, match="expected"):
        ResidualGroup(4).forward(np.zeros((2, 5)))


@pytest.mark.parametrize("seed", range(5))
def test_group_gradient(seed):
    rng = np.random.default_rng(seed)
    group = ResidualGroup(5, n_blocks=2, channels=2, out_width=3, rng=rng)
    e = rng.random((4, 5))
    R = rng.normal(size=(4, 3))
    params = _group_params(group)
    params["e"] = e

    def lg():
        out = group.forward(e, True)
        ge = group.backward(R)
        grads = {f"{p}.{k}": l.grads[k] for p, l in group.named_layers() for k in l.params}
        grads["e"] = ge
        return float(np.sum(out * R)), grads

    assert grad_check(lg, params).max_rel_error < 1e-4


# head


def test_zero_head_is_boundary_anomaly():
    head = ClassifierHead(6)
    head.fc.params["W"][:] = 0
    score, label = classify(head, [np.ones((1, 3)), np.ones((1, 3))])
    assert score[0] == 0.5 and label[0] == 1


def test_head_monotone_in_weights():
    rng = np.random.default_rng(4)
    head = ClassifierHead(4, rng=rng)
    feats = [rng.random((1, 2)), rng.random((1, 2))]
    base, _ = classify(head, feats)
    for i in range(4):
        head.fc.params["W"][0, i] += 0.5
        raised, _ = classify(head, feats)
        assert raised[0] > base[0]
        base = raised


def test_head_width_mismatch():
    with pytest.raises(ShapeError):
        classify(ClassifierHead(6), [np.ones((1, 4))])


# full model


@pytest.mark.parametrize("seed", range(20))
def test_end_to_end_gradient(seed):
    rng = np.random.default_rng(seed)
    model = tiny_model(seed=seed)
    levels = rng.random((2, 6, 8))
    labels = rng.integers(0, 2, 6).astype(float)
    report = check_model(model, levels, labels)
    assert report.passed, report


def test_determinism():
    levels = np.random.default_rng(5).random((2, 10, 8))
    a, b = tiny_model(seed=3), tiny_model(seed=3)
    np.testing.assert_array_equal(a.predict(levels)[0], b.predict(levels)[0])


def test_scale_count_checked():
    with pytest.raises(ShapeError, match="scales"):
        tiny_model().predict(np.zeros((3, 4, 8)))


def _snapshot(model):
    return [l.params[k].copy() for _, l in model.named_layers() for k in l.params]


def test_zero_epochs_unchanged():
    model = tiny_model()
    before = _snapshot(model)
    levels = np.random.default_rng(6).random((2, 12, 8))
    assert train_supervised(model, levels, np.arange(12) % 2, SupervisedConfig(epochs=0)) == []
    for a, b in zip(before, _snapshot(model)):
        np.testing.assert_array_equal(a, b)


def _separable(n=40, d=8, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = 0.2 * rng.random((n, d)) + 0.6 * y[:, None]
    return np.stack([x, x]), y


def test_full_batch_loss_decreases_and_fits_separable_errors():
    levels, y = _separable()
    model = tiny_model(seed=1)
    errors = [np.asarray(levels[0]), np.asarray(levels[1])]  # errors supplied directly
    hist = train_supervised(model, levels, y, SupervisedConfig(epochs=200, lr=0.1, batch_size=0, momentum=0.9), errors=errors)
    assert hist[-1] <= hist[0]
    scores = model.score_errors(errors)
    assert np.mean((scores >= 0.5) == y) == 1.0


def test_freezing_violation_is_caught(monkeypatch):
    levels, y = _separable(12)
    model = tiny_model()
    import msrc.residual_net as rn

    real_step = rn.SGD.step

    def leaky_step(self):
        real_step(self)
        model.saes[0].aes[0].encoder.params["W"] += 1e-3

    monkeypatch.setattr(rn.SGD, "step", leaky_step)
    with pytest.raises(AssertionError, match="SAE parameters changed"):
        train_supervised(model, levels, y, SupervisedConfig(epochs=1, batch_size=0))


def test_sae_untouched_by_supervised_training():
    levels, y = _separable(12)
    model = tiny_model()
    before = [p.copy() for s in model.saes for p in s.parameters()]
    train_supervised(model, levels, y, SupervisedConfig(epochs=3, batch_size=4))
    for a, b in zip(before, [p for s in model.saes for p in s.parameters()]):
        np.testing.assert_array_equal(a, b)


def test_supervised_loss_is_bce():
    levels, y = _separable(10)
    model = tiny_model()
    errors = model.error_features(levels)
    expected, _ = bce_loss(model.forward_errors(errors, train=True), y)
    hist = train_supervised(model, levels, y, SupervisedConfig(epochs=1, batch_size=0, lr=1e-12, momentum=0))
    assert abs(hist[0] - expected) < 1e-9
