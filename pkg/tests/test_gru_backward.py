import numpy as np
import pytest

from star.errors import DivergenceError, IndexRangeError, StaleTraceError
from star.gru import (
    AdamState,
    GruConfig,
    backward_bptt,
    batch_loss,
    init_params,
    softmax,
    softmax_cross_entropy,
    train_step,
)
from star.labels import NO_PERSON_ID


def test_ce_uniform_seven_classes():
    loss, _ = softmax_cross_entropy(np.zeros(7), 3)
    assert loss == pytest.approx(np.log(7.0), abs=1e-12)


def test_ce_two_classes():
    loss, grad = softmax_cross_entropy(np.zeros(2), 0)
    assert loss == pytest.approx(np.log(2.0), abs=1e-12)
    np.testing.assert_allclose(softmax(np.zeros(2)), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(grad, [-0.5, 0.5], atol=1e-15)


def test_ce_gradient_sums_to_zero_and_loss_nonnegative():
    rng = np.random.default_rng(4)
    for _ in range(100):
        logits = rng.normal(size=int(rng.integers(2, 9))) * 5.0
        target = int(rng.integers(0, logits.size))
        loss, grad = softmax_cross_entropy(logits, target)
        assert loss >= 0.0
        assert abs(grad.sum()) < 1e-12
        assert abs(softmax(logits).sum() - 1.0) < 1e-12


def test_ce_target_out_of_range():
    with pytest.raises(IndexRangeError):
        softmax_cross_entropy(np.zeros(7), 7)


def tiny_setup(seed=0, batch=2, t_len=4, features=5, hidden=3, no_person_row=True):
    rng = np.random.default_rng(seed)
    net = init_params(
        GruConfig(feature_count=features, hidden=hidden, layers=3),
        seed=seed,
        dtype=np.float64,
    )
    windows = rng.normal(size=(batch, features, t_len))
    labels = rng.integers(0, 7, size=batch)
    if no_person_row and batch > 1:
        labels[-1] = NO_PERSON_ID
    return net, windows, labels


def finite_difference_grads(net, windows, labels, loss_weights, eps=1e-5):
    grads = {}
    for name, tensor in net.tensors().items():
        flat = tensor.reshape(-1)
        g = np.zeros(flat.size)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            lp, *_ = batch_loss(net, windows, labels, loss_weights)
            flat[idx] = orig - eps
            lm, *_ = batch_loss(net, windows, labels, loss_weights)
            flat[idx] = orig
            g[idx] = (lp - lm) / (2.0 * eps)
        grads[name] = g.reshape(tensor.shape)
    return grads


def test_bptt_matches_central_finite_differences():
    net, windows, labels = tiny_setup(seed=3)
    loss_weights = (1.0, 1.0)
    loss, d_act, d_pres, trace = batch_loss(net, windows, labels, loss_weights)
    analytic = backward_bptt(net, trace, d_act, d_pres)
    numeric = finite_difference_grads(net, windows, labels, loss_weights)
    worst = 0.0
    for name, num in numeric.items():
        ana = analytic[name]
        rel = np.abs(ana - num) / np.maximum.reduce(
            [np.abs(ana), np.abs(num), np.full_like(num, 1e-6)]
        )
        worst = max(worst, float(rel.max()))
    assert worst <= 1e-4


def test_unused_head_gets_exactly_zero_gradient():
    net, windows, labels = tiny_setup(seed=5, no_person_row=False)
    loss, d_act, d_pres, trace = batch_loss(net, windows, labels, loss_weights=(1.0, 0.0))
    grads = backward_bptt(net, trace, d_act, d_pres)
    np.testing.assert_array_equal(grads["head.presence.w"], 0.0)
    np.testing.assert_array_equal(grads["head.presence.b"], 0.0)


def test_doubling_dlogits_doubles_gradients():
    net, windows, labels = tiny_setup(seed=6)
    _, d_act, d_pres, trace = batch_loss(net, windows, labels)
    g1 = backward_bptt(net, trace, d_act, d_pres)
    g2 = backward_bptt(net, trace, 2.0 * d_act, 2.0 * d_pres)
    for name in g1:
        np.testing.assert_allclose(g2[name], 2.0 * g1[name], rtol=1e-12, atol=1e-300)


def test_stale_trace_rejected():
    net, windows, labels = tiny_setup(seed=7)
    _, d_act, d_pres, trace = batch_loss(net, windows, labels)
    net2, _, _ = train_step(net, windows, labels, AdamState())
    with pytest.raises(StaleTraceError):
        backward_bptt(net2, trace, d_act, d_pres)


def test_overfit_one_batch_halves_loss():
    rng = np.random.default_rng(8)
    net = init_params(GruConfig(feature_count=6, hidden=8, layers=3), seed=1)
    windows = rng.normal(size=(8, 6, 10)).astype(np.float32)
    labels = np.array([0, 1, 2, 3, 4, 5, 6, NO_PERSON_ID])
    opt = AdamState(lr=5e-3)
    loss0 = None
    loss = None
    for _ in range(50):
        net, opt, loss = train_step(net, windows, labels, opt)
        if loss0 is None:
            loss0 = loss
    assert loss <= 0.5 * loss0


def test_zero_learning_rate_keeps_params_bit_exact():
    net, windows, labels = tiny_setup(seed=9)
    before = {k: v.copy() for k, v in net.tensors().items()}
    net2, _, _ = train_step(net, windows, labels, AdamState(lr=0.0))
    for name, tensor in net2.tensors().items():
        np.testing.assert_array_equal(tensor, before[name])


def test_initial_loss_near_ln7_plus_ln2():
    rng = np.random.default_rng(10)
    net = init_params(GruConfig(), seed=0)
    windows = rng.uniform(size=(16, 49, 50)).astype(np.float32)
    labels = np.concatenate([rng.integers(0, 7, size=14), [NO_PERSON_ID, NO_PERSON_ID]])
    loss, *_ = batch_loss(net, windows, labels)
    assert loss == pytest.approx(np.log(7.0) + np.log(2.0), abs=0.2)


@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_divergence_detected():
    net, windows, labels = tiny_setup(seed=11)
    tensors = net.tensors()
    tensors["head.activity.w"] = tensors["head.activity.w"] * np.inf
    bad = net.with_tensors(tensors)
    with pytest.raises(DivergenceError):
        train_step(bad, windows, labels, AdamState())
