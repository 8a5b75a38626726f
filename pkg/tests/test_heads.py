import numpy as np
import pytest

from ivos.errors import ContractViolation
from ivos.heads import (
    HeadConfig, HeadParams, LossSchedule, TrainingAbort, bootstrapped_ce_loss,
    head_backward, head_forward, interaction_forward, load_checkpoint,
    propagation_forward, save_checkpoint, sgd_step, softmax_objects,
)

from conftest import random_field


def make_params(layers=2, channels=4, kernel=3, norm=True, in_channels=6, seed=0):
    return HeadParams(HeadConfig(layers, channels, kernel, norm), in_channels, seed)


# ---------------------------------------------------------------------------
# forward


def test_zero_params_give_zero_logits(rng):
    params = make_params()
    for _, arr in params.named_arrays():
        arr[...] = 0.0
    x = rng.standard_normal((3, 6, 5, 5))
    assert (head_forward(params, x) == 0.0).all()


def test_identity_single_pointwise_layer_sums_channels(rng):
    params = make_params(layers=1, channels=1, kernel=1, norm=False, in_channels=5)
    params.depthwise[0][...] = 1.0
    params.pointwise[0][...] = 1.0
    params.bias[0][...] = 0.0
    params.final_weight[...] = 1.0
    params.final_bias[...] = 0.0
    x = rng.uniform(0.1, 1.0, size=(2, 5, 4, 6))  # positive, so ReLU is identity
    logits = head_forward(params, x)
    expected = x.sum(axis=1)
    assert np.allclose(logits, expected, atol=1e-12)


def naive_forward(params, x):
    """Direct nested-loop reference implementation."""
    cfg = params.config
    B, _, H, W = x.shape
    cur = x.astype(np.float64)
    for layer in range(cfg.layers):
        C = cur.shape[1]
        k = cfg.kernel
        pad = k // 2
        dw = np.zeros_like(cur)
        for b in range(B):
            for c in range(C):
                for i in range(H):
                    for j in range(W):
                        acc = 0.0
                        for u in range(k):
                            for v in range(k):
                                ii, jj = i + u - pad, j + v - pad
                                if 0 <= ii < H and 0 <= jj < W:
                                    acc += cur[b, c, ii, jj] * params.depthwise[layer][c, u, v]
                        dw[b, c, i, j] = acc
        out = np.zeros((B, cfg.channels, H, W))
        for b in range(B):
            for o in range(cfg.channels):
                out[b, o] = (params.pointwise[layer][o][:, None, None] * dw[b]).sum(axis=0)
                out[b, o] += params.bias[layer][o]
                if cfg.norm:
                    out[b, o] = params.gamma[layer][o] * out[b, o] + params.beta[layer][o]
        cur = np.maximum(out, 0.0)
    logits = np.zeros((B, H, W))
    for b in range(B):
        logits[b] = (params.final_weight[:, None, None] * cur[b]).sum(axis=0)
    return logits + params.final_bias[0]


def test_forward_matches_naive_convolution_oracle(rng):
    params = make_params(layers=2, channels=3, kernel=3, norm=True, in_channels=4, seed=9)
    x = rng.standard_normal((2, 4, 5, 6))
    fast = head_forward(params, x)
    assert np.allclose(fast, naive_forward(params, x), atol=1e-6)


def test_head_input_wrappers(rng):
    field = random_field(rng, 4, 5, dim=3)
    params = make_params(layers=1, channels=2, in_channels=6, seed=2)
    g, l, m = rng.random((3, 4, 5))
    out = propagation_forward(params, field, g, l, m)
    assert out.shape == (4, 5)
    out2 = interaction_forward(params, field, g, l, m)
    assert out2.shape == (4, 5)
    # same channel layout: same params on same planes agree
    assert np.array_equal(out, out2)


def test_object_order_permutes_outputs_identically(rng):
    params = make_params(in_channels=5)
    x = rng.standard_normal((4, 5, 6, 6))
    perm = np.array([2, 0, 3, 1])
    assert np.allclose(head_forward(params, x)[perm], head_forward(params, x[perm]))


# ---------------------------------------------------------------------------
# softmax


def test_softmax_uniform_for_equal_logits():
    probs = softmax_objects(np.zeros((4, 3, 3)))
    assert np.allclose(probs, 0.25)


def test_softmax_is_stable_for_huge_logits():
    logits = np.zeros((3, 2, 2))
    logits[1] = 1000.0
    probs = softmax_objects(logits)
    assert np.isfinite(probs).all()
    assert probs[1].min() > 0.999


def test_softmax_matches_exp_normalize_oracle(rng):
    logits = rng.standard_normal((5, 4, 4)) * 3
    probs = softmax_objects(logits)
    direct = np.exp(logits) / np.exp(logits).sum(axis=0, keepdims=True)
    assert np.allclose(probs, direct, atol=1e-12)
    assert np.allclose(probs.sum(axis=0), 1.0, atol=1e-6)


# ---------------------------------------------------------------------------
# bootstrapped loss


def test_fraction_one_is_plain_mean_ce(rng):
    probs = softmax_objects(rng.standard_normal((3, 5, 5)))
    target = rng.integers(0, 3, size=(5, 5))
    loss, _ = bootstrapped_ce_loss(probs, target, 1.0)
    per_pixel = -np.log(probs.reshape(3, -1)[target.reshape(-1), np.arange(25)])
    assert loss == pytest.approx(per_pixel.mean(), abs=1e-12)


def test_perfect_predictions_zero_loss_zero_grad():
    target = np.array([[0, 1], [1, 0]])
    probs = np.zeros((2, 2, 2))
    for o in range(2):
        probs[o] = target == o
    loss, grad = bootstrapped_ce_loss(probs, target, 1.0)
    assert loss == 0.0
    assert (grad == 0.0).all()


def test_small_fraction_selects_single_worst_pixel(rng):
    probs = softmax_objects(rng.standard_normal((2, 3, 3)) * 2)
    target = rng.integers(0, 2, size=(3, 3))
    per_pixel = -np.log(probs.reshape(2, -1)[target.reshape(-1), np.arange(9)])
    loss, grad = bootstrapped_ce_loss(probs, target, 0.1)  # ceil(0.9) = 1 pixel
    assert loss == pytest.approx(per_pixel.max(), abs=1e-12)
    nonzero_pixels = np.nonzero(np.abs(grad).sum(axis=0).reshape(-1))[0]
    assert len(nonzero_pixels) == 1
    assert nonzero_pixels[0] == int(np.argmax(per_pixel))


def test_fraction_third_takes_top_three_of_nine(rng):
    probs = softmax_objects(rng.standard_normal((2, 3, 3)) * 2)
    target = rng.integers(0, 2, size=(3, 3))
    per_pixel = -np.log(probs.reshape(2, -1)[target.reshape(-1), np.arange(9)])
    loss, grad = bootstrapped_ce_loss(probs, target, 0.33)  # ceil(2.97) = 3 pixels
    assert loss == pytest.approx(np.sort(per_pixel)[-3:].mean(), abs=1e-12)
    assert (np.abs(grad).sum(axis=0).reshape(-1) > 0).sum() == 3


def test_hard_fraction_dominates_full_mean(rng):
    for _ in range(10):
        probs = softmax_objects(rng.standard_normal((3, 4, 4)) * 2)
        target = rng.integers(0, 3, size=(4, 4))
        full, _ = bootstrapped_ce_loss(probs, target, 1.0)
        hard, _ = bootstrapped_ce_loss(probs, target, 0.25)
        assert hard >= full - 1e-12


def test_bad_fraction_and_empty_target_rejected(rng):
    probs = softmax_objects(rng.standard_normal((2, 2, 2)))
    with pytest.raises(ContractViolation):
        bootstrapped_ce_loss(probs, np.zeros((2, 2), dtype=int), 0.0)
    with pytest.raises(ContractViolation):
        bootstrapped_ce_loss(probs, np.zeros((3, 3), dtype=int), 1.0)


# ---------------------------------------------------------------------------
# SGD + schedule


def test_sgd_zero_lr_is_identity(rng):
    params = make_params(seed=4)
    before = [a.copy() for _, a in params.named_arrays()]
    grads = params.zeros_like()
    for _, g in grads.named_arrays():
        g[...] = rng.standard_normal(g.shape)
    sgd_step(params, grads, 0.0)
    for (_, after), b in zip(params.named_arrays(), before):
        assert np.array_equal(after, b)


def test_sgd_scalar_update():
    params = make_params(layers=1, channels=1, kernel=1, in_channels=1)
    params.final_weight[...] = 1.0
    grads = params.zeros_like()
    grads.final_weight[...] = 2.0
    sgd_step(params, grads, 0.1)
    assert params.final_weight[0] == pytest.approx(0.8)


def test_sgd_converges_on_quadratic():
    p = np.array([10.0])
    for _ in range(500):
        grad = 2.0 * (p - 3.0)  # d/dp (p - 3)^2
        p -= 0.05 * grad
    assert abs(p[0] - 3.0) < 1e-4


def test_sgd_aborts_on_non_finite_grads():
    params = make_params()
    grads = params.zeros_like()
    grads.pointwise[0][0, 0] = np.nan
    with pytest.raises(TrainingAbort):
        sgd_step(params, grads, 0.1)


def test_loss_schedule_ramps_linearly():
    sched = LossSchedule(1.0, 0.15, ramp_steps=100)
    assert sched.fraction_at(0) == 1.0
    assert sched.fraction_at(50) == pytest.approx(0.575)
    assert sched.fraction_at(100) == pytest.approx(0.15)
    assert sched.fraction_at(10_000) == pytest.approx(0.15)


# ---------------------------------------------------------------------------
# gradient checks


def numeric_grad(params, x, target, arr, idx, eps=1e-4):
    flat = arr.ravel()
    orig = flat[idx]
    flat[idx] = orig + eps
    up, _ = bootstrapped_ce_loss(softmax_objects(head_forward(params, x)), target, 1.0)
    flat[idx] = orig - eps
    down, _ = bootstrapped_ce_loss(softmax_objects(head_forward(params, x)), target, 1.0)
    flat[idx] = orig
    return (up - down) / (2 * eps)


def test_analytic_gradients_match_finite_differences(rng):
    for trial in range(3):
        cfg = HeadConfig(
            layers=int(rng.integers(1, 3)),
            channels=int(rng.integers(2, 5)),
            kernel=3,
            norm=bool(rng.integers(0, 2)),
        )
        params = HeadParams(cfg, in_channels=int(rng.integers(2, 5)), seed=trial)
        x = rng.standard_normal((2, params.in_channels, 5, 6))
        target = rng.integers(0, 2, size=(5, 6))
        logits, cache = head_forward(params, x, want_cache=True)
        probs = softmax_objects(logits)
        _, dlogits = bootstrapped_ce_loss(probs, target, 1.0)
        grads = head_backward(params, cache, dlogits)
        for (name, arr), (_, g) in zip(params.named_arrays(), grads.named_arrays()):
            for idx in rng.choice(arr.size, size=min(4, arr.size), replace=False):
                fd = numeric_grad(params, x, target, arr, idx)
                an = g.ravel()[idx]
                denom = max(abs(fd), abs(an), 1e-8)
                assert abs(fd - an) / denom < 1e-4, f"{name}[{idx}]: {fd} vs {an}"


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip(tmp_path):
    params = make_params(layers=2, channels=3, kernel=3, norm=True, in_channels=7, seed=11)
    save_checkpoint(params, tmp_path / "head.ckpt")
    loaded = load_checkpoint(tmp_path / "head.ckpt")
    assert loaded.config == params.config
    assert loaded.in_channels == params.in_channels
    for (_, a), (_, b) in zip(params.named_arrays(), loaded.named_arrays()):
        assert np.array_equal(b, a.astype("<f4").astype(np.float64))
