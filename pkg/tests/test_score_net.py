import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spsgm.diffusion import DiffusionConfig, forward_perturb
from spsgm.errors import InvalidConfigError, InvalidInputError, TrainingFailureError
from spsgm.score_net import (
    Adam,
    ScoreNetwork,
    TrainConfig,
    load_checkpoint,
    loss_weights,
    save_checkpoint,
    score_forward,
    train,
    weighted_dsm_loss,
)
from spsgm.seeding import make_rng


def small_net(dim=3, activation="silu", seed=0):
    return ScoreNetwork(dim, (16, 12), activation, time_embed_dim=8, rng=make_rng(seed, "init"))


def fixed_draws(n=6, dim=3, seed=0):
    rng = make_rng(seed, "draws")
    return rng.normal(size=(n, dim)), rng.uniform(0.01, 5.0, n), rng.normal(size=(n, dim))


def flat_grad(grads):
    return np.concatenate([g.ravel() for layer in grads for g in layer])


def directional_errors(net, z0, t, g, weights, probes, seed=1):
    """Relative error of backprop vs central differences along random directions."""
    theta = net.flat()
    _, grads = weighted_dsm_loss(net, z0, t, weights, g=g)
    grad = flat_grad(grads)
    rng = make_rng(seed, "probe")
    errs = []
    for _ in range(probes):
        v = rng.normal(size=theta.size)
        v /= np.linalg.norm(v)
        h = 1e-5 * max(1.0, np.linalg.norm(theta)) / math.sqrt(theta.size)
        net.set_flat(theta + h * v)
        lp, _ = weighted_dsm_loss(net, z0, t, weights, g=g)
        net.set_flat(theta - h * v)
        lm, _ = weighted_dsm_loss(net, z0, t, weights, g=g)
        net.set_flat(theta)
        fd = (lp - lm) / (2 * h)
        an = grad @ v
        errs.append(abs(fd - an) / max(abs(an), abs(fd), 1e-8))
    return np.array(errs)


def test_zero_last_layer_outputs_zero():
    net = ScoreNetwork(4, (8, 8), zero_last=True, time_embed_dim=6, rng=make_rng(0))
    z = make_rng(1).normal(size=(5, 4))
    assert np.array_equal(score_forward(net, 0.3, z), np.zeros((5, 4)))


def test_forward_deterministic():
    net = small_net()
    z = np.array([[0.1, -0.2, 0.3]])
    assert np.array_equal(net(0.7, z), net(0.7, z))


def test_forward_rejects_bad_input():
    net = small_net()
    with pytest.raises(InvalidInputError):
        net(0.5, np.array([[np.nan, 0, 0]]))
    with pytest.raises(InvalidInputError):
        net(0.5, np.zeros((1, 2)))
    with pytest.raises(InvalidConfigError):
        ScoreNetwork(2, (4,), time_embed_dim=3)


@pytest.mark.parametrize("activation", ["silu", "relu"])
@pytest.mark.parametrize("alpha", [0.0, 0.7])
def test_gradient_matches_finite_differences(activation, alpha):
    net = small_net(activation=activation)
    z0, t, g = fixed_draws()
    w = loss_weights([5.0, 2.0, 0.5], alpha)
    errs = directional_errors(net, z0, t, g, w, probes=25)
    assert errs.max() < 1e-4


def test_time_embedding_frequencies():
    net = ScoreNetwork(1, (4,), time_embed_dim=32)
    assert net.freqs[0] == 1.0 and net.freqs[-1] == pytest.approx(1000.0)
    assert len(net.freqs) == 16
    assert net.widths == [33, 4, 1]


def test_alpha_zero_is_plain_dsm():
    net = small_net()
    z0, t, g = fixed_draws()
    w = loss_weights([5.0, 2.0, 0.5], 0.0)
    assert np.array_equal(w, np.ones(3))
    loss, _ = weighted_dsm_loss(net, z0, t, w, g=g)
    zt, target = forward_perturb(z0, t, g=g)
    plain = np.sum((net(t, zt) - target) ** 2) / z0.shape[0]
    assert loss == plain


class HardWired(ScoreNetwork):
    """Network whose output is replaced by a fixed array."""

    def __init__(self, out):
        super().__init__(out.shape[1], (2,), time_embed_dim=2)
        self.out = out

    def forward(self, t, z):
        _, cache = super().forward(t, z)
        return self.out, cache


def test_exact_conditional_score_gives_zero_loss():
    z0, t, g = fixed_draws()
    _, target = forward_perturb(z0, t, g=g)
    loss, _ = weighted_dsm_loss(HardWired(target), z0, t, np.ones(3), g=g)
    assert loss == 0.0


def test_zero_noise_target_vanishes():
    net = small_net()
    z0, t, _ = fixed_draws()
    w = loss_weights([4.0, 1.0, 1.0], 1.0)
    g = np.zeros_like(z0)
    loss, _ = weighted_dsm_loss(net, z0, t, w, g=g)
    zt = np.exp(-t)[:, None] * z0
    expect = np.sum((w * net(t, zt)) ** 2) / z0.shape[0]
    assert loss == pytest.approx(expect, rel=1e-14)


@pytest.mark.parametrize("t", [0.0, 5.5])
def test_time_outside_range(t):
    with pytest.raises(InvalidInputError):
        weighted_dsm_loss(small_net(), np.zeros((2, 3)), t, np.ones(3), g=np.zeros((2, 3)))


@given(st.integers(0, 10_000), st.floats(0, 3))
def test_loss_non_negative(seed, alpha):
    net = small_net(seed=seed % 7)
    z0, t, g = fixed_draws(seed=seed)
    loss, _ = weighted_dsm_loss(net, z0, t, loss_weights([3.0, 2.0, 1.0], alpha), g=g)
    assert loss >= 0.0


def test_weight_ratio_decreases_with_alpha():
    lam = np.array([10.0, 3.0, 0.2])
    ratios = [loss_weights(lam, a)[-1] / loss_weights(lam, a)[0] for a in (0.0, 0.5, 1.0, 2.0)]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    with pytest.raises(InvalidConfigError):
        loss_weights(lam, -0.1)


def test_adam_zero_gradient_no_change():
    net = small_net()
    before = net.flat().copy()
    opt = Adam(net.params)
    for _ in range(3):
        opt.step(net.params, [[np.zeros_like(W), np.zeros_like(b)] for W, b in net.params])
    assert np.array_equal(net.flat(), before)


def test_learns_degenerate_score():
    Z = np.zeros((512, 1))
    cfg = TrainConfig(iterations=5000, seed=0)
    net, hist = train(Z, np.array([1.0]), cfg)
    s = net(1.0, np.array([[0.5]]))[0, 0]
    assert s == pytest.approx(-0.5 / (1 - math.exp(-2.0)), abs=0.1)
    assert len(hist.train_loss) == 5000
    assert hist.val_loss[0][0] == 0 and hist.val_loss[-1][0] == 5000


def test_training_deterministic():
    Z = make_rng(0).normal(size=(200, 2))
    cfg = TrainConfig(iterations=150, batch_size=32, hidden=(16, 16), eval_every=50)
    a, ha = train(Z, np.array([2.0, 1.0]), cfg)
    b, hb = train(Z, np.array([2.0, 1.0]), cfg)
    assert np.array_equal(a.flat(), b.flat())
    assert ha.train_loss == hb.train_loss and ha.val_loss == hb.val_loss


def test_shared_time_variant_runs():
    Z = make_rng(0).normal(size=(100, 2))
    cfg = TrainConfig(iterations=20, batch_size=16, hidden=(8,), per_sample_t=False)
    net, hist = train(Z, np.array([1.0, 1.0]), cfg)
    assert np.all(np.isfinite(net.flat())) and len(hist.train_loss) == 20


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reported():
    Z = np.full((64, 1), 1e200)
    with pytest.raises(TrainingFailureError) as info:
        train(Z, np.array([1.0]), TrainConfig(iterations=5, hidden=(4,)))
    assert info.value.iteration == 0


def test_train_config_validation():
    with pytest.raises(InvalidConfigError):
        TrainConfig(alpha=-1)
    with pytest.raises(InvalidConfigError):
        TrainConfig.from_dict({"iters": 3})
    cfg = TrainConfig(hidden=(8, 4), alpha=0.5)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_checkpoint_roundtrip(tmp_path):
    net = small_net()
    save_checkpoint(tmp_path / "c.json", net, train_cfg=TrainConfig(), diffusion_cfg=DiffusionConfig(), M=2)
    back, meta = load_checkpoint(tmp_path / "c.json")
    z = make_rng(3).normal(size=(7, 3))
    assert np.array_equal(back(0.42, z), net(0.42, z))
    assert meta["M"] == 2 and meta["layer_shapes"][0] == [11, 16]
