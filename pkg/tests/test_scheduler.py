import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layoutguide.model import ModelConfig, encode_tokens, init_params
from layoutguide.scheduler import (Batch, NoiseSchedule, Optimizer, SampleConfig, ScheduleError,
                                   add_noise, cfg_combine, diffusion_loss_at, noise_mse,
                                   sample_step, train, train_step, TrainConfig)
from layoutguide.shapes import DatasetSpec

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
SCHED = NoiseSchedule()


def test_schedule_sanity():
    b, ab = SCHED.betas, SCHED.alphas_cumprod
    assert (np.diff(b) >= 0).all() and (b > 0).all() and (b < 1).all()
    assert (np.diff(ab) < 0).all()
    assert ab[0] > 0.999
    assert ab[-1] < 0.05
    assert SCHED.alpha_bar(-1) == 1.0
    assert SCHED.sampling_timesteps(50)[:3] == [980, 960, 940]
    assert SCHED.sampling_timesteps(50)[-1] == 0
    with pytest.raises(ScheduleError):
        SCHED.sampling_timesteps(7)
    with pytest.raises(ScheduleError):
        SCHED.alpha_bar(1000)


def test_add_noise_examples():
    z0 = np.random.default_rng(0).standard_normal((4, 3))
    eps = np.random.default_rng(1).standard_normal((4, 3))
    np.testing.assert_allclose(add_noise(z0, eps, 0, SCHED), z0, atol=0.02)
    t = 500
    np.testing.assert_array_equal(add_noise(z0, np.zeros_like(z0), t, SCHED),
                                  math.sqrt(SCHED.alpha_bar(t)) * z0)
    with pytest.raises(ScheduleError):
        add_noise(z0, eps, 1000, SCHED)


@pytest.mark.parametrize("t", [50, 400, 900])
def test_add_noise_variance_monte_carlo(t):
    rng = np.random.default_rng(t)
    z0 = rng.normal(0.0, 0.6, size=10_000)
    zt = add_noise(z0, rng.standard_normal(10_000), t, SCHED)
    ab = SCHED.alpha_bar(t)
    expected = ab * z0.var() + (1 - ab)
    assert abs(zt.var() - expected) <= 0.05 * expected


def test_cfg_identities():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    np.testing.assert_allclose(cfg_combine(a, b, 1.0), b, atol=1e-15)
    np.testing.assert_array_equal(cfg_combine(a, b, 0.0), a)
    np.testing.assert_allclose(cfg_combine(a, b, 7.5) + cfg_combine(b, a, 7.5), a + b, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.floats(0, 20))
def test_cfg_linearity_property(seed, s):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(6), rng.standard_normal(6)
    np.testing.assert_allclose(cfg_combine(a, b, s) + cfg_combine(b, a, s), a + b, atol=1e-9)


def test_noise_mse_perfect_and_zero_predictor():
    eps = np.random.default_rng(3).standard_normal((2, 4, 3))
    assert noise_mse(eps, eps).item() == 0.0
    assert noise_mse(np.zeros_like(eps), eps).item() == pytest.approx(float((eps**2).mean()))
    assert noise_mse(np.zeros_like(eps), eps).item() > 0


def perfect_eps(x0, z, t):
    ab = SCHED.alpha_bar(t)
    return (z - math.sqrt(ab) * x0) / math.sqrt(1 - ab)


def test_sampler_with_perfect_denoiser_converges_monotonically():
    rng = np.random.default_rng(4)
    x0 = rng.uniform(-1, 1, size=(16, 12))
    z = rng.standard_normal(x0.shape)
    ts = SCHED.sampling_timesteps(50)
    errs = [np.linalg.norm(z - x0)]
    for i, t in enumerate(ts):
        t_next = ts[i + 1] if i + 1 < len(ts) else -1
        z = sample_step(z, perfect_eps(x0, z, t), t, t_next, SCHED)
        errs.append(np.linalg.norm(z - x0))
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-9


def test_sample_step_rejects_forward_time():
    with pytest.raises(ScheduleError):
        sample_step(np.zeros(3), np.zeros(3), 100, 200, SCHED)


def test_sample_config_validation():
    with pytest.raises(ValueError):
        SampleConfig(guidance_scale=-1)
    with pytest.raises(ValueError):
        SampleConfig(steps=0)


SMALL = ModelConfig(grid=4, patch=2, d=8, heads=2, blocks=1, d_text=8, vocab=64, n_ctx=16, d_time=8)


def tiny_batch(seed=0):
    rng = np.random.default_rng(seed)
    lat = rng.uniform(-1, 1, size=(3, SMALL.L, SMALL.latent_dim))
    toks = np.array([[1, 2, 4, 10] + [0] * 12] * 3)
    return Batch(lat, toks)


def test_zero_output_denoiser_loss_positive():
    p = init_params(0, SMALL)
    p.weights["out_w"][:] = 0.0
    eps = np.random.default_rng(1).standard_normal((3, SMALL.L, SMALL.latent_dim))
    loss = diffusion_loss_at(p, tiny_batch(), np.array([10, 500, 900]), eps, SCHED)
    assert loss == pytest.approx(float((eps**2).mean()))


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_train_step_reduces_fixed_batch_loss(kind):
    p = init_params(0, SMALL)
    batch = tiny_batch()
    t = np.array([100, 300, 600])
    eps = np.random.default_rng(9).standard_normal(batch.latents.shape)
    before = diffusion_loss_at(p, batch, t, eps, SCHED)
    opt = Optimizer(kind, 1e-2 if kind == "adam" else 0.05)
    for k in range(5):
        p, loss = train_step(p, batch, SCHED, np.random.default_rng(k), opt)
        assert np.isfinite(loss)
    assert diffusion_loss_at(p, batch, t, eps, SCHED) < before


def test_train_step_leaves_input_params_untouched():
    p = init_params(0, SMALL)
    crc = p.checksum()
    train_step(p, tiny_batch(), SCHED, np.random.default_rng(0), Optimizer("sgd", 0.1))
    assert p.checksum() == crc


def test_train_is_deterministic():
    cfg = TrainConfig(steps=2, batch_size=2, seed=5, dataset=DatasetSpec(image_size=8, min_size=2, max_size=3))
    a, ha = train(cfg, SMALL)
    b, hb = train(cfg, SMALL)
    assert a.checksum() == b.checksum() and ha == hb


def test_unconditional_branch_is_empty_prompt():
    from layoutguide.vocab import empty_prompt
    p = init_params(0, SMALL)
    e = encode_tokens(p, empty_prompt(SMALL.n_ctx)).data
    assert e.shape == (SMALL.n_ctx, SMALL.d_text)
    np.testing.assert_array_equal(e[1], p.weights["tok_emb"][0] + p.weights["tok_pos"][1])


def test_training_curve_fixture_halves_loss():
    curve = json.loads((FIXTURES / "denoiser.loss.json").read_text())["loss"]
    assert len(curve) >= 2000
    window = 50
    baseline = float(np.mean(curve[:window]))
    running = np.convolve(curve, np.ones(window) / window, mode="valid")
    assert running[2000 - window] <= 0.5 * baseline
