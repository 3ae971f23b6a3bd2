import numpy as np
import pytest
import torch

from motionpref import diffusion as df


def test_schedule_invariants():
    s = df.linear_schedule()
    assert s.steps == 1000
    assert np.all(np.diff(s.alphabars) < 0)
    assert np.allclose(s.alphabars, np.cumprod(1 - s.betas), atol=1e-12, rtol=0)
    with pytest.raises(IndexError):
        s.alphabar(0)
    with pytest.raises(IndexError):
        s.alphabar(1001)
    with pytest.raises(ValueError):
        df.make_schedule([0.5, 1.0])


def test_forward_marginal_limits():
    s = df.linear_schedule()
    rng = np.random.default_rng(0)
    x0 = torch.as_tensor(rng.standard_normal((3, 5)))
    eps = torch.as_tensor(rng.standard_normal((3, 5)))
    out = df.forward_marginal(x0, 1, eps, s)
    assert torch.norm(out - x0) <= np.sqrt(s.betas[0]) * torch.norm(eps) + 1e-12
    zero = df.forward_marginal(torch.zeros(3, 5, dtype=torch.float64), 500, eps, s)
    assert torch.equal(zero, float(np.sqrt(1 - s.alphabar(500))) * eps)


def test_forward_marginal_per_sample_steps():
    s = df.linear_schedule()
    x0 = torch.ones(2, 3, dtype=torch.float64)
    eps = torch.zeros(2, 3, dtype=torch.float64)
    out = df.forward_marginal(x0, np.array([1, 1000]), eps, s)
    assert torch.allclose(out[0], torch.full((3,), np.sqrt(s.alphabar(1)), dtype=torch.float64))
    assert torch.allclose(out[1], torch.full((3,), np.sqrt(s.alphabar(1000)), dtype=torch.float64))


def test_ddpm_loss_oracles():
    s = df.linear_schedule()
    rng = np.random.default_rng(1)
    x0 = torch.as_tensor(rng.standard_normal((64, 8)))
    eps = torch.as_tensor(rng.standard_normal((64, 8)))
    assert df.ddpm_loss(lambda x, t: eps, x0, 10, eps, s) == 0
    zero = df.ddpm_loss(lambda x, t: torch.zeros_like(x), x0, 10, eps, s)
    assert zero == pytest.approx(float((eps**2).mean()))
    assert abs(float(zero) - 1.0) < 3 * np.sqrt(2 / eps.numel())


def test_ddpm_loss_gradient():
    s = df.linear_schedule()
    rng = np.random.default_rng(2)
    x0 = torch.as_tensor(rng.standard_normal((4, 3)))
    eps = torch.as_tensor(rng.standard_normal((4, 3)))
    W = torch.as_tensor(rng.standard_normal((3, 3))).requires_grad_(True)

    def loss(w):
        return df.ddpm_loss(lambda x, t: x @ w, x0, 200, eps, s)

    loss(W).backward()
    h = 1e-5
    num = torch.zeros_like(W)
    with torch.no_grad():
        for i in range(3):
            for j in range(3):
                e = torch.zeros_like(W)
                e[i, j] = h
                num[i, j] = (loss(W + e) - loss(W - e)) / (2 * h)
    assert torch.allclose(W.grad, num, rtol=1e-4, atol=1e-10)


def test_fm_interpolate_endpoints_and_derivative():
    rng = np.random.default_rng(3)
    x0 = torch.as_tensor(rng.standard_normal((2, 4)))
    eps = torch.as_tensor(rng.standard_normal((2, 4)))
    assert torch.equal(df.fm_interpolate(x0, eps, 0.0).x_tau, x0)
    assert torch.equal(df.fm_interpolate(x0, eps, 1.0).x_tau, eps)
    h = 1e-6
    fd = (df.fm_interpolate(x0, eps, 0.3 + h).x_tau - df.fm_interpolate(x0, eps, 0.3 - h).x_tau) / (2 * h)
    assert torch.allclose(fd, df.fm_interpolate(x0, eps, 0.3).v_target, atol=1e-8)
    with pytest.raises(ValueError):
        df.fm_interpolate(x0, eps, 1.5)


def test_fm_loss_oracles():
    rng = np.random.default_rng(4)
    x0 = torch.as_tensor(rng.standard_normal((8, 4)))
    eps = torch.as_tensor(rng.standard_normal((8, 4)))
    tau = torch.as_tensor(rng.uniform(size=8))
    s = df.fm_interpolate(x0, eps, tau)
    assert df.fm_loss(lambda x, t, c: s.v_target, s) == 0
    zero = df.fm_loss(lambda x, t, c: torch.zeros_like(x), s)
    assert zero == pytest.approx(float((s.v_target**2).mean()))
    assert df.fm_loss(lambda x, t, c: torch.randn_like(x), s) >= 0
    with pytest.raises(ValueError):
        df.fm_loss(lambda x, t, c: torch.zeros(3), s)


def test_ode_recovers_x0_for_linear_field():
    rng = np.random.default_rng(5)
    x0 = torch.as_tensor(rng.standard_normal((2, 3)))
    noise = df.initial_noise((2, 3), seed=9)
    v = noise - x0
    for steps in (1, 3, 20):
        out = df.sample_ode(lambda x, t, c: v, (2, 3), steps=steps, noise=noise)
        assert torch.allclose(out, x0, atol=1e-12)


def test_ode_single_step_and_determinism():
    def model(x, t, c):
        return torch.sin(x) * t[:, None]

    x1 = df.initial_noise((4, 2), seed=3)
    out = df.sample_ode(model, (4, 2), steps=1, seed=3)
    assert torch.equal(out, x1 - model(x1, torch.ones(4, dtype=torch.float64), None))
    a = df.sample_ode(model, (4, 2), steps=7, seed=11)
    b = df.sample_ode(model, (4, 2), steps=7, seed=11)
    assert a.numpy().tobytes() == b.numpy().tobytes()
    with pytest.raises(ValueError):
        df.sample_ode(model, (4, 2), steps=0)


def delta_oracle(x0, sched):
    def model(x, t):
        ab = torch.as_tensor(sched.alphabars[t.numpy() - 1], dtype=x.dtype)[:, None]
        return (x - ab.sqrt() * x0) / (1 - ab).sqrt()
    return model


def test_ddpm_sampler_delta_dataset():
    s = df.linear_schedule()
    x0 = torch.tensor([[0.7, -1.2, 0.1]], dtype=torch.float64)
    out = df.sample_ddpm(delta_oracle(x0, s), (1, 3), s, seed=0)
    assert torch.max(torch.abs(out - x0)) < 0.1
    again = df.sample_ddpm(delta_oracle(x0, s), (1, 3), s, seed=0)
    assert out.numpy().tobytes() == again.numpy().tobytes()


def test_ddpm_single_step_algebra():
    s = df.make_schedule([0.3])

    def model(x, t):
        return 0.5 * x

    z = torch.as_tensor(np.random.default_rng(7).standard_normal((2, 2)))
    out = df.sample_ddpm(model, (2, 2), s, seed=7)
    expected = (z - np.sqrt(0.3) * 0.5 * z) / np.sqrt(0.7)
    assert torch.allclose(out, expected, atol=1e-12)


def test_forward_moments_small():
    s = df.linear_schedule()
    rng = np.random.default_rng(8)
    n = 20000
    x0 = torch.full((n, 1), 0.8, dtype=torch.float64)
    eps = torch.as_tensor(rng.standard_normal((n, 1)))
    x = df.forward_marginal(x0, 300, eps, s).numpy().ravel()
    ab = s.alphabar(300)
    var = 1 - ab
    assert abs(x.mean() - np.sqrt(ab) * 0.8) < 3 * np.sqrt(var / n)
    assert abs(x.var(ddof=1) - var) < 3 * var * np.sqrt(2 / (n - 1))
