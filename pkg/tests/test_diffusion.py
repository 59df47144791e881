import numpy as np
import pytest
import torch

from gshead.diffusion import (DenoiserConfig, GeometryWeights, GRUDenoiser,
                              MotionSample, MotionSequence, NoiseSchedule,
                              TransformerDenoiser, deform_loss, forward_noise,
                              geometry_loss, laplacian_energy, lip_loss,
                              motion_loss, neighbor_mean_matrix, sample,
                              vertex_loss)
from gshead.mesh import head_template

from conftest import assert_grad_matches

TINY = DenoiserConfig(d_model=32, layers=1, heads=2, feedforward=64,
                      window=16, overlap=4)


class OracleDenoiser:
    """Always predicts a fixed clean sequence; stands in for a perfect model."""

    def __init__(self, clean: torch.Tensor, config=TINY):
        self.clean = clean
        self.config = config
        self.vertex_count = clean.shape[1]

    def __call__(self, noisy, template, au, audio, step, context=None):
        return self.clean[:noisy.shape[0]] if noisy.ndim == 3 else \
            self.clean[None, :noisy.shape[1]].expand(noisy.shape[0], -1, -1, -1)


def test_motion_sequence_validation():
    MotionSequence(np.zeros((4, 10, 3)))
    with pytest.raises(ValueError):
        MotionSequence(np.zeros((4, 10, 2)))
    with pytest.raises(ValueError):
        MotionSequence(np.full((1, 2, 3), np.inf))


def test_cosine_schedule_invariants():
    sched = NoiseSchedule.cosine(50)
    assert sched.steps == 50
    assert sched.alpha_bars[0] == 1.0
    assert np.all(sched.betas > 0) and np.all(sched.betas < 1)
    assert np.all(np.diff(sched.betas) >= -1e-12)
    assert np.all(sched.alpha_bars > 0) and np.all(sched.alpha_bars <= 1)
    assert sched.alpha_bars[-1] < 1e-4  # end state is nearly pure noise


def test_schedule_rejects_bad_betas():
    with pytest.raises(ValueError):
        NoiseSchedule(betas=np.array([0.5, 0.1]), alpha_bars=np.array([1.0, 0.5, 0.45]))


def test_forward_noise_step_zero_is_identity():
    sched = NoiseSchedule.cosine(10)
    clean = np.random.default_rng(0).normal(0, 1, (3, 5, 3))
    np.testing.assert_array_equal(forward_noise(clean, 0, sched, rng_seed=1), clean)


def test_forward_noise_deterministic_given_seed():
    sched = NoiseSchedule.cosine(10)
    clean = np.random.default_rng(1).normal(0, 1, (3, 5, 3))
    a = forward_noise(clean, 5, sched, rng_seed=42)
    b = forward_noise(clean, 5, sched, rng_seed=42)
    np.testing.assert_array_equal(a, b)
    c = forward_noise(clean, 5, sched, rng_seed=43)
    assert np.abs(a - c).max() > 1e-9


def test_forward_noise_terminal_moments():
    sched = NoiseSchedule.cosine(50)
    clean = np.random.default_rng(2).normal(0.0, 1.0, (120, 280, 3))  # ~1e5 samples
    noisy = forward_noise(clean, 50, sched, rng_seed=7)
    assert abs(noisy.mean()) < 0.05
    assert 0.9 <= noisy.var() <= 1.1


def test_forward_noise_rejects_out_of_range_step():
    sched = NoiseSchedule.cosine(10)
    with pytest.raises(ValueError):
        forward_noise(np.zeros((1, 2, 3)), 11, sched, rng_seed=0)


# --- sampling ---------------------------------------------------------------

def test_single_step_chain_returns_prediction_directly():
    clean = torch.tensor(np.random.default_rng(3).normal(0, 1, (4, 6, 3)))
    sched = NoiseSchedule.cosine(1)
    out = sample(OracleDenoiser(clean), sched, torch.zeros(6, 3, dtype=torch.float64),
                 None, None, frames=4, seed=0)
    np.testing.assert_array_equal(out.numpy(), clean.numpy())


def test_oracle_denoiser_fixed_point():
    clean = torch.tensor(np.random.default_rng(4).normal(0, 1, (10, 6, 3)))
    sched = NoiseSchedule.cosine(20)
    out = sample(OracleDenoiser(clean), sched, torch.zeros(6, 3, dtype=torch.float64),
                 None, None, frames=10, seed=5)
    np.testing.assert_array_equal(out.numpy(), clean.numpy())


def test_sampling_reproducible_bitwise():
    torch.manual_seed(0)
    model = TransformerDenoiser(vertex_count=6, config=TINY, num_steps=8)
    sched = NoiseSchedule.cosine(8)
    tmpl = torch.zeros(6, 3, dtype=torch.float64)
    au = torch.tensor(np.random.default_rng(5).uniform(0, 5, (12, 17)))
    a = sample(model, sched, tmpl, au, None, frames=12, seed=11)
    b = sample(model, sched, tmpl, au, None, frames=12, seed=11)
    np.testing.assert_array_equal(a.numpy(), b.numpy())
    c = sample(model, sched, tmpl, au, None, frames=12, seed=12)
    assert np.abs(a.numpy() - c.numpy()).max() > 1e-9


def test_zero_frames_returns_empty():
    torch.manual_seed(0)
    model = TransformerDenoiser(vertex_count=6, config=TINY, num_steps=8)
    out = sample(model, NoiseSchedule.cosine(8), torch.zeros(6, 3, dtype=torch.float64),
                 None, None, frames=0, seed=0)
    assert out.shape == (0, 6, 3)


def test_au_conditioning_changes_output():
    torch.manual_seed(1)
    model = TransformerDenoiser(vertex_count=6, config=TINY, num_steps=8)
    sched = NoiseSchedule.cosine(8)
    tmpl = torch.zeros(6, 3, dtype=torch.float64)
    rng = np.random.default_rng(6)
    au = torch.tensor(rng.uniform(0, 5, (10, 17)))
    base = sample(model, sched, tmpl, au, None, frames=10, seed=3)
    perm = torch.tensor(au.numpy()[rng.permutation(10)])
    permuted = sample(model, sched, tmpl, perm, None, frames=10, seed=3)
    assert np.abs(base.numpy() - permuted.numpy()).max() > 1e-8


def test_au_conditioning_ignored_when_disabled():
    torch.manual_seed(2)
    cfg = DenoiserConfig(d_model=32, layers=1, heads=2, feedforward=64,
                         window=16, overlap=4, use_au=False)
    model = TransformerDenoiser(vertex_count=6, config=cfg, num_steps=8)
    sched = NoiseSchedule.cosine(8)
    tmpl = torch.zeros(6, 3, dtype=torch.float64)
    rng = np.random.default_rng(7)
    au1 = torch.tensor(rng.uniform(0, 5, (10, 17)))
    au2 = torch.tensor(rng.uniform(0, 5, (10, 17)))
    a = sample(model, sched, tmpl, au1, None, frames=10, seed=3)
    b = sample(model, sched, tmpl, au2, None, frames=10, seed=3)
    np.testing.assert_array_equal(a.numpy(), b.numpy())


def test_windowed_inference_locality():
    torch.manual_seed(3)
    model = TransformerDenoiser(vertex_count=6, config=TINY, num_steps=6)
    sched = NoiseSchedule.cosine(6)
    tmpl = torch.zeros(6, 3, dtype=torch.float64)
    rng = np.random.default_rng(8)
    au = torch.tensor(rng.uniform(0, 5, (24, 17)))  # windows [0:16) and [16:24)
    base = sample(model, sched, tmpl, au, None, frames=24, seed=4)
    tampered = au.clone()
    tampered[20] = torch.tensor(rng.uniform(0, 5, 17))
    out = sample(model, sched, tmpl, tampered, None, frames=24, seed=4)
    np.testing.assert_array_equal(base.numpy()[:16], out.numpy()[:16])
    assert np.abs(base.numpy()[16:] - out.numpy()[16:]).max() > 1e-9


# --- losses ------------------------------------------------------------------

def test_vertex_loss_identity_and_345():
    gt = np.random.default_rng(9).normal(0, 1, (3, 5, 3))
    assert float(vertex_loss(gt, gt)) == 0.0
    pred = np.zeros((1, 1, 3))
    gt1 = np.array([[[3.0, 4.0, 0.0]]])
    assert float(vertex_loss(pred, gt1)) == pytest.approx(5.0)


def test_vertex_loss_matches_loop_oracle():
    rng = np.random.default_rng(10)
    pred = rng.normal(0, 1, (4, 7, 3))
    gt = rng.normal(0, 1, (4, 7, 3))
    expected = np.mean([np.linalg.norm(pred[t, v] - gt[t, v])
                        for t in range(4) for v in range(7)])
    assert float(vertex_loss(pred, gt)) == pytest.approx(expected, abs=1e-12)


def test_motion_loss_constant_offset_invariance():
    rng = np.random.default_rng(11)
    gt = rng.normal(0, 1, (5, 6, 3))
    pred = gt + np.array([0.3, -0.2, 0.9])
    assert float(motion_loss(pred, gt)) == pytest.approx(0.0, abs=1e-12)


def test_motion_loss_single_frame_zero():
    assert float(motion_loss(np.ones((1, 4, 3)), np.zeros((1, 4, 3)))) == 0.0


def test_motion_loss_matches_difference_oracle():
    rng = np.random.default_rng(12)
    t_len, v_len = 6, 5
    pred = rng.normal(0, 1, (t_len, v_len, 3))
    gt = rng.normal(0, 1, (t_len, v_len, 3))
    dp = np.diff(pred, axis=0)
    dg = np.diff(gt, axis=0)
    vel = sum(np.linalg.norm(dp[t, v] - dg[t, v]) for t in range(t_len - 1)
              for v in range(v_len)) / (t_len * v_len)
    d2p = np.diff(dp, axis=0)
    d2g = np.diff(dg, axis=0)
    acc = sum(np.linalg.norm(d2p[t, v] - d2g[t, v]) for t in range(t_len - 2)
              for v in range(v_len)) / ((t_len - 1) * v_len)
    assert float(motion_loss(pred, gt)) == pytest.approx(vel + acc, abs=1e-12)


@pytest.fixture(scope="module")
def small_mesh():
    return head_template(rings=6, segments=8)


def test_deform_loss_zero_offsets(small_mesh):
    nm = neighbor_mean_matrix(small_mesh.adjacency())
    v = small_mesh.vertex_count
    assert float(deform_loss(np.zeros((3, v, 3)), nm)) == 0.0


def test_deform_loss_rigid_translation_kills_laplacian(small_mesh):
    nm = neighbor_mean_matrix(small_mesh.adjacency())
    v = small_mesh.vertex_count
    d = np.array([0.3, 0.4, 0.0])
    offsets = np.tile(d, (2, v, 1))
    lap = float(laplacian_energy(torch.tensor(offsets), nm))
    assert lap == pytest.approx(0.0, abs=1e-20)
    assert float(deform_loss(offsets, nm)) == pytest.approx(0.5)  # |d| = 0.5


def test_deform_loss_matches_neighbor_average_oracle(small_mesh):
    adj = small_mesh.adjacency()
    nm = neighbor_mean_matrix(adj)
    v = small_mesh.vertex_count
    rng = np.random.default_rng(13)
    offsets = rng.normal(0, 0.1, (2, v, 3))
    lam = 0.7
    mag = np.mean([np.linalg.norm(offsets[t, i]) for t in range(2) for i in range(v)])
    lap = np.mean([np.sum((offsets[t, i] - offsets[t][adj[i]].mean(axis=0)) ** 2)
                   for t in range(2) for i in range(v)])
    got = float(deform_loss(offsets, nm, lambda_lap=lam))
    assert got == pytest.approx(mag + lam * lap, rel=1e-9)


def test_lip_loss_empty_sets_zero():
    pred = np.ones((3, 4, 3))
    gt = np.zeros((3, 4, 3))
    assert float(lip_loss(pred, gt, [], [0, 1])) == 0.0
    assert float(lip_loss(pred, gt, [0], [])) == 0.0


def test_lip_loss_full_sets_equal_vertex_loss():
    rng = np.random.default_rng(14)
    pred = rng.normal(0, 1, (4, 5, 3))
    gt = rng.normal(0, 1, (4, 5, 3))
    full = float(lip_loss(pred, gt, np.arange(5), np.arange(4)))
    assert full == pytest.approx(float(vertex_loss(pred, gt)), rel=1e-12)


def test_lip_loss_matches_masked_oracle():
    rng = np.random.default_rng(15)
    pred = rng.normal(0, 1, (6, 8, 3))
    gt = rng.normal(0, 1, (6, 8, 3))
    lv = np.array([1, 4, 6])
    lt = np.array([0, 3])
    expected = np.mean([np.linalg.norm(pred[t, v] - gt[t, v])
                        for t in lt for v in lv])
    assert float(lip_loss(pred, gt, lv, lt)) == pytest.approx(expected, abs=1e-12)


def test_geometry_loss_weighted_sum(small_mesh):
    nm = neighbor_mean_matrix(small_mesh.adjacency())
    v = small_mesh.vertex_count
    rng = np.random.default_rng(16)
    pred = rng.normal(0, 0.2, (4, v, 3))
    gt = rng.normal(0, 0.2, (4, v, 3))
    lv = np.arange(0, v, 3)
    lt = np.arange(4)
    w = GeometryWeights()
    expected = (1.0 * float(vertex_loss(pred, gt))
                + 0.5 * float(motion_loss(pred, gt))
                + 0.1 * float(deform_loss(pred, nm, w.lambda_lap))
                + 0.8 * float(lip_loss(pred, gt, lv, lt)))
    got = float(geometry_loss(pred, gt, nm, lv, lt, w))
    assert got == pytest.approx(expected, rel=1e-12)
    # spec arithmetic: components (1, 2, 3, 4) at defaults
    assert 1.0 * 1 + 0.5 * 2 + 0.1 * 3 + 0.8 * 4 == pytest.approx(5.5)
    # zero case
    zeros = np.zeros((2, v, 3))
    assert float(geometry_loss(zeros, zeros, nm, lv, np.arange(2), w)) == 0.0


def test_geometry_loss_gradient_matches_fd(small_mesh):
    nm = neighbor_mean_matrix(small_mesh.adjacency())
    rng = np.random.default_rng(17)
    v = 8
    nm8 = nm[:v, :v] / nm[:v, :v].sum(dim=1, keepdim=True).clamp(min=1e-12)
    gt = torch.tensor(rng.normal(0, 0.3, (3, v, 3)))
    pred0 = torch.tensor(rng.normal(0, 0.3, (3, v, 3)))
    lv = np.array([0, 2, 5])
    lt = np.array([0, 2])
    assert_grad_matches(
        lambda p: geometry_loss(p, gt, nm8, lv, lt, GeometryWeights()), pred0)


# --- denoisers ----------------------------------------------------------------

def test_gru_parameter_budget_matches_transformer():
    t_model = TransformerDenoiser(vertex_count=506)
    g_model = GRUDenoiser(vertex_count=506)
    t_params = sum(p.numel() for p in t_model.parameters())
    g_params = sum(p.numel() for p in g_model.parameters())
    assert abs(g_params - t_params) / t_params < 0.10


def test_denoiser_batched_and_unbatched_agree():
    torch.manual_seed(4)
    model = TransformerDenoiser(vertex_count=5, config=TINY, num_steps=6)
    rng = np.random.default_rng(18)
    noisy = torch.tensor(rng.normal(0, 1, (3, 5, 3)))
    tmpl = torch.tensor(rng.normal(0, 1, (5, 3)))
    au = torch.tensor(rng.uniform(0, 5, (3, 17)))
    step = torch.tensor([2], dtype=torch.long)
    single = model(noisy, tmpl, au, None, step)
    batched = model(noisy.unsqueeze(0), tmpl, au.unsqueeze(0), None, step)
    np.testing.assert_allclose(single.detach().numpy(),
                               batched.squeeze(0).detach().numpy(), atol=1e-12)
