import numpy as np
import pytest
import torch

from gshead.triplane import AxisAlignedBounds, Triplane, bilinear_sample, triplane_color


@pytest.fixture
def bounds():
    return AxisAlignedBounds([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0])


def test_degenerate_bounds_rejected():
    with pytest.raises(ValueError):
        AxisAlignedBounds([0, 0, 0], [1, 1, 0])


def test_constant_grids_give_position_independent_color(bounds):
    tp = Triplane(resolution=8, channels=4)
    with torch.no_grad():
        tp.plane_xy.fill_(0.3)
        tp.plane_xz.fill_(-0.1)
        tp.plane_yz.fill_(0.7)
    pts = torch.tensor(np.random.default_rng(0).uniform(-1, 1, (32, 3)))
    colors = tp(pts, bounds)
    np.testing.assert_allclose(colors.detach().numpy(),
                               np.tile(colors[0].detach().numpy(), (32, 1)), atol=1e-12)


def test_xy_plane_sample_ignores_z(bounds):
    tp = Triplane(resolution=16, channels=4)
    p1 = torch.tensor([[0.3, -0.2, 0.9]])
    p2 = torch.tensor([[0.3, -0.2, -0.4]])
    f1 = bilinear_sample(tp.plane_xy, bounds.normalize(p1)[:, (0, 1)])
    f2 = bilinear_sample(tp.plane_xy, bounds.normalize(p2)[:, (0, 1)])
    np.testing.assert_array_equal(f1.detach().numpy(), f2.detach().numpy())


def manual_bilinear(grid, u, v):
    h, w, _ = grid.shape
    gx, gy = u * (w - 1), v * (h - 1)
    x0, y0 = min(int(np.floor(gx)), w - 2), min(int(np.floor(gy)), h - 2)
    fx, fy = gx - x0, gy - y0
    return ((1 - fy) * ((1 - fx) * grid[y0, x0] + fx * grid[y0, x0 + 1])
            + fy * ((1 - fx) * grid[y0 + 1, x0] + fx * grid[y0 + 1, x0 + 1]))


def test_query_matches_manual_oracle(bounds):
    tp = Triplane(resolution=12, channels=6, hidden=16)
    rng = np.random.default_rng(5)
    pts = rng.uniform(-1, 1, (10, 3))
    got = triplane_color(tp, pts, bounds)

    xy = tp.plane_xy.detach().numpy()
    xz = tp.plane_xz.detach().numpy()
    yz = tp.plane_yz.detach().numpy()
    w0 = tp.decoder[0].weight.detach().numpy()
    b0 = tp.decoder[0].bias.detach().numpy()
    w1 = tp.decoder[2].weight.detach().numpy()
    b1 = tp.decoder[2].bias.detach().numpy()
    for p, expected in zip(pts, got):
        s = (p + 1.0) / 2.0
        feat = np.concatenate([
            manual_bilinear(xy, s[0], s[1]),
            manual_bilinear(xz, s[0], s[2]),
            manual_bilinear(yz, s[1], s[2]),
        ])
        hidden = np.maximum(w0 @ feat + b0, 0.0)
        rgb = 1.0 / (1.0 + np.exp(-(w1 @ hidden + b1)))
        np.testing.assert_allclose(expected, rgb, atol=1e-9)


def test_positions_outside_bounds_clamp(bounds):
    tp = Triplane(resolution=8, channels=4)
    inside = triplane_color(tp, np.array([[1.0, 0.0, 0.0]]), bounds)
    outside = triplane_color(tp, np.array([[5.0, 0.0, 0.0]]), bounds)
    np.testing.assert_array_equal(inside, outside)


def test_output_in_unit_interval(bounds):
    tp = Triplane(resolution=8, channels=4, init_scale=3.0)
    pts = np.random.default_rng(9).uniform(-1, 1, (64, 3))
    colors = triplane_color(tp, pts, bounds)
    assert colors.min() >= 0.0 and colors.max() <= 1.0


def test_continuity_in_position(bounds):
    tp = Triplane(resolution=8, channels=4)
    base = np.array([[0.21, -0.37, 0.55]])
    c0 = triplane_color(tp, base, bounds)
    c1 = triplane_color(tp, base + 1e-7, bounds)
    assert np.abs(c1 - c0).max() < 1e-5
