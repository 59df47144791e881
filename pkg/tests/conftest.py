import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _seeded():
    torch.manual_seed(0)
    np.random.seed(0)


def central_difference_grad(fn, x: torch.Tensor, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar fn w.r.t. tensor x (float64)."""
    x0 = x.detach().clone()
    flat = x0.reshape(-1)
    grad = np.zeros(flat.numel())
    for i in range(flat.numel()):
        step = h * max(1.0, abs(float(flat[i])))
        orig = float(flat[i])
        flat[i] = orig + step
        hi = float(fn(x0.reshape(x.shape)))
        flat[i] = orig - step
        lo = float(fn(x0.reshape(x.shape)))
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(x.shape)


def assert_grad_matches(fn, x: torch.Tensor, rtol: float = 1e-4, atol: float = 1e-7):
    """Autograd gradient of fn(x) must match central differences at 64-bit."""
    assert x.dtype == torch.float64
    xp = x.detach().clone().requires_grad_(True)
    fn(xp).backward()
    auto = xp.grad.detach().numpy()
    fd = central_difference_grad(fn, x)
    np.testing.assert_allclose(auto, fd, rtol=rtol, atol=atol)
