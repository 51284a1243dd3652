import numpy as np
import pytest
import torch

from conftest import fd_gradcheck
from hyperseg import geometry as geo
from hyperseg.errors import ShapeError
from hyperseg.nn import (AdamState, GyroConv3d, adam_step, backward, conv3d, conv_transpose3d,
                         gyro_conv, trilinear_resize)

F64 = torch.float64


def gen(seed):
    return torch.Generator().manual_seed(seed)


def naive_conv3d(x, w, b, stride, pad):
    c_out, k = w.shape[0], w.shape[2]
    x = np.pad(x, ((0, 0),) + ((pad, pad),) * 3)
    size = [(s - k) // stride + 1 for s in x.shape[1:]]
    out = np.zeros([c_out] + size)
    for o in range(c_out):
        for i, j, l in np.ndindex(*size):
            win = x[:, i * stride:i * stride + k, j * stride:j * stride + k, l * stride:l * stride + k]
            out[o, i, j, l] = (win * w[o]).sum() + b[o]
    return out


def naive_gyro_conv(x, a, p, pad):
    c_out, c_in, k = a.shape[0], a.shape[1], a.shape[2]
    d = x.shape[-1]
    xp = torch.zeros((c_in,) + tuple(s + 2 * pad for s in x.shape[1:4]) + (d,), dtype=F64)
    xp[:, pad:pad + x.shape[1], pad:pad + x.shape[2], pad:pad + x.shape[3]] = x
    size = [s - k + 1 for s in xp.shape[1:4]]
    out = torch.zeros([c_out] + size, dtype=F64)
    for o in range(c_out):
        for i, j, l in np.ndindex(*size):
            total = 0.0
            for ci in range(c_in):
                for r, s, t in np.ndindex(k, k, k):
                    total += float(geo.gyroplane(a[o, ci, r, s, t], p[o, ci, r, s, t],
                                                 xp[ci, i + r, j + s, l + t]))
            out[o, i, j, l] = total
    return out


def ball_field(shape, seed, scale=0.3):
    return geo.project_to_ball(scale * torch.randn(shape, generator=gen(seed), dtype=F64))


# -- conv3d -------------------------------------------------------------

def test_conv3d_single_voxel():
    x = torch.tensor([[[[2.0]]]], dtype=F64)
    w = torch.tensor([[[[[3.0]]]]], dtype=F64)
    assert float(conv3d(x, w, torch.tensor([0.5], dtype=F64))) == 6.5


def test_conv3d_identity_kernel():
    x = torch.randn(2, 5, 5, 5, generator=gen(0), dtype=F64)
    w = torch.zeros(2, 2, 3, 3, 3, dtype=F64)
    w[0, 0, 1, 1, 1] = w[1, 1, 1, 1, 1] = 1.0
    assert torch.equal(conv3d(x, w, padding=1), x)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv3d_matches_nested_loops(stride, pad):
    x = torch.randn(2, 6, 6, 6, generator=gen(1), dtype=F64)
    w = torch.randn(3, 2, 3, 3, 3, generator=gen(2), dtype=F64)
    b = torch.randn(3, generator=gen(3), dtype=F64)
    want = naive_conv3d(x.numpy(), w.numpy(), b.numpy(), stride, pad)
    got = conv3d(x, w, b, stride, pad).numpy()
    assert got.shape == want.shape
    assert np.abs(got - want).max() < 1e-6


def test_conv3d_shape_errors():
    with pytest.raises(ShapeError):
        conv3d(torch.zeros(2, 4, 4), torch.zeros(1, 1, 1, 1, 1))
    with pytest.raises(ShapeError):
        conv3d(torch.zeros(2, 4, 4, 4), torch.zeros(1, 3, 1, 1, 1))
    with pytest.raises(ShapeError):
        conv3d(torch.zeros(1, 2, 2, 2), torch.zeros(1, 1, 3, 3, 3))


def test_conv_transpose_is_adjoint_of_conv():
    # <conv(x), y> == <x, conv^T(y)> for matching stride and padding
    x = torch.randn(2, 7, 7, 7, generator=gen(4), dtype=F64)
    w = torch.randn(3, 2, 3, 3, 3, generator=gen(5), dtype=F64)
    y = torch.randn(3, 4, 4, 4, generator=gen(6), dtype=F64)
    lhs = (conv3d(x, w, stride=2, padding=1) * y).sum()
    rhs = (x * conv_transpose3d(y, w, stride=2, padding=1)).sum()
    assert float(lhs) == pytest.approx(float(rhs), rel=1e-12)


# -- gyro conv --------------------------------------------------------

def test_gyro_conv_single_tap_is_gyroplane():
    x = ball_field((1, 3, 3, 3, 2), 7)
    a = torch.randn(1, 1, 1, 1, 1, 2, generator=gen(8), dtype=F64)
    p = ball_field((1, 1, 1, 1, 1, 2), 9)
    want = geo.gyroplane(a[0, 0, 0, 0, 0], p[0, 0, 0, 0, 0], x[0])
    assert torch.allclose(gyro_conv(x, a, p)[0], want, atol=1e-14)


def test_gyro_conv_input_at_offset_gives_zero():
    p = ball_field((1, 1, 1, 1, 1, 2), 10)
    x = p[0, 0].expand(1, 4, 4, 4, 2).clone()
    a = torch.randn(1, 1, 1, 1, 1, 2, generator=gen(11), dtype=F64)
    assert gyro_conv(x, a, p).abs().max() < 1e-12


def test_gyro_conv_matches_nested_loops():
    x = ball_field((2, 4, 4, 4, 2), 12)
    a = torch.randn(3, 2, 3, 3, 3, 2, generator=gen(13), dtype=F64)
    p = ball_field((3, 2, 3, 3, 3, 2), 14, 0.1)
    got = gyro_conv(x, a, p, 3, 1, 1)
    assert torch.allclose(got, naive_gyro_conv(x, a, p, 1), atol=1e-10)


def test_gyro_conv_tied_parameters_broadcast():
    x = ball_field((1, 4, 4, 4, 2), 15)
    a = torch.randn(2, 1, 1, 1, 1, 2, generator=gen(16), dtype=F64)
    p = ball_field((2, 1, 1, 1, 1, 2), 17, 0.1)
    tied = gyro_conv(x, a, p, kernel_size=3, padding=1)
    full = gyro_conv(x, a.expand(2, 1, 3, 3, 3, 2), p.expand(2, 1, 3, 3, 3, 2), 3, 1, 1)
    assert torch.allclose(tied, full, atol=1e-12)


def test_gyro_conv_skip_padding_drops_border_taps():
    x = ball_field((1, 3, 3, 3, 2), 18)
    a = torch.randn(1, 1, 3, 3, 3, 2, generator=gen(19), dtype=F64)
    p = ball_field((1, 1, 3, 3, 3, 2), 20, 0.1)
    origin_pad = gyro_conv(x, a, p, 3, 1, 1)
    skipped = gyro_conv(x, a, p, 3, 1, 1, skip_padding=True)
    assert torch.allclose(origin_pad[0, 1, 1, 1], skipped[0, 1, 1, 1])  # interior: all taps valid
    zero_taps = gyro_conv(torch.zeros_like(x), a, p, 3, 1, 1) - gyro_conv(
        torch.zeros_like(x), a, p, 3, 1, 1, skip_padding=True)
    assert torch.allclose(origin_pad - skipped, zero_taps, atol=1e-12)


def test_gyro_conv_shape_errors():
    x = ball_field((1, 3, 3, 3, 2), 21)
    with pytest.raises(ShapeError):
        gyro_conv(x[..., 0], torch.zeros(1, 1, 1, 1, 1, 2), torch.zeros(1, 1, 1, 1, 1, 2))
    with pytest.raises(ShapeError):
        gyro_conv(x, torch.ones(1, 1, 1, 1, 1, 3), torch.zeros(1, 1, 1, 1, 1, 3))
    with pytest.raises(ShapeError):
        gyro_conv(x, torch.ones(1, 1, 5, 5, 5, 2), torch.zeros(1, 1, 5, 5, 5, 2))


def test_gyro_module_constraints():
    layer = GyroConv3d(1, 2, 1, 2, generator=gen(22)).double()
    with torch.no_grad():
        layer.p.fill_(3.0)
        layer.a[0].zero_()
    layer.enforce_constraints(gen(23))
    assert float(layer.p.detach().norm(dim=-1).max()) <= 1 - geo.EPS_BALL + 1e-12
    assert float(layer.a.detach().norm(dim=-1).min()) > 1e-12


# -- finite-difference gradient checks ----------------------------------

def test_gradcheck_conv3d():
    x = torch.randn(2, 4, 4, 4, generator=gen(30), dtype=F64)
    w = torch.randn(2, 2, 3, 3, 3, generator=gen(31), dtype=F64)
    b = torch.randn(2, generator=gen(32), dtype=F64)
    probe = torch.randn(2, 2, 2, 2, generator=gen(33), dtype=F64)
    fn = lambda x_, w_, b_: (conv3d(x_, w_, b_, 2, 1) * probe).sum()  # noqa: E731
    assert fd_gradcheck(fn, [x, w, b]) < 1e-4


def test_gradcheck_conv_transpose3d():
    x = torch.randn(2, 2, 2, 2, generator=gen(34), dtype=F64)
    w = torch.randn(2, 3, 3, 3, 3, generator=gen(35), dtype=F64)
    b = torch.randn(3, generator=gen(36), dtype=F64)
    probe = torch.randn(3, 4, 4, 4, generator=gen(37), dtype=F64)
    fn = lambda x_, w_, b_: (conv_transpose3d(x_, w_, b_, 2, 1, 1) * probe).sum()  # noqa: E731
    assert fd_gradcheck(fn, [x, w, b]) < 1e-4


def test_gradcheck_relu_away_from_kink():
    x = torch.randn(50, generator=gen(38), dtype=F64)
    x = x + 0.1 * torch.sign(x)
    assert fd_gradcheck(lambda t: (torch.relu(t) ** 2).sum(), [x]) < 1e-4


def test_gradcheck_gyro_conv():
    # C_in=2, C_out=3, k=3, d=2 on a 4^3 grid; inputs, normals and offsets all perturbed
    x = ball_field((2, 4, 4, 4, 2), 40)
    a = torch.randn(3, 2, 3, 3, 3, 2, generator=gen(41), dtype=F64)
    p = ball_field((3, 2, 3, 3, 3, 2), 42, 0.1)
    probe = torch.randn(3, 2, 2, 2, generator=gen(43), dtype=F64)
    fn = lambda x_, a_, p_: (gyro_conv(x_, a_, p_, 3, 2, 1) * probe).sum()  # noqa: E731
    assert fd_gradcheck(fn, [x, a, p]) < 1e-4


def test_gradcheck_geometry_composition():
    x = ball_field((3, 2), 44)
    y = ball_field((3, 2), 45)
    v = 0.5 * torch.randn(3, 2, generator=gen(46), dtype=F64)

    def fn(x_, y_, v_):
        z = geo.exp_map(x_, v_)
        return (geo.distance(z, y_) + geo.log_map(y_, geo.mobius_add(x_, z)).sum(-1)).sum()
    assert fd_gradcheck(fn, [x, y, v]) < 1e-4


def test_backward_examples():
    x = torch.randn(5, generator=gen(47), dtype=F64).requires_grad_()
    backward(x.sum())
    assert torch.equal(x.grad, torch.ones_like(x))
    x.grad = None
    backward((x * x).sum())
    assert torch.allclose(x.grad, 2 * x.detach())
    with pytest.raises(ShapeError):
        backward(x * 2)


def test_ops_deterministic():
    x = ball_field((2, 4, 4, 4, 2), 48).requires_grad_()
    a = torch.randn(3, 2, 3, 3, 3, 2, generator=gen(49), dtype=F64).requires_grad_()
    p = ball_field((3, 2, 3, 3, 3, 2), 50, 0.1).requires_grad_()
    runs = []
    for _ in range(2):
        out = gyro_conv(x, a, p, 3, 1, 1)
        ga, gp = torch.autograd.grad(out.square().sum(), (a, p))
        runs.append((out.detach(), ga, gp))
    assert all(torch.equal(u, v) for u, v in zip(*runs))


# -- resize -------------------------------------------------------------

def test_resize_same_size_identical():
    x = torch.randn(1, 4, 5, 6, generator=gen(51))
    assert torch.equal(trilinear_resize(x, (4, 5, 6)), x)


def test_resize_constant_stays_constant():
    x = np.full((1, 7, 9, 5), 2.5, np.float32)
    out = trilinear_resize(x, (16, 16, 16))
    assert isinstance(out, np.ndarray) and out.shape == (1, 16, 16, 16)
    assert np.abs(out - 2.5).max() < 1e-6


def test_resize_ramp_closed_form():
    n, m = 5, 10
    x = torch.arange(n, dtype=F64).reshape(1, n, 1, 1).expand(1, n, 3, 3).clone()
    out = trilinear_resize(x, (m, 3, 3))
    want = torch.linspace(0, n - 1, m, dtype=F64)  # corner-aligned positions
    assert (out[0, :, 1, 1] - want).abs().max() < 1e-6


def test_resize_bad_target():
    with pytest.raises(ShapeError):
        trilinear_resize(torch.zeros(1, 2, 2, 2), (0, 2, 2))


# -- Adam -------------------------------------------------------------

def test_adam_zero_gradient_is_noop():
    p = {"w": torch.randn(4, generator=gen(52), dtype=F64)}
    before = p["w"].clone()
    adam_step(p, {"w": torch.zeros(4, dtype=F64)}, AdamState())
    assert torch.equal(p["w"], before)


def test_adam_first_step():
    p = {"w": torch.tensor([0.0], dtype=F64)}
    adam_step(p, {"w": torch.tensor([1.0], dtype=F64)}, AdamState(lr=1e-4))
    assert float(p["w"]) == pytest.approx(-1e-4, rel=1e-7)


def test_adam_hand_unrolled_recurrence():
    lr, b1, b2, eps, g = 1e-3, 0.9, 0.999, 1e-8, 0.3
    theta, m, v = 1.0, 0.0, 0.0
    p = {"w": torch.tensor([theta], dtype=F64)}
    state = AdamState(lr=lr)
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
        adam_step(p, {"w": torch.tensor([g], dtype=F64)}, state)
    assert abs(float(p["w"]) - theta) < 1e-10
    assert state.step == 2


def test_adam_matches_torch_optimizer():
    w0 = torch.randn(6, 3, generator=gen(53), dtype=F64)
    grads = [torch.randn(6, 3, generator=gen(54 + i), dtype=F64) for i in range(5)]
    ref = torch.nn.Parameter(w0.clone())
    opt = torch.optim.Adam([ref], lr=1e-2, betas=(0.9, 0.999), eps=1e-8)
    ours = {"w": w0.clone()}
    state = AdamState(lr=1e-2)
    for g in grads:
        ref.grad = g.clone()
        opt.step()
        adam_step(ours, {"w": g}, state)
    assert torch.allclose(ours["w"], ref.detach(), atol=1e-12)


def test_adam_reprojects_ball_parameters():
    p = {"p": torch.tensor([0.99999, 0.0], dtype=F64)}
    adam_step(p, {"p": torch.tensor([-1.0, 0.0], dtype=F64)}, AdamState(lr=0.1), ball_params={"p"})
    assert float(p["p"].norm()) <= 1 - geo.EPS_BALL + 1e-12


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step({"w": torch.zeros(3)}, {"w": torch.zeros(4)}, AdamState())
