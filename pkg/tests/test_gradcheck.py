import pytest
import torch

from nsinger.checks import block_checks, discriminator_objective_check
from nsinger.errors import NonFiniteError
from nsinger.gradcheck import Coordinate, finite_difference_check

D = torch.float64


def test_quadratic_exact():
    p = torch.randn(5, dtype=D, requires_grad=True)
    rep = finite_difference_check(lambda: (p ** 2).sum(), {"p": p})
    assert rep.passed and len(rep.coordinates) == 5
    for c in rep.coordinates:
        assert abs(c.analytic - 2 * p[c.index].item()) < 1e-9
        assert abs(c.numeric - 2 * p[c.index].item()) < 1e-9


def test_constant_function_zero_gradient():
    p = torch.randn(3, dtype=D, requires_grad=True)
    rep = finite_difference_check(lambda: p.sum() * 0 + 2.0, {"p": p})
    assert rep.passed and all(c.analytic == 0 and c.numeric == 0 for c in rep.coordinates)


class _WrongSquare(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x * x

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        return g * 3 * x  # deliberately wrong


def test_detects_wrong_gradient():
    p = torch.rand(4, dtype=D, requires_grad=True) + 0.5
    rep = finite_difference_check(lambda: _WrongSquare.apply(p).sum(), {"p": p})
    assert not rep.passed
    assert rep.max_rel_error == pytest.approx(1 / 3, rel=1e-6)


def test_sampling_and_parameter_restoration():
    a = torch.randn(10, dtype=D, requires_grad=True)
    b = torch.randn(3, 4, dtype=D, requires_grad=True)
    before = (a.detach().clone(), b.detach().clone())
    rep = finite_difference_check(lambda: (a.sin().sum() + (b ** 3).sum()), [("a", a), ("b", b)],
                                  n_samples=7, seed=3)
    assert len(rep.coordinates) == 7 and rep.passed
    assert torch.equal(a.detach(), before[0]) and torch.equal(b.detach(), before[1])
    assert set(rep.per_parameter()) <= {"a", "b"}


def test_nonfinite_objective():
    p = torch.tensor([float("nan")], dtype=D, requires_grad=True)
    with pytest.raises(NonFiniteError):
        finite_difference_check(lambda: p.sum(), {"p": p})


def test_relative_error_floor():
    assert Coordinate("x", (0,), 0.0, 1e-9).rel_error == pytest.approx(1e-3)
    assert Coordinate("x", (0,), 2.0, 2.0002).rel_error == pytest.approx(1e-4, rel=1e-3)


def test_every_block_passes():
    for name, rep in block_checks(n_samples=48).items():
        assert rep.passed, (name, rep.max_rel_error)


def test_discriminator_objective_passes():
    assert discriminator_objective_check(n_samples=64).passed
