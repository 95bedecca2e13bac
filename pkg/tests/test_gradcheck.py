import numpy as np
import pytest
import torch

from chartnet.errors import NonFiniteGradient
from chartnet.gradcheck import finite_difference_report, gradient_check, relative_error


def test_linear_function_is_exact():
    w = torch.randn(5, dtype=torch.float64, requires_grad=True)
    c = torch.randn(5, dtype=torch.float64)
    assert gradient_check(lambda: (w * c).sum(), [w]) < 1e-9


def test_smooth_function():
    torch.manual_seed(0)
    a = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
    b = torch.randn(4, dtype=torch.float64, requires_grad=True)
    assert gradient_check(lambda: torch.tanh(a @ b).pow(2).sum() + torch.exp(b).sum(), [a, b]) < 1e-7


def test_wrong_gradient_is_detected():
    w = torch.randn(4, dtype=torch.float64, requires_grad=True)

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return (x ** 2).sum()

        @staticmethod
        def backward(ctx, g):
            return g * torch.ones(4, dtype=torch.float64)

    assert gradient_check(lambda: Wrong.apply(w), [w]) > 0.1


def test_epsilon_must_be_positive():
    w = torch.ones(2, dtype=torch.float64, requires_grad=True)
    with pytest.raises(ValueError):
        gradient_check(lambda: w.sum(), [w], epsilon=0)


def test_non_finite_values_are_reported():
    w = torch.tensor([-1.0, 2.0], dtype=torch.float64, requires_grad=True)
    with pytest.raises(NonFiniteGradient):
        gradient_check(lambda: torch.log(w).sum(), [w])


def test_parameters_are_restored_and_sampling_works():
    w = torch.randn(50, dtype=torch.float64, requires_grad=True)
    before = w.detach().clone()
    report = finite_difference_report(lambda: (w ** 3).sum(), [w], max_coords_per_param=7,
                                      generator=torch.Generator().manual_seed(0))
    assert len(report.analytic) == 7
    assert torch.equal(w.detach(), before)


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-12]))[0] == pytest.approx(1e-4)
    assert float(relative_error(torch.tensor([1.0]), torch.tensor([1.0]))) == 0.0
