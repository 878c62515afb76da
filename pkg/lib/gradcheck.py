from typing import Callable, List, Sequence

import torch

# Floor of the relative error denominator, for gradients that are both near zero
RELATIVE_FLOOR = 1e-6


def analytic_gradients(
    loss_fn: Callable[[], torch.Tensor], parameters: Sequence[torch.Tensor]
) -> List[torch.Tensor]:
    loss = loss_fn()
    gradients = torch.autograd.grad(loss, list(parameters), allow_unused=True)
    return [
        torch.zeros_like(p) if g is None else g.detach().clone()
        for p, g in zip(parameters, gradients)
    ]


def numeric_gradients(
    loss_fn: Callable[[], torch.Tensor],
    parameters: Sequence[torch.Tensor],
    epsilon: float = 1e-5,
) -> List[torch.Tensor]:
    """Central finite differences, one parameter entry at a time"""
    gradients = []
    with torch.no_grad():
        for parameter in parameters:
            gradient = torch.zeros_like(parameter)
            flat = parameter.view(-1)
            flat_gradient = gradient.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + epsilon
                plus = loss_fn().item()
                flat[i] = original - epsilon
                minus = loss_fn().item()
                flat[i] = original
                flat_gradient[i] = (plus - minus) / (2.0 * epsilon)
            gradients.append(gradient)
    return gradients


def max_relative_error(
    loss_fn: Callable[[], torch.Tensor],
    parameters: Sequence[torch.Tensor],
    epsilon: float = 1e-5,
) -> float:
    for parameter in parameters:
        if parameter.dtype != torch.float64:
            raise ValueError("Gradient checks need double precision parameters")
    analytic = analytic_gradients(loss_fn, parameters)
    numeric = numeric_gradients(loss_fn, parameters, epsilon)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.numel() == 0:
            continue
        denominator = torch.clamp(torch.maximum(a.abs(), n.abs()), min=RELATIVE_FLOOR)
        worst = max(worst, float(((a - n).abs() / denominator).max()))
    return worst
