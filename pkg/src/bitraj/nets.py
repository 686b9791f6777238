"""Recurrent and feed-forward building blocks (CPU, float64).

The recurrent cell is written out explicitly rather than taken from a
framework class so the update equations are pinned:

    r = sigmoid(W_xr x + b_r + W_hr h)
    u = sigmoid(W_xu x + b_u + W_hu h)
    c = tanh(W_xc x + b_c + W_hc (r * h))
    h' = (1 - u) * h + u * c

Tests re-derive these equations with scalar loops as an independent oracle.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import NumericalError

DTYPE = torch.float64


def _linear(in_features: int, out_features: int, bias: bool = True) -> nn.Linear:
    return nn.Linear(in_features, out_features, bias=bias, dtype=DTYPE)


def seed_parameters(module: nn.Module, seed: int) -> None:
    """Deterministically initialize all parameters of a module.

    Weights are U(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases start at zero.
    Parameters are visited in name order so the result does not depend on
    registration details.
    """
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        with torch.no_grad():
            if p.ndim >= 2:
                bound = 1.0 / (p.shape[1] ** 0.5)
                p.uniform_(-bound, bound, generator=gen)
            else:
                p.zero_()


def zero_parameters(module: nn.Module) -> None:
    for p in module.parameters():
        with torch.no_grad():
            p.zero_()


def check_finite(x: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NumericalError(f"non-finite values in {what}")
    return x


def as_tensor(x, name: str = "input") -> torch.Tensor:
    t = torch.as_tensor(x, dtype=DTYPE)
    return check_finite(t, name)


class GRUCell(nn.Module):
    """Single gated recurrent cell with sigmoid gates and tanh candidate."""

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.lin_x = _linear(input_dim, 3 * hidden_dim)
        self.lin_h_gates = _linear(hidden_dim, 2 * hidden_dim, bias=False)
        self.lin_h_cand = _linear(hidden_dim, hidden_dim, bias=False)

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        gx = self.lin_x(x)
        gx_r, gx_u, gx_c = gx.chunk(3, dim=-1)
        gh = self.lin_h_gates(h)
        gh_r, gh_u = gh.chunk(2, dim=-1)
        r = torch.sigmoid(gx_r + gh_r)
        u = torch.sigmoid(gx_u + gh_u)
        c = torch.tanh(gx_c + self.lin_h_cand(r * h))
        return (1.0 - u) * h + u * c


class TrajectoryEncoder(nn.Module):
    """Embeds each step, runs the recurrence, returns the final hidden state.

    The embedding width is hidden_dim // 4; the initial hidden state is zero.
    """

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        if hidden_dim % 4 != 0:
            raise ValueError(f"hidden_dim must be divisible by 4, got {hidden_dim}")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.embed = _linear(input_dim, hidden_dim // 4)
        self.cell = GRUCell(hidden_dim // 4, hidden_dim)

    def forward(self, x) -> torch.Tensor:
        x = as_tensor(x, "encoder input")
        squeeze = x.ndim == 2
        if squeeze:
            x = x.unsqueeze(0)
        if x.ndim != 3 or x.shape[-1] != self.input_dim:
            raise ValueError(
                f"expected (batch, steps, {self.input_dim}) input, got {tuple(x.shape)}"
            )
        if x.shape[1] < 1:
            raise ValueError("encoder needs at least one step")
        emb = self.embed(x)
        h = x.new_zeros(x.shape[0], self.hidden_dim)
        for t in range(x.shape[1]):
            h = self.cell(emb[:, t], h)
        return h.squeeze(0) if squeeze else h


class Mlp3(nn.Module):
    """Three affine layers with rectifier activations after the first two.

    Widths are [hidden, hidden // 2, out_dim]; with all parameters at zero
    the output is exactly zero.
    """

    def __init__(self, input_dim: int, hidden_dim: int, out_dim: int):
        super().__init__()
        self.lin1 = _linear(input_dim, hidden_dim)
        self.lin2 = _linear(hidden_dim, max(hidden_dim // 2, 1))
        self.lin3 = _linear(max(hidden_dim // 2, 1), out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = torch.relu(self.lin1(x))
        x = torch.relu(self.lin2(x))
        return self.lin3(x)
