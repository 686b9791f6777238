"""Bi-directional recurrent trajectory decoder.

Two recurrences run over the prediction horizon.  The forward chain starts
from the current time and feeds on a linear map of its own hidden state (no
trajectory-space feedback).  The backward chain starts from the estimated
goal: its first input is the goal residual, and each later input is a linear
readout of the newest backward state, so the chain stays anchored in
trajectory space while walking from the goal toward the present.  Both
chains are initialized from the observation feature concatenated with the
latent draw, through two separate fully-connected maps.

The waypoint at each step combines the forward and backward hidden states
for that step:

    out_n = W_fo h_fwd[n] + W_bo h_bwd[n] + b_out

``out_dim`` is the trajectory dimension for coordinate decoding, or the raw
per-step Gaussian parameter count for the mixture variant.  Disabling the
backward chain (``use_backward=False``) leaves a plain forward recurrent
decoder, the ablation baseline.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import NumericalError
from .nets import GRUCell, _linear

STATE_LIMIT = 1e6


class BiDirectionalDecoder(nn.Module):
    def __init__(self, feature_dim: int, latent_dim: int, goal_dim: int,
                 out_dim: int, hidden_dim: int, use_backward: bool = True):
        super().__init__()
        if hidden_dim % 4 != 0:
            raise ValueError(f"hidden_dim must be divisible by 4, got {hidden_dim}")
        emb = hidden_dim // 4
        self.goal_dim = goal_dim
        self.out_dim = out_dim
        self.use_backward = use_backward
        self.init_fwd = _linear(feature_dim + latent_dim, hidden_dim)
        self.init_bwd = _linear(feature_dim + latent_dim, hidden_dim)
        self.input_fwd = _linear(hidden_dim, emb)
        self.input_bwd = _linear(goal_dim, emb)
        self.cell_fwd = GRUCell(emb, hidden_dim)
        self.cell_bwd = GRUCell(emb, hidden_dim)
        self.out_fwd = _linear(hidden_dim, out_dim, bias=False)
        self.out_bwd = _linear(hidden_dim, out_dim, bias=False)
        self.out_bias = nn.Parameter(torch.zeros(out_dim, dtype=torch.float64))
        self.readout_bwd = _linear(hidden_dim, goal_dim)

    @staticmethod
    def _guard(state: torch.Tensor, chain: str, step: int) -> torch.Tensor:
        if not torch.isfinite(state).all() or (state.abs() > STATE_LIMIT).any():
            raise NumericalError(f"{chain} decoder state exploded at step {step}")
        return state

    def forward(self, feature: torch.Tensor, z: torch.Tensor,
                goal: torch.Tensor, steps: int) -> torch.Tensor:
        """Decode ``steps`` waypoints; returns (..., steps, out_dim).

        ``goal`` is a residual in the same frame as the outputs.
        """
        if steps < 1:
            raise ValueError("need at least one decode step")
        cond = torch.cat([feature, z], dim=-1)

        h_f = self._guard(self.init_fwd(cond), "forward", 0)
        fwd_states = []
        for n in range(1, steps + 1):
            h_f = self._guard(self.cell_fwd(h_f, self.input_fwd(h_f)), "forward", n)
            fwd_states.append(h_f)
        out = torch.stack([self.out_fwd(h) for h in fwd_states], dim=-2)

        if self.use_backward:
            h_b = self._guard(self.init_bwd(cond), "backward", steps + 1)
            step_in = goal
            bwd_states = []
            for n in range(steps, 0, -1):
                h_b = self._guard(self.cell_bwd(h_b, self.input_bwd(step_in)), "backward", n)
                bwd_states.append(h_b)
                step_in = self.readout_bwd(h_b)
            bwd_states.reverse()  # index n-1 now holds the state for step n
            out = out + torch.stack([self.out_bwd(h) for h in bwd_states], dim=-2)

        return out + self.out_bias
