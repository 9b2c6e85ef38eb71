"""Multi-grain perception: a 1x1 base refinement plus differential dilated convolutions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ModelParams
from .tensor import ConvKernel, Tensor, abs_diff, conv1x1, conv2d


def dilation_rate(t: int) -> int:
    """Dilation of grain ``t >= 1`` (1, 3, 5, ...)."""
    if t < 1:
        raise ValueError("grain index must be >= 1")
    return 2 * t - 1


@dataclass
class MGPParams:
    base: ConvKernel
    dilated: list[ConvKernel]
    tie_weights: bool = False

    def __post_init__(self):
        if not self.dilated:
            raise ValueError("need at least the dilation-1 kernel D0")

    @property
    def grains(self) -> int:
        return len(self.dilated) - 1


GrainFeatureSet = list  # X_{d,0} ... X_{d,T}, all N x H x W x C1


def init_mgp(params: ModelParams, cin: int, channels: int, grains: int, std: float,
             rng: np.random.Generator, dtype, tie_weights: bool = False) -> None:
    params.add_conv("mgp.base", 1, cin, channels, std, rng, dtype)
    if tie_weights:
        params.add_conv("mgp.dilated", 3, cin, channels, std, rng, dtype)
    else:
        for t in range(grains + 1):
            params.add_conv(f"mgp.dilated{t}", 3, cin, channels, std, rng, dtype)


def mgp_params(params: ModelParams, grains: int, tie_weights: bool = False, dilated: bool = True) -> MGPParams:
    """Build kernels for D0..DT; ``dilated=False`` pins every dilation to 1."""
    kernels = []
    for t in range(grains + 1):
        d = dilation_rate(t) if (dilated and t >= 1) else 1
        prefix = "mgp.dilated" if tie_weights else f"mgp.dilated{t}"
        kernels.append(params.kernel(prefix, d))
    return MGPParams(params.kernel("mgp.base"), kernels, tie_weights)


def mgp_forward(x1: Tensor, params: MGPParams, differential: bool = True) -> GrainFeatureSet:
    """Return [X_d0, X_d1, ..., X_dT].

    X_d0 is the 1x1 base refinement; X_dt = |D_t(x1) - D_{t-1}(x1)| for t >= 1.
    With ``differential=False`` the raw responses D_t(x1) are returned instead.
    """
    if x1.shape[3] != params.base.cin:
        raise ValueError(f"x1 has {x1.shape[3]} channels, MGP expects {params.base.cin}")
    feats = [conv1x1(x1, params.base)]
    if params.grains == 0:
        return feats
    responses = [conv2d(x1, k) for k in params.dilated]
    for t in range(1, params.grains + 1):
        feats.append(abs_diff(responses[t], responses[t - 1]) if differential else responses[t])
    return feats
