"""Multi-branch multi-instance representation.

Each grain map is turned into per-instance class scores by a 1x1 convolution,
mean-pooled into a bag score vector, and the grain scores are summed before a
single softmax.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ModelParams
from .tensor import ConvKernel, Tensor, add, conv1x1, global_avg_pool, reshape, softmax


@dataclass
class InstanceRepr:
    map: Tensor  # N x H x W x C, one C-vector per spatial instance
    grain: int

    @property
    def classes(self) -> int:
        return self.map.shape[3]


@dataclass
class BagDistribution:
    probs: Tensor  # N x C
    source: str = "fused"  # "fused", "grain<t>" or "diff"

    def numpy(self) -> np.ndarray:
        return self.probs.data


def instance_transform(x_dt: Tensor, branch_kernel: ConvKernel, grain: int = 0) -> InstanceRepr:
    if branch_kernel.size != 1:
        raise ValueError("branch kernel must be 1x1")
    return InstanceRepr(conv1x1(x_dt, branch_kernel), grain)


def aggregate_mean(inst: InstanceRepr) -> Tensor:
    """Mean over all instances -> raw N x C score vector."""
    n, _, _, c = inst.map.shape
    return reshape(global_avg_pool(inst.map), (n, c))


def bag_distribution(grain_scores: list[Tensor]) -> BagDistribution:
    if not grain_scores:
        raise ValueError("need at least one grain score vector")
    shape = grain_scores[0].shape
    if any(s.shape != shape for s in grain_scores):
        raise ValueError("grain score vectors differ in length")
    return BagDistribution(softmax(add(*grain_scores)), "fused")


def predict(dist) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    p = dist.numpy() if isinstance(dist, BagDistribution) else np.asarray(dist)
    return np.argmax(p, axis=-1)


def init_branches(params: ModelParams, cin: int, classes: int, grains: int, std: float,
                  rng: np.random.Generator, dtype, shared: bool = False) -> None:
    if shared:
        params.add_conv("mbmir.shared", 1, cin, classes, std, rng, dtype)
        return
    for t in range(grains + 1):
        params.add_conv(f"mbmir.branch{t}", 1, cin, classes, std, rng, dtype)


def branch_kernels(params: ModelParams, grains: int, shared: bool = False) -> list[ConvKernel]:
    if shared:
        return [params.kernel("mbmir.shared")] * (grains + 1)
    return [params.kernel(f"mbmir.branch{t}") for t in range(grains + 1)]


def mbmir_forward(grains: list[Tensor], branch_kernels: list[ConvKernel]):
    """Returns (fused distribution, instance maps I_0..I_T, raw grain scores Y_0..Y_T)."""
    if len(grains) != len(branch_kernels):
        raise ValueError(f"{len(grains)} grain maps but {len(branch_kernels)} branch kernels")
    insts = [instance_transform(x, k, t) for t, (x, k) in enumerate(zip(grains, branch_kernels))]
    scores = [aggregate_mean(i) for i in insts]
    return bag_distribution(scores), insts, scores
