"""Composes backbone -> MGP -> MBMIR (-> SSF) into one forward pass.

``config.variant`` selects the ablation wiring:

* ``full``     per-grain instance branches, fused by summation, plus the
               difference distribution used by the semantic-aligning loss
* ``backbone`` backbone features -> GAP -> linear classifier
* ``mgp``      grain maps summed, GAP, linear classifier
* ``mgp_ssf``  one instance branch shared by all grains, sealig loss kept
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import BackboneConfig, backbone_forward, init_backbone
from .mbmir import BagDistribution, InstanceRepr, branch_kernels, init_branches, mbmir_forward
from .mgp import init_mgp, mgp_forward, mgp_params
from .params import ModelParams
from .ssf import LossBreakdown, diff_distribution, total_loss
from .tensor import Tensor, add, conv1x1, global_avg_pool, reshape, softmax


@dataclass
class ForwardResult:
    fused: BagDistribution
    y_d: BagDistribution | None = None
    grain_scores: list[Tensor] = field(default_factory=list)
    instances: list[InstanceRepr] = field(default_factory=list)
    x1: Tensor | None = None


def init_params(config, in_channels: int, seed: int | None = None) -> ModelParams:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    dtype = config.dtype
    params = ModelParams()
    bb = BackboneConfig.from_train(config)
    init_backbone(params, bb, in_channels, rng, dtype)
    std = config.agos_init_std
    if config.variant == "backbone":
        params.add_conv("head", 1, bb.out_channels, config.classes, std, rng, dtype)
        return params
    init_mgp(params, bb.out_channels, config.channels, config.grains, std, rng, dtype, config.tie_weights)
    if config.variant == "mgp":
        params.add_conv("head", 1, config.channels, config.classes, std, rng, dtype)
    else:
        init_branches(params, config.channels, config.classes, config.grains, std, rng, dtype,
                      shared=config.variant == "mgp_ssf")
    return params


def forward(params: ModelParams, images, config, training: bool = False,
            rng: np.random.Generator | None = None) -> ForwardResult:
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=config.dtype))
    bb = BackboneConfig.from_train(config)
    x1 = backbone_forward(x, params, bb, training, config.dropout, rng)
    n = x.shape[0]
    if config.variant == "backbone":
        logits = reshape(conv1x1(global_avg_pool(x1), params.kernel("head")), (n, config.classes))
        return ForwardResult(BagDistribution(softmax(logits)), x1=x1)
    grains = mgp_forward(x1, mgp_params(params, config.grains, config.tie_weights, config.dilated),
                         config.differential)
    if config.variant == "mgp":
        pooled = global_avg_pool(add(*grains))
        logits = reshape(conv1x1(pooled, params.kernel("head")), (n, config.classes))
        return ForwardResult(BagDistribution(softmax(logits)), x1=x1)
    kernels = branch_kernels(params, config.grains, shared=config.variant == "mgp_ssf")
    fused, insts, scores = mbmir_forward(grains, kernels)
    y_d = diff_distribution(insts) if config.grains >= 1 else None
    return ForwardResult(fused, y_d, scores, insts, x1)


def compute_loss(params: ModelParams, images, labels, config, training: bool = False,
                 rng: np.random.Generator | None = None) -> tuple[LossBreakdown, ForwardResult]:
    out = forward(params, images, config, training, rng)
    y_d = out.y_d if config.variant in ("full", "mgp_ssf") else None
    cfg = config if y_d is not None or config.variant in ("full", "mgp_ssf") else config.replace(enable_sealig=False)
    return total_loss(out.fused, y_d, labels, params, cfg), out
