"""Self-aligned semantic fusion and the training objective."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

from .mbmir import BagDistribution, InstanceRepr, aggregate_mean
from .tensor import Tensor, abs_diff, add, cross_entropy, scale, softmax, sum_squares


@dataclass
class LossBreakdown:
    cls: float
    sealig: float
    l2: float
    total: float
    alpha: float
    tensor: Tensor | None = None  # differentiable total, when built on a tape

    def as_row(self) -> dict[str, float]:
        return {"cls": self.cls, "sealig": self.sealig, "l2": self.l2, "total": self.total}


def instance_diff(i_t: InstanceRepr, i_0: InstanceRepr) -> InstanceRepr:
    if i_t.grain == 0:
        raise ValueError("instance_diff compares grains t >= 1 against the base")
    return InstanceRepr(abs_diff(i_t.map, i_0.map), i_t.grain)


def diff_distribution(instance_reprs: list[InstanceRepr]) -> BagDistribution:
    """softmax(sum_t GAP(|I_t - I_0|)) over grains t = 1..T."""
    if len(instance_reprs) < 2:
        raise ValueError("diff_distribution needs T >= 1")
    base = instance_reprs[0]
    scores = [aggregate_mean(instance_diff(i, base)) for i in instance_reprs[1:]]
    return BagDistribution(softmax(add(*scores)), "diff")


def loss_cls(fused: BagDistribution, class_index) -> Tensor:
    return cross_entropy(fused.probs, class_index, fused.probs.shape[-1])


def loss_sealig(y_d: BagDistribution, class_index) -> Tensor:
    if y_d.source != "diff":
        raise ValueError("semantic-aligning loss expects the difference distribution")
    return cross_entropy(y_d.probs, class_index, y_d.probs.shape[-1])


def l2_penalty(weights, weight_decay: float) -> Tensor | None:
    if weight_decay == 0 or not weights:
        return None
    return scale(add(*[sum_squares(w) for w in weights]), weight_decay)


def total_loss(fused: BagDistribution, y_d: BagDistribution | None, class_index, params, config) -> LossBreakdown:
    """cls + alpha * sealig + weight_decay * sum ||W||^2 (weights only, biases excluded)."""
    use_sealig = config.enable_sealig and config.alpha > 0
    cls = loss_cls(fused, class_index)
    terms = [cls]
    sealig_v = 0.0
    if use_sealig:
        if y_d is None:
            warnings.warn("semantic-aligning term enabled but no grain differences exist (T = 0); using 0")
        else:
            sealig = loss_sealig(y_d, class_index)
            sealig_v = float(sealig.data)
            terms.append(scale(sealig, config.alpha))
    elif y_d is not None:
        sealig_v = float(loss_sealig(y_d, class_index).data)
    l2 = l2_penalty(params.weights(), config.weight_decay)
    l2_v = 0.0
    if l2 is not None:
        l2_v = float(l2.data)
        terms.append(l2)
    total = add(*terms)
    alpha = config.alpha if use_sealig else 0.0
    return LossBreakdown(float(cls.data), sealig_v, l2_v, float(total.data), alpha, total)
