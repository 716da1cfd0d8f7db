"""Batch weights: softmax-over-batch normalization, the three weight-network
composition strategies, midpoint factors, and ratio clipping.

Weights live inside the autodiff graph so that the squared-gap objective can
train the weight networks through them.  Two normalizations exist: sum-one
(the one-sided procedure's convention, weights paired against a 1/m-weighted
reference side) and mean-one (the two-sided convention, under which the
(1 + w)/2 midpoint factors average to one when logits carry no information).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

NORMALIZATIONS = ("sum_one", "mean_one")
STRATEGIES = ("concat", "one_sided", "composite")

_NORM_TOL = 1e-9


@dataclass
class BatchWeights:
    """Non-negative per-sample weights with a declared normalization."""

    tensor: ad.Tensor
    normalization: str

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        vals = self.tensor.data
        if (vals < 0.0).any():
            raise ValueError("batch weights must be non-negative")
        target = 1.0 if self.normalization == "mean_one" else 1.0 / vals.size
        if abs(vals.mean() - target) > _NORM_TOL:
            raise ValueError(
                f"weights violate {self.normalization}: mean {vals.mean()!r}"
            )

    @property
    def values(self):
        return self.tensor.data

    @property
    def batch_size(self):
        return self.tensor.data.shape[0]


@dataclass(frozen=True)
class ClipSchedule:
    """Weight-ratio bound that relaxes geometrically during training."""

    initial_ratio_bound: float = 3.0
    relax_factor: float = 1.5
    relax_every: int = 5000

    def __post_init__(self):
        if self.initial_ratio_bound <= 1.0:
            raise ValueError("initial ratio bound must exceed 1")
        if self.relax_factor < 1.0:
            raise ValueError("relax factor must be at least 1")
        if self.relax_every < 1:
            raise ValueError("relax_every must be positive")

    def bound(self, step):
        """Ratio bound in force at `step`; non-decreasing in the step."""
        return self.initial_ratio_bound * self.relax_factor ** (step // self.relax_every)


def batch_softmax(logits, normalization):
    """Normalize raw logits over the batch axis into valid weights.

    sum-one returns the plain softmax; mean-one scales it by the batch size
    so uninformative logits give every sample weight exactly one.
    """
    if logits.data.shape[0] < 1:
        raise ValueError("softmax over an empty batch")
    if normalization == "sum_one":
        node = ad.softmax(logits, axis=0)
    elif normalization == "mean_one":
        node = ad.softmax_mean_one(logits, axis=0)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return BatchWeights(tensor=node, normalization=normalization)


def uniform_weights(m, normalization="mean_one"):
    """Constant weights equal to the uninformative-softmax value."""
    fill = 1.0 if normalization == "mean_one" else 1.0 / m
    return BatchWeights(
        tensor=ad.constant(np.full((m, 1), fill)), normalization=normalization
    )


def _mean_one(logits):
    return batch_softmax(logits, "mean_one")


def _neg(logits):
    return ad.scale(logits, -1.0)


def compose_weights(strategy, networks, x, gen_from_x, y, gen_from_y):
    """Turn weight-network logits into mean-one weights for both batches.

    `gen_from_x` is the x-batch carried to the target space and
    `gen_from_y` the y-batch carried back to the source space, both already
    computed by the caller so weights and losses share the same generator
    pass.  Each network runs once on its two stacked batches and the logits
    are split afterwards.

    concat     one network on (source-space, target-space) pairs; the y side
               uses negated logits.
    one_sided  one network on source-space points only.
    composite  two single-domain networks, each side averaging its own
               network's weights with the other network's negated-logit
               weights evaluated through the generator.
    """
    m = x.data.shape[0]
    if strategy == "concat":
        logits = networks["wnet"].forward_pair(
            ad.concat([x, gen_from_y], axis=0), ad.concat([gen_from_x, y], axis=0)
        )
        w_x = _mean_one(ad.slice_rows(logits, 0, m))
        w_y = _mean_one(_neg(ad.slice_rows(logits, m, 2 * m)))
    elif strategy == "one_sided":
        logits = networks["wnet"].forward(ad.concat([x, gen_from_y], axis=0))
        w_x = _mean_one(ad.slice_rows(logits, 0, m))
        w_y = _mean_one(_neg(ad.slice_rows(logits, m, 2 * m)))
    elif strategy == "composite":
        logits_x = networks["wnet_x"].forward(ad.concat([x, gen_from_y], axis=0))
        logits_y = networks["wnet_y"].forward(ad.concat([gen_from_x, y], axis=0))
        w_x = ad.scale(
            ad.add(
                _mean_one(ad.slice_rows(logits_x, 0, m)).tensor,
                _mean_one(_neg(ad.slice_rows(logits_y, 0, m))).tensor,
            ),
            0.5,
        )
        w_y = ad.scale(
            ad.add(
                _mean_one(_neg(ad.slice_rows(logits_x, m, 2 * m))).tensor,
                _mean_one(ad.slice_rows(logits_y, m, 2 * m)).tensor,
            ),
            0.5,
        )
        return (
            BatchWeights(tensor=w_x, normalization="mean_one"),
            BatchWeights(tensor=w_y, normalization="mean_one"),
        )
    else:
        raise ValueError(f"unknown weight strategy {strategy!r}")
    return w_x, w_y


def midpoint_factor(weights):
    """Per-sample loss multiplier (1 + w) / 2.

    Each side applies this to its own weights; the reference side's weights
    come from softmax of negated logits rather than elementwise reciprocals,
    so the exact inverse identity is an oracle-level property only.
    """
    return ad.scale(ad.add(weights.tensor, ad.constant(1.0)), 0.5)


def clip_weights(weights, schedule, step):
    """Clip weights into [c/r, c*r], re-centering c to keep the normalization.

    r is the schedule's bound at `step`; c is found by bisection so the
    clipped weights still satisfy their declared normalization.  Weights
    whose max/min ratio is already within r**2 are returned untouched.
    The center c is treated as a constant, so gradients flow through the
    unsaturated entries only.
    """
    r = schedule.bound(step)
    vals = weights.values
    if not np.isfinite(r):
        return weights
    lo_val, hi_val = vals.min(), vals.max()
    if hi_val <= lo_val * r * r:
        return weights
    target = 1.0 if weights.normalization == "mean_one" else 1.0 / vals.size
    c_lo, c_hi = target / r, target * r
    for _ in range(200):
        c = 0.5 * (c_lo + c_hi)
        mean = np.clip(vals, c / r, c * r).mean()
        if abs(mean - target) <= 1e-13 * target:
            break
        if mean < target:
            c_lo = c
        else:
            c_hi = c
    node = ad.clamp(weights.tensor, c / r, c * r)
    return BatchWeights(tensor=node, normalization=weights.normalization)
