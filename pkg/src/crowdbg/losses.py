"""Dual-task loss stack: density regression plus mask segmentation.

The segmentation head is trained with pixel-wise binary cross entropy
(averaged over pixels). The regression head is trained with a pixel-wise
density loss, summed over pixels; its default form is the per-pixel
absolute difference sqrt((p - g)^2) == |p - g|, with conventional squared
L2 available as an option. The combined loss modulates an intermediate
density map by the sigmoided mask before the density term:

    total = density(d_int * sigmoid(logits), d_gt) + lambda * bce(sigmoid(logits), m_gt)

Every loss returns its analytic gradient; correctness is pinned by central
finite-difference tests. Because the density gradient reaching d_int is
multiplied by the predicted mask, pixels the mask suppresses contribute
(almost) no regression gradient: counting effort concentrates on predicted
foreground.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .grids import BinaryMask, DensityMap, SoftMask, hadamard, sequential_sum
from .validation import check_grid, check_same_shape


class DensityLossKind(enum.Enum):
    # Per-pixel absolute difference: the default reading of the loss.
    ABSOLUTE = "absolute"
    # Conventional squared L2 distance.
    SQUARED = "squared"


@dataclass(frozen=True)
class LossConfig:
    """Weights and numeric guards for the combined loss."""

    lambda_: float = 1e-4
    density_loss_kind: DensityLossKind = DensityLossKind.ABSOLUTE
    probability_clamp: float = 1e-7

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lambda_}")
        if not (0.0 < self.probability_clamp < 0.5):
            raise ParameterError(
                f"probability_clamp must lie in (0, 0.5), got {self.probability_clamp}"
            )


@dataclass(frozen=True)
class LossOutput:
    total: float
    density_term: float
    bce_term: float
    grad_wrt_density_int: np.ndarray
    grad_wrt_mask_logits: np.ndarray


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable sigmoid, split on the sign of z."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def bce_loss(mask_probs: SoftMask, gt: BinaryMask, clamp: float = 1e-7):
    """Pixel-averaged binary cross entropy and its gradient wrt probabilities.

    Probabilities are clamped into [clamp, 1-clamp] before the log. The
    gradient is that of the clamped expression: zero where the clamp is
    active (the loss is locally constant there), the interior formula
    elsewhere, with boundary points taking the interior value.
    """
    if not (0.0 < clamp < 0.5):
        raise ParameterError(f"clamp must lie in (0, 0.5), got {clamp}")
    check_same_shape(mask_probs, gt, "bce_loss")
    p = mask_probs.values
    g = gt.bits.astype(np.float64)
    n = p.size
    if n == 0:
        return 0.0, np.zeros_like(p)
    pc = np.clip(p, clamp, 1.0 - clamp)
    per_pixel = -(g * np.log(pc) + (1.0 - g) * np.log(1.0 - pc))
    loss = sequential_sum(per_pixel) / n
    grad = (-g / pc + (1.0 - g) / (1.0 - pc)) / n
    grad = np.where((p >= clamp) & (p <= 1.0 - clamp), grad, 0.0)
    return loss, grad


def density_loss(pred: DensityMap, gt: DensityMap, kind: DensityLossKind = DensityLossKind.ABSOLUTE):
    """Pixel-summed density distance and its gradient wrt the prediction.

    ABSOLUTE sums |pred - gt| with subgradient 0 at exact ties; SQUARED
    sums (pred - gt)^2 with gradient 2 * (pred - gt).
    """
    check_same_shape(pred, gt, "density_loss")
    diff = pred.values - gt.values
    if kind is DensityLossKind.ABSOLUTE:
        loss = sequential_sum(np.abs(diff))
        grad = np.sign(diff)
    elif kind is DensityLossKind.SQUARED:
        loss = sequential_sum(diff * diff)
        grad = 2.0 * diff
    else:
        raise ParameterError(f"unknown density loss kind: {kind!r}")
    return loss, grad


def combined_loss(
    d_int: DensityMap,
    mask_logits,
    d_gt: DensityMap,
    m_gt: BinaryMask,
    cfg: LossConfig = LossConfig(),
) -> LossOutput:
    """Dual-task loss through mask modulation, with chain-rule gradients.

    The predicted map is d_int * sigmoid(logits); the density term sees the
    modulated map, the BCE term sees the sigmoided mask. Returned gradients
    are wrt d_int and wrt the raw logits.
    """
    logits = check_grid(mask_logits, "mask logits")
    check_same_shape(d_int, d_gt, "combined_loss")
    check_same_shape(d_int, m_gt, "combined_loss")
    if logits.shape != d_int.values.shape:
        check_same_shape(d_int, logits, "combined_loss")

    p = sigmoid(logits)
    probs = SoftMask(p)
    d_p = hadamard(d_int, probs)

    dens_term, g_dens = density_loss(d_p, d_gt, cfg.density_loss_kind)
    bce_term, g_bce = bce_loss(probs, m_gt, cfg.probability_clamp)
    total = dens_term + cfg.lambda_ * bce_term

    sig_prime = p * (1.0 - p)
    grad_d_int = g_dens * p
    grad_logits = (g_dens * d_int.values + cfg.lambda_ * g_bce) * sig_prime
    return LossOutput(
        total=total,
        density_term=dens_term,
        bce_term=bce_term,
        grad_wrt_density_int=grad_d_int,
        grad_wrt_mask_logits=grad_logits,
    )
