# tcc/losses.py
"""
Training objectives.

- temporal contrasting: InfoNCE of W_k c_t against the batch's latents at t+k
- contextual contrasting: NT-Xent over projected contexts, two views per sample
- supervised contextual contrasting: positives are all same-class rows
- weighted combinations for the unsupervised and semi-supervised stages
- cross-entropy for fine-tuning and linear evaluation
"""
from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from tcc.errors import ConfigError, LossInputError, ShapeError

Direction = Literal["strong_to_weak", "weak_to_strong"]


class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lambda1: float = Field(1.0, ge=0.0)
    lambda2: float = Field(0.7, ge=0.0)
    lambda3: float = Field(0.01, ge=0.0)
    lambda4: float = Field(0.7, ge=0.0)
    tau: float = Field(0.2, gt=0.0)
    scc_reduction: Literal["mean", "sum"] = "mean"


@dataclass
class TemporalBatchViews:
    """Latents (B, d, T_z) and contexts (B, h) of both views at anchor t."""
    z_w: torch.Tensor
    z_s: torch.Tensor
    c_w: torch.Tensor
    c_s: torch.Tensor
    t: int
    k_steps: int

    def __post_init__(self):
        if self.z_w.shape != self.z_s.shape or self.c_w.shape != self.c_s.shape:
            raise ShapeError("weak and strong views must have matching shapes")
        if self.t < 1 or self.t + self.k_steps > self.z_w.shape[2]:
            raise ShapeError(f"anchor t={self.t} with K={self.k_steps} exceeds T_z={self.z_w.shape[2]}")


def temporal_contrast_loss(views: TemporalBatchViews, predict, direction: Direction = "strong_to_weak") -> torch.Tensor:
    """-(1/K) sum_k mean_i log softmax_n((W_k c_t^src,i)^T z^tgt_{t+k,n})[i].

    ``predict(c, k)`` returns W_k c. Candidates are every sample of the target
    view at step t+k, the true one included.
    """
    if direction == "strong_to_weak":
        context, target = views.c_s, views.z_w
    elif direction == "weak_to_strong":
        context, target = views.c_w, views.z_s
    else:
        raise ConfigError(f"unknown direction {direction!r}")
    return _temporal_nce(context, target, predict, views.t, views.k_steps)


def _temporal_nce(context: torch.Tensor, target: torch.Tensor, predict, t: int, k_steps: int) -> torch.Tensor:
    batch = target.shape[0]
    positives = torch.arange(batch, device=target.device)
    total = target.new_zeros(())
    for k in range(1, k_steps + 1):
        predicted = predict(context, k)
        # z_{t+k} with t counted from 1 sits at index t+k-1
        future = target[:, :, t + k - 1]
        logits = predicted @ future.T
        total = total + F.cross_entropy(logits, positives)
    return total / k_steps


def same_view_temporal_loss(z: torch.Tensor, c: torch.Tensor, predict, t: int, k_steps: int) -> torch.Tensor:
    """Temporal contrasting within one view (the non-cross-view ablation)."""
    return _temporal_nce(c, z, predict, t, k_steps)


def _pairwise_log_prob(proj: torch.Tensor, tau: float) -> torch.Tensor:
    """log softmax over m != i of cosine(i, m)/tau; the diagonal is -inf."""
    if tau <= 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    unit = F.normalize(proj, dim=1)
    logits = unit @ unit.T / tau
    eye = torch.eye(proj.shape[0], dtype=torch.bool, device=proj.device)
    logits = logits.masked_fill(eye, float("-inf"))
    return torch.log_softmax(logits, dim=1)


def contextual_contrast_loss(proj: torch.Tensor, tau: float) -> torch.Tensor:
    """NT-Xent over rows (2k, 2k+1) = two views of sample k; zero rows have similarity 0."""
    rows = proj.shape[0]
    if proj.dim() != 2 or rows % 2:
        raise ShapeError(f"expected (2N, p) projections, got {tuple(proj.shape)}")
    log_prob = _pairwise_log_prob(proj, tau)
    index = torch.arange(rows, device=proj.device)
    partner = index ^ 1
    return -log_prob[index, partner].mean()


def supervised_contextual_contrast_loss(
        proj: torch.Tensor,
        labels: torch.Tensor,
        tau: float,
        reduction: Literal["mean", "sum"] = "mean",
) -> torch.Tensor:
    """sum_i 1/|P(i)| sum_{p in P(i)} l(i, p) with P(i) = same-label rows except i.

    Anchors without positives contribute 0; ``reduction="mean"`` divides the
    sum by the number of rows.
    """
    rows = proj.shape[0]
    labels = torch.as_tensor(labels, device=proj.device).reshape(-1)
    if labels.shape[0] != rows:
        raise ShapeError(f"{rows} projections but {labels.shape[0]} labels")
    if (labels < 0).any():
        raise LossInputError("supervised contrasting needs labels >= 0")
    eye = torch.eye(rows, dtype=torch.bool, device=proj.device)
    positives = (labels[:, None] == labels[None, :]) & ~eye
    counts = positives.sum(dim=1)
    if not bool((counts > 0).any()):
        raise LossInputError("no positive pairs in batch")

    log_prob = _pairwise_log_prob(proj, tau)
    picked = torch.where(positives, log_prob, torch.zeros_like(log_prob))
    per_anchor = -picked.sum(dim=1) / counts.clamp(min=1)
    total = per_anchor.sum()
    if reduction == "mean":
        return total / rows
    if reduction == "sum":
        return total
    raise ConfigError(f"unknown reduction {reduction!r}")


def combine_unsup(l_tc_s, l_tc_w, l_cc, w: LossWeights):
    return w.lambda1 * (l_tc_s + l_tc_w) + w.lambda2 * l_cc


def combine_semi(l_tc_s, l_tc_w, l_scc, w: LossWeights):
    return w.lambda3 * (l_tc_s + l_tc_w) + w.lambda4 * l_scc


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-softmax of the true class."""
    labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device)
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= logits.shape[1]):
        raise LossInputError(f"label out of range for {logits.shape[1]} classes")
    return F.cross_entropy(logits, labels)
