"""Contrastive losses on unit descriptors.

All three losses share one InfoNCE form over similarity scores:

    L = logsumexp([s+/tau, s_i/tau + log w_i]) - s+/tau

The positive term is part of the denominator unless ``include_positive`` is
False. Cross-deformation and cross-object losses use w_i = 1; the
coarse-to-fine loss weights each failure point by its canonical distance to
the true counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch

ArrayLike = Union[np.ndarray, torch.Tensor]


def info_nce_from_scores(
    s_pos: torch.Tensor,
    s_neg: torch.Tensor,
    tau: float,
    weights: Optional[torch.Tensor] = None,
    include_positive: bool = True,
) -> torch.Tensor:
    """Per-item loss for scores ``s_pos`` (B,) and ``s_neg`` (B, m)."""
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    pos = s_pos / tau
    neg = s_neg / tau
    if weights is not None:
        neg = neg + torch.log(weights)
    logits = torch.cat([pos[:, None], neg], dim=1) if include_positive else neg
    return torch.logsumexp(logits, dim=1) - pos


def info_nce(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negatives: torch.Tensor,
    tau: float,
    weights: Optional[torch.Tensor] = None,
    include_positive: bool = True,
) -> torch.Tensor:
    """Per-item loss for features anchor (B, d), positive (B, d), negatives (B, m, d)."""
    s_pos = (anchor * positive).sum(dim=-1)
    s_neg = torch.einsum("bd,bmd->bm", anchor, negatives)
    return info_nce_from_scores(s_pos, s_neg, tau, weights, include_positive)


@dataclass
class LossResult:
    """Mean loss over items with its gradients w.r.t. every input feature."""
    value: float
    grad_anchor: np.ndarray
    grad_positive: np.ndarray
    grad_negatives: np.ndarray


def _to_tensor(x: ArrayLike) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.detach().to(torch.float64).clone()
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _as_batch(x: ArrayLike, rank: int) -> torch.Tensor:
    t = _to_tensor(x)
    return t[None] if t.dim() == rank - 1 else t


def _evaluate(anchor, positive, negatives, tau, weights=None, include_positive=True) -> LossResult:
    single = _to_tensor(anchor).dim() == 1
    a = _as_batch(anchor, 2).requires_grad_(True)
    p = _as_batch(positive, 2).requires_grad_(True)
    n = _as_batch(negatives, 3).requires_grad_(True)
    if n.shape[1] < 1:
        raise ValueError("need at least one negative")
    w = None if weights is None else _as_batch(weights, 2)
    loss = info_nce(a, p, n, tau, w, include_positive).mean()
    ga, gp, gn = torch.autograd.grad(loss, (a, p, n))
    if single:
        ga, gp, gn = ga[0], gp[0], gn[0]
    return LossResult(float(loss), ga.numpy(), gp.numpy(), gn.numpy())


def loss_cd(anchor: ArrayLike, positive: ArrayLike, negatives: ArrayLike, tau: float,
            include_positive: bool = True) -> LossResult:
    """Cross-deformation loss: the positive is the traced counterpart.

    Accepts one item (d,), (d,), (m, d) or a batch (B, d), (B, d), (B, m, d).

    Raises:
        ValueError: tau <= 0 or no negatives
    """
    return _evaluate(anchor, positive, negatives, tau, include_positive=include_positive)


def loss_co(anchor: ArrayLike, positive: ArrayLike, negatives: ArrayLike, tau: float,
            include_positive: bool = True) -> LossResult:
    """Cross-object loss: same form, the positive comes from skeleton alignment."""
    return _evaluate(anchor, positive, negatives, tau, include_positive=include_positive)


def check_failure_weights(weights: ArrayLike) -> None:
    w = _to_tensor(weights).numpy()
    if w.size == 0 or w.shape[-1] < 1:
        raise ValueError("coarse-to-fine loss needs at least one failure point")
    if np.any(w <= 0):
        raise ValueError("failure distances must all be > 0")


def loss_c2f(anchor: ArrayLike, positive: ArrayLike, failures: ArrayLike, distances: ArrayLike,
             tau: float, include_positive: bool = True) -> LossResult:
    """Coarse-to-fine loss: failure i enters the denominator weighted by its distance d_i.

    Distances are expected in bbox-diagonal units.

    Raises:
        ValueError: tau <= 0, no failures or any d_i <= 0
    """
    check_failure_weights(distances)
    return _evaluate(anchor, positive, failures, tau, weights=distances, include_positive=include_positive)
