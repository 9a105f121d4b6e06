"""Training objectives.

Two task losses (3-class cross-entropy for trimap adaptation, masked L1 for
alpha regression) and two ways to combine them: a learnable task-uncertainty
weighting and a fixed linear blend for ablations.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from . import tensor as T
from .matting import LABELS, UNKNOWN
from .tensor import Tensor

LN2 = math.log(2.0)


class EmptyMaskWarning(UserWarning):
    """The alpha-loss mask selected no pixels."""


class TaskWeights:
    """Learnable per-task uncertainty scales, stored as log sigma.

    The log parameterization keeps sigma positive without constraints.
    Both scales start at ``sigma_init`` (default 4).
    """

    def __init__(self, sigma_init=4.0, dtype=np.float64):
        if sigma_init <= 0:
            raise ValueError(f"sigma_init must be positive, got {sigma_init}")
        s = math.log(sigma_init)
        self.s1 = Tensor(np.array(s, dtype=dtype), requires_grad=True)
        self.s2 = Tensor(np.array(s, dtype=dtype), requires_grad=True)

    @property
    def sigma1(self):
        return float(np.exp(self.s1.item()))

    @property
    def sigma2(self):
        return float(np.exp(self.s2.item()))

    def params(self):
        return [self.s1, self.s2]


def trimap_ce(logits, t_opt):
    """Mean per-pixel cross-entropy of 3-class logits against label maps.

    logits: Tensor [N,3,H,W]; t_opt: integer array [N,H,W] with labels in
    {0,1,2}. Computed through log-softmax, so it is stable for large logits.
    """
    t_opt = np.asarray(t_opt)
    n, c, h, w = logits.shape
    if c != len(LABELS):
        raise ValueError(f"expected {len(LABELS)}-class logits, got {c}")
    if t_opt.shape != (n, h, w):
        raise ValueError(f"label shape {t_opt.shape} != {(n, h, w)}")
    if not np.isin(t_opt, LABELS).all():
        bad = np.unique(t_opt[~np.isin(t_opt, LABELS)])
        raise ValueError(f"labels outside {{0,1,2}}: {bad.tolist()}")
    onehot = np.zeros((n, c, h, w), dtype=logits.data.dtype)
    for lab in LABELS:
        onehot[:, lab][t_opt == lab] = 1.0
    logp = T.log_softmax_channel(logits)
    picked = T.mul(logp, Tensor(onehot))
    return T.tsum(picked) * (-1.0 / (n * h * w))


def unknown_mask_from_logits(logits):
    """Boolean mask of pixels the logits classify as unknown.

    Plain numpy on the forward values: the selection is a constant with
    respect to the graph, so no gradient flows through it. Ties go to
    unknown.
    """
    d = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    l_bg, l_unk, l_fg = d[:, 0], d[:, 1], d[:, 2]
    return (l_unk >= l_bg) & (l_unk >= l_fg)


def alpha_l1_masked(alpha_pred, alpha_gt, mask, fallback_mask=None):
    """Mean absolute alpha error over the masked pixels.

    alpha_pred: Tensor [N,1,H,W] or [N,H,W]; alpha_gt: array of matching
    spatial shape; mask: boolean array [N,H,W]. An empty mask falls back to
    ``fallback_mask`` when given (with a warning); if that is empty too the
    loss is exactly 0.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        warnings.warn("empty alpha-loss mask", EmptyMaskWarning, stacklevel=2)
        if fallback_mask is not None and np.asarray(fallback_mask).any():
            mask = np.asarray(fallback_mask, dtype=bool)
        else:
            return Tensor(np.array(0.0, dtype=alpha_pred.data.dtype))
    gt = np.asarray(alpha_gt, dtype=alpha_pred.data.dtype)
    if alpha_pred.ndim == 4:
        if alpha_pred.shape[1] != 1:
            raise ValueError(f"alpha must be single-channel, got {alpha_pred.shape}")
        m = mask[:, None]
        if gt.ndim == 3:
            gt = gt[:, None]
    else:
        m = mask
    if gt.shape != alpha_pred.shape:
        raise ValueError(f"gt shape {gt.shape} != pred shape {alpha_pred.shape}")
    diff = T.absval(T.sub(alpha_pred, Tensor(gt)))
    weighted = T.mul(diff, Tensor(m.astype(alpha_pred.data.dtype)))
    return T.tsum(weighted) * (1.0 / mask.sum())


def uncertainty_combine(l_t, l_a, weights, kendall_strict=False):
    """Combine task losses with learnable uncertainty weights.

    Default form (as used here):

        L = L_T / (2*sigma1^2) + L_a / sigma2 + log(2*sigma1*sigma2)

    where sigma2 enters unsquared. In log-sigma variables s = log(sigma):

        L = 0.5*L_T*exp(-2*s1) + L_a*exp(-s2) + s1 + s2 + log 2

    Stationary points: sigma1 = sqrt(L_T), sigma2 = L_a. With
    ``kendall_strict`` both tasks get the symmetric 1/(2*sigma^2) weighting
    and the regularizer drops the constant:

        L = 0.5*L_T*exp(-2*s1) + 0.5*L_a*exp(-2*s2) + s1 + s2
    """
    s1, s2 = weights.s1, weights.s2
    term_t = T.mul(l_t, T.exp(s1 * -2.0)) * 0.5
    if kendall_strict:
        term_a = T.mul(l_a, T.exp(s2 * -2.0)) * 0.5
        return term_t + term_a + s1 + s2
    term_a = T.mul(l_a, T.exp(-s2))
    return term_t + term_a + s1 + s2 + LN2


def naive_combine(l_t, l_a, sigma):
    """Fixed linear blend (1-sigma)*L_T + sigma*L_a.

    sigma=1 drops the trimap task entirely (one-step alpha regression);
    sigma=0 drops the alpha task.
    """
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"sigma must be in [0,1], got {sigma}")
    return l_t * (1.0 - sigma) + l_a * sigma


def mask_from_trimap_batch(trimaps):
    """Unknown-region mask of a trimap label batch [N,H,W]."""
    return np.asarray(trimaps) == UNKNOWN
