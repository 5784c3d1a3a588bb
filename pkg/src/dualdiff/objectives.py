"""Training losses and similarity machinery.

The alignment target is the gamma-scaled clean query (the signal the text
diffusion actually carries); row-wise L2 normalization inside `similarity`
makes the contrastive loss and the downstream readout invariant to that
scale either way.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


def loss_ig(eps_true, eps_pred):
    """Mean squared error over batch and elements."""
    eps_pred = ad._as_tensor(eps_pred)
    eps_true = ad._as_tensor(eps_true, like=eps_pred)
    if eps_true.shape != eps_pred.shape:
        raise ShapeError(f"loss_ig shape mismatch: {eps_true.shape} vs {eps_pred.shape}")
    d = ad.sub(eps_pred, eps_true)
    return ad.mean_(ad.mul(d, d))


def similarity(e0_hat, e, logit_scale=1.0):
    """B x B scaled cosine similarities; rows index predictions, columns
    index encoder queries. Both operands are L2-normalized internally."""
    e0_hat = ad._as_tensor(e0_hat)
    e = ad._as_tensor(e, like=e0_hat)
    a = ad.l2_normalize(e0_hat, axis=-1)
    b = ad.l2_normalize(e, axis=-1)
    s = ad.matmul(a, ad.transpose(b, (1, 0)))
    return ad.mul(s, float(logit_scale))


def loss_ita(s):
    """Symmetric InfoNCE over rows and columns of one similarity matrix:
    -(1/2B) sum_i [log softmax-row(s)_ii + log softmax-col(s)_ii]."""
    s = ad._as_tensor(s)
    b = s.shape[0]
    if s.shape != (b, b):
        raise ShapeError(f"similarity matrix must be square, got {s.shape}")
    eye = Tensor(np.eye(b, dtype=s.dtype))
    row = ad.log_softmax(s, axis=1)
    col = ad.log_softmax(s, axis=0)
    diag_sum = ad.sum_(ad.mul(ad.add(row, col), eye))
    return ad.mul(diag_sum, -1.0 / (2.0 * b))


def loss_total(l_ig, l_ita, lam=1.0):
    """L_IG + lambda * L_ITA."""
    if lam < 0:
        raise ConfigError(f"loss weight lambda must be >= 0, got {lam}")
    return ad.add(l_ig, ad.mul(l_ita, float(lam)))
