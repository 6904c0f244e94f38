"""Training losses for saliency maps.

Every loss accepts either plain numpy arrays or autodiff Tensors. With numpy
inputs the result is a float; if any input is a Tensor the whole computation
is lifted into the autodiff graph and the result is a scalar Tensor, so the
same formulas serve training and evaluation.

The supervised loss combines KL divergence, a correlation term and a
fixation-selective MSE. The consistency loss compares predictions from two
viewport layouts over the regions where tangent planes overlap, optionally
weighted per pixel.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

EPS = 1e-7


def _lift(*values):
    """Promote everything to Tensors if any input is one."""
    if any(isinstance(v, Tensor) for v in values):
        return [v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=float)) for v in values], True
    return [np.asarray(v, dtype=float) for v in values], False


def _log(x):
    return x.log() if isinstance(x, Tensor) else np.log(x)


def _sqrt(x):
    return x.sqrt() if isinstance(x, Tensor) else np.sqrt(x)


def _raw(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _finish(x, lifted: bool):
    return x if lifted else float(x)


def kld_loss(p, q, eps: float = EPS):
    """KL divergence of ground truth q from prediction p, with additive guards.

    Both maps should be normalized to sum 1. Zero ground-truth pixels
    contribute nothing; zero predicted pixels are bounded by the guard.
    """
    if _raw(p).shape != _raw(q).shape:
        raise ValueError(f"shape mismatch: {_raw(p).shape} vs {_raw(q).shape}")
    (p, q), lifted = _lift(p, q)
    ratio = q / (p + eps)
    return _finish((q * _log(ratio + eps)).sum(), lifted)


def cc_loss(p, q):
    """1 minus the Pearson correlation of the two maps."""
    if _raw(p).shape != _raw(q).shape:
        raise ValueError(f"shape mismatch: {_raw(p).shape} vs {_raw(q).shape}")
    (p, q), lifted = _lift(p, q)
    pc = p - p.mean()
    qc = q - q.mean()
    pp = (pc * pc).sum()
    qq = (qc * qc).sum()
    if float(_raw(pp)) == 0.0 or float(_raw(qq)) == 0.0:
        raise ValueError("correlation is undefined for a constant map")
    r = (pc * qc).sum() / _sqrt(pp * qq)
    return _finish(1.0 - r, lifted)


def smse_loss(p, q_s, q_f):
    """MSE between max-normalized maps, evaluated only at fixation pixels."""
    fix = np.asarray(_raw(q_f)) > 0
    if not fix.any():
        raise ValueError("fixation map has no fixations")
    if _raw(p).shape != fix.shape or _raw(q_s).shape != fix.shape:
        raise ValueError("map shapes do not match the fixation map")
    p_peak = float(_raw(p).max())
    q_peak = float(_raw(q_s).max())
    if p_peak <= 0.0 or q_peak <= 0.0:
        raise ValueError("max-normalization needs a positive peak")
    (p, q_s), lifted = _lift(p, q_s)
    idx = np.nonzero(fix)
    diff = (p / p.max())[idx] - (q_s / q_s.max())[idx]
    return _finish((diff * diff).mean(), lifted)


def supervised_loss(p, q_s, q_f, alpha: float = 0.005, eps: float = EPS):
    """KLD + CC + alpha * fixation MSE against density q_s and fixations q_f."""
    total = kld_loss(p, q_s, eps=eps) + cc_loss(p, q_s)
    if alpha:
        total = total + alpha * smse_loss(p, q_s, q_f)
    return total


def weighted_kld(p, p_prime, w, eps: float = EPS):
    """Per-pixel weighted KL divergence between two predictions."""
    w_arr = np.asarray(_raw(w), dtype=float)
    if (w_arr < 0).any():
        raise ValueError("consistency weights must be non-negative")
    if _raw(p).shape != _raw(p_prime).shape or w_arr.shape != _raw(p).shape:
        raise ValueError("prediction and weight shapes must match")
    (p, p_prime, w), lifted = _lift(p, p_prime, w)
    ratio = p / (p_prime + eps)
    return _finish((p * _log(ratio + eps) * w).sum(), lifted)


def weighted_cc(p, p_prime, w, mode: str = "cosine"):
    """Weighted correlation penalty between two predictions.

    "cosine" normalizes by the weighted norms of both maps, so identical
    predictions score exactly 0. "literal" divides by the product of the
    unweighted squared norms instead, without a square root; that variant is
    not zero at agreement (uniform identical maps on N pixels give 1 - N) and
    exists for comparison only.
    """
    w_arr = np.asarray(_raw(w), dtype=float)
    if (w_arr < 0).any():
        raise ValueError("consistency weights must be non-negative")
    if _raw(p).shape != _raw(p_prime).shape or w_arr.shape != _raw(p).shape:
        raise ValueError("prediction and weight shapes must match")
    (p, p_prime, w), lifted = _lift(p, p_prime, w)
    num = (p * p_prime * w).sum()
    if mode == "cosine":
        d1 = (p * p * w).sum()
        d2 = (p_prime * p_prime * w).sum()
        if float(_raw(d1)) <= 0.0 or float(_raw(d2)) <= 0.0:
            raise ValueError("weighted norm vanished; cannot normalize")
        return _finish(1.0 - num / _sqrt(d1 * d2), lifted)
    if mode == "literal":
        d1 = (p * p).sum()
        d2 = (p_prime * p_prime).sum()
        if float(_raw(d1)) <= 0.0 or float(_raw(d2)) <= 0.0:
            raise ValueError("norm vanished; cannot normalize")
        return _finish(1.0 - num / (d1 * d2), lifted)
    raise ValueError(f"unknown weighted_cc mode {mode!r}")


def vac_loss(p, p_prime, w, mode: str = "cosine", eps: float = EPS):
    """Consistency loss between original- and augmented-layout predictions."""
    return weighted_kld(p, p_prime, w, eps=eps) + weighted_cc(p, p_prime, w, mode=mode)


def combined_loss(p, p_prime, q_s, q_f, w, lam: float = 1.0,
                  alpha: float = 0.005, mode: str = "cosine", eps: float = EPS):
    """Full training objective: both branches supervised plus the consistency term."""
    total = supervised_loss(p, q_s, q_f, alpha=alpha, eps=eps)
    total = total + supervised_loss(p_prime, q_s, q_f, alpha=alpha, eps=eps)
    if lam:
        total = total + lam * vac_loss(p, p_prime, w, mode=mode, eps=eps)
    return total
