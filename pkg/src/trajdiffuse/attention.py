"""Scaled dot-product attention with optional binary masking.

Two masking modes are supported. ``additive`` (the default) replaces
logits at masked positions with a large negative constant before the
softmax, so masked positions receive essentially zero weight.
``multiplicative`` multiplies the logits elementwise by the binary mask;
masked logits become zero, not minus infinity, so they still receive
softmax weight. Both are kept so the difference can be ablated.

All operations accept leading batch dimensions: ``q`` may be
``(..., l, d)``, with ``k``, ``v`` and ``mask`` batched the same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, NumericError, ShapeError

__all__ = ["AttentionInputs", "AttentionPair", "attention", "attention_pair", "softmax"]

MASKED_LOGIT = -1e9  # finite so exp() underflows to 0 without producing NaNs

_MODES = ("additive", "multiplicative")


@dataclass(frozen=True)
class AttentionInputs:
    """Query/key/value arrays for one attention call.

    ``q``: (..., l, d), ``k``: (..., l_k, d), ``v``: (..., l_k, d_v).
    The logit scale is ``1 / sqrt(d)``.
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q, k, v = (np.asarray(a, dtype=np.float64) for a in (self.q, self.k, self.v))
        if q.ndim < 2 or k.ndim < 2 or v.ndim < 2:
            raise ShapeError("q, k, v must have at least 2 dimensions")
        if q.shape[-1] != k.shape[-1]:
            raise ShapeError(f"q/k feature dims differ: {q.shape[-1]} vs {k.shape[-1]}")
        if k.shape[-2] != v.shape[-2]:
            raise ShapeError(f"k/v token counts differ: {k.shape[-2]} vs {v.shape[-2]}")
        for name, a in (("q", q), ("k", k), ("v", v)):
            if not np.isfinite(a).all():
                raise NumericError(f"non-finite entries in {name}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.q.shape[-1])


@dataclass(frozen=True)
class AttentionPair:
    """Masked and unmasked attention outputs from identical q, k, v."""

    masked: np.ndarray
    unmasked: np.ndarray


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-stochastic softmax along the last axis, numerically stable."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_mask(mask: np.ndarray, logits_shape: tuple[int, ...]) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != logits_shape[-mask.ndim:] and mask.shape != logits_shape:
        raise ShapeError(
            f"mask shape {mask.shape} incompatible with logits shape {logits_shape}"
        )
    if not np.isin(mask, (0, 1)).all():
        raise ShapeError("mask must be binary")
    return mask


def masked_logits(logits: np.ndarray, mask: np.ndarray, mask_mode: str) -> np.ndarray:
    """Apply a binary mask to attention logits in the requested mode."""
    if mask_mode not in _MODES:
        raise ShapeError(f"unknown mask_mode {mask_mode!r}; expected one of {_MODES}")
    mask = _check_mask(mask, logits.shape)
    if mask_mode == "multiplicative":
        return logits * mask
    if np.any(mask.sum(axis=-1) == 0):
        raise DegenerateInputError("mask has an all-zero row under additive mode")
    return np.where(mask == 0, MASKED_LOGIT, logits)


def attention(
    inputs: AttentionInputs,
    mask: np.ndarray | None = None,
    mask_mode: str = "additive",
) -> np.ndarray:
    """Scaled dot-product attention, optionally masked.

    Without a mask this is ``softmax(q k^T / sqrt(d)) v``. With a mask the
    logits are altered per ``mask_mode`` before the softmax. Returns an
    array of shape (..., l, d_v).
    """
    logits = inputs.q @ np.swapaxes(inputs.k, -1, -2) * inputs.scale
    if mask is not None:
        logits = masked_logits(logits, mask, mask_mode)
    out = softmax(logits) @ inputs.v
    if not np.isfinite(out).all():
        raise NumericError("attention produced non-finite output")
    return out


def attention_pair(
    inputs: AttentionInputs,
    mask: np.ndarray,
    mask_mode: str = "additive",
) -> AttentionPair:
    """Masked and unmasked attention over the same q, k, v.

    The unmasked output is what the layer would have produced without any
    mask; mask normalization matches the masked output's distribution to it.
    """
    return AttentionPair(
        masked=attention(inputs, mask=mask, mask_mode=mask_mode),
        unmasked=attention(inputs, mask=None),
    )
