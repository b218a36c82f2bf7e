"""Mask normalization: exact rank matching of masked to unmasked outputs.

Each value of the masked attention output is replaced by the value of the
same rank in the unmasked output (the k-th smallest maps to the k-th
smallest). The result is a rearrangement of the unmasked values ordered
like the masked ones, so the layer-wise value distribution is preserved
exactly while the masked output's ordering survives. Equivalently, it is
the sorted-to-sorted assignment solving the discrete 1D transport problem
with quadratic cost, computed in O(n log n) by sorting.

Matching is applied along the last dimension, independently per row (and,
inside the denoiser, per head and batch element), immediately before the
attention block's residual connection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionPair
from .errors import ShapeError

__all__ = ["RankMatchPolicy", "STABLE_POLICY", "efdm_match", "mask_normalize"]


@dataclass(frozen=True)
class RankMatchPolicy:
    """How ties in the rank source are broken.

    ``stable_index`` resolves equal values by original position, which
    makes the mapping deterministic and idempotent.
    """

    tie_break: str = "stable_index"

    def __post_init__(self):
        if self.tie_break != "stable_index":
            raise ShapeError(f"unsupported tie_break {self.tie_break!r}")


STABLE_POLICY = RankMatchPolicy()


def efdm_match(
    a_m: np.ndarray,
    a_u: np.ndarray,
    policy: RankMatchPolicy = STABLE_POLICY,
) -> np.ndarray:
    """Replace each entry of ``a_m`` by the equally-ranked entry of ``a_u``.

    Works along the last axis; leading axes are treated as independent
    rows. Output rows are multiset-equal to the corresponding ``a_u`` rows
    and rank-ordered like ``a_m`` (stable under ties).
    """
    a_m = np.asarray(a_m, dtype=np.float64)
    a_u = np.asarray(a_u, dtype=np.float64)
    if a_m.shape != a_u.shape:
        raise ShapeError(f"shape mismatch: {a_m.shape} vs {a_u.shape}")
    if a_m.shape[-1] < 1:
        raise ShapeError("vectors must have length >= 1")
    del policy  # only the stable policy exists; validated at construction
    order = np.argsort(a_m, axis=-1, kind="stable")
    out = np.empty_like(a_m)
    np.put_along_axis(out, order, np.sort(a_u, axis=-1), axis=-1)
    return out


def mask_normalize(pair: AttentionPair) -> np.ndarray:
    """Rank-match the masked attention output to the unmasked one.

    Applied independently along the last dimension for every row, head and
    batch element; the result replaces the masked output before the
    residual connection.
    """
    if np.shape(pair.masked) != np.shape(pair.unmasked):
        raise ShapeError(
            f"masked/unmasked shapes differ: {np.shape(pair.masked)} vs {np.shape(pair.unmasked)}"
        )
    return efdm_match(pair.masked, pair.unmasked)
