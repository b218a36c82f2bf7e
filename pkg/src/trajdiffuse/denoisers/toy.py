"""Small conv+attention noise predictor for latent videos.

Architecture, per video of shape (N, C, H, W): a 3x3 conv encoder, a
time-embedding shift, then three attention blocks (spatial self-attention
per frame, temporal self-attention per spatial token, cross-attention
against the conditioning tokens), each with residual connection and layer
norm, and a 3x3 conv decoder back to C channels.

Attention blocks accept optional binary masks at inference and route
masked calls through the attention/mask-normalization ops, so the masked
and unmasked paths share one set of semantics. Training never sees masks.

Forward and backward passes are written by hand in numpy; gradients are
exercised against finite differences in the test suite.
"""

from __future__ import annotations

import math

import numpy as np

from ..attention import AttentionInputs, attention, attention_pair, softmax
from ..errors import ConfigurationError, ShapeError
from ..masknorm import mask_normalize
from ..masks import AttentionMaskSet
from ..schedule import NoiseSchedule

__all__ = ["ToyDenoiser", "collect_activations", "init_params", "PARAM_ORDER"]

ATTENTION_LAYERS = ("spatial", "temporal", "cross")

# Canonical parameter order used by checkpoints.
PARAM_ORDER = (
    "conv_in_w", "conv_in_b",
    "time_w", "time_b",
    "sq_w", "sk_w", "sv_w", "s_gain", "s_bias",
    "tq_w", "tk_w", "tv_w", "t_gain", "t_bias",
    "cq_w", "ck_w", "cv_w", "cond_scale", "cond_pos", "c_gain", "c_bias",
    "conv_out_w", "conv_out_b",
)

_LN_EPS = 1e-5


def init_params(rng: np.random.Generator, channels: int, hidden: int, cond_len: int) -> dict:
    """Fresh parameter set; scales follow fan-in."""
    f = hidden

    def w(*shape, scale):
        return rng.standard_normal(shape) * scale

    return {
        "conv_in_w": w(f, channels, 3, 3, scale=1.0 / math.sqrt(9 * channels)),
        "conv_in_b": np.zeros(f),
        "time_w": w(f, f, scale=0.1 / math.sqrt(f)),
        "time_b": np.zeros(f),
        "sq_w": w(f, f, scale=1.0 / math.sqrt(f)),
        "sk_w": w(f, f, scale=1.0 / math.sqrt(f)),
        "sv_w": w(f, f, scale=1.0 / math.sqrt(f)),
        "s_gain": np.ones(f),
        "s_bias": np.zeros(f),
        "tq_w": w(f, f, scale=1.0 / math.sqrt(f)),
        "tk_w": w(f, f, scale=1.0 / math.sqrt(f)),
        "tv_w": w(f, f, scale=1.0 / math.sqrt(f)),
        "t_gain": np.ones(f),
        "t_bias": np.zeros(f),
        "cq_w": w(f, f, scale=1.0 / math.sqrt(f)),
        "ck_w": w(f, f, scale=1.0 / math.sqrt(f)),
        "cv_w": w(f, f, scale=1.0 / math.sqrt(f)),
        "cond_scale": w(cond_len, f, scale=0.5),
        "cond_pos": w(cond_len, f, scale=0.5),
        "c_gain": np.ones(f),
        "c_bias": np.zeros(f),
        "conv_out_w": w(channels, f, 3, 3, scale=1.0 / math.sqrt(9 * f)),
        "conv_out_b": np.zeros(channels),
    }


# ---------------------------------------------------------------------------
# primitive layers (forward + backward)
# ---------------------------------------------------------------------------


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 same-padding convolution; x: (N, Cin, H, W), w: (Cout, Cin, 3, 3)."""
    n, _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.broadcast_to(b[None, :, None, None], (n, w.shape[0], h, wd)).copy()
    for dy in range(3):
        for dx in range(3):
            out += np.einsum("nihw,oi->nohw", xp[:, :, dy:dy + h, dx:dx + wd], w[:, :, dy, dx])
    return out


def conv2d_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    n, cin, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for dy in range(3):
        for dx in range(3):
            patch = xp[:, :, dy:dy + h, dx:dx + wd]
            dw[:, :, dy, dx] = np.einsum("nohw,nihw->oi", dout, patch)
            dxp[:, :, dy:dy + h, dx:dx + wd] += np.einsum("nohw,oi->nihw", dout, w[:, :, dy, dx])
    db = dout.sum(axis=(0, 2, 3))
    return dxp[:, :, 1:1 + h, 1:1 + wd], dw, db


def layernorm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    """Normalize the last axis; returns output and backward cache."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv, gain)


def layernorm_backward(dout: np.ndarray, cache):
    xhat, inv, gain = cache
    dxhat = dout * gain
    dgain = (dout * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    dbias = dout.reshape(-1, xhat.shape[-1]).sum(axis=0)
    mean_d = dxhat.mean(axis=-1, keepdims=True)
    mean_dx = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_d - xhat * mean_dx)
    return dx, dgain, dbias


def plain_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray):
    """Unmasked softmax attention with a cache for the backward pass."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    logits = q @ np.swapaxes(k, -1, -2) * scale
    p = softmax(logits)
    return p @ v, (q, k, v, p, scale)


def plain_attention_backward(dout: np.ndarray, cache):
    q, k, v, p, scale = cache
    dv = np.swapaxes(p, -1, -2) @ dout
    dp = dout @ np.swapaxes(v, -1, -2)
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
    dq = ds @ k * scale
    dk = np.swapaxes(ds, -1, -2) @ q * scale
    return dq, dk, dv


def time_features(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of an integer step index."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


class ToyDenoiser:
    """Trainable toy noise predictor implementing the denoiser protocol.

    ``mask_norm`` controls whether masked attention outputs are
    rank-matched to their unmasked counterparts; ``mask_mode`` picks the
    masking semantics (additive or multiplicative logits).
    """

    def __init__(
        self,
        params: dict,
        schedule: NoiseSchedule,
        mask_norm: bool = True,
        mask_mode: str = "additive",
    ):
        self.params = params
        self.schedule = schedule
        self.mask_norm = bool(mask_norm)
        self.mask_mode = mask_mode
        self.train_loss_history: list[float] = []

    @property
    def hidden(self) -> int:
        return int(self.params["conv_in_w"].shape[0])

    @property
    def channels(self) -> int:
        return int(self.params["conv_in_w"].shape[1])

    @property
    def cond_len(self) -> int:
        return int(self.params["cond_pos"].shape[0])

    def with_options(self, mask_norm: bool | None = None, mask_mode: str | None = None) -> "ToyDenoiser":
        """Variant sharing the same parameters with different mask behavior."""
        clone = ToyDenoiser(
            self.params,
            self.schedule,
            mask_norm=self.mask_norm if mask_norm is None else mask_norm,
            mask_mode=self.mask_mode if mask_mode is None else mask_mode,
        )
        clone.train_loss_history = self.train_loss_history
        return clone

    # -- inference ----------------------------------------------------------

    def _cond_tokens(self, cond_vec: np.ndarray | None) -> np.ndarray:
        p = self.params
        if cond_vec is None:
            return p["cond_pos"]
        c = np.asarray(cond_vec, dtype=np.float64)
        if c.shape != (self.cond_len,):
            raise ShapeError(f"conditioning vector must have length {self.cond_len}")
        return c[:, None] * p["cond_scale"] + p["cond_pos"]

    def _attend(
        self,
        q: np.ndarray,
        k: np.ndarray,
        v: np.ndarray,
        mask: np.ndarray | None,
        layer: str,
        record: dict | None,
    ) -> np.ndarray:
        inputs = AttentionInputs(q=q, k=k, v=v)
        if mask is None:
            out = attention(inputs)
        else:
            pair = attention_pair(inputs, mask, self.mask_mode)
            out = mask_normalize(pair) if self.mask_norm else pair.masked
        if record is not None and record.get("layer") == layer:
            record["value"] = out
        return out

    def predict_noise(
        self,
        z: np.ndarray,
        t: int,
        cond=None,
        masks: AttentionMaskSet | None = None,
        record: dict | None = None,
    ) -> np.ndarray:
        """Predicted noise for a latent video at step ``t``.

        ``cond`` may be a Conditioning object, a raw vector, or None for
        the unconditional branch. When ``masks`` are given, the three
        attention blocks apply the per-frame self masks, per-token temporal
        masks, and per-frame cross masks respectively.
        """
        p = self.params
        z = np.asarray(z, dtype=np.float64)
        n, c, h, w = z.shape
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        l = h * w

        x = conv2d(z, p["conv_in_w"], p["conv_in_b"])
        x = np.tanh(x)
        temb = p["time_w"] @ time_features(t, self.hidden) + p["time_b"]
        x = x + temb[None, :, None, None]

        tokens = x.reshape(n, self.hidden, l).transpose(0, 2, 1)  # (N, L, F)

        # spatial self-attention, one mask per frame
        a = self._attend(
            tokens @ p["sq_w"], tokens @ p["sk_w"], tokens @ p["sv_w"],
            masks.self_masks if masks is not None else None, "spatial", record,
        )
        tokens, _ = layernorm(tokens + a, p["s_gain"], p["s_bias"])

        # temporal self-attention, one mask per spatial token
        seq = tokens.transpose(1, 0, 2)  # (L, N, F)
        a = self._attend(
            seq @ p["tq_w"], seq @ p["tk_w"], seq @ p["tv_w"],
            masks.temporal_masks if masks is not None else None, "temporal", record,
        )
        seq, _ = layernorm(seq + a, p["t_gain"], p["t_bias"])
        tokens = seq.transpose(1, 0, 2)

        # cross-attention against conditioning tokens
        cond_vec = getattr(cond, "prompt_vector", cond)
        ct = self._cond_tokens(cond_vec)
        a = self._attend(
            tokens @ p["cq_w"], ct @ p["ck_w"], ct @ p["cv_w"],
            masks.cross_masks if masks is not None else None, "cross", record,
        )
        tokens, _ = layernorm(tokens + a, p["c_gain"], p["c_bias"])

        x = np.tanh(tokens).transpose(0, 2, 1).reshape(n, self.hidden, h, w)
        return conv2d(x, p["conv_out_w"], p["conv_out_b"])

    # -- training pass (unmasked only) ---------------------------------------

    def loss_and_gradients(
        self, z: np.ndarray, t: int, target: np.ndarray, cond_vec: np.ndarray | None
    ) -> tuple[float, dict]:
        """Mean-squared noise-prediction loss and parameter gradients."""
        p = self.params
        z = np.asarray(z, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        n, _, h, w = z.shape
        l = h * w
        f = self.hidden

        # forward with caches
        h1 = conv2d(z, p["conv_in_w"], p["conv_in_b"])
        a1 = np.tanh(h1)
        temb = p["time_w"] @ time_features(t, f) + p["time_b"]
        x0 = (a1 + temb[None, :, None, None]).reshape(n, f, l).transpose(0, 2, 1)

        qs, ks, vs = x0 @ p["sq_w"], x0 @ p["sk_w"], x0 @ p["sv_w"]
        a_s, cache_s = plain_attention(qs, ks, vs)
        x1, ln_s = layernorm(x0 + a_s, p["s_gain"], p["s_bias"])

        y0 = x1.transpose(1, 0, 2)
        qt, kt, vt = y0 @ p["tq_w"], y0 @ p["tk_w"], y0 @ p["tv_w"]
        a_t, cache_t = plain_attention(qt, kt, vt)
        y1, ln_t = layernorm(y0 + a_t, p["t_gain"], p["t_bias"])
        x2 = y1.transpose(1, 0, 2)

        ct = self._cond_tokens(cond_vec)
        qc = x2 @ p["cq_w"]
        kc, vc = ct @ p["ck_w"], ct @ p["cv_w"]
        a_c, cache_c = plain_attention(qc, kc, vc)
        x3, ln_c = layernorm(x2 + a_c, p["c_gain"], p["c_bias"])

        a2 = np.tanh(x3)
        dec_in = a2.transpose(0, 2, 1).reshape(n, f, h, w)
        eps = conv2d(dec_in, p["conv_out_w"], p["conv_out_b"])

        resid = eps - target
        loss = float(np.mean(resid * resid))

        # backward
        g = {}
        deps = 2.0 * resid / resid.size
        ddec_in, g["conv_out_w"], g["conv_out_b"] = conv2d_backward(deps, dec_in, p["conv_out_w"])
        da2 = ddec_in.reshape(n, f, l).transpose(0, 2, 1)
        dx3 = da2 * (1.0 - a2 * a2)

        dr3, g["c_gain"], g["c_bias"] = layernorm_backward(dx3, ln_c)
        dqc, dkc, dvc = plain_attention_backward(dr3, cache_c)
        # conditioning k/v were broadcast over frames; fold the frame axis back
        dkc = dkc.sum(axis=0)
        dvc = dvc.sum(axis=0)
        dx2 = dr3 + dqc @ p["cq_w"].T
        g["cq_w"] = np.einsum("nlf,nlg->fg", x2, dqc)
        g["ck_w"] = ct.T @ dkc
        g["cv_w"] = ct.T @ dvc
        dct = dkc @ p["ck_w"].T + dvc @ p["cv_w"].T
        if cond_vec is None:
            g["cond_scale"] = np.zeros_like(p["cond_scale"])
            g["cond_pos"] = dct
        else:
            g["cond_scale"] = dct * np.asarray(cond_vec)[:, None]
            g["cond_pos"] = dct

        dy1 = dx2.transpose(1, 0, 2)
        dr2, g["t_gain"], g["t_bias"] = layernorm_backward(dy1, ln_t)
        dqt, dkt, dvt = plain_attention_backward(dr2, cache_t)
        dy0 = dr2 + dqt @ p["tq_w"].T + dkt @ p["tk_w"].T + dvt @ p["tv_w"].T
        g["tq_w"] = np.einsum("lnf,lng->fg", y0, dqt)
        g["tk_w"] = np.einsum("lnf,lng->fg", y0, dkt)
        g["tv_w"] = np.einsum("lnf,lng->fg", y0, dvt)

        dx1 = dy0.transpose(1, 0, 2)
        dr1, g["s_gain"], g["s_bias"] = layernorm_backward(dx1, ln_s)
        dqs, dks, dvs = plain_attention_backward(dr1, cache_s)
        dx0 = dr1 + dqs @ p["sq_w"].T + dks @ p["sk_w"].T + dvs @ p["sv_w"].T
        g["sq_w"] = np.einsum("nlf,nlg->fg", x0, dqs)
        g["sk_w"] = np.einsum("nlf,nlg->fg", x0, dks)
        g["sv_w"] = np.einsum("nlf,nlg->fg", x0, dvs)

        dx = dx0.transpose(0, 2, 1).reshape(n, f, h, w)
        dtemb = dx.sum(axis=(0, 2, 3))
        g["time_w"] = np.outer(dtemb, time_features(t, f))
        g["time_b"] = dtemb
        dh1 = dx * (1.0 - a1 * a1)
        _, g["conv_in_w"], g["conv_in_b"] = conv2d_backward(dh1, z, p["conv_in_w"])
        return loss, g


def collect_activations(
    denoiser: ToyDenoiser,
    layer: str,
    z: np.ndarray,
    t: int,
    cond=None,
    masks: AttentionMaskSet | None = None,
) -> np.ndarray:
    """Post-attention activations of one attention block.

    ``layer`` is one of ``spatial``, ``temporal`` or ``cross``. The
    returned tensor is the block's attention output (after mask
    normalization, when applied), before the residual connection. The
    forward pass has no side effects on generation state.
    """
    if layer not in ATTENTION_LAYERS:
        raise ConfigurationError(
            f"unknown attention layer {layer!r}; expected one of {ATTENTION_LAYERS}"
        )
    record: dict = {"layer": layer}
    denoiser.predict_noise(z, t, cond, masks, record=record)
    return record["value"]
