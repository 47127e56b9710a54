"""Conformer-lite transcription network with self-conditioned CTC heads.

Layers are grouped by head position. Group i receives ``X_{i-1} + Z_{i-1}``
at its first layer, produces ``X_i``; head i emits
``Softmax(Linear2_i(X_i))`` and feeds back ``Z_i = Linear1_i(emissions)``.
The transcription output is ``H = X_L + Z_K``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .ctc import ctc_loss
from .params import ParamStore


@dataclass
class EncoderConfig:
    input_dim: int = 16
    pos_dim: int = 16
    layers: int = 4
    d_model: int = 64
    heads: int = 4
    ff_mult: int = 2
    sctc_positions: list[int] = field(default_factory=lambda: [2, 4])
    sctc_targets: list[str] = field(default_factory=lambda: ["asr", "asr"])

    def __post_init__(self) -> None:
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        pos = self.sctc_positions
        if not pos or any(b <= a for a, b in zip(pos, pos[1:])) or pos[0] < 1 or pos[-1] != self.layers:
            raise ValueError(f"sctc_positions must be strictly increasing, >=1 and end at {self.layers}")
        if len(self.sctc_targets) != len(pos):
            raise ValueError("one sctc target kind per head position")
        bad = set(self.sctc_targets) - {"asr", "slu"}
        if bad:
            raise ValueError(f"unknown sctc target kinds {sorted(bad)}")

    @property
    def num_heads(self) -> int:
        return len(self.sctc_positions)


@dataclass
class EncoderState:
    X: list[ad.Tensor]  # X_0 (input projection) .. X_L
    Z: list[ad.Tensor]  # Z_1 .. Z_K
    head_logits: list[ad.Tensor]  # pre-softmax emissions per head
    H: ad.Tensor


def sinusoidal_positions(T: int, width: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(width // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / width)
    out = np.zeros((T, width))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


def linear(x: ad.Tensor, W: ad.Tensor, b: ad.Tensor | None = None) -> ad.Tensor:
    y = ad.matmul(x, ad.transpose(W))
    return y if b is None else ad.add(y, b)


class Encoder:
    def __init__(self, cfg: EncoderConfig, head_widths: list[int], params: ParamStore):
        if len(head_widths) != cfg.num_heads:
            raise ValueError("one emission width per head")
        self.cfg = cfg
        self.head_widths = head_widths
        self.p = params
        d, f = cfg.d_model, cfg.d_model * cfg.ff_mult
        params.get_or_create("enc.in.W", (d, cfg.input_dim + cfg.pos_dim))
        params.get_or_create("enc.in.b", (d,), "zeros")
        for l in range(cfg.layers):
            pre = f"enc.l{l}"
            for ln in ("ln1", "ln2"):
                params.get_or_create(f"{pre}.{ln}.g", (d,), "ones")
                params.get_or_create(f"{pre}.{ln}.b", (d,), "zeros")
            for w in ("Wq", "Wk", "Wv", "Wo"):
                params.get_or_create(f"{pre}.att.{w}", (d, d))
            params.get_or_create(f"{pre}.ff.W1", (f, d))
            params.get_or_create(f"{pre}.ff.b1", (f,), "zeros")
            params.get_or_create(f"{pre}.ff.W2", (d, f))
            params.get_or_create(f"{pre}.ff.b2", (d,), "zeros")
        for i, v in enumerate(head_widths):
            params.get_or_create(f"enc.sctc{i}.lin2.W", (v, d))
            params.get_or_create(f"enc.sctc{i}.lin2.b", (v,), "zeros")
            params.get_or_create(f"enc.sctc{i}.lin1.W", (d, v))
            params.get_or_create(f"enc.sctc{i}.lin1.b", (d,), "zeros")

    def _attention(self, x: ad.Tensor, pre: str) -> ad.Tensor:
        p, h = self.p, self.cfg.heads
        T, d = x.shape
        dk = d // h

        def split(t):
            return ad.transpose(ad.reshape(t, (T, h, dk)), (1, 0, 2))

        q = split(linear(x, p[f"{pre}.att.Wq"]))
        k = split(linear(x, p[f"{pre}.att.Wk"]))
        v = split(linear(x, p[f"{pre}.att.Wv"]))
        att = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dk)))
        ctx = ad.reshape(ad.transpose(ad.matmul(att, v), (1, 0, 2)), (T, d))
        return linear(ctx, p[f"{pre}.att.Wo"])

    def _block(self, x: ad.Tensor, l: int) -> ad.Tensor:
        p, pre = self.p, f"enc.l{l}"
        y = ad.layer_norm(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
        x = ad.add(x, self._attention(y, pre))
        y = ad.layer_norm(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
        y = linear(ad.relu(linear(y, p[f"{pre}.ff.W1"], p[f"{pre}.ff.b1"])), p[f"{pre}.ff.W2"], p[f"{pre}.ff.b2"])
        return ad.add(x, y)

    def encode(self, frames) -> EncoderState:
        cfg, p = self.cfg, self.p
        frames = np.asarray(frames.data if isinstance(frames, ad.Tensor) else frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != cfg.input_dim:
            raise ad.ShapeError(f"encode: frames {frames.shape} do not match input width {cfg.input_dim}")
        T = frames.shape[0]
        feats = ad.Tensor(np.concatenate([frames, sinusoidal_positions(T, cfg.pos_dim)], axis=1))
        x = linear(feats, p["enc.in.W"], p["enc.in.b"])
        X, Z, logits = [x], [], []
        z = None
        layer = 0
        for i, stop in enumerate(cfg.sctc_positions):
            if z is not None:
                x = ad.add(x, z)
            while layer < stop:
                x = self._block(x, layer)
                layer += 1
                X.append(x)
            lg = linear(x, p[f"enc.sctc{i}.lin2.W"], p[f"enc.sctc{i}.lin2.b"])
            z = linear(ad.softmax(lg), p[f"enc.sctc{i}.lin1.W"], p[f"enc.sctc{i}.lin1.b"])
            logits.append(lg)
            Z.append(z)
        return EncoderState(X, Z, logits, ad.add(x, z))


def sctc_loss(state: EncoderState, targets_per_head, blank: int = 0) -> ad.Tensor:
    """Mean over heads of each head's CTC loss.

    Raises :class:`jointslu.ctc.InfeasibleTarget` if any head's target does
    not fit the frame count.
    """
    if len(targets_per_head) != len(state.head_logits):
        raise ValueError("one target sequence per head")
    losses = [ctc_loss(lg, y, blank) for lg, y in zip(state.head_logits, targets_per_head)]
    total = losses[0]
    for l in losses[1:]:
        total = ad.add(total, l)
    return ad.scale(total, 1.0 / len(losses))
